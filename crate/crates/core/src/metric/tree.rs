use std::collections::VecDeque;

use thiserror::Error;

use super::{FiniteMetric, MetricError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TreeError {
    #[error("tree has no vertices")]
    Empty,
    #[error("parent and weight arrays differ in length ({parents} vs {weights})")]
    LengthMismatch { parents: usize, weights: usize },
    #[error("tree must have exactly one root (self-loop), found {0}")]
    RootCount(usize),
    #[error("vertex {0} does not reach the root")]
    Cycle(usize),
    #[error("vertex {0} out of range")]
    VertexOutOfRange(usize),
    #[error("edge above vertex {0} has invalid weight")]
    BadWeight(usize),
    #[error("vertex {vertex} carries more than one point")]
    SharedVertex { vertex: usize },
    #[error("point {0} is mapped to an internal vertex")]
    PointNotOnLeaf(usize),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

/// An edge-weighted rooted tree whose vertices may carry metric points.
///
/// Vertex `u`'s parent edge `e_u` has weight `d_u`; the root has no parent
/// edge, which is reported as `None` by [`RootedTree::edge_weight`].
/// `height` counts vertices: a lone root has height 1, a star has height 2.
#[derive(Debug, Clone, PartialEq)]
pub struct RootedTree {
    parent: Vec<usize>,
    weight: Vec<f64>,
    point_vertex: Vec<usize>,
    vertex_point: Vec<Option<usize>>,
    root: usize,
    children: Vec<Vec<usize>>,
    order: Vec<usize>,
    depth: Vec<usize>,
    to_root: Vec<f64>,
    tin: Vec<usize>,
    tout: Vec<usize>,
    head: Vec<usize>,
    height: usize,
}

impl RootedTree {
    /// `parent[root] == root`; `weight[u]` is `d_u` and must be `None` for
    /// the root (any value given there is ignored). `point_vertex[p]` is the
    /// vertex carrying metric point `p`.
    pub fn new(
        parent: Vec<usize>,
        weight: Vec<Option<f64>>,
        point_vertex: Vec<usize>,
    ) -> Result<Self, TreeError> {
        let n = parent.len();
        if n == 0 {
            return Err(TreeError::Empty);
        }
        if weight.len() != n {
            return Err(TreeError::LengthMismatch { parents: n, weights: weight.len() });
        }
        if let Some(&p) = parent.iter().find(|&&p| p >= n) {
            return Err(TreeError::VertexOutOfRange(p));
        }
        let roots: Vec<usize> = (0..n).filter(|&u| parent[u] == u).collect();
        if roots.len() != 1 {
            return Err(TreeError::RootCount(roots.len()));
        }
        let root = roots[0];
        let mut w = vec![0.0; n];
        for u in 0..n {
            if u == root {
                continue;
            }
            match weight[u] {
                Some(x) if x.is_finite() && x >= 0.0 => w[u] = x,
                _ => return Err(TreeError::BadWeight(u)),
            }
        }
        let mut vertex_point = vec![None; n];
        for (p, &v) in point_vertex.iter().enumerate() {
            if v >= n {
                return Err(TreeError::VertexOutOfRange(v));
            }
            if vertex_point[v].is_some() {
                return Err(TreeError::SharedVertex { vertex: v });
            }
            vertex_point[v] = Some(p);
        }
        let mut children = vec![Vec::new(); n];
        for u in 0..n {
            if u != root {
                children[parent[u]].push(u);
            }
        }
        // BFS from the root; anything unreached sits on a cycle
        let mut order = Vec::with_capacity(n);
        let mut depth = vec![0usize; n];
        let mut to_root = vec![0.0; n];
        let mut queue = VecDeque::from([root]);
        depth[root] = 1;
        while let Some(u) = queue.pop_front() {
            order.push(u);
            for &c in &children[u] {
                depth[c] = depth[u] + 1;
                to_root[c] = to_root[u] + w[c];
                queue.push_back(c);
            }
        }
        if order.len() != n {
            let stuck = (0..n).find(|&u| depth[u] == 0).unwrap_or(0);
            return Err(TreeError::Cycle(stuck));
        }
        let height = depth.iter().copied().max().unwrap_or(1);

        // heavy-light decomposition for lca, iterative to survive deep paths
        let mut size = vec![1usize; n];
        for &u in order.iter().rev() {
            if u != root {
                size[parent[u]] += size[u];
            }
        }
        let mut head = vec![root; n];
        let mut tin = vec![0usize; n];
        let mut tout = vec![0usize; n];
        let mut timer = 0;
        // stack of (vertex, head, exiting)
        let mut stack = vec![(root, root, false)];
        while let Some((u, h, exiting)) = stack.pop() {
            if exiting {
                tout[u] = timer;
                continue;
            }
            head[u] = h;
            tin[u] = timer;
            timer += 1;
            stack.push((u, h, true));
            let heavy = children[u].iter().copied().max_by_key(|&c| (size[c], std::cmp::Reverse(c)));
            for &c in children[u].iter().rev() {
                if Some(c) != heavy {
                    stack.push((c, c, false));
                }
            }
            if let Some(c) = heavy {
                stack.push((c, h, false));
            }
        }

        Ok(RootedTree {
            parent,
            weight: w,
            point_vertex,
            vertex_point,
            root,
            children,
            order,
            depth,
            to_root,
            tin,
            tout,
            head,
            height,
        })
    }

    /// Star with the given leaf edge weights; leaf `k` is vertex `k + 1` and
    /// carries point `k`. The root is vertex 0 and carries no point.
    pub fn star(weights: &[f64]) -> Result<Self, TreeError> {
        let n = weights.len() + 1;
        let parent = vec![0; n];
        let mut weight = vec![None];
        weight.extend(weights.iter().map(|&w| Some(w)));
        Self::new(parent, weight, (1..n).collect())
    }

    /// The line metric `FiniteMetric::line(n)` as a path, rooted at the
    /// middle point. Vertex `k` carries point `k`; every edge weighs `1/n`.
    pub fn path(n: usize) -> Result<Self, TreeError> {
        if n == 0 {
            return Err(TreeError::Empty);
        }
        let mid = n / 2;
        let w = 1.0 / n as f64;
        let parent = (0..n)
            .map(|k| match k.cmp(&mid) {
                std::cmp::Ordering::Less => k + 1,
                std::cmp::Ordering::Equal => k,
                std::cmp::Ordering::Greater => k - 1,
            })
            .collect();
        let weight = (0..n).map(|k| if k == mid { None } else { Some(w) }).collect();
        Self::new(parent, weight, (0..n).collect())
    }

    pub fn len(&self) -> usize {
        self.parent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parent.is_empty()
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn parent(&self, u: usize) -> Option<usize> {
        (u != self.root).then(|| self.parent[u])
    }

    /// Raw parent array (root self-loop).
    pub fn parents(&self) -> &[usize] {
        &self.parent
    }

    pub fn children(&self, u: usize) -> &[usize] {
        &self.children[u]
    }

    /// Weight `d_u` of the edge above `u`; `None` for the root.
    pub fn edge_weight(&self, u: usize) -> Option<f64> {
        (u != self.root).then(|| self.weight[u])
    }

    /// Weight above `u`, reading 0 at the root. Only for summing paths.
    #[inline]
    pub(crate) fn w(&self, u: usize) -> f64 {
        self.weight[u]
    }

    pub fn is_leaf(&self, u: usize) -> bool {
        self.children[u].is_empty()
    }

    /// Number of vertices on the root-to-`u` path, counting both ends.
    pub fn depth(&self, u: usize) -> usize {
        self.depth[u]
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Vertices in BFS order from the root (parents before children).
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn dist_to_root(&self, u: usize) -> f64 {
        self.to_root[u]
    }

    pub fn num_points(&self) -> usize {
        self.point_vertex.len()
    }

    pub fn point_vertex(&self, p: usize) -> usize {
        self.point_vertex[p]
    }

    pub fn point_vertices(&self) -> &[usize] {
        &self.point_vertex
    }

    pub fn vertex_point(&self, u: usize) -> Option<usize> {
        self.vertex_point[u]
    }

    /// True when `a` lies on the path from `u` to the root (`a == u` included).
    #[inline]
    pub fn is_ancestor(&self, a: usize, u: usize) -> bool {
        self.tin[a] <= self.tin[u] && self.tout[u] <= self.tout[a]
    }

    pub fn lca(&self, mut u: usize, mut v: usize) -> usize {
        while self.head[u] != self.head[v] {
            if self.depth[self.head[u]] > self.depth[self.head[v]] {
                u = self.parent[self.head[u]];
            } else {
                v = self.parent[self.head[v]];
            }
        }
        if self.depth[u] < self.depth[v] {
            u
        } else {
            v
        }
    }

    /// Sum of edge weights on the `u`-`v` path, without range checks.
    #[inline]
    pub fn dist(&self, u: usize, v: usize) -> f64 {
        if u == v {
            return 0.0;
        }
        let a = self.lca(u, v);
        (self.to_root[u] - self.to_root[a]) + (self.to_root[v] - self.to_root[a])
    }

    /// Distance between two vertices.
    pub fn tree_distance(&self, u: usize, v: usize) -> Result<f64, TreeError> {
        for x in [u, v] {
            if x >= self.len() {
                return Err(TreeError::VertexOutOfRange(x));
            }
        }
        Ok(self.dist(u, v))
    }

    /// Distance between the vertices carrying points `p` and `q`.
    #[inline]
    pub fn point_dist(&self, p: usize, q: usize) -> f64 {
        self.dist(self.point_vertex[p], self.point_vertex[q])
    }

    /// Vertices strictly below `a` on the path from `u` up to ancestor `a`,
    /// i.e. the vertices whose parent edges form that path.
    pub fn path_up(&self, mut u: usize, a: usize) -> Vec<usize> {
        let mut out = Vec::new();
        while u != a {
            out.push(u);
            u = self.parent[u];
        }
        out
    }

    /// Number of point-carrying leaves below each vertex.
    pub fn leaf_counts(&self) -> Vec<usize> {
        let mut count = vec![0usize; self.len()];
        for &u in self.order.iter().rev() {
            if self.is_leaf(u) {
                count[u] = 1;
            }
            if u != self.root {
                count[self.parent[u]] += count[u];
            }
        }
        count
    }

    /// True when every point sits on a non-root leaf.
    pub fn points_on_leaves(&self) -> bool {
        self.point_vertex.iter().all(|&v| self.is_leaf(v) && v != self.root)
    }

    /// Gives every point-carrying internal vertex (the root counts as
    /// internal) a new zero-weight leaf child and moves the point there. New vertices are appended in point
    /// order. Distances between points are unchanged.
    pub fn augment_leaves(&self) -> RootedTree {
        if self.points_on_leaves() {
            return self.clone();
        }
        let mut parent = self.parent.clone();
        let mut weight: Vec<Option<f64>> = (0..self.len()).map(|u| self.edge_weight(u)).collect();
        let mut point_vertex = self.point_vertex.clone();
        for v in point_vertex.iter_mut() {
            if !self.is_leaf(*v) || *v == self.root {
                let new = parent.len();
                parent.push(*v);
                weight.push(Some(0.0));
                *v = new;
            }
        }
        RootedTree::new(parent, weight, point_vertex).expect("augmenting a valid tree keeps it valid")
    }

    /// Distances between the points carried by the tree, as a validated
    /// finite metric.
    pub fn leaf_metric(&self) -> Result<FiniteMetric, TreeError> {
        let k = self.num_points();
        let rows = (0..k).map(|p| (0..k).map(|q| self.point_dist(p, q)).collect()).collect();
        Ok(FiniteMetric::from_matrix(rows)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path_r_x_y() -> RootedTree {
        // r(0) - x(1) weight 2 - y(2) weight 1
        RootedTree::new(vec![0, 0, 1], vec![None, Some(2.0), Some(1.0)], vec![2]).unwrap()
    }

    #[test]
    fn distance_basics() {
        let t = path_r_x_y();
        assert_eq!(t.tree_distance(1, 1).unwrap(), 0.0);
        assert_eq!(t.tree_distance(0, 2).unwrap(), 3.0);
        assert_eq!(t.tree_distance(0, 7), Err(TreeError::VertexOutOfRange(7)));
        let star = RootedTree::star(&[1.0, 1.0]).unwrap();
        assert_eq!(star.tree_distance(1, 2).unwrap(), 2.0);
        assert_eq!(star.height(), 2);
        assert_eq!(t.height(), 3);
    }

    #[test]
    fn root_edge_is_absent() {
        let t = path_r_x_y();
        assert_eq!(t.edge_weight(0), None);
        assert_eq!(t.edge_weight(1), Some(2.0));
        assert_eq!(t.parent(0), None);
    }

    #[test]
    fn rejects_malformed_trees() {
        assert_eq!(RootedTree::new(vec![], vec![], vec![]), Err(TreeError::Empty));
        assert_eq!(
            RootedTree::new(vec![0, 2, 1], vec![None, Some(1.0), Some(1.0)], vec![]),
            Err(TreeError::Cycle(1))
        );
        assert_eq!(
            RootedTree::new(vec![0, 1], vec![None, None], vec![]),
            Err(TreeError::RootCount(2))
        );
        assert_eq!(
            RootedTree::new(vec![0, 0], vec![None, Some(-1.0)], vec![]),
            Err(TreeError::BadWeight(1))
        );
        assert_eq!(
            RootedTree::new(vec![0, 0], vec![None, Some(1.0)], vec![1, 1]),
            Err(TreeError::SharedVertex { vertex: 1 })
        );
    }

    #[test]
    fn augment_is_identity_on_leaf_mapped_tree() {
        let star = RootedTree::star(&[1.0, 2.0]).unwrap();
        assert_eq!(star.augment_leaves(), star);
    }

    #[test]
    fn augment_single_vertex() {
        let t = RootedTree::new(vec![0], vec![None], vec![0]).unwrap();
        let a = t.augment_leaves();
        assert_eq!(a.len(), 2);
        assert_eq!(a.parent(1), Some(0));
        assert_eq!(a.edge_weight(1), Some(0.0));
        assert_eq!(a.point_vertex(0), 1);
    }

    #[test]
    fn augment_keeps_internal_point_distance() {
        // internal x carries point 0; leaf y carries point 1
        let t = RootedTree::new(vec![0, 0, 1], vec![None, Some(2.0), Some(1.0)], vec![1, 2]).unwrap();
        let a = t.augment_leaves();
        assert!(a.points_on_leaves());
        assert_eq!(a.point_dist(0, 1), t.point_dist(0, 1));
        assert_eq!(a.point_dist(0, 1), 1.0);
    }

    #[test]
    fn path_tree_matches_line_metric() {
        let n = 10;
        let t = RootedTree::path(n).unwrap();
        let m = FiniteMetric::line(n).unwrap();
        for i in 0..n {
            for j in 0..n {
                assert!((t.point_dist(i, j) - m.dist(i, j)).abs() < 1e-12);
            }
        }
        assert_eq!(t.root(), 5);
        assert_eq!(t.height(), 6);
    }

    #[test]
    fn lca_on_deep_path() {
        let t = RootedTree::path(20_000).unwrap();
        assert_eq!(t.lca(0, 9_000), 9_000);
        assert_eq!(t.lca(0, 19_999), 10_000);
        assert!(t.is_ancestor(10_000, 3));
        assert!(!t.is_ancestor(3, 10_000));
    }
}
