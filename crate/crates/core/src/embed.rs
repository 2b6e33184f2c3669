//! Randomized embedding of a finite metric into tree metrics.
//!
//! The pipeline samples a 2-HST by hierarchical ball carving in a random
//! point order with a random radius scale, splices out single-child
//! chains, and optionally collapses the tree to logarithmic height by
//! keeping only the vertices where the dyadic class of the leaf count drops.
//! Every stage is non-contracting on leaf pairs.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metric::{FiniteMetric, RootedTree};
use crate::seeds::{child_seed, rng_for};
use crate::EPS;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("tree is not chain-contracted: vertex {0} has a single child")]
    NotContracted(usize),
    #[error("distortion needs at least 2 points, metric has {0}")]
    TooFewPoints(usize),
    #[error("trial count must be at least 1")]
    NoTrials,
    #[error("unknown embedding mode {0:?} (expected frt-only or frt+reduce)")]
    UnknownMode(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EmbedMode {
    #[serde(rename = "frt-only")]
    FrtOnly,
    #[serde(rename = "frt+reduce")]
    FrtReduce,
}

impl fmt::Display for EmbedMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EmbedMode::FrtOnly => "frt-only",
            EmbedMode::FrtReduce => "frt+reduce",
        })
    }
}

impl FromStr for EmbedMode {
    type Err = EmbedError;
    fn from_str(s: &str) -> Result<Self, EmbedError> {
        match s {
            "frt-only" => Ok(EmbedMode::FrtOnly),
            "frt+reduce" => Ok(EmbedMode::FrtReduce),
            other => Err(EmbedError::UnknownMode(other.to_string())),
        }
    }
}

/// One sampled tree together with the randomness that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSample {
    pub tree: RootedTree,
    pub seed: u64,
    /// Radius scale in `[1, 2)`.
    pub beta: f64,
    /// Center order used for ball carving.
    pub perm: Vec<usize>,
}

/// Number of carving levels below the root: the smallest `top >= 1` with
/// `2^(top-1) >= aspect`.
fn top_level(aspect: f64) -> i32 {
    let mut top = 1;
    while 2f64.powi(top - 1) < aspect - EPS {
        top += 1;
    }
    top
}

/// Samples a 2-HST over the metric's points.
///
/// Distances are normalized so the smallest is 1. With `top` the smallest
/// level whose radius covers every distance, the root is the whole point set
/// at level `top`; a level-`i` cluster is split into balls of radius
/// `beta * 2^(i-1)` around centers taken in `perm` order, and the edge from
/// a level-`i` cluster to each child weighs `2^i` (times the normalization).
/// Level 0 radii are below 1, so level-0 clusters are single points, which
/// become the leaves.
pub fn frt_embed(m: &FiniteMetric, seed: u64) -> EmbeddingSample {
    let n = m.len();
    let mut rng = rng_for(seed, 0);
    // density 1/(beta ln 2) on [1, 2)
    let beta = 2f64.powf(rng.gen::<f64>());
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng);

    if n <= 1 {
        let tree = RootedTree::new(vec![0], vec![None], (0..n).collect()).expect("single vertex tree");
        return EmbeddingSample { tree, seed, beta, perm };
    }

    let scale = m.min_distance().expect("n >= 2");
    let aspect = m.max_distance().expect("n >= 2") / scale;
    let top = top_level(aspect);

    let mut parent = vec![0usize];
    let mut weight: Vec<Option<f64>> = vec![None];
    let mut point_vertex = vec![usize::MAX; n];
    // (vertex, members) at the current level, members kept in point order
    let mut clusters: Vec<(usize, Vec<usize>)> = vec![(0, (0..n).collect())];
    for level in (0..top).rev() {
        let radius = beta * 2f64.powi(level - 1);
        let edge = 2f64.powi(level + 1) * scale;
        let mut next = Vec::new();
        for (vertex, members) in &clusters {
            // group members by the first center (in perm order) that covers them
            let mut groups: Vec<(usize, Vec<usize>)> = Vec::new();
            for &x in members {
                let rank = perm
                    .iter()
                    .position(|&c| m.dist(x, c) / scale <= radius)
                    .expect("every point covers itself");
                match groups.iter_mut().find(|g| g.0 == rank) {
                    Some(g) => g.1.push(x),
                    None => groups.push((rank, vec![x])),
                }
            }
            groups.sort_by_key(|g| g.0);
            for (_, sub) in groups {
                let child = parent.len();
                parent.push(*vertex);
                weight.push(Some(edge));
                next.push((child, sub));
            }
        }
        clusters = next;
    }
    for (vertex, members) in &clusters {
        debug_assert_eq!(members.len(), 1, "level-0 clusters are singletons");
        point_vertex[members[0]] = *vertex;
    }
    let tree = RootedTree::new(parent, weight, point_vertex).expect("carving builds a valid tree");
    EmbeddingSample { tree, seed, beta, perm }
}

/// Rebuilds `t` keeping the vertices for which `keep` holds (the new root
/// must be kept and be an ancestor of every kept vertex). Each kept vertex
/// hangs from its nearest kept proper ancestor by an edge weighing the exact
/// sum of the skipped path. Relative vertex order is preserved.
fn restrict(t: &RootedTree, new_root: usize, keep: &[bool]) -> RootedTree {
    let mut index = vec![usize::MAX; t.len()];
    let mut next = 0;
    for u in 0..t.len() {
        if keep[u] {
            index[u] = next;
            next += 1;
        }
    }
    let mut parent = vec![0usize; next];
    let mut weight = vec![None; next];
    for u in 0..t.len() {
        if !keep[u] {
            continue;
        }
        if u == new_root {
            parent[index[u]] = index[u];
            continue;
        }
        let mut w = 0.0;
        let mut a = u;
        loop {
            w += t.w(a);
            a = t.parent(a).expect("kept vertices lie below the new root");
            if keep[a] {
                break;
            }
        }
        parent[index[u]] = index[a];
        weight[index[u]] = Some(w);
    }
    let point_vertex = t.point_vertices().iter().map(|&v| index[v]).collect();
    RootedTree::new(parent, weight, point_vertex).expect("restriction of a tree is a tree")
}

/// Splices out every point-free vertex with exactly one child, merging its
/// two edges into one. A point-free root with a single internal child is
/// dropped. Leaf-to-leaf distances are unchanged.
pub fn contract_chains(t: &RootedTree) -> RootedTree {
    let mut root = t.root();
    while t.children(root).len() == 1 && t.vertex_point(root).is_none() {
        let c = t.children(root)[0];
        if t.is_leaf(c) {
            break;
        }
        root = c;
    }
    let keep: Vec<bool> = (0..t.len())
        .map(|u| {
            u == root
                || (t.is_ancestor(root, u) && (t.children(u).len() != 1 || t.vertex_point(u).is_some()))
        })
        .collect();
    if keep.iter().all(|&k| k) {
        return t.clone();
    }
    restrict(t, root, &keep)
}

fn dyadic_class(count: usize) -> u32 {
    usize::BITS - 1 - count.leading_zeros()
}

/// Keeps the root, the leaves, point-carrying vertices, and every vertex
/// whose `floor(log2(leaf count))` is below its parent's. Classes strictly
/// drop along any root-to-leaf path of the result, so the height is at most
/// `floor(log2 n) + 1`. Lowest common ancestors can only move rootward,
/// so leaf distances never shrink.
pub fn reduce_height(t: &RootedTree) -> Result<RootedTree, EmbedError> {
    for u in 0..t.len() {
        if t.children(u).len() == 1 {
            let root_above_leaf = u == t.root() && t.is_leaf(t.children(u)[0]);
            if !root_above_leaf {
                return Err(EmbedError::NotContracted(u));
            }
        }
    }
    let leaves = t.leaf_counts();
    let keep: Vec<bool> = (0..t.len())
        .map(|u| match t.parent(u) {
            None => true,
            Some(p) => {
                t.is_leaf(u)
                    || t.vertex_point(u).is_some()
                    || dyadic_class(leaves[u]) < dyadic_class(leaves[p])
            }
        })
        .collect();
    if keep.iter().all(|&k| k) {
        return Ok(t.clone());
    }
    Ok(restrict(t, t.root(), &keep))
}

/// The full pipeline: carve, contract, and in `FrtReduce` mode reduce height.
pub fn sample_embedding(m: &FiniteMetric, seed: u64, mode: EmbedMode) -> EmbeddingSample {
    let mut sample = frt_embed(m, seed);
    sample.tree = contract_chains(&sample.tree);
    if mode == EmbedMode::FrtReduce {
        sample.tree = reduce_height(&sample.tree).expect("contracted trees reduce");
    }
    sample
}

/// Mean stretch per point pair over independent samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistortionReport {
    pub mode: EmbedMode,
    pub trials: usize,
    pub seed: u64,
    /// `(x, y, mean of tree_dist / dist)` for `x < y`.
    pub pairs: Vec<(usize, usize, f64)>,
    /// Largest mean stretch (the empirical distortion).
    pub max_mean_stretch: f64,
    /// Smallest single-sample stretch seen over all pairs and trials.
    pub min_stretch: f64,
}

impl DistortionReport {
    /// CSV with columns `pair,mean_stretch`, pairs written as `x-y`.
    pub fn write_csv(&self, path: &Path) -> Result<(), EmbedError> {
        let mut out = String::from("pair,mean_stretch\n");
        for (x, y, s) in &self.pairs {
            out.push_str(&format!("{x}-{y},{s}\n"));
        }
        fs::write(path, out).map_err(|source| EmbedError::Io { path: path.display().to_string(), source })
    }
}

/// Samples `trials` trees (trial `k` uses the child seed `(seed, k)`) and
/// averages the stretch of every pair.
pub fn measure_distortion(
    m: &FiniteMetric,
    mode: EmbedMode,
    trials: usize,
    seed: u64,
) -> Result<DistortionReport, EmbedError> {
    let n = m.len();
    if n < 2 {
        return Err(EmbedError::TooFewPoints(n));
    }
    if trials == 0 {
        return Err(EmbedError::NoTrials);
    }
    let pair_list: Vec<(usize, usize)> = (0..n).flat_map(|x| ((x + 1)..n).map(move |y| (x, y))).collect();
    let per_trial: Vec<Vec<f64>> = (0..trials)
        .into_par_iter()
        .map(|k| {
            let s = sample_embedding(m, child_seed(seed, k as u64), mode);
            pair_list.iter().map(|&(x, y)| s.tree.point_dist(x, y) / m.dist(x, y)).collect()
        })
        .collect();
    let mut sums = vec![0.0; pair_list.len()];
    let mut min_stretch = f64::INFINITY;
    for stretches in &per_trial {
        for (acc, &s) in sums.iter_mut().zip(stretches) {
            *acc += s;
            min_stretch = min_stretch.min(s);
        }
    }
    let pairs: Vec<(usize, usize, f64)> = pair_list
        .iter()
        .zip(&sums)
        .map(|(&(x, y), &s)| (x, y, s / trials as f64))
        .collect();
    let max_mean_stretch = pairs.iter().map(|p| p.2).fold(f64::NEG_INFINITY, f64::max);
    Ok(DistortionReport { mode, trials, seed, pairs, max_mean_stretch, min_stretch })
}
