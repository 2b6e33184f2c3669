//! Deterministic online MBPMD on an edge-weighted rooted tree.
//!
//! With `sur(u)` the number of positive minus negative pending requests in
//! `T_u`, the counter `z+_u` grows at rate `sur(u)` while `sur(u) > 0` and
//! `e_u` is outside `F+`; at `2 d_u` the edge joins `F+`. `z-_u` and `F-`
//! mirror this for negative surplus. A positive request at `a` and a
//! negative one at `b` are matched once `a -> lca(a, b)` lies in `F+` and
//! `b -> lca(a, b)` lies in `F-`. The used edges then leave both forests
//! and both their counters restart from zero. The totals `Z+`, `Z-` keep
//! running across resets.

use serde::{Deserialize, Serialize};

use crate::metric::{CostSemantics, Instance, MatchedPair, Polarity, ProblemKind, RootedTree, Schedule};
use crate::online_mpmd::leaf_tree;
use crate::sim::{record, Counter, TriggerQueue};
use crate::EPS;

pub use crate::sim::{Accounting, CheckLevel, Diagnosis, OnlineError, RunOptions, TraceEvent, Violation};

const WATCHDOG: usize = 50_000_000;

/// Pending counts and the total counter growth rate of a snapshot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Zeta {
    pub rho_plus: usize,
    pub rho_minus: usize,
    pub zeta: f64,
}

/// Per-polarity state: forest flags, counters, shadow totals and the count
/// of pending requests of that polarity reachable downward through the forest.
#[derive(Debug, Clone)]
struct Side {
    bought: Vec<bool>,
    z: Vec<Counter>,
    total: Vec<Counter>,
    down: Vec<i64>,
}

impl Side {
    fn new(pinned: &[bool]) -> Self {
        let n = pinned.len();
        Side { bought: pinned.to_vec(), z: vec![Counter::default(); n], total: vec![Counter::default(); n], down: vec![0; n] }
    }
}

fn side_index(p: Polarity) -> usize {
    match p {
        Polarity::Plus => 0,
        Polarity::Minus => 1,
    }
}

const POLARITIES: [Polarity; 2] = [Polarity::Plus, Polarity::Minus];

#[derive(Debug, Clone)]
pub struct BipartiteAlgState {
    tree: RootedTree,
    pinned: Vec<bool>,
    sides: [Side; 2],
    /// Surplus of `T_u`.
    sur: Vec<i64>,
    pending: Vec<Vec<usize>>,
    queue: TriggerQueue,
    req_vertex: Vec<usize>,
    req_polarity: Vec<Polarity>,
    arrival: Vec<f64>,
    pairs: Vec<MatchedPair>,
    open: [usize; 2],
    dirty: Vec<usize>,
    now: f64,
    opts: RunOptions,
    trace: Vec<TraceEvent>,
    violations: Vec<Violation>,
    quiescent_checks: usize,
    batches: usize,
}

impl BipartiteAlgState {
    pub fn new(tree: RootedTree, opts: RunOptions) -> Self {
        let n = tree.len();
        let root = tree.root();
        let pinned: Vec<bool> = (0..n).map(|u| u != root && tree.w(u) == 0.0).collect();
        let side = Side::new(&pinned);
        BipartiteAlgState {
            sides: [side.clone(), side],
            pinned,
            sur: vec![0; n],
            pending: vec![Vec::new(); n],
            queue: TriggerQueue::new(2 * n),
            req_vertex: Vec::new(),
            req_polarity: Vec::new(),
            arrival: Vec::new(),
            pairs: Vec::new(),
            open: [0, 0],
            dirty: Vec::new(),
            now: 0.0,
            opts,
            trace: Vec::new(),
            violations: Vec::new(),
            quiescent_checks: 0,
            batches: 0,
            tree,
        }
    }

    pub fn tree(&self) -> &RootedTree {
        &self.tree
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    pub fn sur(&self, u: usize) -> i64 {
        self.sur[u]
    }

    pub fn z(&self, p: Polarity, u: usize) -> f64 {
        self.sides[side_index(p)].z[u].at(self.now)
    }

    pub fn z_plus(&self, u: usize) -> f64 {
        self.z(Polarity::Plus, u)
    }

    pub fn z_minus(&self, u: usize) -> f64 {
        self.z(Polarity::Minus, u)
    }

    /// Never-reset counter totals; after a run these are the `y+_u` / `y-_u`.
    pub fn shadow(&self, p: Polarity) -> Vec<f64> {
        self.sides[side_index(p)].total.iter().map(|c| c.at(self.now)).collect()
    }

    pub fn in_forest(&self, p: Polarity, u: usize) -> bool {
        self.sides[side_index(p)].bought[u]
    }

    pub fn pending_total(&self) -> usize {
        self.open[0] + self.open[1]
    }

    pub fn pairs(&self) -> &[MatchedPair] {
        &self.pairs
    }

    pub fn trace(&self) -> &[TraceEvent] {
        &self.trace
    }

    pub fn violations(&self) -> &[Violation] {
        &self.violations
    }

    pub fn quiescent_checks(&self) -> usize {
        self.quiescent_checks
    }

    fn key(u: usize, p: Polarity) -> usize {
        2 * u + side_index(p)
    }

    /// Rate `z^p_u` should run at right now.
    fn wanted_rate(&self, p: Polarity, u: usize) -> f64 {
        let s = self.sur[u] * p.sign();
        if s > 0 && !self.sides[side_index(p)].bought[u] {
            s as f64
        } else {
            0.0
        }
    }

    fn schedule(&mut self, p: Polarity, u: usize) {
        self.queue.mark(Self::key(u, p));
    }

    /// Schedules triggers for every counter whose state changed at this instant.
    fn flush(&mut self) {
        for key in self.queue.take_marked() {
            let (u, p) = (key / 2, if key % 2 == 0 { Polarity::Plus } else { Polarity::Minus });
            let c = self.sides[side_index(p)].z[u];
            if c.rate > 0.0 && u != self.tree.root() {
                let left = (2.0 * self.tree.w(u) - c.at(self.now)).max(0.0);
                self.queue.schedule(key, self.now + left / c.rate);
            } else {
                self.queue.cancel(key);
            }
        }
    }

    fn refresh(&mut self, u: usize) {
        for p in POLARITIES {
            let rate = self.wanted_rate(p, u);
            let now = self.now;
            let side = &mut self.sides[side_index(p)];
            if side.z[u].rate != rate {
                side.z[u].set_rate(now, rate);
                side.total[u].set_rate(now, rate);
                self.schedule(p, u);
            }
        }
    }

    fn add_down(&mut self, p: Polarity, mut v: usize, delta: i64) {
        if delta == 0 {
            return;
        }
        let root = self.tree.root();
        let side = &mut self.sides[side_index(p)];
        side.down[v] += delta;
        while v != root && side.bought[v] {
            v = self.tree.parents()[v];
            side.down[v] += delta;
        }
    }

    fn change_count(&mut self, leaf: usize, p: Polarity, add: bool) {
        let delta = if add { p.sign() } else { -p.sign() };
        let mut v = leaf;
        loop {
            self.sur[v] += delta;
            self.refresh(v);
            match self.tree.parent(v) {
                Some(q) => v = q,
                None => break,
            }
        }
        self.add_down(p, leaf, if add { 1 } else { -1 });
    }

    fn buy(&mut self, u: usize, p: Polarity) {
        let now = self.now;
        let thr = 2.0 * self.tree.w(u);
        let side = &mut self.sides[side_index(p)];
        side.z[u].set_rate(now, 0.0);
        side.z[u].set(now, thr);
        side.total[u].set_rate(now, 0.0);
        side.bought[u] = true;
        let carried = side.down[u];
        self.queue.cancel(Self::key(u, p));
        self.add_down(p, self.tree.parents()[u], carried);
        self.dirty.push(u);
        if self.opts.trace {
            self.trace.push(TraceEvent::Buy { t: now, vertex: u, forest: Some(p) });
        }
    }

    /// Takes `e_v` out of both forests and restarts both counters at zero.
    fn release(&mut self, v: usize) {
        let now = self.now;
        for p in POLARITIES {
            let i = side_index(p);
            if self.sides[i].bought[v] {
                let carried = self.sides[i].down[v];
                self.add_down(p, self.tree.parents()[v], -carried);
                self.sides[i].bought[v] = false;
            }
            self.sides[i].z[v].set(now, 0.0);
            self.schedule(p, v);
        }
        self.refresh(v);
        if self.opts.trace {
            self.trace.push(TraceEvent::Phase { t: now, vertex: v });
        }
    }

    fn pending_of(&self, w: usize, p: Polarity) -> impl Iterator<Item = usize> + '_ {
        self.pending[w].iter().copied().filter(move |&k| self.req_polarity[k] == p)
    }

    /// Smallest pending id of polarity `p` whose `p`-forest path reaches `w`.
    fn min_reaching(&self, w: usize, p: Polarity) -> Option<usize> {
        let side = &self.sides[side_index(p)];
        let mut best: Option<usize> = None;
        let mut stack = vec![w];
        while let Some(x) = stack.pop() {
            if let Some(k) = self.pending_of(x, p).min() {
                best = Some(best.map_or(k, |b| b.min(k)));
            }
            for &c in self.tree.children(x) {
                if side.bought[c] && side.down[c] > 0 {
                    stack.push(c);
                }
            }
        }
        best
    }

    /// Vertices reached upward from `v` through `p`-forest edges, `v` included.
    fn chain(&self, mut v: usize, p: Polarity) -> Vec<usize> {
        let side = &self.sides[side_index(p)];
        let root = self.tree.root();
        let mut out = vec![v];
        while v != root && side.bought[v] {
            v = self.tree.parents()[v];
            out.push(v);
        }
        out
    }

    fn meets(&self, w: usize) -> bool {
        self.sides[0].down[w] > 0 && self.sides[1].down[w] > 0
    }

    /// Lexicographically smallest matchable pair meeting at `w`.
    fn best_at(&self, w: usize) -> Option<(usize, usize)> {
        if !self.meets(w) {
            return None;
        }
        let a = self.min_reaching(w, Polarity::Plus)?;
        let b = self.min_reaching(w, Polarity::Minus)?;
        Some((a.min(b), a.max(b)))
    }

    /// Matches opposite pairs whose forest paths meet, smallest `(i, j)`
    /// first, until the snapshot is valid again.
    pub fn try_match(&mut self) -> Vec<(usize, usize)> {
        let mut meet: Vec<usize> = Vec::new();
        for &v in &self.dirty {
            for p in POLARITIES {
                meet.extend(self.chain(v, p).into_iter().filter(|&w| self.meets(w)));
            }
        }
        self.dirty.clear();
        meet.sort_unstable();
        meet.dedup();
        let mut out = Vec::new();
        loop {
            // a meeting vertex whose edge is in both forests is dominated by its parent
            meet.retain(|&w| self.meets(w));
            let set: std::collections::HashSet<usize> = meet.iter().copied().collect();
            let mut best: Option<(usize, usize)> = None;
            for &w in &meet {
                if let Some(p) = self.tree.parent(w) {
                    if set.contains(&p) && self.sides[0].bought[w] && self.sides[1].bought[w] {
                        continue;
                    }
                }
                if let Some(c) = self.best_at(w) {
                    if best.is_none_or(|b| c < b) {
                        best = Some(c);
                    }
                }
            }
            let Some((i, j)) = best else { break };
            self.match_pair(i, j);
            out.push((i, j));
        }
        out
    }

    fn match_pair(&mut self, i: usize, j: usize) {
        let (vi, vj) = (self.req_vertex[i], self.req_vertex[j]);
        for (id, v) in [(i, vi), (j, vj)] {
            let pos = self.pending[v].iter().position(|&k| k == id).expect("request is pending");
            self.pending[v].remove(pos);
            let p = self.req_polarity[id];
            self.open[side_index(p)] -= 1;
            self.change_count(v, p, false);
        }
        let l = self.tree.lca(vi, vj);
        for side in [vi, vj] {
            let mut v = side;
            while v != l {
                let p = self.tree.parents()[v];
                if !self.pinned[v] {
                    self.release(v);
                }
                v = p;
            }
        }
        self.pairs.push(MatchedPair { i, j, time: self.now });
        if self.opts.trace {
            self.trace.push(TraceEvent::Match { t: self.now, pair: [i, j] });
        }
    }

    /// Time until the next counter reaches `2 d_u`, over running non-root counters.
    pub fn next_trigger(&self) -> Option<f64> {
        let root = self.tree.root();
        let mut best: Option<f64> = None;
        for side in &self.sides {
            for u in 0..self.tree.len() {
                let c = side.z[u];
                if u != root && c.rate > 0.0 {
                    let dt = ((2.0 * self.tree.w(u) - c.at(self.now)) / c.rate).max(0.0);
                    best = Some(best.map_or(dt, |b| b.min(dt)));
                }
            }
        }
        best
    }

    pub fn advance_to(&mut self, time: f64) -> Result<(), OnlineError> {
        if time < self.now - EPS {
            return Err(OnlineError::TimeRegression { now: self.now, t: time });
        }
        let time = time.max(self.now);
        self.flush();
        while let Some(t) = self.queue.peek() {
            if t > time {
                break;
            }
            self.now = t.max(self.now);
            for key in self.queue.pop_until(self.now + EPS) {
                let p = if key % 2 == 0 { Polarity::Plus } else { Polarity::Minus };
                self.buy(key / 2, p);
            }
            self.try_match();
            self.quiescent();
            self.flush();
            self.batches += 1;
            if self.batches > WATCHDOG {
                return Err(OnlineError::Watchdog(self.batches));
            }
        }
        self.now = time;
        Ok(())
    }

    pub fn on_request(&mut self, leaf: usize, polarity: Polarity, time: f64) -> Result<usize, OnlineError> {
        if leaf >= self.tree.len() || !self.tree.is_leaf(leaf) {
            return Err(OnlineError::UnknownLeaf(leaf));
        }
        // simultaneous arrivals share one flush
        if time > self.now {
            self.advance_to(time)?;
        } else if time < self.now - EPS {
            return Err(OnlineError::TimeRegression { now: self.now, t: time });
        }
        let id = self.req_vertex.len();
        self.req_vertex.push(leaf);
        self.req_polarity.push(polarity);
        self.arrival.push(time);
        if self.opts.trace {
            self.trace.push(TraceEvent::Arrival { t: self.now, id, vertex: leaf, polarity: Some(polarity) });
        }
        self.pending[leaf].push(id);
        self.open[side_index(polarity)] += 1;
        self.change_count(leaf, polarity, true);
        self.dirty.push(leaf);
        self.try_match();
        self.quiescent();
        Ok(id)
    }

    pub fn finish(&mut self) -> Result<(), OnlineError> {
        while self.pending_total() > 0 {
            self.flush();
            match self.queue.peek() {
                Some(t) => self.advance_to(t)?,
                None => return Err(OnlineError::Stuck(self.pending_total())),
            }
        }
        Ok(())
    }

    /// Surplus of every vertex, recomputed from the pending requests.
    fn fresh_surplus(&self) -> Vec<i64> {
        let mut sur = vec![0i64; self.tree.len()];
        for u in 0..self.tree.len() {
            sur[u] = self.pending[u].iter().map(|&k| self.req_polarity[k].sign()).sum();
        }
        for &u in self.tree.order().iter().rev() {
            if let Some(p) = self.tree.parent(u) {
                sur[p] += sur[u];
            }
        }
        sur
    }

    /// `rho+`, `rho-` and `zeta` of the current snapshot, from scratch.
    pub fn snapshot_zeta(&self) -> Zeta {
        let sur = self.fresh_surplus();
        let mut zeta = 0.0;
        for u in 0..self.tree.len() {
            if !self.sides[0].bought[u] {
                zeta += sur[u].max(0) as f64;
            }
            if !self.sides[1].bought[u] {
                zeta += (-sur[u]).max(0) as f64;
            }
        }
        let count = |p: Polarity| (0..self.tree.len()).map(|u| self.pending_of(u, p).count()).sum();
        Zeta { rho_plus: count(Polarity::Plus), rho_minus: count(Polarity::Minus), zeta }
    }

    /// Whether no opposite pair can be matched through the forests,
    /// recomputed from scratch.
    pub fn snapshot_valid(&self) -> bool {
        let n = self.tree.len();
        let mut reach = [vec![0usize; n], vec![0usize; n]];
        for &u in self.tree.order().iter().rev() {
            for p in POLARITIES {
                let i = side_index(p);
                reach[i][u] += self.pending_of(u, p).count();
                if let Some(q) = self.tree.parent(u) {
                    if self.sides[i].bought[u] {
                        reach[i][q] += reach[i][u];
                    }
                }
            }
        }
        (0..n).all(|u| reach[0][u] == 0 || reach[1][u] == 0)
    }

    fn quiescent(&mut self) {
        if self.opts.checks == CheckLevel::Full {
            self.check_structure();
        }
    }

    /// Asserts snapshot validity, `rho+- <= zeta`, and counter ranges.
    pub fn check_structure(&mut self) {
        self.quiescent_checks += 1;
        let t = self.now;
        if !self.snapshot_valid() {
            record(&mut self.violations, "snapshot_valid", t, "a matchable opposite pair is pending".into());
        }
        let zeta = self.snapshot_zeta();
        if zeta.rho_plus as f64 > zeta.zeta + EPS || zeta.rho_minus as f64 > zeta.zeta + EPS {
            let detail = format!("rho+ {} rho- {} zeta {}", zeta.rho_plus, zeta.rho_minus, zeta.zeta);
            record(&mut self.violations, "rho_le_zeta", t, detail);
        }
        let root = self.tree.root();
        for u in 0..self.tree.len() {
            if u == root {
                continue;
            }
            let cap = 2.0 * self.tree.w(u);
            for p in POLARITIES {
                let z = self.z(p, u);
                if z < -EPS || z > cap + EPS * cap.max(1.0) {
                    record(&mut self.violations, "counter_range", t, format!("z{:?}_{u} = {z} outside [0, {cap}]", p));
                }
            }
        }
    }

    /// Compares `y+_u + y-_u` with `4 (x_u + x'_u)` for a feasible solution.
    pub fn diagnose(&self, inst: &Instance, sol: &Schedule) -> Result<Diagnosis, OnlineError> {
        sol.validate(inst)?;
        let y: Vec<f64> = self.shadow(Polarity::Plus).iter().zip(self.shadow(Polarity::Minus)).map(|(a, b)| a + b).collect();
        Ok(Diagnosis::build(&self.tree, y, &self.req_vertex, &self.arrival, sol, 4.0))
    }
}

#[derive(Debug, Clone)]
pub struct BipartiteRunResult {
    pub schedule: Schedule,
    pub state: BipartiteAlgState,
    pub accounting: Accounting,
}

impl BipartiteRunResult {
    pub fn violations(&self) -> &[Violation] {
        self.state.violations()
    }
}

pub fn run_b(inst: &Instance, tree: &RootedTree) -> Result<BipartiteRunResult, OnlineError> {
    run_b_with(inst, tree, RunOptions::default())
}

pub fn run_b_with(inst: &Instance, tree: &RootedTree, opts: RunOptions) -> Result<BipartiteRunResult, OnlineError> {
    if inst.kind() != ProblemKind::Mbpmd {
        return Err(OnlineError::WrongKind);
    }
    let mut counts = [0usize; 2];
    for (k, r) in inst.requests().iter().enumerate() {
        let p = r.polarity.ok_or(OnlineError::MissingPolarity(k))?;
        counts[side_index(p)] += 1;
    }
    if counts[0] != counts[1] {
        return Err(OnlineError::Unbalanced { plus: counts[0], minus: counts[1] });
    }
    let tree = leaf_tree(inst, tree)?;
    let mut state = BipartiteAlgState::new(tree, opts);
    for r in inst.requests() {
        let v = state.tree.point_vertex(r.point);
        state.on_request(v, r.polarity.expect("checked above"), r.arrival)?;
    }
    state.finish()?;
    let t = &state.tree;
    let schedule = Schedule::build(inst, state.pairs.iter().copied(), CostSemantics::Online, |p, q| t.point_dist(p, q));
    let sum_y = state.shadow(Polarity::Plus).iter().sum::<f64>() + state.shadow(Polarity::Minus).iter().sum::<f64>();
    let accounting = Accounting::new(sum_y, schedule.connection_cost, schedule.delay_cost);
    if !accounting.connection_ok {
        let detail = format!("connection {} > sum y / 2 = {}", accounting.connection, accounting.sum_y / 2.0);
        record(&mut state.violations, "connection_accounting", state.now, detail);
    }
    if !accounting.delay_ok {
        let detail = format!("delay {} > 2 sum y = {}", accounting.delay, 2.0 * accounting.sum_y);
        record(&mut state.violations, "delay_accounting", state.now, detail);
    }
    Ok(BipartiteRunResult { schedule, state, accounting })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::offline_opt::bipartite_opt_assignment;
    use Polarity::{Minus, Plus};

    fn star(w: &[f64]) -> RootedTree {
        RootedTree::star(w).unwrap()
    }

    fn inst_on(tree: &RootedTree, reqs: Vec<(usize, f64, Polarity)>) -> Instance {
        Instance::new(tree.leaf_metric().unwrap(), reqs.into_iter().map(|(p, t, b)| (p, t, Some(b))).collect()).unwrap()
    }

    #[test]
    fn same_leaf_opposite_pair() {
        let t = star(&[1.0, 1.0]);
        let r = run_b_with(&inst_on(&t, vec![(0, 0.0, Plus), (0, 3.0, Minus)]), &t, RunOptions::full()).unwrap();
        assert_eq!(r.schedule.pairs, vec![MatchedPair { i: 0, j: 1, time: 3.0 }]);
        assert_eq!(r.schedule.delay_cost, 3.0);
        assert_eq!(r.schedule.connection_cost, 0.0);
        assert!(r.violations().is_empty());
    }

    #[test]
    fn star_trace() {
        let t = star(&[1.0, 1.0]);
        let inst = inst_on(&t, vec![(0, 0.0, Plus), (1, 0.0, Minus)]);
        let r = run_b_with(&inst, &t, RunOptions::full()).unwrap();
        assert_eq!(r.schedule.pairs, vec![MatchedPair { i: 0, j: 1, time: 2.0 }]);
        assert_eq!(r.schedule.connection_cost, 2.0);
        assert_eq!(r.schedule.delay_cost, 4.0);
        assert_eq!(r.state.shadow(Plus), vec![0.0, 2.0, 0.0]);
        assert_eq!(r.state.shadow(Minus), vec![0.0, 0.0, 2.0]);
        // used edges restart from zero in both forests
        for u in [1, 2] {
            assert_eq!(r.state.z_plus(u), 0.0);
            assert_eq!(r.state.z_minus(u), 0.0);
            assert!(!r.state.in_forest(Plus, u) && !r.state.in_forest(Minus, u));
        }
        assert!(r.accounting.ok());
        assert!(r.violations().is_empty());

        let opt = bipartite_opt_assignment(&inst).unwrap();
        let d = r.state.diagnose(&inst, &opt).unwrap();
        assert_eq!(d.y[1], 2.0);
        assert_eq!(d.x_prime[1], 1.0);
        assert!(d.per_vertex_ok() && d.aggregate_ok());
        assert!(r.schedule.total() <= d.guarantee(10.0));
    }

    #[test]
    fn rate_is_surplus_magnitude() {
        let mut s = BipartiteAlgState::new(star(&[1.0, 1.0]), RunOptions::full());
        s.on_request(1, Plus, 0.0).unwrap();
        s.on_request(1, Plus, 0.0).unwrap();
        assert_eq!(s.next_trigger(), Some(1.0));
        s.advance_to(1.0).unwrap();
        assert!(s.in_forest(Plus, 1));
        assert_eq!(s.z_plus(1), 2.0);
        assert!(s.violations().is_empty());
    }

    #[test]
    fn trigger_in_closed_form() {
        let mut s = BipartiteAlgState::new(star(&[3.0, 1.0]), RunOptions::default());
        for _ in 0..3 {
            s.on_request(1, Plus, 0.0).unwrap();
        }
        assert_eq!(s.next_trigger(), Some(2.0));
    }

    #[test]
    fn rate_change_mid_flight() {
        let mut s = BipartiteAlgState::new(star(&[1.0, 1.0]), RunOptions::full());
        s.on_request(1, Plus, 0.0).unwrap();
        s.on_request(1, Plus, 0.5).unwrap();
        assert_eq!(s.z_plus(1), 0.5);
        assert_eq!(s.next_trigger(), Some(0.75));
        s.advance_to(1.2).unwrap();
        assert!(!s.in_forest(Plus, 1));
        s.advance_to(1.25).unwrap();
        assert!(s.in_forest(Plus, 1));
    }

    #[test]
    fn half_bought_path_does_not_match() {
        let mut s = BipartiteAlgState::new(star(&[1.0, 5.0]), RunOptions::full());
        s.on_request(1, Plus, 0.0).unwrap();
        s.on_request(2, Minus, 0.0).unwrap();
        s.advance_to(3.0).unwrap();
        assert!(s.in_forest(Plus, 1) && !s.in_forest(Minus, 2));
        assert!(s.pairs().is_empty());
        assert!(s.try_match().is_empty());
        s.finish().unwrap();
        assert_eq!(s.pairs(), &[MatchedPair { i: 0, j: 1, time: 10.0 }]);
        assert!(s.violations().is_empty());
    }

    #[test]
    fn zeta_examples() {
        let mut s = BipartiteAlgState::new(star(&[1.0, 1.0]), RunOptions::default());
        assert_eq!(s.snapshot_zeta(), Zeta { rho_plus: 0, rho_minus: 0, zeta: 0.0 });
        s.on_request(1, Plus, 0.0).unwrap();
        s.on_request(2, Minus, 0.0).unwrap();
        s.advance_to(1.0).unwrap();
        assert_eq!(s.snapshot_zeta(), Zeta { rho_plus: 1, rho_minus: 1, zeta: 2.0 });

        // root - a - b - leaf: a lone positive request counts at all 4 vertices
        let deep = RootedTree::new(vec![0, 0, 1, 2], vec![None, Some(1.0), Some(1.0), Some(1.0)], vec![3]).unwrap();
        let mut s = BipartiteAlgState::new(deep, RunOptions::default());
        s.on_request(3, Plus, 0.0).unwrap();
        let z = s.snapshot_zeta();
        assert_eq!((z.rho_plus, z.rho_minus, z.zeta), (1, 0, 4.0));
        assert_eq!(s.tree().height(), 4);
    }

    #[test]
    fn rejects_wrong_kind() {
        let t = star(&[1.0, 1.0]);
        let plain = Instance::new(t.leaf_metric().unwrap(), vec![(0, 0.0, None), (1, 0.0, None)]).unwrap();
        assert!(matches!(run_b(&plain, &t), Err(OnlineError::WrongKind)));
    }

    #[test]
    fn lexicographic_pair_choice() {
        // two positives and two negatives at the same leaf, all at once
        let t = star(&[1.0, 1.0]);
        let inst = inst_on(&t, vec![(0, 0.0, Plus), (0, 0.0, Plus), (1, 0.0, Minus), (0, 0.0, Minus)]);
        let r = run_b_with(&inst, &t, RunOptions::full()).unwrap();
        assert!(r.schedule.validate(&inst).is_ok());
        assert_eq!((r.schedule.pairs[0].i, r.schedule.pairs[0].j), (0, 3));
        assert!(r.violations().is_empty());
    }
}
