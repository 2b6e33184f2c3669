//! Deterministic online MPMD on an edge-weighted rooted tree.
//!
//! Every vertex `u` keeps a counter `z_u` that grows at unit rate while `T_u`
//! holds an odd number of pending requests and `e_u` is not bought. When `z_u`
//! reaches the next multiple of `2 d_u`, `e_u` joins the forest `F`. Two
//! pending requests are matched as soon as the path between them lies in `F`;
//! the path's edges then leave `F`. Counters are never reset, so thresholds
//! are successive multiples.
//!
//! The state is driven in continuous time: counters are integrated lazily and
//! threshold crossings come from a trigger queue. All triggers due at one
//! instant are applied before matching, and matching runs to quiescence.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use crate::metric::{CostSemantics, Instance, MatchedPair, ProblemKind, RootedTree, Schedule};
use crate::sim::{record, Counter, TriggerQueue};
use crate::EPS;

pub use crate::sim::{Accounting, CheckLevel, Diagnosis, OnlineError, RunOptions, TraceEvent, Violation, DIAG_SLACK};

const WATCHDOG: usize = 50_000_000;

#[derive(Debug, Clone)]
pub struct AlgState {
    tree: RootedTree,
    /// Zero-weight edges: bought for good.
    pinned: Vec<bool>,
    bought: Vec<bool>,
    buys: Vec<u64>,
    z: Vec<Counter>,
    /// Pending requests in `T_u`.
    cnt: Vec<usize>,
    /// Pending requests reachable from `u` downward through bought edges.
    down: Vec<i64>,
    pending: Vec<Vec<usize>>,
    queue: TriggerQueue,
    req_vertex: Vec<usize>,
    arrival: Vec<f64>,
    pairs: Vec<MatchedPair>,
    open: usize,
    dirty: Vec<usize>,
    now: f64,
    opts: RunOptions,
    trace: Vec<TraceEvent>,
    violations: Vec<Violation>,
    quiescent_checks: usize,
    batches: usize,
}

impl AlgState {
    pub fn new(tree: RootedTree, opts: RunOptions) -> Self {
        let n = tree.len();
        let root = tree.root();
        let pinned: Vec<bool> = (0..n).map(|u| u != root && tree.w(u) == 0.0).collect();
        AlgState {
            bought: pinned.clone(),
            pinned,
            buys: vec![0; n],
            z: vec![Counter::default(); n],
            cnt: vec![0; n],
            down: vec![0; n],
            pending: vec![Vec::new(); n],
            queue: TriggerQueue::new(n),
            req_vertex: Vec::new(),
            arrival: Vec::new(),
            pairs: Vec::new(),
            open: 0,
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

    /// Current value of `z_u`.
    pub fn z(&self, u: usize) -> f64 {
        self.z[u].at(self.now)
    }

    /// Counter values at the current time; after a run these are the `y_u`.
    pub fn y(&self) -> Vec<f64> {
        (0..self.tree.len()).map(|u| self.z(u)).collect()
    }

    pub fn is_bought(&self, u: usize) -> bool {
        self.bought[u]
    }

    pub fn is_odd(&self, u: usize) -> bool {
        self.cnt[u] % 2 == 1
    }

    pub fn pending_total(&self) -> usize {
        self.open
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

    /// Number of quiescent instants at which the structural checks ran.
    pub fn quiescent_checks(&self) -> usize {
        self.quiescent_checks
    }

    pub fn request_vertices(&self) -> &[usize] {
        &self.req_vertex
    }

    pub fn arrivals(&self) -> &[f64] {
        &self.arrival
    }

    fn threshold(&self, u: usize) -> f64 {
        (self.buys[u] + 1) as f64 * 2.0 * self.tree.w(u)
    }

    /// Re-derives whether `z_u` runs and reschedules its trigger.
    fn refresh(&mut self, u: usize) {
        let want = self.cnt[u] % 2 == 1 && !self.bought[u];
        let rate = if want { 1.0 } else { 0.0 };
        if self.z[u].rate == rate {
            return;
        }
        self.z[u].set_rate(self.now, rate);
        self.queue.mark(u);
    }

    /// Schedules triggers for every counter whose state changed at this instant.
    fn flush(&mut self) {
        for u in self.queue.take_marked() {
            if self.z[u].rate > 0.0 && u != self.tree.root() {
                let left = (self.threshold(u) - self.z[u].at(self.now)).max(0.0);
                self.queue.schedule(u, self.now + left);
            } else {
                self.queue.cancel(u);
            }
        }
    }

    /// Adds `delta` to `down` at `v` and at every ancestor reachable through bought edges.
    fn add_down(&mut self, mut v: usize, delta: i64) {
        if delta == 0 {
            return;
        }
        let root = self.tree.root();
        self.down[v] += delta;
        while v != root && self.bought[v] {
            v = self.tree.parents()[v];
            self.down[v] += delta;
        }
    }

    fn change_count(&mut self, leaf: usize, add: bool) {
        let mut v = leaf;
        loop {
            if add {
                self.cnt[v] += 1;
            } else {
                self.cnt[v] -= 1;
            }
            self.refresh(v);
            match self.tree.parent(v) {
                Some(p) => v = p,
                None => break,
            }
        }
        self.add_down(leaf, if add { 1 } else { -1 });
    }

    fn buy(&mut self, u: usize) {
        let thr = self.threshold(u);
        self.z[u].set_rate(self.now, 0.0);
        self.z[u].set(self.now, thr);
        self.buys[u] += 1;
        self.bought[u] = true;
        self.queue.cancel(u);
        let carried = self.down[u];
        self.add_down(self.tree.parents()[u], carried);
        self.dirty.push(u);
        if self.opts.trace {
            self.trace.push(TraceEvent::Buy { t: self.now, vertex: u, forest: None });
        }
    }

    fn unbuy(&mut self, v: usize) {
        let carried = self.down[v];
        self.add_down(self.tree.parents()[v], -carried);
        self.bought[v] = false;
        self.refresh(v);
        if self.opts.trace {
            self.trace.push(TraceEvent::Phase { t: self.now, vertex: v });
        }
    }

    fn top(&self, mut v: usize) -> usize {
        let root = self.tree.root();
        while v != root && self.bought[v] {
            v = self.tree.parents()[v];
        }
        v
    }

    /// Pending request ids in the `F`-component topped by `top`, sorted.
    fn component_requests(&self, top: usize) -> Vec<usize> {
        let mut ids = Vec::new();
        let mut stack = vec![top];
        while let Some(w) = stack.pop() {
            ids.extend_from_slice(&self.pending[w]);
            for &c in self.tree.children(w) {
                if self.bought[c] && self.down[c] > 0 {
                    stack.push(c);
                }
            }
        }
        ids.sort_unstable();
        ids
    }

    /// Time until the next counter threshold, over running non-root counters.
    pub fn next_trigger(&self) -> Option<f64> {
        let root = self.tree.root();
        (0..self.tree.len())
            .filter(|&u| u != root && self.z[u].rate > 0.0)
            .map(|u| (self.threshold(u) - self.z(u)).max(0.0))
            .min_by(f64::total_cmp)
    }

    /// Matches pending pairs connected in `F`, smallest `(i, j)` first, until
    /// no such pair remains. Returns the pairs matched.
    pub fn try_match(&mut self) -> Vec<(usize, usize)> {
        // a match only splits its own component, so other entries stay valid
        let mut out = Vec::new();
        let mut heap = BinaryHeap::new();
        let mut seeds = std::mem::take(&mut self.dirty);
        loop {
            let mut tops: Vec<usize> = seeds.iter().map(|&v| self.top(v)).collect();
            tops.sort_unstable();
            tops.dedup();
            for top in tops {
                if self.down[top] < 2 {
                    continue;
                }
                let ids = self.component_requests(top);
                if ids.len() >= 2 {
                    heap.push(Reverse((ids[0], ids[1], ids)));
                }
            }
            let Some(Reverse((i, j, ids))) = heap.pop() else { break };
            self.match_pair(i, j);
            out.push((i, j));
            seeds = ids[2..].iter().map(|&k| self.req_vertex[k]).collect();
        }
        out
    }

    fn match_pair(&mut self, i: usize, j: usize) {
        let (vi, vj) = (self.req_vertex[i], self.req_vertex[j]);
        for (id, v) in [(i, vi), (j, vj)] {
            let pos = self.pending[v].iter().position(|&k| k == id).expect("request is pending");
            self.pending[v].remove(pos);
            self.change_count(v, false);
        }
        self.open -= 2;
        let l = self.tree.lca(vi, vj);
        for side in [vi, vj] {
            let mut v = side;
            while v != l {
                debug_assert!(self.bought[v], "matched along an unbought edge");
                let p = self.tree.parents()[v];
                if !self.pinned[v] {
                    self.unbuy(v);
                }
                v = p;
            }
        }
        self.pairs.push(MatchedPair { i, j, time: self.now });
        if self.opts.trace {
            self.trace.push(TraceEvent::Match { t: self.now, pair: [i, j] });
        }
    }

    /// Advances time to `time`, applying every trigger on the way.
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
            for u in self.queue.pop_until(self.now + EPS) {
                self.buy(u);
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

    /// Adds a request at `leaf` arriving at `time`; returns its id.
    pub fn on_request(&mut self, leaf: usize, time: f64) -> Result<usize, OnlineError> {
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
        self.arrival.push(time);
        if self.opts.trace {
            self.trace.push(TraceEvent::Arrival { t: self.now, id, vertex: leaf, polarity: None });
        }
        self.pending[leaf].push(id);
        self.open += 1;
        self.change_count(leaf, true);
        self.dirty.push(leaf);
        self.try_match();
        self.quiescent();
        Ok(id)
    }

    /// Runs time forward until every request is matched.
    pub fn finish(&mut self) -> Result<(), OnlineError> {
        while self.open > 0 {
            self.flush();
            match self.queue.peek() {
                Some(t) => self.advance_to(t)?,
                None => return Err(OnlineError::Stuck(self.open)),
            }
        }
        Ok(())
    }

    fn quiescent(&mut self) {
        if self.opts.checks == CheckLevel::Full {
            self.check_structure();
        }
    }

    /// Asserts the per-instant invariants: at most one vertex with pending
    /// requests per `F`-component, every odd internal vertex has an odd
    /// child, and no counter passes its next threshold.
    pub fn check_structure(&mut self) {
        self.quiescent_checks += 1;
        let t = self.now;
        let n = self.tree.len();
        let mut comp = vec![0usize; n];
        let mut holders = vec![0usize; n];
        for &u in self.tree.order() {
            comp[u] = match self.tree.parent(u) {
                Some(p) if self.bought[u] => comp[p],
                _ => u,
            };
            if !self.pending[u].is_empty() {
                holders[comp[u]] += 1;
            }
        }
        if let Some(c) = (0..n).find(|&c| holders[c] > 1) {
            record(&mut self.violations, "obs_component", t, format!("component of {c} has {} pending vertices", holders[c]));
        }
        for u in 0..n {
            if self.tree.is_leaf(u) || self.cnt[u] % 2 == 0 {
                continue;
            }
            let own = self.pending[u].len() % 2 == 1;
            if !own && !self.tree.children(u).iter().any(|&c| self.cnt[c] % 2 == 1) {
                record(&mut self.violations, "obs_parity", t, format!("odd vertex {u} has no odd child"));
            }
        }
        for u in 0..n {
            if u == self.tree.root() || self.pinned[u] {
                continue;
            }
            let thr = if self.bought[u] { self.buys[u] as f64 * 2.0 * self.tree.w(u) } else { self.threshold(u) };
            let z = self.z(u);
            if z > thr + EPS * thr.max(1.0) {
                record(&mut self.violations, "counter_bound", t, format!("z_{u} = {z} exceeds {thr}"));
            }
        }
    }

    /// Compares the counters with a feasible solution of the same instance.
    pub fn diagnose(&self, inst: &Instance, sol: &Schedule) -> Result<Diagnosis, OnlineError> {
        sol.validate(inst)?;
        Ok(Diagnosis::build(&self.tree, self.y(), &self.req_vertex, &self.arrival, sol, 2.0))
    }
}

/// Outcome of a full run.
#[derive(Debug, Clone)]
pub struct RunResult {
    /// Matching with connection charged in the tree metric.
    pub schedule: Schedule,
    pub state: AlgState,
    pub accounting: Accounting,
}

impl RunResult {
    pub fn violations(&self) -> &[Violation] {
        self.state.violations()
    }
}

/// The tree the algorithm actually runs on: `tree` with zero-weight leaves
/// added under point-carrying internal vertices when needed.
pub(crate) fn leaf_tree(inst: &Instance, tree: &RootedTree) -> Result<RootedTree, OnlineError> {
    if tree.num_points() != inst.metric().len() {
        return Err(OnlineError::PointCount { tree: tree.num_points(), metric: inst.metric().len() });
    }
    Ok(if tree.points_on_leaves() { tree.clone() } else { tree.augment_leaves() })
}

pub fn run(inst: &Instance, tree: &RootedTree) -> Result<RunResult, OnlineError> {
    run_with(inst, tree, RunOptions::default())
}

pub fn run_with(inst: &Instance, tree: &RootedTree, opts: RunOptions) -> Result<RunResult, OnlineError> {
    if inst.kind() != ProblemKind::Mpmd {
        return Err(OnlineError::WrongKind);
    }
    let tree = leaf_tree(inst, tree)?;
    let mut state = AlgState::new(tree, opts);
    for r in inst.requests() {
        state.on_request(state.tree.point_vertex(r.point), r.arrival)?;
    }
    state.finish()?;
    let t = &state.tree;
    let schedule = Schedule::build(inst, state.pairs.iter().copied(), CostSemantics::Online, |p, q| t.point_dist(p, q));
    let accounting = Accounting::new(state.y().iter().sum(), schedule.connection_cost, schedule.delay_cost);
    if !accounting.connection_ok {
        let detail = format!("connection {} > sum y / 2 = {}", accounting.connection, accounting.sum_y / 2.0);
        record(&mut state.violations, "connection_accounting", state.now, detail);
    }
    if !accounting.delay_ok {
        let detail = format!("delay {} > 2 sum y = {}", accounting.delay, 2.0 * accounting.sum_y);
        record(&mut state.violations, "delay_accounting", state.now, detail);
    }
    Ok(RunResult { schedule, state, accounting })
}
