//! Pieces shared by the two online tree algorithms: options, trace events,
//! invariant violations and the trigger queue.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metric::{Polarity, RootedTree, ScheduleError};

/// How often invariants are asserted during a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum CheckLevel {
    /// End-of-run accounting only.
    #[default]
    Final,
    /// Also every structural invariant at every quiescent instant (O(V) each).
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RunOptions {
    pub checks: CheckLevel,
    pub trace: bool,
}

impl RunOptions {
    pub fn full() -> Self {
        RunOptions { checks: CheckLevel::Full, trace: false }
    }
}

/// One line of the JSONL trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TraceEvent {
    Arrival {
        t: f64,
        id: usize,
        vertex: usize,
        #[serde(skip_serializing_if = "Option::is_none", default)]
        polarity: Option<Polarity>,
    },
    /// Edge `e_vertex` joins the forest (`F`, or `F+`/`F-` when `forest` is set).
    Buy {
        t: f64,
        vertex: usize,
        #[serde(skip_serializing_if = "Option::is_none", default)]
        forest: Option<Polarity>,
    },
    Match { t: f64, pair: [usize; 2] },
    /// Edge `e_vertex` was used by a match and left the forest(s).
    Phase { t: f64, vertex: usize },
}

/// A failed invariant, with the instant it was observed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub check: String,
    pub t: f64,
    pub detail: String,
}

pub(crate) const MAX_VIOLATIONS: usize = 64;

pub(crate) fn record(list: &mut Vec<Violation>, check: &str, t: f64, detail: String) {
    if list.len() < MAX_VIOLATIONS {
        list.push(Violation { check: check.to_string(), t, detail });
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OnlineError {
    #[error("time went backwards: now {now}, request at {t}")]
    TimeRegression { now: f64, t: f64 },
    #[error("vertex {0} is not a leaf of the tree")]
    UnknownLeaf(usize),
    #[error("tree carries {tree} points but the instance metric has {metric}")]
    PointCount { tree: usize, metric: usize },
    #[error("instance kind does not match the algorithm")]
    WrongKind,
    #[error("unbalanced instance: {plus} positive vs {minus} negative requests")]
    Unbalanced { plus: usize, minus: usize },
    #[error("request {0} has no polarity")]
    MissingPolarity(usize),
    #[error("no pending counter can reach a threshold but {0} requests are pending")]
    Stuck(usize),
    #[error("event watchdog tripped after {0} trigger batches")]
    Watchdog(usize),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
}

/// Heap key ordered by time, then vertex.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Trigger {
    pub t: f64,
    pub u: usize,
    pub stamp: u64,
}

impl PartialEq for Trigger {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Trigger {}
impl PartialOrd for Trigger {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Trigger {
    fn cmp(&self, other: &Self) -> Ordering {
        self.t.total_cmp(&other.t).then(self.u.cmp(&other.u)).then(self.stamp.cmp(&other.stamp))
    }
}

/// Min-queue of trigger times with per-key stamps; an entry is live only if
/// its stamp matches the current one for its key. Keys whose trigger may
/// have changed are marked and rescheduled in one go before time moves,
/// so a key toggled many times within one instant costs one heap entry.
#[derive(Debug, Clone, Default)]
pub(crate) struct TriggerQueue {
    heap: BinaryHeap<Reverse<Trigger>>,
    stamp: Vec<u64>,
    marked: Vec<usize>,
    is_marked: Vec<bool>,
}

impl TriggerQueue {
    pub fn new(keys: usize) -> Self {
        TriggerQueue { heap: BinaryHeap::new(), stamp: vec![0; keys], marked: Vec::new(), is_marked: vec![false; keys] }
    }

    pub fn mark(&mut self, key: usize) {
        if !self.is_marked[key] {
            self.is_marked[key] = true;
            self.marked.push(key);
        }
    }

    pub fn take_marked(&mut self) -> Vec<usize> {
        let keys = std::mem::take(&mut self.marked);
        for &k in &keys {
            self.is_marked[k] = false;
        }
        keys
    }

    /// Invalidates any scheduled trigger for `key`.
    pub fn cancel(&mut self, key: usize) {
        self.stamp[key] += 1;
    }

    pub fn schedule(&mut self, key: usize, t: f64) {
        self.stamp[key] += 1;
        self.heap.push(Reverse(Trigger { t, u: key, stamp: self.stamp[key] }));
    }

    fn drop_stale(&mut self) {
        while let Some(Reverse(top)) = self.heap.peek() {
            if self.stamp[top.u] == top.stamp {
                break;
            }
            self.heap.pop();
        }
    }

    pub fn peek(&mut self) -> Option<f64> {
        self.drop_stale();
        self.heap.peek().map(|r| r.0.t)
    }

    /// Pops every live trigger with time at most `limit`, in order.
    pub fn pop_until(&mut self, limit: f64) -> Vec<usize> {
        let mut out = Vec::new();
        loop {
            self.drop_stale();
            match self.heap.peek() {
                Some(Reverse(top)) if top.t <= limit => {
                    let key = top.u;
                    self.heap.pop();
                    self.stamp[key] += 1;
                    out.push(key);
                }
                _ => break,
            }
        }
        out
    }
}

/// Lazily integrated piecewise-linear counter: `base + rate * (now - since)`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub(crate) struct Counter {
    pub base: f64,
    pub since: f64,
    pub rate: f64,
}

impl Counter {
    pub fn at(&self, now: f64) -> f64 {
        if self.rate == 0.0 {
            self.base
        } else {
            self.base + self.rate * (now - self.since)
        }
    }

    /// Folds the accrued amount into `base` and switches to `rate`.
    pub fn set_rate(&mut self, now: f64, rate: f64) {
        self.base = self.at(now);
        self.since = now;
        self.rate = rate;
    }

    pub fn set(&mut self, now: f64, value: f64) {
        self.base = value;
        self.since = now;
    }
}

/// End-of-run accounting against the counter totals `y`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Accounting {
    pub sum_y: f64,
    pub connection: f64,
    pub delay: f64,
    /// `connection <= sum_y / 2`
    pub connection_ok: bool,
    /// `delay <= 2 * sum_y`
    pub delay_ok: bool,
}

impl Accounting {
    pub(crate) fn new(sum_y: f64, connection: f64, delay: f64) -> Self {
        Accounting {
            sum_y,
            connection,
            delay,
            connection_ok: within(connection, sum_y / 2.0, DIAG_SLACK),
            delay_ok: within(delay, 2.0 * sum_y, DIAG_SLACK),
        }
    }

    pub fn ok(&self) -> bool {
        self.connection_ok && self.delay_ok
    }
}

/// Per-vertex comparison of the algorithm's counters with a reference solution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnosis {
    /// Counter total per vertex (`y+ + y-` for the bipartite algorithm).
    pub y: Vec<f64>,
    pub x: Vec<f64>,
    pub x_prime: Vec<f64>,
    /// Vertices where `y_u > factor * (x_u + x'_u)`.
    pub failing_vertices: Vec<usize>,
    pub sum_x_xp: f64,
    /// SOL connection cost measured in the tree metric.
    pub sol_connection: f64,
    pub sol_delay: f64,
    pub height: usize,
}

impl Diagnosis {
    pub(crate) fn build(tree: &RootedTree, y: Vec<f64>, req_vertex: &[usize], arrival: &[f64], sol: &crate::metric::Schedule, factor: f64) -> Self {
        let (x, x_prime, sol_connection, sol_delay) = sol_profile(tree, req_vertex, arrival, sol);
        let failing_vertices = (0..tree.len())
            .filter(|&u| !within(y[u], factor * (x[u] + x_prime[u]), DIAG_SLACK))
            .collect();
        let sum_x_xp = x.iter().sum::<f64>() + x_prime.iter().sum::<f64>();
        Diagnosis { y, x, x_prime, failing_vertices, sum_x_xp, sol_connection, sol_delay, height: tree.height() }
    }

    pub fn per_vertex_ok(&self) -> bool {
        self.failing_vertices.is_empty()
    }

    /// `sum (x_u + x'_u) <= SOL_d + h * SOL_t`
    pub fn aggregate_ok(&self) -> bool {
        within(self.sum_x_xp, self.sol_connection + self.height as f64 * self.sol_delay, DIAG_SLACK)
    }

    /// `beta * SOL_d + beta * h * SOL_t` for the guarantee factor `beta`.
    pub fn guarantee(&self, beta: f64) -> f64 {
        beta * self.sol_connection + beta * self.height as f64 * self.sol_delay
    }
}

/// Slack used by the analysis checks.
pub const DIAG_SLACK: f64 = 1e-6;

/// Per-vertex SOL quantities: `x_u` is the delay SOL pays for requests in
/// `T_u`, `x'_u` is `d_u` times the number of SOL pairs crossing `e_u`.
/// Also returns SOL's connection cost in the tree metric and its delay.
fn sol_profile(
    tree: &RootedTree,
    req_vertex: &[usize],
    arrival: &[f64],
    sol: &crate::metric::Schedule,
) -> (Vec<f64>, Vec<f64>, f64, f64) {
    let n = tree.len();
    let mut x = vec![0.0; n];
    let mut cross = vec![0i64; n];
    let mut sol_d = 0.0;
    let mut sol_t = 0.0;
    for p in &sol.pairs {
        let (a, b) = (req_vertex[p.i], req_vertex[p.j]);
        let wait_a = p.time - arrival[p.i];
        let wait_b = p.time - arrival[p.j];
        x[a] += wait_a;
        x[b] += wait_b;
        sol_t += wait_a + wait_b;
        sol_d += tree.dist(a, b);
        let l = tree.lca(a, b);
        cross[a] += 1;
        cross[b] += 1;
        cross[l] -= 2;
    }
    for &u in tree.order().iter().rev() {
        if let Some(p) = tree.parent(u) {
            x[p] += x[u];
            cross[p] += cross[u];
        }
    }
    let xp = (0..n).map(|u| if u == tree.root() { 0.0 } else { tree.w(u) * cross[u] as f64 }).collect();
    (x, xp, sol_d, sol_t)
}

/// `lhs <= rhs` up to an absolute and relative slack.
pub(crate) fn within(lhs: f64, rhs: f64, slack: f64) -> bool {
    lhs <= rhs + slack * rhs.abs().max(1.0)
}
