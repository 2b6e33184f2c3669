//! Offline solvers: the offline cost of pairing `i` with `j` is
//! `d(p_i, p_j) + |t_i - t_j|`, so the optimum is a min-cost perfect
//! matching on these pair costs.

use thiserror::Error;

use crate::metric::{Instance, Polarity, Schedule};

/// Default request-count cap for the subset dynamic program.
pub const SUBSET_CAP: usize = 22;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OptError {
    #[error("subset DP is capped at {cap} requests, instance has {m}")]
    TooLarge { m: usize, cap: usize },
    #[error("bipartite instance is unbalanced: {plus} positive vs {minus} negative")]
    Unbalanced { plus: usize, minus: usize },
    #[error("assignment solver needs a bipartite instance")]
    NotBipartite,
    #[error("pair ({i}, {j}) is not a pair of distinct requests of the instance")]
    BadPair { i: usize, j: usize },
}

/// Offline cost of pairing requests `i` and `j`.
pub fn pair_cost(inst: &Instance, i: usize, j: usize) -> Result<f64, OptError> {
    let reqs = inst.requests();
    if i == j || i >= reqs.len() || j >= reqs.len() {
        return Err(OptError::BadPair { i, j });
    }
    let (a, b) = (&reqs[i], &reqs[j]);
    Ok(inst.metric().dist(a.point, b.point) + (a.arrival - b.arrival).abs())
}

/// All pairwise offline costs of an instance.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    m: usize,
    cost: Vec<f64>,
}

impl CostMatrix {
    pub fn new(inst: &Instance) -> Self {
        let reqs = inst.requests();
        let m = reqs.len();
        let metric = inst.metric();
        let mut cost = vec![0.0; m * m];
        for i in 0..m {
            for j in (i + 1)..m {
                let c = metric.dist(reqs[i].point, reqs[j].point) + (reqs[i].arrival - reqs[j].arrival).abs();
                cost[i * m + j] = c;
                cost[j * m + i] = c;
            }
        }
        CostMatrix { m, cost }
    }

    pub fn len(&self) -> usize {
        self.m
    }

    pub fn is_empty(&self) -> bool {
        self.m == 0
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.cost[i * self.m + j]
    }
}

fn check_balance(inst: &Instance) -> Result<(), OptError> {
    if inst.is_bipartite() {
        let plus = inst.requests().iter().filter(|r| r.polarity == Some(Polarity::Plus)).count();
        let minus = inst.len() - plus;
        if plus != minus {
            return Err(OptError::Unbalanced { plus, minus });
        }
    }
    Ok(())
}

/// Exact optimum with the default cap of [`SUBSET_CAP`] requests.
pub fn exact_opt_subsets(inst: &Instance) -> Result<Schedule, OptError> {
    exact_opt_subsets_capped(inst, SUBSET_CAP)
}

/// Exact optimum by dynamic programming over subsets of requests: the
/// cheapest perfect matching of a set pairs its lowest request with some
/// partner and matches the rest optimally. Bipartite instances only allow
/// opposite-polarity partners.
pub fn exact_opt_subsets_capped(inst: &Instance, cap: usize) -> Result<Schedule, OptError> {
    let m = inst.len();
    if m > cap || m >= usize::BITS as usize {
        return Err(OptError::TooLarge { m, cap });
    }
    check_balance(inst)?;
    let cm = CostMatrix::new(inst);
    let reqs = inst.requests();
    let allowed = |i: usize, j: usize| !inst.is_bipartite() || reqs[i].polarity != reqs[j].polarity;

    let full = (1usize << m) - 1;
    let mut best = vec![f64::INFINITY; full + 1];
    let mut choice = vec![u8::MAX; full + 1];
    best[0] = 0.0;
    for set in 1..=full {
        if set.count_ones() % 2 != 0 {
            continue;
        }
        let low = set.trailing_zeros() as usize;
        let rest = set & !(1 << low);
        let mut bits = rest;
        while bits != 0 {
            let j = bits.trailing_zeros() as usize;
            bits &= bits - 1;
            if !allowed(low, j) {
                continue;
            }
            let sub = best[rest & !(1 << j)];
            let c = cm.get(low, j) + sub;
            if c < best[set] {
                best[set] = c;
                choice[set] = j as u8;
            }
        }
    }
    let mut pairs = Vec::with_capacity(m / 2);
    let mut set = full;
    while set != 0 {
        let low = set.trailing_zeros() as usize;
        let j = choice[set] as usize;
        debug_assert!(j < m, "every balanced set has a feasible matching");
        pairs.push((low, j));
        set &= !(1 << low) & !(1 << j);
    }
    Ok(Schedule::offline(inst, pairs))
}

/// Min-cost assignment on a square cost matrix (Hungarian method with
/// potentials, `O(k^3)`). Returns `row -> column`.
pub fn min_cost_assignment(cost: &[Vec<f64>]) -> Vec<usize> {
    let k = cost.len();
    if k == 0 {
        return Vec::new();
    }
    // 1-based arrays; column 0 is the virtual start
    let mut u = vec![0.0f64; k + 1];
    let mut v = vec![0.0f64; k + 1];
    let mut owner = vec![0usize; k + 1];
    let mut way = vec![0usize; k + 1];
    for row in 1..=k {
        owner[0] = row;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; k + 1];
        let mut used = vec![false; k + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=k {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=k {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0usize; k];
    for j in 1..=k {
        assignment[owner[j] - 1] = j - 1;
    }
    assignment
}

/// Exact optimum of a balanced bipartite instance as an assignment between
/// its positive and negative requests.
pub fn bipartite_opt_assignment(inst: &Instance) -> Result<Schedule, OptError> {
    if !inst.is_bipartite() {
        if inst.is_empty() {
            return Ok(Schedule::offline(inst, []));
        }
        return Err(OptError::NotBipartite);
    }
    check_balance(inst)?;
    let reqs = inst.requests();
    let plus: Vec<usize> = reqs.iter().filter(|r| r.polarity == Some(Polarity::Plus)).map(|r| r.id).collect();
    let minus: Vec<usize> = reqs.iter().filter(|r| r.polarity == Some(Polarity::Minus)).map(|r| r.id).collect();
    let cm = CostMatrix::new(inst);
    let cost: Vec<Vec<f64>> = plus.iter().map(|&i| minus.iter().map(|&j| cm.get(i, j)).collect()).collect();
    let assignment = min_cost_assignment(&cost);
    let pairs = plus.iter().zip(&assignment).map(|(&i, &col)| (i, minus[col]));
    Ok(Schedule::offline(inst, pairs))
}

/// Feasible matching by repeatedly taking the cheapest available pair
/// (ties broken by request ids). An upper bound on the optimum.
pub fn greedy_heuristic(inst: &Instance) -> Result<Schedule, OptError> {
    check_balance(inst)?;
    let m = inst.len();
    let reqs = inst.requests();
    let cm = CostMatrix::new(inst);
    let mut candidates: Vec<(f64, usize, usize)> = Vec::with_capacity(m * m.saturating_sub(1) / 2);
    for i in 0..m {
        for j in (i + 1)..m {
            if !inst.is_bipartite() || reqs[i].polarity != reqs[j].polarity {
                candidates.push((cm.get(i, j), i, j));
            }
        }
    }
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut used = vec![false; m];
    let mut pairs = Vec::with_capacity(m / 2);
    for (_, i, j) in candidates {
        if !used[i] && !used[j] {
            used[i] = true;
            used[j] = true;
            pairs.push((i, j));
        }
    }
    Ok(Schedule::offline(inst, pairs))
}
