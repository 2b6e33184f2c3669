//! Phased adversarial instances on `n` equally spaced points of `[0, 1]`.
//!
//! Point `k` sits at `(k + 1) / n`. Phase 0 puts one request on every point.
//! Phase `i` waits `t_i = a rho^(1 + y_i) / n_i` with `y_i ~ U[0, 1]`, and
//! phase `i + 1` re-requests every `floor(n_i / n_{i+1})`-th point of `S_i`,
//! truncated to `n_{i+1} = 2 floor(n_i / rho^(1 + y_i))` points. The bipartite
//! family alternates polarities within each phase, starting from a per-phase
//! sign chosen to keep the cumulative surplus small.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metric::{FiniteMetric, Instance, Polarity, ProblemKind, Schedule};
use crate::seeds::rng_for;
use crate::EPS;

/// Largest phase count searched exhaustively for signs.
pub const EXHAUSTIVE_PHASES: usize = 16;
/// Candidates drawn by the sampled sign search.
pub const SAMPLED_CANDIDATES: usize = 256;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LbError {
    #[error("n = {n} is too small for the {rule:?} parameters; need an even n >= {min}")]
    TooSmall { n: usize, min: usize, rule: LbRule },
    #[error("n must be even, got {0}")]
    Odd(usize),
    #[error("phase {phase} would have {count} points")]
    EmptyPhase { phase: usize, count: usize },
    #[error("exhaustive sign search over {0} phases exceeds the limit of {EXHAUSTIVE_PHASES}")]
    TooManyPhases(usize),
    #[error("instance does not match the phase structure: {0}")]
    NotPhased(String),
    #[error("adversary cost {cost} exceeds its bound {bound}")]
    BoundViolated { cost: f64, bound: f64 },
}

/// Which parameter schedule `(r, rho, a)` to derive from `n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LbRule {
    /// `r = floor(sqrt(ln n) / 2)`, `rho = e^r`, `a = 1 / r`.
    Mpmd,
    /// `r = floor(ln(n)^(2/3) / 4)`, `rho = e^sqrt(r)`, `a = 1 / sqrt(r)`.
    Mbpmd,
}

impl LbRule {
    /// `(r, rho, a)` for `n` points.
    pub fn params(self, n: usize) -> (usize, f64, f64) {
        let ln = (n as f64).ln();
        match self {
            LbRule::Mpmd => {
                let r = (ln.sqrt() / 2.0).floor() as usize;
                (r, (r as f64).exp(), 1.0 / r as f64)
            }
            LbRule::Mbpmd => {
                let r = (ln.powf(2.0 / 3.0) / 4.0).floor() as usize;
                let sr = (r as f64).sqrt();
                (r, sr.exp(), 1.0 / sr)
            }
        }
    }

    /// `r >= 1` and `rho^(2r) <= n / 4`.
    pub fn accepts(self, n: usize) -> bool {
        let (r, rho, _) = self.params(n);
        n % 2 == 0 && r >= 1 && rho.powi(2 * r as i32) <= n as f64 / 4.0
    }

    /// Smallest even `n` the rule accepts.
    pub fn min_n(self) -> usize {
        (2..).step_by(2).find(|&n| self.accepts(n)).expect("rule accepts large n")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SignMode {
    /// All `2^(r+1)` tuples; needs `r + 1 <= 16`.
    Exhaustive,
    /// Best of a fixed number of uniformly random tuples.
    Sampled,
    /// Exhaustive when feasible, otherwise sampled.
    Auto,
}

/// Everything that determines a phased instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LbParams {
    pub n: usize,
    pub rule: LbRule,
    pub r: usize,
    pub rho: f64,
    pub a: f64,
    pub y: Vec<f64>,
    /// Wait after each phase.
    pub t: Vec<f64>,
    /// Arrival time of each phase.
    pub start: Vec<f64>,
    pub n_seq: Vec<usize>,
    /// Point indices of each phase, ascending.
    pub sets: Vec<Vec<usize>>,
    /// Smallest gap between consecutive points of each phase.
    pub d_seq: Vec<f64>,
    /// Polarity of the leftmost request of each phase (bipartite only).
    pub signs: Option<Vec<Polarity>>,
    /// `∫|csur|` achieved by `signs`.
    pub sign_integral: Option<f64>,
}

/// One step of the phase recursion: `(t_i, n_{i+1})`.
pub fn phase_step(n_i: usize, a: f64, rho: f64, y: f64) -> (f64, usize) {
    let growth = rho.powf(1.0 + y);
    let t = a * growth / n_i as f64;
    (t, 2 * (n_i as f64 / growth).floor() as usize)
}

/// Every `k`-th point (1-based) of `set` with `k = floor(|set| / next)`,
/// truncated to `next` points.
pub fn thin(set: &[usize], next: usize) -> Vec<usize> {
    if next == 0 {
        return Vec::new();
    }
    let k = set.len() / next;
    set.iter().skip(k - 1).step_by(k).take(next).copied().collect()
}

fn min_gap(set: &[usize], n: usize) -> f64 {
    set.windows(2).map(|w| (w[1] - w[0]) as f64 / n as f64).fold(f64::INFINITY, f64::min)
}

fn layout(n: usize, seed: u64, rule: LbRule) -> Result<LbParams, LbError> {
    if n % 2 == 1 {
        return Err(LbError::Odd(n));
    }
    if !rule.accepts(n) {
        return Err(LbError::TooSmall { n, min: rule.min_n(), rule });
    }
    let (r, rho, a) = rule.params(n);
    let mut rng = rng_for(seed, 1);
    let mut y = Vec::with_capacity(r + 1);
    let mut t = Vec::with_capacity(r + 1);
    let mut n_seq = vec![n];
    for i in 0..=r {
        let yi: f64 = rng.gen();
        let (ti, next) = phase_step(n_seq[i], a, rho, yi);
        y.push(yi);
        t.push(ti);
        if i < r {
            if next < 2 {
                return Err(LbError::EmptyPhase { phase: i + 1, count: next });
            }
            n_seq.push(next);
        }
    }
    let mut sets = vec![(0..n).collect::<Vec<usize>>()];
    for i in 1..=r {
        let next = thin(&sets[i - 1], n_seq[i]);
        sets.push(next);
    }
    let d_seq = sets.iter().map(|s| min_gap(s, n)).collect();
    let mut start = vec![0.0];
    for i in 1..=r {
        start.push(start[i - 1] + t[i - 1]);
    }
    Ok(LbParams { n, rule, r, rho, a, y, t, start, n_seq, sets, d_seq, signs: None, sign_integral: None })
}

fn build(params: &LbParams, kind: ProblemKind) -> Instance {
    let metric = FiniteMetric::line(params.n).expect("n >= 2");
    let mut reqs = Vec::with_capacity(params.n_seq.iter().sum());
    for (i, set) in params.sets.iter().enumerate() {
        for (k, &p) in set.iter().enumerate() {
            let b = match kind {
                ProblemKind::Mpmd => None,
                ProblemKind::Mbpmd => {
                    let s = params.signs.as_ref().expect("signs chosen")[i];
                    Some(if k % 2 == 0 { s } else { s.opposite() })
                }
            };
            reqs.push((p, params.start[i], b));
        }
    }
    Instance::new(metric, reqs).expect("phased layout is a valid instance")
}

/// Phased MPMD instance with the MPMD parameter schedule.
pub fn gen_mpmd(n: usize, seed: u64) -> Result<(Instance, LbParams), LbError> {
    gen_mpmd_with_rule(n, seed, LbRule::Mpmd)
}

/// Phased MPMD instance on the layout of `rule`.
pub fn gen_mpmd_with_rule(n: usize, seed: u64, rule: LbRule) -> Result<(Instance, LbParams), LbError> {
    let params = layout(n, seed, rule)?;
    Ok((build(&params, ProblemKind::Mpmd), params))
}

/// Phased MBPMD instance with the MBPMD parameter schedule.
pub fn gen_mbpmd(n: usize, seed: u64, mode: SignMode) -> Result<(Instance, LbParams), LbError> {
    gen_mbpmd_with_rule(n, seed, mode, LbRule::Mbpmd)
}

/// Phased MBPMD instance on the layout of `rule`.
pub fn gen_mbpmd_with_rule(n: usize, seed: u64, mode: SignMode, rule: LbRule) -> Result<(Instance, LbParams), LbError> {
    let mut params = layout(n, seed, rule)?;
    let (signs, integral) = choose_signs(n, &params.sets, mode, seed)?;
    params.signs = Some(signs);
    params.sign_integral = Some(integral);
    Ok((build(&params, ProblemKind::Mbpmd), params))
}

/// Signed count of requests located in `[0, x]`.
pub fn cumulative_surplus(inst: &Instance, x: f64) -> i64 {
    let n = inst.metric().len() as f64;
    inst.requests()
        .iter()
        .filter(|r| (r.point + 1) as f64 / n <= x + EPS)
        .map(|r| r.polarity.map_or(0, Polarity::sign))
        .sum()
}

/// `∫_0^1 |csur(x)| dx`, exact for the piecewise-constant surplus.
pub fn surplus_integral(inst: &Instance) -> f64 {
    let n = inst.metric().len();
    let mut at = vec![0i64; n];
    for r in inst.requests() {
        at[r.point] += r.polarity.map_or(0, Polarity::sign);
    }
    let mut acc = 0i64;
    let mut total = 0i64;
    for &v in at.iter().take(n.saturating_sub(1)) {
        acc += v;
        total += acc.abs();
    }
    total as f64 / n as f64
}

/// Picks per-phase leading signs minimizing `∫|csur|`. Returns the signs
/// and the integral they achieve. Ties go to the first tuple in enumeration
/// order, with bit `i` set meaning phase `i` starts negative.
pub fn choose_signs(n: usize, sets: &[Vec<usize>], mode: SignMode, seed: u64) -> Result<(Vec<Polarity>, f64), LbError> {
    let phases = sets.len();
    let exhaustive = match mode {
        SignMode::Exhaustive if phases > EXHAUSTIVE_PHASES => return Err(LbError::TooManyPhases(phases)),
        SignMode::Exhaustive => true,
        SignMode::Sampled => false,
        SignMode::Auto => phases <= EXHAUSTIVE_PHASES,
    };
    if phases >= 64 {
        return Err(LbError::TooManyPhases(phases));
    }
    // c_i(x) is 1 where an odd number of phase-i points lie left of x; the
    // integral only depends on how many unit gaps share each parity pattern
    let mut odd = vec![0u64; n];
    for (i, set) in sets.iter().enumerate() {
        for &p in set {
            odd[p] ^= 1 << i;
        }
    }
    let mut weight: std::collections::BTreeMap<u64, u64> = std::collections::BTreeMap::new();
    let mut pattern = 0u64;
    for &flip in odd.iter().take(n.saturating_sub(1)) {
        pattern ^= flip;
        *weight.entry(pattern).or_default() += 1;
    }
    let integral = |tuple: u64| -> f64 {
        let mut sum = 0u64;
        for (&mask, &w) in &weight {
            let neg = (mask & tuple).count_ones() as i64;
            let pos = mask.count_ones() as i64 - neg;
            sum += w * (pos - neg).unsigned_abs();
        }
        sum as f64 / n as f64
    };
    let candidates: Vec<u64> = if exhaustive {
        (0..1u64 << phases).collect()
    } else {
        let mut rng = rng_for(seed, 2);
        let mask = (1u64 << phases) - 1;
        (0..SAMPLED_CANDIDATES).map(|_| rng.gen::<u64>() & mask).collect()
    };
    let mut best = (candidates[0], integral(candidates[0]));
    for &c in &candidates[1..] {
        let v = integral(c);
        if v < best.1 {
            best = (c, v);
        }
    }
    let signs = (0..phases).map(|i| if best.0 >> i & 1 == 1 { Polarity::Minus } else { Polarity::Plus }).collect();
    Ok((signs, best.1))
}

fn phase_of(inst: &Instance, params: &LbParams) -> Result<Vec<usize>, LbError> {
    let expect: usize = params.n_seq.iter().sum();
    if inst.len() != expect || inst.metric().len() != params.n {
        return Err(LbError::NotPhased(format!("{} requests on {} points, expected {expect} on {}", inst.len(), inst.metric().len(), params.n)));
    }
    let mut phase = Vec::with_capacity(expect);
    for (i, set) in params.sets.iter().enumerate() {
        let offset = phase.len();
        for (k, &p) in set.iter().enumerate() {
            let r = &inst.requests()[offset + k];
            if r.point != p || (r.arrival - params.start[i]).abs() > EPS {
                return Err(LbError::NotPhased(format!("request {} is not phase {i}'s point {p}", offset + k)));
            }
            phase.push(i);
        }
    }
    Ok(phase)
}

/// The backward same-point pairing: unpaired phase-`i` requests pair with
/// the phase-`(i-1)` request at the same point, then leftover phase-0
/// requests pair up left to right. Errors if the cost exceeds `2ar + 1`.
pub fn adversary_solution_mpmd(inst: &Instance, params: &LbParams) -> Result<Schedule, LbError> {
    phase_of(inst, params)?;
    let offsets: Vec<usize> = params.n_seq.iter().scan(0, |acc, &c| {
        let o = *acc;
        *acc += c;
        Some(o)
    }).collect();
    let mut paired = vec![false; inst.len()];
    let mut pairs = Vec::new();
    for i in (1..=params.r).rev() {
        // position of each point within S_{i-1}
        let below = &params.sets[i - 1];
        for (k, &p) in params.sets[i].iter().enumerate() {
            let id = offsets[i] + k;
            if paired[id] {
                continue;
            }
            let j = below.binary_search(&p).map_err(|_| LbError::NotPhased(format!("point {p} missing from phase {}", i - 1)))?;
            let partner = offsets[i - 1] + j;
            paired[id] = true;
            paired[partner] = true;
            pairs.push((partner, id));
        }
    }
    let left: Vec<usize> = (0..params.n_seq[0]).filter(|&k| !paired[k]).collect();
    for w in left.chunks(2) {
        pairs.push((w[0], w[1]));
    }
    let sol = Schedule::offline(inst, pairs);
    let bound = 2.0 * params.a * params.r as f64 + 1.0;
    if sol.total() > bound + EPS {
        return Err(LbError::BoundViolated { cost: sol.total(), bound });
    }
    Ok(sol)
}

/// Pairs the `k`-th positive with the `k`-th negative request in point
/// order; its connection cost is exactly `∫|csur|`.
pub fn adversary_solution_mbpmd(inst: &Instance, params: &LbParams) -> Result<Schedule, LbError> {
    phase_of(inst, params)?;
    if inst.kind() != ProblemKind::Mbpmd {
        return Err(LbError::NotPhased("instance has no polarities".into()));
    }
    let mut order: Vec<usize> = (0..inst.len()).collect();
    order.sort_by_key(|&k| (inst.requests()[k].point, k));
    let plus: Vec<usize> = order.iter().copied().filter(|&k| inst.requests()[k].polarity == Some(Polarity::Plus)).collect();
    let minus: Vec<usize> = order.iter().copied().filter(|&k| inst.requests()[k].polarity == Some(Polarity::Minus)).collect();
    let sol = Schedule::offline(inst, plus.into_iter().zip(minus));
    let bound = arrival_sum(inst);
    if sol.delay_cost > bound + EPS {
        return Err(LbError::BoundViolated { cost: sol.delay_cost, bound });
    }
    Ok(sol)
}

/// Sum of all arrival times.
pub fn arrival_sum(inst: &Instance) -> f64 {
    inst.requests().iter().map(|r| r.arrival).sum()
}

/// Failed structural checks of a parameter set, empty when all hold: wait
/// times within `[a rho / n_i, a rho^2 / n_i]`, `n_{i+1}` within
/// `[2 floor(n_i / rho^2), 2 floor(n_i / rho)]`, even counts, nested sets of
/// the right size, and `n_i d_i >= 1 - 2r / rho`.
pub fn check_params(p: &LbParams) -> Vec<String> {
    let mut bad = Vec::new();
    let tol = 1e-12;
    for i in 0..=p.r {
        let ni = p.n_seq[i] as f64;
        let (lo, hi) = (p.a * p.rho / ni, p.a * p.rho * p.rho / ni);
        if p.t[i] < lo * (1.0 - tol) || p.t[i] > hi * (1.0 + tol) {
            bad.push(format!("t_{i} = {} outside [{lo}, {hi}]", p.t[i]));
        }
        if i < p.r {
            let next = p.n_seq[i + 1];
            let lo = 2 * (ni / (p.rho * p.rho)).floor() as usize;
            let hi = 2 * (ni / p.rho).floor() as usize;
            if next < lo || next > hi {
                bad.push(format!("n_{} = {next} outside [{lo}, {hi}]", i + 1));
            }
            if !p.sets[i + 1].iter().all(|x| p.sets[i].binary_search(x).is_ok()) {
                bad.push(format!("S_{} is not a subset of S_{i}", i + 1));
            }
        }
        if p.n_seq[i] % 2 == 1 {
            bad.push(format!("n_{i} = {} is odd", p.n_seq[i]));
        }
        if p.sets[i].len() != p.n_seq[i] {
            bad.push(format!("|S_{i}| = {} but n_{i} = {}", p.sets[i].len(), p.n_seq[i]));
        }
        let floor = 1.0 - 2.0 * p.r as f64 / p.rho;
        if ni * p.d_seq[i] < floor - tol {
            bad.push(format!("n_{i} d_{i} = {} below {floor}", ni * p.d_seq[i]));
        }
    }
    bad
}
