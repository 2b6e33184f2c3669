//! Experiment driver: instance families, tree sampling, online run, offline
//! baseline, invariant checks and reports.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::embed::{sample_embedding, EmbedMode};
use crate::lowerbound_gen::{self as lb, LbError, LbRule, SignMode};
use crate::metric::{self as io, FiniteMetric, Instance, Polarity, ProblemKind, RootedTree, Schedule};
use crate::offline_opt::{self as opt, OptError, SUBSET_CAP};
use crate::online_mbpmd::run_b_with;
use crate::online_mpmd::{run_with, Accounting, CheckLevel, Diagnosis, OnlineError, RunOptions, TraceEvent, Violation};
use crate::seeds::{child_seed, rng_for};
use crate::sim::{within, DIAG_SLACK};

/// Largest request count handed to the assignment solver by `Solver::Auto`.
pub const ASSIGNMENT_CAP: usize = 1024;

/// Guarantee factor of the tree algorithm: 5 for MPMD, 10 for MBPMD.
pub fn guarantee_factor(alg: Algorithm) -> f64 {
    match alg {
        Algorithm::MpmdTree => 5.0,
        Algorithm::MbpmdTree => 10.0,
    }
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("subset solver cap exceeded: m = {m} > {cap}")]
    SolverCap { m: usize, cap: usize },
    #[error("infeasible family parameters: {0}")]
    Infeasible(String),
    #[error("no trials")]
    NoTrials,
    #[error("trial {trial}: {source}")]
    Online { trial: usize, source: OnlineError },
    #[error(transparent)]
    Lb(#[from] LbError),
    #[error(transparent)]
    Opt(#[from] OptError),
    #[error("{path}: {msg}")]
    Io { path: String, msg: String },
}

fn io_err(path: &Path, e: impl fmt::Display) -> HarnessError {
    HarnessError::Io { path: path.display().to_string(), msg: e.to_string() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    LineLb,
    RandomEuclidean,
    RandomTree,
    File,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    MpmdTree,
    MbpmdTree,
}

impl Algorithm {
    pub fn kind(self) -> ProblemKind {
        match self {
            Algorithm::MpmdTree => ProblemKind::Mpmd,
            Algorithm::MbpmdTree => ProblemKind::Mbpmd,
        }
    }
}

/// Which tree the online algorithm runs on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Embedding {
    /// The family's own tree (path for the line, the generated tree, or a tree file).
    #[serde(rename = "native")]
    Native,
    #[serde(rename = "frt-only")]
    FrtOnly,
    #[serde(rename = "frt+reduce")]
    FrtReduce,
}

impl Embedding {
    fn mode(self) -> Option<EmbedMode> {
        match self {
            Embedding::Native => None,
            Embedding::FrtOnly => Some(EmbedMode::FrtOnly),
            Embedding::FrtReduce => Some(EmbedMode::FrtReduce),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Solver {
    /// Subset DP for `m <= 22`, assignment for bipartite instances up to
    /// [`ASSIGNMENT_CAP`], the adversary pairing for lower-bound instances,
    /// greedy otherwise.
    Auto,
    Subsets,
    Assignment,
    Adversary,
    Greedy,
}

/// What the denominator of a ratio is.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolKind {
    ExactOpt,
    /// A feasible solution, so the ratio is a lower bound on the true ratio.
    AdversaryUpperBound,
    /// Greedy pairing; the ratio is a lower bound on the true ratio.
    HeuristicUpperBound,
}

fn default_trials() -> usize {
    1
}
fn default_m() -> usize {
    12
}
fn default_n() -> usize {
    16
}
fn default_embedding() -> Embedding {
    Embedding::Native
}
fn default_solver() -> Solver {
    Solver::Auto
}
fn default_sign_mode() -> SignMode {
    SignMode::Auto
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub family: Family,
    pub algorithm: Algorithm,
    #[serde(default = "default_embedding")]
    pub embedding: Embedding,
    /// Point count (line-lb, random-euclidean) or maximum leaf count (random-tree).
    #[serde(default = "default_n")]
    pub n: usize,
    /// Maximum request count for random families; each trial draws an even
    /// count uniformly from `[2, m]`.
    #[serde(default = "default_m")]
    pub m: usize,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_solver")]
    pub solver: Solver,
    #[serde(default)]
    pub checks: CheckLevel,
    /// Parameter rule for line-lb; defaults to the algorithm's own rule.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lb_rule: Option<LbRule>,
    #[serde(default = "default_sign_mode")]
    pub sign_mode: SignMode,
    /// Instance file for the `file` family.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instance: Option<PathBuf>,
    /// Optional tree file for the `file` family (native embedding).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tree: Option<PathBuf>,
    /// Report destination; not part of the config hash.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn new(family: Family, algorithm: Algorithm) -> Self {
        ExperimentConfig {
            family,
            algorithm,
            embedding: default_embedding(),
            n: default_n(),
            m: default_m(),
            trials: default_trials(),
            seed: 0,
            solver: default_solver(),
            checks: CheckLevel::Final,
            lb_rule: None,
            sign_mode: default_sign_mode(),
            instance: None,
            tree: None,
            output: None,
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.trials == 0 {
            return Err(HarnessError::Config("trial count must be at least 1".into()));
        }
        if self.solver == Solver::Subsets && self.family != Family::File && self.family != Family::LineLb && self.m > SUBSET_CAP {
            return Err(HarnessError::SolverCap { m: self.m, cap: SUBSET_CAP });
        }
        if self.solver == Solver::Assignment && self.algorithm != Algorithm::MbpmdTree {
            return Err(HarnessError::Config("the assignment solver needs bipartite instances".into()));
        }
        if self.solver == Solver::Adversary && self.family != Family::LineLb {
            return Err(HarnessError::Config("the adversary solver exists only for line-lb".into()));
        }
        match self.family {
            Family::RandomEuclidean | Family::RandomTree => {
                if self.m < 2 {
                    return Err(HarnessError::Infeasible(format!("m = {} leaves no even request count >= 2", self.m)));
                }
                if self.n == 0 {
                    return Err(HarnessError::Infeasible("n must be positive".into()));
                }
                if self.family == Family::RandomEuclidean && self.embedding == Embedding::Native {
                    return Err(HarnessError::Config("random-euclidean has no native tree; pick frt-only or frt+reduce".into()));
                }
            }
            Family::File => {
                if self.instance.is_none() {
                    return Err(HarnessError::Config("the file family needs an instance path".into()));
                }
                if self.embedding == Embedding::Native && self.tree.is_none() {
                    return Err(HarnessError::Config("native embedding on the file family needs a tree path".into()));
                }
            }
            Family::LineLb => {
                let rule = self.rule();
                if !rule.accepts(self.n) {
                    return Err(LbError::TooSmall { n: self.n, min: rule.min_n(), rule }.into());
                }
            }
        }
        Ok(())
    }

    fn rule(&self) -> LbRule {
        self.lb_rule.unwrap_or(match self.algorithm {
            Algorithm::MpmdTree => LbRule::Mpmd,
            Algorithm::MbpmdTree => LbRule::Mbpmd,
        })
    }

    /// sha256 of the canonical JSON form with the output path cleared.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output = None;
        let bytes = serde_json::to_vec(&c).expect("config serializes");
        hex::encode(Sha256::digest(bytes))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialChecks {
    /// No live invariant failed (only asserted with `checks = full`).
    pub live: bool,
    pub quiescent_checks: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub violations: Vec<Violation>,
    pub connection_vs_y: bool,
    pub delay_vs_y: bool,
    pub per_vertex: bool,
    pub aggregate: bool,
    /// `ALG <= beta SOL_d + beta h SOL_t`, both sides in the tree metric.
    pub guarantee: bool,
    /// Original-metric connection is at most the tree-metric connection.
    pub recharge: bool,
}

impl TrialChecks {
    pub fn all(&self) -> bool {
        self.live
            && self.connection_vs_y
            && self.delay_vs_y
            && self.per_vertex
            && self.aggregate
            && self.guarantee
            && self.recharge
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialReport {
    pub index: usize,
    pub seed: u64,
    pub m: usize,
    /// Height of the tree the algorithm ran on.
    pub height: usize,
    /// `connection + delay`, connection charged in the original metric.
    pub alg_cost: f64,
    pub connection: f64,
    pub delay: f64,
    pub tree_connection: f64,
    pub sol_cost: f64,
    pub sol_connection: f64,
    pub sol_delay: f64,
    pub sol_kind: SolKind,
    /// `None` when SOL costs nothing.
    pub ratio: Option<f64>,
    pub degenerate: bool,
    pub sum_y: f64,
    pub guarantee_bound: f64,
    pub checks: TrialChecks,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub trials: usize,
    pub failed: usize,
    pub degenerate: usize,
    pub ratio_mean: Option<f64>,
    pub ratio_max: Option<f64>,
    pub ratio_stddev: Option<f64>,
    pub alg_mean: f64,
    pub sol_mean: f64,
}

impl Aggregate {
    pub fn of(trials: &[TrialReport]) -> Self {
        let ratios: Vec<f64> = trials.iter().filter_map(|t| t.ratio).collect();
        let k = ratios.len() as f64;
        let (mean, max, sd) = if ratios.is_empty() {
            (None, None, None)
        } else {
            let mean = ratios.iter().sum::<f64>() / k;
            let var = ratios.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / k;
            (Some(mean), Some(ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max)), Some(var.sqrt()))
        };
        let count = trials.len().max(1) as f64;
        Aggregate {
            trials: trials.len(),
            failed: trials.iter().filter(|t| !t.passed).count(),
            degenerate: trials.iter().filter(|t| t.degenerate).count(),
            ratio_mean: mean,
            ratio_max: max,
            ratio_stddev: sd,
            alg_mean: trials.iter().map(|t| t.alg_cost).sum::<f64>() / count,
            sol_mean: trials.iter().map(|t| t.sol_cost).sum::<f64>() / count,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
    pub trial_seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub config: ExperimentConfig,
    pub provenance: Provenance,
    pub trials: Vec<TrialReport>,
    pub aggregate: Aggregate,
    pub passed: bool,
}

impl Report {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// An instance together with the tree that represents its metric exactly
/// (if the family has one) and an adversary solution (lower-bound family).
struct Built {
    inst: Instance,
    native: Option<RootedTree>,
    adversary: Option<Schedule>,
}

/// Random rooted tree with at most `max_leaves` point-carrying leaves,
/// height at most `max_height` and edge weights uniform in `[0.1, 10]`.
/// Every new vertex hangs off a uniformly chosen vertex that still has room
/// below it. Points sit exactly on the leaves, in vertex order.
pub fn random_tree(rng: &mut impl Rng, max_leaves: usize, max_height: usize) -> RootedTree {
    let max_leaves = max_leaves.max(1);
    let max_height = max_height.max(2);
    let size = rng.gen_range(2..=max_leaves + 1);
    let mut parent = vec![0usize];
    let mut depth = vec![1usize];
    let mut kids = vec![0usize];
    for v in 1..size {
        let leaves = (1..v).filter(|&u| kids[u] == 0).count();
        // attaching under a leaf keeps the count, under an inner vertex adds one
        let open: Vec<usize> = (0..v)
            .filter(|&u| depth[u] < max_height && (leaves < max_leaves || (kids[u] == 0 && u != 0)))
            .collect();
        let Some(&p) = open.choose(rng) else { break };
        parent.push(p);
        depth.push(depth[p] + 1);
        kids.push(0);
        kids[p] += 1;
    }
    let n = parent.len();
    let weight = (0..n).map(|u| if u == 0 { None } else { Some(rng.gen_range(0.1..=10.0)) }).collect();
    let leaves = (1..n).filter(|&u| kids[u] == 0).collect();
    RootedTree::new(parent, weight, leaves).expect("generated tree is valid")
}

/// `n` points uniform in the unit square, from seed `seed`.
pub fn unit_square_points(n: usize, seed: u64) -> Vec<(f64, f64)> {
    let mut rng = rng_for(seed, 2);
    (0..n).map(|_| (rng.gen::<f64>(), rng.gen::<f64>())).collect()
}

/// Even request count uniform in `[2, m_max]`, points uniform, arrivals
/// uniform in `[0, 10]`, and for `Mbpmd` a shuffled balanced polarity list.
pub fn random_requests(rng: &mut impl Rng, points: usize, m_max: usize, kind: ProblemKind) -> Vec<(usize, f64, Option<Polarity>)> {
    let m = 2 * rng.gen_range(1..=(m_max / 2).max(1));
    let mut pol: Vec<Option<Polarity>> = match kind {
        ProblemKind::Mpmd => vec![None; m],
        ProblemKind::Mbpmd => (0..m).map(|k| Some(if k < m / 2 { Polarity::Plus } else { Polarity::Minus })).collect(),
    };
    pol.shuffle(rng);
    pol.into_iter().map(|b| (rng.gen_range(0..points), rng.gen_range(0.0..=10.0), b)).collect()
}

fn build(cfg: &ExperimentConfig, seed: u64) -> Result<Built, HarnessError> {
    let kind = cfg.algorithm.kind();
    let mut rng = rng_for(seed, 0);
    let infeasible = |e: &dyn fmt::Display| HarnessError::Infeasible(e.to_string());
    match cfg.family {
        Family::LineLb => {
            let (inst, adversary) = match cfg.algorithm {
                Algorithm::MpmdTree => {
                    let (inst, p) = lb::gen_mpmd_with_rule(cfg.n, seed, cfg.rule())?;
                    let sol = lb::adversary_solution_mpmd(&inst, &p)?;
                    (inst, sol)
                }
                Algorithm::MbpmdTree => {
                    let (inst, p) = lb::gen_mbpmd_with_rule(cfg.n, seed, cfg.sign_mode, cfg.rule())?;
                    let sol = lb::adversary_solution_mbpmd(&inst, &p)?;
                    (inst, sol)
                }
            };
            let native = RootedTree::path(cfg.n).map_err(|e| infeasible(&e))?;
            Ok(Built { inst, native: Some(native), adversary: Some(adversary) })
        }
        Family::RandomEuclidean => {
            let pts = unit_square_points(cfg.n, seed);
            let metric = FiniteMetric::euclidean(&pts).map_err(|e| infeasible(&e))?;
            let reqs = random_requests(&mut rng, cfg.n, cfg.m, kind);
            let inst = Instance::from_unsorted(metric, reqs).map_err(|e| infeasible(&e))?;
            Ok(Built { inst, native: None, adversary: None })
        }
        Family::RandomTree => {
            let tree = random_tree(&mut rng, cfg.n, 5);
            let metric = tree.leaf_metric().map_err(|e| infeasible(&e))?;
            let reqs = random_requests(&mut rng, metric.len(), cfg.m, kind);
            let inst = Instance::from_unsorted(metric, reqs).map_err(|e| infeasible(&e))?;
            Ok(Built { inst, native: Some(tree), adversary: None })
        }
        Family::File => {
            let path = cfg.instance.as_deref().ok_or_else(|| HarnessError::Config("missing instance path".into()))?;
            let (inst, _) = io::load_instance(path).map_err(|e| io_err(path, e))?;
            let native = match cfg.tree.as_deref() {
                Some(tp) => Some(io::load_tree(tp).map_err(|e| io_err(tp, e))?),
                None => None,
            };
            Ok(Built { inst, native, adversary: None })
        }
    }
}

fn solve(cfg: &ExperimentConfig, b: &Built) -> Result<(Schedule, SolKind), HarnessError> {
    let m = b.inst.len();
    let bip = b.inst.is_bipartite();
    match cfg.solver {
        Solver::Subsets => {
            if m > SUBSET_CAP {
                return Err(HarnessError::SolverCap { m, cap: SUBSET_CAP });
            }
            Ok((opt::exact_opt_subsets(&b.inst)?, SolKind::ExactOpt))
        }
        Solver::Assignment => Ok((opt::bipartite_opt_assignment(&b.inst)?, SolKind::ExactOpt)),
        Solver::Greedy => Ok((opt::greedy_heuristic(&b.inst)?, SolKind::HeuristicUpperBound)),
        Solver::Adversary => b
            .adversary
            .clone()
            .map(|s| (s, SolKind::AdversaryUpperBound))
            .ok_or_else(|| HarnessError::Config("no adversary solution for this family".into())),
        Solver::Auto => {
            if m <= SUBSET_CAP && !bip {
                Ok((opt::exact_opt_subsets(&b.inst)?, SolKind::ExactOpt))
            } else if bip && m <= ASSIGNMENT_CAP {
                Ok((opt::bipartite_opt_assignment(&b.inst)?, SolKind::ExactOpt))
            } else if let Some(s) = &b.adversary {
                Ok((s.clone(), SolKind::AdversaryUpperBound))
            } else {
                Ok((opt::greedy_heuristic(&b.inst)?, SolKind::HeuristicUpperBound))
            }
        }
    }
}

struct AlgOutcome {
    schedule: Schedule,
    accounting: Accounting,
    violations: Vec<Violation>,
    quiescent_checks: usize,
    diagnosis: Diagnosis,
}

fn run_alg(cfg: &ExperimentConfig, inst: &Instance, tree: &RootedTree, sol: &Schedule, trial: usize) -> Result<AlgOutcome, HarnessError> {
    let opts = RunOptions { checks: cfg.checks, trace: false };
    let wrap = |source| HarnessError::Online { trial, source };
    match cfg.algorithm {
        Algorithm::MpmdTree => {
            let r = run_with(inst, tree, opts).map_err(wrap)?;
            let diagnosis = r.state.diagnose(inst, sol).map_err(wrap)?;
            Ok(AlgOutcome {
                violations: r.violations().to_vec(),
                quiescent_checks: r.state.quiescent_checks(),
                schedule: r.schedule,
                accounting: r.accounting,
                diagnosis,
            })
        }
        Algorithm::MbpmdTree => {
            let r = run_b_with(inst, tree, opts).map_err(wrap)?;
            let diagnosis = r.state.diagnose(inst, sol).map_err(wrap)?;
            Ok(AlgOutcome {
                violations: r.violations().to_vec(),
                quiescent_checks: r.state.quiescent_checks(),
                schedule: r.schedule,
                accounting: r.accounting,
                diagnosis,
            })
        }
    }
}

/// The instance of trial `index` and the family's own tree, if it has one.
pub fn trial_instance(cfg: &ExperimentConfig, index: usize) -> Result<(Instance, Option<RootedTree>), HarnessError> {
    cfg.validate()?;
    let b = build(cfg, child_seed(cfg.seed, index as u64))?;
    Ok((b.inst, b.native))
}

/// Instance and tree of trial `index`.
fn setup(cfg: &ExperimentConfig, index: usize) -> Result<(u64, Built, RootedTree), HarnessError> {
    let seed = child_seed(cfg.seed, index as u64);
    let built = build(cfg, seed)?;
    if built.inst.kind() != cfg.algorithm.kind() && !built.inst.is_empty() {
        return Err(HarnessError::Config(format!("{:?} instance given to {:?}", built.inst.kind(), cfg.algorithm)));
    }
    let tree = match cfg.embedding.mode() {
        None => built
            .native
            .clone()
            .ok_or_else(|| HarnessError::Config("family has no native tree".into()))?,
        Some(mode) => sample_embedding(built.inst.metric(), child_seed(seed, 1), mode).tree,
    };
    Ok((seed, built, tree))
}

/// Event trace of trial `index`, for JSONL output.
pub fn trace_trial(cfg: &ExperimentConfig, index: usize) -> Result<Vec<TraceEvent>, HarnessError> {
    cfg.validate()?;
    let (_, built, tree) = setup(cfg, index)?;
    let opts = RunOptions { checks: cfg.checks, trace: true };
    let wrap = |source| HarnessError::Online { trial: index, source };
    Ok(match cfg.algorithm {
        Algorithm::MpmdTree => run_with(&built.inst, &tree, opts).map_err(wrap)?.state.trace().to_vec(),
        Algorithm::MbpmdTree => run_b_with(&built.inst, &tree, opts).map_err(wrap)?.state.trace().to_vec(),
    })
}

/// Runs trial `index` of `cfg`.
pub fn run_trial(cfg: &ExperimentConfig, index: usize) -> Result<TrialReport, HarnessError> {
    let (seed, built, tree) = setup(cfg, index)?;
    let (sol, sol_kind) = solve(cfg, &built)?;
    let out = run_alg(cfg, &built.inst, &tree, &sol, index)?;
    let metric = built.inst.metric();
    let orig = out.schedule.recharged(&built.inst, |p, q| metric.dist(p, q));
    let tree_total = out.schedule.total();
    let d = &out.diagnosis;
    let beta = guarantee_factor(cfg.algorithm);
    let guarantee_bound = d.guarantee(beta);
    let checks = TrialChecks {
        live: out.violations.is_empty(),
        quiescent_checks: out.quiescent_checks,
        violations: out.violations,
        connection_vs_y: out.accounting.connection_ok,
        delay_vs_y: out.accounting.delay_ok,
        per_vertex: d.per_vertex_ok(),
        aggregate: d.aggregate_ok(),
        guarantee: within(tree_total, guarantee_bound, DIAG_SLACK),
        recharge: within(orig.connection_cost, out.schedule.connection_cost, DIAG_SLACK),
    };
    let alg_cost = orig.total();
    let sol_cost = sol.total();
    let degenerate = sol_cost <= 0.0;
    Ok(TrialReport {
        index,
        seed,
        m: built.inst.len(),
        height: d.height,
        alg_cost,
        connection: orig.connection_cost,
        delay: orig.delay_cost,
        tree_connection: out.schedule.connection_cost,
        sol_cost,
        sol_connection: sol.connection_cost,
        sol_delay: sol.delay_cost,
        sol_kind,
        ratio: if degenerate { None } else { Some(alg_cost / sol_cost) },
        degenerate,
        sum_y: out.accounting.sum_y,
        guarantee_bound,
        passed: checks.all(),
        checks,
    })
}

/// Runs every trial (in parallel) and assembles the report in trial order.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Report, HarnessError> {
    cfg.validate()?;
    let trials = (0..cfg.trials)
        .into_par_iter()
        .map(|k| run_trial(cfg, k))
        .collect::<Result<Vec<_>, _>>()?;
    let aggregate = Aggregate::of(&trials);
    Ok(Report {
        provenance: Provenance {
            config_hash: cfg.hash(),
            seed: cfg.seed,
            trial_seeds: trials.iter().map(|t| t.seed).collect(),
        },
        passed: aggregate.failed == 0,
        aggregate,
        trials,
        config: cfg.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Json,
    Csv,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            _ => Err(format!("unknown format {s:?} (expected json or csv)")),
        }
    }
}

const CSV_HEADER: [&str; 13] = [
    "trial", "seed", "m", "height", "alg_cost", "connection", "delay", "tree_connection", "sol_cost", "sol_kind", "ratio", "degenerate", "passed",
];

fn opt_str(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

/// Renders the report; CSV has one row per trial then `mean`, `max` and
/// `stddev` footer rows that fill only the cost and ratio columns.
pub fn render_report(r: &Report, format: ReportFormat) -> Result<String, HarnessError> {
    if r.trials.is_empty() {
        return Err(HarnessError::NoTrials);
    }
    match format {
        ReportFormat::Json => Ok(r.to_json() + "\n"),
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            let csv_err = |e: csv::Error| HarnessError::Io { path: "<csv>".into(), msg: e.to_string() };
            w.write_record(CSV_HEADER).map_err(csv_err)?;
            for t in &r.trials {
                let kind = serde_json::to_value(t.sol_kind).expect("enum serializes");
                w.write_record([
                    t.index.to_string(),
                    t.seed.to_string(),
                    t.m.to_string(),
                    t.height.to_string(),
                    t.alg_cost.to_string(),
                    t.connection.to_string(),
                    t.delay.to_string(),
                    t.tree_connection.to_string(),
                    t.sol_cost.to_string(),
                    kind.as_str().unwrap_or_default().to_string(),
                    opt_str(t.ratio),
                    t.degenerate.to_string(),
                    t.passed.to_string(),
                ])
                .map_err(csv_err)?;
            }
            let a = &r.aggregate;
            let footer = |label: &str, alg: String, sol: String, ratio: String| {
                let mut row = vec![String::new(); CSV_HEADER.len()];
                row[0] = label.to_string();
                row[4] = alg;
                row[8] = sol;
                row[10] = ratio;
                row
            };
            w.write_record(footer("mean", a.alg_mean.to_string(), a.sol_mean.to_string(), opt_str(a.ratio_mean))).map_err(csv_err)?;
            w.write_record(footer("max", String::new(), String::new(), opt_str(a.ratio_max))).map_err(csv_err)?;
            w.write_record(footer("stddev", String::new(), String::new(), opt_str(a.ratio_stddev))).map_err(csv_err)?;
            let bytes = w.into_inner().map_err(|e| HarnessError::Io { path: "<csv>".into(), msg: e.to_string() })?;
            Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
        }
    }
}

pub fn emit_report(r: &Report, format: ReportFormat, path: &Path) -> Result<(), HarnessError> {
    let text = render_report(r, format)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    fs::write(path, text).map_err(|e| io_err(path, e))
}

/// Lower-bound family for [`ratio_trend`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LbFamily {
    Mpmd,
    Mbpmd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendRow {
    pub n: usize,
    pub r: usize,
    pub a: f64,
    /// `2ar + 1`.
    pub bound: f64,
    pub seeds: usize,
    pub mean_alg: f64,
    /// Mean cost of the adversary's own solution.
    pub mean_adversary: f64,
    /// Mean of `alg / 2ar+1` (MPMD) or `alg / adversary cost` (MBPMD).
    pub mean_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trend {
    pub family: LbFamily,
    pub rows: Vec<TrendRow>,
    /// Mean ratio column is nondecreasing over the rows.
    pub nondecreasing: bool,
}

/// Runs the tree algorithm natively on the path for every `n` and seed
/// `child_seed(base_seed, s)`, `s < seeds`.
pub fn ratio_trend(family: LbFamily, n_list: &[usize], seeds: usize, base_seed: u64) -> Result<Trend, HarnessError> {
    if seeds == 0 {
        return Err(HarnessError::NoTrials);
    }
    let mut rows = Vec::with_capacity(n_list.len());
    for &n in n_list {
        let tree = RootedTree::path(n).map_err(|e| HarnessError::Infeasible(e.to_string()))?;
        let per_seed = (0..seeds)
            .into_par_iter()
            .map(|s| -> Result<(f64, f64, lb::LbParams), HarnessError> {
                let seed = child_seed(base_seed, s as u64);
                let wrap = |source| HarnessError::Online { trial: s, source };
                match family {
                    LbFamily::Mpmd => {
                        let (inst, p) = lb::gen_mpmd(n, seed)?;
                        let adv = lb::adversary_solution_mpmd(&inst, &p)?;
                        let r = run_with(&inst, &tree, RunOptions::default()).map_err(wrap)?;
                        Ok((r.schedule.total(), adv.total(), p))
                    }
                    LbFamily::Mbpmd => {
                        let (inst, p) = lb::gen_mbpmd(n, seed, SignMode::Auto)?;
                        let adv = lb::adversary_solution_mbpmd(&inst, &p)?;
                        let r = run_b_with(&inst, &tree, RunOptions::default()).map_err(wrap)?;
                        Ok((r.schedule.total(), adv.total(), p))
                    }
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        let p = &per_seed[0].2;
        let bound = 2.0 * p.a * p.r as f64 + 1.0;
        let k = seeds as f64;
        let mean_alg = per_seed.iter().map(|x| x.0).sum::<f64>() / k;
        let mean_adversary = per_seed.iter().map(|x| x.1).sum::<f64>() / k;
        let mean_ratio = per_seed
            .iter()
            .map(|x| match family {
                LbFamily::Mpmd => x.0 / bound,
                LbFamily::Mbpmd => x.0 / x.1,
            })
            .sum::<f64>()
            / k;
        rows.push(TrendRow { n, r: p.r, a: p.a, bound, seeds, mean_alg, mean_adversary, mean_ratio });
    }
    let nondecreasing = rows.windows(2).all(|w| w[1].mean_ratio >= w[0].mean_ratio);
    Ok(Trend { family, rows, nondecreasing })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tree_cfg(alg: Algorithm, trials: usize) -> ExperimentConfig {
        let mut c = ExperimentConfig::new(Family::RandomTree, alg);
        c.trials = trials;
        c.seed = 7;
        c.checks = CheckLevel::Full;
        c
    }

    #[test]
    fn random_tree_shape() {
        let mut rng = rng_for(3, 0);
        for _ in 0..300 {
            let t = random_tree(&mut rng, 16, 5);
            assert!(t.height() <= 5);
            assert!(t.num_points() >= 1 && t.num_points() <= 16);
            assert!(t.points_on_leaves());
            for u in 0..t.len() {
                if let Some(w) = t.edge_weight(u) {
                    assert!((0.1..=10.0).contains(&w));
                }
            }
        }
    }

    #[test]
    fn random_requests_balanced() {
        let mut rng = rng_for(4, 0);
        for _ in 0..100 {
            let r = random_requests(&mut rng, 5, 12, ProblemKind::Mbpmd);
            assert!(r.len() % 2 == 0 && r.len() >= 2 && r.len() <= 12);
            let plus = r.iter().filter(|x| x.2 == Some(Polarity::Plus)).count();
            assert_eq!(2 * plus, r.len());
        }
    }

    #[test]
    fn small_experiments_pass() {
        for alg in [Algorithm::MpmdTree, Algorithm::MbpmdTree] {
            let rep = run_experiment(&tree_cfg(alg, 40)).unwrap();
            assert!(rep.passed, "{:?}", rep.trials.iter().find(|t| !t.passed));
            assert_eq!(rep.trials.len(), 40);
            assert!(rep.trials.iter().all(|t| t.sol_kind == SolKind::ExactOpt));
        }
    }

    #[test]
    fn report_is_deterministic() {
        let mut c = tree_cfg(Algorithm::MpmdTree, 12);
        c.embedding = Embedding::FrtReduce;
        let a = run_experiment(&c).unwrap().to_json();
        let b = run_experiment(&c).unwrap().to_json();
        assert_eq!(a, b);
    }

    #[test]
    fn embedded_connection_recharged() {
        let mut c = ExperimentConfig::new(Family::RandomEuclidean, Algorithm::MpmdTree);
        c.embedding = Embedding::FrtOnly;
        c.trials = 10;
        c.n = 12;
        let rep = run_experiment(&c).unwrap();
        for t in &rep.trials {
            assert!(t.connection <= t.tree_connection + 1e-9);
            assert!(t.checks.recharge);
        }
    }

    #[test]
    fn degenerate_trial_flagged() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("inst.json");
        let inst = Instance::new(FiniteMetric::line(2).unwrap(), vec![(0, 1.0, None), (0, 1.0, None)]).unwrap();
        io::save_instance(&path, &inst).unwrap();
        let mut c = ExperimentConfig::new(Family::File, Algorithm::MpmdTree);
        c.instance = Some(path);
        c.embedding = Embedding::FrtOnly;
        let rep = run_experiment(&c).unwrap();
        let t = &rep.trials[0];
        assert!(t.degenerate);
        assert_eq!(t.ratio, None);
        assert_eq!((t.alg_cost, t.sol_cost), (0.0, 0.0));
        assert!(rep.passed);
    }

    #[test]
    fn config_errors() {
        let mut c = tree_cfg(Algorithm::MpmdTree, 0);
        assert!(matches!(run_experiment(&c), Err(HarnessError::Config(_))));
        c.trials = 1;
        c.m = 30;
        c.solver = Solver::Subsets;
        assert!(matches!(run_experiment(&c), Err(HarnessError::SolverCap { m: 30, cap: 22 })));
        let mut lbc = ExperimentConfig::new(Family::LineLb, Algorithm::MpmdTree);
        lbc.n = 20;
        assert!(matches!(run_experiment(&lbc), Err(HarnessError::Lb(LbError::TooSmall { .. }))));
        let mut e = ExperimentConfig::new(Family::RandomEuclidean, Algorithm::MpmdTree);
        e.embedding = Embedding::Native;
        assert!(matches!(run_experiment(&e), Err(HarnessError::Config(_))));
    }

    #[test]
    fn line_lb_native_and_embedded() {
        let mut c = ExperimentConfig::new(Family::LineLb, Algorithm::MpmdTree);
        c.n = 256;
        c.trials = 3;
        let native = run_experiment(&c).unwrap();
        assert!(native.passed);
        assert!(native.trials.iter().all(|t| t.sol_kind == SolKind::AdversaryUpperBound));
        for t in &native.trials {
            assert!((t.connection - t.tree_connection).abs() < 1e-9);
        }
        c.embedding = Embedding::FrtReduce;
        let emb = run_experiment(&c).unwrap();
        assert!(emb.passed);
        assert_ne!(native.provenance.config_hash, emb.provenance.config_hash);
    }

    #[test]
    fn emit_formats() {
        let rep = run_experiment(&tree_cfg(Algorithm::MpmdTree, 1)).unwrap();
        let csv = render_report(&rep, ReportFormat::Csv).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 1 + 1 + 3);
        assert!(lines[0].starts_with("trial,seed,m,"));
        assert!(lines[2].starts_with("mean,"));
        let json = render_report(&rep, ReportFormat::Json).unwrap();
        let back: Report = serde_json::from_str(&json).unwrap();
        assert_eq!(back, rep);
        let mut empty = rep.clone();
        empty.trials.clear();
        let err = render_report(&empty, ReportFormat::Json).unwrap_err();
        assert_eq!(err.to_string(), "no trials");
    }

    #[test]
    fn emit_surfaces_path() {
        let rep = run_experiment(&tree_cfg(Algorithm::MpmdTree, 1)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("f");
        fs::write(&blocker, "x").unwrap();
        let err = emit_report(&rep, ReportFormat::Csv, &blocker.join("r.csv")).unwrap_err();
        assert!(err.to_string().contains("f"), "{err}");
    }

    #[test]
    fn trace_matches_pairs() {
        let c = tree_cfg(Algorithm::MbpmdTree, 1);
        let tr = trace_trial(&c, 0).unwrap();
        let rep = run_trial(&c, 0).unwrap();
        let matches = tr.iter().filter(|e| matches!(e, TraceEvent::Match { .. })).count();
        assert_eq!(2 * matches, rep.m);
    }

    #[test]
    fn trend_single_row() {
        let t = ratio_trend(LbFamily::Mpmd, &[256], 3, 1).unwrap();
        assert_eq!(t.rows.len(), 1);
        assert!(t.nondecreasing);
        let row = &t.rows[0];
        assert!(row.mean_adversary <= row.bound + 1e-9);
        assert!(matches!(ratio_trend(LbFamily::Mpmd, &[16], 1, 1), Err(HarnessError::Lb(_))));
    }

    #[test]
    fn config_json_roundtrip_and_hash() {
        let mut c = tree_cfg(Algorithm::MbpmdTree, 5);
        let text = serde_json::to_string(&c).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, c);
        let h = c.hash();
        c.output = Some("x.json".into());
        assert_eq!(c.hash(), h);
        c.seed += 1;
        assert_ne!(c.hash(), h);
    }
}
