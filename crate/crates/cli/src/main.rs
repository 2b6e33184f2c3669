use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;

use mpmd::embed::{measure_distortion, sample_embedding, EmbedMode};
use mpmd::harness::{
    emit_report, ratio_trend, run_experiment, trace_trial, trial_instance, Algorithm, Embedding, ExperimentConfig,
    Family, LbFamily, ReportFormat, Solver, unit_square_points,
};
use mpmd::lowerbound_gen::{LbRule, SignMode};
use mpmd::metric::{load_instance, save_instance, save_tree};
use mpmd::offline_opt::{bipartite_opt_assignment, exact_opt_subsets, greedy_heuristic};
use mpmd::online_mpmd::CheckLevel;
use mpmd::{FiniteMetric, Schedule};

#[derive(Parser)]
#[command(name = "mpmd", version, about = "Online matching with delays on tree metrics: experiments and tools")]
struct Cli {
    /// Directory for outputs given by relative paths.
    #[arg(long, global = true, env = "MPMD_OUT_DIR", default_value = ".")]
    out_dir: PathBuf,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate an instance (and the family's tree, if any).
    Gen(GenArgs),
    /// Sample a tree embedding of an instance's metric.
    Embed(EmbedArgs),
    /// Run an experiment and write its report.
    Run(RunArgs),
    /// Solve an instance offline.
    Opt(OptArgs),
    /// Mean ratio of the tree algorithm on the lower-bound family, per n.
    Bench(BenchArgs),
    /// Empirical distortion of the embedding pipeline.
    Distortion(DistortionArgs),
}

fn serde_enum<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|e| e.to_string())
}

/// Experiment settings; every flag overrides the config file.
#[derive(Args, Clone, Default)]
struct ExpArgs {
    /// TOML or JSON experiment config.
    #[arg(long)]
    config: Option<PathBuf>,
    /// line-lb, random-euclidean, random-tree or file.
    #[arg(long, value_parser = serde_enum::<Family>)]
    family: Option<Family>,
    /// mpmd-tree or mbpmd-tree.
    #[arg(long, value_parser = serde_enum::<Algorithm>)]
    algorithm: Option<Algorithm>,
    /// native, frt-only or frt+reduce.
    #[arg(long, value_parser = serde_enum::<Embedding>)]
    embedding: Option<Embedding>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// auto, subsets, assignment, adversary or greedy.
    #[arg(long, value_parser = serde_enum::<Solver>)]
    solver: Option<Solver>,
    /// final or full.
    #[arg(long, value_parser = serde_enum::<CheckLevel>)]
    checks: Option<CheckLevel>,
    /// mpmd or mbpmd parameter rule for line-lb.
    #[arg(long, value_parser = serde_enum::<LbRule>)]
    lb_rule: Option<LbRule>,
    /// exhaustive, sampled or auto.
    #[arg(long, value_parser = serde_enum::<SignMode>)]
    sign_mode: Option<SignMode>,
    /// Instance file for the file family.
    #[arg(long)]
    instance: Option<PathBuf>,
    /// Tree file for the file family.
    #[arg(long)]
    tree: Option<PathBuf>,
}

impl ExpArgs {
    fn config(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => load_config(path)?,
            None => {
                let (Some(family), Some(algorithm)) = (self.family, self.algorithm) else {
                    bail!("--family and --algorithm are required without --config");
                };
                ExperimentConfig::new(family, algorithm)
            }
        };
        macro_rules! set {
            ($($f:ident),*) => {$(if let Some(v) = self.$f.clone() { cfg.$f = v; })*};
        }
        set!(family, algorithm, embedding, n, m, trials, seed, solver, checks, sign_mode);
        if self.lb_rule.is_some() {
            cfg.lb_rule = self.lb_rule;
        }
        if self.instance.is_some() {
            cfg.instance = self.instance.clone();
        }
        if self.tree.is_some() {
            cfg.tree = self.tree.clone();
        }
        Ok(cfg)
    }
}

fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    } else {
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }
}

#[derive(Args)]
struct GenArgs {
    #[command(flatten)]
    exp: ExpArgs,
    /// Which trial's instance to write.
    #[arg(long, default_value_t = 0)]
    trial: usize,
    #[arg(long, default_value = "instance.json")]
    out: PathBuf,
    /// Also write the family's tree here.
    #[arg(long)]
    tree_out: Option<PathBuf>,
}

#[derive(Args)]
struct EmbedArgs {
    #[arg(long)]
    instance: PathBuf,
    #[arg(long, default_value = "frt+reduce")]
    mode: EmbedMode,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "tree.json")]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    exp: ExpArgs,
    /// json or csv.
    #[arg(long, default_value = "json")]
    format: ReportFormat,
    /// Defaults to the config's output path, then `report.<format>`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write the event trace of trial 0 as JSONL.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct OptArgs {
    #[arg(long)]
    instance: PathBuf,
    /// subsets, assignment or greedy.
    #[arg(long, default_value = "subsets", value_parser = serde_enum::<Solver>)]
    solver: Solver,
    #[arg(long, default_value = "schedule.json")]
    out: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    /// mpmd or mbpmd lower-bound family.
    #[arg(long, default_value = "mpmd", value_parser = serde_enum::<LbFamily>)]
    family: LbFamily,
    /// Comma-separated point counts.
    #[arg(long, value_delimiter = ',', default_values_t = [256usize, 1024, 4096, 16384])]
    n: Vec<usize>,
    #[arg(long, default_value_t = 50)]
    seeds: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "trend.csv")]
    out: PathBuf,
}

#[derive(Args)]
struct DistortionArgs {
    /// `line:<n>`, `euclidean:<n>` (uniform in the unit square) or an instance file.
    #[arg(long)]
    metric: String,
    #[arg(long, default_value = "frt+reduce")]
    mode: EmbedMode,
    #[arg(long, default_value_t = 200)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "distortion.csv")]
    out: PathBuf,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    write_text(path, &(text + "\n"))
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    ensure_parent(path)?;
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn parse_metric(spec: &str, seed: u64) -> Result<FiniteMetric> {
    if let Some(n) = spec.strip_prefix("line:") {
        return Ok(FiniteMetric::line(n.parse().context("line size")?)?);
    }
    if let Some(n) = spec.strip_prefix("euclidean:") {
        return Ok(FiniteMetric::euclidean(&unit_square_points(n.parse().context("point count")?, seed))?);
    }
    let (inst, _) = load_instance(Path::new(spec))?;
    Ok(inst.metric().clone())
}

/// Returns whether every invariant held.
fn dispatch(cli: Cli) -> Result<bool> {
    let out = |p: &Path| cli.out_dir.join(p);
    match cli.cmd {
        Cmd::Gen(a) => {
            let cfg = a.exp.config()?;
            let (inst, tree) = trial_instance(&cfg, a.trial)?;
            ensure_parent(&out(&a.out))?;
            save_instance(&out(&a.out), &inst)?;
            if let Some(tp) = &a.tree_out {
                let Some(tree) = tree else { bail!("family {:?} has no tree of its own", cfg.family) };
                ensure_parent(&out(tp))?;
                save_tree(&out(tp), &tree)?;
            }
            println!("wrote {} requests to {}", inst.len(), out(&a.out).display());
            Ok(true)
        }
        Cmd::Embed(a) => {
            let (inst, _) = load_instance(&a.instance)?;
            let s = sample_embedding(inst.metric(), a.seed, a.mode);
            ensure_parent(&out(&a.out))?;
            save_tree(&out(&a.out), &s.tree)?;
            println!("tree with {} vertices, height {}, beta {}", s.tree.len(), s.tree.height(), s.beta);
            Ok(true)
        }
        Cmd::Run(a) => {
            let cfg = a.exp.config()?;
            let report = run_experiment(&cfg)?;
            let dest = a
                .out
                .or_else(|| cfg.output.clone())
                .unwrap_or_else(|| PathBuf::from(format!("report.{}", if a.format == ReportFormat::Csv { "csv" } else { "json" })));
            emit_report(&report, a.format, &out(&dest))?;
            if let Some(tp) = &a.trace {
                let mut text = Vec::new();
                for ev in trace_trial(&cfg, 0)? {
                    serde_json::to_writer(&mut text, &ev)?;
                    text.write_all(b"\n")?;
                }
                write_text(&out(tp), std::str::from_utf8(&text)?)?;
            }
            let agg = &report.aggregate;
            println!(
                "{} trials, {} failed, {} degenerate, mean ratio {}",
                agg.trials,
                agg.failed,
                agg.degenerate,
                agg.ratio_mean.map_or("n/a".to_string(), |r| format!("{r:.4}"))
            );
            for t in report.trials.iter().filter(|t| !t.passed).take(5) {
                eprintln!("trial {} failed: {:?}", t.index, t.checks);
            }
            Ok(report.passed)
        }
        Cmd::Opt(a) => {
            let (inst, _) = load_instance(&a.instance)?;
            let sol: Schedule = match a.solver {
                Solver::Subsets | Solver::Auto => exact_opt_subsets(&inst)?,
                Solver::Assignment => bipartite_opt_assignment(&inst)?,
                Solver::Greedy => greedy_heuristic(&inst)?,
                Solver::Adversary => bail!("the adversary solution needs the generator parameters; use `run`"),
            };
            write_json(&out(&a.out), &sol)?;
            println!("cost {} (connection {}, delay {})", sol.total(), sol.connection_cost, sol.delay_cost);
            Ok(true)
        }
        Cmd::Bench(a) => {
            let trend = ratio_trend(a.family, &a.n, a.seeds, a.seed)?;
            let mut csv = String::from("n,r,a,bound,seeds,mean_alg,mean_adversary,mean_ratio\n");
            for r in &trend.rows {
                csv.push_str(&format!(
                    "{},{},{},{},{},{},{},{}\n",
                    r.n, r.r, r.a, r.bound, r.seeds, r.mean_alg, r.mean_adversary, r.mean_ratio
                ));
            }
            write_text(&out(&a.out), &csv)?;
            for r in &trend.rows {
                println!("n={:<6} r={} mean ratio {:.4}", r.n, r.r, r.mean_ratio);
            }
            println!("nondecreasing: {}", trend.nondecreasing);
            Ok(true)
        }
        Cmd::Distortion(a) => {
            let m = parse_metric(&a.metric, a.seed)?;
            let rep = measure_distortion(&m, a.mode, a.trials, a.seed)?;
            ensure_parent(&out(&a.out))?;
            rep.write_csv(&out(&a.out))?;
            println!("max mean stretch {:.4}, min stretch {:.6}", rep.max_mean_stretch, rep.min_stretch);
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
