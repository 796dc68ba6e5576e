//! `graphbo`: experiments, prior samples, and source localization on
//! metric graphs from the command line.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use graphbo_core::experiment::{
    benchmark_suite_config, run_experiment, source_localization_config, write_artifacts,
    ExperimentConfig, ExperimentOutcome, ObjectiveSpec,
};
use graphbo_core::fem::{assemble, MassMode};
use graphbo_core::fixtures;
use graphbo_core::graph::MetricGraph;
use graphbo_core::kernels::{KernelModel, WhittleMaternParams};
use graphbo_core::mesh::Mesh;
use graphbo_core::objectives::BenchmarkKind;
use graphbo_core::rng::stream;

#[derive(Parser)]
#[command(
    name = "graphbo",
    version,
    about = "Bayesian optimization on compact metric graphs",
    after_help = "Set GRAPHBO_THREADS to cap how many episodes run in parallel."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment described by a JSON config and write its artifacts.
    Run(RunArgs),
    /// Sample Whittle-Matérn prior paths over the mesh nodes, as CSV.
    SamplePath(SamplePathArgs),
    /// Run a source-localization experiment; without --config, runs the
    /// stock comparison on the synthetic telecom network.
    Invert(InvertArgs),
    /// Run a stock benchmark comparison (SPDE vs. Euclidean) end to end.
    Bench(BenchArgs),
}

#[derive(Args)]
struct RunArgs {
    /// JSON experiment configuration.
    #[arg(long)]
    config: PathBuf,
    /// Artifact directory; overrides the config's `out_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed; overrides the config's `seed`.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct InvertArgs {
    /// JSON experiment configuration with an inverse-problem objective.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Artifact directory (default `graphbo-invert` for the stock run).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Replications for the stock run (ignored with --config).
    #[arg(long, default_value_t = 20)]
    n_rep: usize,
}

#[derive(Args)]
struct SamplePathArgs {
    /// Embedded fixture name (see `--graph help`) or a path to a graph JSON.
    #[arg(long)]
    graph: String,
    /// Target mesh width.
    #[arg(long, default_value_t = 0.05)]
    h: f64,
    /// Smoothness exponent of the Whittle-Matérn operator.
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    /// Range parameter κ.
    #[arg(long)]
    kappa: f64,
    /// Variance-normalization parameter τ.
    #[arg(long, default_value_t = 1.0)]
    tau: f64,
    /// How many independent paths to draw.
    #[arg(long, default_value_t = 3)]
    paths: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output CSV file (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// Benchmark suite: ackley, rastrigin, or levy.
    #[arg(long)]
    suite: String,
    /// Number of replications.
    #[arg(long, default_value_t = 20)]
    n_rep: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Artifact directory (default `graphbo-bench-<suite>`).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Run(args) => run_command(args),
        Command::Invert(args) => invert_command(args),
        Command::SamplePath(args) => sample_path_command(args),
        Command::Bench(args) => bench_command(args),
    }
}

fn read_config(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("cannot read config {}", path.display()))?;
    ExperimentConfig::from_json_str(&text)
        .with_context(|| format!("cannot parse config {}", path.display()))
}

fn run_command(args: RunArgs) -> Result<()> {
    let mut config = read_config(&args.config)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let out = args
        .out
        .or_else(|| config.out_dir.clone())
        .context("no output directory: pass --out or set `out_dir` in the config")?;
    execute(&config, &out)
}

fn invert_command(args: InvertArgs) -> Result<()> {
    let mut config = match &args.config {
        Some(path) => read_config(path)?,
        None => source_localization_config(args.n_rep, args.seed.unwrap_or(0)),
    };
    if !matches!(config.objective, ObjectiveSpec::InverseProblem { .. }) {
        bail!("`graphbo invert` needs an inverse-problem objective in the config");
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let out = args
        .out
        .or_else(|| config.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("graphbo-invert"));
    execute(&config, &out)
}

fn bench_command(args: BenchArgs) -> Result<()> {
    let kind = BenchmarkKind::from_label(&args.suite)?;
    let config = benchmark_suite_config(kind, args.n_rep, args.seed);
    let out = args
        .out
        .unwrap_or_else(|| PathBuf::from(format!("graphbo-bench-{}", kind.label())));
    execute(&config, &out)
}

fn execute(config: &ExperimentConfig, out: &Path) -> Result<()> {
    let outcome = run_experiment(config)?;
    let written = write_artifacts(&outcome, out)?;
    print_summary(&outcome, config.tol);
    println!("wrote {} artifacts under {}", written.len(), out.display());
    Ok(())
}

fn print_summary(outcome: &ExperimentOutcome, tol: f64) {
    println!("objective: {}", outcome.objective_label);
    for m in &outcome.report.families {
        let iters = match m.mean_iters_to_tol() {
            Some(v) => format!("{v:.1}"),
            None => "-".into(),
        };
        let last = m.median_regret.last().copied().unwrap_or(f64::NAN);
        println!(
            "{}: reach(tol={tol}) {}/{} = {:.2}, mean iters-to-tol {iters}, median final regret {last:.3e}",
            m.family,
            m.iters_to_tol.len(),
            m.n_rep,
            m.reach_rate,
        );
    }
}

fn load_graph(name_or_path: &str) -> Result<MetricGraph> {
    if fixtures::names().contains(&name_or_path) {
        return Ok(fixtures::load(name_or_path)?);
    }
    let text = fs::read_to_string(name_or_path).with_context(|| {
        format!(
            "'{name_or_path}' is neither an embedded fixture ({}) nor a readable file",
            fixtures::names().join(", ")
        )
    })?;
    Ok(MetricGraph::from_json_str(&text)?)
}

fn sample_path_command(args: SamplePathArgs) -> Result<()> {
    if args.paths == 0 {
        bail!("--paths must be at least 1");
    }
    let graph = Arc::new(load_graph(&args.graph)?);
    let mesh = Arc::new(Mesh::build(graph, args.h)?);
    let fem = Arc::new(assemble(&mesh));
    let params = WhittleMaternParams { alpha: args.alpha, kappa: args.kappa, tau: args.tau };
    let kernel = if params.two_alpha_integer().is_some() {
        KernelModel::precision(mesh.clone(), fem, params, MassMode::Lumped)?
    } else {
        KernelModel::rational(mesh.clone(), fem, params, 2)?
    };
    let mut rng = stream(args.seed, "sample-path", &[]);
    let draws: Vec<_> = (0..args.paths)
        .map(|_| kernel.sample_prior_nodes(&mut rng))
        .collect::<graphbo_core::error::Result<_>>()?;

    let mut csv = String::from("node_id,x,y");
    for p in 0..args.paths {
        csv.push_str(&format!(",path{p}"));
    }
    csv.push('\n');
    for i in 0..mesh.n_nodes() {
        let [x, y] = mesh.graph().embed(&mesh.node_points()[i]);
        csv.push_str(&format!("{i},{x:.6},{y:.6}"));
        for draw in &draws {
            csv.push_str(&format!(",{}", graphbo_core::artifacts::fmt_f64(draw[i])));
        }
        csv.push('\n');
    }
    match &args.out {
        Some(path) => {
            fs::write(path, csv).with_context(|| format!("cannot write {}", path.display()))?;
            println!("wrote {} nodes x {} paths to {}", mesh.n_nodes(), args.paths, path.display());
        }
        None => print!("{csv}"),
    }
    Ok(())
}
