use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fairgraph::experiment::{self, ExperimentConfig};
use fairgraph::{Ablation, Error};

#[derive(Parser)]
#[command(name = "fairgraph", version, about = "Fair and stable node representations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct RunArgs {
    /// Experiment config (TOML). Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the top-level seed.
    #[arg(long)]
    seed: Option<u64>,
    /// full, no-objective, no-architecture or baseline.
    #[arg(long)]
    ablation: Option<Ablation>,
    /// Overrides the Siamese weight λ.
    #[arg(long)]
    lambda: Option<f64>,
    /// Output directory (defaults to the config's output_dir).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Exact unfairness with one sensitive flip per test node.
    #[arg(long)]
    per_node: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Build a similarity graph from a CSV table.
    BuildGraph {
        #[arg(long)]
        csv: PathBuf,
        #[arg(long)]
        meta: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model and write checkpoint, log and report.
    Train(RunArgs),
    /// Evaluate a saved checkpoint.
    Evaluate {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// One train+evaluate per λ, written to sweep.csv.
    SweepLambda {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated λ values.
        #[arg(long, value_delimiter = ',', default_values_t = vec![0.0, 0.1, 0.3, 0.6, 0.9])]
        lambdas: Vec<f64>,
    },
    /// Train all four ablation modes side by side.
    Compare(RunArgs),
}

fn resolve(args: &RunArgs) -> Result<(ExperimentConfig, PathBuf), Error> {
    let mut cfg = match &args.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(a) = args.ablation {
        cfg.model.ablation = a;
    }
    if let Some(l) = args.lambda {
        cfg.model.lambda = l;
    }
    if args.per_node {
        cfg.eval.per_node = true;
    }
    let out = args.out.clone().unwrap_or_else(|| cfg.output_dir.clone());
    cfg.output_dir = out.clone();
    Ok((cfg, out))
}

fn missing(paths: &[&Path]) -> Option<String> {
    paths
        .iter()
        .find(|p| !p.exists())
        .map(|p| format!("input not found: {}", p.display()))
}

fn run(cli: Cli) -> Result<ExitCode, Error> {
    match cli.command {
        Command::BuildGraph { csv, meta, out } => {
            if let Some(msg) = missing(&[&csv, &meta]) {
                eprintln!("{msg}");
                return Ok(ExitCode::from(2));
            }
            let stats = experiment::cmd_build_graph(&csv, &meta, &out)?;
            println!("{}", serde_json::to_string(&stats)?);
        }
        Command::Train(args) => {
            if let Some(msg) = args.config.as_deref().and_then(|c| missing(&[c])) {
                eprintln!("{msg}");
                return Ok(ExitCode::from(2));
            }
            let (cfg, out) = resolve(&args)?;
            let report = experiment::cmd_train(&cfg, &out)?;
            println!("{}", serde_json::to_string(&summary(&report))?);
        }
        Command::Evaluate { run, checkpoint } => {
            let mut inputs: Vec<&Path> = vec![&checkpoint];
            inputs.extend(run.config.as_deref());
            if let Some(msg) = missing(&inputs) {
                eprintln!("{msg}");
                return Ok(ExitCode::from(2));
            }
            let (cfg, out) = resolve(&run)?;
            let report = experiment::cmd_evaluate(&cfg, &checkpoint, &out)?;
            println!("{}", serde_json::to_string(&summary(&report))?);
        }
        Command::SweepLambda { run, lambdas } => {
            if let Some(msg) = run.config.as_deref().and_then(|c| missing(&[c])) {
                eprintln!("{msg}");
                return Ok(ExitCode::from(2));
            }
            let (cfg, out) = resolve(&run)?;
            let rows = experiment::cmd_sweep_lambda(&cfg, &lambdas, &out)?;
            let failed = rows.iter().filter(|r| r.error.is_some()).count();
            for r in &rows {
                match (&r.report, &r.error) {
                    (Some(rep), _) => println!("lambda={} {}", r.lambda, serde_json::to_string(&summary(rep))?),
                    (None, Some(e)) => println!("lambda={} error: {e}", r.lambda),
                    _ => {}
                }
            }
            if failed > 0 {
                eprintln!("{failed} sweep point(s) failed");
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::Compare(args) => {
            if let Some(msg) = args.config.as_deref().and_then(|c| missing(&[c])) {
                eprintln!("{msg}");
                return Ok(ExitCode::from(2));
            }
            let (cfg, out) = resolve(&args)?;
            for row in experiment::cmd_compare(&cfg, &out)? {
                println!("{} {}", row.mode.name(), serde_json::to_string(&summary(&row.report))?);
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn summary(r: &fairgraph::MetricsReport) -> serde_json::Value {
    serde_json::json!({
        "auroc": r.auroc,
        "f1": r.f1,
        "unfairness_pct": r.unfairness_pct,
        "instability_pct": r.instability_pct,
        "delta_sp": r.delta_sp,
        "delta_eo": r.delta_eo,
        "bound_max_ratio": r.bound_max_ratio,
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Io { ref source, .. } if source.kind() == std::io::ErrorKind::NotFound => {
                    ExitCode::from(2)
                }
                _ => ExitCode::FAILURE,
            }
        }
    }
}
