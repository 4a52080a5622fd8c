//! Experiment configuration and the commands behind the `fairgraph` binary.
//!
//! A run is described by one TOML file:
//!
//! ```toml
//! seed = 7
//! output_dir = "runs/demo"
//!
//! [dataset]
//! kind = "synth"
//! n_nodes = 1000
//! bias = 0.8
//! homophily = 0.8
//!
//! [model]
//! lambda = 0.6
//! epochs = 1000
//!
//! [eval]
//! n_trials = 1
//! ```
//!
//! Every seed used by a run is derived from the top-level `seed`, and the
//! resolved config is embedded in each report.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::autodiff::Checkpoint;
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::ingest::{self, GraphStats, IngestMeta, SynthConfig};
use crate::metrics::{self, EvalConfig, MetricsReport, CSV_HEADER};
use crate::model::{self, Ablation, EpochLog, NiftyModel, TrainConfig};
use crate::rng;

pub const REPORT_FILE: &str = "report.json";
pub const LOG_FILE: &str = "log.jsonl";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const SWEEP_FILE: &str = "sweep.csv";
pub const COMPARE_JSON: &str = "compare.json";
pub const COMPARE_CSV: &str = "compare.csv";
pub const STATS_FILE: &str = "stats.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthParams {
    pub n_nodes: usize,
    pub n_attrs: usize,
    pub homophily: f64,
    pub bias: f64,
    pub avg_degree: f64,
    pub signal: f64,
    pub split: [f64; 3],
    /// Dataset seed; the run seed when absent.
    pub seed: Option<u64>,
}

impl Default for SynthParams {
    fn default() -> Self {
        let base = SynthConfig::new(1000, 8, 0.8, 0.8, 0);
        SynthParams {
            n_nodes: base.n_nodes,
            n_attrs: base.n_attrs,
            homophily: base.homophily,
            bias: base.bias,
            avg_degree: base.avg_degree,
            signal: base.signal,
            split: base.split,
            seed: None,
        }
    }
}

impl SynthParams {
    pub fn to_config(&self, run_seed: u64) -> SynthConfig {
        SynthConfig {
            n_nodes: self.n_nodes,
            n_attrs: self.n_attrs,
            homophily: self.homophily,
            bias: self.bias,
            seed: self.seed.unwrap_or(run_seed),
            avg_degree: self.avg_degree,
            signal: self.signal,
            split: self.split,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetConfig {
    Synth(SynthParams),
    /// A directory written by `build-graph`.
    GraphDir { path: PathBuf },
    /// A raw CSV plus its ingestion `meta.json`.
    Csv { path: PathBuf, meta: PathBuf },
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig::Synth(SynthParams::default())
    }
}

fn d_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "d_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub model: TrainConfig,
    #[serde(default)]
    pub eval: EvalConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            output_dir: d_output_dir(),
            dataset: DatasetConfig::default(),
            model: TrainConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    /// Fills every component seed from the top-level seed.
    pub fn resolved(&self) -> Self {
        let mut c = self.clone();
        c.model.seed = self.seed;
        c.model.augment.seed = rng::derive_seed(self.seed, rng::TAG_AUGMENT, 0);
        c.eval.seed = rng::derive_seed(self.seed, rng::TAG_EVAL, 0);
        if let DatasetConfig::Synth(p) = &mut c.dataset {
            p.seed = Some(p.seed.unwrap_or(self.seed));
        }
        c
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if !(0.0..=1.0).contains(&self.eval.p_n) || !(self.eval.noise_stddev >= 0.0) {
            return Err(Error::Validation("eval noise settings out of range".into()));
        }
        Ok(())
    }
}

/// Loads or generates the dataset a config points at.
pub fn load_dataset(cfg: &ExperimentConfig) -> Result<Graph> {
    match &cfg.dataset {
        DatasetConfig::Synth(p) => ingest::synth_dataset(&p.to_config(cfg.seed)),
        DatasetConfig::GraphDir { path } => Ok(Graph::read_dir(path)?.0),
        DatasetConfig::Csv { path, meta } => {
            let text = fs::read_to_string(meta).map_err(|e| Error::io(meta, e))?;
            let meta: IngestMeta = serde_json::from_str(&text)?;
            ingest::graph_from_csv(path, &meta)
        }
    }
}

fn decisions() -> serde_json::Value {
    serde_json::json!({
        "adam_weight_decay": "decoupled",
        "siamese_views": "mean of noisy and counterfactual terms",
        "siamese_space": "projection head outputs",
        "normalization": "W_self rescaled to unit spectral norm each epoch and after training",
        "augmentation": "fresh views every epoch",
    })
}

fn metadata(cfg: &ExperimentConfig, graph: &Graph, model: &NiftyModel) -> serde_json::Value {
    serde_json::json!({
        "config": cfg,
        "ablation": cfg.model.ablation.name(),
        "effective_lambda": cfg.model.effective_lambda(),
        "lipschitz_enabled": model.lipschitz_enabled,
        "seeds": {
            "run": cfg.seed,
            "init": rng::derive_seed(cfg.seed, rng::TAG_INIT, 0),
            "augment": cfg.model.augment.seed,
            "eval": cfg.eval.seed,
        },
        "dataset": ingest::graph_stats(graph),
        "decisions": decisions(),
    })
}

fn attach(report: &mut MetricsReport, meta: serde_json::Value) {
    if let (Some(dst), serde_json::Value::Object(src)) = (report.metadata.as_object_mut(), meta) {
        dst.extend(src);
    }
}

/// Result of one train + evaluate run.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub model: NiftyModel,
    pub history: Vec<EpochLog>,
    pub adam: crate::autodiff::AdamState,
    pub report: MetricsReport,
}

/// Trains and evaluates on an already loaded graph. `cfg` must be resolved.
pub fn run_on_graph(cfg: &ExperimentConfig, graph: &Graph) -> Result<RunOutput> {
    cfg.validate()?;
    let (model, outcome) = model::fit(graph, &cfg.model)?;
    let mut report = metrics::evaluate(&model, graph, &cfg.eval)?;
    attach(&mut report, metadata(cfg, graph, &model));
    report.validate()?;
    Ok(RunOutput {
        model,
        history: outcome.history,
        adam: outcome.adam,
        report,
    })
}

pub fn run(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let cfg = cfg.resolved();
    let graph = load_dataset(&cfg)?;
    run_on_graph(&cfg, &graph)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

/// Trains, evaluates and writes `checkpoint.json`, `log.jsonl` and
/// `report.json` into `out`.
pub fn cmd_train(cfg: &ExperimentConfig, out: &Path) -> Result<MetricsReport> {
    let resolved = cfg.resolved();
    let graph = load_dataset(&resolved)?;
    let run = run_on_graph(&resolved, &graph)?;

    let mut log = String::new();
    for e in &run.history {
        log.push_str(&serde_json::to_string(e)?);
        log.push('\n');
    }
    write_text(&out.join(LOG_FILE), &log)?;
    let ck = run.model.to_checkpoint(
        Some(&run.adam),
        serde_json::json!({ "config": resolved }),
    );
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    ck.save(&out.join(CHECKPOINT_FILE))?;
    write_json(&out.join(REPORT_FILE), &run.report)?;
    Ok(run.report)
}

/// Re-evaluates a saved checkpoint on the config's dataset.
pub fn cmd_evaluate(cfg: &ExperimentConfig, checkpoint: &Path, out: &Path) -> Result<MetricsReport> {
    let resolved = cfg.resolved();
    resolved.validate()?;
    let graph = load_dataset(&resolved)?;
    let ck = Checkpoint::load(checkpoint)?;
    let model = NiftyModel::from_checkpoint(&ck)?;
    let mut report = metrics::evaluate(&model, &graph, &resolved.eval)?;
    attach(&mut report, metadata(&resolved, &graph, &model));
    report.validate()?;
    write_json(&out.join(REPORT_FILE), &report)?;
    Ok(report)
}

/// One λ of a sweep: either a report or the error that stopped it.
#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub lambda: f64,
    pub report: Option<MetricsReport>,
    pub error: Option<String>,
}

fn run_variants<T: Sync>(
    variants: &[T],
    threads: usize,
    graph: &Graph,
    make: impl Fn(&T) -> ExperimentConfig + Sync,
) -> Vec<Result<MetricsReport>> {
    ingest::map_rows(variants.len(), threads, |i| {
        run_on_graph(&make(&variants[i]), graph).map(|r| r.report)
    })
}

/// Trains and evaluates once per λ (seeds fixed), in parallel, and writes
/// `sweep.csv` ordered by λ. A failing λ is recorded and the sweep continues.
pub fn cmd_sweep_lambda(cfg: &ExperimentConfig, lambdas: &[f64], out: &Path) -> Result<Vec<SweepRow>> {
    if let Some(l) = lambdas.iter().find(|l| !(0.0..=1.0).contains(*l)) {
        return Err(Error::Validation(format!("lambda {l} outside [0, 1]")));
    }
    let mut lambdas = lambdas.to_vec();
    lambdas.sort_by(f64::total_cmp);
    let resolved = cfg.resolved();
    let graph = load_dataset(&resolved)?;
    let results = run_variants(&lambdas, ingest::worker_count(0), &graph, |&l| {
        let mut c = resolved.clone();
        c.model.lambda = l;
        c
    });
    let rows: Vec<SweepRow> = lambdas
        .iter()
        .zip(results)
        .map(|(&lambda, r)| match r {
            Ok(report) => SweepRow {
                lambda,
                report: Some(report),
                error: None,
            },
            Err(e) => {
                log::warn!("sweep point lambda={lambda} failed: {e}");
                SweepRow {
                    lambda,
                    report: None,
                    error: Some(e.to_string()),
                }
            }
        })
        .collect();

    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let path = out.join(SWEEP_FILE);
    let mut w = csv::Writer::from_path(&path)?;
    let mut header = vec!["lambda", "seed", "status"];
    header.extend(CSV_HEADER);
    header.push("error");
    w.write_record(&header)?;
    for row in &rows {
        let mut rec = vec![row.lambda.to_string(), resolved.seed.to_string()];
        match &row.report {
            Some(r) => {
                rec.push("ok".into());
                rec.extend(r.csv_values());
                rec.push(String::new());
            }
            None => {
                rec.push("error".into());
                rec.extend(CSV_HEADER.iter().map(|_| String::new()));
                rec.push(row.error.clone().unwrap_or_default());
            }
        }
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    Ok(rows)
}

#[derive(Debug, Clone, Serialize)]
pub struct CompareRow {
    pub mode: Ablation,
    pub report: MetricsReport,
}

/// Trains all four ablation modes with shared seeds and writes
/// `compare.json` and `compare.csv`.
pub fn cmd_compare(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<CompareRow>> {
    let resolved = cfg.resolved();
    let graph = load_dataset(&resolved)?;
    let modes = Ablation::ALL;
    let results = run_variants(&modes, ingest::worker_count(0), &graph, |&m| {
        let mut c = resolved.clone();
        c.model.ablation = m;
        c
    });
    let rows = modes
        .iter()
        .zip(results)
        .map(|(&mode, r)| r.map(|report| CompareRow { mode, report }))
        .collect::<Result<Vec<_>>>()?;

    write_json(&out.join(COMPARE_JSON), &rows)?;
    let path = out.join(COMPARE_CSV);
    let mut w = csv::Writer::from_path(&path)?;
    let mut header = vec!["mode", "effective_lambda", "lipschitz"];
    header.extend(CSV_HEADER);
    w.write_record(&header)?;
    for row in &rows {
        let mut rec = vec![
            row.mode.name().to_string(),
            row.mode.effective_lambda(resolved.model.lambda).to_string(),
            row.mode.uses_normalization().to_string(),
        ];
        rec.extend(row.report.csv_values());
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    Ok(rows)
}

/// Builds a similarity graph from a CSV and writes the graph directory plus
/// `stats.json`.
pub fn cmd_build_graph(csv_path: &Path, meta_path: &Path, out: &Path) -> Result<GraphStats> {
    for p in [csv_path, meta_path] {
        if !p.exists() {
            return Err(Error::io(
                p,
                std::io::Error::new(std::io::ErrorKind::NotFound, "file not found"),
            ));
        }
    }
    let text = fs::read_to_string(meta_path).map_err(|e| Error::io(meta_path, e))?;
    let meta: IngestMeta = serde_json::from_str(&text)?;
    let graph = ingest::graph_from_csv(csv_path, &meta)?;
    graph.write_dir(out, &meta.label, Some(meta.seed))?;
    let stats = ingest::graph_stats(&graph);
    write_json(&out.join(STATS_FILE), &stats)?;
    Ok(stats)
}
