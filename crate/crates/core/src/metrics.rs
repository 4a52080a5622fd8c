//! Utility, fairness and stability metrics over test-mask nodes.

use serde::{Deserialize, Serialize};

use crate::augment;
use crate::error::{Error, Result};
use crate::graph::{Graph, Mask};
use crate::model::{BoundCheckConfig, NiftyModel};
use crate::rng;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Largest graph for which the exact per-node unfairness mode is allowed.
pub const PER_NODE_MAX_NODES: usize = 2000;

fn check_len(name: &str, a: usize, mask: &Mask) -> Result<()> {
    if a != mask.len() {
        return Err(Error::Structural(format!(
            "{name} has length {a}, mask has {}",
            mask.len()
        )));
    }
    Ok(())
}

/// Mann–Whitney AUROC: the fraction of (positive, negative) pairs ranked
/// correctly, ties counting ½.
pub fn auroc(scores: &[f64], labels: &[u8], mask: &Mask) -> Result<f64> {
    check_len("scores", scores.len(), mask)?;
    check_len("labels", labels.len(), mask)?;
    let mut items: Vec<(f64, bool)> = mask
        .indices()
        .into_iter()
        .map(|i| (scores[i], labels[i] == 1))
        .collect();
    let n_pos = items.iter().filter(|(_, y)| *y).count();
    let n_neg = items.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Metric(format!(
            "AUROC needs both classes: {n_pos} positive, {n_neg} negative"
        )));
    }
    if items.iter().any(|(s, _)| s.is_nan()) {
        return Err(Error::Metric("AUROC: NaN score".into()));
    }
    items.sort_by(|a, b| a.0.total_cmp(&b.0));
    // average ranks over tie groups
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < items.len() {
        let mut j = i;
        while j + 1 < items.len() && items[j + 1].0 == items[i].0 {
            j += 1;
        }
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        rank_sum_pos += avg_rank * items[i..=j].iter().filter(|(_, y)| *y).count() as f64;
        i = j + 1;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Ok((rank_sum_pos - p * (p + 1.0) / 2.0) / (p * n))
}

/// F1 of the positive class; 0 when precision + recall is 0.
pub fn f1(preds: &[u8], labels: &[u8], mask: &Mask) -> Result<f64> {
    check_len("preds", preds.len(), mask)?;
    check_len("labels", labels.len(), mask)?;
    let idx = mask.indices();
    if idx.is_empty() {
        return Err(Error::Metric("F1 over an empty mask".into()));
    }
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for i in idx {
        match (preds[i] == 1, labels[i] == 1) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    if tp == 0 {
        return Ok(0.0);
    }
    Ok(2.0 * tp as f64 / (2 * tp + fp + fn_) as f64)
}

fn group_rate(preds: &[u8], members: impl Iterator<Item = usize>) -> (usize, usize) {
    members.fold((0, 0), |(pos, n), i| (pos + usize::from(preds[i] == 1), n + 1))
}

/// `|P(ŷ=1 | s=0) − P(ŷ=1 | s=1)|`.
pub fn statistical_parity(preds: &[u8], s: &[u8], mask: &Mask) -> Result<f64> {
    check_len("preds", preds.len(), mask)?;
    check_len("sensitive", s.len(), mask)?;
    let idx = mask.indices();
    let (p0, n0) = group_rate(preds, idx.iter().copied().filter(|&i| s[i] == 0));
    let (p1, n1) = group_rate(preds, idx.iter().copied().filter(|&i| s[i] == 1));
    if n0 == 0 || n1 == 0 {
        return Err(Error::Metric(format!(
            "statistical parity needs both groups: s=0 has {n0}, s=1 has {n1}"
        )));
    }
    Ok((p0 as f64 / n0 as f64 - p1 as f64 / n1 as f64).abs())
}

/// `|P(ŷ=1 | y=1, s=0) − P(ŷ=1 | y=1, s=1)|`.
pub fn equal_opportunity(preds: &[u8], labels: &[u8], s: &[u8], mask: &Mask) -> Result<f64> {
    check_len("preds", preds.len(), mask)?;
    check_len("labels", labels.len(), mask)?;
    check_len("sensitive", s.len(), mask)?;
    let idx = mask.indices();
    let pos = |g: u8| idx.iter().copied().filter(move |&i| labels[i] == 1 && s[i] == g);
    let (p0, n0) = group_rate(preds, pos(0));
    let (p1, n1) = group_rate(preds, pos(1));
    if n0 == 0 || n1 == 0 {
        return Err(Error::Metric(format!(
            "equal opportunity needs positives in both groups: s=0 has {n0}, s=1 has {n1}"
        )));
    }
    Ok((p0 as f64 / n0 as f64 - p1 as f64 / n1 as f64).abs())
}

fn flip_pct(a: &[u8], b: &[u8], mask: &Mask) -> f64 {
    let idx = mask.indices();
    if idx.is_empty() {
        return 0.0;
    }
    let changed = idx.iter().filter(|&&i| a[i] != b[i]).count();
    100.0 * changed as f64 / idx.len() as f64
}

/// Percentage of test nodes whose predicted label changes under a sensitive
/// flip. The default flips every node at once; `per_node` flips one node at
/// a time and only reads that node's prediction.
pub fn unfairness(model: &NiftyModel, graph: &Graph, per_node: bool) -> Result<f64> {
    let base = model.predict(graph, None)?;
    let test = &graph.masks().test;
    if !per_node {
        let flipped = augment::flip_sensitive(graph.attrs(), graph.sensitive_idx())?;
        let cf = model.predict(graph, Some(&flipped))?;
        return Ok(flip_pct(&base.labels, &cf.labels, test));
    }
    if graph.n_nodes() > PER_NODE_MAX_NODES {
        return Err(Error::Capacity(format!(
            "per-node unfairness is limited to {PER_NODE_MAX_NODES} nodes, graph has {}",
            graph.n_nodes()
        )));
    }
    let mut labels = base.labels.clone();
    for u in test.indices() {
        let x = augment::flip_sensitive_node(graph.attrs(), graph.sensitive_idx(), u)?;
        labels[u] = model.predict(graph, Some(&x))?.labels[u];
    }
    Ok(flip_pct(&base.labels, &labels, test))
}

/// Percentage of test nodes whose label changes under attribute noise,
/// averaged over `n_trials` independent draws from the eval stream.
pub fn instability(
    model: &NiftyModel,
    graph: &Graph,
    p_n: f64,
    noise_stddev: f64,
    n_trials: usize,
    seed: u64,
) -> Result<f64> {
    if n_trials == 0 {
        return Err(Error::Validation("instability needs at least one trial".into()));
    }
    let base = model.predict(graph, None)?;
    let mut total = 0.0;
    for t in 0..n_trials {
        let noise_seed = rng::derive_seed(seed, rng::TAG_EVAL, t as u64);
        let x = augment::perturb_attributes(graph.attrs(), graph.sensitive_idx(), p_n, noise_stddev, noise_seed)?;
        let noisy = model.predict(graph, Some(&x))?;
        total += flip_pct(&base.labels, &noisy.labels, &graph.masks().test);
    }
    Ok(total / n_trials as f64)
}

fn d_p_n() -> f64 {
    0.1
}
fn d_stddev() -> f64 {
    1.0
}
fn d_trials() -> usize {
    1
}
fn d_bound_samples() -> usize {
    200
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    /// Attribute-noise probability for the instability metric.
    #[serde(default = "d_p_n")]
    pub p_n: f64,
    #[serde(default = "d_stddev")]
    pub noise_stddev: f64,
    #[serde(default = "d_trials")]
    pub n_trials: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub per_node: bool,
    #[serde(default = "d_bound_samples")]
    pub bound_samples: usize,
    /// Incident-edge drop probability in the bound check; 0 keeps the
    /// adjacency fixed so the attribute bound applies exactly.
    #[serde(default)]
    pub bound_p_e: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            p_n: d_p_n(),
            noise_stddev: d_stddev(),
            n_trials: d_trials(),
            seed: 0,
            per_node: false,
            bound_samples: d_bound_samples(),
            bound_p_e: 0.0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GroupCounts {
    pub nodes: usize,
    pub label_positive: usize,
    pub predicted_positive: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricCounts {
    pub test_size: usize,
    pub test_positive: usize,
    pub group_0: GroupCounts,
    pub group_1: GroupCounts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub schema_version: u32,
    pub auroc: f64,
    pub f1: f64,
    pub unfairness_pct: f64,
    pub instability_pct: f64,
    pub delta_sp: f64,
    pub delta_eo: f64,
    pub bound_max_ratio: f64,
    pub bound_max_ratio_noise: f64,
    pub bound_max_ratio_counterfactual: f64,
    pub bound_prod_sigma: f64,
    pub counts: MetricCounts,
    pub metadata: serde_json::Value,
}

pub const CSV_HEADER: [&str; 8] = [
    "auroc",
    "f1",
    "unfairness_pct",
    "instability_pct",
    "delta_sp",
    "delta_eo",
    "bound_max_ratio",
    "test_size",
];

impl MetricsReport {
    pub fn csv_values(&self) -> Vec<String> {
        [
            self.auroc,
            self.f1,
            self.unfairness_pct,
            self.instability_pct,
            self.delta_sp,
            self.delta_eo,
            self.bound_max_ratio,
        ]
        .iter()
        .map(|v| v.to_string())
        .chain(std::iter::once(self.counts.test_size.to_string()))
        .collect()
    }

    /// Range checks on every metric.
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != REPORT_SCHEMA_VERSION {
            return Err(Error::Validation(format!(
                "report schema version {} (expected {REPORT_SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        let unit = [
            ("auroc", self.auroc),
            ("f1", self.f1),
            ("delta_sp", self.delta_sp),
            ("delta_eo", self.delta_eo),
        ];
        for (name, v) in unit {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Validation(format!("{name} = {v} outside [0, 1]")));
            }
        }
        for (name, v) in [("unfairness_pct", self.unfairness_pct), ("instability_pct", self.instability_pct)] {
            if !(0.0..=100.0).contains(&v) {
                return Err(Error::Validation(format!("{name} = {v} outside [0, 100]")));
            }
        }
        if self.bound_max_ratio.is_nan() || self.bound_max_ratio < 0.0 {
            return Err(Error::Validation(format!(
                "bound_max_ratio = {} is not a nonnegative number",
                self.bound_max_ratio
            )));
        }
        Ok(())
    }
}

fn counts(graph: &Graph, preds: &[u8]) -> MetricCounts {
    let groups = graph.groups();
    let labels = graph.labels();
    let mut c = MetricCounts::default();
    for i in graph.masks().test.indices() {
        c.test_size += 1;
        c.test_positive += usize::from(labels[i] == 1);
        let g = if groups[i] == 0 { &mut c.group_0 } else { &mut c.group_1 };
        g.nodes += 1;
        g.label_positive += usize::from(labels[i] == 1);
        g.predicted_positive += usize::from(preds[i] == 1);
    }
    c
}

/// All six metrics plus the bound diagnostic over the test mask.
pub fn evaluate(model: &NiftyModel, graph: &Graph, cfg: &EvalConfig) -> Result<MetricsReport> {
    let test = &graph.masks().test;
    if test.count() == 0 {
        return Err(Error::Metric("test mask is empty".into()));
    }
    let pred = model.predict(graph, None)?;
    let groups = graph.groups();
    let labels = graph.labels();
    let bound = model.verify_stability_bound(
        graph,
        &BoundCheckConfig {
            n_samples: cfg.bound_samples,
            p_n: cfg.p_n,
            noise_stddev: cfg.noise_stddev,
            p_e: cfg.bound_p_e,
            seed: rng::derive_seed(cfg.seed, rng::TAG_EVAL, u64::MAX),
        },
    )?;
    Ok(MetricsReport {
        schema_version: REPORT_SCHEMA_VERSION,
        auroc: auroc(&pred.probs, labels, test)?,
        f1: f1(&pred.labels, labels, test)?,
        unfairness_pct: unfairness(model, graph, cfg.per_node)?,
        instability_pct: instability(model, graph, cfg.p_n, cfg.noise_stddev, cfg.n_trials, cfg.seed)?,
        delta_sp: statistical_parity(&pred.labels, &groups, test)?,
        delta_eo: equal_opportunity(&pred.labels, labels, &groups, test)?,
        bound_max_ratio: bound.max_ratio(),
        bound_max_ratio_noise: bound.max_ratio_noise,
        bound_max_ratio_counterfactual: bound.max_ratio_counterfactual,
        bound_prod_sigma: bound.prod_sigma,
        counts: counts(graph, &pred.labels),
        metadata: serde_json::json!({
            "eval": cfg,
            "unfairness_flip": if cfg.per_node { "per_node" } else { "global" },
            "instability_noise": "training noise law, eval seed stream",
        }),
    })
}
