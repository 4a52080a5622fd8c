//! Dataset construction: CSV tables, Minkowski similarity graphs, splits and
//! a synthetic biased generator.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{build_graph_named, Graph, Mask, Masks};
use crate::rng;

/// A fully numeric table with a binary sensitive column and binary labels.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributeTable {
    pub rows: Array2<f64>,
    pub column_names: Vec<String>,
    pub sensitive_name: String,
    pub label_name: String,
    pub sensitive_idx: usize,
    pub labels: Vec<u8>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Encoding {
    /// One 0/1 column per distinct value, named `column=value`, sorted by value.
    Onehot,
    /// Distinct values sorted lexicographically and numbered from zero.
    Ordinal,
}

/// Column handling for [`load_table`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TableSchema {
    pub sensitive: String,
    pub label: String,
    /// Raw cell text to group id, for non-numeric sensitive columns.
    pub sensitive_map: Option<BTreeMap<String, u8>>,
    /// Raw cell text to class, for labels not already coded 0/1.
    pub label_map: Option<BTreeMap<String, u8>>,
    pub categorical: BTreeMap<String, Encoding>,
    /// Columns removed before anything else happens.
    pub drop: Vec<String>,
}

fn default_p() -> f64 {
    2.0
}
fn default_fraction() -> f64 {
    0.8
}
fn default_max_nodes() -> usize {
    50_000
}

/// Parameters of the similarity-threshold graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityConfig {
    #[serde(default = "default_p")]
    pub minkowski_p: f64,
    #[serde(default = "default_fraction")]
    pub threshold_fraction: f64,
    /// Columns ignored by the distance (the label never participates).
    #[serde(default)]
    pub exclude_columns: Vec<String>,
    #[serde(default = "yes")]
    pub include_sensitive: bool,
    /// z-score each distance column first.
    #[serde(default)]
    pub standardize: bool,
    #[serde(default = "default_max_nodes")]
    pub max_nodes: usize,
    /// Worker threads for the pairwise pass; 0 picks `FAIRGRAPH_THREADS` or
    /// the machine's parallelism.
    #[serde(default)]
    pub threads: usize,
}

fn yes() -> bool {
    true
}

impl Default for SimilarityConfig {
    fn default() -> Self {
        SimilarityConfig {
            minkowski_p: default_p(),
            threshold_fraction: default_fraction(),
            exclude_columns: Vec::new(),
            include_sensitive: true,
            standardize: false,
            max_nodes: default_max_nodes(),
            threads: 0,
        }
    }
}

impl SimilarityConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.minkowski_p > 0.0) || !self.minkowski_p.is_finite() {
            return Err(Error::Validation(format!(
                "minkowski_p must be positive, got {}",
                self.minkowski_p
            )));
        }
        if !(self.threshold_fraction > 0.0 && self.threshold_fraction <= 1.0) {
            return Err(Error::Validation(format!(
                "threshold_fraction must lie in (0, 1], got {}",
                self.threshold_fraction
            )));
        }
        Ok(())
    }
}

fn is_missing(cell: &str) -> bool {
    matches!(
        cell.trim().to_ascii_lowercase().as_str(),
        "" | "na" | "nan" | "null" | "?"
    )
}

/// Loads a CSV (header required) into an [`AttributeTable`].
pub fn load_table(path: &Path, schema: &TableSchema) -> Result<AttributeTable> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::Config(format!("{}: {other:?}", path.display())),
        })?;
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let mut records: Vec<Vec<String>> = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        records.push(rec.iter().map(str::to_string).collect());
    }
    table_from_records(&header, &records, schema)
}

/// Same as [`load_table`] over already-split cells (row 1 is the first data row).
pub fn table_from_records(
    header: &[String],
    records: &[Vec<String>],
    schema: &TableSchema,
) -> Result<AttributeTable> {
    let find = |name: &str| -> Result<usize> {
        header.iter().position(|h| h == name).ok_or_else(|| Error::Ingestion {
            row: 0,
            column: name.to_string(),
            message: "column not found in header".into(),
        })
    };
    let label_col = find(&schema.label)?;
    find(&schema.sensitive)?;
    for name in schema.drop.iter().chain(schema.categorical.keys()) {
        find(name)?;
    }
    if schema.drop.contains(&schema.sensitive) || schema.drop.contains(&schema.label) {
        return Err(Error::Config("cannot drop the sensitive or label column".into()));
    }

    let cell = |i: usize, j: usize| -> Result<&str> {
        let rec = &records[i];
        if rec.len() != header.len() {
            return Err(Error::Ingestion {
                row: i + 1,
                column: header.get(j).cloned().unwrap_or_default(),
                message: format!("expected {} fields, found {}", header.len(), rec.len()),
            });
        }
        let c = rec[j].as_str();
        if is_missing(c) {
            return Err(Error::Ingestion {
                row: i + 1,
                column: header[j].clone(),
                message: "missing value".into(),
            });
        }
        Ok(c)
    };

    let n = records.len();
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let raw = cell(i, label_col)?;
        let label = match &schema.label_map {
            Some(map) => map.get(raw).copied(),
            None => raw.parse::<f64>().ok().and_then(|v| match v {
                v if v == 0.0 => Some(0),
                v if v == 1.0 => Some(1),
                _ => None,
            }),
        };
        match label {
            Some(l @ (0 | 1)) => labels.push(l),
            _ => {
                return Err(Error::Ingestion {
                    row: i + 1,
                    column: schema.label.clone(),
                    message: format!("label '{raw}' does not map to 0 or 1"),
                })
            }
        }
    }

    let mut columns: Vec<(String, Vec<f64>)> = Vec::new();
    let mut sensitive_idx = None;
    for (j, name) in header.iter().enumerate() {
        if j == label_col || schema.drop.contains(name) {
            continue;
        }
        if *name == schema.sensitive {
            let mut values = Vec::with_capacity(n);
            for i in 0..n {
                let raw = cell(i, j)?;
                let v = match &schema.sensitive_map {
                    Some(map) => map.get(raw).map(|&g| f64::from(g)),
                    None => raw.parse::<f64>().ok(),
                };
                match v {
                    Some(v) if v == 0.0 || v == 1.0 => values.push(v),
                    _ => {
                        return Err(Error::Validation(format!(
                            "sensitive value '{raw}' at row {}, column '{name}' is not binary",
                            i + 1
                        )))
                    }
                }
            }
            sensitive_idx = Some(columns.len());
            columns.push((name.clone(), values));
            continue;
        }
        match schema.categorical.get(name) {
            Some(encoding) => {
                let mut raw = Vec::with_capacity(n);
                for i in 0..n {
                    raw.push(cell(i, j)?);
                }
                let levels: Vec<&str> = raw.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
                match encoding {
                    Encoding::Ordinal => {
                        let values = raw
                            .iter()
                            .map(|r| levels.binary_search(r).unwrap() as f64)
                            .collect();
                        columns.push((name.clone(), values));
                    }
                    Encoding::Onehot => {
                        for level in &levels {
                            let values =
                                raw.iter().map(|r| f64::from(u8::from(r == level))).collect();
                            columns.push((format!("{name}={level}"), values));
                        }
                    }
                }
            }
            None => {
                let mut values = Vec::with_capacity(n);
                for i in 0..n {
                    let raw = cell(i, j)?;
                    match raw.parse::<f64>() {
                        Ok(v) if v.is_finite() => values.push(v),
                        _ => {
                            return Err(Error::Ingestion {
                                row: i + 1,
                                column: name.clone(),
                                message: format!("'{raw}' is not numeric"),
                            })
                        }
                    }
                }
                columns.push((name.clone(), values));
            }
        }
    }

    let m = columns.len();
    let mut rows = Array2::zeros((n, m));
    for (j, (_, values)) in columns.iter().enumerate() {
        for (i, &v) in values.iter().enumerate() {
            rows[[i, j]] = v;
        }
    }
    Ok(AttributeTable {
        rows,
        column_names: columns.into_iter().map(|(name, _)| name).collect(),
        sensitive_name: schema.sensitive.clone(),
        label_name: schema.label.clone(),
        sensitive_idx: sensitive_idx.expect("sensitive column located above"),
        labels,
    })
}

/// `1 / (1 + minkowski_p(x, y))`.
pub fn similarity(x: &[f64], y: &[f64], p: f64) -> f64 {
    debug_assert_eq!(x.len(), y.len());
    let sum: f64 = x.iter().zip(y).map(|(a, b)| (a - b).abs().powf(p)).sum();
    1.0 / (1.0 + sum.powf(1.0 / p))
}

pub(crate) fn worker_count(requested: usize) -> usize {
    if requested > 0 {
        return requested;
    }
    std::env::var("FAIRGRAPH_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&t| t > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Runs `f(u)` for every index, interleaved over `threads`
/// workers, and returns results in index order.
pub(crate) fn map_rows<T: Send>(n: usize, threads: usize, f: impl Fn(usize) -> T + Sync) -> Vec<T> {
    let threads = threads.clamp(1, n.max(1));
    if threads == 1 {
        return (0..n).map(f).collect();
    }
    // rows near the top have the most pairs; interleave to balance work
    let f = &f;
    let mut parts: Vec<Vec<(usize, T)>> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..threads)
            .map(|t| {
                scope.spawn(move || {
                    (t..n).step_by(threads).map(|u| (u, f(u))).collect::<Vec<_>>()
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
    });
    let mut out: Vec<Option<T>> = (0..n).map(|_| None).collect();
    for part in parts.drain(..) {
        for (u, v) in part {
            out[u] = Some(v);
        }
    }
    out.into_iter().map(|v| v.expect("every row computed")).collect()
}

/// Matrix of the columns that participate in the distance.
pub fn distance_features(table: &AttributeTable, cfg: &SimilarityConfig) -> Array2<f64> {
    let keep: Vec<usize> = table
        .column_names
        .iter()
        .enumerate()
        .filter(|(j, name)| {
            !cfg.exclude_columns.contains(name)
                && (cfg.include_sensitive || *j != table.sensitive_idx)
        })
        .map(|(j, _)| j)
        .collect();
    let mut x = table.rows.select(ndarray::Axis(1), &keep);
    if cfg.standardize {
        let n = x.nrows() as f64;
        for mut col in x.columns_mut() {
            let mean = col.sum() / n;
            let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let std = var.sqrt();
            col.mapv_inplace(|v| if std > 0.0 { (v - mean) / std } else { 0.0 });
        }
    }
    x
}

/// Connects `u` and `v` when their similarity is at least
/// `threshold_fraction` times the largest off-diagonal similarity.
pub fn build_similarity_graph(table: &AttributeTable, cfg: &SimilarityConfig) -> Result<Graph> {
    cfg.validate()?;
    let n = table.rows.nrows();
    if n < 2 {
        return Err(Error::Validation(format!("need at least 2 rows, got {n}")));
    }
    if n > cfg.max_nodes {
        return Err(Error::Capacity(format!(
            "{n} rows exceed the pairwise budget of {} nodes",
            cfg.max_nodes
        )));
    }
    let x = distance_features(table, cfg);
    let x = x.as_standard_layout();
    let row = |u: usize| x.row(u).to_slice().expect("standard layout");
    let p = cfg.minkowski_p;
    let threads = worker_count(cfg.threads);

    let row_max = map_rows(n, threads, |u| {
        (u + 1..n)
            .map(|v| similarity(row(u), row(v), p))
            .fold(f64::NEG_INFINITY, f64::max)
    });
    let s_max = row_max.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let threshold = cfg.threshold_fraction * s_max;
    if s_max >= 1.0 {
        log::warn!("at least two rows are identical; maximum similarity is 1");
    }

    let per_row = map_rows(n, threads, |u| {
        (u + 1..n)
            .filter(|&v| similarity(row(u), row(v), p) >= threshold)
            .map(|v| (u, v))
            .collect::<Vec<_>>()
    });
    let edges: Vec<(usize, usize)> = per_row.into_iter().flatten().collect();
    if edges.len() == n * (n - 1) / 2 {
        log::warn!("similarity threshold connects every pair of nodes");
    }
    build_graph_named(
        &edges,
        table.rows.clone(),
        table.column_names.clone(),
        table.sensitive_idx,
        table.labels.clone(),
        Masks::empty(n),
    )
}

/// Shuffles labeled nodes and cuts them into train/val/test blocks.
///
/// Block sizes are `floor(fraction * n_labeled)`; nodes labeled
/// [`crate::graph::UNLABELED`] are never assigned.
pub fn split_masks(labels: &[u8], fractions: [f64; 3], seed: u64) -> Result<Masks> {
    if fractions.iter().any(|&f| !(0.0..=1.0).contains(&f)) {
        return Err(Error::Validation(format!("split fractions {fractions:?} out of range")));
    }
    if fractions.iter().sum::<f64>() > 1.0 + 1e-9 {
        return Err(Error::Validation(format!("split fractions {fractions:?} sum above 1")));
    }
    let n = labels.len();
    let mut labeled: Vec<usize> = (0..n)
        .filter(|&i| labels[i] != crate::graph::UNLABELED)
        .collect();
    labeled.shuffle(&mut rng::rng_from_seed(seed));
    let sizes: Vec<usize> = fractions
        .iter()
        .map(|f| (f * labeled.len() as f64 + 1e-9).floor() as usize)
        .collect();
    if let Some(k) = sizes.iter().position(|&s| s == 0) {
        return Err(Error::Validation(format!(
            "split {} is empty ({} labeled nodes, fractions {fractions:?})",
            ["train", "val", "test"][k],
            labeled.len()
        )));
    }
    let mut masks = Vec::with_capacity(3);
    let mut start = 0;
    for size in sizes {
        masks.push(Mask::from_indices(n, &labeled[start..start + size])?);
        start += size;
    }
    let test = masks.pop().unwrap();
    let val = masks.pop().unwrap();
    let train = masks.pop().unwrap();
    Ok(Masks { train, val, test })
}

fn default_degree() -> f64 {
    10.0
}
fn default_signal() -> f64 {
    0.3
}
fn default_split() -> [f64; 3] {
    [0.5, 0.25, 0.25]
}

/// Parameters of the synthetic biased dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_nodes: usize,
    pub n_attrs: usize,
    /// 0 draws edges regardless of group; 1 forbids cross-group edges.
    pub homophily: f64,
    /// Correlation between sensitive attribute and label, in [0, 1].
    pub bias: f64,
    pub seed: u64,
    #[serde(default = "default_degree")]
    pub avg_degree: f64,
    /// Class-mean offset of each non-sensitive feature, in noise std units.
    #[serde(default = "default_signal")]
    pub signal: f64,
    #[serde(default = "default_split")]
    pub split: [f64; 3],
}

impl SynthConfig {
    pub fn new(n_nodes: usize, n_attrs: usize, homophily: f64, bias: f64, seed: u64) -> Self {
        SynthConfig {
            n_nodes,
            n_attrs,
            homophily,
            bias,
            seed,
            avg_degree: default_degree(),
            signal: default_signal(),
            split: default_split(),
        }
    }
}

/// Two Gaussian class clusters, a sensitive column correlated with the label,
/// and edges biased toward same-group pairs.
///
/// Columns `0..n_attrs` hold features; the sensitive attribute is the last
/// column.
pub fn synth_dataset(cfg: &SynthConfig) -> Result<Graph> {
    let n = cfg.n_nodes;
    if n < 10 {
        return Err(Error::Validation(format!("n_nodes must be at least 10, got {n}")));
    }
    if cfg.n_attrs == 0 {
        return Err(Error::Validation("n_attrs must be positive".into()));
    }
    if !(0.0..=1.0).contains(&cfg.homophily) || !(0.0..=1.0).contains(&cfg.bias) {
        return Err(Error::Validation(format!(
            "homophily {} and bias {} must lie in [0, 1]",
            cfg.homophily, cfg.bias
        )));
    }
    if !(cfg.avg_degree >= 0.0) || !cfg.signal.is_finite() {
        return Err(Error::Validation("avg_degree and signal must be finite, degree ≥ 0".into()));
    }

    let mut r = rng::substream(cfg.seed, rng::TAG_SYNTH, 0);
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let m = cfg.n_attrs + 1;
    let mut attrs = Array2::zeros((n, m));
    let mut labels = Vec::with_capacity(n);
    let agree = 0.5 * (1.0 + cfg.bias);
    for i in 0..n {
        let y: u8 = r.random_bool(0.5).into();
        let s = if r.random_bool(agree) { y } else { 1 - y };
        let sign = if y == 1 { 1.0 } else { -1.0 };
        for j in 0..cfg.n_attrs {
            attrs[[i, j]] = sign * cfg.signal + std_normal.sample(&mut r);
        }
        attrs[[i, cfg.n_attrs]] = f64::from(s);
        labels.push(y);
    }

    let mut er = rng::substream(cfg.seed, rng::TAG_SYNTH, 1);
    let base = cfg.avg_degree / (n - 1) as f64;
    let p_same = (base * (1.0 + cfg.homophily)).min(1.0);
    let p_cross = (base * (1.0 - cfg.homophily)).clamp(0.0, 1.0);
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            let same = attrs[[u, cfg.n_attrs]] == attrs[[v, cfg.n_attrs]];
            let p = if same { p_same } else { p_cross };
            if p > 0.0 && er.random_bool(p) {
                edges.push((u, v));
            }
        }
    }

    let masks = split_masks(&labels, cfg.split, rng::derive_seed(cfg.seed, rng::TAG_SPLIT, 0))?;
    let mut columns: Vec<String> = (0..cfg.n_attrs).map(|j| format!("x{j}")).collect();
    columns.push("s".into());
    build_graph_named(&edges, attrs, columns, cfg.n_attrs, labels, masks)
}

/// `meta.json` accepted by the `build-graph` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestMeta {
    pub sensitive: String,
    pub label: String,
    #[serde(default = "default_fraction")]
    pub threshold_fraction: f64,
    #[serde(default = "default_p")]
    pub minkowski_p: f64,
    #[serde(default)]
    pub exclude: Vec<String>,
    #[serde(default)]
    pub standardize: bool,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "yes")]
    pub include_sensitive: bool,
    #[serde(default)]
    pub sensitive_map: Option<BTreeMap<String, u8>>,
    #[serde(default)]
    pub label_map: Option<BTreeMap<String, u8>>,
    #[serde(default)]
    pub categorical: BTreeMap<String, Encoding>,
    #[serde(default)]
    pub drop: Vec<String>,
    #[serde(default = "default_split")]
    pub split: [f64; 3],
}

impl IngestMeta {
    pub fn schema(&self) -> TableSchema {
        TableSchema {
            sensitive: self.sensitive.clone(),
            label: self.label.clone(),
            sensitive_map: self.sensitive_map.clone(),
            label_map: self.label_map.clone(),
            categorical: self.categorical.clone(),
            drop: self.drop.clone(),
        }
    }

    pub fn similarity(&self) -> SimilarityConfig {
        SimilarityConfig {
            minkowski_p: self.minkowski_p,
            threshold_fraction: self.threshold_fraction,
            exclude_columns: self.exclude.clone(),
            include_sensitive: self.include_sensitive,
            standardize: self.standardize,
            ..SimilarityConfig::default()
        }
    }
}

/// Loads a CSV with its `meta.json`, builds the similarity graph and splits it.
pub fn graph_from_csv(csv_path: &Path, meta: &IngestMeta) -> Result<Graph> {
    let table = load_table(csv_path, &meta.schema())?;
    let graph = build_similarity_graph(&table, &meta.similarity())?;
    let masks = split_masks(
        graph.labels(),
        meta.split,
        rng::derive_seed(meta.seed, rng::TAG_SPLIT, 0),
    )?;
    graph.with_masks(masks)
}

/// Node/edge counts and degree statistics of a built graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphStats {
    pub nodes: usize,
    pub edges: usize,
    pub node_features: usize,
    pub degree_mean: f64,
    pub degree_std: f64,
}

pub fn graph_stats(g: &Graph) -> GraphStats {
    let n = g.n_nodes();
    let degrees: Vec<f64> = (0..n).map(|u| g.adjacency().degree(u) as f64).collect();
    let mean = degrees.iter().sum::<f64>() / n as f64;
    let var = degrees.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / n as f64;
    GraphStats {
        nodes: n,
        edges: g.n_edges(),
        node_features: g.n_attrs(),
        degree_mean: mean,
        degree_std: var.sqrt(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    fn table(rows: Array2<f64>) -> AttributeTable {
        let n = rows.nrows();
        let m = rows.ncols();
        AttributeTable {
            column_names: (0..m).map(|j| format!("c{j}")).collect(),
            sensitive_name: format!("c{}", m - 1),
            label_name: "y".into(),
            sensitive_idx: m - 1,
            labels: vec![0; n],
            rows,
        }
    }

    // direct double loop, independent of the blocked implementation
    fn oracle_edges(x: &Array2<f64>, p: f64, frac: f64) -> Vec<(usize, usize)> {
        let n = x.nrows();
        let sim = |u: usize, v: usize| {
            let mut acc = 0.0;
            for k in 0..x.ncols() {
                acc += (x[[u, k]] - x[[v, k]]).abs().powf(p);
            }
            1.0 / (1.0 + acc.powf(1.0 / p))
        };
        let mut best = f64::NEG_INFINITY;
        for u in 0..n {
            for v in 0..n {
                if u != v {
                    best = best.max(sim(u, v));
                }
            }
        }
        let mut out = Vec::new();
        for u in 0..n {
            for v in u + 1..n {
                if sim(u, v) >= frac * best {
                    out.push((u, v));
                }
            }
        }
        out
    }

    #[test]
    fn similarity_values() {
        assert_eq!(similarity(&[1.0, 2.0], &[1.0, 2.0], 2.0), 1.0);
        assert!((similarity(&[0.0, 0.0], &[3.0, 4.0], 2.0) - 1.0 / 6.0).abs() < 1e-15);
        assert!((similarity(&[1.0], &[4.0], 1.0) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn identical_rows_form_clique() {
        let t = table(array![[1.0, 2.0, 0.0], [1.0, 2.0, 0.0], [1.0, 2.0, 0.0]]);
        let g = build_similarity_graph(&t, &SimilarityConfig::default()).unwrap();
        assert_eq!(g.n_edges(), 3);
    }

    #[test]
    fn separated_clusters_stay_disconnected() {
        let t = table(array![
            [0.0, 0.0, 0.0],
            [0.0, 0.0, 0.0],
            [0.0, 0.0, 0.0],
            [100.0, 100.0, 0.0],
            [100.0, 100.0, 0.0]
        ]);
        let cfg = SimilarityConfig {
            threshold_fraction: 0.9,
            ..Default::default()
        };
        let g = build_similarity_graph(&t, &cfg).unwrap();
        let edges: Vec<_> = g.adjacency().edges().collect();
        assert_eq!(edges, oracle_edges(&t.rows, 2.0, 0.9));
        assert_eq!(edges, vec![(0, 1), (0, 2), (1, 2), (3, 4)]);
    }

    #[test]
    fn toy_table_matches_oracle_across_threads() {
        let rows = array![
            [1.0, 0.5, 1.0],
            [0.9, 0.7, 0.0],
            [3.0, 1.0, 1.0],
            [1.1, 0.4, 0.0],
            [2.5, 2.0, 1.0]
        ];
        let t = table(rows.clone());
        for threads in [1, 2, 3] {
            for (p, frac) in [(2.0, 0.8), (1.0, 0.6), (3.0, 0.7)] {
                let cfg = SimilarityConfig {
                    minkowski_p: p,
                    threshold_fraction: frac,
                    threads,
                    ..Default::default()
                };
                let g = build_similarity_graph(&t, &cfg).unwrap();
                let edges: Vec<_> = g.adjacency().edges().collect();
                assert_eq!(edges, oracle_edges(&rows, p, frac), "p={p} frac={frac}");
            }
        }
    }

    #[test]
    fn excluded_and_sensitive_columns() {
        let rows = array![[0.0, 50.0, 0.0], [0.0, -50.0, 1.0], [10.0, 0.0, 0.0]];
        let t = table(rows);
        let cfg = SimilarityConfig {
            exclude_columns: s(&["c1"]),
            include_sensitive: false,
            threshold_fraction: 1.0,
            ..Default::default()
        };
        let x = distance_features(&t, &cfg);
        assert_eq!(x.ncols(), 1);
        let g = build_similarity_graph(&t, &cfg).unwrap();
        assert_eq!(g.adjacency().edges().collect::<Vec<_>>(), vec![(0, 1)]);
    }

    #[test]
    fn standardize_zscores_columns() {
        let t = table(array![[0.0, 0.0], [2.0, 1.0], [4.0, 1.0]]);
        let cfg = SimilarityConfig {
            standardize: true,
            include_sensitive: false,
            ..Default::default()
        };
        let x = distance_features(&t, &cfg);
        assert!((x.column(0).sum()).abs() < 1e-12);
        let var = x.column(0).mapv(|v| v * v).sum() / 3.0;
        assert!((var - 1.0).abs() < 1e-12);
    }

    #[test]
    fn capacity_and_size_errors() {
        let t = table(Array2::zeros((5, 2)));
        let cfg = SimilarityConfig {
            max_nodes: 4,
            ..Default::default()
        };
        assert!(matches!(build_similarity_graph(&t, &cfg), Err(Error::Capacity(_))));
        let one = table(Array2::zeros((1, 2)));
        assert!(build_similarity_graph(&one, &SimilarityConfig::default()).is_err());
        let bad = SimilarityConfig {
            threshold_fraction: 0.0,
            ..Default::default()
        };
        assert!(build_similarity_graph(&t, &bad).is_err());
    }

    fn records(rows: &[&[&str]]) -> Vec<Vec<String>> {
        rows.iter().map(|r| s(r)).collect()
    }

    #[test]
    fn load_simple_table() {
        let header = s(&["a", "b", "s", "y"]);
        let recs = records(&[&["1", "2", "0", "1"], &["3", "4", "1", "0"], &["5", "6", "1", "1"]]);
        let schema = TableSchema {
            sensitive: "s".into(),
            label: "y".into(),
            ..Default::default()
        };
        let t = table_from_records(&header, &recs, &schema).unwrap();
        assert_eq!(t.rows.dim(), (3, 3));
        assert_eq!(t.column_names, s(&["a", "b", "s"]));
        assert_eq!(t.sensitive_idx, 2);
        assert_eq!(t.labels, vec![1, 0, 1]);
    }

    #[test]
    fn sensitive_mapping_and_categoricals() {
        let header = s(&["job", "sex", "amt", "risk"]);
        let recs = records(&[
            &["b", "Male", "10", "good"],
            &["a", "Female", "20", "bad"],
            &["b", "Female", "5", "good"],
        ]);
        let schema = TableSchema {
            sensitive: "sex".into(),
            label: "risk".into(),
            sensitive_map: Some([("Male".to_string(), 0), ("Female".to_string(), 1)].into()),
            label_map: Some([("good".to_string(), 1), ("bad".to_string(), 0)].into()),
            categorical: [("job".to_string(), Encoding::Onehot)].into(),
            drop: vec![],
        };
        let t = table_from_records(&header, &recs, &schema).unwrap();
        assert_eq!(t.column_names, s(&["job=a", "job=b", "sex", "amt"]));
        assert_eq!(t.rows.column(2).to_vec(), vec![0.0, 1.0, 1.0]);
        assert_eq!(t.rows.column(0).to_vec(), vec![0.0, 1.0, 0.0]);
        assert_eq!(t.labels, vec![1, 0, 1]);

        let mut ordinal = schema.clone();
        ordinal.categorical.insert("job".into(), Encoding::Ordinal);
        let t = table_from_records(&header, &recs, &ordinal).unwrap();
        assert_eq!(t.rows.column(0).to_vec(), vec![1.0, 0.0, 1.0]);
    }

    #[test]
    fn ingestion_errors_name_the_cell() {
        let header = s(&["a", "s", "y"]);
        let schema = TableSchema {
            sensitive: "s".into(),
            label: "y".into(),
            ..Default::default()
        };
        let recs = records(&[&["1", "0", "1"], &["NaN", "1", "0"]]);
        match table_from_records(&header, &recs, &schema) {
            Err(Error::Ingestion { row, column, .. }) => {
                assert_eq!((row, column.as_str()), (2, "a"));
            }
            other => panic!("unexpected {other:?}"),
        }
        let recs = records(&[&["x", "0", "1"]]);
        assert!(matches!(
            table_from_records(&header, &recs, &schema),
            Err(Error::Ingestion { row: 1, .. })
        ));
        let recs = records(&[&["1", "2", "1"]]);
        assert!(matches!(
            table_from_records(&header, &recs, &schema),
            Err(Error::Validation(_))
        ));
        let missing = TableSchema {
            sensitive: "gender".into(),
            ..schema
        };
        assert!(matches!(
            table_from_records(&header, &records(&[&["1", "0", "1"]]), &missing),
            Err(Error::Ingestion { row: 0, .. })
        ));
    }

    #[test]
    fn split_sizes_and_determinism() {
        let labels = vec![0u8; 10];
        let m = split_masks(&labels, [0.5, 0.2, 0.3], 7).unwrap();
        assert_eq!((m.train.count(), m.val.count(), m.test.count()), (5, 2, 3));
        assert_eq!(m, split_masks(&labels, [0.5, 0.2, 0.3], 7).unwrap());

        let labels = vec![1u8; 200];
        let a = split_masks(&labels, [0.5, 0.25, 0.25], 1).unwrap();
        let b = split_masks(&labels, [0.5, 0.25, 0.25], 2).unwrap();
        assert_ne!(a.train, b.train);

        assert!(split_masks(&[0u8; 10], [0.5, 0.0, 0.5], 0).is_err());
        assert!(split_masks(&[0u8; 10], [0.6, 0.3, 0.3], 0).is_err());
    }

    #[test]
    fn split_skips_unlabeled() {
        let mut labels = vec![1u8; 20];
        labels[3] = crate::graph::UNLABELED;
        let m = split_masks(&labels, [0.5, 0.25, 0.25], 3).unwrap();
        assert!(!m.train.get(3) && !m.val.get(3) && !m.test.get(3));
    }

    #[test]
    fn synth_unbiased_has_no_correlation() {
        let g = synth_dataset(&SynthConfig::new(1000, 4, 0.5, 0.0, 11)).unwrap();
        let s: Vec<f64> = g.sensitive().to_vec();
        let y: Vec<f64> = g.labels().iter().map(|&l| f64::from(l)).collect();
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let (ms, my) = (mean(&s), mean(&y));
        let cov: f64 = s.iter().zip(&y).map(|(a, b)| (a - ms) * (b - my)).sum();
        let vs: f64 = s.iter().map(|a| (a - ms).powi(2)).sum();
        let vy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
        let corr = cov / (vs * vy).sqrt();
        assert!(corr.abs() < 0.1, "corr {corr}");
    }

    #[test]
    fn synth_full_homophily_has_no_cross_edges() {
        let g = synth_dataset(&SynthConfig::new(200, 3, 1.0, 0.5, 5)).unwrap();
        let s = g.sensitive();
        assert!(g.n_edges() > 0);
        for (u, v) in g.adjacency().edges() {
            assert_eq!(s[u], s[v]);
        }
    }

    #[test]
    fn synth_is_deterministic() {
        use std::collections::hash_map::DefaultHasher;
        use std::hash::{Hash, Hasher};
        let hash = |g: &Graph| {
            let mut h = DefaultHasher::new();
            g.adjacency().hash(&mut h);
            for v in g.attrs() {
                v.to_bits().hash(&mut h);
            }
            g.labels().hash(&mut h);
            g.masks().hash(&mut h);
            h.finish()
        };
        let cfg = SynthConfig::new(100, 3, 0.8, 0.8, 42);
        assert_eq!(hash(&synth_dataset(&cfg).unwrap()), hash(&synth_dataset(&cfg).unwrap()));
        let other = SynthConfig { seed: 43, ..cfg };
        assert_ne!(hash(&synth_dataset(&cfg).unwrap()), hash(&synth_dataset(&other).unwrap()));
        assert!(synth_dataset(&SynthConfig::new(5, 3, 0.5, 0.5, 0)).is_err());
        assert!(synth_dataset(&SynthConfig::new(50, 3, 1.5, 0.5, 0)).is_err());
    }

    proptest! {
        #[test]
        fn similarity_symmetric_and_unit_iff_equal(
            x in prop::collection::vec(-5.0f64..5.0, 3),
            y in prop::collection::vec(-5.0f64..5.0, 3),
            p in 0.5f64..4.0,
        ) {
            let a = similarity(&x, &y, p);
            prop_assert_eq!(a, similarity(&y, &x, p));
            prop_assert!(a > 0.0 && a <= 1.0);
            prop_assert_eq!(a == 1.0, x == y);
        }

        #[test]
        fn graph_invariant_under_row_permutation(
            vals in prop::collection::vec(0u8..4, 16),
            seed in 0u64..1000,
        ) {
            let rows = Array2::from_shape_fn((8, 2), |(i, j)| f64::from(vals[2 * i + j]));
            let mut perm: Vec<usize> = (0..8).collect();
            perm.shuffle(&mut rng::rng_from_seed(seed));
            // row i of the permuted table is row perm[i] of the original
            let permuted = Array2::from_shape_fn((8, 2), |(i, j)| rows[[perm[i], j]]);
            let cfg = SimilarityConfig { include_sensitive: false, ..Default::default() };
            let with_s = |r: Array2<f64>| {
                let mut full = Array2::zeros((8, 3));
                full.slice_mut(ndarray::s![.., ..2]).assign(&r);
                table(full)
            };
            let a = build_similarity_graph(&with_s(rows), &cfg).unwrap();
            let b = build_similarity_graph(&with_s(permuted), &cfg).unwrap();
            let mut mapped: Vec<(usize, usize)> = b
                .adjacency()
                .edges()
                .map(|(u, v)| (perm[u].min(perm[v]), perm[u].max(perm[v])))
                .collect();
            mapped.sort_unstable();
            prop_assert_eq!(mapped, a.adjacency().edges().collect::<Vec<_>>());
        }
    }
}
