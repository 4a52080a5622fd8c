//! Immutable attributed graph with CSR adjacency.
//!
//! Undirected edges are stored as two directed arcs. Every row of `col_idx`
//! is sorted ascending, duplicate-free and never contains the row itself, so
//! neighbor aggregation always visits nodes in the same order.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Label value for nodes without a ground-truth class.
pub const UNLABELED: u8 = 255;

/// Compressed sparse row adjacency of an undirected, unweighted graph.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Csr {
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
}

impl Csr {
    /// Builds a symmetric adjacency from undirected pairs. Duplicates (in
    /// either orientation) collapse and self-loops are dropped.
    pub fn from_edges(n_nodes: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut rows: Vec<Vec<usize>> = vec![Vec::new(); n_nodes];
        for &(u, v) in edges {
            if u >= n_nodes || v >= n_nodes {
                return Err(Error::Structural(format!(
                    "edge ({u}, {v}) out of range for {n_nodes} nodes"
                )));
            }
            if u == v {
                continue;
            }
            rows[u].push(v);
            rows[v].push(u);
        }
        let mut row_ptr = Vec::with_capacity(n_nodes + 1);
        let mut col_idx = Vec::new();
        row_ptr.push(0);
        for mut row in rows {
            row.sort_unstable();
            row.dedup();
            col_idx.extend_from_slice(&row);
            row_ptr.push(col_idx.len());
        }
        Ok(Csr { row_ptr, col_idx })
    }

    /// Wraps raw CSR arrays after checking every structural invariant.
    pub fn from_raw(row_ptr: Vec<usize>, col_idx: Vec<usize>) -> Result<Self> {
        let csr = Csr { row_ptr, col_idx };
        csr.validate()?;
        Ok(csr)
    }

    pub fn empty(n_nodes: usize) -> Self {
        Csr {
            row_ptr: vec![0; n_nodes + 1],
            col_idx: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self
            .row_ptr
            .len()
            .checked_sub(1)
            .ok_or_else(|| Error::Structural("row_ptr must have n_nodes + 1 entries".into()))?;
        if self.row_ptr[0] != 0 || self.row_ptr[n] != self.col_idx.len() {
            return Err(Error::Structural("row_ptr does not span col_idx".into()));
        }
        for u in 0..n {
            if self.row_ptr[u] > self.row_ptr[u + 1] {
                return Err(Error::Structural(format!("row_ptr decreases at row {u}")));
            }
            let row = self.neighbors(u);
            for (i, &v) in row.iter().enumerate() {
                if v >= n {
                    return Err(Error::Structural(format!("arc ({u}, {v}) out of range")));
                }
                if v == u {
                    return Err(Error::Structural(format!("self-loop at node {u}")));
                }
                if i > 0 && row[i - 1] >= v {
                    return Err(Error::Structural(format!(
                        "row {u} is not strictly increasing"
                    )));
                }
            }
        }
        for u in 0..n {
            for &v in self.neighbors(u) {
                if !self.has_arc(v, u) {
                    return Err(Error::Structural(format!(
                        "arc ({u}, {v}) has no reverse arc"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn n_nodes(&self) -> usize {
        self.row_ptr.len() - 1
    }

    /// Number of undirected edges.
    pub fn n_edges(&self) -> usize {
        self.col_idx.len() / 2
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    pub fn neighbors(&self, u: usize) -> &[usize] {
        &self.col_idx[self.row_ptr[u]..self.row_ptr[u + 1]]
    }

    pub fn degree(&self, u: usize) -> usize {
        self.row_ptr[u + 1] - self.row_ptr[u]
    }

    pub fn has_arc(&self, u: usize, v: usize) -> bool {
        self.neighbors(u).binary_search(&v).is_ok()
    }

    /// Undirected edges as `(u, v)` with `u < v`, in row-major order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.n_nodes()).flat_map(move |u| {
            self.neighbors(u)
                .iter()
                .copied()
                .filter(move |&v| v > u)
                .map(move |v| (u, v))
        })
    }

    /// Row `u` of the adjacency as a dense 0/1 vector.
    pub fn incidence_row(&self, u: usize) -> Array1<f64> {
        let mut row = Array1::zeros(self.n_nodes());
        for &v in self.neighbors(u) {
            row[v] = 1.0;
        }
        row
    }
}

/// Boolean node selector.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Mask {
    bits: Vec<bool>,
}

impl Mask {
    pub fn new(bits: Vec<bool>) -> Self {
        Mask { bits }
    }

    pub fn none(n: usize) -> Self {
        Mask {
            bits: vec![false; n],
        }
    }

    pub fn all(n: usize) -> Self {
        Mask { bits: vec![true; n] }
    }

    pub fn from_indices(n: usize, indices: &[usize]) -> Result<Self> {
        let mut bits = vec![false; n];
        for &i in indices {
            *bits
                .get_mut(i)
                .ok_or_else(|| Error::Structural(format!("mask index {i} out of range {n}")))? =
                true;
        }
        Ok(Mask { bits })
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn get(&self, i: usize) -> bool {
        self.bits[i]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn indices(&self) -> Vec<usize> {
        self.bits
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| b.then_some(i))
            .collect()
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }
}

/// Train / validation / test split.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Masks {
    pub train: Mask,
    pub val: Mask,
    pub test: Mask,
}

impl Masks {
    pub fn empty(n: usize) -> Self {
        Masks {
            train: Mask::none(n),
            val: Mask::none(n),
            test: Mask::none(n),
        }
    }
}

/// An undirected attributed graph with a binary sensitive attribute column.
#[derive(Debug, Clone)]
pub struct Graph {
    adj: Arc<Csr>,
    attrs: Array2<f64>,
    columns: Vec<String>,
    sensitive_idx: usize,
    labels: Vec<u8>,
    masks: Masks,
}

impl Graph {
    pub fn n_nodes(&self) -> usize {
        self.attrs.nrows()
    }

    pub fn n_edges(&self) -> usize {
        self.adj.n_edges()
    }

    pub fn n_attrs(&self) -> usize {
        self.attrs.ncols()
    }

    pub fn adjacency(&self) -> &Arc<Csr> {
        &self.adj
    }

    pub fn attrs(&self) -> &Array2<f64> {
        &self.attrs
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn sensitive_idx(&self) -> usize {
        self.sensitive_idx
    }

    pub fn sensitive(&self) -> ArrayView1<'_, f64> {
        self.attrs.column(self.sensitive_idx)
    }

    /// Sensitive attribute as group ids in {0, 1}.
    pub fn groups(&self) -> Vec<u8> {
        self.sensitive().iter().map(|&s| s as u8).collect()
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn masks(&self) -> &Masks {
        &self.masks
    }

    pub fn neighbors(&self, u: usize) -> &[usize] {
        self.adj.neighbors(u)
    }

    pub fn incidence_row(&self, u: usize) -> Array1<f64> {
        self.adj.incidence_row(u)
    }

    /// Attribute row followed by incidence row, length `M + N`.
    pub fn concat_b(&self, u: usize) -> Array1<f64> {
        concat_b(&self.attrs, &self.adj, u)
    }

    /// Same graph with a different split.
    pub fn with_masks(&self, masks: Masks) -> Result<Graph> {
        validate_masks(&masks, &self.labels)?;
        Ok(Graph {
            masks,
            ..self.clone()
        })
    }
}

/// `[x_u; I_u]` for arbitrary attributes and adjacency (used for views too).
pub fn concat_b(attrs: &Array2<f64>, adj: &Csr, u: usize) -> Array1<f64> {
    let mut b = Array1::zeros(attrs.ncols() + adj.n_nodes());
    b.slice_mut(ndarray::s![..attrs.ncols()])
        .assign(&attrs.row(u));
    for &v in adj.neighbors(u) {
        b[attrs.ncols() + v] = 1.0;
    }
    b
}

fn validate_masks(masks: &Masks, labels: &[u8]) -> Result<()> {
    let n = labels.len();
    for (name, m) in [
        ("train", &masks.train),
        ("val", &masks.val),
        ("test", &masks.test),
    ] {
        if m.len() != n {
            return Err(Error::Structural(format!(
                "{name} mask has length {}, expected {n}",
                m.len()
            )));
        }
        if let Some(i) = m.indices().into_iter().find(|&i| labels[i] == UNLABELED) {
            return Err(Error::Validation(format!(
                "{name} mask selects unlabeled node {i}"
            )));
        }
    }
    for i in 0..n {
        let hits = masks.train.get(i) as u8 + masks.val.get(i) as u8 + masks.test.get(i) as u8;
        if hits > 1 {
            return Err(Error::Validation(format!(
                "node {i} belongs to more than one split"
            )));
        }
    }
    Ok(())
}

pub(crate) fn check_binary_column(attrs: &Array2<f64>, col: usize) -> Result<()> {
    if let Some((i, v)) = attrs
        .column(col)
        .iter()
        .enumerate()
        .find(|(_, &v)| v != 0.0 && v != 1.0)
    {
        return Err(Error::Validation(format!(
            "sensitive column {col} has non-binary value {v} at node {i}"
        )));
    }
    Ok(())
}

/// Validates inputs and assembles a [`Graph`].
pub fn build_graph(
    edges: &[(usize, usize)],
    attrs: Array2<f64>,
    sensitive_idx: usize,
    labels: Vec<u8>,
    masks: Masks,
) -> Result<Graph> {
    let columns = (0..attrs.ncols()).map(|j| format!("x{j}")).collect();
    build_graph_named(edges, attrs, columns, sensitive_idx, labels, masks)
}

/// [`build_graph`] with explicit attribute column names.
pub fn build_graph_named(
    edges: &[(usize, usize)],
    attrs: Array2<f64>,
    columns: Vec<String>,
    sensitive_idx: usize,
    labels: Vec<u8>,
    masks: Masks,
) -> Result<Graph> {
    let n = attrs.nrows();
    if sensitive_idx >= attrs.ncols() {
        return Err(Error::Structural(format!(
            "sensitive column {sensitive_idx} out of range for {} attributes",
            attrs.ncols()
        )));
    }
    if columns.len() != attrs.ncols() {
        return Err(Error::Structural(format!(
            "{} column names for {} attributes",
            columns.len(),
            attrs.ncols()
        )));
    }
    if labels.len() != n {
        return Err(Error::Structural(format!(
            "{} labels for {n} nodes",
            labels.len()
        )));
    }
    if let Some((i, l)) = labels
        .iter()
        .enumerate()
        .find(|(_, &l)| l > 1 && l != UNLABELED)
    {
        return Err(Error::Validation(format!("label {l} at node {i} is not binary")));
    }
    if attrs.iter().any(|v| !v.is_finite()) {
        return Err(Error::Validation("attribute matrix has non-finite values".into()));
    }
    check_binary_column(&attrs, sensitive_idx)?;
    validate_masks(&masks, &labels)?;
    let adj = Csr::from_edges(n, edges)?;
    Ok(Graph {
        adj: Arc::new(adj),
        attrs,
        columns,
        sensitive_idx,
        labels,
        masks,
    })
}

const EDGES_FILE: &str = "edges.tsv";
const ATTRS_FILE: &str = "attrs.csv";
const META_FILE: &str = "meta.json";

/// `meta.json` of a serialized graph directory.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct GraphMeta {
    pub sensitive: String,
    pub label: String,
    pub masks: BTreeMap<String, Vec<usize>>,
    pub seed: Option<u64>,
}

impl Graph {
    /// Writes `edges.tsv`, `attrs.csv` and `meta.json` into `dir`.
    ///
    /// Output is byte-identical for identical graphs. Floats use Rust's
    /// shortest round-trip formatting; unlabeled nodes get an empty label cell.
    pub fn write_dir(&self, dir: &Path, label_name: &str, seed: Option<u64>) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

        let mut edges = String::new();
        for (u, v) in self.adj.edges() {
            edges.push_str(&format!("{u}\t{v}\n"));
        }
        let path = dir.join(EDGES_FILE);
        fs::write(&path, edges).map_err(|e| Error::io(&path, e))?;

        let path = dir.join(ATTRS_FILE);
        let mut w = csv::Writer::from_path(&path)?;
        let mut header: Vec<&str> = self.columns.iter().map(String::as_str).collect();
        header.push(label_name);
        w.write_record(&header)?;
        for (i, row) in self.attrs.rows().into_iter().enumerate() {
            let mut rec: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
            rec.push(match self.labels[i] {
                UNLABELED => String::new(),
                l => l.to_string(),
            });
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;

        let mut masks = BTreeMap::new();
        masks.insert("train".to_string(), self.masks.train.indices());
        masks.insert("val".to_string(), self.masks.val.indices());
        masks.insert("test".to_string(), self.masks.test.indices());
        let meta = GraphMeta {
            sensitive: self.columns[self.sensitive_idx].clone(),
            label: label_name.to_string(),
            masks,
            seed,
        };
        let path = dir.join(META_FILE);
        let mut text = serde_json::to_string_pretty(&meta)?;
        text.push('\n');
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        Ok(())
    }

    /// Reads a directory written by [`Graph::write_dir`].
    pub fn read_dir(dir: &Path) -> Result<(Graph, GraphMeta)> {
        let path = dir.join(META_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let meta: GraphMeta = serde_json::from_str(&text)?;

        let path = dir.join(ATTRS_FILE);
        let mut r = csv::Reader::from_path(&path)?;
        let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
        let label_col = header
            .iter()
            .position(|h| *h == meta.label)
            .ok_or_else(|| Error::Ingestion {
                row: 0,
                column: meta.label.clone(),
                message: "label column missing from attrs.csv".into(),
            })?;
        let columns: Vec<String> = header
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != label_col)
            .map(|(_, h)| h.clone())
            .collect();
        let sensitive_idx = columns
            .iter()
            .position(|h| *h == meta.sensitive)
            .ok_or_else(|| Error::Ingestion {
                row: 0,
                column: meta.sensitive.clone(),
                message: "sensitive column missing from attrs.csv".into(),
            })?;
        let mut values = Vec::new();
        let mut labels = Vec::new();
        for (i, rec) in r.records().enumerate() {
            let rec = rec?;
            for (j, cell) in rec.iter().enumerate() {
                if j == label_col {
                    labels.push(match cell.trim() {
                        "" => UNLABELED,
                        s => s.parse::<u8>().map_err(|_| Error::Ingestion {
                            row: i + 1,
                            column: header[j].clone(),
                            message: format!("label '{s}' is not an integer"),
                        })?,
                    });
                } else {
                    values.push(cell.trim().parse::<f64>().map_err(|_| Error::Ingestion {
                        row: i + 1,
                        column: header[j].clone(),
                        message: format!("'{cell}' is not numeric"),
                    })?);
                }
            }
        }
        let n = labels.len();
        let attrs = Array2::from_shape_vec((n, columns.len()), values)
            .map_err(|e| Error::Structural(e.to_string()))?;

        let path = dir.join(EDGES_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let mut edges = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let mut it = line.split('\t').map(|t| t.trim().parse::<usize>());
            match (it.next(), it.next(), it.next()) {
                (Some(Ok(u)), Some(Ok(v)), None) => edges.push((u, v)),
                _ => {
                    return Err(Error::Ingestion {
                        row: i + 1,
                        column: EDGES_FILE.into(),
                        message: format!("malformed edge line '{line}'"),
                    })
                }
            }
        }

        let get = |name: &str| -> Result<Mask> {
            Mask::from_indices(n, meta.masks.get(name).map_or(&[][..], |v| v.as_slice()))
        };
        let masks = Masks {
            train: get("train")?,
            val: get("val")?,
            test: get("test")?,
        };
        let g = build_graph_named(&edges, attrs, columns, sensitive_idx, labels, masks)?;
        Ok((g, meta))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    fn plain(n: usize, edges: &[(usize, usize)]) -> Graph {
        let attrs = Array2::zeros((n, 2));
        build_graph(edges, attrs, 1, vec![0; n], Masks::empty(n)).unwrap()
    }

    #[test]
    fn single_edge_csr() {
        let g = plain(2, &[(0, 1)]);
        assert_eq!(g.adjacency().row_ptr(), &[0, 1, 2]);
        assert_eq!(g.adjacency().col_idx(), &[1, 0]);
    }

    #[test]
    fn duplicates_and_self_loops_collapse() {
        let g = plain(3, &[(0, 1), (1, 0), (2, 2)]);
        assert_eq!(g.n_edges(), 1);
        assert!(g.neighbors(2).is_empty());
    }

    #[test]
    fn triangle_degrees_match_dense_adjacency() {
        let edges = [(0, 1), (1, 2), (0, 2)];
        let g = plain(3, &edges);
        let mut dense = [[0u8; 3]; 3];
        for &(u, v) in &edges {
            dense[u][v] = 1;
            dense[v][u] = 1;
        }
        for u in 0..3 {
            let deg: u8 = dense[u].iter().sum();
            assert_eq!(g.adjacency().degree(u), deg as usize);
            assert_eq!(deg, 2);
        }
        assert_eq!(g.neighbors(0), &[1, 2]);
    }

    #[test]
    fn star_center_sees_all_leaves() {
        let edges: Vec<_> = (1..6).map(|v| (0, v)).collect();
        let g = plain(6, &edges);
        assert_eq!(g.neighbors(0), &[1, 2, 3, 4, 5]);
        for v in 1..6 {
            assert_eq!(g.neighbors(v), &[0]);
        }
    }

    #[test]
    fn incidence_rows() {
        let g = plain(3, &[(0, 1), (1, 2), (0, 2)]);
        assert_eq!(g.incidence_row(0).to_vec(), vec![0.0, 1.0, 1.0]);
        let iso = plain(3, &[(0, 1)]);
        assert_eq!(iso.incidence_row(2).to_vec(), vec![0.0; 3]);
        let k4: Vec<_> = (0..4)
            .flat_map(|u| (u + 1..4).map(move |v| (u, v)))
            .collect();
        let g = plain(4, &k4);
        assert_eq!(g.incidence_row(2).to_vec(), vec![1.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn concat_b_layout() {
        let attrs = array![[2.0, 1.0], [0.0, 1.0], [3.0, 0.0]];
        let g = build_graph(
            &[(0, 1), (1, 2), (0, 2)],
            attrs.clone(),
            1,
            vec![0; 3],
            Masks::empty(3),
        )
        .unwrap();
        assert_eq!(g.concat_b(0).to_vec(), vec![2.0, 1.0, 0.0, 1.0, 1.0]);

        // attribute-only change: difference norm equals attribute delta norm
        let mut moved = attrs.clone();
        moved[[0, 0]] += 3.0;
        moved[[0, 1]] -= 1.0; // binary column stays binary
        let diff = concat_b(&moved, g.adjacency(), 0) - g.concat_b(0);
        let norm = diff.mapv(|d| d * d).sum().sqrt();
        assert!((norm - 10f64.sqrt()).abs() < 1e-12);

        let zero = plain(2, &[]);
        assert!(zero.concat_b(1).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_bad_inputs() {
        let attrs = Array2::zeros((2, 2));
        assert!(matches!(
            build_graph(&[(0, 5)], attrs.clone(), 0, vec![0; 2], Masks::empty(2)),
            Err(Error::Structural(_))
        ));
        let mut bad = attrs.clone();
        bad[[1, 0]] = 0.5;
        assert!(matches!(
            build_graph(&[], bad, 0, vec![0; 2], Masks::empty(2)),
            Err(Error::Validation(_))
        ));
        let overlap = Masks {
            train: Mask::all(2),
            val: Mask::from_indices(2, &[1]).unwrap(),
            test: Mask::none(2),
        };
        assert!(build_graph(&[], attrs.clone(), 0, vec![0; 2], overlap).is_err());
        let unlabeled = Masks {
            train: Mask::all(2),
            val: Mask::none(2),
            test: Mask::none(2),
        };
        assert!(build_graph(&[], attrs, 0, vec![0, UNLABELED], unlabeled).is_err());
    }

    #[test]
    fn raw_csr_validation() {
        assert!(Csr::from_raw(vec![0, 1, 2], vec![1, 0]).is_ok());
        assert!(Csr::from_raw(vec![0, 1, 1], vec![1]).is_err()); // asymmetric
        assert!(Csr::from_raw(vec![0, 1, 2], vec![0, 1]).is_err()); // self loops
        assert!(Csr::from_raw(vec![0, 2, 1], vec![1, 0]).is_err());
    }

    #[test]
    fn directory_round_trip() {
        let attrs = array![[0.5, 1.0], [1.25, 0.0], [-3.0, 1.0]];
        let masks = Masks {
            train: Mask::from_indices(3, &[0]).unwrap(),
            val: Mask::none(3),
            test: Mask::from_indices(3, &[1]).unwrap(),
        };
        let g = build_graph_named(
            &[(0, 1), (2, 1)],
            attrs,
            vec!["a".into(), "sex".into()],
            1,
            vec![1, 0, UNLABELED],
            masks,
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        g.write_dir(dir.path(), "y", Some(3)).unwrap();
        let edges = fs::read_to_string(dir.path().join("edges.tsv")).unwrap();
        assert_eq!(edges, "0\t1\n1\t2\n");
        let (back, meta) = Graph::read_dir(dir.path()).unwrap();
        assert_eq!(meta.seed, Some(3));
        assert_eq!(back.attrs(), g.attrs());
        assert_eq!(back.labels(), g.labels());
        assert_eq!(back.masks(), g.masks());
        assert_eq!(back.adjacency(), g.adjacency());
        assert_eq!(back.sensitive_idx(), 1);
    }

    proptest! {
        #[test]
        fn csr_invariants(n in 1usize..25, raw in prop::collection::vec((0usize..25, 0usize..25), 0..80)) {
            let edges: Vec<_> = raw.into_iter().map(|(u, v)| (u % n, v % n)).collect();
            let a = Csr::from_edges(n, &edges).unwrap();
            let b = Csr::from_edges(n, &edges).unwrap();
            prop_assert_eq!(&a, &b);
            a.validate().unwrap();
            let mut total = 0.0;
            for u in 0..n {
                let row = a.neighbors(u);
                prop_assert!(row.windows(2).all(|w| w[0] < w[1]));
                prop_assert!(!row.contains(&u));
                for &v in row {
                    prop_assert!(a.neighbors(v).contains(&u));
                }
                total += a.incidence_row(u).sum();
            }
            prop_assert_eq!(total as usize, 2 * a.n_edges());
        }
    }
}
