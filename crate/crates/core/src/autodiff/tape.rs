//! Reverse-mode differentiation over dense `f64` matrices.
//!
//! A [`Tape`] records every operation in creation order, which is already a
//! topological order, so `backward` is a single reverse sweep. Scalars are
//! 1×1 matrices and column vectors are N×1.

use std::sync::Arc;

use ndarray::{Array1, Array2, Axis, Zip};

use crate::error::{Error, Result};
use crate::graph::Csr;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Lower clamp for probabilities fed to [`Tape::bce`].
pub const PROB_EPS: f64 = 1e-7;
/// Guard added to the norm product in [`Tape::cosine_distance_rows`].
pub const COSINE_EPS: f64 = 1e-8;
const NORMALIZE_EPS: f64 = 1e-12;

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Array2<f64>,
        inv_std: Array1<f64>,
    },
    ColAffine {
        x: Var,
        scale: Array1<f64>,
    },
    RowNormalize {
        a: Var,
        norms: Array1<f64>,
    },
    Mean(Var),
    Bce {
        probs: Var,
        targets: Vec<(usize, f64)>,
    },
    Cosine(Var, Var),
    NeighborAgg {
        h: Var,
        adj: Arc<Csr>,
        mean: bool,
    },
}

#[derive(Debug)]
struct Node {
    value: Array2<f64>,
    grad: Option<Array2<f64>>,
    requires_grad: bool,
    op: Op,
}

/// Batch statistics produced by a training-mode batchnorm.
#[derive(Debug, Clone)]
pub struct BatchStats {
    pub mean: Array1<f64>,
    /// Biased variance (divides by N).
    pub var: Array1<f64>,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    backward_done: bool,
}

fn shape_err(op: &str, a: &Array2<f64>, b: &Array2<f64>) -> Error {
    Error::Structural(format!(
        "{op}: incompatible shapes {:?} and {:?}",
        a.dim(),
        b.dim()
    ))
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Array2<f64>, requires_grad: bool, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Array2<f64>) -> Var {
        self.push(value, true, Op::Leaf)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(value, false, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    /// Value of a 1×1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    pub fn grad(&self, v: Var) -> Option<&Array2<f64>> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    /// Clears every gradient so `backward` may run again.
    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
        self.backward_done = false;
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.ncols() != bv.nrows() {
            return Err(shape_err("matmul", av, bv));
        }
        let out = av.dot(bv);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, rg, Op::MatMul(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.dim() != bv.dim() {
            return Err(shape_err("add", av, bv));
        }
        let out = av + bv;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, rg, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.dim() != bv.dim() {
            return Err(shape_err("sub", av, bv));
        }
        let out = av - bv;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, rg, Op::Sub(a, b)))
    }

    /// `a + 1·row` where `row` is 1×C.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (av, rv) = (self.value(a), self.value(row));
        if rv.nrows() != 1 || rv.ncols() != av.ncols() {
            return Err(shape_err("add_row", av, rv));
        }
        let out = av + rv;
        let rg = self.rg(a) || self.rg(row);
        Ok(self.push(out, rg, Op::AddRow(a, row)))
    }

    pub fn mul_elem(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.dim() != bv.dim() {
            return Err(shape_err("mul_elem", av, bv));
        }
        let out = av * bv;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, rg, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a) * c;
        let rg = self.rg(a);
        self.push(out, rg, Op::Scale(a, c))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(|x| x.max(0.0));
        let rg = self.rg(a);
        self.push(out, rg, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(sigmoid);
        let rg = self.rg(a);
        self.push(out, rg, Op::Sigmoid(a))
    }

    /// Same value, no gradient flows back to `a`'s ancestors.
    pub fn stop_grad(&mut self, a: Var) -> Var {
        let out = self.value(a).clone();
        self.push(out, false, Op::Leaf)
    }

    /// Training-mode batch normalization over rows.
    pub fn batchnorm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<(Var, BatchStats)> {
        let xv = self.value(x);
        let c = xv.ncols();
        for p in [gamma, beta] {
            let pv = self.value(p);
            if pv.dim() != (1, c) {
                return Err(shape_err("batchnorm", xv, pv));
            }
        }
        if xv.nrows() == 0 {
            return Err(Error::Structural("batchnorm over an empty batch".into()));
        }
        let mean = xv.mean_axis(Axis(0)).expect("non-empty batch");
        let centered = xv - &mean;
        let var = centered.mapv(|d| d * d).mean_axis(Axis(0)).expect("non-empty batch");
        let inv_std = var.mapv(|v| 1.0 / (v + eps).sqrt());
        let xhat = &centered * &inv_std;
        let out = &xhat * &self.value(gamma).row(0) + &self.value(beta).row(0);
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        let var_out = self.push(
            out,
            rg,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        );
        Ok((var_out, BatchStats { mean, var }))
    }

    /// Column-wise `x * scale + shift` with constant coefficients.
    pub fn col_affine(&mut self, x: Var, scale: Array1<f64>, shift: &Array1<f64>) -> Result<Var> {
        let xv = self.value(x);
        if scale.len() != xv.ncols() || shift.len() != xv.ncols() {
            return Err(Error::Structural("col_affine: coefficient length mismatch".into()));
        }
        let out = xv * &scale + shift;
        let rg = self.rg(x);
        Ok(self.push(out, rg, Op::ColAffine { x, scale }))
    }

    /// Divides each row by its L2 norm (rows with norm below 1e-12 are
    /// divided by 1e-12).
    pub fn row_l2_normalize(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let norms = av
            .rows()
            .into_iter()
            .map(|r| r.dot(&r).sqrt().max(NORMALIZE_EPS))
            .collect::<Array1<f64>>();
        let out = av / &norms.view().insert_axis(Axis(1));
        let rg = self.rg(a);
        self.push(out, rg, Op::RowNormalize { a, norms })
    }

    /// Mean over all entries, as a 1×1 node.
    pub fn mean_scalar(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let m = av.sum() / av.len().max(1) as f64;
        let rg = self.rg(a);
        self.push(Array2::from_elem((1, 1), m), rg, Op::Mean(a))
    }

    /// Mean binary cross entropy of an N×1 probability column over the
    /// selected nodes. Probabilities are clamped to `[1e-7, 1 − 1e-7]`.
    pub fn bce(&mut self, probs: Var, targets: &[u8], mask: &[usize]) -> Result<Var> {
        let pv = self.value(probs);
        if pv.ncols() != 1 || pv.nrows() != targets.len() {
            return Err(Error::Structural(format!(
                "bce: probabilities {:?} vs {} targets",
                pv.dim(),
                targets.len()
            )));
        }
        if mask.is_empty() {
            return Err(Error::Structural("bce over an empty mask".into()));
        }
        let mut loss = 0.0;
        let mut selected = Vec::with_capacity(mask.len());
        for &i in mask {
            let y = f64::from(targets[i]);
            if y != 0.0 && y != 1.0 {
                return Err(Error::Validation(format!("bce target {y} at node {i}")));
            }
            let p = pv[[i, 0]].clamp(PROB_EPS, 1.0 - PROB_EPS);
            loss -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
            selected.push((i, y));
        }
        loss /= mask.len() as f64;
        let rg = self.rg(probs);
        Ok(self.push(
            Array2::from_elem((1, 1), loss),
            rg,
            Op::Bce {
                probs,
                targets: selected,
            },
        ))
    }

    /// `1 − ⟨a_u, b_u⟩ / (‖a_u‖‖b_u‖ + 1e-8)` per row, as an N×1 column.
    pub fn cosine_distance_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.dim() != bv.dim() {
            return Err(shape_err("cosine_distance_rows", av, bv));
        }
        let out = Zip::from(av.rows())
            .and(bv.rows())
            .map_collect(|ra, rb| {
                let dot = ra.dot(&rb);
                let den = ra.dot(&ra).sqrt() * rb.dot(&rb).sqrt() + COSINE_EPS;
                1.0 - dot / den
            })
            .insert_axis(Axis(1));
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, rg, Op::Cosine(a, b)))
    }

    /// Sum (or mean) of neighbor rows: `out_u = Σ_{v ∈ N(u)} h_v`.
    pub fn neighbor_aggregate(&mut self, h: Var, adj: &Arc<Csr>, mean: bool) -> Result<Var> {
        let hv = self.value(h);
        if hv.nrows() != adj.n_nodes() {
            return Err(Error::Structural(format!(
                "neighbor_aggregate: {} rows for {} nodes",
                hv.nrows(),
                adj.n_nodes()
            )));
        }
        let mut out = Array2::zeros(hv.dim());
        for u in 0..adj.n_nodes() {
            let nbrs = adj.neighbors(u);
            let mut row = out.row_mut(u);
            for &v in nbrs {
                row += &hv.row(v);
            }
            if mean && !nbrs.is_empty() {
                row /= nbrs.len() as f64;
            }
        }
        let rg = self.rg(h);
        Ok(self.push(
            out,
            rg,
            Op::NeighborAgg {
                h,
                adj: Arc::clone(adj),
                mean,
            },
        ))
    }

    fn accumulate(&mut self, v: Var, g: Array2<f64>) {
        let node = &mut self.nodes[v.0];
        if !node.requires_grad {
            return;
        }
        match &mut node.grad {
            Some(acc) => *acc += &g,
            None => node.grad = Some(g),
        }
    }

    /// Reverse sweep from a 1×1 `loss`, accumulating into every ancestor that
    /// requires a gradient.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::Autodiff(
                "backward already ran on this tape; call zero_grad first".into(),
            ));
        }
        if self.value(loss).dim() != (1, 1) {
            return Err(Error::Autodiff(format!(
                "loss must be 1x1, got {:?}",
                self.value(loss).dim()
            )));
        }
        self.backward_done = true;
        if !self.rg(loss) {
            return Ok(());
        }
        self.nodes[loss.0].grad = Some(Array2::ones((1, 1)));
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = self.nodes[i].grad.take() else {
                continue;
            };
            let contributions = self.local_grads(i, &g);
            self.nodes[i].grad = Some(g);
            for (v, dv) in contributions {
                self.accumulate(v, dv);
            }
        }
        Ok(())
    }

    fn local_grads(&self, i: usize, g: &Array2<f64>) -> Vec<(Var, Array2<f64>)> {
        let node = &self.nodes[i];
        let val = |v: Var| &self.nodes[v.0].value;
        let mut out = Vec::with_capacity(3);
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.rg(*a) {
                    out.push((*a, g.dot(&val(*b).t())));
                }
                if self.rg(*b) {
                    out.push((*b, val(*a).t().dot(g)));
                }
            }
            Op::Add(a, b) => {
                out.push((*a, g.clone()));
                out.push((*b, g.clone()));
            }
            Op::Sub(a, b) => {
                out.push((*a, g.clone()));
                out.push((*b, -g));
            }
            Op::AddRow(a, row) => {
                out.push((*a, g.clone()));
                if self.rg(*row) {
                    out.push((*row, g.sum_axis(Axis(0)).insert_axis(Axis(0))));
                }
            }
            Op::Mul(a, b) => {
                if self.rg(*a) {
                    out.push((*a, g * val(*b)));
                }
                if self.rg(*b) {
                    out.push((*b, g * val(*a)));
                }
            }
            Op::Scale(a, c) => out.push((*a, g * *c)),
            Op::Relu(a) => {
                let mut d = g.clone();
                Zip::from(&mut d).and(val(*a)).for_each(|d, &x| {
                    if x <= 0.0 {
                        *d = 0.0;
                    }
                });
                out.push((*a, d));
            }
            Op::Sigmoid(a) => {
                let d = g * &node.value.mapv(|s| s * (1.0 - s));
                out.push((*a, d));
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let n = xhat.nrows() as f64;
                if self.rg(*gamma) {
                    out.push((*gamma, (g * xhat).sum_axis(Axis(0)).insert_axis(Axis(0))));
                }
                if self.rg(*beta) {
                    out.push((*beta, g.sum_axis(Axis(0)).insert_axis(Axis(0))));
                }
                if self.rg(*x) {
                    let dxhat = g * &val(*gamma).row(0);
                    let sum_d = dxhat.sum_axis(Axis(0));
                    let sum_dx = (&dxhat * xhat).sum_axis(Axis(0));
                    let dx = (&dxhat * n - &sum_d - xhat * &sum_dx) * &(inv_std / n);
                    out.push((*x, dx));
                }
            }
            Op::ColAffine { x, scale } => out.push((*x, g * scale)),
            Op::RowNormalize { a, norms } => {
                let av = val(*a);
                let mut d = Array2::zeros(av.dim());
                for (u, mut row) in d.rows_mut().into_iter().enumerate() {
                    let n = norms[u];
                    let gu = g.row(u);
                    let au = av.row(u);
                    if n > NORMALIZE_EPS {
                        let yg = au.dot(&gu) / (n * n);
                        row.assign(&((&gu - &(&au * yg)) / n));
                    } else {
                        row.assign(&(&gu / n));
                    }
                }
                out.push((*a, d));
            }
            Op::Mean(a) => {
                let av = val(*a);
                out.push((*a, Array2::from_elem(av.dim(), g[[0, 0]] / av.len().max(1) as f64)));
            }
            Op::Bce { probs, targets } => {
                let pv = val(*probs);
                let mut d = Array2::zeros(pv.dim());
                let scale = g[[0, 0]] / targets.len() as f64;
                for &(i, y) in targets {
                    let p = pv[[i, 0]];
                    if p > PROB_EPS && p < 1.0 - PROB_EPS {
                        d[[i, 0]] = -scale * (y / p - (1.0 - y) / (1.0 - p));
                    }
                }
                out.push((*probs, d));
            }
            Op::Cosine(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let mut da = Array2::zeros(av.dim());
                let mut db = Array2::zeros(bv.dim());
                for u in 0..av.nrows() {
                    let (ra, rb) = (av.row(u), bv.row(u));
                    let na = ra.dot(&ra).sqrt();
                    let nb = rb.dot(&rb).sqrt();
                    let dot = ra.dot(&rb);
                    let den = na * nb + COSINE_EPS;
                    let gu = g[[u, 0]];
                    // d/da of −dot/den = −b/den + dot·nb·(a/na)/den²
                    let ka = if na > 0.0 { dot * nb / (na * den * den) } else { 0.0 };
                    let kb = if nb > 0.0 { dot * na / (nb * den * den) } else { 0.0 };
                    da.row_mut(u)
                        .assign(&((&ra * ka - &rb / den) * gu));
                    db.row_mut(u)
                        .assign(&((&rb * kb - &ra / den) * gu));
                }
                if self.rg(*a) {
                    out.push((*a, da));
                }
                if self.rg(*b) {
                    out.push((*b, db));
                }
            }
            Op::NeighborAgg { h, adj, mean } => {
                let mut d = Array2::zeros(val(*h).dim());
                for u in 0..adj.n_nodes() {
                    let nbrs = adj.neighbors(u);
                    if nbrs.is_empty() {
                        continue;
                    }
                    let w = if *mean { 1.0 / nbrs.len() as f64 } else { 1.0 };
                    let gu = g.row(u);
                    for &v in nbrs {
                        d.row_mut(v).scaled_add(w, &gu);
                    }
                }
                out.push((*h, d));
            }
        }
        out
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
