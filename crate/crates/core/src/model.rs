//! Encoder, projection/predictor/classifier heads, the Siamese objective and
//! the training loop.
//!
//! Each encoder layer computes
//! `H ← ReLU(H W_self + AGG(H) W_neigh + b)` where `AGG` sums neighbor rows.
//! With Lipschitz normalization enabled, `W_self` is rescaled to unit
//! spectral norm at the start of every epoch (and once more after the last
//! optimizer step), so the stored weights are the normalized ones.

use std::sync::Arc;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::augment::{self, AugmentConfig, View};
use crate::autodiff::spectral::{lipschitz_normalize, spectral_norm_with, PowerIteration};
use crate::autodiff::{AdamConfig, AdamState, BatchNormState, BnMode, Checkpoint, Tape, Var};
use crate::error::{Error, Result};
use crate::graph::{concat_b, Csr, Graph};
use crate::rng;

/// Which of the two fairness/stability components are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ablation {
    /// Siamese objective and weight normalization.
    Full,
    /// Weight normalization only (λ forced to 0).
    NoObjective,
    /// Siamese objective only.
    NoArchitecture,
    /// Plain message-passing classifier.
    Baseline,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [
        Ablation::Full,
        Ablation::NoObjective,
        Ablation::NoArchitecture,
        Ablation::Baseline,
    ];

    pub fn uses_objective(self) -> bool {
        matches!(self, Ablation::Full | Ablation::NoArchitecture)
    }

    pub fn uses_normalization(self) -> bool {
        matches!(self, Ablation::Full | Ablation::NoObjective)
    }

    pub fn effective_lambda(self, lambda: f64) -> f64 {
        if self.uses_objective() {
            lambda
        } else {
            0.0
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::NoObjective => "no-objective",
            Ablation::NoArchitecture => "no-architecture",
            Ablation::Baseline => "baseline",
        }
    }
}

impl std::str::FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ablation::ALL
            .into_iter()
            .find(|a| a.name() == s || a.name().replace('-', "_") == s)
            .ok_or_else(|| Error::Config(format!("unknown ablation '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    #[default]
    Sum,
    /// Degree-normalized neighbor mean.
    Mean,
}

/// Which embeddings enter the cosine distance of the Siamese loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SiameseSpace {
    /// Projection-head outputs.
    #[default]
    Projection,
    /// Raw encoder outputs; the projection head is unused.
    Encoder,
}

fn d_lambda() -> f64 {
    0.6
}
fn d_epochs() -> usize {
    1000
}
fn d_lr() -> f64 {
    1e-3
}
fn d_wd() -> f64 {
    1e-5
}
fn d_hidden() -> usize {
    16
}
fn d_layers() -> usize {
    1
}
fn d_ablation() -> Ablation {
    Ablation::Full
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    #[serde(default = "d_lambda")]
    pub lambda: f64,
    #[serde(default = "d_epochs")]
    pub epochs: usize,
    #[serde(default = "d_lr")]
    pub lr: f64,
    #[serde(default = "d_wd")]
    pub weight_decay: f64,
    #[serde(default = "d_hidden")]
    pub hidden: usize,
    #[serde(default = "d_layers")]
    pub layers: usize,
    #[serde(default)]
    pub augment: AugmentConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "d_ablation")]
    pub ablation: Ablation,
    #[serde(default)]
    pub aggregation: Aggregation,
    #[serde(default)]
    pub siamese_space: SiameseSpace,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda: d_lambda(),
            epochs: d_epochs(),
            lr: d_lr(),
            weight_decay: d_wd(),
            hidden: d_hidden(),
            layers: d_layers(),
            augment: AugmentConfig::default(),
            seed: 0,
            ablation: d_ablation(),
            aggregation: Aggregation::Sum,
            siamese_space: SiameseSpace::Projection,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Validation(format!("lambda {} outside [0, 1]", self.lambda)));
        }
        if self.hidden == 0 || self.layers == 0 {
            return Err(Error::Validation("hidden and layers must be positive".into()));
        }
        if !(self.lr > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::Validation("lr must be positive, weight_decay ≥ 0".into()));
        }
        self.augment.validate()
    }

    pub fn effective_lambda(&self) -> f64 {
        self.ablation.effective_lambda(self.lambda)
    }

    /// Augmentation seed actually used: a substream of the run seed, unless
    /// the config pins one explicitly.
    pub fn augment_seed(&self) -> u64 {
        if self.augment.seed != 0 {
            self.augment.seed
        } else {
            rng::derive_seed(self.seed, rng::TAG_AUGMENT, 0)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderLayer {
    pub w_self: Array2<f64>,
    pub w_neigh: Array2<f64>,
    pub bias: Array2<f64>,
}

/// All trainable weights plus the batchnorm state of the projection head.
#[derive(Debug, Clone, PartialEq)]
pub struct NiftyModel {
    pub layers: Vec<EncoderLayer>,
    pub proj1_w: Array2<f64>,
    pub proj1_b: Array2<f64>,
    pub proj_bn: BatchNormState,
    pub proj2_w: Array2<f64>,
    pub proj2_b: Array2<f64>,
    pub pred_w: Array2<f64>,
    pub pred_b: Array2<f64>,
    pub clf_w: Array2<f64>,
    pub clf_b: Array2<f64>,
    pub lipschitz_enabled: bool,
    pub aggregation: Aggregation,
    pub siamese_space: SiameseSpace,
}

fn glorot(rows: usize, cols: usize, r: &mut impl Rng) -> Array2<f64> {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| r.random_range(-a..a))
}

/// Tape handles for every parameter, in [`NiftyModel::named_params`] order.
#[derive(Debug, Clone)]
pub struct Bound {
    vars: Vec<Var>,
    n_layers: usize,
}

impl Bound {
    fn layer(&self, k: usize) -> (Var, Var, Var) {
        (self.vars[3 * k], self.vars[3 * k + 1], self.vars[3 * k + 2])
    }
    fn head(&self, i: usize) -> Var {
        self.vars[3 * self.n_layers + i]
    }
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

// head parameter offsets after the encoder block
const PROJ1_W: usize = 0;
const PROJ1_B: usize = 1;
const BN_GAMMA: usize = 2;
const BN_BETA: usize = 3;
const PROJ2_W: usize = 4;
const PROJ2_B: usize = 5;
const PRED_W: usize = 6;
const PRED_B: usize = 7;
const CLF_W: usize = 8;
const CLF_B: usize = 9;

/// Scalar pieces of one objective evaluation.
#[derive(Debug, Clone, Copy)]
pub struct LossParts {
    pub total: Var,
    pub classification: f64,
    /// `None` when the Siamese term is disabled (λ = 0).
    pub siamese: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    #[serde(rename = "L_c")]
    pub l_c: f64,
    #[serde(rename = "L_s")]
    pub l_s: Option<f64>,
    pub total: f64,
    pub prod_sigma_wa: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub history: Vec<EpochLog>,
    pub adam: AdamState,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub probs: Vec<f64>,
    pub labels: Vec<u8>,
}

/// Settings for the empirical Lipschitz-bound check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundCheckConfig {
    pub n_samples: usize,
    pub p_n: f64,
    pub noise_stddev: f64,
    pub p_e: f64,
    pub seed: u64,
}

impl BoundCheckConfig {
    pub fn from_augment(aug: &AugmentConfig, n_samples: usize, seed: u64) -> Self {
        BoundCheckConfig {
            n_samples,
            p_n: aug.p_n,
            noise_stddev: aug.noise_stddev,
            p_e: aug.p_e,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub n_samples: usize,
    /// `Π_k σ(W_self^k)`.
    pub prod_sigma: f64,
    /// Largest `‖ENC(ũ) − ENC(u)‖ / (Π σ · ‖b̃_u − b_u‖)` over noisy samples.
    pub max_ratio_noise: f64,
    /// Largest `‖ENC(ũˢ) − ENC(u)‖ / (Π σ · ‖b̃ˢ_u − b_u‖)` over flips.
    pub max_ratio_counterfactual: f64,
    /// Samples whose perturbation happened to be empty (ratio taken as 0).
    pub zero_perturbations: usize,
    pub ratios_noise: Vec<f64>,
    pub ratios_counterfactual: Vec<f64>,
}

impl BoundReport {
    pub fn max_ratio(&self) -> f64 {
        self.max_ratio_noise.max(self.max_ratio_counterfactual)
    }
}

impl NiftyModel {
    /// Glorot-uniform weights from the `init` substream, zero biases.
    pub fn new(
        in_dim: usize,
        hidden: usize,
        layers: usize,
        lipschitz_enabled: bool,
        aggregation: Aggregation,
        seed: u64,
    ) -> Self {
        let mut r = rng::substream(seed, rng::TAG_INIT, 0);
        let layers = (0..layers)
            .map(|k| {
                let fan_in = if k == 0 { in_dim } else { hidden };
                EncoderLayer {
                    w_self: glorot(fan_in, hidden, &mut r),
                    w_neigh: glorot(fan_in, hidden, &mut r),
                    bias: Array2::zeros((1, hidden)),
                }
            })
            .collect();
        NiftyModel {
            layers,
            proj1_w: glorot(hidden, hidden, &mut r),
            proj1_b: Array2::zeros((1, hidden)),
            proj_bn: BatchNormState::new(hidden),
            proj2_w: glorot(hidden, hidden, &mut r),
            proj2_b: Array2::zeros((1, hidden)),
            pred_w: glorot(hidden, hidden, &mut r),
            pred_b: Array2::zeros((1, hidden)),
            clf_w: glorot(hidden, 1, &mut r),
            clf_b: Array2::zeros((1, 1)),
            lipschitz_enabled,
            aggregation,
            siamese_space: SiameseSpace::Projection,
        }
    }

    pub fn for_config(in_dim: usize, cfg: &TrainConfig) -> Self {
        let mut m = NiftyModel::new(
            in_dim,
            cfg.hidden,
            cfg.layers,
            cfg.ablation.uses_normalization(),
            cfg.aggregation,
            cfg.seed,
        );
        m.siamese_space = cfg.siamese_space;
        m
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].w_self.nrows()
    }

    pub fn hidden(&self) -> usize {
        self.proj1_w.nrows()
    }

    pub fn named_params(&self) -> Vec<(String, &Array2<f64>)> {
        let mut out = Vec::new();
        for (k, l) in self.layers.iter().enumerate() {
            out.push((format!("enc.{k}.w_self"), &l.w_self));
            out.push((format!("enc.{k}.w_neigh"), &l.w_neigh));
            out.push((format!("enc.{k}.bias"), &l.bias));
        }
        out.extend([
            ("proj.0.w".to_string(), &self.proj1_w),
            ("proj.0.b".to_string(), &self.proj1_b),
            ("proj.bn.gamma".to_string(), &self.proj_bn.gamma),
            ("proj.bn.beta".to_string(), &self.proj_bn.beta),
            ("proj.1.w".to_string(), &self.proj2_w),
            ("proj.1.b".to_string(), &self.proj2_b),
            ("pred.w".to_string(), &self.pred_w),
            ("pred.b".to_string(), &self.pred_b),
            ("clf.w".to_string(), &self.clf_w),
            ("clf.b".to_string(), &self.clf_b),
        ]);
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            out.push(&mut l.w_self);
            out.push(&mut l.w_neigh);
            out.push(&mut l.bias);
        }
        out.extend([
            &mut self.proj1_w,
            &mut self.proj1_b,
            &mut self.proj_bn.gamma,
            &mut self.proj_bn.beta,
            &mut self.proj2_w,
            &mut self.proj2_b,
            &mut self.pred_w,
            &mut self.pred_b,
            &mut self.clf_w,
            &mut self.clf_b,
        ]);
        out
    }

    /// Registers every parameter on `tape` (as trainable leaves or constants).
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Bound {
        let vars = self
            .named_params()
            .into_iter()
            .map(|(_, p)| {
                if trainable {
                    tape.param(p.clone())
                } else {
                    tape.constant(p.clone())
                }
            })
            .collect();
        Bound {
            vars,
            n_layers: self.layers.len(),
        }
    }

    /// Encoder forward pass on a tape.
    pub fn encode_on(&self, tape: &mut Tape, b: &Bound, x: Var, adj: &Arc<Csr>) -> Result<Var> {
        let mean = self.aggregation == Aggregation::Mean;
        let mut h = x;
        for k in 0..self.layers.len() {
            let (ws, wn, bias) = b.layer(k);
            let self_term = tape.matmul(h, ws)?;
            let agg = tape.neighbor_aggregate(h, adj, mean)?;
            let neigh_term = tape.matmul(agg, wn)?;
            let pre = tape.add(self_term, neigh_term)?;
            let pre = tape.add_row(pre, bias)?;
            h = tape.relu(pre);
        }
        Ok(h)
    }

    /// Two-layer projection head with batchnorm and ReLU after the first layer.
    pub fn project_on(&self, tape: &mut Tape, b: &Bound, z: Var, bn: &mut BatchNormState) -> Result<Var> {
        let h = tape.matmul(z, b.head(PROJ1_W))?;
        let h = tape.add_row(h, b.head(PROJ1_B))?;
        let h = bn.forward(tape, h, b.head(BN_GAMMA), b.head(BN_BETA))?;
        let h = tape.relu(h);
        let h = tape.matmul(h, b.head(PROJ2_W))?;
        tape.add_row(h, b.head(PROJ2_B))
    }

    /// Single affine predictor `t`.
    pub fn predictor_on(&self, tape: &mut Tape, b: &Bound, p: Var) -> Result<Var> {
        let h = tape.matmul(p, b.head(PRED_W))?;
        tape.add_row(h, b.head(PRED_B))
    }

    /// Classifier probabilities, N×1.
    pub fn classify_on(&self, tape: &mut Tape, b: &Bound, z: Var) -> Result<Var> {
        let logits = tape.matmul(z, b.head(CLF_W))?;
        let logits = tape.add_row(logits, b.head(CLF_B))?;
        Ok(tape.sigmoid(logits))
    }

    /// `½·mean_u[D(t(p_u), sg(p̃_u)) + D(t(p̃_u), sg(p_u))]` over projected
    /// embeddings.
    pub fn siamese_from_projections(&self, tape: &mut Tape, b: &Bound, p: Var, p_tilde: Var) -> Result<Var> {
        let tp = self.predictor_on(tape, b, p)?;
        let tpt = self.predictor_on(tape, b, p_tilde)?;
        let sg_p = tape.stop_grad(p);
        let sg_pt = tape.stop_grad(p_tilde);
        let d1 = tape.cosine_distance_rows(tp, sg_pt)?;
        let d2 = tape.cosine_distance_rows(tpt, sg_p)?;
        let sum = tape.add(d1, d2)?;
        let mean = tape.mean_scalar(sum);
        Ok(tape.scale(mean, 0.5))
    }

    /// Symmetric stop-gradient loss between two embedding matrices; both are
    /// passed through the projection head first.
    pub fn siamese_loss_on(
        &self,
        tape: &mut Tape,
        b: &Bound,
        z: Var,
        z_tilde: Var,
        bn: &mut BatchNormState,
    ) -> Result<Var> {
        if tape.value(z).dim() != tape.value(z_tilde).dim() {
            return Err(Error::Structural("siamese_loss: embedding shapes differ".into()));
        }
        let p = self.project_on(tape, b, z, bn)?;
        let pt = self.project_on(tape, b, z_tilde, bn)?;
        self.siamese_from_projections(tape, b, p, pt)
    }

    /// `(1 − λ)·BCE + λ·½[L_s(z, z_noisy) + L_s(z, z_cf)]`.
    ///
    /// `views` may be `None` only when `lambda == 0`.
    pub fn total_loss_on(
        &self,
        tape: &mut Tape,
        b: &Bound,
        graph: &Graph,
        views: Option<(&View, &View)>,
        lambda: f64,
        bn: &mut BatchNormState,
    ) -> Result<LossParts> {
        let x = tape.constant(graph.attrs().clone());
        let z = self.encode_on(tape, b, x, graph.adjacency())?;
        let probs = self.classify_on(tape, b, z)?;
        let l_c = tape.bce(probs, graph.labels(), &graph.masks().train.indices())?;
        let classification = tape.scalar(l_c);
        if lambda == 0.0 {
            return Ok(LossParts {
                total: l_c,
                classification,
                siamese: None,
            });
        }
        let (noisy, cf) = views.ok_or_else(|| {
            Error::Config("augmented views are required when lambda > 0".into())
        })?;
        let xn = tape.constant(noisy.attrs.clone());
        let zn = self.encode_on(tape, b, xn, &noisy.adj)?;
        let xc = tape.constant(cf.attrs.clone());
        let zc = self.encode_on(tape, b, xc, &cf.adj)?;
        let (p, pn, pc) = match self.siamese_space {
            SiameseSpace::Projection => (
                self.project_on(tape, b, z, bn)?,
                self.project_on(tape, b, zn, bn)?,
                self.project_on(tape, b, zc, bn)?,
            ),
            SiameseSpace::Encoder => (z, zn, zc),
        };
        let s_noisy = self.siamese_from_projections(tape, b, p, pn)?;
        let s_cf = self.siamese_from_projections(tape, b, p, pc)?;
        let s_sum = tape.add(s_noisy, s_cf)?;
        let l_s = tape.scale(s_sum, 0.5);
        let siamese = tape.scalar(l_s);
        let wc = tape.scale(l_c, 1.0 - lambda);
        let ws = tape.scale(l_s, lambda);
        let total = tape.add(wc, ws)?;
        Ok(LossParts {
            total,
            classification,
            siamese: Some(siamese),
        })
    }

    /// Value of the objective without touching the model's running stats.
    pub fn total_loss(&self, graph: &Graph, views: Option<(&View, &View)>, lambda: f64) -> Result<f64> {
        let mut tape = Tape::new();
        let b = self.bind(&mut tape, false);
        let mut bn = self.proj_bn.clone();
        let parts = self.total_loss_on(&mut tape, &b, graph, views, lambda, &mut bn)?;
        Ok(tape.scalar(parts.total))
    }

    /// Rescales every `W_self` to unit spectral norm.
    pub fn normalize_weights(&mut self) -> Result<()> {
        for layer in &mut self.layers {
            layer.w_self = lipschitz_normalize(&layer.w_self)?;
        }
        Ok(())
    }

    /// `Π_k σ(W_self^k)`.
    pub fn prod_sigma_self(&self) -> f64 {
        self.layers
            .iter()
            .map(|l| spectral_norm_with(&l.w_self, PowerIteration::precise()))
            .product()
    }

    /// Node embeddings `Z` for arbitrary attributes and adjacency.
    pub fn encode(&self, attrs: &Array2<f64>, adj: &Arc<Csr>) -> Result<Array2<f64>> {
        if attrs.ncols() != self.in_dim() {
            return Err(Error::Structural(format!(
                "attributes have {} columns, encoder expects {}",
                attrs.ncols(),
                self.in_dim()
            )));
        }
        let mut tape = Tape::new();
        let b = self.bind(&mut tape, false);
        let x = tape.constant(attrs.clone());
        let z = self.encode_on(&mut tape, &b, x, adj)?;
        Ok(tape.value(z).clone())
    }

    /// Classifier probabilities for precomputed embeddings.
    pub fn classify_embeddings(&self, z: &Array2<f64>) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let b = self.bind(&mut tape, false);
        let zv = tape.constant(z.clone());
        let p = self.classify_on(&mut tape, &b, zv)?;
        Ok(tape.value(p).iter().copied().collect())
    }

    /// Probabilities and labels (`1` iff probability ≥ 0.5).
    pub fn predict(&self, graph: &Graph, attrs_override: Option<&Array2<f64>>) -> Result<Prediction> {
        let attrs = attrs_override.unwrap_or(graph.attrs());
        self.predict_with(attrs, graph.adjacency())
    }

    pub fn predict_with(&self, attrs: &Array2<f64>, adj: &Arc<Csr>) -> Result<Prediction> {
        let z = self.encode(attrs, adj)?;
        let probs = self.classify_embeddings(&z)?;
        let labels = probs.iter().map(|&p| u8::from(p >= 0.5)).collect();
        Ok(Prediction { probs, labels })
    }

    /// Empirical check of the per-node Lipschitz bounds for attribute noise
    /// (with optional incident-edge drops) and single-node sensitive flips.
    pub fn verify_stability_bound(&self, graph: &Graph, cfg: &BoundCheckConfig) -> Result<BoundReport> {
        let prod_sigma = self.prod_sigma_self();
        let z = self.encode(graph.attrs(), graph.adjacency())?;
        let n = graph.n_nodes();
        let s_idx = graph.sensitive_idx();
        let mut r = rng::substream(cfg.seed, "bound-check", 0);
        let mut ratios_noise = Vec::with_capacity(cfg.n_samples);
        let mut ratios_cf = Vec::with_capacity(cfg.n_samples);
        let mut zero = 0;
        let ratio = |lhs: f64, rhs: f64| {
            if lhs == 0.0 {
                0.0
            } else if rhs == 0.0 {
                f64::INFINITY
            } else {
                lhs / rhs
            }
        };
        let row_dist = |a: &Array2<f64>, u: usize| {
            let d = &a.row(u) - &z.row(u);
            d.dot(&d).sqrt()
        };
        for _ in 0..cfg.n_samples {
            let u = r.random_range(0..n);

            let noise_seed: u64 = r.random();
            let row = graph.attrs().row(u).to_owned().insert_axis(ndarray::Axis(0));
            let noisy_row = augment::perturb_attributes(&row, s_idx, cfg.p_n, cfg.noise_stddev, noise_seed)?;
            let mut attrs = graph.attrs().clone();
            attrs.row_mut(u).assign(&noisy_row.row(0));
            let adj = if cfg.p_e > 0.0 {
                let kept: Vec<(usize, usize)> = graph
                    .adjacency()
                    .edges()
                    .filter(|&(a, b)| (a != u && b != u) || !r.random_bool(cfg.p_e))
                    .collect();
                Arc::new(Csr::from_edges(n, &kept)?)
            } else {
                Arc::clone(graph.adjacency())
            };
            let delta_b = {
                let d = concat_b(&attrs, &adj, u) - graph.concat_b(u);
                d.dot(&d).sqrt()
            };
            if delta_b == 0.0 {
                zero += 1;
            }
            let zt = self.encode(&attrs, &adj)?;
            ratios_noise.push(ratio(row_dist(&zt, u), prod_sigma * delta_b));

            let flipped = augment::flip_sensitive_node(graph.attrs(), s_idx, u)?;
            let delta_s = {
                let d = concat_b(&flipped, graph.adjacency(), u) - graph.concat_b(u);
                d.dot(&d).sqrt()
            };
            let zs = self.encode(&flipped, graph.adjacency())?;
            ratios_cf.push(ratio(row_dist(&zs, u), prod_sigma * delta_s));
        }
        let max = |v: &[f64]| v.iter().copied().fold(0.0, f64::max);
        Ok(BoundReport {
            n_samples: cfg.n_samples,
            prod_sigma,
            max_ratio_noise: max(&ratios_noise),
            max_ratio_counterfactual: max(&ratios_cf),
            zero_perturbations: zero,
            ratios_noise,
            ratios_counterfactual: ratios_cf,
        })
    }

    pub fn to_checkpoint(&self, adam: Option<&AdamState>, metadata: serde_json::Value) -> Checkpoint {
        let mut ck = Checkpoint::new(metadata);
        for (name, p) in self.named_params() {
            ck.insert(name, p);
        }
        ck.batchnorm.insert("proj.bn".into(), self.proj_bn.clone());
        ck.adam = adam.cloned();
        ck.metadata["lipschitz_enabled"] = serde_json::json!(self.lipschitz_enabled);
        ck.metadata["aggregation"] = serde_json::to_value(self.aggregation).unwrap_or_default();
        ck.metadata["layers"] = serde_json::json!(self.layers.len());
        ck.metadata["siamese_space"] = serde_json::to_value(self.siamese_space).unwrap_or_default();
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let meta = &ck.metadata;
        let layers = meta["layers"]
            .as_u64()
            .ok_or_else(|| Error::Config("checkpoint metadata lacks 'layers'".into()))?
            as usize;
        let lipschitz_enabled = meta["lipschitz_enabled"].as_bool().unwrap_or(true);
        let aggregation: Aggregation =
            serde_json::from_value(meta["aggregation"].clone()).unwrap_or_default();
        let siamese_space: SiameseSpace =
            serde_json::from_value(meta["siamese_space"].clone()).unwrap_or_default();
        let layers = (0..layers)
            .map(|k| {
                Ok(EncoderLayer {
                    w_self: ck.get(&format!("enc.{k}.w_self"))?,
                    w_neigh: ck.get(&format!("enc.{k}.w_neigh"))?,
                    bias: ck.get(&format!("enc.{k}.bias"))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let mut bn = ck
            .batchnorm
            .get("proj.bn")
            .cloned()
            .ok_or_else(|| Error::Config("checkpoint lacks batchnorm state".into()))?;
        bn.gamma = ck.get("proj.bn.gamma")?;
        bn.beta = ck.get("proj.bn.beta")?;
        Ok(NiftyModel {
            layers,
            proj1_w: ck.get("proj.0.w")?,
            proj1_b: ck.get("proj.0.b")?,
            proj_bn: bn,
            proj2_w: ck.get("proj.1.w")?,
            proj2_b: ck.get("proj.1.b")?,
            pred_w: ck.get("pred.w")?,
            pred_b: ck.get("pred.b")?,
            clf_w: ck.get("clf.w")?,
            clf_b: ck.get("clf.b")?,
            lipschitz_enabled,
            aggregation,
            siamese_space,
        })
    }
}

/// Full-batch training: per epoch, normalize `W_self` (if enabled), draw
/// fresh views, evaluate the objective, backpropagate and take one Adam step
/// on every parameter.
pub fn train(model: &mut NiftyModel, graph: &Graph, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if graph.masks().train.count() == 0 {
        return Err(Error::Validation("training mask is empty".into()));
    }
    if graph.n_attrs() != model.in_dim() {
        return Err(Error::Structural(format!(
            "graph has {} attributes, model expects {}",
            graph.n_attrs(),
            model.in_dim()
        )));
    }
    let lambda = cfg.effective_lambda();
    let mut aug = cfg.augment.clone();
    aug.seed = cfg.augment_seed();
    let adam_cfg = AdamConfig {
        lr: cfg.lr,
        weight_decay: cfg.weight_decay,
        ..AdamConfig::default()
    };
    let mut adam = AdamState::new(adam_cfg, model.named_params().into_iter().map(|(_, p)| p));
    let mut history = Vec::with_capacity(cfg.epochs);
    model.proj_bn.mode = BnMode::Train;

    for epoch in 0..cfg.epochs {
        if model.lipschitz_enabled {
            model.normalize_weights()?;
        }
        let views = if lambda > 0.0 {
            Some(augment::make_views(graph, &aug, epoch as u64)?)
        } else {
            None
        };
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape, true);
        let mut bn = model.proj_bn.clone();
        let parts = model.total_loss_on(
            &mut tape,
            &bound,
            graph,
            views.as_ref().map(|(a, b)| (a, b)),
            lambda,
            &mut bn,
        )?;
        let total = tape.scalar(parts.total);
        if !total.is_finite() {
            return Err(Error::NonFinite {
                epoch,
                l_c: parts.classification,
                l_s: parts.siamese.unwrap_or(f64::NAN),
                total,
            });
        }
        tape.backward(parts.total)?;
        let grads: Vec<Array2<f64>> = bound
            .vars()
            .iter()
            .map(|&v| {
                tape.grad(v)
                    .cloned()
                    .unwrap_or_else(|| Array2::zeros(tape.value(v).dim()))
            })
            .collect();
        history.push(EpochLog {
            epoch,
            l_c: parts.classification,
            l_s: parts.siamese,
            total,
            prod_sigma_wa: model.prod_sigma_self(),
        });
        model.proj_bn.running_mean = bn.running_mean;
        model.proj_bn.running_var = bn.running_var;
        adam.step(&mut model.params_mut(), &grads)?;
    }
    if model.lipschitz_enabled {
        model.normalize_weights()?;
    }
    model.proj_bn.mode = BnMode::Eval;
    Ok(TrainOutcome { history, adam })
}

/// Builds a model for `cfg` and trains it.
pub fn fit(graph: &Graph, cfg: &TrainConfig) -> Result<(NiftyModel, TrainOutcome)> {
    let mut model = NiftyModel::for_config(graph.n_attrs(), cfg);
    let outcome = train(&mut model, graph, cfg)?;
    Ok((model, outcome))
}
