//! Augmented views: attribute noise, edge dropping and counterfactual
//! sensitive-attribute flips.

use std::sync::Arc;

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{check_binary_column, Csr, Graph};
use crate::rng;

fn default_p_n() -> f64 {
    0.1
}
fn default_p_e() -> f64 {
    0.001
}
fn default_stddev() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    /// Probability of perturbing each non-sensitive attribute.
    #[serde(default = "default_p_n")]
    pub p_n: f64,
    /// Probability of dropping each undirected edge.
    #[serde(default = "default_p_e")]
    pub p_e: f64,
    /// Standard deviation of the additive Gaussian noise.
    #[serde(default = "default_stddev")]
    pub noise_stddev: f64,
    #[serde(default)]
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            p_n: default_p_n(),
            p_e: default_p_e(),
            noise_stddev: default_stddev(),
            seed: 0,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("p_n", self.p_n), ("p_e", self.p_e)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Validation(format!("{name} = {p} is not a probability")));
            }
        }
        if !(self.noise_stddev > 0.0) || !self.noise_stddev.is_finite() {
            return Err(Error::Validation(format!(
                "noise_stddev must be positive, got {}",
                self.noise_stddev
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViewKind {
    Noisy,
    Counterfactual,
    Combined,
}

/// An augmented copy of a graph's attributes and adjacency.
#[derive(Debug, Clone)]
pub struct View {
    pub attrs: Array2<f64>,
    pub adj: Arc<Csr>,
    pub kind: ViewKind,
    pub seed: u64,
}

/// `X + r ∘ δ` row by row, with `r ~ Bernoulli(p_n)` over the non-sensitive
/// columns and `δ ~ N(0, stddev²)`.
pub fn perturb_attributes(
    x: &Array2<f64>,
    sensitive_idx: usize,
    p_n: f64,
    noise_stddev: f64,
    seed: u64,
) -> Result<Array2<f64>> {
    if !(0.0..=1.0).contains(&p_n) {
        return Err(Error::Validation(format!("p_n = {p_n} is not a probability")));
    }
    let normal = Normal::new(0.0, noise_stddev)
        .map_err(|e| Error::Validation(format!("noise_stddev {noise_stddev}: {e}")))?;
    let mut r = rng::rng_from_seed(seed);
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        for (j, v) in row.iter_mut().enumerate() {
            if j == sensitive_idx {
                continue;
            }
            if r.random_bool(p_n) {
                *v += normal.sample(&mut r);
            }
        }
    }
    Ok(out)
}

/// Maps the sensitive column `s ↦ 1 − s`.
pub fn flip_sensitive(x: &Array2<f64>, sensitive_idx: usize) -> Result<Array2<f64>> {
    if sensitive_idx >= x.ncols() {
        return Err(Error::Structural(format!(
            "sensitive column {sensitive_idx} out of range"
        )));
    }
    check_binary_column(x, sensitive_idx)?;
    let mut out = x.clone();
    out.column_mut(sensitive_idx).mapv_inplace(|s| 1.0 - s);
    Ok(out)
}

/// Flips the sensitive attribute of a single node.
pub fn flip_sensitive_node(x: &Array2<f64>, sensitive_idx: usize, node: usize) -> Result<Array2<f64>> {
    let s = x[[node, sensitive_idx]];
    if s != 0.0 && s != 1.0 {
        return Err(Error::Validation(format!(
            "sensitive value {s} at node {node} is not binary"
        )));
    }
    let mut out = x.clone();
    out[[node, sensitive_idx]] = 1.0 - s;
    Ok(out)
}

/// Keeps each undirected edge with probability `1 − p_e`; both arcs of a
/// dropped edge go together.
pub fn drop_edges(adj: &Csr, p_e: f64, seed: u64) -> Result<Csr> {
    if !(0.0..=1.0).contains(&p_e) {
        return Err(Error::Validation(format!("p_e = {p_e} is not a probability")));
    }
    let mut r = rng::rng_from_seed(seed);
    let kept: Vec<(usize, usize)> = adj.edges().filter(|_| !r.random_bool(p_e)).collect();
    Csr::from_edges(adj.n_nodes(), &kept)
}

/// Noisy and counterfactual views for one epoch.
///
/// The noisy view perturbs attributes and drops edges; the counterfactual
/// view is the original graph with every sensitive value flipped. Seeds come
/// from `(cfg.seed, epoch)` so each epoch draws fresh, reproducible noise.
pub fn make_views(g: &Graph, cfg: &AugmentConfig, epoch: u64) -> Result<(View, View)> {
    cfg.validate()?;
    let attr_seed = rng::derive_seed(cfg.seed, "augment/attrs", epoch);
    let edge_seed = rng::derive_seed(cfg.seed, "augment/edges", epoch);
    let noisy_attrs = perturb_attributes(
        g.attrs(),
        g.sensitive_idx(),
        cfg.p_n,
        cfg.noise_stddev,
        attr_seed,
    )?;
    let noisy_adj = if cfg.p_e > 0.0 {
        Arc::new(drop_edges(g.adjacency(), cfg.p_e, edge_seed)?)
    } else {
        Arc::clone(g.adjacency())
    };
    let noisy = View {
        attrs: noisy_attrs,
        adj: noisy_adj,
        kind: ViewKind::Noisy,
        seed: attr_seed,
    };
    let counterfactual = View {
        attrs: flip_sensitive(g.attrs(), g.sensitive_idx())?,
        adj: Arc::clone(g.adjacency()),
        kind: ViewKind::Counterfactual,
        seed: cfg.seed,
    };
    Ok((noisy, counterfactual))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_graph, concat_b, Masks};
    use crate::ingest::{synth_dataset, SynthConfig};
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn zero_probability_is_identity() {
        let x = Array2::from_shape_fn((20, 5), |(i, j)| (i * 5 + j) as f64 * 0.1);
        assert_eq!(perturb_attributes(&x, 2, 0.0, 1.0, 3).unwrap(), x);
    }

    #[test]
    fn vanishing_noise_stays_close() {
        let x = Array2::from_shape_fn((50, 4), |(i, j)| (i + j) as f64);
        let std = 1e-9;
        let y = perturb_attributes(&x, 0, 1.0, std, 3).unwrap();
        assert!((&y - &x).iter().all(|d| d.abs() <= 5.0 * std));
        assert_eq!(y.column(0), x.column(0));
    }

    #[test]
    fn perturbed_fraction_concentrates() {
        let x = Array2::<f64>::zeros((1000, 100));
        let y = perturb_attributes(&x, 7, 0.1, 1.0, 99).unwrap();
        let changed = y
            .indexed_iter()
            .filter(|((_, j), &v)| *j != 7 && v != 0.0)
            .count();
        let frac = changed as f64 / (1000.0 * 99.0);
        assert!((0.08..=0.12).contains(&frac), "fraction {frac}");
        assert!(y.column(7).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn flip_is_involution_and_local() {
        let x = array![[0.5, 0.0], [1.5, 1.0], [2.5, 1.0]];
        let f = flip_sensitive(&x, 1).unwrap();
        assert_eq!(f.column(1).to_vec(), vec![1.0, 0.0, 0.0]);
        assert_eq!(f.column(0), x.column(0));
        assert_eq!(flip_sensitive(&f, 1).unwrap(), x);
        assert!(flip_sensitive(&x, 0).is_err());
    }

    #[test]
    fn drop_edges_extremes_and_rate() {
        let adj = Csr::from_edges(4, &[(0, 1), (1, 2), (2, 3)]).unwrap();
        assert_eq!(drop_edges(&adj, 0.0, 1).unwrap(), adj);
        assert_eq!(drop_edges(&adj, 1.0, 1).unwrap().n_edges(), 0);

        // 10,000 disjoint edges
        let edges: Vec<_> = (0..10_000).map(|i| (2 * i, 2 * i + 1)).collect();
        let big = Csr::from_edges(20_000, &edges).unwrap();
        let kept = drop_edges(&big, 0.5, 17).unwrap();
        assert!((4700..=5300).contains(&kept.n_edges()), "{}", kept.n_edges());
        kept.validate().unwrap();
        assert_eq!(kept, drop_edges(&big, 0.5, 17).unwrap());
    }

    #[test]
    fn views_match_their_contracts() {
        let g = synth_dataset(&SynthConfig::new(60, 3, 0.5, 0.5, 1)).unwrap();
        let cfg = AugmentConfig {
            p_n: 0.0,
            p_e: 0.0,
            ..Default::default()
        };
        let (noisy, cf) = make_views(&g, &cfg, 0).unwrap();
        assert_eq!(&noisy.attrs, g.attrs());
        assert_eq!(noisy.adj.as_ref(), g.adjacency().as_ref());

        let diff = (&cf.attrs - g.attrs()).mapv(f64::abs);
        assert_eq!(diff.iter().filter(|&&d| d != 0.0).count(), g.n_nodes());
        for u in 0..g.n_nodes() {
            let d = concat_b(&cf.attrs, &cf.adj, u) - g.concat_b(u);
            assert_eq!(d.mapv(|v| v * v).sum().sqrt(), 1.0);
        }

        let cfg = AugmentConfig::default();
        let (a, _) = make_views(&g, &cfg, 3).unwrap();
        let (b, _) = make_views(&g, &cfg, 3).unwrap();
        let (c, _) = make_views(&g, &cfg, 4).unwrap();
        assert_eq!(a.attrs, b.attrs);
        assert_ne!(a.attrs, c.attrs);
        assert_eq!(a.attrs.column(g.sensitive_idx()), g.sensitive());
    }

    #[test]
    fn config_validation() {
        assert!(AugmentConfig {
            p_n: 1.5,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(AugmentConfig {
            noise_stddev: 0.0,
            ..Default::default()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn single_node_flip() {
        let x = array![[1.0, 0.0], [2.0, 1.0]];
        let f = flip_sensitive_node(&x, 1, 1).unwrap();
        assert_eq!(f, array![[1.0, 0.0], [2.0, 0.0]]);
        let g = build_graph(&[(0, 1)], x, 1, vec![0, 1], Masks::empty(2)).unwrap();
        assert_eq!(g.n_edges(), 1);
    }

    proptest! {
        #[test]
        fn dropped_graph_is_symmetric_subgraph(
            raw in prop::collection::vec((0usize..30, 0usize..30), 0..120),
            p in 0.0f64..1.0,
            seed in any::<u64>(),
        ) {
            let adj = Csr::from_edges(30, &raw).unwrap();
            let kept = drop_edges(&adj, p, seed).unwrap();
            kept.validate().unwrap();
            for (u, v) in kept.edges() {
                prop_assert!(adj.has_arc(u, v));
            }
        }
    }
}
