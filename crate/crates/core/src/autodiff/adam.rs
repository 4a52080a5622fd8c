//! Adam with bias correction and decoupled weight decay.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub config: AdamConfig,
    pub m: Vec<Array2<f64>>,
    pub v: Vec<Array2<f64>>,
    pub t: u64,
}

impl AdamState {
    pub fn new<'a>(config: AdamConfig, shapes: impl IntoIterator<Item = &'a Array2<f64>>) -> Self {
        let m: Vec<_> = shapes.into_iter().map(|p| Array2::zeros(p.dim())).collect();
        AdamState {
            config,
            v: m.clone(),
            m,
            t: 0,
        }
    }

    /// One update. Weight decay is applied first as `w ← w − lr·wd·w`,
    /// independent of the gradient statistics.
    pub fn step(&mut self, params: &mut [&mut Array2<f64>], grads: &[Array2<f64>]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Structural(format!(
                "adam: {} params / {} grads for {} slots",
                params.len(),
                grads.len(),
                self.m.len()
            )));
        }
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.config;
        self.t += 1;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        for (k, (w, g)) in params.iter_mut().zip(grads).enumerate() {
            if w.dim() != g.dim() || w.dim() != self.m[k].dim() {
                return Err(Error::Structural(format!(
                    "adam: slot {k} has param {:?}, grad {:?}",
                    w.dim(),
                    g.dim()
                )));
            }
            if weight_decay != 0.0 {
                w.mapv_inplace(|x| x - lr * weight_decay * x);
            }
            let m = &mut self.m[k];
            let v = &mut self.v[k];
            ndarray::Zip::from(&mut **w)
                .and(m)
                .and(v)
                .and(g)
                .for_each(|w, m, v, &g| {
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    let m_hat = *m / bc1;
                    let v_hat = *v / bc2;
                    *w -= lr * m_hat / (v_hat.sqrt() + eps);
                });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn zero_gradient_no_decay_is_identity() {
        let mut w = array![[1.0, -2.0]];
        let start = w.clone();
        let cfg = AdamConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        let mut s = AdamState::new(cfg, [&w]);
        for _ in 0..10 {
            s.step(&mut [&mut w], &[Array2::zeros((1, 2))]).unwrap();
        }
        assert_eq!(w, start);
    }

    #[test]
    fn constant_gradient_steps_by_lr() {
        // with constant g the bias-corrected moments are exactly g and g²
        let cfg = AdamConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        let mut w = array![[0.0, 0.0]];
        let g = array![[0.3, -5.0]];
        let mut s = AdamState::new(cfg, [&w]);
        for _ in 0..200 {
            let before = w.clone();
            s.step(&mut [&mut w], &[g.clone()]).unwrap();
            let step = &before - &w;
            assert!((step[[0, 0]] - 1e-3).abs() < 1e-9);
            assert!((step[[0, 1]] + 1e-3).abs() < 1e-9);
        }
    }

    #[test]
    fn weight_decay_alone_shrinks_geometrically() {
        let cfg = AdamConfig {
            lr: 0.01,
            weight_decay: 0.5,
            ..Default::default()
        };
        let mut w = array![[2.0]];
        let mut s = AdamState::new(cfg, [&w]);
        for _ in 0..25 {
            s.step(&mut [&mut w], &[Array2::zeros((1, 1))]).unwrap();
        }
        let expected = 2.0 * (1.0f64 - 0.01 * 0.5).powi(25);
        assert!((w[[0, 0]] - expected).abs() < 1e-12);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut w = array![[1.0]];
        let mut s = AdamState::new(AdamConfig::default(), [&w]);
        assert!(s.step(&mut [&mut w], &[Array2::zeros((2, 1))]).is_err());
    }
}
