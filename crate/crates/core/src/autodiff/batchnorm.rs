use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::tape::{Tape, Var};
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BnMode {
    Train,
    Eval,
}

/// Batch normalization parameters and running statistics.
///
/// `gamma` and `beta` are 1×C so they can be registered on a tape and
/// updated by the optimizer like any other weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNormState {
    pub gamma: Array2<f64>,
    pub beta: Array2<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
    pub momentum: f64,
    pub eps: f64,
    pub mode: BnMode,
}

impl BatchNormState {
    pub fn new(features: usize) -> Self {
        BatchNormState {
            gamma: Array2::ones((1, features)),
            beta: Array2::zeros((1, features)),
            running_mean: Array1::zeros(features),
            running_var: Array1::ones(features),
            momentum: 0.1,
            eps: 1e-5,
            mode: BnMode::Train,
        }
    }

    /// Applies the layer. Train mode normalizes with batch statistics and
    /// updates the running estimates (unbiased variance); eval mode uses the
    /// running estimates.
    pub fn forward(&mut self, tape: &mut Tape, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        match self.mode {
            BnMode::Train => {
                let (out, stats) = tape.batchnorm(x, gamma, beta, self.eps)?;
                let n = tape.value(x).nrows() as f64;
                let unbiased = if n > 1.0 {
                    &stats.var * (n / (n - 1.0))
                } else {
                    stats.var.clone()
                };
                let k = self.momentum;
                self.running_mean = &self.running_mean * (1.0 - k) + &stats.mean * k;
                self.running_var = &self.running_var * (1.0 - k) + &unbiased * k;
                Ok(out)
            }
            BnMode::Eval => self.eval_forward(tape, x, gamma, beta),
        }
    }

    /// Eval-mode forward that leaves the running statistics untouched.
    pub fn eval_forward(&self, tape: &mut Tape, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let g = tape.value(gamma).row(0).to_owned();
        let b = tape.value(beta).row(0).to_owned();
        let scale = &g / &self.running_var.mapv(|v| (v + self.eps).sqrt());
        let shift = &b - &(&self.running_mean * &scale);
        tape.col_affine(x, scale, &shift)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn train_mode_standardizes_and_tracks_stats() {
        let mut bn = BatchNormState::new(2);
        let mut t = Tape::new();
        let x = t.constant(array![[1.0, 10.0], [3.0, 10.0]]);
        let g = t.param(bn.gamma.clone());
        let b = t.param(bn.beta.clone());
        let y = bn.forward(&mut t, x, g, b).unwrap();
        let v = t.value(y);
        assert!((v[[0, 0]] + 1.0).abs() < 1e-4 && (v[[1, 0]] - 1.0).abs() < 1e-4);
        assert_eq!(v[[0, 1]], 0.0);
        assert!((bn.running_mean[0] - 0.2).abs() < 1e-12);
        // unbiased var of [1, 3] is 2
        assert!((bn.running_var[0] - (0.9 + 0.2)).abs() < 1e-12);
        assert!(bn.running_var.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn eval_mode_uses_running_stats() {
        let mut bn = BatchNormState::new(1);
        bn.running_mean = array![2.0];
        bn.running_var = array![4.0];
        bn.eps = 0.0;
        bn.mode = BnMode::Eval;
        let mut t = Tape::new();
        let x = t.constant(array![[4.0], [0.0]]);
        let g = t.param(array![[3.0]]);
        let b = t.param(array![[1.0]]);
        let y = bn.forward(&mut t, x, g, b).unwrap();
        assert_eq!(t.value(y), &array![[4.0], [-2.0]]);
    }
}
