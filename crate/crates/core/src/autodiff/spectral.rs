//! Largest singular value by power iteration, and Lipschitz normalization.

use ndarray::{Array1, Array2};
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::rng;

const START_SEED: u64 = 0x5eed_0f_5f3c;

/// Power-iteration settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerIteration {
    pub max_iters: usize,
    /// Stop once the relative change of the estimate drops below this.
    pub tol: f64,
}

impl Default for PowerIteration {
    fn default() -> Self {
        PowerIteration {
            max_iters: 1000,
            tol: 1e-12,
        }
    }
}

impl PowerIteration {
    /// Settings used when the estimate feeds a hard bound (weight
    /// normalization and bound checks).
    pub fn precise() -> Self {
        PowerIteration {
            max_iters: 20_000,
            tol: 1e-15,
        }
    }
}

fn start_vector(n: usize) -> Array1<f64> {
    let mut r = rng::rng_from_seed(START_SEED ^ n as u64);
    let v: Array1<f64> = (0..n).map(|_| StandardNormal.sample(&mut r)).collect();
    let norm = v.dot(&v).sqrt();
    v / norm
}

/// `σ(W)` with the default 1000 iterations / 1e-12 tolerance.
pub fn spectral_norm(w: &Array2<f64>) -> f64 {
    spectral_norm_with(w, PowerIteration::default())
}

/// Power iteration on `WᵀW` from a fixed seeded unit vector. The estimate
/// after each step is `‖W v‖` for the current unit vector `v`. Zero matrices
/// give 0.
pub fn spectral_norm_with(w: &Array2<f64>, cfg: PowerIteration) -> f64 {
    if w.is_empty() || w.iter().all(|&x| x == 0.0) {
        return 0.0;
    }
    let mut v = start_vector(w.ncols());
    let mut sigma = {
        let wv = w.dot(&v);
        wv.dot(&wv).sqrt()
    };
    for _ in 0..cfg.max_iters {
        let next = w.t().dot(&w.dot(&v));
        let norm = next.dot(&next).sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        v = next / norm;
        let wv = w.dot(&v);
        let estimate = wv.dot(&wv).sqrt();
        let change = (estimate - sigma).abs();
        sigma = estimate;
        if change <= cfg.tol * estimate {
            break;
        }
    }
    sigma
}

/// `W / σ(W)`.
pub fn lipschitz_normalize(w: &Array2<f64>) -> Result<Array2<f64>> {
    lipschitz_normalize_with(w, PowerIteration::precise())
}

pub fn lipschitz_normalize_with(w: &Array2<f64>, cfg: PowerIteration) -> Result<Array2<f64>> {
    let sigma = spectral_norm_with(w, cfg);
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::Validation(format!(
            "cannot normalize a matrix with spectral norm {sigma}"
        )));
    }
    Ok(w / sigma)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    // exact σ of a 2×2 matrix from the closed-form eigenvalues of WᵀW
    fn sigma_2x2(w: &Array2<f64>) -> f64 {
        let g = w.t().dot(w);
        let (a, b, d) = (g[[0, 0]], g[[0, 1]], g[[1, 1]]);
        let tr = a + d;
        let det = a * d - b * b;
        ((tr + (tr * tr - 4.0 * det).max(0.0).sqrt()) / 2.0).sqrt()
    }

    #[test]
    fn known_values() {
        assert!((spectral_norm(&Array2::eye(2)) - 1.0).abs() < 1e-12);
        assert!((spectral_norm(&array![[3.0, 0.0], [0.0, 1.0]]) - 3.0).abs() < 1e-9);
        let w = array![[0.0, 2.0], [0.0, 0.0]];
        assert!((spectral_norm(&w) - sigma_2x2(&w)).abs() < 1e-6);
        assert!((spectral_norm(&w) - 2.0).abs() < 1e-12);
        assert_eq!(spectral_norm(&Array2::zeros((3, 2))), 0.0);
    }

    #[test]
    fn normalize_values() {
        let n = lipschitz_normalize(&array![[4.0, 0.0], [0.0, 2.0]]).unwrap();
        assert!((&n - &array![[1.0, 0.0], [0.0, 0.5]]).iter().all(|d| d.abs() < 1e-9));
        let unit = array![[0.6, 0.0], [0.0, -1.0]];
        let again = lipschitz_normalize(&unit).unwrap();
        assert!((&again - &unit).iter().all(|d| d.abs() < 1e-6));
        assert!(lipschitz_normalize(&Array2::zeros((2, 2))).is_err());
    }

    #[test]
    fn homogeneous_in_scale() {
        let w = array![[1.0, -2.0, 0.5], [0.3, 0.7, -1.1]];
        let base = spectral_norm_with(&w, PowerIteration::precise());
        for c in [-3.0, 0.5, 7.0] {
            let s = spectral_norm_with(&(&w * c), PowerIteration::precise());
            assert!((s - c.abs() * base).abs() <= 1e-9 * s);
        }
    }
}
