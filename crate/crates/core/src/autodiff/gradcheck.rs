//! Central finite-difference checks for every differentiable op.

use std::sync::Arc;

use ndarray::{array, Array2};
use rand::Rng;

use super::tape::{Tape, Var};
use crate::graph::Csr;
use crate::rng;

const H: f64 = 1e-5;
const REL_TOL: f64 = 1e-4;

fn random(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
    let mut r = rng::rng_from_seed(seed);
    Array2::from_shape_fn((rows, cols), |_| r.random_range(-1.0..1.0))
}

/// Builds the graph from `inputs` (all registered as params) and compares
/// analytic gradients against central differences of the scalar output.
fn check(inputs: Vec<Array2<f64>>, build: impl Fn(&mut Tape, &[Var]) -> Var) {
    let eval = |vals: &[Array2<f64>]| {
        let mut t = Tape::new();
        let vars: Vec<Var> = vals.iter().map(|v| t.param(v.clone())).collect();
        let out = build(&mut t, &vars);
        t.scalar(out)
    };
    let mut t = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|v| t.param(v.clone())).collect();
    let out = build(&mut t, &vars);
    t.backward(out).unwrap();
    for (k, var) in vars.iter().enumerate() {
        let analytic = t
            .grad(*var)
            .cloned()
            .unwrap_or_else(|| Array2::zeros(inputs[k].dim()));
        for idx in 0..inputs[k].len() {
            let mut plus = inputs.clone();
            let mut minus = inputs.clone();
            plus[k].as_slice_mut().unwrap()[idx] += H;
            minus[k].as_slice_mut().unwrap()[idx] -= H;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * H);
            let a = analytic.as_slice().unwrap()[idx];
            if a.abs() > 1e-6 {
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs());
                assert!(rel <= REL_TOL, "input {k}[{idx}]: analytic {a}, numeric {numeric}");
            } else {
                assert!(numeric.abs() < 1e-5, "input {k}[{idx}]: analytic {a}, numeric {numeric}");
            }
        }
    }
}

// weighted sum so every output entry gets a distinct upstream gradient
fn weighted_sum(t: &mut Tape, x: Var, seed: u64) -> Var {
    let (r, c) = t.value(x).dim();
    let w = t.constant(random(r, c, seed));
    let p = t.mul_elem(x, w).unwrap();
    t.mean_scalar(p)
}

#[test]
fn matmul_add_sub_scale() {
    check(vec![random(3, 4, 1), random(4, 2, 2), random(3, 2, 3)], |t, v| {
        let ab = t.matmul(v[0], v[1]).unwrap();
        let s = t.add(ab, v[2]).unwrap();
        let d = t.sub(s, v[2]).unwrap();
        let d = t.add(d, v[2]).unwrap();
        let d = t.scale(d, -1.7);
        weighted_sum(t, d, 9)
    });
}

#[test]
fn add_row_and_mul() {
    check(vec![random(4, 3, 4), random(1, 3, 5), random(4, 3, 6)], |t, v| {
        let a = t.add_row(v[0], v[1]).unwrap();
        let m = t.mul_elem(a, v[2]).unwrap();
        weighted_sum(t, m, 10)
    });
}

#[test]
fn relu_and_sigmoid() {
    // keep relu inputs away from the kink
    let x = random(5, 3, 7).mapv(|v| if v.abs() < 0.05 { v + 0.2 } else { v });
    check(vec![x], |t, v| {
        let r = t.relu(v[0]);
        let s = t.sigmoid(r);
        weighted_sum(t, s, 11)
    });
}

#[test]
fn batchnorm_train_mode() {
    check(vec![random(6, 3, 8), random(1, 3, 12) + 1.0, random(1, 3, 13)], |t, v| {
        let (y, _) = t.batchnorm(v[0], v[1], v[2], 1e-5).unwrap();
        weighted_sum(t, y, 14)
    });
}

#[test]
fn col_affine() {
    check(vec![random(4, 2, 15)], |t, v| {
        let y = t.col_affine(v[0], array![2.0, -0.5], &array![1.0, 3.0]).unwrap();
        weighted_sum(t, y, 16)
    });
}

#[test]
fn row_normalize() {
    check(vec![random(4, 3, 17)], |t, v| {
        let y = t.row_l2_normalize(v[0]);
        weighted_sum(t, y, 18)
    });
}

#[test]
fn bce_over_mask() {
    check(vec![random(5, 1, 19)], |t, v| {
        let p = t.sigmoid(v[0]);
        t.bce(p, &[1, 0, 1, 1, 0], &[0, 1, 3, 4]).unwrap()
    });
}

#[test]
fn cosine_distance() {
    check(vec![random(5, 4, 20), random(5, 4, 21)], |t, v| {
        let d = t.cosine_distance_rows(v[0], v[1]).unwrap();
        weighted_sum(t, d, 22)
    });
}

#[test]
fn neighbor_aggregation_sum_and_mean() {
    let adj = Arc::new(Csr::from_edges(5, &[(0, 1), (1, 2), (1, 3), (3, 4)]).unwrap());
    for mean in [false, true] {
        let adj = Arc::clone(&adj);
        check(vec![random(5, 3, 23)], move |t, v| {
            let y = t.neighbor_aggregate(v[0], &adj, mean).unwrap();
            weighted_sum(t, y, 24)
        });
    }
}

#[test]
fn shared_input_accumulates() {
    check(vec![random(3, 3, 25)], |t, v| {
        let sq = t.matmul(v[0], v[0]).unwrap();
        let y = t.mul_elem(sq, v[0]).unwrap();
        weighted_sum(t, y, 26)
    });
}

#[test]
fn backward_is_bitwise_deterministic() {
    let run = || {
        let mut t = Tape::new();
        let x = t.param(random(6, 4, 27));
        let w = t.param(random(4, 3, 28));
        let y = t.matmul(x, w).unwrap();
        let n = t.row_l2_normalize(y);
        let loss = weighted_sum(&mut t, n, 29);
        t.backward(loss).unwrap();
        (t.grad(x).unwrap().clone(), t.grad(w).unwrap().clone())
    };
    let (a, b) = (run(), run());
    assert!(a.0.iter().zip(&b.0).all(|(p, q)| p.to_bits() == q.to_bits()));
    assert!(a.1.iter().zip(&b.1).all(|(p, q)| p.to_bits() == q.to_bits()));
}
