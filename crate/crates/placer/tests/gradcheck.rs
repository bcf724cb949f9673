//! Finite-difference validation for every differentiable tape operation.
//!
//! Each case builds a scalar loss that touches the op with nontrivial
//! upstream weights, then compares the analytic gradient against central
//! differences. Inputs stay in [-2, 2] and away from kinks (relu and clip
//! boundaries) so the numeric derivative is well defined.

use std::rc::Rc;

use placer::check::{finite_diff_grad, max_rel_err};
use placer::tape::{Tape, Value};
use placer::tensor::Tensor;

const STEP: f64 = 1e-5;
const TOL: f64 = 1e-4;
const TOL_LINEAR: f64 = 1e-6;

/// Deterministic pseudo-data in [-2, 2], decorrelated across call sites.
fn data(n: usize, phase: f64) -> Vec<f64> {
    (0..n).map(|i| 2.0 * ((i as f64) * 0.7310 + phase).sin() * 0.93).collect()
}

fn mat(r: usize, c: usize, phase: f64) -> Tensor {
    Tensor::matrix(r, c, data(r * c, phase)).unwrap()
}

fn vector(n: usize, phase: f64) -> Tensor {
    Tensor::vector(data(n, phase))
}

/// Weight the op output elementwise by constants, then sum. This makes the
/// upstream gradient non-uniform so transposition bugs cannot cancel out.
fn weighted_sum(tape: &mut Tape, y: &Value) -> Value {
    let w = tape.constant(Tensor::new(
        y.shape().to_vec(),
        data(y.tensor().numel(), 0.21),
    )
    .unwrap());
    let prod = tape.mul(y, &w).unwrap();
    tape.sum_all(&prod)
}

fn check(x0: &Tensor, tol: f64, build: impl Fn(&Value, &mut Tape) -> Value) {
    let (analytic, numeric) = finite_diff_grad(x0, STEP, |x, tape| {
        let xv = tape.leaf("x", x.clone());
        let y = build(&xv, tape);
        let loss = weighted_sum(tape, &y);
        Ok((loss, xv))
    })
    .unwrap();
    let err = max_rel_err(&analytic, &numeric);
    assert!(err < tol, "gradient mismatch: max rel err {err}");
}

#[test]
fn grad_matmul_both_sides() {
    let b = mat(3, 2, 1.3);
    check(&mat(2, 3, 0.4), TOL_LINEAR, |x, t| {
        let bv = t.constant(b.clone());
        t.matmul(x, &bv).unwrap()
    });
    let a = mat(2, 3, 2.2);
    check(&mat(3, 2, 0.9), TOL_LINEAR, |x, t| {
        let av = t.constant(a.clone());
        t.matmul(&av, x).unwrap()
    });
}

#[test]
fn grad_matmul_nt_both_sides() {
    let b = mat(4, 3, 0.8);
    check(&mat(2, 3, 0.1), TOL_LINEAR, |x, t| {
        let bv = t.constant(b.clone());
        t.matmul_nt(x, &bv).unwrap()
    });
    let a = mat(2, 3, 1.9);
    check(&mat(4, 3, 0.5), TOL_LINEAR, |x, t| {
        let av = t.constant(a.clone());
        t.matmul_nt(&av, x).unwrap()
    });
}

#[test]
fn grad_transpose_and_reshape() {
    check(&mat(2, 4, 0.3), TOL_LINEAR, |x, t| t.transpose(x).unwrap());
    check(&mat(2, 4, 0.6), TOL_LINEAR, |x, t| t.reshape(x, &[4, 2]).unwrap());
}

#[test]
fn grad_add_sub_same_shape_and_scalar() {
    let other = mat(3, 3, 1.1);
    check(&mat(3, 3, 0.2), TOL_LINEAR, |x, t| {
        let o = t.constant(other.clone());
        t.add(x, &o).unwrap()
    });
    check(&mat(3, 3, 0.7), TOL_LINEAR, |x, t| {
        let o = t.constant(other.clone());
        t.sub(&o, x).unwrap()
    });
    // scalar leaf broadcast against a matrix
    check(&Tensor::scalar(0.37), TOL_LINEAR, |x, t| {
        let o = t.constant(other.clone());
        t.add(&o, x).unwrap()
    });
    check(&Tensor::scalar(-1.2), TOL_LINEAR, |x, t| {
        let o = t.constant(other.clone());
        t.sub(x, &o).unwrap()
    });
}

#[test]
fn grad_mul_same_shape_and_scalar() {
    let other = mat(3, 3, 0.9);
    check(&mat(3, 3, 0.35), TOL, |x, t| {
        let o = t.constant(other.clone());
        t.mul(x, &o).unwrap()
    });
    check(&Tensor::scalar(0.8), TOL, |x, t| {
        let o = t.constant(other.clone());
        t.mul(&o, x).unwrap()
    });
}

#[test]
fn grad_minimum_both_sides() {
    // Offsets keep elements strictly ordered so the min has no ties.
    let other = Tensor::matrix(2, 2, vec![5.0, -5.0, 5.0, -5.0]).unwrap();
    check(&mat(2, 2, 0.15), TOL, |x, t| {
        let o = t.constant(other.clone());
        t.minimum(x, &o).unwrap()
    });
    check(&mat(2, 2, 0.55), TOL, |x, t| {
        let o = t.constant(other.clone());
        t.minimum(&o, x).unwrap()
    });
}

#[test]
fn grad_scale_add_bias_mul_row() {
    check(&mat(3, 4, 0.25), TOL_LINEAR, |x, t| t.scale(x, -1.7));
    let b = vector(4, 1.5);
    check(&mat(3, 4, 0.45), TOL_LINEAR, |x, t| {
        let bv = t.constant(b.clone());
        t.add_bias(x, &bv).unwrap()
    });
    check(&vector(4, 0.65), TOL_LINEAR, |x, t| {
        let m = t.constant(mat(3, 4, 2.0));
        t.add_bias(&m, x).unwrap()
    });
    let g = vector(4, 0.85);
    check(&mat(3, 4, 1.05), TOL, |x, t| {
        let gv = t.constant(g.clone());
        t.mul_row(x, &gv).unwrap()
    });
    check(&vector(4, 1.25), TOL, |x, t| {
        let m = t.constant(mat(3, 4, 2.4));
        t.mul_row(&m, x).unwrap()
    });
}

#[test]
fn grad_pointwise_nonlinearities() {
    check(&mat(2, 3, 0.12), TOL, |x, t| t.sigmoid(x));
    check(&mat(2, 3, 0.32), TOL, |x, t| t.tanh(x));
    check(&mat(2, 3, 0.52), TOL, |x, t| t.exp(x));
    // keep relu inputs away from the kink at zero
    let x0 = Tensor::matrix(2, 3, vec![1.5, -1.2, 0.7, -0.4, 2.0, -1.9]).unwrap();
    check(&x0, TOL, |x, t| t.relu(x));
    let pos = Tensor::matrix(2, 3, vec![0.3, 1.9, 0.8, 1.2, 0.05, 2.0]).unwrap();
    check(&pos, TOL, |x, t| t.log(x).unwrap());
}

#[test]
fn grad_softmax_and_log_softmax_both_axes() {
    for axis in [0, 1] {
        check(&mat(3, 4, 0.17), TOL, |x, t| t.softmax(x, axis).unwrap());
        check(&mat(3, 4, 0.77), TOL, |x, t| t.log_softmax(x, axis).unwrap());
    }
    check(&vector(5, 0.37), TOL, |x, t| t.softmax(x, 0).unwrap());
    check(&vector(5, 0.57), TOL, |x, t| t.log_softmax(x, 0).unwrap());
}

#[test]
fn grad_reductions() {
    for axis in [0, 1] {
        check(&mat(3, 4, 0.14), TOL, |x, t| t.reduce_max(x, axis).unwrap());
        check(&mat(3, 4, 0.34), TOL_LINEAR, |x, t| t.sum_axis(x, axis).unwrap());
        check(&mat(3, 4, 0.54), TOL_LINEAR, |x, t| t.mean_axis(x, axis).unwrap());
    }
    check(&mat(3, 4, 0.74), TOL_LINEAR, |x, t| t.sum_all(x));
    check(&mat(3, 4, 0.94), TOL_LINEAR, |x, t| t.mean_all(x));
    check(&vector(6, 1.14), TOL, |x, t| t.reduce_max(x, 0).unwrap());
}

#[test]
fn grad_concat_all_layouts() {
    let other = mat(2, 3, 1.45);
    check(&mat(2, 3, 0.19), TOL_LINEAR, |x, t| {
        let o = t.constant(other.clone());
        t.concat(&[x.clone(), o], 0).unwrap()
    });
    check(&mat(2, 3, 0.39), TOL_LINEAR, |x, t| {
        let o = t.constant(other.clone());
        t.concat(&[o, x.clone()], 1).unwrap()
    });
    check(&vector(3, 0.59), TOL_LINEAR, |x, t| {
        let o = t.constant(vector(2, 1.65));
        t.concat(&[o, x.clone()], 0).unwrap()
    });
}

#[test]
fn grad_slices_and_gathers() {
    check(&mat(4, 3, 0.22), TOL_LINEAR, |x, t| t.slice_rows(x, 1, 2).unwrap());
    check(&mat(4, 3, 0.42), TOL_LINEAR, |x, t| t.slice_cols(x, 1, 2).unwrap());
    // duplicate index exercises gradient accumulation
    check(&mat(4, 3, 0.62), TOL_LINEAR, |x, t| {
        t.gather_rows(x, Rc::new(vec![2, 0, 2, 3])).unwrap()
    });
    check(&mat(3, 4, 0.82), TOL_LINEAR, |x, t| {
        t.gather_per_row(x, Rc::new(vec![3, 0, 1])).unwrap()
    });
}

#[test]
fn grad_segment_max_with_empty_segment() {
    check(&mat(5, 2, 0.28), TOL, |x, t| {
        t.segment_max(x, &[0, 2, 2, 5]).unwrap()
    });
}

#[test]
fn grad_layer_norm_all_inputs() {
    let gain = vector(4, 0.48);
    let bias = vector(4, 0.68);
    let x0 = mat(3, 4, 0.88);
    check(&x0, TOL, |x, t| {
        let g = t.constant(gain.clone());
        let b = t.constant(bias.clone());
        t.layer_norm(x, &g, &b, 1e-5).unwrap()
    });
    check(&gain, TOL, |gv, t| {
        let x = t.constant(x0.clone());
        let b = t.constant(bias.clone());
        t.layer_norm(&x, gv, &b, 1e-5).unwrap()
    });
    check(&bias, TOL_LINEAR, |bv, t| {
        let x = t.constant(x0.clone());
        let g = t.constant(gain.clone());
        t.layer_norm(&x, &g, bv, 1e-5).unwrap()
    });
}

#[test]
fn grad_clip_interior() {
    // all inputs strictly inside or strictly outside the clip range
    let x0 = Tensor::vector(vec![-1.9, -0.4, 0.3, 1.8, 0.9, -1.1]);
    check(&x0, TOL, |x, t| t.clip(x, -1.0, 1.0));
}

#[test]
fn grad_composite_network() {
    // two-layer net with layer norm, exercising op chaining end to end
    let w1 = mat(3, 4, 1.21);
    let b1 = vector(4, 1.41);
    let w2 = mat(4, 2, 1.61);
    let gain = vector(4, 1.81);
    let bias = vector(4, 2.01);
    check(&mat(2, 3, 0.95), 1e-4, |x, t| {
        let w1v = t.constant(w1.clone());
        let b1v = t.constant(b1.clone());
        let w2v = t.constant(w2.clone());
        let gv = t.constant(gain.clone());
        let bv = t.constant(bias.clone());
        let h = t.matmul(x, &w1v).unwrap();
        let h = t.add_bias(&h, &b1v).unwrap();
        let h = t.layer_norm(&h, &gv, &bv, 1e-5).unwrap();
        let h = t.tanh(&h);
        t.matmul(&h, &w2v).unwrap()
    });
}
