//! Finite-difference verification of every analytic gradient, in f64 check
//! mode. Central differences are the oracle; the tape is the implementation
//! under test.

use crossview_tensor::check::{finite_diff_grad, max_rel_err};
use crossview_tensor::ops;
use crossview_tensor::rng;
use crossview_tensor::{backward, conv2d, group_norm, pool, upsample_bilinear2x, PoolKind, Tensor};

const H: f64 = 1e-3;
const TOL: f64 = 1e-3;

/// Check d(loss)/dx for `loss = sum(w ∘ f(x))` with fixed weights, comparing
/// the tape gradient against central differences.
fn check_grad<F>(label: &str, x: &Tensor<f64>, f: F)
where
    F: Fn(&Tensor<f64>) -> crossview_tensor::Result<Tensor<f64>>,
{
    let probe = f(x).expect(label);
    let mut wr = rng::stream(0xC0FFEE, label);
    let w = rng::normal_tensor::<f64>(&mut wr, probe.shape(), 1.0).unwrap();
    let loss_of = |x: &Tensor<f64>| ops::sum_all(&ops::mul(&f(x)?, &w)?);

    // earlier checks may have back-propagated into shared inputs
    x.zero_grad();
    let loss = loss_of(x).expect(label);
    backward(&loss).expect(label);
    let analytic: Vec<f64> = x.grad().expect("gradient populated");
    x.zero_grad();

    let numeric = finite_diff_grad(|x| loss_of(x), x, H).expect(label);
    let err = max_rel_err(&analytic, &numeric);
    assert!(err < TOL, "{label}: max rel err {err:.3e} >= {TOL:.0e}");
}

fn seeded(shape: &[usize], salt: &str) -> Tensor<f64> {
    let mut r = rng::stream(41, salt);
    let data = rng::normal_vec(&mut r, shape.iter().product());
    Tensor::param(shape, data).unwrap()
}

#[test]
fn elementwise_unary_grads() {
    let x = seeded(&[3, 4], "unary");
    check_grad("exp", &x, |x| x.exp());
    check_grad("sigmoid", &x, |x| x.sigmoid());
    check_grad("silu", &x, |x| x.silu());
    check_grad("affine", &x, |x| x.affine(1.7, -0.3));
    // keep inputs away from the relu/clamp kinks
    let off = seeded(&[3, 4], "unary-offset");
    check_grad("relu", &off, |x| x.affine(1.0, 3.0)?.relu());
    check_grad("clamp", &off, |x| x.clamp(-0.5, 0.5));
    let pos = seeded(&[3, 4], "unary-pos");
    check_grad("log", &pos, |x| x.mul(x)?.affine(1.0, 0.5)?.ln());
    check_grad("sqrt", &pos, |x| x.mul(x)?.affine(1.0, 0.5)?.sqrt());
}

#[test]
fn elementwise_binary_grads_with_broadcast() {
    let a = seeded(&[2, 3, 4], "bin-a");
    let b = seeded(&[3, 1], "bin-b");
    check_grad("add-b", &b, |b| ops::add(&a, b));
    check_grad("sub-b", &b, |b| ops::sub(&a, b));
    check_grad("mul-a", &a, |a| ops::mul(a, &b));
    check_grad("mul-b", &b, |b| ops::mul(&a, b));
    let bpos = {
        let t = seeded(&[3, 1], "bin-bpos");
        Tensor::param(t.shape(), t.to_vec().iter().map(|v| v.abs() + 0.5).collect()).unwrap()
    };
    check_grad("div-a", &a, |a| ops::div(a, &bpos));
    check_grad("div-b", &bpos, |b| ops::div(&a, b));
}

#[test]
fn matmul_grad_matches_finite_differences() {
    let a = seeded(&[3, 4], "mm-a");
    let b = seeded(&[4, 2], "mm-b");
    check_grad("matmul-a", &a, |a| ops::matmul(a, &b));
    check_grad("matmul-b", &b, |b| ops::matmul(&a, b));
}

#[test]
fn matmul_batched_grad() {
    let a = seeded(&[2, 2, 3], "bmm-a");
    let b = seeded(&[3, 2], "bmm-b");
    check_grad("bmm-broadcast-b", &b, |b| ops::matmul(&a, b));
    check_grad("bmm-a", &a, |a| ops::matmul(a, &b));
}

#[test]
fn softmax_grad() {
    let x = seeded(&[2, 5], "softmax");
    check_grad("softmax", &x, |x| x.softmax(1));
}

#[test]
fn reduction_grads() {
    let x = seeded(&[2, 3, 2], "reduce");
    check_grad("sum_axis", &x, |x| x.sum_axis(1, false));
    check_grad("mean_axis", &x, |x| x.mean_axis(2, true));
    check_grad("max_axis", &x, |x| x.max_axis(1, false));
    check_grad("mean_all", &x, |x| x.mean_all()?.reshape(&[1]));
}

#[test]
fn shape_op_grads() {
    let x = seeded(&[2, 3, 4], "shape");
    check_grad("reshape", &x, |x| x.reshape(&[6, 4]));
    check_grad("permute", &x, |x| x.permute(&[2, 0, 1]));
    let y = seeded(&[2, 1, 4], "shape-y");
    check_grad("concat", &x, |x| ops::concat(&[x.clone(), y.clone()], 1));
}

#[test]
fn embed_grad() {
    let table = seeded(&[5, 3], "embed");
    check_grad("embed", &table, |t| ops::embed(t, &[4, 0, 4, 2]));
}

#[test]
fn conv2d_grad_wrt_input_and_weights() {
    let x = seeded(&[1, 2, 5, 5], "conv-x");
    let w = seeded(&[3, 2, 3, 3], "conv-w");
    let b = seeded(&[3], "conv-b");
    check_grad("conv2d-x", &x, |x| conv2d(x, &w, &b, 1, 1));
    check_grad("conv2d-w", &w, |w| conv2d(&x, w, &b, 1, 1));
    check_grad("conv2d-b", &b, |b| conv2d(&x, &w, b, 1, 1));
    // stride 2 on odd input
    check_grad("conv2d-s2-x", &x, |x| conv2d(x, &w, &b, 2, 1));
}

#[test]
fn pool_grads() {
    let x = seeded(&[1, 2, 4, 4], "pool");
    check_grad("avgpool", &x, |x| pool(x, PoolKind::Avg, 2, 2));
    check_grad("maxpool", &x, |x| pool(x, PoolKind::Max, 2, 2));
}

#[test]
fn upsample_grad() {
    let x = seeded(&[1, 2, 3, 3], "up");
    check_grad("upsample", &x, |x| upsample_bilinear2x(x));
}

#[test]
fn group_norm_grads() {
    let x = seeded(&[2, 4, 3, 3], "gn-x");
    let gamma = seeded(&[4], "gn-g");
    let beta = seeded(&[4], "gn-b");
    check_grad("group_norm-x", &x, |x| group_norm(x, 2, &gamma, &beta, 1e-5));
    check_grad("group_norm-gamma", &gamma, |g| group_norm(&x, 2, g, &beta, 1e-5));
    check_grad("group_norm-beta", &beta, |b| group_norm(&x, 2, &gamma, b, 1e-5));
}

#[test]
fn fanout_graph_accumulates() {
    let x = seeded(&[4], "fanout");
    check_grad("fanout", &x, |x| {
        let a = x.silu()?;
        let b = x.sigmoid()?;
        let c = ops::add(&a, &b)?;
        ops::mul(&c, x)
    });
}
