//! Central finite differences: the independent oracle for every analytic
//! gradient in the workspace.

use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Numeric gradient `(f(x+h·e_i) - f(x-h·e_i)) / 2h` per element of `x`.
///
/// `f` must be a deterministic scalar function of the *current* value of `x`;
/// it is re-evaluated with perturbed entries written in place.
pub fn finite_diff_grad<E, F>(f: F, x: &Tensor<E>, h: f64) -> Result<Vec<f64>>
where
    E: Scalar,
    F: Fn(&Tensor<E>) -> Result<Tensor<E>>,
{
    let n = x.numel();
    let mut out = vec![0.0f64; n];
    let eh = E::from_f64(h);
    for i in 0..n {
        let orig = x.get_elem(i);
        x.set_elem(i, orig + eh);
        let fp = f(x)?.item()?.to_f64();
        x.set_elem(i, orig - eh);
        let fm = f(x)?.item()?.to_f64();
        x.set_elem(i, orig);
        out[i] = (fp - fm) / (2.0 * h);
    }
    Ok(out)
}

/// Worst relative disagreement between an analytic gradient and its
/// finite-difference estimate. Entries where both are below `1e-6` compare
/// absolutely, so flat directions do not divide by zero.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let mut worst = 0.0f64;
    for (&a, &n) in analytic.iter().zip(numeric) {
        let denom = a.abs().max(n.abs());
        let err = if denom < 1e-6 {
            (a - n).abs()
        } else {
            (a - n).abs() / denom
        };
        worst = worst.max(err);
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops;

    #[test]
    fn linear_function_gives_ones() {
        let x = Tensor::<f64>::from_vec(&[3], vec![0.3, -1.0, 2.0]).unwrap();
        let g = finite_diff_grad(|x| ops::sum_all(x), &x, 1e-3).unwrap();
        for v in g {
            assert!((v - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn quadratic_is_exact_for_central_differences() {
        let x = Tensor::<f64>::from_vec(&[1], vec![3.0]).unwrap();
        let g = finite_diff_grad(|x| ops::sum_all(&ops::mul(x, x)?), &x, 1e-3).unwrap();
        assert!((g[0] - 6.0).abs() < 1e-6);
    }
}
