//! Raw matrix kernels shared by matmul, conv2d (im2col), and attention.
//!
//! All three accumulate into `c` so backward passes can reuse them without
//! zero-filling temporaries. Loop orders keep the innermost stride at 1.

use crate::scalar::Scalar;

/// `c[m,n] += a[m,k] · b[k,n]`, all row-major.
pub fn gemm<E: Scalar>(m: usize, k: usize, n: usize, a: &[E], b: &[E], c: &mut [E]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &mut c[i * n..(i + 1) * n];
        for (p, &ap) in arow.iter().enumerate() {
            // Zero blocks are common (zeroed ego frames, zero-init projections);
            // with finite operands skipping them is bit-identical to computing.
            if ap == E::ZERO {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += ap * bv;
            }
        }
    }
}

/// `c[m,n] += aᵀ · b` where `a` is stored `[k,m]` row-major.
pub fn gemm_at_b<E: Scalar>(m: usize, k: usize, n: usize, a: &[E], b: &[E], c: &mut [E]) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for p in 0..k {
        let arow = &a[p * m..(p + 1) * m];
        let brow = &b[p * n..(p + 1) * n];
        for (i, &ap) in arow.iter().enumerate() {
            if ap == E::ZERO {
                continue;
            }
            let crow = &mut c[i * n..(i + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += ap * bv;
            }
        }
    }
}

/// `c[m,n] += a · bᵀ` where `b` is stored `[n,k]` row-major.
pub fn gemm_a_bt<E: Scalar>(m: usize, k: usize, n: usize, a: &[E], b: &[E], c: &mut [E]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &mut c[i * n..(i + 1) * n];
        for (j, cv) in crow.iter_mut().enumerate() {
            *cv += dot(arow, &b[j * k..(j + 1) * k]);
        }
    }
}

const LANES: usize = 8;

/// Lane-parallel dot product: eight independent accumulator chains so the
/// loop vectorizes despite non-associative float addition. The association
/// order is fixed, keeping results deterministic.
pub fn dot<E: Scalar>(x: &[E], y: &[E]) -> E {
    debug_assert_eq!(x.len(), y.len());
    let mut acc = [E::ZERO; LANES];
    let xc = x.chunks_exact(LANES);
    let yc = y.chunks_exact(LANES);
    let (xr, yr) = (xc.remainder(), yc.remainder());
    for (xs, ys) in xc.zip(yc) {
        for l in 0..LANES {
            acc[l] += xs[l] * ys[l];
        }
    }
    let mut tail = E::ZERO;
    for (xv, yv) in xr.iter().zip(yr) {
        tail += *xv * *yv;
    }
    let s01 = acc[0] + acc[1];
    let s23 = acc[2] + acc[3];
    let s45 = acc[4] + acc[5];
    let s67 = acc[6] + acc[7];
    ((s01 + s23) + (s45 + s67)) + tail
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_matches_naive() {
        let a: Vec<f64> = (0..6).map(|v| v as f64).collect(); // 2x3
        let b: Vec<f64> = (0..12).map(|v| (v as f64) * 0.5).collect(); // 3x4
        let mut c = vec![0.0; 8];
        gemm(2, 3, 4, &a, &b, &mut c);
        for i in 0..2 {
            for j in 0..4 {
                let mut s = 0.0;
                for p in 0..3 {
                    s += a[i * 3 + p] * b[p * 4 + j];
                }
                assert_eq!(c[i * 4 + j], s);
            }
        }
    }

    #[test]
    fn transposed_variants_agree() {
        let m = 3;
        let k = 5;
        let n = 2;
        let a: Vec<f64> = (0..m * k).map(|v| (v as f64).sin()).collect();
        let b: Vec<f64> = (0..k * n).map(|v| (v as f64).cos()).collect();
        let mut c0 = vec![0.0; m * n];
        gemm(m, k, n, &a, &b, &mut c0);

        // a stored transposed [k,m]
        let mut at = vec![0.0; k * m];
        for i in 0..m {
            for p in 0..k {
                at[p * m + i] = a[i * k + p];
            }
        }
        let mut c1 = vec![0.0; m * n];
        gemm_at_b(m, k, n, &at, &b, &mut c1);

        // b stored transposed [n,k]
        let mut bt = vec![0.0; n * k];
        for p in 0..k {
            for j in 0..n {
                bt[j * k + p] = b[p * n + j];
            }
        }
        let mut c2 = vec![0.0; m * n];
        gemm_a_bt(m, k, n, &a, &bt, &mut c2);

        for i in 0..m * n {
            assert!((c0[i] - c1[i]).abs() < 1e-12);
            assert!((c0[i] - c2[i]).abs() < 1e-12);
        }
    }
}
