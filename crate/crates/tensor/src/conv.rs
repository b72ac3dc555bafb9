//! Spatial operators: conv2d (im2col + GEMM), pooling, bilinear 2x
//! upsampling, and group normalization.

use crate::error::{invalid, Result, TensorError};
use crate::gemm::{gemm, gemm_a_bt, gemm_at_b};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

fn dims4(op: &'static str, x: &Tensor<impl Scalar>) -> Result<[usize; 4]> {
    match *x.shape() {
        [b, c, h, w] => Ok([b, c, h, w]),
        _ => Err(invalid(op, format!("expected [B,C,H,W], got {:?}", x.shape()))),
    }
}

fn conv_out_len(op: &'static str, size: usize, k: usize, stride: usize, pad: usize) -> Result<usize> {
    let span = size + 2 * pad;
    if span < k || (span - k) % stride != 0 {
        return Err(invalid(
            op,
            format!("non-integral output size: input {size}, kernel {k}, stride {stride}, pad {pad}"),
        ));
    }
    Ok((span - k) / stride + 1)
}

// Patch matrix in spatial-major layout [S, K] with K = cin*kh*kw: every
// conv GEMM then reduces over K, which is long enough to vectorize well.
fn im2col<E: Scalar>(
    x: &[E],
    cin: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
    cols: &mut [E],
) {
    let k = cin * kh * kw;
    for oy in 0..ho {
        for ox in 0..wo {
            let dst = (oy * wo + ox) * k;
            for c in 0..cin {
                let plane = c * h * w;
                for ki in 0..kh {
                    let iy = (oy * stride + ki) as isize - pad as isize;
                    let row = dst + c * kh * kw + ki * kw;
                    if iy < 0 || iy >= h as isize {
                        for v in &mut cols[row..row + kw] {
                            *v = E::ZERO;
                        }
                        continue;
                    }
                    let src = plane + iy as usize * w;
                    for kj in 0..kw {
                        let ix = (ox * stride + kj) as isize - pad as isize;
                        cols[row + kj] = if ix < 0 || ix >= w as isize {
                            E::ZERO
                        } else {
                            x[src + ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im<E: Scalar>(
    cols: &[E],
    cin: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
    x: &mut [E],
) {
    let k = cin * kh * kw;
    for oy in 0..ho {
        for ox in 0..wo {
            let src = (oy * wo + ox) * k;
            for c in 0..cin {
                let plane = c * h * w;
                for ki in 0..kh {
                    let iy = (oy * stride + ki) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = plane + iy as usize * w;
                    let row = src + c * kh * kw + ki * kw;
                    for kj in 0..kw {
                        let ix = (ox * stride + kj) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            x[dst + ix as usize] += cols[row + kj];
                        }
                    }
                }
            }
        }
    }
}

/// 2-D cross-correlation with zero padding.
///
/// `x: [B,Cin,H,W]`, `w: [Cout,Cin,kh,kw]` (odd kernels), `bias: [Cout]`.
pub fn conv2d<E: Scalar>(
    x: &Tensor<E>,
    w: &Tensor<E>,
    bias: &Tensor<E>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<E>> {
    let [b, cin, h, wd] = dims4("conv2d", x)?;
    let ws = w.shape().to_vec();
    let (cout, wcin, kh, kw) = match ws[..] {
        [a, b2, c, d] => (a, b2, c, d),
        _ => return Err(invalid("conv2d", format!("weight must be rank 4, got {ws:?}"))),
    };
    if wcin != cin || bias.shape() != [cout] {
        return Err(TensorError::ShapeMismatch {
            op: "conv2d",
            lhs: x.shape().to_vec(),
            rhs: ws,
        });
    }
    if kh % 2 == 0 || kw % 2 == 0 {
        return Err(invalid("conv2d", format!("kernel dims must be odd, got {kh}x{kw}")));
    }
    if stride == 0 {
        return Err(invalid("conv2d", "stride must be positive"));
    }
    let ho = conv_out_len("conv2d", h, kh, stride, pad)?;
    let wo = conv_out_len("conv2d", wd, kw, stride, pad)?;
    let k = cin * kh * kw;
    let s = ho * wo;

    let mut out = vec![E::ZERO; b * cout * s];
    let mut cols_all = vec![E::ZERO; b * s * k];
    {
        let xv = x.data();
        let wv = w.data();
        let bv = bias.data();
        for bi in 0..b {
            let cols = &mut cols_all[bi * s * k..(bi + 1) * s * k];
            im2col(&xv[bi * cin * h * wd..], cin, h, wd, kh, kw, stride, pad, ho, wo, cols);
            let o = &mut out[bi * cout * s..(bi + 1) * cout * s];
            // out[cout, S] = W[cout, K] · colsᵀ, cols stored [S, K]
            gemm_a_bt(cout, k, s, &wv, cols, o);
            for c in 0..cout {
                let add = bv[c];
                for v in &mut o[c * s..(c + 1) * s] {
                    *v += add;
                }
            }
        }
    }

    Tensor::from_op(
        "conv2d",
        vec![b, cout, ho, wo],
        out,
        vec![x.clone(), w.clone(), bias.clone()],
        Box::new(move |g, _, inputs| {
            let (x, w, bias) = (&inputs[0], &inputs[1], &inputs[2]);
            let mut gw = vec![E::ZERO; w.numel()];
            let mut gb = vec![E::ZERO; cout];
            let mut gx = if x.grad_enabled() {
                Some(vec![E::ZERO; x.numel()])
            } else {
                None
            };
            {
                let wv = w.data();
                for bi in 0..b {
                    let go = &g[bi * cout * s..(bi + 1) * cout * s];
                    let cols = &cols_all[bi * s * k..(bi + 1) * s * k];
                    // dW[cout, K] += dOut[cout, S] · cols[S, K]
                    gemm(cout, s, k, go, cols, &mut gw);
                    for c in 0..cout {
                        for &v in &go[c * s..(c + 1) * s] {
                            gb[c] += v;
                        }
                    }
                    if let Some(gx) = gx.as_mut() {
                        // dcols[S, K] = dOutᵀ[S, cout] · W[cout, K]
                        let mut gcols = vec![E::ZERO; s * k];
                        gemm_at_b(s, cout, k, go, &wv, &mut gcols);
                        col2im(
                            &gcols,
                            cin,
                            h,
                            wd,
                            kh,
                            kw,
                            stride,
                            pad,
                            ho,
                            wo,
                            &mut gx[bi * cin * h * wd..(bi + 1) * cin * h * wd],
                        );
                    }
                }
            }
            if let Some(gx) = gx {
                x.accum_grad(&gx);
            }
            w.accum_grad(&gw);
            bias.accum_grad(&gb);
        }),
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PoolKind {
    Avg,
    Max,
}

/// Window reduction over `[B,C,H,W]`. Max routes its gradient to the first
/// maximal element of each window.
pub fn pool<E: Scalar>(x: &Tensor<E>, kind: PoolKind, k: usize, stride: usize) -> Result<Tensor<E>> {
    let [b, c, h, w] = dims4("pool", x)?;
    if k == 0 || stride == 0 || k > h || k > w {
        return Err(invalid("pool", format!("window {k} does not fit {h}x{w}")));
    }
    let ho = conv_out_len("pool", h, k, stride, 0)?;
    let wo = conv_out_len("pool", w, k, stride, 0)?;
    let s = ho * wo;
    let mut out = vec![E::ZERO; b * c * s];
    let mut argmax = if kind == PoolKind::Max {
        vec![0u32; b * c * s]
    } else {
        Vec::new()
    };
    {
        let xv = x.data();
        for bc in 0..b * c {
            let plane = &xv[bc * h * w..(bc + 1) * h * w];
            for oy in 0..ho {
                for ox in 0..wo {
                    let oi = bc * s + oy * wo + ox;
                    match kind {
                        PoolKind::Avg => {
                            let mut acc = E::ZERO;
                            for ky in 0..k {
                                let row = (oy * stride + ky) * w + ox * stride;
                                for kx in 0..k {
                                    acc += plane[row + kx];
                                }
                            }
                            out[oi] = acc / E::from_f64((k * k) as f64);
                        }
                        PoolKind::Max => {
                            let mut best = E::neg_infinity();
                            let mut bi = 0usize;
                            for ky in 0..k {
                                let row = (oy * stride + ky) * w + ox * stride;
                                for kx in 0..k {
                                    let v = plane[row + kx];
                                    if v > best {
                                        best = v;
                                        bi = row + kx;
                                    }
                                }
                            }
                            out[oi] = best;
                            argmax[oi] = bi as u32;
                        }
                    }
                }
            }
        }
    }
    Tensor::from_op(
        "pool",
        vec![b, c, ho, wo],
        out,
        vec![x.clone()],
        Box::new(move |g, _, inputs| {
            let mut gx = vec![E::ZERO; inputs[0].numel()];
            match kind {
                PoolKind::Avg => {
                    let inv = E::ONE / E::from_f64((k * k) as f64);
                    for bc in 0..b * c {
                        for oy in 0..ho {
                            for ox in 0..wo {
                                let gv = g[bc * s + oy * wo + ox] * inv;
                                for ky in 0..k {
                                    let row = bc * h * w + (oy * stride + ky) * w + ox * stride;
                                    for kx in 0..k {
                                        gx[row + kx] += gv;
                                    }
                                }
                            }
                        }
                    }
                }
                PoolKind::Max => {
                    for bc in 0..b * c {
                        for oi in 0..s {
                            gx[bc * h * w + argmax[bc * s + oi] as usize] += g[bc * s + oi];
                        }
                    }
                }
            }
            inputs[0].accum_grad(&gx);
        }),
    )
}

/// Per-axis source taps and interpolation weight for 2x upsampling
/// (align-corners = false, borders clamped).
fn up2_taps(n: usize) -> Vec<(usize, usize, f64)> {
    (0..2 * n)
        .map(|i| {
            let src = (i as f64 + 0.5) / 2.0 - 0.5;
            let floor = src.floor();
            let t = src - floor;
            let i0 = floor.max(0.0) as usize;
            let i1 = (floor as isize + 1).clamp(0, n as isize - 1) as usize;
            (i0.min(n - 1), i1, t)
        })
        .collect()
}

/// Bilinear 2x upsampling of `[B,C,H,W]`. Computed as nested lerps
/// `a + t*(b-a)`, which is exact on constant inputs.
pub fn upsample_bilinear2x<E: Scalar>(x: &Tensor<E>) -> Result<Tensor<E>> {
    let [b, c, h, w] = dims4("upsample_bilinear2x", x)?;
    let ty = up2_taps(h);
    let tx = up2_taps(w);
    let (ho, wo) = (2 * h, 2 * w);
    let mut out = vec![E::ZERO; b * c * ho * wo];
    {
        let xv = x.data();
        for bc in 0..b * c {
            let plane = &xv[bc * h * w..(bc + 1) * h * w];
            let dst = &mut out[bc * ho * wo..(bc + 1) * ho * wo];
            for (oy, &(y0, y1, wy)) in ty.iter().enumerate() {
                let wy = E::from_f64(wy);
                for (ox, &(x0, x1, wx)) in tx.iter().enumerate() {
                    let wx = E::from_f64(wx);
                    let a = plane[y0 * w + x0];
                    let bv = plane[y0 * w + x1];
                    let cv = plane[y1 * w + x0];
                    let d = plane[y1 * w + x1];
                    let top = a + wx * (bv - a);
                    let bot = cv + wx * (d - cv);
                    dst[oy * wo + ox] = top + wy * (bot - top);
                }
            }
        }
    }
    Tensor::from_op(
        "upsample_bilinear2x",
        vec![b, c, ho, wo],
        out,
        vec![x.clone()],
        Box::new(move |g, _, inputs| {
            let mut gx = vec![E::ZERO; inputs[0].numel()];
            for bc in 0..b * c {
                let src = &g[bc * ho * wo..(bc + 1) * ho * wo];
                let dst = &mut gx[bc * h * w..(bc + 1) * h * w];
                for (oy, &(y0, y1, wy)) in ty.iter().enumerate() {
                    let wy = E::from_f64(wy);
                    for (ox, &(x0, x1, wx)) in tx.iter().enumerate() {
                        let wx = E::from_f64(wx);
                        let gv = src[oy * wo + ox];
                        dst[y0 * w + x0] += gv * (E::ONE - wy) * (E::ONE - wx);
                        dst[y0 * w + x1] += gv * (E::ONE - wy) * wx;
                        dst[y1 * w + x0] += gv * wy * (E::ONE - wx);
                        dst[y1 * w + x1] += gv * wy * wx;
                    }
                }
            }
            inputs[0].accum_grad(&gx);
        }),
    )
}

/// Group normalization over `[B,C,H,W]` followed by a per-channel affine.
///
/// Composed from differentiable primitives, so the backward pass comes for
/// free and is covered by the finite-difference suite.
pub fn group_norm<E: Scalar>(
    x: &Tensor<E>,
    groups: usize,
    gamma: &Tensor<E>,
    beta: &Tensor<E>,
    eps: f64,
) -> Result<Tensor<E>> {
    let [b, c, h, w] = dims4("group_norm", x)?;
    if groups == 0 || c % groups != 0 {
        return Err(invalid(
            "group_norm",
            format!("channels {c} not divisible by groups {groups}"),
        ));
    }
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(TensorError::ShapeMismatch {
            op: "group_norm",
            lhs: vec![c],
            rhs: gamma.shape().to_vec(),
        });
    }
    let cg = c / groups;
    let xs = x.reshape(&[b, groups, cg * h * w])?;
    let mu = xs.mean_axis(2, true)?;
    let d = xs.sub(&mu)?;
    let var = d.mul(&d)?.mean_axis(2, true)?;
    let std = var.affine(1.0, eps)?.sqrt()?;
    let xn = d.div(&std)?.reshape(&[b, c, h, w])?;
    let g4 = gamma.reshape(&[1, c, 1, 1])?;
    let b4 = beta.reshape(&[1, c, 1, 1])?;
    xn.mul(&g4)?.add(&b4)
}

impl<E: Scalar> Tensor<E> {
    pub fn conv2d(&self, w: &Tensor<E>, bias: &Tensor<E>, stride: usize, pad: usize) -> Result<Tensor<E>> {
        conv2d(self, w, bias, stride, pad)
    }
    pub fn pool(&self, kind: PoolKind, k: usize, stride: usize) -> Result<Tensor<E>> {
        pool(self, kind, k, stride)
    }
    pub fn upsample_bilinear2x(&self) -> Result<Tensor<E>> {
        upsample_bilinear2x(self)
    }
    pub fn group_norm(&self, groups: usize, gamma: &Tensor<E>, beta: &Tensor<E>, eps: f64) -> Result<Tensor<E>> {
        group_norm(self, groups, gamma, beta, eps)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::sum_all;
    use crate::tape::backward;

    #[test]
    fn identity_kernel() {
        let x = Tensor::<f32>::from_vec(&[1, 1, 2, 2], vec![1., 2., 3., 4.]).unwrap();
        let w = Tensor::<f32>::from_vec(&[1, 1, 1, 1], vec![1.0]).unwrap();
        let b = Tensor::<f32>::zeros(&[1]);
        let y = conv2d(&x, &w, &b, 1, 0).unwrap();
        assert_eq!(y.to_vec(), vec![1., 2., 3., 4.]);
    }

    #[test]
    fn all_ones_center_sum() {
        let x = Tensor::<f32>::ones(&[1, 1, 3, 3]);
        let w = Tensor::<f32>::ones(&[1, 1, 3, 3]);
        let b = Tensor::<f32>::zeros(&[1]);
        let y = conv2d(&x, &w, &b, 1, 1).unwrap();
        assert_eq!(y.shape(), &[1, 1, 3, 3]);
        assert_eq!(y.to_vec()[4], 9.0); // center sees the full window
    }

    #[test]
    fn even_kernel_rejected() {
        let x = Tensor::<f32>::ones(&[1, 1, 4, 4]);
        let w = Tensor::<f32>::ones(&[1, 1, 2, 2]);
        let b = Tensor::<f32>::zeros(&[1]);
        assert!(conv2d(&x, &w, &b, 1, 0).is_err());
    }

    #[test]
    fn non_integral_output_rejected() {
        // (4 + 2 - 3) / 2 is not integral
        let x = Tensor::<f32>::ones(&[1, 1, 4, 4]);
        let w = Tensor::<f32>::ones(&[1, 1, 3, 3]);
        let b = Tensor::<f32>::zeros(&[1]);
        assert!(conv2d(&x, &w, &b, 2, 1).is_err());
    }

    #[test]
    fn pool_window_values() {
        let x = Tensor::<f32>::from_vec(&[1, 1, 2, 2], vec![1., 2., 3., 4.]).unwrap();
        assert_eq!(pool(&x, PoolKind::Max, 2, 2).unwrap().to_vec(), vec![4.0]);
        assert_eq!(pool(&x, PoolKind::Avg, 2, 2).unwrap().to_vec(), vec![2.5]);
    }

    #[test]
    fn maxpool_routes_gradient_to_argmax() {
        let x = Tensor::<f64>::param(&[1, 1, 2, 2], vec![1., 2., 3., 4.]).unwrap();
        let y = pool(&x, PoolKind::Max, 2, 2).unwrap();
        backward(&sum_all(&y).unwrap()).unwrap();
        assert_eq!(x.grad().unwrap(), vec![0., 0., 0., 1.]);
    }

    #[test]
    fn upsample_constant_exact() {
        let x = Tensor::<f32>::full(&[1, 1, 3, 3], 5.0);
        let y = upsample_bilinear2x(&x).unwrap();
        assert_eq!(y.shape(), &[1, 1, 6, 6]);
        assert!(y.to_vec().iter().all(|&v| v == 5.0));
    }

    #[test]
    fn upsample_single_pixel_replicates() {
        let x = Tensor::<f32>::from_vec(&[1, 1, 1, 1], vec![3.25]).unwrap();
        let y = upsample_bilinear2x(&x).unwrap();
        assert_eq!(y.to_vec(), vec![3.25; 4]);
    }

    #[test]
    fn upsample_ramp_column() {
        // column [0,1]^T -> rows [0, 0.25, 0.75, 1]
        let x = Tensor::<f64>::from_vec(&[1, 1, 2, 1], vec![0.0, 1.0]).unwrap();
        let y = upsample_bilinear2x(&x).unwrap();
        let v = y.to_vec();
        let expect = [0.0, 0.0, 0.25, 0.25, 0.75, 0.75, 1.0, 1.0];
        for (a, e) in v.iter().zip(expect) {
            assert!((a - e).abs() < 1e-12, "{v:?}");
        }
    }

    #[test]
    fn group_norm_constant_input_is_zero() {
        let x = Tensor::<f32>::full(&[1, 8, 2, 2], 7.0);
        let gamma = Tensor::<f32>::ones(&[8]);
        let beta = Tensor::<f32>::zeros(&[8]);
        let y = group_norm(&x, 8, &gamma, &beta, 1e-5).unwrap();
        assert!(y.to_vec().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn group_norm_affine_collapse() {
        let x = Tensor::<f32>::from_vec(&[1, 2, 1, 2], vec![1., 2., 3., 4.]).unwrap();
        let gamma = Tensor::<f32>::zeros(&[2]);
        let beta = Tensor::<f32>::full(&[2], 0.7);
        let y = group_norm(&x, 2, &gamma, &beta, 1e-5).unwrap();
        assert!(y.to_vec().iter().all(|&v| v == 0.7));
    }

    #[test]
    fn group_norm_statistics() {
        let mut rng = crate::rng::stream(42, "gn-test");
        let x = crate::rng::normal_tensor::<f64>(&mut rng, &[2, 8, 4, 4], 1.0).unwrap();
        let gamma = Tensor::<f64>::ones(&[8]);
        let beta = Tensor::<f64>::zeros(&[8]);
        let y = group_norm(&x, 4, &gamma, &beta, 1e-5).unwrap();
        let v = y.to_vec();
        // per (sample, group) slice: mean ~ 0, var ~ 1
        let gsz = 2 * 16;
        for s in 0..2 * 4 {
            let sl = &v[s * gsz..(s + 1) * gsz];
            let mu: f64 = sl.iter().sum::<f64>() / gsz as f64;
            let var: f64 = sl.iter().map(|&a| (a - mu) * (a - mu)).sum::<f64>() / gsz as f64;
            assert!(mu.abs() < 1e-5, "mean {mu}");
            assert!((var - 1.0).abs() < 1e-3, "var {var}");
        }
    }

    #[test]
    fn group_norm_divisibility_checked() {
        let x = Tensor::<f32>::ones(&[1, 6, 2, 2]);
        let gamma = Tensor::<f32>::ones(&[6]);
        let beta = Tensor::<f32>::zeros(&[6]);
        assert!(group_norm(&x, 4, &gamma, &beta, 1e-5).is_err());
    }
}
