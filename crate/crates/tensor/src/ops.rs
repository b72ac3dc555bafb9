//! Differentiable tensor operators.
//!
//! Every operator validates shapes, checks the forward result for NaN/Inf,
//! and records its backward rule when any input participates in autodiff.
//! Binary ops broadcast with the trailing-dimension rule only: shapes are
//! right-aligned and a dimension must match or be 1.

use crate::error::{invalid, Result, TensorError};
use crate::gemm::{gemm, gemm_a_bt, gemm_at_b};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub(crate) fn strides_of(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1usize; shape.len()];
    for d in (0..shape.len().saturating_sub(1)).rev() {
        s[d] = s[d + 1] * shape[d + 1];
    }
    s
}

fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0usize; rank];
    for d in 0..rank {
        let da = if d < rank - a.len() { 1 } else { a[d - (rank - a.len())] };
        let db = if d < rank - b.len() { 1 } else { b[d - (rank - b.len())] };
        if da == db || da == 1 || db == 1 {
            out[d] = da.max(db);
        } else {
            return Err(TensorError::ShapeMismatch {
                op,
                lhs: a.to_vec(),
                rhs: b.to_vec(),
            });
        }
    }
    Ok(out)
}

/// Strides of `shape` right-aligned into `rank` dims, 0 on broadcast dims.
fn bcast_strides(shape: &[usize], rank: usize) -> Vec<usize> {
    let real = strides_of(shape);
    let mut out = vec![0usize; rank];
    let off = rank - shape.len();
    for d in 0..shape.len() {
        out[off + d] = if shape[d] == 1 { 0 } else { real[d] };
    }
    out
}

/// Row-major walk over `out_shape` yielding `(out, a, b)` flat offsets.
fn for_each_bcast2(
    out_shape: &[usize],
    a_shape: &[usize],
    b_shape: &[usize],
    mut f: impl FnMut(usize, usize, usize),
) {
    let numel: usize = out_shape.iter().product();
    if a_shape == out_shape && b_shape == out_shape {
        for o in 0..numel {
            f(o, o, o);
        }
        return;
    }
    let rank = out_shape.len();
    let sa = bcast_strides(a_shape, rank);
    let sb = bcast_strides(b_shape, rank);
    let mut counters = vec![0usize; rank];
    let (mut ao, mut bo) = (0usize, 0usize);
    for o in 0..numel {
        f(o, ao, bo);
        for d in (0..rank).rev() {
            counters[d] += 1;
            ao += sa[d];
            bo += sb[d];
            if counters[d] < out_shape[d] {
                break;
            }
            counters[d] = 0;
            ao -= sa[d] * out_shape[d];
            bo -= sb[d] * out_shape[d];
        }
    }
}

fn binary<E: Scalar>(
    name: &'static str,
    a: &Tensor<E>,
    b: &Tensor<E>,
    f: fn(E, E) -> E,
    da: fn(E, E, E) -> E,
    db: fn(E, E, E) -> E,
) -> Result<Tensor<E>> {
    let out_shape = broadcast_shape(name, a.shape(), b.shape())?;
    let same = a.shape() == out_shape && b.shape() == out_shape;
    let mut out = vec![E::ZERO; out_shape.iter().product()];
    {
        let av = a.data();
        let bv = b.data();
        if same {
            for ((o, &x), &y) in out.iter_mut().zip(av.iter()).zip(bv.iter()) {
                *o = f(x, y);
            }
        } else {
            for_each_bcast2(&out_shape, a.shape(), b.shape(), |o, ai, bi| {
                out[o] = f(av[ai], bv[bi]);
            });
        }
    }
    let shape_for_back = out_shape.clone();
    Tensor::from_op(
        name,
        out_shape,
        out,
        vec![a.clone(), b.clone()],
        Box::new(move |g, _out, inputs| {
            let (a, b) = (&inputs[0], &inputs[1]);
            let av = a.data();
            let bv = b.data();
            let mut ga = if a.grad_enabled() {
                Some(vec![E::ZERO; a.numel()])
            } else {
                None
            };
            let mut gb = if b.grad_enabled() {
                Some(vec![E::ZERO; b.numel()])
            } else {
                None
            };
            if same {
                if let Some(buf) = ga.as_mut() {
                    for i in 0..g.len() {
                        buf[i] = da(g[i], av[i], bv[i]);
                    }
                }
                if let Some(buf) = gb.as_mut() {
                    for i in 0..g.len() {
                        buf[i] = db(g[i], av[i], bv[i]);
                    }
                }
            } else {
                for_each_bcast2(&shape_for_back, a.shape(), b.shape(), |o, ai, bi| {
                    if let Some(buf) = ga.as_mut() {
                        buf[ai] += da(g[o], av[ai], bv[bi]);
                    }
                    if let Some(buf) = gb.as_mut() {
                        buf[bi] += db(g[o], av[ai], bv[bi]);
                    }
                });
            }
            drop(av);
            drop(bv);
            if let Some(buf) = ga {
                a.accum_grad(&buf);
            }
            if let Some(buf) = gb {
                b.accum_grad(&buf);
            }
        }),
    )
}

fn unary<E: Scalar, F, D>(name: &'static str, x: &Tensor<E>, f: F, dfdx: D) -> Result<Tensor<E>>
where
    F: Fn(E) -> E,
    D: Fn(E, E) -> E + 'static, // (x, y) -> dy/dx
{
    let out: Vec<E> = x.data().iter().map(|&v| f(v)).collect();
    Tensor::from_op(
        name,
        x.shape().to_vec(),
        out,
        vec![x.clone()],
        Box::new(move |g, out, inputs| {
            let x = &inputs[0];
            let xv = x.data();
            let gi: Vec<E> = g
                .iter()
                .zip(xv.iter().zip(out))
                .map(|(&gv, (&xe, &ye))| gv * dfdx(xe, ye))
                .collect();
            drop(xv);
            x.accum_grad(&gi);
        }),
    )
}

pub fn add<E: Scalar>(a: &Tensor<E>, b: &Tensor<E>) -> Result<Tensor<E>> {
    binary("add", a, b, |x, y| x + y, |g, _, _| g, |g, _, _| g)
}

pub fn sub<E: Scalar>(a: &Tensor<E>, b: &Tensor<E>) -> Result<Tensor<E>> {
    binary("sub", a, b, |x, y| x - y, |g, _, _| g, |g, _, _| -g)
}

pub fn mul<E: Scalar>(a: &Tensor<E>, b: &Tensor<E>) -> Result<Tensor<E>> {
    binary("mul", a, b, |x, y| x * y, |g, _, y| g * y, |g, x, _| g * x)
}

pub fn div<E: Scalar>(a: &Tensor<E>, b: &Tensor<E>) -> Result<Tensor<E>> {
    binary(
        "div",
        a,
        b,
        |x, y| x / y,
        |g, _, y| g / y,
        |g, x, y| -g * x / (y * y),
    )
}

pub fn exp<E: Scalar>(x: &Tensor<E>) -> Result<Tensor<E>> {
    unary("exp", x, |v| v.exp(), |_, y| y)
}

pub fn ln<E: Scalar>(x: &Tensor<E>) -> Result<Tensor<E>> {
    unary("log", x, |v| v.ln(), |x, _| E::ONE / x)
}

pub fn sigmoid<E: Scalar>(x: &Tensor<E>) -> Result<Tensor<E>> {
    unary("sigmoid", x, |v| v.sigmoid(), |_, y| y * (E::ONE - y))
}

pub fn silu<E: Scalar>(x: &Tensor<E>) -> Result<Tensor<E>> {
    unary(
        "silu",
        x,
        |v| v * v.sigmoid(),
        |x, _| {
            let s = x.sigmoid();
            s * (E::ONE + x * (E::ONE - s))
        },
    )
}

pub fn relu<E: Scalar>(x: &Tensor<E>) -> Result<Tensor<E>> {
    unary(
        "relu",
        x,
        |v| v.maximum(E::ZERO),
        |x, _| if x > E::ZERO { E::ONE } else { E::ZERO },
    )
}

pub fn sqrt<E: Scalar>(x: &Tensor<E>) -> Result<Tensor<E>> {
    unary(
        "sqrt",
        x,
        |v| v.sqrt(),
        |_, y| E::ONE / (E::from_f64(2.0) * y),
    )
}

/// `x * c`
pub fn scale<E: Scalar>(x: &Tensor<E>, c: f64) -> Result<Tensor<E>> {
    affine(x, c, 0.0)
}

/// `x * m + a`, elementwise with constant coefficients.
pub fn affine<E: Scalar>(x: &Tensor<E>, m: f64, a: f64) -> Result<Tensor<E>> {
    let (em, ea) = (E::from_f64(m), E::from_f64(a));
    unary("affine", x, move |v| v * em + ea, move |_, _| em)
}

/// Clamp to `[lo, hi]`; subgradient 1 strictly inside, 0 outside.
pub fn clamp<E: Scalar>(x: &Tensor<E>, lo: f64, hi: f64) -> Result<Tensor<E>> {
    let (el, eh) = (E::from_f64(lo), E::from_f64(hi));
    unary(
        "clamp",
        x,
        move |v| v.maximum(el).minimum(eh),
        move |x, _| {
            if x > el && x < eh {
                E::ONE
            } else {
                E::ZERO
            }
        },
    )
}

pub fn neg<E: Scalar>(x: &Tensor<E>) -> Result<Tensor<E>> {
    scale(x, -1.0)
}

fn axis_check(op: &'static str, shape: &[usize], axis: usize) -> Result<()> {
    if axis >= shape.len() {
        return Err(invalid(op, format!("axis {axis} out of range for {shape:?}")));
    }
    Ok(())
}

/// Exp-normalization along `axis` with max subtraction for stability.
pub fn softmax<E: Scalar>(x: &Tensor<E>, axis: usize) -> Result<Tensor<E>> {
    axis_check("softmax", x.shape(), axis)?;
    let shape = x.shape().to_vec();
    let len = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    let mut out = vec![E::ZERO; x.numel()];
    {
        let xv = x.data();
        for o in 0..outer {
            for ii in 0..inner {
                let base = o * len * inner + ii;
                let mut m = E::neg_infinity();
                for t in 0..len {
                    m = m.maximum(xv[base + t * inner]);
                }
                let mut s = E::ZERO;
                for t in 0..len {
                    let e = (xv[base + t * inner] - m).exp();
                    out[base + t * inner] = e;
                    s += e;
                }
                for t in 0..len {
                    out[base + t * inner] = out[base + t * inner] / s;
                }
            }
        }
    }
    Tensor::from_op(
        "softmax",
        shape,
        out,
        vec![x.clone()],
        Box::new(move |g, y, inputs| {
            let mut gi = vec![E::ZERO; g.len()];
            for o in 0..outer {
                for ii in 0..inner {
                    let base = o * len * inner + ii;
                    let mut s = E::ZERO;
                    for t in 0..len {
                        let i = base + t * inner;
                        s += g[i] * y[i];
                    }
                    for t in 0..len {
                        let i = base + t * inner;
                        gi[i] = y[i] * (g[i] - s);
                    }
                }
            }
            inputs[0].accum_grad(&gi);
        }),
    )
}

pub fn sum_all<E: Scalar>(x: &Tensor<E>) -> Result<Tensor<E>> {
    let mut s = E::ZERO;
    for &v in x.data().iter() {
        s += v;
    }
    let n = x.numel();
    Tensor::from_op(
        "sum_all",
        vec![],
        vec![s],
        vec![x.clone()],
        Box::new(move |g, _, inputs| {
            inputs[0].accum_grad(&vec![g[0]; n]);
        }),
    )
}

pub fn mean_all<E: Scalar>(x: &Tensor<E>) -> Result<Tensor<E>> {
    let n = x.numel().max(1);
    scale(&sum_all(x)?, 1.0 / n as f64)
}

fn reduced_shape(shape: &[usize], axis: usize, keepdim: bool) -> Vec<usize> {
    let mut out = shape.to_vec();
    if keepdim {
        out[axis] = 1;
    } else {
        out.remove(axis);
    }
    out
}

pub fn sum_axis<E: Scalar>(x: &Tensor<E>, axis: usize, keepdim: bool) -> Result<Tensor<E>> {
    axis_check("sum_axis", x.shape(), axis)?;
    let shape = x.shape().to_vec();
    let len = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    let mut out = vec![E::ZERO; outer * inner];
    {
        let xv = x.data();
        for o in 0..outer {
            for t in 0..len {
                let src = o * len * inner + t * inner;
                let dst = o * inner;
                for ii in 0..inner {
                    out[dst + ii] += xv[src + ii];
                }
            }
        }
    }
    Tensor::from_op(
        "sum_axis",
        reduced_shape(&shape, axis, keepdim),
        out,
        vec![x.clone()],
        Box::new(move |g, _, inputs| {
            let mut gi = vec![E::ZERO; outer * len * inner];
            for o in 0..outer {
                for t in 0..len {
                    let dst = o * len * inner + t * inner;
                    let src = o * inner;
                    for ii in 0..inner {
                        gi[dst + ii] = g[src + ii];
                    }
                }
            }
            inputs[0].accum_grad(&gi);
        }),
    )
}

pub fn mean_axis<E: Scalar>(x: &Tensor<E>, axis: usize, keepdim: bool) -> Result<Tensor<E>> {
    let len = x.shape()[axis].max(1);
    scale(&sum_axis(x, axis, keepdim)?, 1.0 / len as f64)
}

/// Max along `axis`; gradient routes to the first maximal element.
pub fn max_axis<E: Scalar>(x: &Tensor<E>, axis: usize, keepdim: bool) -> Result<Tensor<E>> {
    axis_check("max_axis", x.shape(), axis)?;
    let shape = x.shape().to_vec();
    let len = shape[axis];
    if len == 0 {
        return Err(invalid("max_axis", "cannot reduce an empty axis"));
    }
    let inner: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    let mut out = vec![E::ZERO; outer * inner];
    let mut arg = vec![0u32; outer * inner];
    {
        let xv = x.data();
        for o in 0..outer {
            for ii in 0..inner {
                let base = o * len * inner + ii;
                let mut best = xv[base];
                let mut bi = 0u32;
                for t in 1..len {
                    let v = xv[base + t * inner];
                    if v > best {
                        best = v;
                        bi = t as u32;
                    }
                }
                out[o * inner + ii] = best;
                arg[o * inner + ii] = bi;
            }
        }
    }
    Tensor::from_op(
        "max_axis",
        reduced_shape(&shape, axis, keepdim),
        out,
        vec![x.clone()],
        Box::new(move |g, _, inputs| {
            let mut gi = vec![E::ZERO; outer * len * inner];
            for o in 0..outer {
                for ii in 0..inner {
                    let t = arg[o * inner + ii] as usize;
                    gi[o * len * inner + t * inner + ii] += g[o * inner + ii];
                }
            }
            inputs[0].accum_grad(&gi);
        }),
    )
}

pub fn reshape<E: Scalar>(x: &Tensor<E>, shape: &[usize]) -> Result<Tensor<E>> {
    let n: usize = shape.iter().product();
    if n != x.numel() {
        return Err(TensorError::ShapeMismatch {
            op: "reshape",
            lhs: x.shape().to_vec(),
            rhs: shape.to_vec(),
        });
    }
    Tensor::from_op(
        "reshape",
        shape.to_vec(),
        x.to_vec(),
        vec![x.clone()],
        Box::new(|g, _, inputs| inputs[0].accum_grad(g)),
    )
}

/// Materialized axis permutation; `perm[d]` names the source axis of output axis `d`.
pub fn permute<E: Scalar>(x: &Tensor<E>, perm: &[usize]) -> Result<Tensor<E>> {
    let rank = x.shape().len();
    let mut seen = vec![false; rank];
    if perm.len() != rank || perm.iter().any(|&p| p >= rank || std::mem::replace(&mut seen[p], true)) {
        return Err(invalid("permute", format!("bad permutation {perm:?} for rank {rank}")));
    }
    let in_shape = x.shape().to_vec();
    let out_shape: Vec<usize> = perm.iter().map(|&p| in_shape[p]).collect();
    let in_strides = strides_of(&in_shape);
    let src_stride: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let numel = x.numel();

    let walk = {
        let out_shape = out_shape.clone();
        let src_stride = src_stride.clone();
        move |mut f: Box<dyn FnMut(usize, usize) + '_>| {
            let rank = out_shape.len();
            let mut counters = vec![0usize; rank];
            let mut src = 0usize;
            for o in 0..numel {
                f(o, src);
                for d in (0..rank).rev() {
                    counters[d] += 1;
                    src += src_stride[d];
                    if counters[d] < out_shape[d] {
                        break;
                    }
                    counters[d] = 0;
                    src -= src_stride[d] * out_shape[d];
                }
            }
        }
    };

    let mut out = vec![E::ZERO; numel];
    {
        let xv = x.data();
        walk(Box::new(|o, s| out[o] = xv[s]));
    }
    Tensor::from_op(
        "permute",
        out_shape,
        out,
        vec![x.clone()],
        Box::new(move |g, _, inputs| {
            let mut gi = vec![E::ZERO; numel];
            walk(Box::new(|o, s| gi[s] += g[o]));
            inputs[0].accum_grad(&gi);
        }),
    )
}

/// Concatenate along `axis`; shapes must match on every other axis.
pub fn concat<E: Scalar>(xs: &[Tensor<E>], axis: usize) -> Result<Tensor<E>> {
    if xs.is_empty() {
        return Err(invalid("concat", "needs at least one tensor"));
    }
    axis_check("concat", xs[0].shape(), axis)?;
    let base = xs[0].shape().to_vec();
    let mut axis_total = 0usize;
    for x in xs {
        let s = x.shape();
        if s.len() != base.len()
            || s.iter()
                .zip(&base)
                .enumerate()
                .any(|(d, (a, b))| d != axis && a != b)
        {
            return Err(TensorError::ShapeMismatch {
                op: "concat",
                lhs: base.clone(),
                rhs: s.to_vec(),
            });
        }
        axis_total += s[axis];
    }
    let mut out_shape = base.clone();
    out_shape[axis] = axis_total;
    let outer: usize = base[..axis].iter().product();
    let inner: usize = base[axis + 1..].iter().product();
    let parts: Vec<usize> = xs.iter().map(|x| x.shape()[axis]).collect();

    let mut out = vec![E::ZERO; out_shape.iter().product()];
    let row = axis_total * inner;
    let mut col = 0usize;
    for (x, &p) in xs.iter().zip(&parts) {
        let xv = x.data();
        for o in 0..outer {
            let dst = o * row + col * inner;
            let src = o * p * inner;
            out[dst..dst + p * inner].copy_from_slice(&xv[src..src + p * inner]);
        }
        col += p;
    }
    Tensor::from_op(
        "concat",
        out_shape,
        out,
        xs.to_vec(),
        Box::new(move |g, _, inputs| {
            let mut col = 0usize;
            for (x, &p) in inputs.iter().zip(&parts) {
                if x.grad_enabled() {
                    let mut gi = vec![E::ZERO; x.numel()];
                    for o in 0..outer {
                        let src = o * row + col * inner;
                        let dst = o * p * inner;
                        gi[dst..dst + p * inner].copy_from_slice(&g[src..src + p * inner]);
                    }
                    x.accum_grad(&gi);
                }
                col += p;
            }
        }),
    )
}

/// Contiguous slice `[start, start+len)` along `axis`.
pub fn narrow<E: Scalar>(x: &Tensor<E>, axis: usize, start: usize, len: usize) -> Result<Tensor<E>> {
    axis_check("narrow", x.shape(), axis)?;
    let shape = x.shape().to_vec();
    if start + len > shape[axis] || len == 0 {
        return Err(invalid(
            "narrow",
            format!("range {start}..{} out of axis size {}", start + len, shape[axis]),
        ));
    }
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    let full = shape[axis];
    let mut out_shape = shape;
    out_shape[axis] = len;
    let mut out = vec![E::ZERO; outer * len * inner];
    {
        let xv = x.data();
        for o in 0..outer {
            let src = (o * full + start) * inner;
            let dst = o * len * inner;
            out[dst..dst + len * inner].copy_from_slice(&xv[src..src + len * inner]);
        }
    }
    Tensor::from_op(
        "narrow",
        out_shape,
        out,
        vec![x.clone()],
        Box::new(move |g, _, inputs| {
            let mut gi = vec![E::ZERO; inputs[0].numel()];
            for o in 0..outer {
                let dst = (o * full + start) * inner;
                let src = o * len * inner;
                gi[dst..dst + len * inner].copy_from_slice(&g[src..src + len * inner]);
            }
            inputs[0].accum_grad(&gi);
        }),
    )
}

/// Row lookup into an embedding table `[vocab, dim]`.
pub fn embed<E: Scalar>(table: &Tensor<E>, ids: &[usize]) -> Result<Tensor<E>> {
    if table.shape().len() != 2 {
        return Err(invalid("embed", "table must be [vocab, dim]"));
    }
    let (vocab, dim) = (table.shape()[0], table.shape()[1]);
    if let Some(&bad) = ids.iter().find(|&&i| i >= vocab) {
        return Err(invalid("embed", format!("token id {bad} out of vocab {vocab}")));
    }
    let mut out = vec![E::ZERO; ids.len() * dim];
    {
        let tv = table.data();
        for (l, &id) in ids.iter().enumerate() {
            out[l * dim..(l + 1) * dim].copy_from_slice(&tv[id * dim..(id + 1) * dim]);
        }
    }
    let ids = ids.to_vec();
    let table_numel = table.numel();
    Tensor::from_op(
        "embed",
        vec![ids.len(), dim],
        out,
        vec![table.clone()],
        Box::new(move |g, _, inputs| {
            let mut gt = vec![E::ZERO; table_numel];
            for (l, &id) in ids.iter().enumerate() {
                for d in 0..dim {
                    gt[id * dim + d] += g[l * dim + d];
                }
            }
            inputs[0].accum_grad(&gt);
        }),
    )
}

/// Batched matrix product `[..,m,k] · [..,k,n] -> [..,m,n]`.
///
/// Leading batch dims broadcast with the trailing-dimension rule; gradients
/// are `dA = dC·Bᵀ` and `dB = Aᵀ·dC`, accumulated across broadcast batches.
pub fn matmul<E: Scalar>(a: &Tensor<E>, b: &Tensor<E>) -> Result<Tensor<E>> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa.len() < 2 || sb.len() < 2 {
        return Err(invalid("matmul", "operands must have rank >= 2"));
    }
    let (m, ka) = (sa[sa.len() - 2], sa[sa.len() - 1]);
    let (kb, n) = (sb[sb.len() - 2], sb[sb.len() - 1]);
    if ka != kb {
        return Err(TensorError::ShapeMismatch {
            op: "matmul",
            lhs: sa.to_vec(),
            rhs: sb.to_vec(),
        });
    }
    let k = ka;
    let batch_a = &sa[..sa.len() - 2];
    let batch_b = &sb[..sb.len() - 2];
    let batch = broadcast_shape("matmul", batch_a, batch_b)?;
    let nb: usize = batch.iter().product();
    let mut out_shape = batch.clone();
    out_shape.push(m);
    out_shape.push(n);

    // Per-batch flat offsets in units of one matrix.
    let mut map = Vec::with_capacity(nb);
    for_each_bcast2(&batch, batch_a, batch_b, |o, ai, bi| {
        debug_assert_eq!(o, map.len());
        map.push((ai, bi));
    });

    let mut out = vec![E::ZERO; nb * m * n];
    {
        let av = a.data();
        let bv = b.data();
        for (o, &(ai, bi)) in map.iter().enumerate() {
            gemm(
                m,
                k,
                n,
                &av[ai * m * k..(ai + 1) * m * k],
                &bv[bi * k * n..(bi + 1) * k * n],
                &mut out[o * m * n..(o + 1) * m * n],
            );
        }
    }
    Tensor::from_op(
        "matmul",
        out_shape,
        out,
        vec![a.clone(), b.clone()],
        Box::new(move |g, _, inputs| {
            let (a, b) = (&inputs[0], &inputs[1]);
            let av = a.data();
            let bv = b.data();
            let mut ga = if a.grad_enabled() {
                Some(vec![E::ZERO; a.numel()])
            } else {
                None
            };
            let mut gb = if b.grad_enabled() {
                Some(vec![E::ZERO; b.numel()])
            } else {
                None
            };
            for (o, &(ai, bi)) in map.iter().enumerate() {
                let gc = &g[o * m * n..(o + 1) * m * n];
                if let Some(buf) = ga.as_mut() {
                    gemm_a_bt(
                        m,
                        n,
                        k,
                        gc,
                        &bv[bi * k * n..(bi + 1) * k * n],
                        &mut buf[ai * m * k..(ai + 1) * m * k],
                    );
                }
                if let Some(buf) = gb.as_mut() {
                    gemm_at_b(
                        k,
                        m,
                        n,
                        &av[ai * m * k..(ai + 1) * m * k],
                        gc,
                        &mut buf[bi * k * n..(bi + 1) * k * n],
                    );
                }
            }
            drop(av);
            drop(bv);
            if let Some(buf) = ga {
                a.accum_grad(&buf);
            }
            if let Some(buf) = gb {
                b.accum_grad(&buf);
            }
        }),
    )
}

impl<E: Scalar> Tensor<E> {
    pub fn add(&self, o: &Tensor<E>) -> Result<Tensor<E>> {
        add(self, o)
    }
    pub fn sub(&self, o: &Tensor<E>) -> Result<Tensor<E>> {
        sub(self, o)
    }
    pub fn mul(&self, o: &Tensor<E>) -> Result<Tensor<E>> {
        mul(self, o)
    }
    pub fn div(&self, o: &Tensor<E>) -> Result<Tensor<E>> {
        div(self, o)
    }
    pub fn exp(&self) -> Result<Tensor<E>> {
        exp(self)
    }
    pub fn ln(&self) -> Result<Tensor<E>> {
        ln(self)
    }
    pub fn sigmoid(&self) -> Result<Tensor<E>> {
        sigmoid(self)
    }
    pub fn silu(&self) -> Result<Tensor<E>> {
        silu(self)
    }
    pub fn relu(&self) -> Result<Tensor<E>> {
        relu(self)
    }
    pub fn sqrt(&self) -> Result<Tensor<E>> {
        sqrt(self)
    }
    pub fn scale(&self, c: f64) -> Result<Tensor<E>> {
        scale(self, c)
    }
    pub fn affine(&self, m: f64, a: f64) -> Result<Tensor<E>> {
        affine(self, m, a)
    }
    pub fn clamp(&self, lo: f64, hi: f64) -> Result<Tensor<E>> {
        clamp(self, lo, hi)
    }
    pub fn softmax(&self, axis: usize) -> Result<Tensor<E>> {
        softmax(self, axis)
    }
    pub fn sum_all(&self) -> Result<Tensor<E>> {
        sum_all(self)
    }
    pub fn mean_all(&self) -> Result<Tensor<E>> {
        mean_all(self)
    }
    pub fn sum_axis(&self, axis: usize, keepdim: bool) -> Result<Tensor<E>> {
        sum_axis(self, axis, keepdim)
    }
    pub fn mean_axis(&self, axis: usize, keepdim: bool) -> Result<Tensor<E>> {
        mean_axis(self, axis, keepdim)
    }
    pub fn max_axis(&self, axis: usize, keepdim: bool) -> Result<Tensor<E>> {
        max_axis(self, axis, keepdim)
    }
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<E>> {
        reshape(self, shape)
    }
    pub fn permute(&self, perm: &[usize]) -> Result<Tensor<E>> {
        permute(self, perm)
    }
    pub fn matmul(&self, o: &Tensor<E>) -> Result<Tensor<E>> {
        matmul(self, o)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn add_componentwise() {
        let a = Tensor::<f32>::from_vec(&[2], vec![1.0, 2.0]).unwrap();
        let b = Tensor::<f32>::from_vec(&[2], vec![3.0, 4.0]).unwrap();
        assert_eq!(add(&a, &b).unwrap().to_vec(), vec![4.0, 6.0]);
    }

    #[test]
    fn sigmoid_at_zero() {
        let x = Tensor::<f32>::zeros(&[1]);
        assert_eq!(sigmoid(&x).unwrap().to_vec(), vec![0.5]);
    }

    #[test]
    fn silu_at_zero() {
        let x = Tensor::<f32>::zeros(&[1]);
        assert_eq!(silu(&x).unwrap().to_vec(), vec![0.0]);
    }

    #[test]
    fn broadcasting_trailing_rule() {
        let a = Tensor::<f32>::from_vec(&[2, 2], vec![1., 2., 3., 4.]).unwrap();
        let b = Tensor::<f32>::from_vec(&[2], vec![10., 20.]).unwrap();
        assert_eq!(add(&a, &b).unwrap().to_vec(), vec![11., 22., 13., 24.]);
        let c = Tensor::<f32>::from_vec(&[2, 1], vec![10., 20.]).unwrap();
        assert_eq!(add(&a, &c).unwrap().to_vec(), vec![11., 12., 23., 24.]);
    }

    #[test]
    fn incompatible_shapes_rejected() {
        let a = Tensor::<f32>::zeros(&[2, 3]);
        let b = Tensor::<f32>::zeros(&[2, 2]);
        assert!(add(&a, &b).is_err());
    }

    #[test]
    fn div_by_zero_is_error() {
        let a = Tensor::<f32>::ones(&[1]);
        let b = Tensor::<f32>::zeros(&[1]);
        assert!(matches!(div(&a, &b), Err(TensorError::NonFinite { .. })));
    }

    #[test]
    fn softmax_uniform_and_stability() {
        let x = Tensor::<f64>::zeros(&[3]);
        let y = softmax(&x, 0).unwrap().to_vec();
        for v in y {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
        let big = Tensor::<f64>::from_vec(&[2], vec![1000.0, 1000.0]).unwrap();
        let y = softmax(&big, 0).unwrap().to_vec();
        assert_eq!(y, vec![0.5, 0.5]);
    }

    #[test]
    fn softmax_closed_form() {
        let x = Tensor::<f64>::from_vec(&[2], vec![0.0, 3.0_f64.ln()]).unwrap();
        let y = softmax(&x, 0).unwrap().to_vec();
        assert!((y[0] - 0.25).abs() < 1e-12);
        assert!((y[1] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn softmax_slices_sum_to_one() {
        let x = Tensor::<f64>::from_vec(&[2, 3], vec![0.3, -1.2, 2.0, 5.0, 0.0, -2.0]).unwrap();
        let y = softmax(&x, 1).unwrap();
        let v = y.to_vec();
        for r in 0..2 {
            let s: f64 = v[r * 3..(r + 1) * 3].iter().sum();
            assert!((s - 1.0).abs() < 1e-6);
            assert!(v[r * 3..(r + 1) * 3].iter().all(|&p| p >= 0.0));
        }
    }

    #[test]
    fn matmul_identity_and_dot() {
        let i2 = Tensor::<f32>::from_vec(&[2, 2], vec![1., 0., 0., 1.]).unwrap();
        let m = Tensor::<f32>::from_vec(&[2, 2], vec![1., 2., 3., 4.]).unwrap();
        assert_eq!(matmul(&i2, &m).unwrap().to_vec(), vec![1., 2., 3., 4.]);

        let a = Tensor::<f32>::from_vec(&[1, 2], vec![1., 2.]).unwrap();
        let b = Tensor::<f32>::from_vec(&[2, 1], vec![3., 4.]).unwrap();
        assert_eq!(matmul(&a, &b).unwrap().to_vec(), vec![11.]);
    }

    #[test]
    fn matmul_batch_broadcast() {
        // [2,1,2,2] x [2,2] -> [2,1,2,2]
        let a = Tensor::<f64>::from_vec(&[2, 1, 2, 2], vec![1., 0., 0., 1., 2., 0., 0., 2.]).unwrap();
        let b = Tensor::<f64>::from_vec(&[2, 2], vec![1., 2., 3., 4.]).unwrap();
        let c = matmul(&a, &b).unwrap();
        assert_eq!(c.shape(), &[2, 1, 2, 2]);
        assert_eq!(c.to_vec(), vec![1., 2., 3., 4., 2., 4., 6., 8.]);
    }

    #[test]
    fn permute_roundtrip() {
        let x = Tensor::<f32>::from_vec(&[2, 3], vec![1., 2., 3., 4., 5., 6.]).unwrap();
        let t = permute(&x, &[1, 0]).unwrap();
        assert_eq!(t.shape(), &[3, 2]);
        assert_eq!(t.to_vec(), vec![1., 4., 2., 5., 3., 6.]);
        let back = permute(&t, &[1, 0]).unwrap();
        assert_eq!(back.to_vec(), x.to_vec());
    }

    #[test]
    fn concat_axis1() {
        let a = Tensor::<f32>::from_vec(&[2, 1], vec![1., 2.]).unwrap();
        let b = Tensor::<f32>::from_vec(&[2, 2], vec![3., 4., 5., 6.]).unwrap();
        let c = concat(&[a, b], 1).unwrap();
        assert_eq!(c.shape(), &[2, 3]);
        assert_eq!(c.to_vec(), vec![1., 3., 4., 2., 5., 6.]);
    }

    #[test]
    fn max_axis_routes_gradient_to_argmax() {
        let x = Tensor::<f64>::param(&[2, 2], vec![1., 2., 3., 0.5]).unwrap();
        let m = max_axis(&x, 1, false).unwrap();
        assert_eq!(m.to_vec(), vec![2.0, 3.0]);
        let loss = sum_all(&m).unwrap();
        crate::tape::backward(&loss).unwrap();
        assert_eq!(x.grad().unwrap(), vec![0., 1., 1., 0.]);
    }

    #[test]
    fn embed_rows() {
        let table = Tensor::<f32>::from_vec(&[3, 2], vec![0., 1., 10., 11., 20., 21.]).unwrap();
        let e = embed(&table, &[2, 0]).unwrap();
        assert_eq!(e.to_vec(), vec![20., 21., 0., 1.]);
        assert!(embed(&table, &[3]).is_err());
    }
}
