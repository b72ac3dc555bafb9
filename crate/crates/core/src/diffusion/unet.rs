//! Conditioned denoising UNet.
//!
//! Two down levels, a bottleneck, and two up levels; every level stacks a
//! ResNet block (with timestep injection), spatial self-attention, text
//! cross-attention, and temporal attention, in that order. Frames ride the
//! batch axis; temporal attention mixes them per spatial position. The
//! decoder-side levels accept an optional mask-guidance feature which is
//! added right before temporal attention.

use crossview_tensor::ops;
use crossview_tensor::{ParamSet, Scalar, Tensor};

use crate::error::{data_err, Result};
use crate::nn::{Conv2d, GroupNorm, Init, Linear, ParamBuilder};
use crate::world::vocab_size;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DiffDims {
    /// Training timesteps T.
    pub t_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    /// Space-to-depth patch size.
    pub patch: usize,
    /// Channel widths: level 0, level 1, bottleneck.
    pub widths: [usize; 3],
    /// Mask-guidance encoder widths per emitted level.
    pub guide_widths: [usize; 3],
    pub d_txt: usize,
    pub temb: usize,
    pub vocab: usize,
    /// Multiplier taking signed pixels to roughly unit-variance latents;
    /// without it the denoising signal of the low-variance toy frames drowns
    /// in the injected noise and training stalls.
    pub latent_scale: f64,
}

impl Default for DiffDims {
    fn default() -> Self {
        DiffDims {
            t_steps: 100,
            beta_start: 1e-4,
            // chosen so alpha_bar at T is ~0.007: the sampler starts from pure
            // noise, which the forward process must actually approach within
            // T=100 steps (0.02 is calibrated for T=1000 and leaves 37%
            // signal at T, a fatal train/sample mismatch)
            beta_end: 0.1,
            patch: 4,
            widths: [64, 128, 256],
            guide_widths: [32, 32, 32],
            d_txt: 64,
            temb: 256,
            vocab: vocab_size(),
            latent_scale: 3.0,
        }
    }
}

impl DiffDims {
    pub fn latent_channels(&self) -> usize {
        3 * self.patch * self.patch
    }

    pub fn cond_channels(&self) -> usize {
        2 * self.latent_channels() + 1
    }

    pub fn to_meta(&self) -> Vec<f32> {
        vec![
            self.t_steps as f32,
            self.beta_start as f32,
            self.beta_end as f32,
            self.patch as f32,
            self.widths[0] as f32,
            self.widths[1] as f32,
            self.widths[2] as f32,
            self.guide_widths[0] as f32,
            self.guide_widths[1] as f32,
            self.guide_widths[2] as f32,
            self.d_txt as f32,
            self.temb as f32,
            self.vocab as f32,
            self.latent_scale as f32,
        ]
    }

    pub fn from_meta(meta: &[f32]) -> Result<Self> {
        if meta.len() != 14 {
            return Err(data_err("diffusion meta must have 14 entries"));
        }
        Ok(DiffDims {
            t_steps: meta[0] as usize,
            beta_start: meta[1] as f64,
            beta_end: meta[2] as f64,
            patch: meta[3] as usize,
            widths: [meta[4] as usize, meta[5] as usize, meta[6] as usize],
            guide_widths: [meta[7] as usize, meta[8] as usize, meta[9] as usize],
            d_txt: meta[10] as usize,
            temb: meta[11] as usize,
            vocab: meta[12] as usize,
            latent_scale: meta[13] as f64,
        })
    }
}

/// Sinusoidal timestep features of dimension `dim` (half sin, half cos).
pub fn timestep_features<E: Scalar>(t: usize, dim: usize) -> Result<Tensor<E>> {
    let half = (dim / 2).max(1);
    let mut data = vec![E::ZERO; 2 * half];
    for i in 0..half {
        let freq = (-(10_000f64.ln()) * i as f64 / (half.max(2) - 1) as f64).exp();
        let arg = t as f64 * freq;
        data[i] = E::from_f64(arg.sin());
        data[half + i] = E::from_f64(arg.cos());
    }
    Ok(Tensor::from_vec(&[1, 2 * half], data)?)
}

pub struct UnetResBlock<E: Scalar> {
    norm1: GroupNorm<E>,
    conv1: Conv2d<E>,
    temb_scale: Option<Linear<E>>,
    temb_shift: Option<Linear<E>>,
    norm2: GroupNorm<E>,
    conv2: Conv2d<E>,
    skip: Option<Conv2d<E>>,
    cout: usize,
}

impl<E: Scalar> UnetResBlock<E> {
    pub fn new(
        pb: &mut ParamBuilder<E>,
        name: &str,
        cin: usize,
        cout: usize,
        temb: Option<usize>,
    ) -> Result<Self> {
        Ok(UnetResBlock {
            norm1: GroupNorm::new(pb, &format!("{name}/gn1"), cin)?,
            conv1: Conv2d::new(pb, &format!("{name}/conv1"), cin, cout, 3, 1, 1)?,
            temb_scale: temb
                .map(|d| Linear::new(pb, &format!("{name}/temb_scale"), d, cout, true))
                .transpose()?,
            temb_shift: temb
                .map(|d| Linear::new(pb, &format!("{name}/temb_shift"), d, cout, true))
                .transpose()?,
            norm2: GroupNorm::new(pb, &format!("{name}/gn2"), cout)?,
            conv2: Conv2d::new_zero(pb, &format!("{name}/conv2"), cout, cout, 3, 1, 1)?,
            skip: (cin != cout)
                .then(|| Conv2d::new(pb, &format!("{name}/skip"), cin, cout, 1, 1, 0))
                .transpose()?,
            cout,
        })
    }

    /// Residual branch with scale-shift timestep conditioning:
    /// `gn2(h) * (1 + scale(t)) + shift(t)`. The multiplicative term lets
    /// the network express the strongly t-dependent gain of eps-prediction.
    pub fn forward(&self, x: &Tensor<E>, temb: Option<&Tensor<E>>) -> Result<Tensor<E>> {
        let h = self.conv1.forward(&self.norm1.forward(x)?.silu()?)?;
        let mut h = self.norm2.forward(&h)?;
        if let (Some(ls), Some(lb), Some(t)) = (&self.temb_scale, &self.temb_shift, temb) {
            let ts = t.silu()?;
            let scale = ls.forward(&ts)?.affine(1.0, 1.0)?.reshape(&[1, self.cout, 1, 1])?;
            let shift = lb.forward(&ts)?.reshape(&[1, self.cout, 1, 1])?;
            h = h.mul(&scale)?.add(&shift)?;
        }
        let h = self.conv2.forward(&h.silu()?)?;
        let skip = match &self.skip {
            Some(conv) => conv.forward(x)?,
            None => x.clone(),
        };
        Ok(skip.add(&h)?)
    }
}

fn qkv_scale(c: usize) -> f64 {
    1.0 / (c as f64).sqrt()
}

/// Pre-norm residual self-attention over spatial positions, per frame.
pub struct SpatialAttn<E: Scalar> {
    norm: GroupNorm<E>,
    q: Linear<E>,
    k: Linear<E>,
    v: Linear<E>,
    out: Linear<E>,
    c: usize,
}

impl<E: Scalar> SpatialAttn<E> {
    pub fn new(pb: &mut ParamBuilder<E>, name: &str, c: usize) -> Result<Self> {
        Ok(SpatialAttn {
            norm: GroupNorm::new(pb, &format!("{name}/gn"), c)?,
            q: Linear::new(pb, &format!("{name}/q"), c, c, false)?,
            k: Linear::new(pb, &format!("{name}/k"), c, c, false)?,
            v: Linear::new(pb, &format!("{name}/v"), c, c, false)?,
            out: Linear::new_zero(pb, &format!("{name}/out"), c, c, true)?,
            c,
        })
    }

    pub fn forward(&self, x: &Tensor<E>) -> Result<Tensor<E>> {
        let [n, c, h, w] = match *x.shape() {
            [n, c, h, w] => [n, c, h, w],
            _ => return Err(data_err("attention expects [N,C,h,w]")),
        };
        let tokens = self
            .norm
            .forward(x)?
            .reshape(&[n, c, h * w])?
            .permute(&[0, 2, 1])?; // [N, hw, C]
        let q = self.q.forward(&tokens)?;
        let k = self.k.forward(&tokens)?;
        let v = self.v.forward(&tokens)?;
        let logits = q.matmul(&k.permute(&[0, 2, 1])?)?.scale(qkv_scale(self.c))?;
        let attn = logits.softmax(2)?;
        let mixed = attn.matmul(&v)?; // [N, hw, C]
        let out = self.out.forward(&mixed)?.permute(&[0, 2, 1])?.reshape(&[n, c, h, w])?;
        Ok(x.add(&out)?)
    }
}

/// Pre-norm residual cross-attention from spatial tokens to a text context
/// `[L, d_txt]`. An empty context is the identity.
pub struct CrossAttn<E: Scalar> {
    norm: GroupNorm<E>,
    q: Linear<E>,
    k: Linear<E>,
    v: Linear<E>,
    out: Linear<E>,
    c: usize,
}

impl<E: Scalar> CrossAttn<E> {
    pub fn new(pb: &mut ParamBuilder<E>, name: &str, c: usize, d_txt: usize) -> Result<Self> {
        Ok(CrossAttn {
            norm: GroupNorm::new(pb, &format!("{name}/gn"), c)?,
            q: Linear::new(pb, &format!("{name}/q"), c, c, false)?,
            k: Linear::new(pb, &format!("{name}/k"), d_txt, c, false)?,
            v: Linear::new(pb, &format!("{name}/v"), d_txt, c, false)?,
            out: Linear::new_zero(pb, &format!("{name}/out"), c, c, true)?,
            c,
        })
    }

    pub fn forward(&self, x: &Tensor<E>, ctx: Option<&Tensor<E>>) -> Result<Tensor<E>> {
        let Some(ctx) = ctx else {
            return Ok(x.clone());
        };
        if ctx.shape().len() != 2 || ctx.shape()[0] == 0 {
            return Ok(x.clone());
        }
        let [n, c, h, w] = match *x.shape() {
            [n, c, h, w] => [n, c, h, w],
            _ => return Err(data_err("attention expects [N,C,h,w]")),
        };
        let tokens = self
            .norm
            .forward(x)?
            .reshape(&[n, c, h * w])?
            .permute(&[0, 2, 1])?;
        let q = self.q.forward(&tokens)?; // [N, hw, C]
        let k = self.k.forward(ctx)?; // [L, C]
        let v = self.v.forward(ctx)?;
        let logits = q.matmul(&k.permute(&[1, 0])?)?.scale(qkv_scale(self.c))?; // [N, hw, L]
        let attn = logits.softmax(2)?;
        let mixed = attn.matmul(&v)?;
        let out = self.out.forward(&mixed)?.permute(&[0, 2, 1])?.reshape(&[n, c, h, w])?;
        Ok(x.add(&out)?)
    }
}

/// Pre-norm residual attention across frames, per spatial position.
pub struct TemporalAttn<E: Scalar> {
    norm: GroupNorm<E>,
    q: Linear<E>,
    k: Linear<E>,
    v: Linear<E>,
    out: Linear<E>,
    c: usize,
}

impl<E: Scalar> TemporalAttn<E> {
    pub fn new(pb: &mut ParamBuilder<E>, name: &str, c: usize) -> Result<Self> {
        Ok(TemporalAttn {
            norm: GroupNorm::new(pb, &format!("{name}/gn"), c)?,
            q: Linear::new(pb, &format!("{name}/q"), c, c, false)?,
            k: Linear::new(pb, &format!("{name}/k"), c, c, false)?,
            v: Linear::new(pb, &format!("{name}/v"), c, c, false)?,
            out: Linear::new_zero(pb, &format!("{name}/out"), c, c, true)?,
            c,
        })
    }

    pub fn forward(&self, x: &Tensor<E>) -> Result<Tensor<E>> {
        let [n, c, h, w] = match *x.shape() {
            [n, c, h, w] => [n, c, h, w],
            _ => return Err(data_err("attention expects [N,C,h,w]")),
        };
        let tokens = self
            .norm
            .forward(x)?
            .reshape(&[n, c, h * w])?
            .permute(&[2, 0, 1])?; // [hw, N, C]
        let q = self.q.forward(&tokens)?;
        let k = self.k.forward(&tokens)?;
        let v = self.v.forward(&tokens)?;
        let logits = q.matmul(&k.permute(&[0, 2, 1])?)?.scale(qkv_scale(self.c))?; // [hw, N, N]
        let attn = logits.softmax(2)?;
        let mixed = attn.matmul(&v)?; // [hw, N, C]
        let out = self
            .out
            .forward(&mixed)?
            .permute(&[1, 2, 0])? // [N, C, hw]
            .reshape(&[n, c, h, w])?;
        Ok(x.add(&out)?)
    }
}

/// ResNet block + spatial/self, text/cross, temporal attention; the optional
/// `fuse` feature is added after cross-attention, before temporal attention.
struct UnetLevel<E: Scalar> {
    res: UnetResBlock<E>,
    sattn: SpatialAttn<E>,
    xattn: CrossAttn<E>,
    tattn: TemporalAttn<E>,
}

impl<E: Scalar> UnetLevel<E> {
    fn new(pb: &mut ParamBuilder<E>, name: &str, cin: usize, cout: usize, d: &DiffDims) -> Result<Self> {
        Ok(UnetLevel {
            res: UnetResBlock::new(pb, &format!("{name}/res"), cin, cout, Some(d.temb))?,
            sattn: SpatialAttn::new(pb, &format!("{name}/sattn"), cout)?,
            xattn: CrossAttn::new(pb, &format!("{name}/xattn"), cout, d.d_txt)?,
            tattn: TemporalAttn::new(pb, &format!("{name}/tattn"), cout)?,
        })
    }

    fn forward(
        &self,
        x: &Tensor<E>,
        temb: &Tensor<E>,
        ctx: Option<&Tensor<E>>,
        fuse: Option<&Tensor<E>>,
    ) -> Result<Tensor<E>> {
        let x = self.res.forward(x, Some(temb))?;
        let x = self.sattn.forward(&x)?;
        let x = self.xattn.forward(&x, ctx)?;
        let x = match fuse {
            Some(h) => x.add(h)?,
            None => x,
        };
        self.tattn.forward(&x)
    }
}

struct Down<E: Scalar>(Conv2d<E>);

impl<E: Scalar> Down<E> {
    fn new(pb: &mut ParamBuilder<E>, name: &str, cin: usize, cout: usize) -> Result<Self> {
        Ok(Down(Conv2d::new(pb, name, cin, cout, 3, 1, 1)?))
    }

    fn forward(&self, x: &Tensor<E>) -> Result<Tensor<E>> {
        let x = x.pool(crossview_tensor::PoolKind::Avg, 2, 2)?;
        Ok(self.0.forward(&x)?)
    }
}

pub struct UNet<E: Scalar> {
    pub dims: DiffDims,
    params: ParamSet<E>,
    temb1: Linear<E>,
    temb2: Linear<E>,
    in_conv: Conv2d<E>,
    level_d0: UnetLevel<E>,
    down0: Down<E>,
    level_d1: UnetLevel<E>,
    down1: Down<E>,
    level_mid: UnetLevel<E>,
    level_u1: UnetLevel<E>,
    level_u0: UnetLevel<E>,
    out_norm: GroupNorm<E>,
    out_conv: Conv2d<E>,
    /// Learned passthrough gain on the noisy latents, zero-initialized:
    /// `gamma(t) = sum_k gate[k] * sqrt(1-abar_t)^k`. The optimal
    /// eps-prediction has a large component proportional to z_t with a
    /// smooth t-dependent coefficient; giving it four shared coefficients
    /// (updated at every step, whatever t was drawn) lets that component fit
    /// in a few steps instead of crawling through the conv stack.
    noise_gate: Tensor<E>,
    alpha_bars: Vec<f64>,
}

impl<E: Scalar> UNet<E> {
    fn build(dims: DiffDims, mut pb: ParamBuilder<E>) -> Result<Self> {
        let [w0, w1, w2] = dims.widths;
        let cz = dims.latent_channels();
        let cc = dims.cond_channels();
        let net = UNet {
            temb1: Linear::new(&mut pb, "temb/l1", w0, dims.temb, true)?,
            temb2: Linear::new(&mut pb, "temb/l2", dims.temb, dims.temb, true)?,
            in_conv: Conv2d::new(&mut pb, "in", cc, w0, 3, 1, 1)?,
            level_d0: UnetLevel::new(&mut pb, "d0", w0, w0, &dims)?,
            down0: Down::new(&mut pb, "down0", w0, w1)?,
            level_d1: UnetLevel::new(&mut pb, "d1", w1, w1, &dims)?,
            down1: Down::new(&mut pb, "down1", w1, w2)?,
            level_mid: UnetLevel::new(&mut pb, "mid", w2, w2, &dims)?,
            level_u1: UnetLevel::new(&mut pb, "u1", w2 + w1, w1, &dims)?,
            level_u0: UnetLevel::new(&mut pb, "u0", w1 + w0, w0, &dims)?,
            out_norm: GroupNorm::new(&mut pb, "out/gn", w0)?,
            out_conv: Conv2d::new(&mut pb, "out/conv", w0, cz, 3, 1, 1)?,
            noise_gate: pb.tensor("out/noise_gate", &[4], Init::Zeros)?,
            alpha_bars: {
                let mut bars = Vec::with_capacity(dims.t_steps);
                let mut prod = 1.0;
                for i in 0..dims.t_steps {
                    let beta = dims.beta_start
                        + (dims.beta_end - dims.beta_start) * i as f64 / (dims.t_steps - 1) as f64;
                    prod *= 1.0 - beta;
                    bars.push(prod);
                }
                bars
            },
            params: ParamSet::new(),
            dims,
        };
        let params = pb.finish()?;
        Ok(UNet { params, ..net })
    }

    pub fn new(dims: DiffDims, seed: u64) -> Result<Self> {
        Self::build(dims, ParamBuilder::init(crossview_tensor::rng::mix(seed, "unet")))
    }

    pub fn from_params(dims: DiffDims, params: ParamSet<E>) -> Result<Self> {
        Self::build(dims, ParamBuilder::load(params))
    }

    pub fn params(&self) -> &ParamSet<E> {
        &self.params
    }

    pub fn frozen_clone(&self) -> Result<Self> {
        Self::from_params(self.dims, self.params.detached())
    }

    /// Predict the injected noise.
    ///
    /// `zbar`: conditioned input `[N, 2Cz+1, Hz, Wz]`; `t`: timestep for the
    /// sinusoidal embedding; `ctx`: text context `[L, d_txt]`; `fused`:
    /// projected mask-guidance features for the three decoder-side fusion
    /// sites, ordered `[Hz, Hz/2, Hz/4]`.
    pub fn forward(
        &self,
        zbar: &Tensor<E>,
        t: usize,
        ctx: Option<&Tensor<E>>,
        fused: Option<&[Tensor<E>; 3]>,
    ) -> Result<Tensor<E>> {
        let cc = self.dims.cond_channels();
        match *zbar.shape() {
            [_, c, h, w] if c == cc && h % 4 == 0 && w % 4 == 0 => {}
            _ => {
                return Err(data_err(format!(
                    "unet expects [N,{cc},Hz,Wz] with Hz,Wz divisible by 4, got {:?}",
                    zbar.shape()
                )))
            }
        }
        if t == 0 || t > self.dims.t_steps {
            return Err(data_err(format!("timestep {t} outside [1,{}]", self.dims.t_steps)));
        }
        let temb = timestep_features::<E>(t, self.dims.widths[0])?;
        let temb = self.temb2.forward(&self.temb1.forward(&temb)?.silu()?)?; // [1, temb]

        let x = self.in_conv.forward(zbar)?;
        let s0 = self.level_d0.forward(&x, &temb, ctx, None)?;
        let x = self.down0.forward(&s0)?;
        let s1 = self.level_d1.forward(&x, &temb, ctx, None)?;
        let x = self.down1.forward(&s1)?;
        let x = self
            .level_mid
            .forward(&x, &temb, ctx, fused.map(|f| &f[2]))?;
        let x = ops::concat(&[x.upsample_bilinear2x()?, s1], 1)?;
        let x = self.level_u1.forward(&x, &temb, ctx, fused.map(|f| &f[1]))?;
        let x = ops::concat(&[x.upsample_bilinear2x()?, s0], 1)?;
        let x = self.level_u0.forward(&x, &temb, ctx, fused.map(|f| &f[0]))?;
        let out = self.out_conv.forward(&self.out_norm.forward(&x)?.silu()?)?;
        let z_t = ops::narrow(zbar, 1, 0, self.dims.latent_channels())?;
        let u = (1.0 - self.alpha_bars[t - 1]).sqrt();
        let basis = Tensor::from_vec(
            &[4],
            (0..4).map(|k| E::from_f64(u.powi(k))).collect(),
        )?;
        let gamma = self.noise_gate.mul(&basis)?.sum_all()?.reshape(&[1])?;
        Ok(out.add(&z_t.mul(&gamma)?)?)
    }
}

/// Learned token-embedding table standing in for a text encoder.
pub struct TextEmbed<E: Scalar> {
    pub dims_vocab: usize,
    params: ParamSet<E>,
    table: Tensor<E>,
}

impl<E: Scalar> TextEmbed<E> {
    fn build(vocab: usize, d_txt: usize, mut pb: ParamBuilder<E>) -> Result<Self> {
        let table = pb.tensor("table", &[vocab, d_txt], Init::Normal { std: 0.02 })?;
        Ok(TextEmbed { dims_vocab: vocab, params: pb.finish()?, table })
    }

    pub fn new(vocab: usize, d_txt: usize, seed: u64) -> Result<Self> {
        Self::build(vocab, d_txt, ParamBuilder::init(crossview_tensor::rng::mix(seed, "text")))
    }

    pub fn from_params(vocab: usize, d_txt: usize, params: ParamSet<E>) -> Result<Self> {
        Self::build(vocab, d_txt, ParamBuilder::load(params))
    }

    pub fn params(&self) -> &ParamSet<E> {
        &self.params
    }

    pub fn frozen_clone(&self) -> Result<Self> {
        let d_txt = self.table.shape()[1];
        Self::from_params(self.dims_vocab, d_txt, self.params.detached())
    }

    /// Per-token embedding sequence `[L, d_txt]`; `None` for empty input.
    pub fn forward(&self, tokens: &[u16]) -> Result<Option<Tensor<E>>> {
        if tokens.is_empty() {
            return Ok(None);
        }
        let ids: Vec<usize> = tokens.iter().map(|&t| t as usize).collect();
        Ok(Some(ops::embed(&self.table, &ids)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn tiny_dims() -> DiffDims {
        DiffDims {
            t_steps: 10,
            widths: [8, 8, 8],
            guide_widths: [4, 4, 4],
            d_txt: 8,
            temb: 16,
            ..DiffDims::default()
        }
    }

    #[test]
    fn unet_output_shape_matches_latent() {
        let dims = tiny_dims();
        let net = UNet::<f32>::new(dims, 0).unwrap();
        let zbar = Tensor::<f32>::zeros(&[2, dims.cond_channels(), 8, 8]);
        let out = net.forward(&zbar, 3, None, None).unwrap();
        assert_eq!(out.shape(), &[2, dims.latent_channels(), 8, 8]);
    }

    #[test]
    fn text_embedding_deterministic_and_distinct() {
        let te = TextEmbed::<f32>::new(vocab_size(), 8, 1).unwrap();
        let a = te.forward(&crate::world::instruction_tokens(crate::world::ActionId::Stir)).unwrap();
        let b = te.forward(&crate::world::instruction_tokens(crate::world::ActionId::Stir)).unwrap();
        assert_eq!(a.unwrap().to_vec(), b.unwrap().to_vec());
        let c = te.forward(&crate::world::instruction_tokens(crate::world::ActionId::Idle)).unwrap();
        let d = te.forward(&crate::world::instruction_tokens(crate::world::ActionId::PickUp)).unwrap();
        assert_ne!(c.unwrap().to_vec(), d.unwrap().to_vec());
        assert!(te.forward(&[]).unwrap().is_none());
    }

    #[test]
    fn empty_context_is_identity_path() {
        let dims = tiny_dims();
        let net = UNet::<f32>::new(dims, 0).unwrap();
        let mut r = crossview_tensor::rng::stream(7, "unet-ctx");
        let zbar =
            crossview_tensor::rng::normal_tensor::<f32>(&mut r, &[1, dims.cond_channels(), 8, 8], 1.0)
                .unwrap();
        let a = net.forward(&zbar, 2, None, None).unwrap();
        let empty = Tensor::<f32>::zeros(&[0, dims.d_txt]);
        let b = net.forward(&zbar, 2, Some(&empty), None).unwrap();
        assert_eq!(a.to_vec(), b.to_vec());
    }

    #[test]
    fn timestep_features_distinguish_timesteps() {
        let a = timestep_features::<f32>(1, 8).unwrap();
        let b = timestep_features::<f32>(2, 8).unwrap();
        assert_ne!(a.to_vec(), b.to_vec());
    }
}
