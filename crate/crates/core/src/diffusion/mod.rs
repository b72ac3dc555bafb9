//! Mask-conditioned latent video diffusion.
//!
//! Frames are patchified into an exact invertible latent space, noised with
//! a linear DDPM schedule, and denoised by a UNet conditioned on the clean
//! first-frame latent, a visibility channel, instruction tokens, and
//! (optionally) multi-scale mask-guidance features. Sampling is
//! deterministic DDIM (eta = 0) over an evenly spaced timestep subsequence.

pub mod guide;
pub mod latent;
pub mod schedule;
pub mod unet;

pub use guide::MaskGuide;
pub use latent::{latent_decode, latent_encode};
pub use schedule::{make_schedule, DiffusionSchedule};
pub use unet::{timestep_features, DiffDims, TextEmbed, UNet};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crossview_tensor::io::Container;
use crossview_tensor::ops;
use crossview_tensor::{rng, ParamSet, Scalar, Tensor};

use crate::error::{data_err, Result};
use crate::nn::tensor_from_f32;
use crate::world::{Clip, MaskClip};

/// One-hot planes `[N,3,R,R]` for a whole mask clip.
pub fn onehot_clip<E: Scalar>(masks: &MaskClip) -> Result<Tensor<E>> {
    let (n, res) = (masks.frames, masks.res);
    let plane = res * res;
    let mut data = vec![E::ZERO; n * 3 * plane];
    for f in 0..n {
        let m = masks.frame(f);
        for (p, &v) in m.iter().enumerate() {
            data[f * 3 * plane + (v as usize) * plane + p] = E::ONE;
        }
    }
    Ok(Tensor::from_vec(&[n, 3, res, res], data)?)
}

/// Clip pixels `[0,1]` to latents: shift to `[-1,1]`, scale toward unit
/// variance, then patchify.
pub fn clip_to_latent<E: Scalar>(clip: &Clip, dims: &DiffDims) -> Result<Tensor<E>> {
    let t = tensor_from_f32::<E>(&[clip.frames, 3, clip.res, clip.res], &clip.data)?;
    let s = dims.latent_scale;
    latent_encode(&t.affine(2.0 * s, -s)?, dims.patch)
}

/// Conditioning input: channel concat of (a) the noisy latents, (b) the
/// clean latent with frames 2..N zeroed, (c) a first-frame visibility
/// channel.
pub fn build_condition<E: Scalar>(z_t: &Tensor<E>, z0: &Tensor<E>) -> Result<Tensor<E>> {
    if z_t.shape() != z0.shape() {
        return Err(data_err(format!(
            "build_condition: z_t {:?} vs z0 {:?}",
            z_t.shape(),
            z0.shape()
        )));
    }
    let [n, _cz, h, w] = match *z_t.shape() {
        [n, cz, h, w] => [n, cz, h, w],
        _ => return Err(data_err("build_condition expects [N,Cz,Hz,Wz]")),
    };
    let mut first_sel = vec![E::ZERO; n];
    first_sel[0] = E::ONE;
    let sel = Tensor::from_vec(&[n, 1, 1, 1], first_sel)?;
    let first = z0.mul(&sel)?;
    let mut vis = vec![E::ZERO; n * h * w];
    vis[..h * w].fill(E::ONE);
    let vis = Tensor::from_vec(&[n, 1, h, w], vis)?;
    Ok(ops::concat(&[z_t.clone(), first, vis], 1)?)
}

fn mse<E: Scalar>(a: &Tensor<E>, b: &Tensor<E>) -> Result<Tensor<E>> {
    let d = a.sub(b)?;
    Ok(d.mul(&d)?.mean_all()?)
}

/// Denoising loss at a fixed draw `(t, eps)`: noise the clip latents to
/// `z_t`, rebuild the conditioning, and score `|eps - eps_hat|^2`.
#[allow(clippy::too_many_arguments)]
pub fn train_loss_at<E: Scalar>(
    unet: &UNet<E>,
    text: &TextEmbed<E>,
    guide_and_masks: Option<(&MaskGuide<E>, &MaskClip)>,
    ego: &Clip,
    tokens: &[u16],
    sched: &DiffusionSchedule,
    t: usize,
    eps: &Tensor<E>,
) -> Result<Tensor<E>> {
    if t == 0 || t > sched.t_steps {
        return Err(data_err(format!("timestep {t} outside [1,{}]", sched.t_steps)));
    }
    let z0 = clip_to_latent::<E>(ego, &unet.dims)?;
    if eps.shape() != z0.shape() {
        return Err(data_err("train_loss: eps shape mismatch"));
    }
    let ab = sched.alpha_bar(t);
    let z_t = z0.scale(ab.sqrt())?.add(&eps.scale((1.0 - ab).sqrt())?)?;
    let zbar = build_condition(&z_t, &z0)?;
    let ctx = text.forward(tokens)?;
    let fused = match guide_and_masks {
        Some((g, m)) => Some(g.projected(&onehot_clip::<E>(m)?)?),
        None => None,
    };
    let eps_hat = unet.forward(&zbar, t, ctx.as_ref(), fused.as_ref())?;
    mse(eps, &eps_hat)
}

/// Denoising loss with `t ~ U[1,T]` and `eps ~ N(0,I)` drawn from `rng`.
#[allow(clippy::too_many_arguments)]
pub fn train_loss<E: Scalar>(
    unet: &UNet<E>,
    text: &TextEmbed<E>,
    guide_and_masks: Option<(&MaskGuide<E>, &MaskClip)>,
    ego: &Clip,
    tokens: &[u16],
    sched: &DiffusionSchedule,
    rng: &mut ChaCha8Rng,
) -> Result<Tensor<E>> {
    let t = rng.random_range(1..=sched.t_steps);
    let cz = unet.dims.latent_channels();
    let hz = ego.res / unet.dims.patch;
    let eps = rng::normal_tensor::<E>(rng, &[ego.frames, cz, hz, hz], 1.0)?;
    train_loss_at(unet, text, guide_and_masks, ego, tokens, sched, t, &eps)
}

/// Evenly spaced timestep subsequence for `steps` DDIM iterations.
pub fn ddim_timesteps(t_total: usize, steps: usize) -> Result<Vec<usize>> {
    if steps == 0 || steps > t_total {
        return Err(data_err(format!("ddim steps {steps} outside [1,{t_total}]")));
    }
    Ok((1..=steps).map(|i| i * t_total / steps).collect())
}

/// Deterministic DDIM sampling of a future ego clip.
///
/// The first frame of the result is `g1` exactly; the remaining frames are
/// decoded from the final latent, clamped to `[0,1]`.
#[allow(clippy::too_many_arguments)]
pub fn ddim_sample<E: Scalar>(
    unet: &UNet<E>,
    text: &TextEmbed<E>,
    guide_and_masks: Option<(&MaskGuide<E>, &MaskClip)>,
    g1: &[f32],
    n_frames: usize,
    res: usize,
    tokens: &[u16],
    sched: &DiffusionSchedule,
    steps: usize,
    seed: u64,
) -> Result<Clip> {
    if g1.len() != 3 * res * res {
        return Err(data_err("ddim_sample: g1 has the wrong size"));
    }
    let ts = ddim_timesteps(sched.t_steps, steps)?;
    let patch = unet.dims.patch;
    let scale = unet.dims.latent_scale;
    let mut cond = Clip::new(n_frames, res);
    cond.frame_mut(0).copy_from_slice(g1);
    let z0_cond = clip_to_latent::<E>(&cond, &unet.dims)?;

    let ctx = text.forward(tokens)?;
    let fused = match guide_and_masks {
        Some((g, m)) => {
            if m.frames != n_frames || m.res != res {
                return Err(data_err("ddim_sample: mask clip geometry mismatch"));
            }
            Some(g.projected(&onehot_clip::<E>(m)?)?)
        }
        None => None,
    };

    let cz = unet.dims.latent_channels();
    let hz = res / patch;
    let mut r = rng::stream(seed, "ddim-init");
    let mut z = rng::normal_tensor::<E>(&mut r, &[n_frames, cz, hz, hz], 1.0)?;

    for i in (0..ts.len()).rev() {
        let t = ts[i];
        let t_prev = if i > 0 { ts[i - 1] } else { 0 };
        let zbar = build_condition(&z, &z0_cond)?;
        let eps_hat = unet.forward(&zbar, t, ctx.as_ref(), fused.as_ref())?;
        let ab_t = sched.alpha_bar(t);
        let ab_p = sched.alpha_bar(t_prev);
        // x0 = (z - sqrt(1-ab_t) eps) / sqrt(ab_t); z_prev = sqrt(ab_p) x0 + sqrt(1-ab_p) eps
        let x0 = z
            .sub(&eps_hat.scale((1.0 - ab_t).sqrt())?)?
            .scale(1.0 / ab_t.sqrt())?
            .clamp(-scale, scale)?; // valid pixels live in [-scale, scale]
        z = x0
            .scale(ab_p.sqrt())?
            .add(&eps_hat.scale((1.0 - ab_p).sqrt())?)?
            .detach();
    }

    let decoded = latent_decode(&z, patch)?
        .affine(0.5 / scale, 0.5)?
        .clamp(0.0, 1.0)?;
    let mut clip = Clip::new(n_frames, res);
    let data = decoded.data();
    for (dst, src) in clip.data.iter_mut().zip(data.iter()) {
        *dst = src.to_f64() as f32;
    }
    drop(data);
    clip.frame_mut(0).copy_from_slice(g1);
    Ok(clip)
}

/// Bundled diffusion checkpoint: UNet + text table, mask guide after phase 2.
pub struct DiffModel<E: Scalar> {
    pub unet: UNet<E>,
    pub text: TextEmbed<E>,
    pub guide: Option<MaskGuide<E>>,
}

impl DiffModel<f32> {
    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let mut c = Container::new();
        { let meta = self.unet.dims.to_meta(); c.insert_f32("diff/meta", &[meta.len()], meta)?; }
        self.unet.params().store(&mut c, "diff/unet/")?;
        self.text.params().store(&mut c, "diff/text/")?;
        if let Some(g) = &self.guide {
            g.params().store(&mut c, "diff/mask/")?;
        }
        c.write_to(path)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<std::path::Path>, trainable: bool) -> Result<Self> {
        let c = Container::read_from(path)?;
        let (_, meta) = c.require_f32("diff/meta")?;
        let dims = DiffDims::from_meta(meta)?;
        let unet = UNet::from_params(dims, ParamSet::load(&c, "diff/unet/", trainable)?)?;
        let text = TextEmbed::from_params(
            dims.vocab,
            dims.d_txt,
            ParamSet::load(&c, "diff/text/", trainable)?,
        )?;
        let guide_params = ParamSet::load(&c, "diff/mask/", trainable)?;
        let guide = if guide_params.is_empty() {
            None
        } else {
            Some(MaskGuide::from_params(dims, guide_params)?)
        };
        Ok(DiffModel { unet, text, guide })
    }

    pub fn has_guide(path: impl AsRef<std::path::Path>) -> Result<bool> {
        let c = Container::read_from(path)?;
        let found = c.names().any(|n| n.starts_with("diff/mask/"));
        Ok(found)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{generate_sample, instruction_tokens, vocab_size, ActionId};

    fn tiny_dims() -> DiffDims {
        DiffDims {
            t_steps: 10,
            widths: [8, 8, 8],
            guide_widths: [4, 4, 4],
            d_txt: 8,
            temb: 16,
            ..DiffDims::default()
        }
    }

    fn tiny_model(seed: u64) -> (UNet<f32>, TextEmbed<f32>, DiffusionSchedule) {
        let dims = tiny_dims();
        let unet = UNet::new(dims, seed).unwrap();
        let text = TextEmbed::new(dims.vocab, dims.d_txt, seed).unwrap();
        let sched = make_schedule(dims.t_steps, dims.beta_start, dims.beta_end).unwrap();
        (unet, text, sched)
    }

    #[test]
    fn condition_layout() {
        let z_t = Tensor::<f32>::ones(&[3, 48, 2, 2]);
        let mut r = rng::stream(0, "cond");
        let z0 = rng::normal_tensor::<f32>(&mut r, &[3, 48, 2, 2], 1.0).unwrap();
        let zbar = build_condition(&z_t, &z0).unwrap();
        assert_eq!(zbar.shape(), &[3, 97, 2, 2]);
        let v = zbar.to_vec();
        let per_frame = 97 * 4;
        // component (b) at later frames is exactly zero
        for f in 1..3 {
            for i in 48 * 4..96 * 4 {
                assert_eq!(v[f * per_frame + i], 0.0);
            }
        }
        // component (b) at frame 1 equals z0
        let z0v = z0.to_vec();
        for i in 0..48 * 4 {
            assert_eq!(v[48 * 4 + i], z0v[i]);
        }
        // visibility channel: ones then zeros
        for f in 0..3 {
            for i in 96 * 4..97 * 4 {
                assert_eq!(v[f * per_frame + i], if f == 0 { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn loss_zero_when_prediction_equals_noise() {
        let mut r = rng::stream(1, "mse");
        let e = rng::normal_tensor::<f32>(&mut r, &[2, 4, 2, 2], 1.0).unwrap();
        assert_eq!(mse(&e, &e).unwrap().item().unwrap(), 0.0);
    }

    #[test]
    fn train_loss_nonnegative_and_deterministic_at_fixed_draw() {
        let (unet, text, sched) = tiny_model(0);
        let s = generate_sample(0, ActionId::Stir, 2, 16).unwrap();
        let mut r = rng::stream(0, "eps");
        let eps = rng::normal_tensor::<f32>(&mut r, &[2, 48, 4, 4], 1.0).unwrap();
        let a = train_loss_at(&unet, &text, None, &s.ego, &s.tokens, &sched, 3, &eps)
            .unwrap()
            .item()
            .unwrap();
        let b = train_loss_at(&unet, &text, None, &s.ego, &s.tokens, &sched, 3, &eps)
            .unwrap()
            .item()
            .unwrap();
        assert!(a >= 0.0);
        assert_eq!(a, b);
    }

    #[test]
    fn untrained_loss_in_expected_band() {
        // E[loss] ~ 1 + Var(eps_hat) for an untrained net; loose Monte-Carlo band
        let (unet, text, sched) = tiny_model(7);
        let s = generate_sample(1, ActionId::PushLeft, 2, 16).unwrap();
        let mut r = rng::stream(3, "mc");
        let mut total = 0.0;
        for _ in 0..64 {
            total += train_loss(&unet, &text, None, &s.ego, &s.tokens, &sched, &mut r)
                .unwrap()
                .item()
                .unwrap() as f64;
        }
        let mean = total / 64.0;
        assert!((0.5..4.0).contains(&mean), "mean loss {mean}");
    }

    #[test]
    fn zeroed_guide_projection_matches_no_guide() {
        let (unet, text, sched) = tiny_model(2);
        let guide = MaskGuide::new(tiny_dims(), 5).unwrap();
        let s = generate_sample(2, ActionId::PutDown, 2, 16).unwrap();
        let mut r = rng::stream(9, "eps2");
        let eps = rng::normal_tensor::<f32>(&mut r, &[2, 48, 4, 4], 1.0).unwrap();
        let a = train_loss_at(&unet, &text, None, &s.ego, &s.tokens, &sched, 2, &eps)
            .unwrap()
            .item()
            .unwrap();
        let b = train_loss_at(
            &unet,
            &text,
            Some((&guide, &s.ego_masks)),
            &s.ego,
            &s.tokens,
            &sched,
            2,
            &eps,
        )
        .unwrap()
        .item()
        .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn ddim_deterministic_seed_sensitive_first_frame_exact() {
        let (unet, text, sched) = tiny_model(4);
        let s = generate_sample(3, ActionId::PushRight, 2, 16).unwrap();
        let tokens = instruction_tokens(ActionId::PushRight);
        let sample = |seed| {
            ddim_sample(&unet, &text, None, s.ego.frame(0), 2, 16, &tokens, &sched, 5, seed).unwrap()
        };
        let a = sample(0);
        let b = sample(0);
        let c = sample(1);
        assert_eq!(a.data, b.data);
        assert_ne!(a.data, c.data);
        assert_eq!(a.frame(0), s.ego.frame(0));
        assert!(a.data.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn ddim_full_length_uses_every_timestep() {
        assert_eq!(ddim_timesteps(10, 10).unwrap(), (1..=10).collect::<Vec<_>>());
        assert_eq!(ddim_timesteps(100, 20).unwrap(), (1..=20).map(|i| i * 5).collect::<Vec<_>>());
        assert!(ddim_timesteps(10, 11).is_err());
        assert!(ddim_timesteps(10, 0).is_err());
    }

    #[test]
    fn checkpoint_roundtrip_and_guide_presence() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("phase1.exgn");
        let (unet, text, _) = tiny_model(8);
        let m = DiffModel { unet, text, guide: None };
        m.save(&p1).unwrap();
        assert!(!DiffModel::has_guide(&p1).unwrap());
        let back = DiffModel::load(&p1, true).unwrap();
        assert_eq!(
            back.unet.params().content_hash(),
            m.unet.params().content_hash()
        );
        assert!(back.guide.is_none());

        let p2 = dir.path().join("phase2.exgn");
        let with_guide = DiffModel {
            unet: back.unet,
            text: back.text,
            guide: Some(MaskGuide::new(tiny_dims(), 1).unwrap()),
        };
        with_guide.save(&p2).unwrap();
        assert!(DiffModel::has_guide(&p2).unwrap());
        let back2 = DiffModel::load(&p2, false).unwrap();
        assert!(back2.guide.is_some());
    }
}
