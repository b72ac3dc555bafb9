// one-step denoising probe: noise the ground truth to z_t, predict eps, and
// score the implied x0 against the clip. separates model quality from
// sampler trajectory effects.
use crossview::dataset::read_dataset;
use crossview::diffusion::*;
use crossview::metrics::psnr;
use crossview::world::Clip;
use crossview_tensor::rng;

fn main() {
    let (samples, _) = read_dataset("/tmp/xv/data.exgn").unwrap();
    let d1 = DiffModel::load("/tmp/xv/real/checkpoints/diff1.exgn", false).unwrap();
    let dims = d1.unet.dims;
    let sched = make_schedule(dims.t_steps, dims.beta_start, dims.beta_end).unwrap();
    let s = &samples[0];
    let mut r = rng::stream(9, "denoise");
    let ctx = d1.text.forward(&s.tokens).unwrap();
    for t in [100usize, 80, 60, 40, 20, 10, 5] {
        let z0 = clip_to_latent::<f32>(&s.ego, &dims).unwrap();
        let eps = rng::normal_tensor::<f32>(&mut r, &[8, 48, 8, 8], 1.0).unwrap();
        let ab = sched.alpha_bar(t);
        let z_t = z0.scale(ab.sqrt()).unwrap().add(&eps.scale((1.0 - ab).sqrt()).unwrap()).unwrap();
        let zbar = build_condition(&z_t, &z0).unwrap();
        let eps_hat = d1.unet.forward(&zbar, t, ctx.as_ref(), None).unwrap();
        let x0 = z_t
            .sub(&eps_hat.scale((1.0 - ab).sqrt()).unwrap())
            .unwrap()
            .scale(1.0 / ab.sqrt())
            .unwrap()
            .clamp(-dims.latent_scale, dims.latent_scale)
            .unwrap();
        let dec = latent_decode(&x0, dims.patch)
            .unwrap()
            .affine(0.5 / dims.latent_scale, 0.5)
            .unwrap()
            .clamp(0.0, 1.0)
            .unwrap();
        let mut clip = Clip::new(8, 32);
        clip.data.copy_from_slice(
            &dec.to_vec().iter().map(|&v| v as f32).collect::<Vec<f32>>(),
        );
        let mut p = 0.0;
        for f in 1..8 {
            p += psnr(clip.frame(f), s.ego.frame(f)).unwrap() / 7.0;
        }
        // eps residual as well
        let derr = eps_hat.sub(&eps).unwrap();
        let mse = derr.mul(&derr).unwrap().mean_all().unwrap().item().unwrap();
        println!("t={t:3}: one-step x0 psnr {p:.2} dB, eps mse {mse:.4}");
    }
}
