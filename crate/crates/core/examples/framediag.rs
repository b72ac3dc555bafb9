// per-frame: is the prediction tracking the ground truth, or stuck on frame 1?
use crossview::dataset::read_dataset;
use crossview::diffusion::{ddim_sample, make_schedule, DiffModel};
use crossview::metrics::psnr;
use crossview_tensor::rng;

fn main() {
    let (samples, _) = read_dataset("/tmp/xv/data.exgn").unwrap();
    let d2 = DiffModel::load("/tmp/xv/real/checkpoints/diff2.exgn", false).unwrap();
    let dims = d2.unet.dims;
    let sched = make_schedule(dims.t_steps, dims.beta_start, dims.beta_end).unwrap();
    for (i, s) in samples.iter().enumerate().take(3) {
        let guide = d2.guide.as_ref().unwrap();
        let pred = ddim_sample(
            &d2.unet, &d2.text, Some((guide, &s.ego_masks)),
            s.ego.frame(0), s.ego.frames, s.ego.res, &s.tokens, &sched, 20,
            rng::mix_index(0, i as u64),
        ).unwrap();
        println!("sample {i} ({:?}):", s.action);
        for f in 1..s.ego.frames {
            let vs_gt = psnr(pred.frame(f), s.ego.frame(f)).unwrap();
            let vs_g1 = psnr(pred.frame(f), s.ego.frame(0)).unwrap();
            let copy_vs_gt = psnr(s.ego.frame(0), s.ego.frame(f)).unwrap();
            // crude sharpness: mean |dx| of the green channel
            let res = pred.res;
            let g = &pred.frame(f)[res * res..2 * res * res];
            let sharp: f32 = (0..res * res - 1).map(|p| (g[p + 1] - g[p]).abs()).sum::<f32>()
                / (res * res) as f32;
            let g_gt = &s.ego.frame(f)[res * res..2 * res * res];
            let sharp_gt: f32 = (0..res * res - 1).map(|p| (g_gt[p + 1] - g_gt[p]).abs()).sum::<f32>()
                / (res * res) as f32;
            println!(
                "  f{f}: vs_gt {vs_gt:.2}  vs_g1 {vs_g1:.2}  copy_vs_gt {copy_vs_gt:.2}  sharp {sharp:.3} (gt {sharp_gt:.3})"
            );
        }
    }
}
