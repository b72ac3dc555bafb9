// PSNR comparison: copy baseline vs phase-1 vs phase-2 (gt + predicted masks)
use crossview::dataset::read_dataset;
use crossview::diffusion::{ddim_sample, make_schedule, DiffModel};
use crossview::metrics::psnr;
use crossview::segnet::SegNet;
use crossview::world::Clip;
use crossview_tensor::rng;

fn mean_psnr_tail(clip: &Clip, gt: &Clip) -> f64 {
    let mut acc = 0.0;
    for f in 1..clip.frames {
        acc += psnr(clip.frame(f), gt.frame(f)).unwrap();
    }
    acc / (clip.frames - 1) as f64
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let dir = args.get(1).map(String::as_str).unwrap_or("/tmp/xv/real/checkpoints");
    let data = args.get(2).map(String::as_str).unwrap_or("/tmp/xv/data.exgn");
    let (samples, _) = read_dataset(data).unwrap();
    let seg = SegNet::<f32>::load(format!("{dir}/seg.exgn"), false).unwrap();
    let d1 = DiffModel::load(format!("{dir}/diff1.exgn"), false).unwrap();
    let d2 = DiffModel::load(format!("{dir}/diff2.exgn"), false).unwrap();
    let dims = d1.unet.dims;
    let sched = make_schedule(dims.t_steps, dims.beta_start, dims.beta_end).unwrap();

    let (mut copy_m, mut p1_m, mut p2_m, mut pred_m, mut oracle_m) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (i, s) in samples.iter().enumerate() {
        let n = s.ego.frames;
        let res = s.ego.res;
        let seed = rng::mix_index(0, i as u64);

        let mut copy = Clip::new(n, res);
        for f in 0..n {
            copy.frame_mut(f).copy_from_slice(s.ego.frame(0));
        }
        let p1 = ddim_sample(&d1.unet, &d1.text, None, s.ego.frame(0), n, res, &s.tokens, &sched, 20, seed).unwrap();
        let guide = d2.guide.as_ref().unwrap();
        let p2 = ddim_sample(&d2.unet, &d2.text, Some((guide, &s.ego_masks)), s.ego.frame(0), n, res, &s.tokens, &sched, 20, seed).unwrap();
        let rollout = seg.rollout(&s.exo, &s.exo_masks, s.ego.frame(0)).unwrap();
        let pred = ddim_sample(&d2.unet, &d2.text, Some((guide, &rollout)), s.ego.frame(0), n, res, &s.tokens, &sched, 20, seed).unwrap();

        let c = mean_psnr_tail(&copy, &s.ego);
        let a = mean_psnr_tail(&p1, &s.ego);
        let b = mean_psnr_tail(&p2, &s.ego);
        let d = mean_psnr_tail(&pred, &s.ego);
        println!("sample {i}: copy {c:.2}  phase1 {a:.2}  phase2-gt {b:.2}  e2e-pred {d:.2}");
        copy_m += c / samples.len() as f64;
        p1_m += a / samples.len() as f64;
        p2_m += b / samples.len() as f64;
        pred_m += d / samples.len() as f64;
        oracle_m += b / samples.len() as f64;
    }
    println!("MEANS: copy {copy_m:.3}  phase1 {p1_m:.3}  phase2-gt(oracle) {p2_m:.3}  e2e-pred {pred_m:.3}");
    println!(
        "orderings: phase2>phase1 {}  oracle>=pred {}  pred>copy {}  oracle>copy {}",
        p2_m > p1_m,
        oracle_m >= pred_m,
        pred_m > copy_m,
        oracle_m > copy_m
    );
}
