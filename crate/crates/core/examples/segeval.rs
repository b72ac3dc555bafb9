// quick rollout IoU check against the training clips
use crossview::dataset::read_dataset;
use crossview::metrics::evaluate_masks;
use crossview::segnet::SegNet;

fn main() {
    let (samples, _) = read_dataset("/tmp/xv/data.exgn").unwrap();
    let net = SegNet::<f32>::load("/tmp/xv/real/checkpoints/seg.exgn", false).unwrap();
    let mut f1 = 0.0;
    let mut rest = 0.0;
    for (i, s) in samples.iter().enumerate() {
        let pred = net.rollout(&s.exo, &s.exo_masks, s.ego.frame(0)).unwrap();
        let eval = evaluate_masks(&pred, &s.ego_masks).unwrap();
        let per: Vec<f64> = eval.per_frame.iter().map(|f| f.foreground.iou).collect();
        let r: f64 = per[1..].iter().sum::<f64>() / (per.len() - 1) as f64;
        println!("sample {i}: f1 {:.3}, rest {:.3}  {:?}", per[0], r,
                 per.iter().map(|v| (v * 100.0) as i32).collect::<Vec<_>>());
        f1 += per[0] / samples.len() as f64;
        rest += r / samples.len() as f64;
    }
    println!("MEAN frame1 {f1:.3}  frames2..N {rest:.3}");
}
