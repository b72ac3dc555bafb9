// gradient magnitude per layer for the real-size diffusion loss
use crossview::diffusion::*;
use crossview::world::{generate_sample, ActionId};
use crossview_tensor::{backward, rng};

fn main() {
    let dims = DiffDims::default();
    let unet = UNet::<f32>::new(dims, 0).unwrap();
    let text = TextEmbed::<f32>::new(dims.vocab, dims.d_txt, 0).unwrap();
    let sched = make_schedule(dims.t_steps, dims.beta_start, dims.beta_end).unwrap();
    let s = generate_sample(0, ActionId::PushLeft, 8, 32).unwrap();
    let mut r = rng::stream(0, "diag");
    let eps = rng::normal_tensor::<f32>(&mut r, &[8, 48, 8, 8], 1.0).unwrap();
    let loss = train_loss_at(&unet, &text, None, &s.ego, &s.tokens, &sched, 50, &eps).unwrap();
    println!("loss {:.4}", loss.item().unwrap());
    backward(&loss).unwrap();
    for name in unet.params().names() {
        let p = unet.params().get(name).unwrap();
        let pm: f32 = p.data().iter().map(|v| v.abs()).sum::<f32>() / p.numel() as f32;
        let gm: f32 = match p.grad() {
            Some(g) => g.iter().map(|v| v.abs()).sum::<f32>() / g.len() as f32,
            None => -1.0,
        };
        println!("{name:24} |p| {pm:.2e}  |g| {gm:.2e}");
    }
}
