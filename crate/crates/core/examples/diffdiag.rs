// single fixed (t, eps, clip) overfit: does the UNet gradient path work at all?
use crossview::diffusion::*;
use crossview::training::TrainConfig;
use crossview::world::{generate_sample, ActionId};
use crossview_tensor::{adam_step, backward, rng, AdamState};

fn main() {
    let dims = DiffDims::default();
    let unet = UNet::<f32>::new(dims, 0).unwrap();
    let text = TextEmbed::<f32>::new(dims.vocab, dims.d_txt, 0).unwrap();
    let sched = make_schedule(dims.t_steps, dims.beta_start, dims.beta_end).unwrap();
    let s = generate_sample(0, ActionId::PushLeft, 8, 32).unwrap();
    let mut r = rng::stream(0, "diag");
    let eps = rng::normal_tensor::<f32>(&mut r, &[8, 48, 8, 8], 1.0).unwrap();
    let cfg = TrainConfig::default();
    let lr: f64 = std::env::args()
        .nth(1)
        .and_then(|v| v.parse().ok())
        .unwrap_or(1e-3);
    let steps: usize = std::env::args()
        .nth(2)
        .and_then(|v| v.parse().ok())
        .unwrap_or(60);
    let mut params = unet.params().tensors();
    params.extend(text.params().tensors());
    let mut adam = AdamState::new(&params);
    for step in 0..steps {
        unet.params().zero_grads();
        text.params().zero_grads();
        let loss = train_loss_at(&unet, &text, None, &s.ego, &s.tokens, &sched, 50, &eps).unwrap();
        backward(&loss).unwrap();
        adam_step(&params, &mut adam, lr, cfg.beta1, cfg.beta2, cfg.adam_eps).unwrap();
        if step % 20 == 0 || step == steps - 1 {
            println!("step {step}: loss {:.6}", loss.item().unwrap());
        }
    }
}
