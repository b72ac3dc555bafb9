// isolate what breaks training: random t? fresh eps? multiple clips?
use crossview::diffusion::*;
use crossview::world::{generate_sample, ActionId};
use crossview_tensor::{adam_step, backward, rng, AdamState, Tensor};
use rand::Rng;

fn main() {
    let mode = std::env::args().nth(1).unwrap_or_else(|| "fixed".into());
    let steps: usize = std::env::args().nth(2).and_then(|v| v.parse().ok()).unwrap_or(200);
    let dims = DiffDims::default();
    let unet = UNet::<f32>::new(dims, 0).unwrap();
    let text = TextEmbed::<f32>::new(dims.vocab, dims.d_txt, 0).unwrap();
    let sched = make_schedule(dims.t_steps, dims.beta_start, dims.beta_end).unwrap();
    let s = generate_sample(0, ActionId::PushLeft, 8, 32).unwrap();
    let mut r = rng::stream(0, "diag2");
    let fixed_eps: Tensor<f32> = rng::normal_tensor(&mut r, &[8, 48, 8, 8], 1.0).unwrap();
    let mut params = unet.params().tensors();
    params.extend(text.params().tensors());
    let mut adam = AdamState::new(&params);
    let mut running = 0.0f64;
    for step in 0..steps {
        unet.params().zero_grads();
        text.params().zero_grads();
        let (t, eps) = match mode.as_str() {
            "fixed" => (50usize, fixed_eps.clone()),
            "rand-eps" => (50, rng::normal_tensor(&mut r, &[8, 48, 8, 8], 1.0).unwrap()),
            "rand-t" => (r.random_range(1..=100), fixed_eps.clone()),
            _ => (
                r.random_range(1..=100),
                rng::normal_tensor(&mut r, &[8, 48, 8, 8], 1.0).unwrap(),
            ),
        };
        let loss = train_loss_at(&unet, &text, None, &s.ego, &s.tokens, &sched, t, &eps).unwrap();
        backward(&loss).unwrap();
        adam_step(&params, &mut adam, 3e-3, 0.9, 0.999, 1e-8).unwrap();
        running = 0.9 * running + 0.1 * loss.item().unwrap() as f64;
        if step % 25 == 0 || step == steps - 1 {
            println!("{mode} step {step}: loss {:.4} (ema {running:.4})", loss.item().unwrap());
        }
    }
}
