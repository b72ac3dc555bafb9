// finite-difference audit of the diffusion loss gradients (f64 check mode)
use crossview::diffusion::*;
use crossview::world::{generate_sample, vocab_size, ActionId};
use crossview_tensor::check::{finite_diff_grad, max_rel_err};
use crossview_tensor::{backward, rng};

fn main() {
    let dims = DiffDims {
        t_steps: 10,
        widths: [8, 8, 8],
        guide_widths: [4, 4, 4],
        d_txt: 8,
        temb: 16,
        vocab: vocab_size(),
        ..DiffDims::default()
    };
    let unet = UNet::<f64>::new(dims, 0).unwrap();
    let text = TextEmbed::<f64>::new(dims.vocab, dims.d_txt, 0).unwrap();
    let sched = make_schedule(dims.t_steps, dims.beta_start, dims.beta_end).unwrap();
    let s = generate_sample(0, ActionId::Stir, 2, 32).unwrap();
    let mut r = rng::stream(1, "eps");
    let eps = rng::normal_tensor::<f64>(&mut r, &[2, 48, 8, 8], 1.0).unwrap();

    let loss_fn = || train_loss_at(&unet, &text, None, &s.ego, &s.tokens, &sched, 5, &eps).unwrap();
    let loss = loss_fn();
    unet.params().zero_grads();
    text.params().zero_grads();
    backward(&loss).unwrap();

    let mut names: Vec<String> = unet.params().names().map(String::from).collect();
    names.sort();
    let mut worst_overall: f64 = 0.0;
    let mut zero_grads = 0;
    for name in &names {
        let p = unet.params().get(name).unwrap();
        let analytic = match p.grad() {
            Some(g) => g,
            None => {
                zero_grads += 1;
                println!("NO GRAD: {name}");
                continue;
            }
        };
        // check a handful of elements per parameter
        let n = p.numel().min(3);
        let h = 1e-4;
        let mut fd = vec![0.0f64; n];
        for i in 0..n {
            let mut data = p.to_vec();
            let orig = data[i];
            data[i] = orig + h;
            p.set_data(&data).unwrap();
            let lp = loss_fn().item().unwrap();
            data[i] = orig - h;
            p.set_data(&data).unwrap();
            let lm = loss_fn().item().unwrap();
            data[i] = orig;
            p.set_data(&data).unwrap();
            fd[i] = (lp - lm) / (2.0 * h);
        }
        let err = max_rel_err(&analytic[..n], &fd[..n]);
        worst_overall = worst_overall.max(err);
        if err > 1e-2 {
            println!("BAD {name}: rel err {err:.3e} (analytic {:?} fd {:?})", &analytic[..n], &fd[..n]);
        }
        let mag: f64 = analytic.iter().map(|v| v.abs()).sum::<f64>() / analytic.len() as f64;
        if mag < 1e-12 {
            println!("TINY GRAD {name}: mean |g| = {mag:.2e}");
        }
    }
    println!("params: {}, no-grad: {zero_grads}, worst rel err {worst_overall:.3e}", names.len());
}
