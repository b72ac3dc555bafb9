// does perturbing bottleneck weights change the unet output at all?
use crossview::diffusion::*;
use crossview::world::vocab_size;
use crossview_tensor::{rng, Tensor};

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
    let mut r = rng::stream(0, "probe");
    let zbar = rng::normal_tensor::<f64>(&mut r, &[2, dims.cond_channels(), 4, 4], 1.0).unwrap();
    let base = unet.forward(&zbar, 3, None, None).unwrap().to_vec();

    for name in ["mid/res/conv2/w", "mid/tattn/out/w", "u1/res/conv1/w", "down1/w"] {
        let p = unet.params().get(name).unwrap();
        let orig = p.to_vec();
        p.set_data(&vec![1.0; p.numel()]).unwrap();
        let out = unet.forward(&zbar, 3, None, None).unwrap().to_vec();
        let diff: f64 = base.iter().zip(&out).map(|(a, b)| (a - b).abs()).sum();
        println!("{name}: output L1 change {diff:.6}");
        p.set_data(&orig).unwrap();
    }

    // and check the intermediate: does down1 output affect mid input?
    let x = Tensor::<f64>::ones(&[1, 8, 2, 2]);
    let up = x.upsample_bilinear2x().unwrap();
    println!("upsample 2x2->4x4 of ones: {:?}", &up.to_vec()[..4]);
}
