//! Exact invertible latent space: space-to-depth patchify.
//!
//! `p x p` pixel blocks become channels, so encode/decode are pure data
//! rearrangements and exact inverses of each other. Value shifting to
//! `[-1, 1]` happens in the diffusion pipeline, not here.

use crossview_tensor::{Scalar, Tensor};

use crate::error::{data_err, Result};

/// `[N,3,H,W] -> [N,3p²,H/p,W/p]`
pub fn latent_encode<E: Scalar>(clip: &Tensor<E>, p: usize) -> Result<Tensor<E>> {
    let [n, c, h, w] = match *clip.shape() {
        [n, c, h, w] => [n, c, h, w],
        _ => return Err(data_err("latent_encode expects [N,C,H,W]")),
    };
    if p == 0 || h % p != 0 || w % p != 0 {
        return Err(data_err(format!("latent_encode: {h}x{w} not divisible by patch {p}")));
    }
    let (hz, wz) = (h / p, w / p);
    Ok(clip
        .reshape(&[n, c, hz, p, wz, p])?
        .permute(&[0, 1, 3, 5, 2, 4])?
        .reshape(&[n, c * p * p, hz, wz])?)
}

/// `[N,3p²,Hz,Wz] -> [N,3,Hz·p,Wz·p]`
pub fn latent_decode<E: Scalar>(latent: &Tensor<E>, p: usize) -> Result<Tensor<E>> {
    let [n, cz, hz, wz] = match *latent.shape() {
        [n, cz, hz, wz] => [n, cz, hz, wz],
        _ => return Err(data_err("latent_decode expects [N,Cz,Hz,Wz]")),
    };
    if p == 0 || cz % (p * p) != 0 {
        return Err(data_err(format!("latent_decode: {cz} channels not divisible by {}", p * p)));
    }
    let c = cz / (p * p);
    Ok(latent
        .reshape(&[n, c, p, p, hz, wz])?
        .permute(&[0, 1, 4, 2, 5, 3])?
        .reshape(&[n, c, hz * p, wz * p])?)
}
