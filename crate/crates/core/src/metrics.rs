//! Mask and frame quality metrics: IoU, contour accuracy, location error,
//! SSIM, PSNR. All pure functions.
//!
//! Empty-mask conventions (fixed so evaluation is deterministic): IoU of two
//! empty masks is 1; contour accuracy is 0 when exactly one mask is empty and
//! 1 when both are; location error is 1 when exactly one is empty and 0 when
//! both are.

use crate::error::{data_err, Result};
use crate::world::MaskClip;

#[derive(Clone, Copy, Debug, Default)]
pub struct SegScore {
    pub iou: f64,
    pub contour_accuracy: f64,
    pub location_error: f64,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct GenScore {
    pub ssim: f64,
    pub psnr: f64,
}

fn check_same_len(op: &'static str, a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(data_err(format!("{op}: mask sizes differ ({a} vs {b})")));
    }
    Ok(())
}

/// Intersection over union of two binary masks (nonzero = foreground).
pub fn iou(pred: &[u8], gt: &[u8]) -> Result<f64> {
    check_same_len("iou", pred.len(), gt.len())?;
    let mut inter = 0usize;
    let mut union = 0usize;
    for (&p, &g) in pred.iter().zip(gt) {
        let (p, g) = (p != 0, g != 0);
        inter += (p && g) as usize;
        union += (p || g) as usize;
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

fn centroid(mask: &[u8], h: usize, w: usize) -> Option<(f64, f64)> {
    let mut n = 0f64;
    let (mut cy, mut cx) = (0f64, 0f64);
    for y in 0..h {
        for x in 0..w {
            if mask[y * w + x] != 0 {
                n += 1.0;
                cy += y as f64;
                cx += x as f64;
            }
        }
    }
    (n > 0.0).then(|| (cy / n, cx / n))
}

/// Shape similarity: IoU after translating `pred` so the centroids coincide
/// (rounded pixel shift; pixels moved outside the frame are dropped).
pub fn contour_accuracy(pred: &[u8], gt: &[u8], h: usize, w: usize) -> Result<f64> {
    check_same_len("contour_accuracy", pred.len(), gt.len())?;
    check_same_len("contour_accuracy", pred.len(), h * w)?;
    match (centroid(pred, h, w), centroid(gt, h, w)) {
        (None, None) => Ok(1.0),
        (None, Some(_)) | (Some(_), None) => Ok(0.0),
        (Some((py, px)), Some((gy, gx))) => {
            let dy = (gy - py).round() as isize;
            let dx = (gx - px).round() as isize;
            let mut shifted = vec![0u8; h * w];
            for y in 0..h as isize {
                for x in 0..w as isize {
                    if pred[(y * w as isize + x) as usize] != 0 {
                        let (ny, nx) = (y + dy, x + dx);
                        if ny >= 0 && ny < h as isize && nx >= 0 && nx < w as isize {
                            shifted[(ny * w as isize + nx) as usize] = 1;
                        }
                    }
                }
            }
            iou(&shifted, gt)
        }
    }
}

/// Centroid distance normalized by the image diagonal.
pub fn location_error(pred: &[u8], gt: &[u8], h: usize, w: usize) -> Result<f64> {
    check_same_len("location_error", pred.len(), gt.len())?;
    check_same_len("location_error", pred.len(), h * w)?;
    match (centroid(pred, h, w), centroid(gt, h, w)) {
        (None, None) => Ok(0.0),
        (None, Some(_)) | (Some(_), None) => Ok(1.0),
        (Some((py, px)), Some((gy, gx))) => {
            let d = ((gy - py).powi(2) + (gx - px).powi(2)).sqrt();
            let diag = ((h * h + w * w) as f64).sqrt();
            Ok(d / diag)
        }
    }
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let mut k = [0f64; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    let mut sum = 0.0;
    for (i, v) in k.iter_mut().enumerate() {
        *v = (-((i as f64 - c).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        sum += *v;
    }
    for v in &mut k {
        *v /= sum;
    }
    k
}

/// Separable valid-region Gaussian filter: `[h,w] -> [h-10, w-10]`.
fn gauss_valid(img: &[f64], h: usize, w: usize) -> Vec<f64> {
    let k = gaussian_kernel();
    let wo = w - SSIM_WINDOW + 1;
    let mut rows = vec![0f64; h * wo];
    for y in 0..h {
        for x in 0..wo {
            let mut s = 0.0;
            for (i, &kv) in k.iter().enumerate() {
                s += kv * img[y * w + x + i];
            }
            rows[y * wo + x] = s;
        }
    }
    let ho = h - SSIM_WINDOW + 1;
    let mut out = vec![0f64; ho * wo];
    for y in 0..ho {
        for x in 0..wo {
            let mut s = 0.0;
            for (i, &kv) in k.iter().enumerate() {
                s += kv * rows[(y + i) * wo + x];
            }
            out[y * wo + x] = s;
        }
    }
    out
}

/// Mean SSIM over channels and valid window positions; 11x11 Gaussian window
/// (sigma 1.5), K1 = 0.01, K2 = 0.03, dynamic range 1.
pub fn ssim(a: &[f32], b: &[f32], h: usize, w: usize) -> Result<f64> {
    check_same_len("ssim", a.len(), b.len())?;
    check_same_len("ssim", a.len(), 3 * h * w)?;
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(data_err(format!("ssim: image {h}x{w} smaller than the 11x11 window")));
    }
    let c1 = (SSIM_K1 * 1.0f64).powi(2);
    let c2 = (SSIM_K2 * 1.0f64).powi(2);
    let mut total = 0.0;
    let mut count = 0usize;
    for ch in 0..3 {
        let x: Vec<f64> = a[ch * h * w..(ch + 1) * h * w].iter().map(|&v| v as f64).collect();
        let y: Vec<f64> = b[ch * h * w..(ch + 1) * h * w].iter().map(|&v| v as f64).collect();
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(u, v)| u * v).collect();
        let mx = gauss_valid(&x, h, w);
        let my = gauss_valid(&y, h, w);
        let mxx = gauss_valid(&xx, h, w);
        let myy = gauss_valid(&yy, h, w);
        let mxy = gauss_valid(&xy, h, w);
        for i in 0..mx.len() {
            let (ux, uy) = (mx[i], my[i]);
            let vx = mxx[i] - ux * ux;
            let vy = myy[i] - uy * uy;
            let cov = mxy[i] - ux * uy;
            let s = ((2.0 * ux * uy + c1) * (2.0 * cov + c2))
                / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
            total += s;
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// `10·log10(1/MSE)` for `[0,1]` images, capped at 100 dB for identical inputs.
pub fn psnr(a: &[f32], b: &[f32]) -> Result<f64> {
    check_same_len("psnr", a.len(), b.len())?;
    let mse: f64 = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum::<f64>()
        / a.len() as f64;
    Ok((10.0 * (1.0 / mse).log10()).min(100.0))
}

/// Per-frame scores for one prediction/ground-truth pair.
#[derive(Clone, Debug)]
pub struct FrameSegScores {
    /// Foreground union of classes 1 and 2: the headline score.
    pub foreground: SegScore,
    pub hand: SegScore,
    pub object: SegScore,
}

#[derive(Clone, Debug)]
pub struct MaskEvaluation {
    pub per_frame: Vec<FrameSegScores>,
    pub mean_foreground: SegScore,
    pub mean_hand: SegScore,
    pub mean_object: SegScore,
}

fn score_binary(pred: &[u8], gt: &[u8], h: usize, w: usize) -> Result<SegScore> {
    Ok(SegScore {
        iou: iou(pred, gt)?,
        contour_accuracy: contour_accuracy(pred, gt, h, w)?,
        location_error: location_error(pred, gt, h, w)?,
    })
}

fn mean_scores(per_frame: &[FrameSegScores], pick: impl Fn(&FrameSegScores) -> SegScore) -> SegScore {
    let n = per_frame.len().max(1) as f64;
    let mut m = SegScore::default();
    for f in per_frame {
        let s = pick(f);
        m.iou += s.iou / n;
        m.contour_accuracy += s.contour_accuracy / n;
        m.location_error += s.location_error / n;
    }
    m
}

/// Frame-wise IoU/CA/LE on the foreground union and per class, plus means
/// over frames.
pub fn evaluate_masks(pred: &MaskClip, gt: &MaskClip) -> Result<MaskEvaluation> {
    if pred.frames != gt.frames || pred.res != gt.res {
        return Err(data_err(format!(
            "evaluate_masks: geometry mismatch ({}x{} vs {}x{})",
            pred.frames, pred.res, gt.frames, gt.res
        )));
    }
    let (h, w) = (pred.res, pred.res);
    let select = |m: &[u8], f: &dyn Fn(u8) -> bool| -> Vec<u8> {
        m.iter().map(|&v| f(v) as u8).collect()
    };
    let mut per_frame = Vec::with_capacity(pred.frames);
    for n in 0..pred.frames {
        let (pm, gm) = (pred.frame(n), gt.frame(n));
        per_frame.push(FrameSegScores {
            foreground: score_binary(
                &select(pm, &|v| v != 0),
                &select(gm, &|v| v != 0),
                h,
                w,
            )?,
            hand: score_binary(&select(pm, &|v| v == 1), &select(gm, &|v| v == 1), h, w)?,
            object: score_binary(&select(pm, &|v| v == 2), &select(gm, &|v| v == 2), h, w)?,
        });
    }
    Ok(MaskEvaluation {
        mean_foreground: mean_scores(&per_frame, |f| f.foreground),
        mean_hand: mean_scores(&per_frame, |f| f.hand),
        mean_object: mean_scores(&per_frame, |f| f.object),
        per_frame,
    })
}
