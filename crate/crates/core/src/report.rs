//! Evaluation report: per-frame CSVs plus a JSON summary of means.
//!
//! Segmentation rows cover every frame (the first frame is a real
//! prediction); generation rows cover frames 2..N only, since frame 1 is an
//! input to the sampler.

use std::path::Path;

use serde_json::json;

use crate::error::Result;
use crate::metrics::SegScore;

#[derive(Clone, Debug)]
pub struct SegRow {
    pub sample: usize,
    pub frame: usize,
    pub class: &'static str,
    pub score: SegScore,
}

#[derive(Clone, Debug)]
pub struct GenRow {
    pub sample: usize,
    pub frame: usize,
    pub ssim: f64,
    pub psnr: f64,
}

#[derive(Clone, Debug, Default)]
pub struct EvalReport {
    pub seg_rows: Vec<SegRow>,
    pub gen_rows: Vec<GenRow>,
}

fn mean<I: Iterator<Item = f64>>(it: I) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    for v in it {
        sum += v;
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

impl EvalReport {
    pub fn seg_means(&self, class: &str) -> SegScore {
        let rows = || self.seg_rows.iter().filter(move |r| r.class == class);
        SegScore {
            iou: mean(rows().map(|r| r.score.iou)),
            contour_accuracy: mean(rows().map(|r| r.score.contour_accuracy)),
            location_error: mean(rows().map(|r| r.score.location_error)),
        }
    }

    pub fn gen_means(&self) -> (f64, f64) {
        (
            mean(self.gen_rows.iter().map(|r| r.ssim)),
            mean(self.gen_rows.iter().map(|r| r.psnr)),
        )
    }

    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;

        let mut seg = String::from("sample,frame,class,iou,ca,le\n");
        for r in &self.seg_rows {
            seg.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.sample, r.frame, r.class, r.score.iou, r.score.contour_accuracy, r.score.location_error
            ));
        }
        std::fs::write(dir.join("seg.csv"), seg)?;

        let mut gen = String::from("sample,frame,ssim,psnr\n");
        for r in &self.gen_rows {
            gen.push_str(&format!("{},{},{},{}\n", r.sample, r.frame, r.ssim, r.psnr));
        }
        std::fs::write(dir.join("gen.csv"), gen)?;

        let (ssim, psnr) = self.gen_means();
        let seg_json = |class: &str| {
            let m = self.seg_means(class);
            json!({ "iou": m.iou, "ca": m.contour_accuracy, "le": m.location_error })
        };
        let samples = self
            .seg_rows
            .iter()
            .map(|r| r.sample)
            .collect::<std::collections::BTreeSet<_>>()
            .len();
        let summary = json!({
            "samples": samples,
            "segmentation": {
                "foreground": seg_json("foreground"),
                "hand": seg_json("hand"),
                "object": seg_json("object"),
            },
            "generation": { "ssim": ssim, "psnr": psnr },
        });
        std::fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
        Ok(())
    }
}

/// P5 PGM with maxval 2: the native dump format for class-id masks.
pub fn write_pgm(path: impl AsRef<Path>, mask: &[u8], res: usize) -> Result<()> {
    let mut bytes = format!("P5\n{res} {res}\n2\n").into_bytes();
    bytes.extend_from_slice(mask);
    std::fs::write(path, bytes)?;
    Ok(())
}

/// P6 PPM from a channel-major `[3,res,res]` float frame in `[0,1]`.
pub fn write_ppm(path: impl AsRef<Path>, frame: &[f32], res: usize) -> Result<()> {
    let mut bytes = format!("P6\n{res} {res}\n255\n").into_bytes();
    let plane = res * res;
    for p in 0..plane {
        for c in 0..3 {
            bytes.push((frame[c * plane + p].clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    std::fs::write(path, bytes)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn means_match_rows() {
        let mut rep = EvalReport::default();
        for (i, iou) in [0.2, 0.4, 0.6].into_iter().enumerate() {
            rep.seg_rows.push(SegRow {
                sample: 0,
                frame: i,
                class: "foreground",
                score: SegScore { iou, contour_accuracy: 1.0, location_error: 0.0 },
            });
        }
        rep.gen_rows.push(GenRow { sample: 0, frame: 1, ssim: 0.5, psnr: 20.0 });
        rep.gen_rows.push(GenRow { sample: 0, frame: 2, ssim: 0.7, psnr: 30.0 });
        assert!((rep.seg_means("foreground").iou - 0.4).abs() < 1e-12);
        let (ssim, psnr) = rep.gen_means();
        assert!((ssim - 0.6).abs() < 1e-12);
        assert!((psnr - 25.0).abs() < 1e-12);
    }

    #[test]
    fn files_written() {
        let dir = tempfile::tempdir().unwrap();
        let rep = EvalReport::default();
        rep.write(dir.path()).unwrap();
        assert!(dir.path().join("seg.csv").exists());
        assert!(dir.path().join("gen.csv").exists());
        assert!(dir.path().join("summary.json").exists());
    }

    #[test]
    fn pgm_and_ppm_headers() {
        let dir = tempfile::tempdir().unwrap();
        let mask = vec![0u8, 1, 2, 0];
        write_pgm(dir.path().join("m.pgm"), &mask, 2).unwrap();
        let got = std::fs::read(dir.path().join("m.pgm")).unwrap();
        assert!(got.starts_with(b"P5\n2 2\n2\n"));
        assert_eq!(&got[got.len() - 4..], &mask[..]);

        let frame = vec![0.0f32, 1.0, 0.5, 0.25, 0.0, 1.0, 0.1, 0.9, 0.2, 0.8, 0.3, 0.7];
        write_ppm(dir.path().join("f.ppm"), &frame, 2).unwrap();
        let got = std::fs::read(dir.path().join("f.ppm")).unwrap();
        assert!(got.starts_with(b"P6\n2 2\n255\n"));
        assert_eq!(got.len(), 11 + 12);
    }
}
