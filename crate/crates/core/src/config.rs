//! Run configuration: JSON with strict unknown-key rejection.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diffusion::DiffDims;
use crate::error::{data_err, Result};
use crate::segnet::SegDims;
use crate::training::TrainConfig;
use crate::world::{vocab_size, ActionId};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorldConfig {
    pub frames: usize,
    pub res: usize,
    pub samples: usize,
    pub actions: Vec<String>,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            frames: 8,
            res: 32,
            samples: 8,
            actions: ["push_left", "push_right", "pick_up", "put_down", "stir"]
                .map(String::from)
                .to_vec(),
        }
    }
}

impl WorldConfig {
    pub fn action_ids(&self) -> Result<Vec<ActionId>> {
        self.actions.iter().map(|s| ActionId::parse(s)).collect()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SegNetConfig {
    pub d4: usize,
    pub d8: usize,
    pub d16: usize,
    pub dk: usize,
    pub dv: usize,
    pub capacity_per_view: usize,
}

impl Default for SegNetConfig {
    fn default() -> Self {
        let d = SegDims::default();
        SegNetConfig {
            d4: d.d4,
            d8: d.d8,
            d16: d.d16,
            dk: d.dk,
            dv: d.dv,
            capacity_per_view: d.capacity_per_view,
        }
    }
}

impl SegNetConfig {
    pub fn dims(&self) -> SegDims {
        SegDims {
            d4: self.d4,
            d8: self.d8,
            d16: self.d16,
            dk: self.dk,
            dv: self.dv,
            capacity_per_view: self.capacity_per_view,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiffusionConfig {
    pub t_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub patch: usize,
    pub widths: [usize; 3],
    pub guide_widths: [usize; 3],
    pub d_txt: usize,
    pub temb: usize,
    pub latent_scale: f64,
    /// Default DDIM step count for inference.
    pub ddim_steps: usize,
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        let d = DiffDims::default();
        DiffusionConfig {
            t_steps: d.t_steps,
            beta_start: d.beta_start,
            beta_end: d.beta_end,
            patch: d.patch,
            widths: d.widths,
            guide_widths: d.guide_widths,
            d_txt: d.d_txt,
            temb: d.temb,
            latent_scale: d.latent_scale,
            ddim_steps: 20,
        }
    }
}

impl DiffusionConfig {
    pub fn dims(&self) -> DiffDims {
        DiffDims {
            t_steps: self.t_steps,
            beta_start: self.beta_start,
            beta_end: self.beta_end,
            patch: self.patch,
            widths: self.widths,
            guide_widths: self.guide_widths,
            d_txt: self.d_txt,
            temb: self.temb,
            vocab: vocab_size(),
            latent_scale: self.latent_scale,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub world: WorldConfig,
    pub segnet: SegNetConfig,
    pub diffusion: DiffusionConfig,
    pub train_seg: TrainConfig,
    pub train_diff1: TrainConfig,
    pub train_diff2: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            world: WorldConfig::default(),
            segnet: SegNetConfig::default(),
            diffusion: DiffusionConfig::default(),
            // denoiser training prefers smaller batches and a hotter rate
            train_seg: TrainConfig { steps: 600, batch_size: 4, learning_rate: 1e-3, ..TrainConfig::default() },
            train_diff1: TrainConfig { steps: 900, batch_size: 2, learning_rate: 3e-3, ..TrainConfig::default() },
            train_diff2: TrainConfig { steps: 700, batch_size: 2, learning_rate: 3e-3, ..TrainConfig::default() },
        }
    }
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)?;
        let cfg: RunConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load_or_default(path: Option<&Path>) -> Result<RunConfig> {
        match path {
            Some(p) => Self::load(p),
            None => {
                let cfg = RunConfig::default();
                cfg.validate()?;
                Ok(cfg)
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let w = &self.world;
        if !(2..=16).contains(&w.frames) {
            return Err(data_err(format!("world.frames must be in [2,16], got {}", w.frames)));
        }
        if w.res < 16 || w.res % 16 != 0 {
            return Err(data_err(format!(
                "world.res must be a positive multiple of 16, got {}",
                w.res
            )));
        }
        w.action_ids()?;
        let d = &self.diffusion;
        if d.patch == 0 || w.res % (4 * d.patch) != 0 {
            return Err(data_err(format!(
                "res {} incompatible with patch {} (latent must stay divisible by 4)",
                w.res, d.patch
            )));
        }
        if self.segnet.capacity_per_view < 2 {
            return Err(data_err("segnet.capacity_per_view must be at least 2"));
        }
        self.train_seg.validate()?;
        self.train_diff1.validate()?;
        self.train_diff2.validate()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn unknown_keys_are_named() {
        let err = serde_json::from_str::<RunConfig>(r#"{"sede": 3}"#).unwrap_err();
        assert!(err.to_string().contains("sede"), "{err}");
        let err =
            serde_json::from_str::<RunConfig>(r#"{"world": {"framez": 8}}"#).unwrap_err();
        assert!(err.to_string().contains("framez"), "{err}");
    }

    #[test]
    fn bad_geometry_rejected() {
        let mut cfg = RunConfig::default();
        cfg.world.res = 24;
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::default();
        cfg.world.frames = 1;
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::default();
        cfg.world.actions = vec!["moonwalk".into()];
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn roundtrips_through_json() {
        let cfg = RunConfig::default();
        let text = serde_json::to_string(&cfg).unwrap();
        let back: RunConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back.world.frames, cfg.world.frames);
        assert_eq!(back.diffusion.widths, cfg.diffusion.widths);
    }
}
