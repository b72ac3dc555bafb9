//! Mask-guidance encoder: downsampling blocks (ResNet block + temporal
//! attention each) over one-hot HOI masks, emitting one spatio-temporal
//! feature map per decoder-side fusion site, plus a zero-initialized 1x1
//! projection per site so an untrained guide leaves the UNet function
//! unchanged.

use crossview_tensor::{ParamSet, PoolKind, Scalar, Tensor};

use crate::error::{data_err, Result};
use crate::nn::{Conv2d, ParamBuilder};

use super::unet::{DiffDims, TemporalAttn, UnetResBlock};

struct GuideBlock<E: Scalar> {
    down: Conv2d<E>,
    res: UnetResBlock<E>,
    tattn: TemporalAttn<E>,
}

impl<E: Scalar> GuideBlock<E> {
    fn new(pb: &mut ParamBuilder<E>, name: &str, cin: usize, cout: usize) -> Result<Self> {
        Ok(GuideBlock {
            down: Conv2d::new(pb, &format!("{name}/down"), cin, cout, 3, 1, 1)?,
            res: UnetResBlock::new(pb, &format!("{name}/res"), cout, cout, None)?,
            tattn: TemporalAttn::new(pb, &format!("{name}/tattn"), cout)?,
        })
    }

    fn forward(&self, x: &Tensor<E>) -> Result<Tensor<E>> {
        let x = self.down.forward(&x.pool(PoolKind::Avg, 2, 2)?)?;
        let x = self.res.forward(&x, None)?;
        self.tattn.forward(&x)
    }
}

pub struct MaskGuide<E: Scalar> {
    pub dims: DiffDims,
    params: ParamSet<E>,
    blocks: Vec<GuideBlock<E>>,
    projs: Vec<Conv2d<E>>,
}

impl<E: Scalar> MaskGuide<E> {
    fn build(dims: DiffDims, mut pb: ParamBuilder<E>) -> Result<Self> {
        let [g0, g1, g2] = dims.guide_widths;
        let stem = (g0 / 2).max(2);
        // 32^2 masks -> 16 -> 8 (= Hz) -> 4 -> 2; features emitted at the
        // last three scales, matching the UNet decoder resolutions.
        let blocks = vec![
            GuideBlock::new(&mut pb, "b0", 3, stem)?,
            GuideBlock::new(&mut pb, "b1", stem, g0)?,
            GuideBlock::new(&mut pb, "b2", g0, g1)?,
            GuideBlock::new(&mut pb, "b3", g1, g2)?,
        ];
        let projs = vec![
            Conv2d::new_zero_1x1(&mut pb, "proj0", g0, dims.widths[0])?,
            Conv2d::new_zero_1x1(&mut pb, "proj1", g1, dims.widths[1])?,
            Conv2d::new_zero_1x1(&mut pb, "proj2", g2, dims.widths[2])?,
        ];
        Ok(MaskGuide { dims, params: pb.finish()?, blocks, projs })
    }

    pub fn new(dims: DiffDims, seed: u64) -> Result<Self> {
        Self::build(dims, ParamBuilder::init(crossview_tensor::rng::mix(seed, "guide")))
    }

    pub fn from_params(dims: DiffDims, params: ParamSet<E>) -> Result<Self> {
        Self::build(dims, ParamBuilder::load(params))
    }

    pub fn params(&self) -> &ParamSet<E> {
        &self.params
    }

    pub fn frozen_clone(&self) -> Result<Self> {
        Self::from_params(self.dims, self.params.detached())
    }

    /// Multi-scale features from one-hot masks `[N,3,H,W]`, one per fusion
    /// site, ordered `[Hz, Hz/2, Hz/4]`.
    pub fn features(&self, masks_onehot: &Tensor<E>) -> Result<Vec<Tensor<E>>> {
        match *masks_onehot.shape() {
            [_, 3, h, w] if h % 16 == 0 && w % 16 == 0 => {}
            _ => {
                return Err(data_err(format!(
                    "mask guidance expects [N,3,H,W] divisible by 16, got {:?}",
                    masks_onehot.shape()
                )))
            }
        }
        let mut x = masks_onehot.clone();
        let mut out = Vec::with_capacity(3);
        for (i, b) in self.blocks.iter().enumerate() {
            x = b.forward(&x)?;
            if i >= 1 {
                out.push(x.clone());
            }
        }
        Ok(out)
    }

    /// Features projected to the UNet level widths, ready for additive
    /// fusion. Projections start at exactly zero.
    pub fn projected(&self, masks_onehot: &Tensor<E>) -> Result<[Tensor<E>; 3]> {
        let feats = self.features(masks_onehot)?;
        let p0 = self.projs[0].forward(&feats[0])?;
        let p1 = self.projs[1].forward(&feats[1])?;
        let p2 = self.projs[2].forward(&feats[2])?;
        Ok([p0, p1, p2])
    }
}
