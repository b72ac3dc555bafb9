//! Cross-view hand-object mask prediction.
//!
//! A shared image encoder produces multi-scale features for exo and ego
//! frames; a mask encoder fuses frame+mask pairs with the image features
//! through CBAM; an ego-exo memory bank stores projected key/value maps per
//! frame and view; reading the bank is cross-attention per spatial location
//! with the softmax running across stored entries; a decoder upsamples the
//! memory readout against ego skip features into 3-class logits. Prediction
//! is auto-regressive: each step stores the exo entry, reads memory with both
//! exo- and ego-feature queries, blends the readouts, decodes the ego mask,
//! and stores the re-encoded prediction as the ego entry.

use crossview_tensor::io::Container;
use crossview_tensor::ops;
use crossview_tensor::{ParamSet, Scalar, Tensor};

use crate::error::{data_err, Result};
use crate::nn::{
    argmax_mask, onehot_tensor, tensor_from_f32, Cbam, Conv2d, DownBlock, GroupNorm, Init,
    ParamBuilder, ResBlock,
};
use crate::world::{Clip, MaskClip, View};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SegDims {
    pub d4: usize,
    pub d8: usize,
    pub d16: usize,
    pub dk: usize,
    pub dv: usize,
    pub capacity_per_view: usize,
}

impl Default for SegDims {
    fn default() -> Self {
        SegDims { d4: 32, d8: 64, d16: 96, dk: 64, dv: 64, capacity_per_view: 6 }
    }
}

impl SegDims {
    pub fn to_meta(&self) -> Vec<f32> {
        vec![
            self.d4 as f32,
            self.d8 as f32,
            self.d16 as f32,
            self.dk as f32,
            self.dv as f32,
            self.capacity_per_view as f32,
        ]
    }

    pub fn from_meta(meta: &[f32]) -> Result<Self> {
        if meta.len() != 6 {
            return Err(data_err("segnet meta must have 6 entries"));
        }
        Ok(SegDims {
            d4: meta[0] as usize,
            d8: meta[1] as usize,
            d16: meta[2] as usize,
            dk: meta[3] as usize,
            dv: meta[4] as usize,
            capacity_per_view: meta[5] as usize,
        })
    }
}

/// Image-encoder pyramid at strides 4, 8, 16 (shapes `[1, d, H/s, W/s]`).
pub struct MultiScaleFeatures<E: Scalar> {
    pub f4: Tensor<E>,
    pub f8: Tensor<E>,
    pub f16: Tensor<E>,
}

pub struct MemoryEntry<E: Scalar> {
    pub view: View,
    pub frame_index: usize,
    pub key: Tensor<E>,   // [1, Dk, h, w]
    pub value: Tensor<E>, // [1, Dv, h, w]
}

/// Ordered key/value store over past frames of both views. Each view keeps at
/// most `capacity_per_view` entries; its first stored entry is pinned and the
/// oldest non-pinned entry is evicted on overflow.
pub struct MemoryBank<E: Scalar> {
    entries: Vec<MemoryEntry<E>>,
    capacity_per_view: usize,
}

impl<E: Scalar> MemoryBank<E> {
    pub fn new(capacity_per_view: usize) -> Self {
        MemoryBank { entries: Vec::new(), capacity_per_view }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[MemoryEntry<E>] {
        &self.entries
    }

    pub fn view_count(&self, view: View) -> usize {
        self.entries.iter().filter(|e| e.view == view).count()
    }

    pub fn frames_of(&self, view: View) -> Vec<usize> {
        self.entries
            .iter()
            .filter(|e| e.view == view)
            .map(|e| e.frame_index)
            .collect()
    }

    pub fn store(&mut self, view: View, frame_index: usize, key: Tensor<E>, value: Tensor<E>) -> Result<()> {
        if let Some(last) = self
            .entries
            .iter()
            .filter(|e| e.view == view)
            .map(|e| e.frame_index)
            .max()
        {
            if frame_index <= last {
                return Err(data_err(format!(
                    "memory store out of order: frame {frame_index} after {last} for {view:?}"
                )));
            }
        }
        self.entries.push(MemoryEntry { view, frame_index, key, value });
        if self.view_count(view) > self.capacity_per_view {
            // evict the oldest entry of this view that is not its first
            let mut seen_first = false;
            let victim = self
                .entries
                .iter()
                .position(|e| {
                    if e.view != view {
                        return false;
                    }
                    if !seen_first {
                        seen_first = true;
                        return false;
                    }
                    true
                })
                .expect("over-capacity view has a non-pinned entry");
            self.entries.remove(victim);
        }
        Ok(())
    }
}

struct ImageEncoder<E: Scalar> {
    downs: Vec<DownBlock<E>>, // stem(x2), d4->d8, d8->d16
    res: Vec<ResBlock<E>>,    // two per stage
}

impl<E: Scalar> ImageEncoder<E> {
    fn new(pb: &mut ParamBuilder<E>, d: &SegDims) -> Result<Self> {
        let stem = (d.d4 / 2).max(2);
        let downs = vec![
            DownBlock::new(pb, "img/d0", 3, stem)?,
            DownBlock::new(pb, "img/d1", stem, d.d4)?,
            DownBlock::new(pb, "img/d2", d.d4, d.d8)?,
            DownBlock::new(pb, "img/d3", d.d8, d.d16)?,
        ];
        let res = vec![
            ResBlock::new(pb, "img/r0", d.d4)?,
            ResBlock::new(pb, "img/r1", d.d4)?,
            ResBlock::new(pb, "img/r2", d.d8)?,
            ResBlock::new(pb, "img/r3", d.d8)?,
            ResBlock::new(pb, "img/r4", d.d16)?,
            ResBlock::new(pb, "img/r5", d.d16)?,
        ];
        Ok(ImageEncoder { downs, res })
    }

    fn forward(&self, frame: &Tensor<E>) -> Result<MultiScaleFeatures<E>> {
        let x = self.downs[0].forward(frame)?;
        let x = self.downs[1].forward(&x)?;
        let f4 = self.res[1].forward(&self.res[0].forward(&x)?)?;
        let x = self.downs[2].forward(&f4)?;
        let f8 = self.res[3].forward(&self.res[2].forward(&x)?)?;
        let x = self.downs[3].forward(&f8)?;
        let f16 = self.res[5].forward(&self.res[4].forward(&x)?)?;
        Ok(MultiScaleFeatures { f4, f8, f16 })
    }
}

struct MaskEncoder<E: Scalar> {
    downs: Vec<DownBlock<E>>,
    res: ResBlock<E>,
    cbam: Cbam<E>,
}

impl<E: Scalar> MaskEncoder<E> {
    fn new(pb: &mut ParamBuilder<E>, d: &SegDims) -> Result<Self> {
        let stem = (d.d4 / 2).max(2);
        Ok(MaskEncoder {
            downs: vec![
                DownBlock::new(pb, "mask/d0", 6, stem)?,
                DownBlock::new(pb, "mask/d1", stem, d.d4)?,
                DownBlock::new(pb, "mask/d2", d.d4, d.d8)?,
                DownBlock::new(pb, "mask/d3", d.d8, d.d16)?,
            ],
            res: ResBlock::new(pb, "mask/r0", d.d16)?,
            cbam: Cbam::new(pb, "mask/cbam", d.d16)?,
        })
    }

    fn forward(&self, frame: &Tensor<E>, mask_onehot: &Tensor<E>, image_f16: &Tensor<E>) -> Result<Tensor<E>> {
        let mut x = ops::concat(&[frame.clone(), mask_onehot.clone()], 1)?;
        for d in &self.downs {
            x = d.forward(&x)?;
        }
        let x = self.res.forward(&x)?;
        self.cbam.forward(image_f16, &x)
    }
}

struct DecoderBlock<E: Scalar> {
    conv1: Conv2d<E>,
    norm1: GroupNorm<E>,
    conv2: Conv2d<E>,
    norm2: GroupNorm<E>,
}

impl<E: Scalar> DecoderBlock<E> {
    fn new(pb: &mut ParamBuilder<E>, name: &str, cin: usize, cout: usize) -> Result<Self> {
        Ok(DecoderBlock {
            conv1: Conv2d::new(pb, &format!("{name}/conv1"), cin, cout, 3, 1, 1)?,
            norm1: GroupNorm::new(pb, &format!("{name}/gn1"), cout)?,
            conv2: Conv2d::new(pb, &format!("{name}/conv2"), cout, cout, 3, 1, 1)?,
            norm2: GroupNorm::new(pb, &format!("{name}/gn2"), cout)?,
        })
    }

    fn forward(&self, x: &Tensor<E>, skip: &Tensor<E>) -> Result<Tensor<E>> {
        let x = ops::concat(&[x.clone(), skip.clone()], 1)?;
        let x = self.norm1.forward(&self.conv1.forward(&x)?)?.relu()?;
        Ok(self.norm2.forward(&self.conv2.forward(&x)?)?.relu()?)
    }
}

struct Decoder<E: Scalar> {
    b16: DecoderBlock<E>,
    b8: DecoderBlock<E>,
    b4: DecoderBlock<E>,
    head: Conv2d<E>,
}

impl<E: Scalar> Decoder<E> {
    fn new(pb: &mut ParamBuilder<E>, d: &SegDims) -> Result<Self> {
        Ok(Decoder {
            b16: DecoderBlock::new(pb, "dec/b16", d.dv + d.d16, d.d8)?,
            b8: DecoderBlock::new(pb, "dec/b8", d.d8 + d.d8, d.d4)?,
            b4: DecoderBlock::new(pb, "dec/b4", d.d4 + d.d4, d.d4)?,
            head: Conv2d::new(pb, "dec/head", d.d4, 3, 1, 1, 0)?,
        })
    }

    fn forward(&self, zpp: &Tensor<E>, feats: &MultiScaleFeatures<E>) -> Result<Tensor<E>> {
        let x = self.b16.forward(zpp, &feats.f16)?.upsample_bilinear2x()?;
        let x = self.b8.forward(&x, &feats.f8)?.upsample_bilinear2x()?;
        let x = self.b4.forward(&x, &feats.f4)?;
        // logits at stride 4, then a final 4x bilinear upsample to full size
        let x = self.head.forward(&x)?;
        Ok(x.upsample_bilinear2x()?.upsample_bilinear2x()?)
    }
}

pub struct SegNet<E: Scalar> {
    pub dims: SegDims,
    params: ParamSet<E>,
    img: ImageEncoder<E>,
    mask: MaskEncoder<E>,
    wq: Tensor<E>,
    wk: Tensor<E>,
    wv: Tensor<E>,
    wout: Tensor<E>,
    dec: Decoder<E>,
}

impl<E: Scalar> SegNet<E> {
    fn build(dims: SegDims, mut pb: ParamBuilder<E>) -> Result<Self> {
        let img = ImageEncoder::new(&mut pb, &dims)?;
        let mask = MaskEncoder::new(&mut pb, &dims)?;
        let wq = pb.tensor("attn/wq", &[dims.dk, dims.d16], Init::Kaiming { fan_in: dims.d16 })?;
        let wk = pb.tensor("attn/wk", &[dims.dk, dims.d16], Init::Kaiming { fan_in: dims.d16 })?;
        let wv = pb.tensor("attn/wv", &[dims.dv, dims.d16], Init::Kaiming { fan_in: dims.d16 })?;
        let wout = pb.tensor("attn/wout", &[dims.dv, dims.dv], Init::Kaiming { fan_in: dims.dv })?;
        let dec = Decoder::new(&mut pb, &dims)?;
        let params = pb.finish()?;
        Ok(SegNet { dims, params, img, mask, wq, wk, wv, wout, dec })
    }

    pub fn new(dims: SegDims, seed: u64) -> Result<Self> {
        Self::build(dims, ParamBuilder::init(rng_salt(seed)))
    }

    pub fn from_params(dims: SegDims, params: ParamSet<E>) -> Result<Self> {
        Self::build(dims, ParamBuilder::load(params))
    }

    pub fn params(&self) -> &ParamSet<E> {
        &self.params
    }

    /// Copy whose parameters are constants: inference records no tape.
    pub fn frozen_clone(&self) -> Result<Self> {
        Self::from_params(self.dims, self.params.detached())
    }

    pub fn new_bank(&self) -> MemoryBank<E> {
        MemoryBank::new(self.dims.capacity_per_view)
    }

    /// Shared multi-scale encoder; `frame` is `[1,3,H,W]` with `H, W`
    /// divisible by 16.
    pub fn encode_image(&self, frame: &Tensor<E>) -> Result<MultiScaleFeatures<E>> {
        match *frame.shape() {
            [1, 3, h, w] if h % 16 == 0 && w % 16 == 0 && h >= 16 && w >= 16 => {}
            _ => {
                return Err(data_err(format!(
                    "encode_image expects [1,3,H,W] with H,W divisible by 16, got {:?}",
                    frame.shape()
                )))
            }
        }
        self.img.forward(frame)
    }

    /// Frame+mask value feature at stride 16, CBAM-fused with the image
    /// feature of the same frame.
    pub fn encode_mask(
        &self,
        frame: &Tensor<E>,
        mask_onehot: &Tensor<E>,
        image_f16: &Tensor<E>,
    ) -> Result<Tensor<E>> {
        self.mask.forward(frame, mask_onehot, image_f16)
    }

    fn project(&self, w: &Tensor<E>, feat: &Tensor<E>) -> Result<Tensor<E>> {
        let [_, c, h, wd] = match *feat.shape() {
            [1, c, h, w] => [1, c, h, w],
            _ => return Err(data_err("projection expects [1,C,h,w]")),
        };
        let out_c = w.shape()[0];
        let flat = feat.reshape(&[c, h * wd])?;
        Ok(w.matmul(&flat)?.reshape(&[1, out_c, h, wd])?)
    }

    /// Project and append one entry; evicts per the pin-first FIFO rule.
    pub fn memory_store(
        &self,
        bank: &mut MemoryBank<E>,
        view: View,
        frame_index: usize,
        image_f16: &Tensor<E>,
        value_feature: &Tensor<E>,
    ) -> Result<()> {
        let key = self.project(&self.wk, image_f16)?;
        let value = self.project(&self.wv, value_feature)?;
        bank.store(view, frame_index, key, value)
    }

    /// Memory attention readout for one query feature map.
    ///
    /// Per spatial location, logits are `Q·K_e / sqrt(Dk)` against every
    /// stored entry's key at that location; the softmax normalizes across
    /// entries; the value average is projected by `W_out`.
    pub fn memory_read(&self, query_f16: &Tensor<E>, bank: &MemoryBank<E>) -> Result<Tensor<E>> {
        if bank.is_empty() {
            return Err(data_err("memory_read on an empty bank"));
        }
        let q = self.project(&self.wq, query_f16)?; // [1, Dk, h, w]
        let [_, dk, h, w] = match *q.shape() {
            [1, dk, h, w] => [1, dk, h, w],
            _ => unreachable!(),
        };
        let hw = h * w;
        let t = bank.len();
        let keys: Vec<Tensor<E>> = bank
            .entries()
            .iter()
            .map(|e| e.key.reshape(&[1, dk, hw]))
            .collect::<crossview_tensor::Result<_>>()?;
        let k = ops::concat(&keys, 0)?; // [T, Dk, hw]
        let q1 = q.reshape(&[1, dk, hw])?;
        let logits = k
            .mul(&q1)?
            .sum_axis(1, false)?
            .scale(1.0 / (dk as f64).sqrt())?; // [T, hw]
        let attn = logits.softmax(0)?;

        let dv = self.dims.dv;
        let vals: Vec<Tensor<E>> = bank
            .entries()
            .iter()
            .map(|e| e.value.reshape(&[1, dv, hw]))
            .collect::<crossview_tensor::Result<_>>()?;
        let v = ops::concat(&vals, 0)?; // [T, Dv, hw]
        let a1 = attn.reshape(&[t, 1, hw])?;
        let z = v.mul(&a1)?.sum_axis(0, false)?; // [Dv, hw]
        Ok(self.wout.matmul(&z)?.reshape(&[1, dv, h, w])?)
    }

    /// Attention weights over entries (`[T, h*w]`), for diagnostics/tests.
    pub fn attention_weights(&self, query_f16: &Tensor<E>, bank: &MemoryBank<E>) -> Result<Tensor<E>> {
        if bank.is_empty() {
            return Err(data_err("attention_weights on an empty bank"));
        }
        let q = self.project(&self.wq, query_f16)?;
        let [_, dk, h, w] = match *q.shape() {
            [1, dk, h, w] => [1, dk, h, w],
            _ => unreachable!(),
        };
        let hw = h * w;
        let keys: Vec<Tensor<E>> = bank
            .entries()
            .iter()
            .map(|e| e.key.reshape(&[1, dk, hw]))
            .collect::<crossview_tensor::Result<_>>()?;
        let k = ops::concat(&keys, 0)?;
        let q1 = q.reshape(&[1, dk, hw])?;
        let logits = k.mul(&q1)?.sum_axis(1, false)?.scale(1.0 / (dk as f64).sqrt())?;
        Ok(logits.softmax(0)?)
    }

    /// Decode 3-class logits `[3,H,W]` from the blended readout and ego skip
    /// features.
    pub fn decode_mask(&self, zpp: &Tensor<E>, feats: &MultiScaleFeatures<E>) -> Result<Tensor<E>> {
        let out = self.dec.forward(zpp, feats)?;
        let [_, c, h, w] = match *out.shape() {
            [1, c, h, w] => [1, c, h, w],
            _ => unreachable!(),
        };
        Ok(out.reshape(&[c, h, w])?)
    }

    /// One auto-regressive step. Stores the exo entry (so the current exo
    /// frame can attend to itself), reads memory with exo and ego queries,
    /// blends, decodes ego logits, re-encodes the mask used as the ego value
    /// (the hard argmax prediction unless a teacher mask is supplied), and
    /// stores the ego entry.
    #[allow(clippy::too_many_arguments)]
    pub fn predict_step(
        &self,
        bank: &mut MemoryBank<E>,
        frame_index: usize,
        exo_frame: &Tensor<E>,
        exo_mask_onehot: &Tensor<E>,
        ego_frame: &Tensor<E>,
        alpha: f64,
        ego_value_mask: Option<&Tensor<E>>,
    ) -> Result<Tensor<E>> {
        let xf = self.encode_image(exo_frame)?;
        let mx = self.encode_mask(exo_frame, exo_mask_onehot, &xf.f16)?;
        self.memory_store(bank, View::Exo, frame_index, &xf.f16, &mx)?;

        let gf = self.encode_image(ego_frame)?;
        let z_exo = self.memory_read(&xf.f16, bank)?;
        let z_ego = self.memory_read(&gf.f16, bank)?;
        let zpp = blend(&z_exo, &z_ego, alpha)?;
        let logits = self.decode_mask(&zpp, &gf)?;

        let res = logits.shape()[1];
        let value_onehot = match ego_value_mask {
            Some(m) => m.clone(),
            None => onehot_tensor::<E>(&argmax_mask(&logits, 3, res), res, 3)?,
        };
        let mg = self.encode_mask(ego_frame, &value_onehot, &gf.f16)?;
        self.memory_store(bank, View::Ego, frame_index, &gf.f16, &mg)?;
        Ok(logits)
    }

    /// Inference over a clip given only the first ego frame: frame 1 runs
    /// with the real `g1` and `alpha = 1`; later frames use zero ego images
    /// and `alpha = 0`, feeding each prediction back through the bank.
    pub fn rollout(&self, exo: &Clip, exo_masks: &MaskClip, g1: &[f32]) -> Result<MaskClip> {
        let (n, res) = (exo.frames, exo.res);
        if exo_masks.frames != n || exo_masks.res != res {
            return Err(data_err("rollout: exo clip and masks disagree"));
        }
        if g1.len() != 3 * res * res {
            return Err(data_err("rollout: first ego frame has the wrong size"));
        }
        let mut bank = self.new_bank();
        let mut out = MaskClip::new(n, res);
        let zero_ego = Tensor::<E>::zeros(&[1, 3, res, res]);
        for i in 0..n {
            let exo_t = tensor_from_f32::<E>(&[1, 3, res, res], exo.frame(i))?;
            let exo_m = onehot_tensor::<E>(exo_masks.frame(i), res, 3)?;
            let (ego_t, alpha) = if i == 0 {
                (tensor_from_f32::<E>(&[1, 3, res, res], g1)?, 1.0)
            } else {
                (zero_ego.clone(), 0.0)
            };
            let logits = self.predict_step(&mut bank, i, &exo_t, &exo_m, &ego_t, alpha, None)?;
            out.frame_mut(i).copy_from_slice(&argmax_mask(&logits, 3, res));
        }
        Ok(out)
    }
}

impl SegNet<f32> {
    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let mut c = Container::new();
        c.insert_f32("seg/meta", &[6], self.dims.to_meta())?;
        self.params.store(&mut c, "seg/")?;
        c.write_to(path)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<std::path::Path>, trainable: bool) -> Result<Self> {
        let c = Container::read_from(path)?;
        let (_, meta) = c.require_f32("seg/meta")?;
        let dims = SegDims::from_meta(meta)?;
        let mut set = ParamSet::load(&c, "seg/", trainable)?;
        // meta rides in the same namespace; it is not a parameter
        let mut params = ParamSet::new();
        for name in set.names().map(String::from).collect::<Vec<_>>() {
            if name != "meta" {
                params.insert(&name, set.get(&name)?)?;
            }
        }
        set = params;
        Self::from_params(dims, set)
    }
}

fn rng_salt(seed: u64) -> u64 {
    crossview_tensor::rng::mix(seed, "segnet")
}

/// `Z'' = alpha * Z' + (1 - alpha) * Z` with bitwise pass-through endpoints;
/// `z_from_ego_query` is `Z'`, `z_from_exo_query` is `Z`.
pub fn blend<E: Scalar>(
    z_from_exo_query: &Tensor<E>,
    z_from_ego_query: &Tensor<E>,
    alpha: f64,
) -> Result<Tensor<E>> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(data_err(format!("blend alpha {alpha} outside [0,1]")));
    }
    if z_from_exo_query.shape() != z_from_ego_query.shape() {
        return Err(data_err("blend inputs must have equal shapes"));
    }
    if alpha == 0.0 {
        Ok(z_from_exo_query.clone())
    } else if alpha == 1.0 {
        Ok(z_from_ego_query.clone())
    } else {
        Ok(z_from_ego_query
            .scale(alpha)?
            .add(&z_from_exo_query.scale(1.0 - alpha)?)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{generate_sample, ActionId};

    fn tiny_dims() -> SegDims {
        SegDims { d4: 8, d8: 8, d16: 8, dk: 8, dv: 8, capacity_per_view: 6 }
    }

    fn tiny_net() -> SegNet<f32> {
        SegNet::new(tiny_dims(), 0).unwrap()
    }

    #[test]
    fn encoder_shapes() {
        let net = SegNet::<f32>::new(SegDims::default(), 0).unwrap();
        let frame = Tensor::<f32>::zeros(&[1, 3, 32, 32]);
        let f = net.encode_image(&frame).unwrap();
        assert_eq!(f.f4.shape(), &[1, 32, 8, 8]);
        assert_eq!(f.f8.shape(), &[1, 64, 4, 4]);
        assert_eq!(f.f16.shape(), &[1, 96, 2, 2]);
    }

    #[test]
    fn encoder_deterministic_and_finite_on_zero() {
        let net = tiny_net();
        let frame = Tensor::<f32>::zeros(&[1, 3, 32, 32]);
        let a = net.encode_image(&frame).unwrap();
        let b = net.encode_image(&frame).unwrap();
        assert_eq!(a.f16.to_vec(), b.f16.to_vec());
    }

    #[test]
    fn encode_image_rejects_bad_divisibility() {
        let net = tiny_net();
        let frame = Tensor::<f32>::zeros(&[1, 3, 24, 24]);
        assert!(net.encode_image(&frame).is_err());
    }

    #[test]
    fn mask_channel_reaches_value_feature() {
        let net = tiny_net();
        let s = generate_sample(1, ActionId::Stir, 2, 32).unwrap();
        let frame = tensor_from_f32::<f32>(&[1, 3, 32, 32], s.exo.frame(0)).unwrap();
        let f = net.encode_image(&frame).unwrap();
        let bg = onehot_tensor::<f32>(&vec![0u8; 32 * 32], 32, 3).unwrap();
        let hand = onehot_tensor::<f32>(&vec![1u8; 32 * 32], 32, 3).unwrap();
        let a = net.encode_mask(&frame, &bg, &f.f16).unwrap();
        let b = net.encode_mask(&frame, &hand, &f.f16).unwrap();
        assert_ne!(a.to_vec(), b.to_vec());
    }

    #[test]
    fn memory_bank_pin_and_fifo() {
        let net = tiny_net();
        let mut bank = net.new_bank();
        let f16 = Tensor::<f32>::ones(&[1, 8, 2, 2]);
        for frame in 1..=8 {
            net.memory_store(&mut bank, View::Exo, frame, &f16, &f16).unwrap();
        }
        assert_eq!(bank.frames_of(View::Exo), vec![1, 4, 5, 6, 7, 8]);
        // ego stores do not evict exo entries
        for frame in 1..=8 {
            net.memory_store(&mut bank, View::Ego, frame, &f16, &f16).unwrap();
        }
        assert_eq!(bank.frames_of(View::Exo), vec![1, 4, 5, 6, 7, 8]);
        assert_eq!(bank.frames_of(View::Ego), vec![1, 4, 5, 6, 7, 8]);
    }

    #[test]
    fn memory_bank_rejects_out_of_order() {
        let net = tiny_net();
        let mut bank = net.new_bank();
        let f16 = Tensor::<f32>::ones(&[1, 8, 2, 2]);
        net.memory_store(&mut bank, View::Exo, 3, &f16, &f16).unwrap();
        assert!(net.memory_store(&mut bank, View::Exo, 3, &f16, &f16).is_err());
    }

    #[test]
    fn singleton_bank_attention_is_identity_weight() {
        let net = tiny_net();
        let mut bank = net.new_bank();
        let mut r = crossview_tensor::rng::stream(2, "seg-attn");
        let f16 = crossview_tensor::rng::normal_tensor::<f32>(&mut r, &[1, 8, 2, 2], 1.0).unwrap();
        let val = crossview_tensor::rng::normal_tensor::<f32>(&mut r, &[1, 8, 2, 2], 1.0).unwrap();
        net.memory_store(&mut bank, View::Exo, 1, &f16, &val).unwrap();
        let w = net.attention_weights(&f16, &bank).unwrap();
        assert!(w.to_vec().iter().all(|&v| (v - 1.0).abs() < 1e-6));

        // Z equals Wout^T (Wv^T value) exactly when the bank has one entry
        let z = net.memory_read(&f16, &bank).unwrap();
        let vproj = net.project(&net.wv, &val).unwrap();
        let expect = net
            .project(&net.wout, &vproj)
            .unwrap();
        for (a, b) in z.to_vec().iter().zip(expect.to_vec()) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn duplicate_keys_split_attention_evenly() {
        let net = tiny_net();
        let mut bank = net.new_bank();
        let mut r = crossview_tensor::rng::stream(5, "seg-attn2");
        let f16 = crossview_tensor::rng::normal_tensor::<f32>(&mut r, &[1, 8, 2, 2], 1.0).unwrap();
        let v1 = crossview_tensor::rng::normal_tensor::<f32>(&mut r, &[1, 8, 2, 2], 1.0).unwrap();
        let v2 = crossview_tensor::rng::normal_tensor::<f32>(&mut r, &[1, 8, 2, 2], 1.0).unwrap();
        net.memory_store(&mut bank, View::Exo, 1, &f16, &v1).unwrap();
        net.memory_store(&mut bank, View::Exo, 2, &f16, &v2).unwrap();
        let w = net.attention_weights(&f16, &bank).unwrap();
        assert!(w.to_vec().iter().all(|&v| (v - 0.5).abs() < 1e-6));
    }

    #[test]
    fn attention_weights_normalize_with_mixed_entries() {
        let net = tiny_net();
        let mut bank = net.new_bank();
        let mut r = crossview_tensor::rng::stream(9, "seg-attn3");
        for frame in 1..=4 {
            let k = crossview_tensor::rng::normal_tensor::<f32>(&mut r, &[1, 8, 2, 2], 1.0).unwrap();
            let v = crossview_tensor::rng::normal_tensor::<f32>(&mut r, &[1, 8, 2, 2], 1.0).unwrap();
            net.memory_store(&mut bank, View::Exo, frame, &k, &v).unwrap();
        }
        let q = crossview_tensor::rng::normal_tensor::<f32>(&mut r, &[1, 8, 2, 2], 1.0).unwrap();
        let w = net.attention_weights(&q, &bank).unwrap();
        let v = w.to_vec();
        for p in 0..4 {
            let s: f32 = (0..4).map(|t| v[t * 4 + p]).sum();
            assert!((s - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn blend_endpoints_bitwise() {
        let a = Tensor::<f32>::from_vec(&[2], vec![1.25, -3.5]).unwrap();
        let b = Tensor::<f32>::from_vec(&[2], vec![0.5, 2.0]).unwrap();
        assert_eq!(blend(&a, &b, 0.0).unwrap().to_vec(), a.to_vec());
        assert_eq!(blend(&a, &b, 1.0).unwrap().to_vec(), b.to_vec());
        let z = Tensor::<f32>::zeros(&[2]);
        let half = blend(&z, &b, 0.5).unwrap();
        assert_eq!(half.to_vec(), vec![0.25, 1.0]);
        assert!(blend(&a, &b, 1.5).is_err());
    }

    #[test]
    fn decode_shapes_and_mask_range() {
        let net = tiny_net();
        let s = generate_sample(3, ActionId::PushLeft, 2, 32).unwrap();
        let g1 = tensor_from_f32::<f32>(&[1, 3, 32, 32], s.ego.frame(0)).unwrap();
        let feats = net.encode_image(&g1).unwrap();
        let zpp = Tensor::<f32>::zeros(&[1, 8, 2, 2]);
        let logits = net.decode_mask(&zpp, &feats).unwrap();
        assert_eq!(logits.shape(), &[3, 32, 32]);
        let mask = argmax_mask(&logits, 3, 32);
        assert!(mask.iter().all(|&v| v <= 2));
    }

    #[test]
    fn predict_step_bookkeeping() {
        let net = tiny_net();
        let s = generate_sample(4, ActionId::PickUp, 3, 32).unwrap();
        let mut bank = net.new_bank();
        for i in 0..3 {
            let exo = tensor_from_f32::<f32>(&[1, 3, 32, 32], s.exo.frame(i)).unwrap();
            let exom = onehot_tensor::<f32>(s.exo_masks.frame(i), 32, 3).unwrap();
            let ego = tensor_from_f32::<f32>(&[1, 3, 32, 32], s.ego.frame(i)).unwrap();
            let before_exo = bank.view_count(View::Exo);
            let before_ego = bank.view_count(View::Ego);
            net.predict_step(&mut bank, i, &exo, &exom, &ego, 0.5, None).unwrap();
            assert_eq!(bank.view_count(View::Exo), before_exo + 1);
            assert_eq!(bank.view_count(View::Ego), before_ego + 1);
        }
    }

    #[test]
    fn rollout_is_deterministic_and_valid() {
        let net = tiny_net();
        let s = generate_sample(8, ActionId::PushRight, 4, 32).unwrap();
        let a = net.rollout(&s.exo, &s.exo_masks, s.ego.frame(0)).unwrap();
        let b = net.rollout(&s.exo, &s.exo_masks, s.ego.frame(0)).unwrap();
        assert_eq!(a.data, b.data);
        a.validate("rollout").unwrap();
        assert_eq!(a.frames, 4);
    }

    #[test]
    fn rollout_single_frame() {
        let net = tiny_net();
        let s = generate_sample(2, ActionId::Idle, 2, 32).unwrap();
        let exo = Clip { frames: 1, res: 32, data: s.exo.frame(0).to_vec() };
        let masks = MaskClip { frames: 1, res: 32, data: s.exo_masks.frame(0).to_vec() };
        let out = net.rollout(&exo, &masks, s.ego.frame(0)).unwrap();
        assert_eq!(out.frames, 1);
    }

    #[test]
    fn checkpoint_roundtrip_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("seg.exgn");
        let net = tiny_net();
        net.save(&path).unwrap();
        let back = SegNet::<f32>::load(&path, true).unwrap();
        assert_eq!(net.params().content_hash(), back.params().content_hash());
        assert_eq!(back.dims, tiny_dims());
    }
}
