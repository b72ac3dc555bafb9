//! Layer building blocks shared by the segmentation and diffusion networks.
//!
//! Parameters are created through a [`ParamBuilder`] which either initializes
//! them (Kaiming-uniform weights, zero biases, seeded per parameter name so
//! construction order is irrelevant) or fetches them from a loaded
//! checkpoint, verifying shapes and rejecting leftovers.

use crossview_tensor::ops;
use crossview_tensor::rng;
use crossview_tensor::{ParamSet, PoolKind, Scalar, Tensor};

use crate::error::{data_err, Result};

pub enum Init {
    Kaiming { fan_in: usize },
    Zeros,
    Ones,
    Normal { std: f64 },
}

enum Mode<E: Scalar> {
    Fresh { seed: u64, trainable: bool },
    Load { source: ParamSet<E>, consumed: usize },
}

pub struct ParamBuilder<E: Scalar> {
    mode: Mode<E>,
    out: ParamSet<E>,
}

impl<E: Scalar> ParamBuilder<E> {
    pub fn init(seed: u64) -> Self {
        ParamBuilder { mode: Mode::Fresh { seed, trainable: true }, out: ParamSet::new() }
    }

    /// Initialize constants instead of trainable parameters (used for models
    /// that are built to be frozen from the start).
    pub fn init_frozen(seed: u64) -> Self {
        ParamBuilder { mode: Mode::Fresh { seed, trainable: false }, out: ParamSet::new() }
    }

    pub fn load(source: ParamSet<E>) -> Self {
        ParamBuilder { mode: Mode::Load { source, consumed: 0 }, out: ParamSet::new() }
    }

    pub fn tensor(&mut self, name: &str, shape: &[usize], init: Init) -> Result<Tensor<E>> {
        let t = match &mut self.mode {
            Mode::Fresh { seed, trainable } => {
                let mut r = rng::stream(*seed, name);
                let t = match init {
                    Init::Kaiming { fan_in } => rng::kaiming_uniform::<E>(&mut r, shape, fan_in)?,
                    Init::Zeros => Tensor::param(shape, vec![E::ZERO; shape.iter().product()])?,
                    Init::Ones => Tensor::param(shape, vec![E::ONE; shape.iter().product()])?,
                    Init::Normal { std } => {
                        let n: usize = shape.iter().product();
                        let data = rng::normal_vec(&mut r, n)
                            .into_iter()
                            .map(|v| E::from_f64(v * std))
                            .collect();
                        Tensor::param(shape, data)?
                    }
                };
                if *trainable {
                    t
                } else {
                    t.detach()
                }
            }
            Mode::Load { source, consumed } => {
                let t = source.get(name)?;
                if t.shape() != shape {
                    return Err(data_err(format!(
                        "checkpoint parameter {name:?}: shape {:?}, expected {shape:?}",
                        t.shape()
                    )));
                }
                *consumed += 1;
                t
            }
        };
        self.out.insert(name, t.clone())?;
        Ok(t)
    }

    /// Final parameter set; in load mode every checkpoint entry must have
    /// been consumed.
    pub fn finish(self) -> Result<ParamSet<E>> {
        if let Mode::Load { source, consumed } = &self.mode {
            if *consumed != source.len() {
                let unused = source
                    .names()
                    .find(|n| !self.out.contains(n))
                    .unwrap_or("<unknown>")
                    .to_string();
                return Err(data_err(format!("checkpoint has unused parameter {unused:?}")));
            }
        }
        Ok(self.out)
    }
}

/// Group count rule: 8 groups, or C when C < 8.
pub fn groups_for(c: usize) -> usize {
    if c < 8 {
        c
    } else {
        8
    }
}

pub struct Conv2d<E: Scalar> {
    w: Tensor<E>,
    b: Tensor<E>,
    stride: usize,
    pad: usize,
}

impl<E: Scalar> Conv2d<E> {
    pub fn new(
        pb: &mut ParamBuilder<E>,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        pad: usize,
    ) -> Result<Self> {
        Ok(Conv2d {
            w: pb.tensor(&format!("{name}/w"), &[cout, cin, k, k], Init::Kaiming { fan_in: cin * k * k })?,
            b: pb.tensor(&format!("{name}/b"), &[cout], Init::Zeros)?,
            stride,
            pad,
        })
    }

    /// 1x1 projection initialized to exactly zero (identity-preserving fusion).
    pub fn new_zero_1x1(pb: &mut ParamBuilder<E>, name: &str, cin: usize, cout: usize) -> Result<Self> {
        Ok(Conv2d {
            w: pb.tensor(&format!("{name}/w"), &[cout, cin, 1, 1], Init::Zeros)?,
            b: pb.tensor(&format!("{name}/b"), &[cout], Init::Zeros)?,
            stride: 1,
            pad: 0,
        })
    }

    /// Zero-initialized conv: residual branches start as the identity, which
    /// removes the slow early plateau of deep denoisers.
    pub fn new_zero(
        pb: &mut ParamBuilder<E>,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        pad: usize,
    ) -> Result<Self> {
        Ok(Conv2d {
            w: pb.tensor(&format!("{name}/w"), &[cout, cin, k, k], Init::Zeros)?,
            b: pb.tensor(&format!("{name}/b"), &[cout], Init::Zeros)?,
            stride,
            pad,
        })
    }

    pub fn forward(&self, x: &Tensor<E>) -> Result<Tensor<E>> {
        Ok(x.conv2d(&self.w, &self.b, self.stride, self.pad)?)
    }
}

pub struct Linear<E: Scalar> {
    w: Tensor<E>, // [in, out]
    b: Option<Tensor<E>>,
}

impl<E: Scalar> Linear<E> {
    pub fn new(pb: &mut ParamBuilder<E>, name: &str, din: usize, dout: usize, bias: bool) -> Result<Self> {
        Ok(Linear {
            w: pb.tensor(&format!("{name}/w"), &[din, dout], Init::Kaiming { fan_in: din })?,
            b: if bias {
                Some(pb.tensor(&format!("{name}/b"), &[dout], Init::Zeros)?)
            } else {
                None
            },
        })
    }

    /// Zero-initialized projection (residual attention outputs).
    pub fn new_zero(pb: &mut ParamBuilder<E>, name: &str, din: usize, dout: usize, bias: bool) -> Result<Self> {
        Ok(Linear {
            w: pb.tensor(&format!("{name}/w"), &[din, dout], Init::Zeros)?,
            b: if bias {
                Some(pb.tensor(&format!("{name}/b"), &[dout], Init::Zeros)?)
            } else {
                None
            },
        })
    }

    /// `[.., din] -> [.., dout]`
    pub fn forward(&self, x: &Tensor<E>) -> Result<Tensor<E>> {
        let y = x.matmul(&self.w)?;
        match &self.b {
            Some(b) => Ok(y.add(b)?),
            None => Ok(y),
        }
    }
}

pub struct GroupNorm<E: Scalar> {
    gamma: Tensor<E>,
    beta: Tensor<E>,
    groups: usize,
}

impl<E: Scalar> GroupNorm<E> {
    pub fn new(pb: &mut ParamBuilder<E>, name: &str, c: usize) -> Result<Self> {
        Ok(GroupNorm {
            gamma: pb.tensor(&format!("{name}/g"), &[c], Init::Ones)?,
            beta: pb.tensor(&format!("{name}/b"), &[c], Init::Zeros)?,
            groups: groups_for(c),
        })
    }

    pub fn forward(&self, x: &Tensor<E>) -> Result<Tensor<E>> {
        Ok(x.group_norm(self.groups, &self.gamma, &self.beta, 1e-5)?)
    }
}

/// 2x average pooling + conv + group norm + ReLU: one downsampling step.
/// Pooling first keeps the conv cost at output resolution, like a strided
/// conv with an anti-aliasing prefilter.
pub struct DownBlock<E: Scalar> {
    conv: Conv2d<E>,
    norm: GroupNorm<E>,
}

impl<E: Scalar> DownBlock<E> {
    pub fn new(pb: &mut ParamBuilder<E>, name: &str, cin: usize, cout: usize) -> Result<Self> {
        Ok(DownBlock {
            conv: Conv2d::new(pb, &format!("{name}/conv"), cin, cout, 3, 1, 1)?,
            norm: GroupNorm::new(pb, &format!("{name}/gn"), cout)?,
        })
    }

    pub fn forward(&self, x: &Tensor<E>) -> Result<Tensor<E>> {
        let x = x.pool(PoolKind::Avg, 2, 2)?;
        Ok(self.norm.forward(&self.conv.forward(&x)?)?.relu()?)
    }
}

/// Two-conv residual block with ReLU, same width in and out.
pub struct ResBlock<E: Scalar> {
    conv1: Conv2d<E>,
    norm1: GroupNorm<E>,
    conv2: Conv2d<E>,
    norm2: GroupNorm<E>,
}

impl<E: Scalar> ResBlock<E> {
    pub fn new(pb: &mut ParamBuilder<E>, name: &str, c: usize) -> Result<Self> {
        Ok(ResBlock {
            conv1: Conv2d::new(pb, &format!("{name}/conv1"), c, c, 3, 1, 1)?,
            norm1: GroupNorm::new(pb, &format!("{name}/gn1"), c)?,
            conv2: Conv2d::new(pb, &format!("{name}/conv2"), c, c, 3, 1, 1)?,
            norm2: GroupNorm::new(pb, &format!("{name}/gn2"), c)?,
        })
    }

    pub fn forward(&self, x: &Tensor<E>) -> Result<Tensor<E>> {
        let h = self.norm1.forward(&self.conv1.forward(x)?)?.relu()?;
        let h = self.norm2.forward(&self.conv2.forward(&h)?)?;
        Ok(h.add(x)?.relu()?)
    }
}

/// Channel-then-spatial attention gate, applied to the sum of two feature
/// maps of equal width.
pub struct Cbam<E: Scalar> {
    mlp1: Linear<E>,
    mlp2: Linear<E>,
    spatial: Conv2d<E>,
}

impl<E: Scalar> Cbam<E> {
    pub fn new(pb: &mut ParamBuilder<E>, name: &str, c: usize) -> Result<Self> {
        let hidden = (c / 4).max(1);
        Ok(Cbam {
            mlp1: Linear::new(pb, &format!("{name}/mlp1"), c, hidden, true)?,
            mlp2: Linear::new(pb, &format!("{name}/mlp2"), hidden, c, true)?,
            spatial: Conv2d::new(pb, &format!("{name}/spatial"), 2, 1, 7, 1, 3)?,
        })
    }

    pub fn forward(&self, a: &Tensor<E>, b: &Tensor<E>) -> Result<Tensor<E>> {
        let s = a.add(b)?;
        let [n, c, h, w] = match *s.shape() {
            [n, c, h, w] => [n, c, h, w],
            _ => return Err(data_err("cbam expects [B,C,H,W] inputs")),
        };
        // channel attention over pooled descriptors, shared MLP
        let flat = s.reshape(&[n, c, h * w])?;
        let avg = flat.mean_axis(2, false)?; // [n, c]
        let max = flat.max_axis(2, false)?;
        let gate = self
            .mlp2
            .forward(&self.mlp1.forward(&avg)?.relu()?)?
            .add(&self.mlp2.forward(&self.mlp1.forward(&max)?.relu()?)?)?
            .sigmoid()?
            .reshape(&[n, c, 1, 1])?;
        let s1 = s.mul(&gate)?;
        // spatial attention over channel-wise statistics
        let ch_avg = s1.mean_axis(1, true)?;
        let ch_max = s1.max_axis(1, true)?;
        let stat = ops::concat(&[ch_avg, ch_max], 1)?;
        let gate2 = self.spatial.forward(&stat)?.sigmoid()?;
        Ok(s1.mul(&gate2)?)
    }
}

/// Constant tensor from f32 slice data, in any scalar precision.
pub fn tensor_from_f32<E: Scalar>(shape: &[usize], data: &[f32]) -> Result<Tensor<E>> {
    Ok(Tensor::from_vec(
        shape,
        data.iter().map(|&v| E::from_f64(v as f64)).collect(),
    )?)
}

/// One-hot class planes `[1, classes, res, res]` from a class-id mask.
pub fn onehot_tensor<E: Scalar>(mask: &[u8], res: usize, classes: usize) -> Result<Tensor<E>> {
    let mut data = vec![E::ZERO; classes * res * res];
    for (p, &v) in mask.iter().enumerate() {
        data[(v as usize) * res * res + p] = E::ONE;
    }
    Ok(Tensor::from_vec(&[1, classes, res, res], data)?)
}

/// Per-pixel argmax over class logits `[classes, res, res]`; ties break
/// toward the lower class id.
pub fn argmax_mask<E: Scalar>(logits: &Tensor<E>, classes: usize, res: usize) -> Vec<u8> {
    let v = logits.data();
    let plane = res * res;
    (0..plane)
        .map(|p| {
            let mut best = v[p];
            let mut cls = 0u8;
            for c in 1..classes {
                let val = v[c * plane + p];
                if val > best {
                    best = val;
                    cls = c as u8;
                }
            }
            cls
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn param_names_seed_independently_of_order() {
        let mut a = ParamBuilder::<f32>::init(3);
        let w1 = a.tensor("x/w", &[4, 4], Init::Kaiming { fan_in: 4 }).unwrap();
        let _ = a.tensor("y/w", &[4, 4], Init::Kaiming { fan_in: 4 }).unwrap();

        let mut b = ParamBuilder::<f32>::init(3);
        let _ = b.tensor("y/w", &[4, 4], Init::Kaiming { fan_in: 4 }).unwrap();
        let w2 = b.tensor("x/w", &[4, 4], Init::Kaiming { fan_in: 4 }).unwrap();
        assert_eq!(w1.to_vec(), w2.to_vec());
    }

    #[test]
    fn load_rejects_leftover_entries() {
        let mut pb = ParamBuilder::<f32>::init(0);
        pb.tensor("a", &[2], Init::Zeros).unwrap();
        pb.tensor("b", &[2], Init::Zeros).unwrap();
        let set = pb.finish().unwrap();

        let mut loader = ParamBuilder::load(set);
        loader.tensor("a", &[2], Init::Zeros).unwrap();
        assert!(loader.finish().is_err());
    }

    #[test]
    fn cbam_gates_are_half_with_zero_mlp() {
        let mut pb = ParamBuilder::<f32>::init(0);
        let cbam = Cbam::new(&mut pb, "c", 4).unwrap();
        let set = pb.finish().unwrap();
        // zero all weights: gates become sigmoid(0) = 0.5 twice -> scale 0.25
        for t in set.tensors() {
            t.set_data(&vec![0.0; t.numel()]).unwrap();
        }
        let a = Tensor::<f32>::full(&[1, 4, 4, 4], 1.0);
        let b = Tensor::<f32>::full(&[1, 4, 4, 4], 1.0);
        let y = cbam.forward(&a, &b).unwrap();
        for &v in y.data().iter() {
            assert!((v - 2.0 * 0.25).abs() < 1e-6);
        }
    }

    #[test]
    fn cbam_gates_in_unit_interval() {
        let mut pb = ParamBuilder::<f32>::init(9);
        let cbam = Cbam::new(&mut pb, "c", 8).unwrap();
        pb.finish().unwrap();
        let mut r = crossview_tensor::rng::stream(5, "cbam");
        let a = crossview_tensor::rng::normal_tensor::<f32>(&mut r, &[1, 8, 4, 4], 1.0).unwrap();
        let z = Tensor::<f32>::zeros(&[1, 8, 4, 4]);
        // with b = 0 the output is a gated copy of a: |y| <= |a| elementwise
        let y = cbam.forward(&a, &z).unwrap();
        for (&yv, &av) in y.data().iter().zip(a.data().iter()) {
            assert!(yv.abs() <= av.abs() + 1e-6);
        }
    }

    #[test]
    fn argmax_breaks_ties_low() {
        let logits = Tensor::<f32>::from_vec(&[3, 1, 1], vec![1.0, 1.0, 0.5]).unwrap();
        assert_eq!(argmax_mask(&logits, 3, 1), vec![0]);
    }
}
