//! Adam optimizer with bias correction.

use crate::error::{invalid, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// First/second moment buffers plus the step counter. Buffers are positional:
/// the same parameter slice must be passed to every [`adam_step`] call.
pub struct AdamState<E: Scalar> {
    m: Vec<Vec<E>>,
    v: Vec<Vec<E>>,
    step: u64,
}

impl<E: Scalar> AdamState<E> {
    pub fn new(params: &[Tensor<E>]) -> Self {
        AdamState {
            m: params.iter().map(|p| vec![E::ZERO; p.numel()]).collect(),
            v: params.iter().map(|p| vec![E::ZERO; p.numel()]).collect(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One Adam update. Missing gradients count as zero; call
/// `Tensor::zero_grad` between steps to reset accumulation.
pub fn adam_step<E: Scalar>(
    params: &[Tensor<E>],
    state: &mut AdamState<E>,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
) -> Result<()> {
    if params.len() != state.m.len() {
        return Err(invalid(
            "adam_step",
            format!("state tracks {} params, got {}", state.m.len(), params.len()),
        ));
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - beta1.powi(t);
    let bc2 = 1.0 - beta2.powi(t);
    let (b1, b2) = (E::from_f64(beta1), E::from_f64(beta2));
    let (nb1, nb2) = (E::from_f64(1.0 - beta1), E::from_f64(1.0 - beta2));
    let (ibc1, ibc2) = (E::from_f64(1.0 / bc1), E::from_f64(1.0 / bc2));
    let (elr, eeps) = (E::from_f64(lr), E::from_f64(eps));

    for (i, p) in params.iter().enumerate() {
        if state.m[i].len() != p.numel() {
            return Err(invalid("adam_step", format!("moment shape mismatch at param {i}")));
        }
        let grad = p.grad();
        let g = match grad.as_deref() {
            Some(g) => g,
            None => continue, // zero gradient: moments decay toward zero, value unchanged from fresh state
        };
        let mut data = p.to_vec();
        let m = &mut state.m[i];
        let v = &mut state.v[i];
        for j in 0..data.len() {
            m[j] = b1 * m[j] + nb1 * g[j];
            v[j] = b2 * v[j] + nb2 * g[j] * g[j];
            let mhat = m[j] * ibc1;
            let vhat = v[j] * ibc2;
            data[j] -= elr * mhat / (vhat.sqrt() + eeps);
        }
        p.set_data(&data)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let p = Tensor::<f32>::param(&[3], vec![1.0, -2.0, 0.5]).unwrap();
        let mut st = AdamState::new(std::slice::from_ref(&p));
        adam_step(std::slice::from_ref(&p), &mut st, 0.1, 0.9, 0.999, 1e-8).unwrap();
        assert_eq!(p.to_vec(), vec![1.0, -2.0, 0.5]);
    }

    #[test]
    fn first_step_moves_by_lr_sign() {
        // With m̂ = g and v̂ = g², the first update is -lr·g/(|g| + eps) ≈ -lr·sign(g).
        let p = Tensor::<f64>::param(&[2], vec![0.0, 0.0]).unwrap();
        p.accum_grad(&[3.0, -0.25]);
        let mut st = AdamState::new(std::slice::from_ref(&p));
        adam_step(std::slice::from_ref(&p), &mut st, 0.01, 0.9, 0.999, 1e-8).unwrap();
        let v = p.to_vec();
        assert!((v[0] - (-0.01)).abs() < 1e-6);
        assert!((v[1] - 0.01).abs() < 1e-6);
    }

    #[test]
    fn two_steps_match_hand_recursion() {
        let g = 2.0f64;
        let (lr, b1, b2, eps) = (0.1, 0.9, 0.999, 1e-8);
        let p = Tensor::<f64>::param(&[1], vec![1.0]).unwrap();
        let mut st = AdamState::new(std::slice::from_ref(&p));

        // hand recursion
        let mut m = 0.0;
        let mut v = 0.0;
        let mut x = 1.0;
        for t in 1..=2u32 {
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mhat = m / (1.0 - b1.powi(t as i32));
            let vhat = v / (1.0 - b2.powi(t as i32));
            x -= lr * mhat / (vhat.sqrt() + eps);
        }

        for _ in 0..2 {
            p.zero_grad();
            p.accum_grad(&[g]);
            adam_step(std::slice::from_ref(&p), &mut st, lr, b1, b2, eps).unwrap();
        }
        assert!((p.to_vec()[0] - x).abs() < 1e-12);
    }
}
