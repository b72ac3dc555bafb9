use std::collections::HashSet;

use crate::error::{Result, TensorError};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Ordered record of the differentiable ops reaching a root tensor.
///
/// Built by walking the op graph depth-first; the resulting order is
/// topological (every op's inputs appear before the op), and backward visits
/// each op exactly once, in reverse.
pub struct Tape<E: Scalar> {
    order: Vec<Tensor<E>>,
}

impl<E: Scalar> Tape<E> {
    /// Trace the graph that produced `root`.
    pub fn trace(root: &Tensor<E>) -> Self {
        let mut order: Vec<Tensor<E>> = Vec::new();
        let mut visited: HashSet<usize> = HashSet::new();
        // (node, next child index to descend into)
        let mut stack: Vec<(Tensor<E>, usize)> = Vec::new();
        if visited.insert(root.ptr_id()) {
            stack.push((root.clone(), 0));
        }
        while let Some((node, child)) = stack.pop() {
            let num_inputs = node.op().map_or(0, |op| op.inputs.len());
            if child < num_inputs {
                let next = node.op().unwrap().inputs[child].clone();
                stack.push((node, child + 1));
                if next.grad_enabled() && visited.insert(next.ptr_id()) {
                    stack.push((next, 0));
                }
            } else {
                order.push(node);
            }
        }
        Tape { order }
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Reverse sweep: seeds `d(root)/d(root) = 1` and propagates gradients to
    /// every grad-enabled leaf, accumulating across fan-out.
    pub fn backward(&self, root: &Tensor<E>) -> Result<()> {
        if !root.is_scalar() {
            return Err(TensorError::NotScalar {
                shape: root.shape().to_vec(),
            });
        }
        root.accum_grad(&[E::ONE]);
        for node in self.order.iter().rev() {
            if let Some(op) = node.op() {
                let grad = node
                    .grad()
                    .unwrap_or_else(|| vec![E::ZERO; node.numel()]);
                let out = node.data();
                (op.back)(&grad, &out, &op.inputs);
            }
        }
        Ok(())
    }
}

/// Trace from `loss` and run the reverse sweep in one call.
pub fn backward<E: Scalar>(loss: &Tensor<E>) -> Result<()> {
    Tape::trace(loss).backward(loss)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops;

    #[test]
    fn sum_gradient_is_ones() {
        let x = Tensor::<f64>::param(&[2, 3], vec![1., 2., 3., 4., 5., 6.]).unwrap();
        let loss = ops::sum_all(&x).unwrap();
        backward(&loss).unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0; 6]);
    }

    #[test]
    fn square_sum_gradient_is_2x() {
        let x = Tensor::<f64>::param(&[2], vec![1.0, 2.0]).unwrap();
        let sq = ops::mul(&x, &x).unwrap();
        let loss = ops::sum_all(&sq).unwrap();
        backward(&loss).unwrap();
        assert_eq!(x.grad().unwrap(), vec![2.0, 4.0]);
    }

    #[test]
    fn fanout_accumulates_path_gradients() {
        // y = x*x + 3x used via two paths; dy/dx = 2x + 3.
        let x = Tensor::<f64>::param(&[1], vec![5.0]).unwrap();
        let a = ops::mul(&x, &x).unwrap();
        let b = ops::scale(&x, 3.0).unwrap();
        let y = ops::add(&a, &b).unwrap();
        let loss = ops::sum_all(&y).unwrap();
        backward(&loss).unwrap();
        assert_eq!(x.grad().unwrap(), vec![13.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let x = Tensor::<f64>::param(&[2], vec![1.0, 2.0]).unwrap();
        let y = ops::add(&x, &x).unwrap();
        assert!(backward(&y).is_err());
    }
}
