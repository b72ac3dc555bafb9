use std::cell::{Ref, RefCell};
use std::rc::Rc;

use crate::error::{Result, TensorError};
use crate::scalar::Scalar;

/// Backward rule of a recorded op: `(grad_out, out_data, inputs)`.
///
/// The closure computes the gradient contribution for each input and pushes it
/// with [`Tensor::accum_grad`]. Saved forward state (im2col buffers, argmax
/// indices, ...) is captured by value so the record never points back at the
/// op output, keeping the graph cycle-free under `Rc`.
pub(crate) type BackwardFn<E> = Box<dyn Fn(&[E], &[E], &[Tensor<E>])>;

pub(crate) struct OpRecord<E: Scalar> {
    pub inputs: Vec<Tensor<E>>,
    pub back: BackwardFn<E>,
}

struct Inner<E: Scalar> {
    shape: Vec<usize>,
    data: RefCell<Vec<E>>,
    grad: RefCell<Option<Vec<E>>>,
    grad_enabled: bool,
    op: Option<OpRecord<E>>,
}

/// Dense row-major N-dimensional array.
///
/// A `Tensor` is a cheap `Rc` handle. Values are immutable after creation
/// except through [`Tensor::set_data`] (optimizer updates, finite-difference
/// probes) and the grad buffer, which is only written during backward.
pub struct Tensor<E: Scalar = f32> {
    inner: Rc<Inner<E>>,
}

impl<E: Scalar> Clone for Tensor<E> {
    fn clone(&self) -> Self {
        Tensor {
            inner: Rc::clone(&self.inner),
        }
    }
}

impl<E: Scalar> std::fmt::Debug for Tensor<E> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "Tensor(shape={:?}, grad_enabled={})",
            self.inner.shape, self.inner.grad_enabled
        )
    }
}

fn check_len<E: Scalar>(op: &'static str, shape: &[usize], data: &[E]) -> Result<()> {
    let numel: usize = shape.iter().product();
    if numel != data.len() {
        return Err(TensorError::DataLength {
            op,
            shape: shape.to_vec(),
            got: data.len(),
        });
    }
    Ok(())
}

fn check_finite<E: Scalar>(op: &'static str, data: &[E]) -> Result<()> {
    if data.iter().any(|v| !v.is_finite()) {
        return Err(TensorError::NonFinite { op });
    }
    Ok(())
}

impl<E: Scalar> Tensor<E> {
    fn build(
        shape: Vec<usize>,
        data: Vec<E>,
        grad_enabled: bool,
        op: Option<OpRecord<E>>,
    ) -> Self {
        Tensor {
            inner: Rc::new(Inner {
                shape,
                data: RefCell::new(data),
                grad: RefCell::new(None),
                grad_enabled,
                op,
            }),
        }
    }

    /// Plain constant tensor (no gradient participation).
    pub fn from_vec(shape: &[usize], data: Vec<E>) -> Result<Self> {
        check_len("from_vec", shape, &data)?;
        check_finite("from_vec", &data)?;
        Ok(Self::build(shape.to_vec(), data, false, None))
    }

    /// Trainable leaf: participates in autodiff and receives a grad buffer.
    pub fn param(shape: &[usize], data: Vec<E>) -> Result<Self> {
        check_len("param", shape, &data)?;
        check_finite("param", &data)?;
        Ok(Self::build(shape.to_vec(), data, true, None))
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n: usize = shape.iter().product();
        Self::build(shape.to_vec(), vec![E::ZERO; n], false, None)
    }

    pub fn full(shape: &[usize], v: E) -> Self {
        let n: usize = shape.iter().product();
        Self::build(shape.to_vec(), vec![v; n], false, None)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, E::ONE)
    }

    pub fn scalar(v: E) -> Self {
        Self::build(vec![], vec![v], false, None)
    }

    /// Op output. Records a backward rule iff any input participates in
    /// autodiff; validates that the forward result is finite.
    pub(crate) fn from_op(
        op_name: &'static str,
        shape: Vec<usize>,
        data: Vec<E>,
        inputs: Vec<Tensor<E>>,
        back: BackwardFn<E>,
    ) -> Result<Self> {
        check_len(op_name, &shape, &data)?;
        check_finite(op_name, &data)?;
        let grad_enabled = inputs.iter().any(|t| t.grad_enabled());
        let op = if grad_enabled {
            Some(OpRecord { inputs, back })
        } else {
            None
        };
        Ok(Self::build(shape, data, grad_enabled, op))
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn numel(&self) -> usize {
        self.inner.shape.iter().product()
    }

    pub fn is_scalar(&self) -> bool {
        self.numel() == 1
    }

    pub fn grad_enabled(&self) -> bool {
        self.inner.grad_enabled
    }

    pub fn data(&self) -> Ref<'_, Vec<E>> {
        self.inner.data.borrow()
    }

    pub fn to_vec(&self) -> Vec<E> {
        self.inner.data.borrow().clone()
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> Result<E> {
        if !self.is_scalar() {
            return Err(TensorError::NotScalar {
                shape: self.inner.shape.clone(),
            });
        }
        Ok(self.inner.data.borrow()[0])
    }

    /// Overwrite the value buffer in place (optimizer update / finite-diff probe).
    pub fn set_data(&self, vals: &[E]) -> Result<()> {
        check_len("set_data", &self.inner.shape, vals)?;
        self.inner.data.borrow_mut().copy_from_slice(vals);
        Ok(())
    }

    pub(crate) fn set_elem(&self, idx: usize, v: E) {
        self.inner.data.borrow_mut()[idx] = v;
    }

    pub(crate) fn get_elem(&self, idx: usize) -> E {
        self.inner.data.borrow()[idx]
    }

    /// Current gradient buffer, if populated by a backward pass.
    pub fn grad(&self) -> Option<Vec<E>> {
        self.inner.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.inner.grad.borrow_mut() = None;
    }

    /// Accumulate a gradient contribution (`+=` across fan-out). No-op for
    /// tensors outside the autodiff graph.
    pub fn accum_grad(&self, g: &[E]) {
        if !self.inner.grad_enabled {
            return;
        }
        debug_assert_eq!(g.len(), self.numel());
        let mut slot = self.inner.grad.borrow_mut();
        match slot.as_mut() {
            Some(buf) => {
                for (b, &v) in buf.iter_mut().zip(g) {
                    *b += v;
                }
            }
            None => *slot = Some(g.to_vec()),
        }
    }

    /// Copy of this tensor cut loose from the autodiff graph.
    pub fn detach(&self) -> Tensor<E> {
        Self::build(self.inner.shape.clone(), self.to_vec(), false, None)
    }

    /// Stable identity of the underlying buffer, for graph traversal.
    pub(crate) fn ptr_id(&self) -> usize {
        Rc::as_ptr(&self.inner) as *const () as usize
    }

    pub(crate) fn op(&self) -> Option<&OpRecord<E>> {
        self.inner.op.as_ref()
    }
}
