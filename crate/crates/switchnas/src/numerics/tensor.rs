//! Dense f64 tensor with optional gradient storage.
//!
//! Storage is a flat row-major `Vec<f64>` behind an `Rc`, so cloning a
//! [`Tensor`] is a cheap handle copy and the same buffer can be captured by
//! backward closures on the tape. Strides are implicit:
//! `stride[d] = product(shape[d+1..])`. Gradients live next to the data as
//! an optional flat array of the same length.
//!
//! Tensors are deliberately not `Send`: a model instance and its tape are
//! single-threaded. Parallelism in this crate happens one model per thread.

use std::cell::{Ref, RefCell};
use std::rc::Rc;

use crate::error::{NumericsError, Result};
use crate::rng::Rng;

#[derive(Clone)]
pub struct Tensor {
    inner: Rc<TensorInner>,
}

struct TensorInner {
    shape: Vec<usize>,
    data: RefCell<Vec<f64>>,
    grad: RefCell<Option<Vec<f64>>>,
    requires_grad: bool,
}

impl Tensor {
    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        let expect: usize = shape.iter().product();
        if data.len() != expect {
            return Err(NumericsError::ShapeDataMismatch { shape: shape.to_vec(), len: data.len() }.into());
        }
        Ok(Tensor::raw(shape.to_vec(), data, false))
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        let n: usize = shape.iter().product();
        Tensor::raw(shape.to_vec(), vec![0.0; n], false)
    }

    pub fn full(shape: &[usize], value: f64) -> Tensor {
        let n: usize = shape.iter().product();
        Tensor::raw(shape.to_vec(), vec![value; n], false)
    }

    pub fn scalar(value: f64) -> Tensor {
        Tensor::raw(vec![], vec![value], false)
    }

    /// N(0, stddev^2) samples.
    pub fn randn(shape: &[usize], stddev: f64, rng: &mut Rng) -> Tensor {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.normal() * stddev).collect();
        Tensor::raw(shape.to_vec(), data, false)
    }

    /// Mark as a trainable parameter (participates in gradient recording).
    pub fn as_param(mut self) -> Tensor {
        Rc::get_mut(&mut self.inner)
            .expect("as_param on a shared tensor")
            .requires_grad = true;
        self
    }

    pub(crate) fn raw(shape: Vec<usize>, data: Vec<f64>, requires_grad: bool) -> Tensor {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor {
            inner: Rc::new(TensorInner {
                shape,
                data: RefCell::new(data),
                grad: RefCell::new(None),
                requires_grad,
            }),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn numel(&self) -> usize {
        self.inner.shape.iter().product()
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    pub fn data(&self) -> Ref<'_, Vec<f64>> {
        self.inner.data.borrow()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.inner.data.borrow().clone()
    }

    /// Scalar value; panics if the tensor is not a single element.
    pub fn item(&self) -> f64 {
        let d = self.inner.data.borrow();
        assert_eq!(d.len(), 1, "item() on tensor of shape {:?}", self.inner.shape);
        d[0]
    }

    /// Overwrite the buffer in place (same length required).
    pub fn set_data(&self, new: &[f64]) {
        let mut d = self.inner.data.borrow_mut();
        assert_eq!(d.len(), new.len());
        d.copy_from_slice(new);
    }

    /// Mutate the buffer through a closure (used by the optimizer).
    pub fn update_data<F: FnOnce(&mut [f64])>(&self, f: F) {
        f(&mut self.inner.data.borrow_mut());
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.inner.grad.borrow().clone()
    }

    /// Borrow the gradient without cloning (hot path of backward closures).
    pub(crate) fn grad_ref(&self) -> Ref<'_, Option<Vec<f64>>> {
        self.inner.grad.borrow()
    }

    pub fn zero_grad(&self) {
        *self.inner.grad.borrow_mut() = None;
    }

    /// Add `delta` into the gradient buffer, allocating zeros on first use.
    pub fn accumulate_grad(&self, delta: &[f64]) {
        let mut g = self.inner.grad.borrow_mut();
        match g.as_mut() {
            Some(buf) => {
                debug_assert_eq!(buf.len(), delta.len());
                for (b, d) in buf.iter_mut().zip(delta) {
                    *b += d;
                }
            }
            None => {
                debug_assert_eq!(delta.len(), self.numel());
                *g = Some(delta.to_vec());
            }
        }
    }

    /// Seed the gradient of a scalar tensor with 1.0.
    pub(crate) fn seed_grad(&self) {
        *self.inner.grad.borrow_mut() = Some(vec![1.0]);
    }

    /// Two handles to the same buffer?
    pub fn same_buffer(&self, other: &Tensor) -> bool {
        Rc::ptr_eq(&self.inner, &other.inner)
    }

    /// Error if any element is NaN or infinite.
    pub fn check_finite(&self, context: &str) -> Result<()> {
        if self.inner.data.borrow().iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(NumericsError::NonFinite { context: context.to_string() }.into())
        }
    }
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let d = self.inner.data.borrow();
        if d.len() <= 8 {
            write!(f, "Tensor{:?} {:?}", self.inner.shape, &d[..])
        } else {
            write!(f, "Tensor{:?} [{} elements]", self.inner.shape, d.len())
        }
    }
}
