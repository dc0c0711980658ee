//! Reverse-mode automatic differentiation over dense NCHW tensors.
//!
//! Every operation returns a new [`Tensor`] that remembers how it was
//! produced. [`Tensor::backward`] walks that graph in reverse topological
//! order, applying each operation's vector-Jacobian product and summing
//! contributions for tensors consumed more than once. Only leaves created
//! with [`Tensor::parameter`] receive a stored gradient.
//!
//! The engine is generic over [`Scalar`]: training runs in `f32`, gradient
//! checks in `f64`.

mod adam;
mod conv;
mod filter;
mod ops;
mod scalar;

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock, RwLockReadGuard};

use crate::error::{Error, Result};

pub use adam::{Adam, AdamConfig};
pub use conv::{conv2d, conv2d_transpose, conv_output_size, conv_transpose_output_size};
pub use filter::gaussian_blur;
pub use ops::{
    add, affine, concat_channels, l1_loss, leaky_relu, mul, relu, scale, sub, sum, tanh,
};
pub use scalar::Scalar;

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

/// Vector-Jacobian product of one operation.
pub(crate) trait Backward<T: Scalar>: Send + Sync {
    fn inputs(&self) -> Vec<&Tensor<T>>;

    /// Gradients with respect to each input, given the forward output and
    /// the gradient flowing into it. Entries for inputs with
    /// `needs[i] == false` may be `None`.
    fn backward(&self, output: &[T], grad: &[T], needs: &[bool]) -> Vec<Option<Vec<T>>>;

    /// Sign pattern of the quantities at which this operation is not
    /// differentiable (activation inputs, L1 residuals).
    fn kinks(&self) -> Option<Vec<bool>> {
        None
    }
}

pub(crate) struct Node<T: Scalar> {
    id: u64,
    shape: Vec<usize>,
    data: RwLock<Vec<T>>,
    grad: Mutex<Option<Vec<T>>>,
    requires_grad: bool,
    op: Option<Box<dyn Backward<T>>>,
}

/// Shared handle to a node of the computation graph.
pub struct Tensor<T: Scalar>(Arc<Node<T>>);

impl<T: Scalar> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor(Arc::clone(&self.0))
    }
}

impl<T: Scalar> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.0.shape)
            .field("requires_grad", &self.0.requires_grad)
            .finish()
    }
}

fn check_len(shape: &[usize], len: usize) -> Result<()> {
    let want: usize = shape.iter().product();
    if want != len {
        return Err(Error::Shape(format!(
            "shape {shape:?} needs {want} values, got {len}"
        )));
    }
    Ok(())
}

impl<T: Scalar> Tensor<T> {
    fn leaf(data: Vec<T>, shape: &[usize], requires_grad: bool) -> Result<Self> {
        check_len(shape, data.len())?;
        Ok(Tensor(Arc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape: shape.to_vec(),
            data: RwLock::new(data),
            grad: Mutex::new(None),
            requires_grad,
            op: None,
        })))
    }

    /// Constant tensor (no gradient).
    pub fn new(data: Vec<T>, shape: &[usize]) -> Result<Self> {
        Self::leaf(data, shape, false)
    }

    /// Trainable leaf; receives a gradient on [`backward`](Self::backward).
    pub fn parameter(data: Vec<T>, shape: &[usize]) -> Result<Self> {
        Self::leaf(data, shape, true)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::leaf(vec![T::zero(); shape.iter().product()], shape, false).expect("consistent")
    }

    pub fn from_f64(data: &[f64], shape: &[usize]) -> Result<Self> {
        Self::new(data.iter().map(|&v| T::of(v)).collect(), shape)
    }

    pub(crate) fn from_op(data: Vec<T>, shape: Vec<usize>, op: Box<dyn Backward<T>>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        let requires_grad = op.inputs().iter().any(|t| t.requires_grad());
        Tensor(Arc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape,
            data: RwLock::new(data),
            grad: Mutex::new(None),
            requires_grad,
            op: if requires_grad { Some(op) } else { None },
        }))
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn len(&self) -> usize {
        self.0.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn data(&self) -> RwLockReadGuard<'_, Vec<T>> {
        self.0.data.read().expect("tensor lock poisoned")
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.data().clone()
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data().iter().map(|v| v.as_f64()).collect()
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> T {
        let d = self.data();
        assert_eq!(d.len(), 1, "item() on a tensor of shape {:?}", self.0.shape);
        d[0]
    }

    /// Overwrites the values in place (parameters, finite differences).
    pub fn set_data(&self, values: Vec<T>) -> Result<()> {
        check_len(&self.0.shape, values.len())?;
        *self.0.data.write().expect("tensor lock poisoned") = values;
        Ok(())
    }

    pub(crate) fn update(&self, f: impl FnOnce(&mut [T])) {
        f(&mut self.0.data.write().expect("tensor lock poisoned"));
    }

    pub fn grad(&self) -> Option<Vec<T>> {
        self.0.grad.lock().expect("grad lock poisoned").clone()
    }

    pub(crate) fn take_grad(&self) -> Option<Vec<T>> {
        self.0.grad.lock().expect("grad lock poisoned").take()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.lock().expect("grad lock poisoned") = None;
    }

    fn accumulate_grad(&self, g: Vec<T>) {
        let mut slot = self.0.grad.lock().expect("grad lock poisoned");
        match slot.as_mut() {
            Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a = *a + *b),
            None => *slot = Some(g),
        }
    }

    /// Graph nodes reachable from `self` that carry gradients, inputs first.
    fn topo_order(&self) -> Vec<Tensor<T>> {
        let mut order = Vec::new();
        let mut seen = HashSet::new();
        let mut stack: Vec<(Tensor<T>, bool)> = vec![(self.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                order.push(t);
                continue;
            }
            if !t.requires_grad() || !seen.insert(t.0.id) {
                continue;
            }
            stack.push((t.clone(), true));
            if let Some(op) = &t.0.op {
                for input in op.inputs().into_iter().rev() {
                    if input.requires_grad() && !seen.contains(&input.0.id) {
                        stack.push((input.clone(), false));
                    }
                }
            }
        }
        order
    }

    /// Back-propagates from this one-element tensor, adding into the
    /// gradients of every reachable parameter.
    pub fn backward(&self) -> Result<()> {
        if self.len() != 1 {
            return Err(Error::Graph(format!(
                "backward() needs a scalar, got shape {:?}",
                self.shape()
            )));
        }
        if !self.requires_grad() {
            return Ok(());
        }
        let mut pending: HashMap<u64, Vec<T>> = HashMap::new();
        pending.insert(self.0.id, vec![T::one()]);
        for node in self.topo_order().into_iter().rev() {
            let Some(grad) = pending.remove(&node.0.id) else {
                continue;
            };
            let Some(op) = &node.0.op else {
                node.accumulate_grad(grad);
                continue;
            };
            let inputs = op.inputs();
            let needs: Vec<bool> = inputs.iter().map(|t| t.requires_grad()).collect();
            let grads = op.backward(&node.data(), &grad, &needs);
            for ((input, g), need) in inputs.iter().zip(grads).zip(needs) {
                if !need {
                    continue;
                }
                let g = g.expect("operation skipped a required gradient");
                match pending.get_mut(&input.0.id) {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a = *a + *b),
                    None => {
                        pending.insert(input.0.id, g);
                    }
                }
            }
        }
        Ok(())
    }

    /// Concatenated sign patterns of every non-differentiable point in the
    /// graph below `self`. Two evaluations with equal signatures lie on the
    /// same smooth piece, which is what a finite-difference check needs.
    pub fn kink_signature(&self) -> Vec<bool> {
        let mut out = Vec::new();
        for node in self.topo_order() {
            if let Some(k) = node.0.op.as_ref().and_then(|op| op.kinks()) {
                out.extend(k);
            }
        }
        out
    }
}
