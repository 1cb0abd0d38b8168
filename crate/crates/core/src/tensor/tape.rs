use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;

use super::{Float, Tensor};
use crate::error::{Error, Result};

type BackwardFn<T> = Box<dyn Fn(&[T], &mut GradSink<'_, T>)>;

struct Node<T> {
    value: Rc<Tensor<T>>,
    requires_grad: bool,
    backward: Option<BackwardFn<T>>,
}

/// Append-only record of the operations of one forward pass.
///
/// A tape belongs to one execution context; build a fresh one (or call
/// [`Tape::clear`]) for every optimization step.
pub struct Tape<T: Float> {
    nodes: RefCell<Vec<Node<T>>>,
}

impl<T: Float> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Float> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Drops every recorded node. Handles created before the call become invalid.
    pub fn clear(&mut self) {
        self.nodes.get_mut().clear();
    }

    /// Records an input tensor.
    pub fn leaf(&self, value: Tensor<T>, requires_grad: bool) -> Result<Var<'_, T>> {
        check_finite("leaf", &value)?;
        Ok(self.insert(Rc::new(value), requires_grad, None))
    }

    /// Input that never receives a gradient.
    pub fn constant(&self, value: Tensor<T>) -> Result<Var<'_, T>> {
        self.leaf(value, false)
    }

    /// Input that receives a gradient.
    pub fn param(&self, value: Tensor<T>) -> Result<Var<'_, T>> {
        self.leaf(value, true)
    }

    fn insert(
        &self,
        value: Rc<Tensor<T>>,
        requires_grad: bool,
        backward: Option<BackwardFn<T>>,
    ) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            requires_grad,
            backward,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// Records the result of an operator together with its backward rule.
    ///
    /// The rule receives the gradient of the output and accumulates into the
    /// gradients of `inputs` through the [`GradSink`].
    pub(crate) fn push<F>(
        &self,
        op: &'static str,
        value: Tensor<T>,
        inputs: &[Var<'_, T>],
        backward: F,
    ) -> Result<Var<'_, T>>
    where
        F: Fn(&[T], &mut GradSink<'_, T>) + 'static,
    {
        check_finite(op, &value)?;
        let requires_grad = inputs.iter().any(|v| v.requires_grad());
        let backward: Option<BackwardFn<T>> = if requires_grad {
            Some(Box::new(backward))
        } else {
            None
        };
        Ok(self.insert(Rc::new(value), requires_grad, backward))
    }

    fn value_of(&self, id: usize) -> Rc<Tensor<T>> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    fn requires_grad_of(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    /// Reverse-mode sweep from a scalar loss.
    ///
    /// Gradients of leaves feeding several consumers are summed.
    pub fn backward(&self, loss: Var<'_, T>) -> Result<Gradients<T>> {
        let nodes = self.nodes.borrow();
        let loss_node = &nodes[loss.id];
        if loss_node.value.numel() != 1 {
            return Err(Error::NonScalarLoss(loss_node.value.shape().to_vec()));
        }
        if !loss_node.requires_grad {
            return Err(Error::DetachedGraph);
        }

        let n = loss.id + 1;
        let requires: Vec<bool> = nodes[..n].iter().map(|n| n.requires_grad).collect();
        let lens: Vec<usize> = nodes[..n].iter().map(|n| n.value.numel()).collect();
        let mut grads: Vec<Option<Vec<T>>> = (0..n).map(|_| None).collect();
        grads[loss.id] = Some(vec![T::one()]);

        for id in (0..n).rev() {
            let Some(backward) = nodes[id].backward.as_ref() else {
                continue;
            };
            let Some(grad_out) = grads[id].take() else {
                continue;
            };
            let mut sink = GradSink {
                grads: &mut grads,
                requires: &requires,
                lens: &lens,
            };
            backward(&grad_out, &mut sink);
        }

        // Only leaves keep their gradients; interior slots were consumed above.
        Ok(Gradients { grads })
    }
}

fn check_finite<T: Float>(op: &'static str, value: &Tensor<T>) -> Result<()> {
    if cfg!(debug_assertions) && !value.is_finite() {
        return Err(Error::NonFinite { op });
    }
    Ok(())
}

/// Write access to input gradients during a backward rule.
pub struct GradSink<'a, T> {
    grads: &'a mut [Option<Vec<T>>],
    requires: &'a [bool],
    lens: &'a [usize],
}

impl<T: Float> GradSink<'_, T> {
    /// Gradient accumulator of node `id`, or `None` when it does not require a gradient.
    pub fn slot(&mut self, id: usize) -> Option<&mut [T]> {
        if !self.requires[id] {
            return None;
        }
        let len = self.lens[id];
        Some(self.grads[id].get_or_insert_with(|| vec![T::zero(); len]))
    }

    pub fn wants(&self, id: usize) -> bool {
        self.requires[id]
    }
}

/// Gradients of the leaves reached by a backward sweep.
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Float> Gradients<T> {
    pub fn get(&self, var: Var<'_, T>) -> Option<&[T]> {
        self.grads.get(var.id).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, var: Var<'_, T>) -> Option<Vec<T>> {
        self.grads.get_mut(var.id).and_then(Option::take)
    }

    /// Gradient shaped like `var`; zeros when the leaf was not reached.
    pub fn wrt(&self, var: Var<'_, T>) -> Tensor<T> {
        let value = var.value();
        match self.get(var) {
            Some(g) => Tensor::new(value.shape(), g.to_vec()).expect("gradient length"),
            None => Tensor::zeros(value.shape()),
        }
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t, T: Float> {
    pub(crate) tape: &'t Tape<T>,
    pub(crate) id: usize,
}

impl<T: Float> fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

impl<'t, T: Float> Var<'t, T> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn value(&self) -> Rc<Tensor<T>> {
        self.tape.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn numel(&self) -> usize {
        self.value().numel()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.requires_grad_of(self.id)
    }

    /// Scalar value of a single-element variable.
    pub fn item(&self) -> T {
        self.value().item()
    }
}
