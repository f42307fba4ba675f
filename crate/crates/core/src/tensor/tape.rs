//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every operation appends one node holding its forward value, the handles of
//! its inputs and a closure mapping the output gradient to input gradients.
//! Because nodes are only ever appended, tape order is a topological order
//! and `backward` is a single reverse sweep.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// What a backward closure gets to see.
pub(crate) struct BackwardArgs<'a, T> {
    pub grad_out: &'a [T],
    pub out: &'a Tensor<T>,
    pub inputs: &'a [&'a Tensor<T>],
    /// `needs[i]` is true iff input `i` is tracked.
    pub needs: &'a [bool],
}

/// Returns one gradient per input; `None` for inputs that are not tracked.
pub(crate) type BackwardFn<T> =
    Box<dyn Fn(&BackwardArgs<'_, T>) -> Vec<Option<Vec<T>>> + Send + Sync>;

struct Node<T> {
    inputs: Vec<Var>,
    backward: Option<BackwardFn<T>>,
    requires_grad: bool,
}

pub struct Tape<T> {
    values: Vec<Tensor<T>>,
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            values: Vec::new(),
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Untracked input (data, labels, frozen statistics).
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push_node(value, Vec::new(), None, false)
    }

    /// Tracked leaf; its gradient accumulates across `backward` calls.
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push_node(value, Vec::new(), None, true)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.values[v.0]
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.values[v.0].shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of a tracked node; zeros until a backward pass reaches it.
    /// `None` for untracked nodes.
    pub fn grad(&self, v: Var) -> Option<Tensor<T>> {
        if !self.nodes[v.0].requires_grad {
            return None;
        }
        let shape = self.values[v.0].shape();
        Some(match &self.grads[v.0] {
            Some(g) => Tensor::new(shape, g.clone()).expect("grad shape tracks value"),
            None => Tensor::zeros(shape),
        })
    }

    pub fn zero_grad(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
    }

    /// Record an operation. The node is tracked iff any input is tracked;
    /// untracked nodes drop `backward`.
    pub(crate) fn push(&mut self, value: Tensor<T>, inputs: Vec<Var>, backward: BackwardFn<T>) -> Var {
        let tracked = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        let backward = tracked.then_some(backward);
        self.push_node(value, inputs, backward, tracked)
    }

    fn push_node(
        &mut self,
        value: Tensor<T>,
        inputs: Vec<Var>,
        backward: Option<BackwardFn<T>>,
        requires_grad: bool,
    ) -> Var {
        self.values.push(value);
        self.nodes.push(Node {
            inputs,
            backward,
            requires_grad,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    /// Accumulate `d loss / d node` into every tracked node reachable from
    /// `loss`. Tracked nodes the loss does not depend on end up with an
    /// all-zero gradient.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.values[loss.0].numel() != 1 {
            return Err(Error::NonScalarLoss {
                shape: self.values[loss.0].shape().to_vec(),
            });
        }
        let mut pass: Vec<Option<Vec<T>>> = (0..=loss.0).map(|_| None).collect();
        if self.nodes[loss.0].requires_grad {
            pass[loss.0] = Some(vec![T::one()]);
        }

        for i in (0..=loss.0).rev() {
            let Some(grad_out) = pass[i].take() else {
                continue;
            };
            let node = &self.nodes[i];
            if let Some(backward) = &node.backward {
                let inputs: Vec<&Tensor<T>> = node.inputs.iter().map(|v| &self.values[v.0]).collect();
                let needs: Vec<bool> = node.inputs.iter().map(|v| self.nodes[v.0].requires_grad).collect();
                let contributions = backward(&BackwardArgs {
                    grad_out: &grad_out,
                    out: &self.values[i],
                    inputs: &inputs,
                    needs: &needs,
                });
                debug_assert_eq!(contributions.len(), node.inputs.len());
                for (input, contribution) in node.inputs.iter().zip(contributions) {
                    let Some(c) = contribution else { continue };
                    if !self.nodes[input.0].requires_grad {
                        continue;
                    }
                    debug_assert_eq!(c.len(), self.values[input.0].numel());
                    match &mut pass[input.0] {
                        Some(acc) => acc.iter_mut().zip(&c).for_each(|(a, b)| *a = *a + *b),
                        slot @ None => *slot = Some(c),
                    }
                }
            }
            accumulate(&mut self.grads[i], &grad_out);
        }

        for (i, node) in self.nodes.iter().enumerate() {
            if node.requires_grad && self.grads[i].is_none() {
                self.grads[i] = Some(vec![T::zero(); self.values[i].numel()]);
            }
        }
        Ok(())
    }
}

fn accumulate<T: Scalar>(slot: &mut Option<Vec<T>>, g: &[T]) {
    match slot {
        Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a = *a + *b),
        None => *slot = Some(g.to_vec()),
    }
}
