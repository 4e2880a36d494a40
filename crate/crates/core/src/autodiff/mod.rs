//! Tape-based reverse-mode automatic differentiation over [`RealTensor`]s.
//!
//! Every primitive records its output value, its parents and a closure that
//! maps the upstream gradient to one gradient per parent. [`Tape::backward`]
//! walks the nodes in exact reverse recording order, so gradients are
//! deterministic. Complex fields are carried as channel-planar tensors of
//! shape `[.., 2, h, w]` (real plane, then imaginary plane).
//!
//! ```
//! use ptychodv::autodiff::Tape;
//! use ptychodv::RealTensor;
//!
//! let mut tape = Tape::new();
//! let x = tape.param(RealTensor::new(&[3], vec![1.0, -2.0, 0.5]).unwrap());
//! let loss = tape.sum_sq(x).unwrap();
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.get(x).unwrap().data(), &[2.0, -4.0, 1.0]);
//! ```

mod check;
mod ops;

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};

pub use check::{grad_check, grad_check_many, CoordSelection};

use crate::error::{Error, Result};
use crate::tensor::RealTensor;

static NEXT_TAPE: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var {
    id: usize,
    tape: u64,
}

impl Var {
    pub fn id(&self) -> usize {
        self.id
    }
}

type BackwardFn = Box<dyn Fn(&RealTensor, &[&RealTensor], &RealTensor) -> Vec<Option<RealTensor>>>;

struct Node {
    value: RealTensor,
    parents: Vec<usize>,
    backward: Option<BackwardFn>,
    requires_grad: bool,
    is_param: bool,
}

/// Recording of one forward pass. Single use: build a fresh tape per pass.
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: RealTensor) -> Var {
        self.leaf(value, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: RealTensor) -> Var {
        self.leaf(value, false)
    }

    fn leaf(&mut self, value: RealTensor, trainable: bool) -> Var {
        self.nodes.push(Node {
            value,
            parents: Vec::new(),
            backward: None,
            requires_grad: trainable,
            is_param: trainable,
        });
        Var {
            id: self.nodes.len() - 1,
            tape: self.id,
        }
    }

    pub fn value(&self, v: Var) -> &RealTensor {
        assert_eq!(v.tape, self.id, "variable from a different tape");
        &self.nodes[v.id].value
    }

    pub(crate) fn val(&self, v: Var) -> Result<&RealTensor> {
        self.check(v)?;
        Ok(&self.nodes[v.id].value)
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.id].requires_grad
    }

    fn check(&self, v: Var) -> Result<()> {
        if v.tape != self.id || v.id >= self.nodes.len() {
            return Err(Error::Graph(format!(
                "variable {} does not belong to tape {}",
                v.id, self.id
            )));
        }
        Ok(())
    }

    pub(crate) fn record(&mut self, value: RealTensor, parents: &[Var], backward: BackwardFn) -> Result<Var> {
        for p in parents {
            self.check(*p)?;
        }
        let requires_grad = parents.iter().any(|p| self.nodes[p.id].requires_grad);
        self.nodes.push(Node {
            value,
            parents: parents.iter().map(|p| p.id).collect(),
            backward: requires_grad.then_some(backward),
            requires_grad,
            is_param: false,
        });
        Ok(Var {
            id: self.nodes.len() - 1,
            tape: self.id,
        })
    }

    /// Gradient of a scalar `loss` with respect to every trainable leaf
    /// recorded before it.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        self.check(loss)?;
        if self.nodes[loss.id].value.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss.id].value.shape()
            )));
        }
        let mut grads: Vec<Option<RealTensor>> = (0..=loss.id).map(|_| None).collect();
        grads[loss.id] = Some(RealTensor::full(self.nodes[loss.id].value.shape(), 1.0));

        for id in (0..=loss.id).rev() {
            let node = &self.nodes[id];
            let Some(backward) = node.backward.as_ref() else {
                continue;
            };
            let Some(g) = grads[id].take() else {
                continue;
            };
            let parent_values: Vec<&RealTensor> =
                node.parents.iter().map(|&p| &self.nodes[p].value).collect();
            let parent_grads = backward(&g, &parent_values, &node.value);
            debug_assert_eq!(parent_grads.len(), node.parents.len());
            for (&p, pg) in node.parents.iter().zip(parent_grads) {
                if !self.nodes[p].requires_grad {
                    continue;
                }
                let Some(pg) = pg else { continue };
                match &mut grads[p] {
                    Some(acc) => acc.add_assign(&pg)?,
                    slot => *slot = Some(pg),
                }
            }
            if node.is_param {
                grads[id] = Some(g);
            }
        }

        let mut map = BTreeMap::new();
        for (id, node) in self.nodes.iter().enumerate().take(loss.id + 1) {
            if node.is_param {
                let g = grads[id]
                    .take()
                    .unwrap_or_else(|| RealTensor::zeros(node.value.shape()));
                map.insert(id, g);
            }
        }
        Ok(Gradients {
            tape: self.id,
            loss: loss.id,
            map,
        })
    }
}

/// Gradients keyed by parameter node.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    tape: u64,
    loss: usize,
    map: BTreeMap<usize, RealTensor>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Result<&RealTensor> {
        if v.tape != self.tape {
            return Err(Error::Graph("variable from a different tape".into()));
        }
        if v.id > self.loss {
            return Err(Error::Graph(format!(
                "node {} was recorded after the loss node {}",
                v.id, self.loss
            )));
        }
        self.map
            .get(&v.id)
            .ok_or_else(|| Error::Contract(format!("node {} is not a trainable parameter", v.id)))
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &RealTensor)> {
        self.map.iter().map(|(&k, v)| (k, v))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_gradient_is_uniform() {
        let mut tape = Tape::new();
        let x = tape.param(RealTensor::from_fn(&[10], |i| i as f64));
        let loss = tape.mean(x).unwrap();
        let g = tape.backward(loss).unwrap();
        for v in g.get(x).unwrap().data() {
            assert!((v - 0.1).abs() < 1e-15);
        }
    }

    #[test]
    fn backward_is_repeatable() {
        let mut tape = Tape::new();
        let x = tape.param(RealTensor::from_fn(&[2, 3], |i| (i as f64).sin()));
        let w = tape.param(RealTensor::from_fn(&[3, 2], |i| (i as f64).cos()));
        let y = tape.matmul(x, w).unwrap();
        let y = tape.gelu(y).unwrap();
        let loss = tape.sum_sq(y).unwrap();
        assert_eq!(tape.backward(loss).unwrap(), tape.backward(loss).unwrap());
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut tape = Tape::new();
        let x = tape.param(RealTensor::zeros(&[2]));
        assert!(matches!(tape.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn nodes_after_loss_are_graph_errors() {
        let mut tape = Tape::new();
        let x = tape.param(RealTensor::zeros(&[2]));
        let loss = tape.sum_sq(x).unwrap();
        let late = tape.param(RealTensor::zeros(&[2]));
        let g = tape.backward(loss).unwrap();
        assert!(matches!(g.get(late), Err(Error::Graph(_))));

        let mut other = Tape::new();
        let foreign = other.param(RealTensor::zeros(&[2]));
        assert!(matches!(tape.add(x, foreign), Err(Error::Graph(_))));
    }

    #[test]
    fn shared_parameter_accumulates() {
        // f(w) = sum_sq(w * a) + sum_sq(w * b), w used at two sites.
        let a = RealTensor::new(&[3], vec![1.0, 2.0, -1.0]).unwrap();
        let b = RealTensor::new(&[3], vec![0.5, -3.0, 2.0]).unwrap();
        let w0 = RealTensor::new(&[3], vec![0.3, -0.7, 1.1]).unwrap();
        let mut tape = Tape::new();
        let w = tape.param(w0.clone());
        let ca = tape.constant(a.clone());
        let cb = tape.constant(b.clone());
        let t1 = tape.mul(w, ca).unwrap();
        let t2 = tape.mul(w, cb).unwrap();
        let l1 = tape.sum_sq(t1).unwrap();
        let l2 = tape.sum_sq(t2).unwrap();
        let loss = tape.add(l1, l2).unwrap();
        let g = tape.backward(loss).unwrap().get(w).unwrap().clone();

        // Duplicated-parameter oracle: independent copies, then sum.
        let f = |w1: &RealTensor, w2: &RealTensor| {
            w1.mul(&a).unwrap().sum_sq() + w2.mul(&b).unwrap().sum_sq()
        };
        let h = 1e-6;
        for j in 0..3 {
            let bump = |d: f64| {
                let mut v = w0.clone();
                v.data_mut()[j] += d;
                v
            };
            let d1 = (f(&bump(h), &w0) - f(&bump(-h), &w0)) / (2.0 * h);
            let d2 = (f(&w0, &bump(h)) - f(&w0, &bump(-h))) / (2.0 * h);
            assert!((g.data()[j] - (d1 + d2)).abs() < 1e-7);
        }
    }

    #[test]
    fn unused_parameter_gets_zero_gradient() {
        let mut tape = Tape::new();
        let x = tape.param(RealTensor::full(&[2], 1.0));
        let unused = tape.param(RealTensor::full(&[4], 1.0));
        let loss = tape.sum_sq(x).unwrap();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(unused).unwrap(), &RealTensor::zeros(&[4]));
    }
}
