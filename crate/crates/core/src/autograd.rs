//! Reverse-mode automatic differentiation over a dynamic tape.
//!
//! A [`Tape`] records every operation of one forward pass. Nodes are appended
//! in evaluation order, so the tape is already topologically sorted and the
//! backward pass is a single reverse sweep. Parameters live in a
//! [`ParamStore`] and are borrowed, not copied, by the tape; the gradients come
//! back as an owned [`Gradients`] map so the store can be mutated by the
//! optimizer once the tape is gone.
//!
//! ```
//! use odtte::autograd::Tape;
//! use odtte::tensor::Tensor;
//!
//! let mut tape = Tape::new();
//! let x = tape.variable(Tensor::scalar(3.0));
//! let y = tape.mul(x, x).unwrap();
//! let grads = tape.backward(y).unwrap();
//! assert_eq!(grads.wrt(x).unwrap().data(), &[6.0]);
//! ```

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub(crate) usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
}

/// Named trainable tensors in declaration order.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.params.push(Param { name: name.into(), value });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }
}

/// Local vector-Jacobian product of one recorded operation.
pub(crate) trait Backward {
    /// Returns one gradient per input; entries whose `wants` flag is false may be `None`.
    fn backward(
        &self,
        upstream: &Tensor,
        inputs: &[&Tensor],
        output: &Tensor,
        wants: &[bool],
    ) -> Result<Vec<Option<Tensor>>>;
}

enum Value<'a> {
    Owned(Tensor),
    Borrowed(&'a Tensor),
}

impl Value<'_> {
    fn get(&self) -> &Tensor {
        match self {
            Value::Owned(t) => t,
            Value::Borrowed(t) => t,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Source {
    Constant,
    Variable,
    Param(ParamId),
    Op,
}

struct Node<'a> {
    value: Value<'a>,
    parents: Vec<NodeId>,
    op: Option<Box<dyn Backward + 'a>>,
    source: Source,
    requires_grad: bool,
}

pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
    kink_margin: f64,
}

impl Default for Tape<'_> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), kink_margin: f64::INFINITY }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        self.nodes[id.0].value.get()
    }

    pub fn shape(&self, id: NodeId) -> Shape {
        self.value(id).shape()
    }

    /// Smallest distance to a non-differentiable point seen so far: a ReLU
    /// input near zero, or a max-pool window whose two entries nearly tie.
    /// Finite differences straddling such a point do not measure the gradient.
    pub fn kink_margin(&self) -> f64 {
        self.kink_margin
    }

    pub(crate) fn note_kink(&mut self, distance: f64) {
        self.kink_margin = self.kink_margin.min(distance);
    }

    fn push(&mut self, node: Node<'a>) -> NodeId {
        self.nodes.push(node);
        NodeId(self.nodes.len() - 1)
    }

    /// A leaf that receives no gradient.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(Node {
            value: Value::Owned(value),
            parents: vec![],
            op: None,
            source: Source::Constant,
            requires_grad: false,
        })
    }

    /// A leaf whose gradient is reported by [`Gradients::wrt`].
    pub fn variable(&mut self, value: Tensor) -> NodeId {
        self.push(Node {
            value: Value::Owned(value),
            parents: vec![],
            op: None,
            source: Source::Variable,
            requires_grad: true,
        })
    }

    /// Borrow a stored parameter as a leaf; its gradient is reported by [`Gradients::param`].
    pub fn param(&mut self, store: &'a ParamStore, id: ParamId) -> NodeId {
        self.push(Node {
            value: Value::Borrowed(store.get(id)),
            parents: vec![],
            op: None,
            source: Source::Param(id),
            requires_grad: true,
        })
    }

    /// Borrow a parameter without tracking its gradient (frozen weights).
    pub fn frozen(&mut self, store: &'a ParamStore, id: ParamId) -> NodeId {
        self.push(Node {
            value: Value::Borrowed(store.get(id)),
            parents: vec![],
            op: None,
            source: Source::Constant,
            requires_grad: false,
        })
    }

    pub(crate) fn record(
        &mut self,
        value: Tensor,
        parents: Vec<NodeId>,
        op: impl Backward + 'a,
    ) -> NodeId {
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.push(Node {
            value: Value::Owned(value),
            parents,
            op: if requires_grad { Some(Box::new(op)) } else { None },
            source: Source::Op,
            requires_grad,
        })
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::shape(format!("add: {} vs {}", va.shape(), vb.shape())));
        }
        let mut out = va.clone();
        out.add_assign(vb);
        Ok(self.record(out, vec![a, b], AddOp))
    }

    /// Elementwise product of equally shaped tensors.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::shape(format!("mul: {} vs {}", va.shape(), vb.shape())));
        }
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x * y).collect();
        let out = Tensor::new(va.shape(), data)?;
        Ok(self.record(out, vec![a, b], MulOp))
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> NodeId {
        let out = self.value(a).map(|v| v * factor);
        self.record(out, vec![a], ScaleOp(factor))
    }

    /// Sum of all elements as a scalar node.
    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a);
        let (shape, total) = (v.shape(), v.sum());
        self.record(Tensor::scalar(total), vec![a], SumOp(shape))
    }

    pub fn reshape(&mut self, a: NodeId, shape: Shape) -> Result<NodeId> {
        let from = self.shape(a);
        let out = self.value(a).clone().reshape(shape)?;
        Ok(self.record(out, vec![a], ReshapeOp(from)))
    }

    /// Runs the reverse sweep from a scalar `loss`, consuming the tape.
    pub fn backward(self, loss: NodeId) -> Result<Gradients> {
        let loss_shape = self.shape(loss);
        if loss_shape.numel() != 1 {
            return Err(Error::contract(format!("backward needs a scalar loss, got {loss_shape}")));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Tensor>> = (0..n).map(|_| None).collect();
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(Tensor::full(loss_shape, 1.0));
        }
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            let Some(op) = node.op.as_ref() else { continue };
            let Some(upstream) = grads[i].take() else { continue };
            if node.parents.iter().any(|p| p.0 >= i) {
                return Err(Error::Internal(format!("tape node {i} references a later node")));
            }
            let inputs: Vec<&Tensor> = node.parents.iter().map(|p| self.value(*p)).collect();
            let wants: Vec<bool> = node.parents.iter().map(|p| self.nodes[p.0].requires_grad).collect();
            let local = op.backward(&upstream, &inputs, node.value.get(), &wants)?;
            for ((parent, want), g) in node.parents.iter().zip(&wants).zip(local) {
                let Some(g) = g else { continue };
                if !want {
                    continue;
                }
                debug_assert_eq!(g.shape(), self.shape(*parent));
                match &mut grads[parent.0] {
                    Some(acc) => acc.add_assign(&g),
                    slot => *slot = Some(g),
                }
            }
        }

        let mut out = Gradients::default();
        for (i, node) in self.nodes.iter().enumerate() {
            let g = grads[i].take().unwrap_or_else(|| Tensor::zeros(node.value.get().shape()));
            match node.source {
                Source::Param(id) => match out.params.get_mut(&id) {
                    Some(acc) => acc.add_assign(&g),
                    None => {
                        out.params.insert(id, g);
                    }
                },
                Source::Variable => {
                    out.vars.insert(NodeId(i), g);
                }
                Source::Constant | Source::Op => {}
            }
        }
        Ok(out)
    }
}

/// Gradients of one backward pass, keyed by parameter and by variable leaf.
#[derive(Clone, Debug, Default)]
pub struct Gradients {
    params: BTreeMap<ParamId, Tensor>,
    vars: BTreeMap<NodeId, Tensor>,
}

impl Gradients {
    pub fn param(&self, id: ParamId) -> Option<&Tensor> {
        self.params.get(&id)
    }

    pub fn wrt(&self, node: NodeId) -> Option<&Tensor> {
        self.vars.get(&node)
    }

    pub fn params(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.params.iter().map(|(k, v)| (*k, v))
    }
}

struct AddOp;

impl Backward for AddOp {
    fn backward(&self, up: &Tensor, _: &[&Tensor], _: &Tensor, wants: &[bool]) -> Result<Vec<Option<Tensor>>> {
        Ok(wants.iter().map(|&w| w.then(|| up.clone())).collect())
    }
}

struct MulOp;

impl Backward for MulOp {
    fn backward(&self, up: &Tensor, inputs: &[&Tensor], _: &Tensor, wants: &[bool]) -> Result<Vec<Option<Tensor>>> {
        let prod = |other: &Tensor| {
            let data = up.data().iter().zip(other.data()).map(|(g, o)| g * o).collect();
            Tensor::new(up.shape(), data)
        };
        let ga = if wants[0] { Some(prod(inputs[1])?) } else { None };
        let gb = if wants[1] { Some(prod(inputs[0])?) } else { None };
        Ok(vec![ga, gb])
    }
}

struct ScaleOp(f64);

impl Backward for ScaleOp {
    fn backward(&self, up: &Tensor, _: &[&Tensor], _: &Tensor, _: &[bool]) -> Result<Vec<Option<Tensor>>> {
        Ok(vec![Some(up.map(|g| g * self.0))])
    }
}

struct SumOp(Shape);

impl Backward for SumOp {
    fn backward(&self, up: &Tensor, _: &[&Tensor], _: &Tensor, _: &[bool]) -> Result<Vec<Option<Tensor>>> {
        Ok(vec![Some(Tensor::full(self.0, up.data()[0]))])
    }
}

struct ReshapeOp(Shape);

impl Backward for ReshapeOp {
    fn backward(&self, up: &Tensor, _: &[&Tensor], _: &Tensor, _: &[bool]) -> Result<Vec<Option<Tensor>>> {
        Ok(vec![Some(up.clone().reshape(self.0)?)])
    }
}

/// Gradients smaller than this are compared in absolute terms. Central
/// differences at eps = 1e-5 carry roughly 1e-11 of rounding noise for losses
/// of order one, which swamps the relative error of a 1e-9 gradient.
const GRAD_FLOOR: f64 = 1e-7;

fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRAD_FLOOR)
}

fn scalar_value(tape: &Tape<'_>, node: NodeId) -> Result<f64> {
    let v = tape.value(node);
    if v.numel() != 1 {
        return Err(Error::contract(format!("function must return a scalar, got {}", v.shape())));
    }
    let x = v.data()[0];
    if !x.is_finite() {
        return Err(Error::Numerical(format!("function value {x} is not finite")));
    }
    Ok(x)
}

/// Compares the tape gradient of `f` at `point` with central differences.
///
/// Returns the maximum over coordinates of
/// `|analytic − numeric| / max(|analytic|, |numeric|, 1e-7)`.
pub fn finite_diff_check<'a, F>(f: F, point: &Tensor, eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape<'a>, NodeId) -> Result<NodeId>,
{
    if eps <= 0.0 {
        return Err(Error::contract("finite-difference step must be positive"));
    }
    let mut tape = Tape::new();
    let x = tape.variable(point.clone());
    let out = f(&mut tape, x)?;
    scalar_value(&tape, out)?;
    let grads = tape.backward(out)?;
    let analytic = grads.wrt(x).expect("variable gradient").clone();

    let eval = |p: Tensor| -> Result<f64> {
        let mut tape = Tape::new();
        let x = tape.variable(p);
        let out = f(&mut tape, x)?;
        scalar_value(&tape, out)
    };
    let mut worst = 0.0f64;
    for j in 0..point.numel() {
        let mut plus = point.clone();
        plus.data_mut()[j] += eps;
        let mut minus = point.clone();
        minus.data_mut()[j] -= eps;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * eps);
        worst = worst.max(relative_error(analytic.data()[j], numeric));
    }
    Ok(worst)
}

/// Central-difference check of every parameter gradient of a loss built from `store`.
pub fn finite_diff_check_params<F>(store: &ParamStore, f: F, eps: f64) -> Result<f64>
where
    F: for<'s> Fn(&mut Tape<'s>, &'s ParamStore) -> Result<NodeId>,
{
    if eps <= 0.0 {
        return Err(Error::contract("finite-difference step must be positive"));
    }
    let grads = {
        let mut tape = Tape::new();
        let out = f(&mut tape, store)?;
        scalar_value(&tape, out)?;
        tape.backward(out)?
    };
    let eval = |s: &ParamStore| -> Result<f64> {
        let mut tape = Tape::new();
        let out = f(&mut tape, s)?;
        scalar_value(&tape, out)
    };
    let mut work = store.clone();
    let mut worst = 0.0f64;
    for id in store.ids() {
        let analytic = grads.param(id).cloned().unwrap_or_else(|| Tensor::zeros(store.get(id).shape()));
        for j in 0..store.get(id).numel() {
            let orig = work.get(id).data()[j];
            work.get_mut(id).data_mut()[j] = orig + eps;
            let fp = eval(&work)?;
            work.get_mut(id).data_mut()[j] = orig - eps;
            let fm = eval(&work)?;
            work.get_mut(id).data_mut()[j] = orig;
            worst = worst.max(relative_error(analytic.data()[j], (fp - fm) / (2.0 * eps)));
        }
    }
    Ok(worst)
}
