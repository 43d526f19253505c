//! Reverse-mode tape.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use crate::error::{shape_err, Error, Result};
use crate::tensor::Tensor3;

use super::graph::Graph;
use super::ops::{backward, forward, Op};
use super::params::ParamStore;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Kind {
    Constant,
    Input,
    Param,
    Op { op: Op, inputs: Vec<usize> },
}

struct Node {
    value: Arc<Tensor3>,
    kind: Kind,
    needs_grad: bool,
}

pub struct Tape<'a> {
    params: &'a ParamStore,
    nodes: Vec<Node>,
    param_ids: HashMap<String, usize>,
}

impl<'a> Tape<'a> {
    pub fn new(params: &'a ParamStore) -> Self {
        Tape { params, nodes: Vec::new(), param_ids: HashMap::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Arc<Tensor3>, kind: Kind, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, kind, needs_grad });
        Var(self.nodes.len() - 1)
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let root = &self.nodes[loss.0];
        if root.value.len() != 1 {
            return Err(shape_err!("backward needs a scalar loss, got {:?}", root.value.shape()));
        }
        let mut grads: Vec<Option<Tensor3>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor3::filled(1, 1, 1, 1.0));
        for i in (0..=loss.0).rev() {
            let Kind::Op { op, inputs } = &self.nodes[i].kind else { continue };
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].needs_grad {
                continue;
            }
            let xs: Vec<&Tensor3> = inputs.iter().map(|&j| self.nodes[j].value.as_ref()).collect();
            let parts = backward(op, &xs, &self.nodes[i].value, &g)?;
            grads[i] = Some(g);
            for (&j, part) in inputs.iter().zip(parts) {
                if !self.nodes[j].needs_grad {
                    continue;
                }
                match &mut grads[j] {
                    Some(acc) => acc.add_assign(&part),
                    slot => *slot = Some(part),
                }
            }
        }
        let mut params = BTreeMap::new();
        for (name, &id) in &self.param_ids {
            if let Some(g) = &grads[id] {
                params.insert(name.clone(), g.clone());
            }
        }
        Ok(Gradients { grads, params })
    }
}

impl Graph for Tape<'_> {
    type V = Var;

    fn input(&mut self, t: Tensor3) -> Var {
        self.push(Arc::new(t), Kind::Input, true)
    }

    fn constant(&mut self, t: Tensor3) -> Var {
        self.push(Arc::new(t), Kind::Constant, false)
    }

    fn param(&mut self, name: &str) -> Result<Var> {
        if let Some(&id) = self.param_ids.get(name) {
            return Ok(Var(id));
        }
        let value = self.params.value(name)?.clone();
        let v = self.push(value, Kind::Param, true);
        self.param_ids.insert(name.to_string(), v.0);
        Ok(v)
    }

    fn value<'b>(&'b self, v: &'b Var) -> &'b Tensor3 {
        &self.nodes[v.0].value
    }

    fn apply(&mut self, op: Op, inputs: &[&Var]) -> Result<Var> {
        if let Some(bad) = inputs.iter().find(|v| v.0 >= self.nodes.len()) {
            return Err(Error::Argument(format!("variable {} is not on this tape", bad.0)));
        }
        let xs: Vec<&Tensor3> = inputs.iter().map(|v| self.nodes[v.0].value.as_ref()).collect();
        let out = forward(&op, &xs)?;
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        let ids = inputs.iter().map(|v| v.0).collect();
        Ok(self.push(Arc::new(out), Kind::Op { op, inputs: ids }, needs_grad))
    }
}

/// Result of a reverse pass.
pub struct Gradients {
    grads: Vec<Option<Tensor3>>,
    params: BTreeMap<String, Tensor3>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`; `None` if `v` does not
    /// influence the loss.
    pub fn wrt(&self, v: Var) -> Option<&Tensor3> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn param(&self, name: &str) -> Option<&Tensor3> {
        self.params.get(name)
    }

    pub fn params(&self) -> &BTreeMap<String, Tensor3> {
        &self.params
    }

    pub fn into_params(self) -> BTreeMap<String, Tensor3> {
        self.params
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shared_use_accumulates() {
        let store = ParamStore::new();
        let mut t = Tape::new(&store);
        let x = t.input(Tensor3::from_vec(1, 1, 2, vec![1.0, -2.0]).unwrap());
        let y = t.mul(&x, &x).unwrap();
        let z = t.add(&y, &x).unwrap();
        let s = t.sum(&z).unwrap();
        let g = t.backward(s).unwrap();
        assert_eq!(g.wrt(x).unwrap().data(), &[3.0, -3.0]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let store = ParamStore::new();
        let mut t = Tape::new(&store);
        let x = t.input(Tensor3::zeros(1, 2, 2));
        assert!(matches!(t.backward(x), Err(Error::Shape(_))));
    }
}
