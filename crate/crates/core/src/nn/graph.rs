//! Computation graphs over `Tensor3` values.
//!
//! Model code is written once against [`Graph`] and runs either on [`Eval`]
//! (inference, intermediate values dropped as soon as they go out of scope)
//! or on [`Tape`](super::Tape) (records every node for reverse mode).

use std::sync::Arc;

use crate::error::Result;
use crate::tensor::Tensor3;
use crate::wavelet::{Pass, WaveletKind};

use super::ops::{forward, Op};
use super::params::ParamStore;

pub trait Graph {
    type V: Clone;

    /// A value that takes part in differentiation (an input of the check or
    /// of the loss).
    fn input(&mut self, t: Tensor3) -> Self::V;
    /// A value treated as a constant.
    fn constant(&mut self, t: Tensor3) -> Self::V;
    fn param(&mut self, name: &str) -> Result<Self::V>;
    fn value<'b>(&'b self, v: &'b Self::V) -> &'b Tensor3;
    fn apply(&mut self, op: Op, inputs: &[&Self::V]) -> Result<Self::V>;

    fn shape(&self, v: &Self::V) -> (usize, usize, usize) {
        self.value(v).shape()
    }

    fn conv2d(&mut self, x: &Self::V, prefix: &str, stride: usize) -> Result<Self::V> {
        let w = self.param(&format!("{prefix}.w"))?;
        let b = self.param(&format!("{prefix}.b"))?;
        self.apply(Op::Conv2d { stride }, &[x, &w, &b])
    }

    fn tconv2d(&mut self, x: &Self::V, prefix: &str, stride: usize) -> Result<Self::V> {
        let w = self.param(&format!("{prefix}.w"))?;
        let b = self.param(&format!("{prefix}.b"))?;
        self.apply(Op::TConv2d { stride }, &[x, &w, &b])
    }

    fn leaky_relu(&mut self, x: &Self::V, slope: f64) -> Result<Self::V> {
        self.apply(Op::LeakyRelu { slope }, &[x])
    }

    fn add(&mut self, a: &Self::V, b: &Self::V) -> Result<Self::V> {
        self.apply(Op::Add, &[a, b])
    }

    fn sub(&mut self, a: &Self::V, b: &Self::V) -> Result<Self::V> {
        self.apply(Op::Sub, &[a, b])
    }

    fn mul(&mut self, a: &Self::V, b: &Self::V) -> Result<Self::V> {
        self.apply(Op::Mul, &[a, b])
    }

    fn div(&mut self, a: &Self::V, b: &Self::V) -> Result<Self::V> {
        self.apply(Op::Div, &[a, b])
    }

    fn scale(&mut self, x: &Self::V, k: f64) -> Result<Self::V> {
        self.apply(Op::Scale(k), &[x])
    }

    fn add_scalar(&mut self, x: &Self::V, k: f64) -> Result<Self::V> {
        self.apply(Op::AddScalar(k), &[x])
    }

    fn sigmoid(&mut self, x: &Self::V) -> Result<Self::V> {
        self.apply(Op::Sigmoid, &[x])
    }

    fn tanh(&mut self, x: &Self::V) -> Result<Self::V> {
        self.apply(Op::Tanh, &[x])
    }

    fn exp(&mut self, x: &Self::V) -> Result<Self::V> {
        self.apply(Op::Exp, &[x])
    }

    fn clamp(&mut self, x: &Self::V, lo: f64, hi: f64) -> Result<Self::V> {
        self.apply(Op::Clamp { lo, hi }, &[x])
    }

    fn dwt_channel(&mut self, x: &Self::V, kind: WaveletKind, pass: Pass) -> Result<Self::V> {
        self.apply(Op::DwtChannel { kind, pass }, &[x])
    }

    fn dwt2d(&mut self, x: &Self::V, kind: WaveletKind, levels: usize, pass: Pass) -> Result<Self::V> {
        self.apply(Op::Dwt2d { kind, levels, pass }, &[x])
    }

    fn concat(&mut self, parts: &[&Self::V]) -> Result<Self::V> {
        self.apply(Op::Concat, parts)
    }

    fn crop(&mut self, x: &Self::V, c0: usize, c1: usize, y0: usize, x0: usize, h: usize, w: usize) -> Result<Self::V> {
        self.apply(Op::Crop { c0, c1, y0, x0, h, w }, &[x])
    }

    fn channels(&mut self, x: &Self::V, c0: usize, c1: usize) -> Result<Self::V> {
        let (_, h, w) = self.shape(x);
        self.crop(x, c0, c1, 0, 0, h, w)
    }

    fn sum(&mut self, x: &Self::V) -> Result<Self::V> {
        self.apply(Op::Sum, &[x])
    }

    fn mean(&mut self, x: &Self::V) -> Result<Self::V> {
        self.apply(Op::Mean, &[x])
    }
}

/// Forward-only graph.
pub struct Eval<'a> {
    params: &'a ParamStore,
}

impl<'a> Eval<'a> {
    pub fn new(params: &'a ParamStore) -> Self {
        Eval { params }
    }
}

impl Graph for Eval<'_> {
    type V = Arc<Tensor3>;

    fn input(&mut self, t: Tensor3) -> Arc<Tensor3> {
        Arc::new(t)
    }

    fn constant(&mut self, t: Tensor3) -> Arc<Tensor3> {
        Arc::new(t)
    }

    fn param(&mut self, name: &str) -> Result<Arc<Tensor3>> {
        Ok(self.params.value(name)?.clone())
    }

    fn value<'b>(&'b self, v: &'b Arc<Tensor3>) -> &'b Tensor3 {
        v
    }

    fn apply(&mut self, op: Op, inputs: &[&Arc<Tensor3>]) -> Result<Arc<Tensor3>> {
        let xs: Vec<&Tensor3> = inputs.iter().map(|v| v.as_ref()).collect();
        Ok(Arc::new(forward(&op, &xs)?))
    }
}
