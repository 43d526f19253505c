//! Convolution specs, residual blocks and their parameter registration.

use crate::error::{Error, Result};
use crate::tensor::{seeded_normal, SeededRng, Tensor3};

use super::graph::Graph;
use super::params::ParamStore;

pub const LEAKY_SLOPE: f64 = 0.2;

/// Second convolution of a residual branch starts small so fresh blocks
/// stay close to the identity.
const RESIDUAL_GAIN: f64 = 0.1;
/// Init gain for a convolution with no activation after it: turns the
/// He scale into a variance-preserving one.
pub const LINEAR_GAIN: f64 = std::f64::consts::FRAC_1_SQRT_2;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub kernel: usize,
    pub stride: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub transposed: bool,
}

impl ConvSpec {
    pub fn conv(kernel: usize, stride: usize, c_in: usize, c_out: usize) -> Self {
        ConvSpec { kernel, stride, c_in, c_out, transposed: false }
    }

    pub fn tconv(kernel: usize, stride: usize, c_in: usize, c_out: usize) -> Self {
        ConvSpec { kernel, stride, c_in, c_out, transposed: true }
    }

    /// Weights plus biases: `K²·C_in·C_out + C_out`.
    pub fn param_count(&self) -> usize {
        self.kernel * self.kernel * self.c_in * self.c_out + self.c_out
    }

    fn validate(&self) -> Result<()> {
        if self.kernel == 0 || self.kernel.is_multiple_of(2) || self.stride == 0 || self.c_in == 0 || self.c_out == 0 {
            return Err(Error::Argument(format!("invalid convolution {self:?}")));
        }
        Ok(())
    }

    /// Register `{prefix}.w` / `{prefix}.b` with He-normal weights scaled by
    /// `gain` and zero biases.
    pub fn register(&self, store: &mut ParamStore, prefix: &str, rng: &mut SeededRng, gain: f64) -> Result<()> {
        self.validate()?;
        let kk = self.kernel * self.kernel;
        let (rows, cols) = if self.transposed { (self.c_in, self.c_out) } else { (self.c_out, self.c_in) };
        let fan_in = if self.transposed {
            (self.c_in * kk) as f64 / (self.stride * self.stride) as f64
        } else {
            (self.c_in * kk) as f64
        };
        let std = gain * (2.0 / fan_in.max(1.0)).sqrt();
        let w = seeded_normal(rng, (rows, cols, kk), std);
        store.insert(format!("{prefix}.w"), vec![rows, cols, self.kernel, self.kernel], w)?;
        store.insert(format!("{prefix}.b"), vec![self.c_out], Tensor3::zeros(self.c_out, 1, 1))?;
        Ok(())
    }

    pub fn apply<G: Graph>(&self, g: &mut G, x: &G::V, prefix: &str) -> Result<G::V> {
        if self.transposed {
            g.tconv2d(x, prefix, self.stride)
        } else {
            g.conv2d(x, prefix, self.stride)
        }
    }
}

/// `x + conv3(lrelu(conv3(x)))`, channels preserved.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ResBlock {
    pub channels: usize,
}

impl ResBlock {
    fn spec(&self) -> ConvSpec {
        ConvSpec::conv(3, 1, self.channels, self.channels)
    }

    pub fn param_count(&self) -> usize {
        2 * self.spec().param_count()
    }

    pub fn register(&self, store: &mut ParamStore, prefix: &str, rng: &mut SeededRng) -> Result<()> {
        self.spec().register(store, &format!("{prefix}.conv1"), rng, 1.0)?;
        self.spec().register(store, &format!("{prefix}.conv2"), rng, RESIDUAL_GAIN)
    }

    pub fn apply<G: Graph>(&self, g: &mut G, x: &G::V, prefix: &str) -> Result<G::V> {
        let h = g.conv2d(x, &format!("{prefix}.conv1"), 1)?;
        let h = g.leaky_relu(&h, LEAKY_SLOPE)?;
        let h = g.conv2d(&h, &format!("{prefix}.conv2"), 1)?;
        g.add(x, &h)
    }
}

/// A chain of residual blocks.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ResGroup {
    pub channels: usize,
    pub blocks: usize,
}

impl ResGroup {
    pub fn param_count(&self) -> usize {
        self.blocks * ResBlock { channels: self.channels }.param_count()
    }

    pub fn register(&self, store: &mut ParamStore, prefix: &str, rng: &mut SeededRng) -> Result<()> {
        for i in 0..self.blocks {
            ResBlock { channels: self.channels }.register(store, &format!("{prefix}.{i}"), rng)?;
        }
        Ok(())
    }

    pub fn apply<G: Graph>(&self, g: &mut G, x: &G::V, prefix: &str) -> Result<G::V> {
        let mut h = x.clone();
        for i in 0..self.blocks {
            h = ResBlock { channels: self.channels }.apply(g, &h, &format!("{prefix}.{i}"))?;
        }
        Ok(h)
    }
}
