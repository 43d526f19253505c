//! Dense `C×H×W` storage and seeded randomness.
//!
//! Layout is row-major within each channel, channels stored back to back:
//! element `(c, y, x)` lives at `(c * H + y) * W + x`. Everything that must be
//! bit-reproducible (bitstreams, checkpoints) relies on this order.

use rand_chacha::ChaCha20Rng;
use rand_core::{RngCore, SeedableRng};

use crate::error::{shape_err, Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor3 {
    c: usize,
    h: usize,
    w: usize,
    data: Vec<f64>,
}

impl Tensor3 {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Self::filled(c, h, w, 0.0)
    }

    pub fn filled(c: usize, h: usize, w: usize, v: f64) -> Self {
        Tensor3 { c, h, w, data: vec![v; c * h * w] }
    }

    pub fn from_vec(c: usize, h: usize, w: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != c * h * w {
            return Err(shape_err!(
                "data length {} does not match {}x{}x{}",
                data.len(),
                c,
                h,
                w
            ));
        }
        Ok(Tensor3 { c, h, w, data })
    }

    pub fn scalar(v: f64) -> Self {
        Tensor3 { c: 1, h: 1, w: 1, data: vec![v] }
    }

    pub fn from_fn(c: usize, h: usize, w: usize, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(c * h * w);
        for ci in 0..c {
            for y in 0..h {
                for x in 0..w {
                    data.push(f(ci, y, x));
                }
            }
        }
        Tensor3 { c, h, w, data }
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.c
    }
    #[inline]
    pub fn height(&self) -> usize {
        self.h
    }
    #[inline]
    pub fn width(&self) -> usize {
        self.w
    }
    #[inline]
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.c, self.h, self.w)
    }
    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }
    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
    #[inline]
    pub fn plane_len(&self) -> usize {
        self.h * self.w
    }
    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }
    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }
    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.h + y) * self.w + x]
    }
    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        self.data[(c * self.h + y) * self.w + x] = v;
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.plane_len();
        &self.data[c * n..(c + 1) * n]
    }
    pub fn plane_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.plane_len();
        &mut self.data[c * n..(c + 1) * n]
    }

    /// Scalar value of a `1×1×1` tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn same_shape(&self, other: &Tensor3) -> bool {
        self.shape() == other.shape()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor3 {
        Tensor3 { c: self.c, h: self.h, w: self.w, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_map(&self, other: &Tensor3, f: impl Fn(f64, f64) -> f64) -> Result<Tensor3> {
        if !self.same_shape(other) {
            return Err(shape_err!("shape mismatch {:?} vs {:?}", self.shape(), other.shape()));
        }
        Ok(Tensor3 {
            c: self.c,
            h: self.h,
            w: self.w,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn add_assign(&mut self, other: &Tensor3) {
        debug_assert!(self.same_shape(other));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale_assign(&mut self, k: f64) {
        self.data.iter_mut().for_each(|v| *v *= k);
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn sum_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn max_abs_diff(&self, other: &Tensor3) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Copy of channels `[from, to)`.
    pub fn slice_channels(&self, from: usize, to: usize) -> Result<Tensor3> {
        if from >= to || to > self.c {
            return Err(Error::Range(format!(
                "channel range [{from}, {to}) invalid for {} channels",
                self.c
            )));
        }
        let n = self.plane_len();
        Ok(Tensor3 { c: to - from, h: self.h, w: self.w, data: self.data[from * n..to * n].to_vec() })
    }

    /// Concatenate along the channel axis.
    pub fn concat_channels(parts: &[&Tensor3]) -> Result<Tensor3> {
        let first = parts.first().ok_or_else(|| shape_err!("cannot concatenate an empty list"))?;
        let (h, w) = (first.h, first.w);
        let mut data = Vec::with_capacity(parts.iter().map(|p| p.len()).sum());
        let mut c = 0;
        for p in parts {
            if p.h != h || p.w != w {
                return Err(shape_err!(
                    "spatial mismatch in concat: {}x{} vs {}x{}",
                    p.h,
                    p.w,
                    h,
                    w
                ));
            }
            data.extend_from_slice(&p.data);
            c += p.c;
        }
        Ok(Tensor3 { c, h, w, data })
    }

    /// Copy of the spatial window `[y0, y0+h) × [x0, x0+w)` over channels `[c0, c1)`.
    pub fn crop(&self, c0: usize, c1: usize, y0: usize, x0: usize, h: usize, w: usize) -> Result<Tensor3> {
        if c0 >= c1 || c1 > self.c || y0 + h > self.h || x0 + w > self.w || h == 0 || w == 0 {
            return Err(Error::Range(format!(
                "crop [{c0},{c1})x[{y0},+{h})x[{x0},+{w}) outside {:?}",
                self.shape()
            )));
        }
        let mut out = Tensor3::zeros(c1 - c0, h, w);
        for c in c0..c1 {
            for y in 0..h {
                let src = &self.data[((c * self.h) + y0 + y) * self.w + x0..][..w];
                let dst = (((c - c0) * h) + y) * w;
                out.data[dst..dst + w].copy_from_slice(src);
            }
        }
        Ok(out)
    }

    /// Write `part` into this tensor at channel `c0`, row `y0`, column `x0`.
    pub fn paste(&mut self, part: &Tensor3, c0: usize, y0: usize, x0: usize) -> Result<()> {
        if c0 + part.c > self.c || y0 + part.h > self.h || x0 + part.w > self.w {
            return Err(Error::Range(format!(
                "paste of {:?} at ({c0},{y0},{x0}) outside {:?}",
                part.shape(),
                self.shape()
            )));
        }
        for c in 0..part.c {
            for y in 0..part.h {
                let dst = (((c0 + c) * self.h) + y0 + y) * self.w + x0;
                let src = (c * part.h + y) * part.w;
                self.data[dst..dst + part.w].copy_from_slice(&part.data[src..src + part.w]);
            }
        }
        Ok(())
    }
}

/// Deterministic random source.
///
/// Backed by ChaCha20 (`rand_chacha::ChaCha20Rng`) seeded from a single `u64`;
/// floats are built from the top 53 bits of each 64-bit draw, so the stream is
/// identical on every platform.
#[derive(Clone, Debug)]
pub struct SeededRng {
    seed: u64,
    inner: ChaCha20Rng,
}

impl SeededRng {
    pub const ALGORITHM: &'static str = "chacha20";

    pub fn new(seed: u64) -> Self {
        SeededRng { seed, inner: ChaCha20Rng::seed_from_u64(seed) }
    }

    /// Independent stream for a labelled sub-task, e.g. `(iteration, sample)`.
    pub fn derive(seed: u64, a: u64, b: u64) -> Self {
        let mixed = splitmix(splitmix(seed ^ 0x9e37_79b9_7f4a_7c15) ^ a.wrapping_mul(0xbf58_476d_1ce4_e5b9) ^ b.rotate_left(29));
        SeededRng::new(mixed)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)`.
    pub fn next_f64(&mut self) -> f64 {
        (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        loop {
            let v = lo + (hi - lo) * self.next_f64();
            if v < hi {
                return v;
            }
        }
    }

    /// Standard normal via Box-Muller (one value per pair of draws).
    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    pub fn below(&mut self, n: usize) -> usize {
        (self.next_f64() * n as f64) as usize % n.max(1)
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Tensor of i.i.d. uniform samples in `[lo, hi)`.
pub fn seeded_uniform(rng: &mut SeededRng, shape: (usize, usize, usize), lo: f64, hi: f64) -> Result<Tensor3> {
    if !(lo < hi) {
        return Err(Error::Argument(format!("uniform bounds require lo < hi, got [{lo}, {hi})")));
    }
    let (c, h, w) = shape;
    let data = (0..c * h * w).map(|_| rng.uniform(lo, hi)).collect();
    Tensor3::from_vec(c, h, w, data)
}

pub fn seeded_normal(rng: &mut SeededRng, shape: (usize, usize, usize), std: f64) -> Tensor3 {
    let (c, h, w) = shape;
    let data = (0..c * h * w).map(|_| rng.normal() * std).collect();
    Tensor3 { c, h, w, data }
}
