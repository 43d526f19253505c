//! Separable multi-level transforms over [`Tensor3`].
//!
//! The working representation is "packed": a transform returns a tensor of
//! the same shape where each line has its low half first and high half
//! second. For the 2D transform this is the usual Mallat layout (deepest LL in
//! the top-left corner); for the channel transform it is
//! `[low group | high group]` along the channel axis.

use crate::error::{shape_err, Result};
use crate::tensor::Tensor3;

use super::lifting::Lifting;

/// Which linear map a line pass applies.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Pass {
    Analyze,
    Synthesize,
    /// Transpose of `Analyze` (gradient of a forward DWT).
    AnalyzeAdjoint,
    /// Transpose of `Synthesize` (gradient of an inverse DWT).
    SynthesizeAdjoint,
}

impl Pass {
    /// Interleaved input, packed output.
    fn packs(self) -> bool {
        matches!(self, Pass::Analyze | Pass::SynthesizeAdjoint)
    }
}

struct LineBuf {
    low: Vec<f64>,
    high: Vec<f64>,
}

impl LineBuf {
    fn new() -> Self {
        LineBuf { low: Vec::new(), high: Vec::new() }
    }

    /// Transform one strided line of length `len` starting at `start`.
    fn run(&mut self, data: &mut [f64], start: usize, stride: usize, len: usize, lifting: &Lifting, pass: Pass) {
        let n = len / 2;
        self.low.clear();
        self.high.clear();
        if pass.packs() {
            for i in 0..n {
                self.low.push(data[start + 2 * i * stride]);
                self.high.push(data[start + (2 * i + 1) * stride]);
            }
        } else {
            for i in 0..n {
                self.low.push(data[start + i * stride]);
                self.high.push(data[start + (n + i) * stride]);
            }
        }
        match pass {
            Pass::Analyze => lifting.analyze(&mut self.low, &mut self.high),
            Pass::Synthesize => lifting.synthesize(&mut self.low, &mut self.high),
            Pass::AnalyzeAdjoint => lifting.analyze_adjoint(&mut self.low, &mut self.high),
            Pass::SynthesizeAdjoint => lifting.synthesize_adjoint(&mut self.low, &mut self.high),
        }
        if pass.packs() {
            for i in 0..n {
                data[start + i * stride] = self.low[i];
                data[start + (n + i) * stride] = self.high[i];
            }
        } else {
            for i in 0..n {
                data[start + 2 * i * stride] = self.low[i];
                data[start + (2 * i + 1) * stride] = self.high[i];
            }
        }
    }
}

fn rows(plane: &mut [f64], full_w: usize, h: usize, w: usize, lifting: &Lifting, pass: Pass, buf: &mut LineBuf) {
    for y in 0..h {
        buf.run(plane, y * full_w, 1, w, lifting, pass);
    }
}

fn cols(plane: &mut [f64], full_w: usize, h: usize, w: usize, lifting: &Lifting, pass: Pass, buf: &mut LineBuf) {
    for x in 0..w {
        buf.run(plane, x, full_w, h, lifting, pass);
    }
}

pub fn check_2d_dims(h: usize, w: usize, levels: usize) -> Result<()> {
    if levels == 0 {
        return Err(shape_err!("2D DWT needs at least one level"));
    }
    let m = 1usize << levels;
    if !h.is_multiple_of(m) || !w.is_multiple_of(m) || h == 0 || w == 0 {
        return Err(shape_err!("{}x{} not divisible by 2^{} for a {}-level 2D DWT", h, w, levels, levels));
    }
    Ok(())
}

/// Apply a multi-level 2D pass to every channel in place (packed layout).
pub fn dwt2d_in_place(t: &mut Tensor3, lifting: &Lifting, levels: usize, pass: Pass) -> Result<()> {
    let (c, h, w) = t.shape();
    check_2d_dims(h, w, levels)?;
    let mut buf = LineBuf::new();
    let order: Vec<usize> = match pass {
        Pass::Analyze | Pass::SynthesizeAdjoint => (0..levels).collect(),
        Pass::Synthesize | Pass::AnalyzeAdjoint => (0..levels).rev().collect(),
    };
    for ch in 0..c {
        let plane = t.plane_mut(ch);
        for &lvl in &order {
            let (lh, lw) = (h >> lvl, w >> lvl);
            match pass {
                Pass::Analyze | Pass::SynthesizeAdjoint => {
                    rows(plane, w, lh, lw, lifting, pass, &mut buf);
                    cols(plane, w, lh, lw, lifting, pass, &mut buf);
                }
                Pass::Synthesize | Pass::AnalyzeAdjoint => {
                    cols(plane, w, lh, lw, lifting, pass, &mut buf);
                    rows(plane, w, lh, lw, lifting, pass, &mut buf);
                }
            }
        }
    }
    Ok(())
}

pub fn dwt2d_packed(t: &Tensor3, lifting: &Lifting, levels: usize, pass: Pass) -> Result<Tensor3> {
    let mut out = t.clone();
    dwt2d_in_place(&mut out, lifting, levels, pass)?;
    Ok(out)
}

/// Channel-axis pass in place: at every pixel the `C` values form one line.
pub fn dwt_channel_in_place(t: &mut Tensor3, lifting: &Lifting, pass: Pass) -> Result<()> {
    let (c, _, _) = t.shape();
    if c < 2 || c % 2 != 0 {
        return Err(shape_err!("channel DWT needs an even channel count, got {}", c));
    }
    let n = t.plane_len();
    let mut buf = LineBuf::new();
    let data = t.data_mut();
    for p in 0..n {
        buf.run(data, p, n, c, lifting, pass);
    }
    Ok(())
}

pub fn dwt_channel_packed(t: &Tensor3, lifting: &Lifting, pass: Pass) -> Result<Tensor3> {
    let mut out = t.clone();
    dwt_channel_in_place(&mut out, lifting, pass)?;
    Ok(out)
}
