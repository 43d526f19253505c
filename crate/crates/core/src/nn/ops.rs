//! Differentiable operations: forward kernels and hand-written backward rules.

use crate::entropy::gaussian::bits_grad;
use crate::error::{shape_err, Result};
use crate::tensor::Tensor3;
use crate::wavelet::{dwt2d_packed, dwt_channel_packed, Lifting, Pass, WaveletKind};

use super::conv;

/// Window used by the SSIM family: 11 taps, sigma 1.5, unit sum.
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;

pub fn ssim_window() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

#[derive(Clone, Debug, PartialEq)]
pub enum Op {
    /// inputs: x, w `(C_out, C_in, K*K)`, b `(C_out, 1, 1)`
    Conv2d { stride: usize },
    /// inputs: x, w `(C_in, C_out, K*K)`, b `(C_out, 1, 1)`
    TConv2d { stride: usize },
    LeakyRelu { slope: f64 },
    Add,
    Sub,
    Mul,
    Div,
    Scale(f64),
    AddScalar(f64),
    Sigmoid,
    Tanh,
    Exp,
    /// Values are clamped to `[lo, hi]`; gradient passes strictly inside.
    Clamp { lo: f64, hi: f64 },
    /// `x^p`; inputs must be positive.
    PowScalar(f64),
    /// Packed linear channel DWT (`Analyze` or `Synthesize`).
    DwtChannel { kind: WaveletKind, pass: Pass },
    /// Packed linear multi-level 2D DWT.
    Dwt2d { kind: WaveletKind, levels: usize, pass: Pass },
    Concat,
    Crop { c0: usize, c1: usize, y0: usize, x0: usize, h: usize, w: usize },
    /// Zero canvas of `shape` with each input pasted at its `(c, y, x)` offset.
    Assemble { shape: (usize, usize, usize), offsets: Vec<(usize, usize, usize)> },
    AvgPool2,
    /// `(C, H, W) -> (C, 1, 1)`
    SpatialMean,
    /// Mean of everything, as a `1×1×1` scalar.
    Mean,
    Sum,
    /// `(C, 1, 1) -> (C, h, w)`
    Broadcast { h: usize, w: usize },
    /// inputs: x `(C, H, W)`, g `(C, 1, 1)`
    MulChannel,
    /// inputs: values, means, scales. Total bits of the unit-bin Gaussian
    /// likelihood as a scalar.
    GaussianBits,
    /// Mean squared difference of two tensors, as a scalar.
    SquaredErrorMean,
    /// Separable 11-tap Gaussian filter, valid region only.
    GaussianBlurValid,
}

fn same(a: &Tensor3, b: &Tensor3, what: &str) -> Result<()> {
    if !a.same_shape(b) {
        return Err(shape_err!("{}: shape mismatch {:?} vs {:?}", what, a.shape(), b.shape()));
    }
    Ok(())
}

fn expect_inputs(xs: &[&Tensor3], n: usize, op: &Op) -> Result<()> {
    if xs.len() != n {
        return Err(shape_err!("{:?} takes {} inputs, got {}", op, n, xs.len()));
    }
    Ok(())
}

fn blur_rows(x: &Tensor3, win: &[f64]) -> Tensor3 {
    let k = win.len();
    let (c, h, w) = x.shape();
    let wo = w + 1 - k;
    Tensor3::from_fn(c, h, wo, |ci, y, ox| {
        let row = &x.plane(ci)[y * w + ox..y * w + ox + k];
        row.iter().zip(win).map(|(a, b)| a * b).sum()
    })
}

fn blur_cols(x: &Tensor3, win: &[f64]) -> Tensor3 {
    let k = win.len();
    let (c, h, w) = x.shape();
    let ho = h + 1 - k;
    Tensor3::from_fn(c, ho, w, |ci, oy, x0| {
        let p = x.plane(ci);
        (0..k).map(|t| p[(oy + t) * w + x0] * win[t]).sum()
    })
}

fn blur_rows_adjoint(g: &Tensor3, win: &[f64], w: usize) -> Tensor3 {
    let (c, h, wo) = g.shape();
    let mut out = Tensor3::zeros(c, h, w);
    for ci in 0..c {
        for y in 0..h {
            for ox in 0..wo {
                let gv = g.at(ci, y, ox);
                for (t, &wt) in win.iter().enumerate() {
                    let i = (ci * h + y) * w + ox + t;
                    out.data_mut()[i] += gv * wt;
                }
            }
        }
    }
    out
}

fn blur_cols_adjoint(g: &Tensor3, win: &[f64], h: usize) -> Tensor3 {
    let (c, ho, w) = g.shape();
    let mut out = Tensor3::zeros(c, h, w);
    for ci in 0..c {
        for oy in 0..ho {
            for x in 0..w {
                let gv = g.at(ci, oy, x);
                for (t, &wt) in win.iter().enumerate() {
                    let i = (ci * h + oy + t) * w + x;
                    out.data_mut()[i] += gv * wt;
                }
            }
        }
    }
    out
}

fn adjoint_pass(pass: Pass) -> Pass {
    match pass {
        Pass::Analyze => Pass::AnalyzeAdjoint,
        Pass::Synthesize => Pass::SynthesizeAdjoint,
        Pass::AnalyzeAdjoint => Pass::Analyze,
        Pass::SynthesizeAdjoint => Pass::Synthesize,
    }
}

pub fn forward(op: &Op, xs: &[&Tensor3]) -> Result<Tensor3> {
    let unary = |n| expect_inputs(xs, n, op);
    match op {
        Op::Conv2d { stride } => {
            unary(3)?;
            conv::conv2d_forward(xs[0], xs[1], xs[2], *stride)
        }
        Op::TConv2d { stride } => {
            unary(3)?;
            conv::tconv2d_forward(xs[0], xs[1], xs[2], *stride)
        }
        Op::LeakyRelu { slope } => {
            unary(1)?;
            let s = *slope;
            Ok(xs[0].map(|v| if v >= 0.0 { v } else { s * v }))
        }
        Op::Add => {
            unary(2)?;
            xs[0].zip_map(xs[1], |a, b| a + b)
        }
        Op::Sub => {
            unary(2)?;
            xs[0].zip_map(xs[1], |a, b| a - b)
        }
        Op::Mul => {
            unary(2)?;
            xs[0].zip_map(xs[1], |a, b| a * b)
        }
        Op::Div => {
            unary(2)?;
            xs[0].zip_map(xs[1], |a, b| a / b)
        }
        Op::Scale(k) => {
            unary(1)?;
            Ok(xs[0].map(|v| v * k))
        }
        Op::AddScalar(k) => {
            unary(1)?;
            Ok(xs[0].map(|v| v + k))
        }
        Op::Sigmoid => {
            unary(1)?;
            Ok(xs[0].map(sigmoid))
        }
        Op::Tanh => {
            unary(1)?;
            Ok(xs[0].map(f64::tanh))
        }
        Op::Exp => {
            unary(1)?;
            Ok(xs[0].map(f64::exp))
        }
        Op::Clamp { lo, hi } => {
            unary(1)?;
            Ok(xs[0].map(|v| v.clamp(*lo, *hi)))
        }
        Op::PowScalar(p) => {
            unary(1)?;
            Ok(xs[0].map(|v| v.powf(*p)))
        }
        Op::DwtChannel { kind, pass } => {
            unary(1)?;
            dwt_channel_packed(xs[0], &Lifting::linear(*kind), *pass)
        }
        Op::Dwt2d { kind, levels, pass } => {
            unary(1)?;
            dwt2d_packed(xs[0], &Lifting::linear(*kind), *levels, *pass)
        }
        Op::Concat => Tensor3::concat_channels(xs),
        Op::Crop { c0, c1, y0, x0, h, w } => {
            unary(1)?;
            xs[0].crop(*c0, *c1, *y0, *x0, *h, *w)
        }
        Op::Assemble { shape, offsets } => {
            unary(offsets.len())?;
            let mut out = Tensor3::zeros(shape.0, shape.1, shape.2);
            for (x, &(c, y, xo)) in xs.iter().zip(offsets) {
                out.paste(x, c, y, xo)?;
            }
            Ok(out)
        }
        Op::AvgPool2 => {
            unary(1)?;
            let (c, h, w) = xs[0].shape();
            if h % 2 != 0 || w % 2 != 0 {
                return Err(shape_err!("average pooling needs even dims, got {}x{}", h, w));
            }
            let x = xs[0];
            Ok(Tensor3::from_fn(c, h / 2, w / 2, |ci, y, xx| {
                0.25 * (x.at(ci, 2 * y, 2 * xx)
                    + x.at(ci, 2 * y, 2 * xx + 1)
                    + x.at(ci, 2 * y + 1, 2 * xx)
                    + x.at(ci, 2 * y + 1, 2 * xx + 1))
            }))
        }
        Op::SpatialMean => {
            unary(1)?;
            let x = xs[0];
            let n = x.plane_len() as f64;
            let means = (0..x.channels()).map(|c| compensated_sum(x.plane(c).iter().copied()) / n).collect();
            Tensor3::from_vec(x.channels(), 1, 1, means)
        }
        Op::Mean => {
            unary(1)?;
            Ok(Tensor3::scalar(compensated_sum(xs[0].data().iter().copied()) / xs[0].len() as f64))
        }
        Op::Sum => {
            unary(1)?;
            Ok(Tensor3::scalar(compensated_sum(xs[0].data().iter().copied())))
        }
        Op::Broadcast { h, w } => {
            unary(1)?;
            let x = xs[0];
            if x.height() != 1 || x.width() != 1 {
                return Err(shape_err!("broadcast expects (C, 1, 1), got {:?}", x.shape()));
            }
            Ok(Tensor3::from_fn(x.channels(), *h, *w, |c, _, _| x.at(c, 0, 0)))
        }
        Op::MulChannel => {
            unary(2)?;
            let (x, g) = (xs[0], xs[1]);
            if g.shape() != (x.channels(), 1, 1) {
                return Err(shape_err!("channel gate {:?} does not match {:?}", g.shape(), x.shape()));
            }
            let n = x.plane_len();
            let mut out = x.clone();
            for c in 0..x.channels() {
                let k = g.at(c, 0, 0);
                out.data_mut()[c * n..(c + 1) * n].iter_mut().for_each(|v| *v *= k);
            }
            Ok(out)
        }
        Op::GaussianBits => {
            unary(3)?;
            same(xs[0], xs[1], "gaussian bits mean")?;
            same(xs[0], xs[2], "gaussian bits scale")?;
            let bits = compensated_sum(
                xs[0].data().iter().zip(xs[1].data()).zip(xs[2].data()).map(|((&y, &m), &s)| bits_grad(y - m, s).0),
            );
            Ok(Tensor3::scalar(bits))
        }
        Op::SquaredErrorMean => {
            unary(2)?;
            same(xs[0], xs[1], "squared error")?;
            let n = xs[0].len() as f64;
            let s = compensated_sum(xs[0].data().iter().zip(xs[1].data()).map(|(a, b)| (a - b) * (a - b)));
            Ok(Tensor3::scalar(s / n))
        }
        Op::GaussianBlurValid => {
            unary(1)?;
            let (_, h, w) = xs[0].shape();
            if h < SSIM_WINDOW || w < SSIM_WINDOW {
                return Err(shape_err!("{}x{} smaller than the {}-tap window", h, w, SSIM_WINDOW));
            }
            let win = ssim_window();
            Ok(blur_cols(&blur_rows(xs[0], &win), &win))
        }
    }
}

/// Neumaier-compensated sum. Scalar losses reduce thousands of terms, and
/// finite-difference checks need their rounding error well below `ε·∂L`.
pub fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let (mut sum, mut c) = (0.0f64, 0.0f64);
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            c += (sum - t) + v;
        } else {
            c += (v - t) + sum;
        }
        sum = t;
    }
    sum + c
}

#[inline]
pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Gradients with respect to each input, given the output gradient `g`.
pub fn backward(op: &Op, xs: &[&Tensor3], out: &Tensor3, g: &Tensor3) -> Result<Vec<Tensor3>> {
    let ew = |f: &dyn Fn(f64, f64, f64) -> f64| -> Tensor3 {
        // f(x, y, g) for elementwise unary ops
        let data = xs[0].data().iter().zip(out.data()).zip(g.data()).map(|((&x, &y), &gv)| f(x, y, gv)).collect();
        Tensor3::from_vec(xs[0].channels(), xs[0].height(), xs[0].width(), data).expect("same shape")
    };
    Ok(match op {
        Op::Conv2d { stride } => {
            let (dx, dw, db) = conv::conv2d_backward(xs[0], xs[1], xs[2], *stride, g)?;
            vec![dx, dw, db]
        }
        Op::TConv2d { stride } => {
            let (dx, dw, db) = conv::tconv2d_backward(xs[0], xs[1], xs[2], *stride, g)?;
            vec![dx, dw, db]
        }
        Op::LeakyRelu { slope } => {
            let s = *slope;
            vec![ew(&|x, _, gv| if x >= 0.0 { gv } else { s * gv })]
        }
        Op::Add => vec![g.clone(), g.clone()],
        Op::Sub => vec![g.clone(), g.map(|v| -v)],
        Op::Mul => vec![g.zip_map(xs[1], |a, b| a * b)?, g.zip_map(xs[0], |a, b| a * b)?],
        Op::Div => {
            let da = g.zip_map(xs[1], |gv, b| gv / b)?;
            let db = g.zip_map(out, |gv, q| gv * q)?.zip_map(xs[1], |v, b| -v / b)?;
            vec![da, db]
        }
        Op::Scale(k) => vec![g.map(|v| v * k)],
        Op::AddScalar(_) => vec![g.clone()],
        Op::Sigmoid => vec![ew(&|_, y, gv| gv * y * (1.0 - y))],
        Op::Tanh => vec![ew(&|_, y, gv| gv * (1.0 - y * y))],
        Op::Exp => vec![ew(&|_, y, gv| gv * y)],
        Op::Clamp { lo, hi } => {
            let (lo, hi) = (*lo, *hi);
            vec![ew(&|x, _, gv| if x > lo && x < hi { gv } else { 0.0 })]
        }
        Op::PowScalar(p) => {
            let p = *p;
            vec![ew(&|x, _, gv| gv * p * x.powf(p - 1.0))]
        }
        Op::DwtChannel { kind, pass } => vec![dwt_channel_packed(g, &Lifting::linear(*kind), adjoint_pass(*pass))?],
        Op::Dwt2d { kind, levels, pass } => {
            vec![dwt2d_packed(g, &Lifting::linear(*kind), *levels, adjoint_pass(*pass))?]
        }
        Op::Concat => {
            let mut c0 = 0;
            let mut grads = Vec::with_capacity(xs.len());
            for x in xs {
                grads.push(g.slice_channels(c0, c0 + x.channels())?);
                c0 += x.channels();
            }
            grads
        }
        Op::Crop { c0, c1: _, y0, x0, h: _, w: _ } => {
            let mut dx = Tensor3::zeros(xs[0].channels(), xs[0].height(), xs[0].width());
            dx.paste(g, *c0, *y0, *x0)?;
            vec![dx]
        }
        Op::Assemble { offsets, .. } => {
            let mut grads = Vec::with_capacity(xs.len());
            for (x, &(c, y, xo)) in xs.iter().zip(offsets) {
                grads.push(g.crop(c, c + x.channels(), y, xo, x.height(), x.width())?);
            }
            grads
        }
        Op::AvgPool2 => {
            let (c, h, w) = xs[0].shape();
            vec![Tensor3::from_fn(c, h, w, |ci, y, x| 0.25 * g.at(ci, y / 2, x / 2))]
        }
        Op::SpatialMean => {
            let (c, h, w) = xs[0].shape();
            let n = (h * w) as f64;
            vec![Tensor3::from_fn(c, h, w, |ci, _, _| g.at(ci, 0, 0) / n)]
        }
        Op::Mean => {
            let k = g.item() / xs[0].len() as f64;
            vec![xs[0].map(|_| k)]
        }
        Op::Sum => {
            let k = g.item();
            vec![xs[0].map(|_| k)]
        }
        Op::Broadcast { .. } => {
            let n = g.plane_len();
            let sums = (0..g.channels()).map(|c| g.data()[c * n..(c + 1) * n].iter().sum()).collect();
            vec![Tensor3::from_vec(g.channels(), 1, 1, sums)?]
        }
        Op::MulChannel => {
            let (x, gate) = (xs[0], xs[1]);
            let n = x.plane_len();
            let mut dx = g.clone();
            let mut dg = Vec::with_capacity(x.channels());
            for c in 0..x.channels() {
                let k = gate.at(c, 0, 0);
                let gs = &mut dx.data_mut()[c * n..(c + 1) * n];
                let xs_c = x.plane(c);
                dg.push(gs.iter().zip(xs_c).map(|(a, b)| a * b).sum());
                gs.iter_mut().for_each(|v| *v *= k);
            }
            vec![dx, Tensor3::from_vec(x.channels(), 1, 1, dg)?]
        }
        Op::GaussianBits => {
            let k = g.item();
            let (c, h, w) = xs[0].shape();
            let mut dy = Vec::with_capacity(xs[0].len());
            let mut ds = Vec::with_capacity(xs[0].len());
            for ((&y, &m), &s) in xs[0].data().iter().zip(xs[1].data()).zip(xs[2].data()) {
                let (_, dr, dsig) = bits_grad(y - m, s);
                dy.push(k * dr);
                ds.push(k * dsig);
            }
            let dy = Tensor3::from_vec(c, h, w, dy)?;
            let dm = dy.map(|v| -v);
            vec![dy, dm, Tensor3::from_vec(c, h, w, ds)?]
        }
        Op::SquaredErrorMean => {
            let k = 2.0 * g.item() / xs[0].len() as f64;
            let da = xs[0].zip_map(xs[1], |a, b| k * (a - b))?;
            let db = da.map(|v| -v);
            vec![da, db]
        }
        Op::GaussianBlurValid => {
            let win = ssim_window();
            let (_, h, w) = xs[0].shape();
            vec![blur_rows_adjoint(&blur_cols_adjoint(g, &win, h), &win, w)]
        }
    })
}
