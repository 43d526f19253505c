//! Convolution kernels (im2col + GEMM) shared by the forward and backward
//! passes.
//!
//! Weights are stored as `Tensor3` with shape `(rows, cols, K*K)`: for a
//! regular convolution `rows = C_out, cols = C_in`; a transposed convolution
//! stores the weight of the adjoint regular convolution, i.e.
//! `rows = C_in, cols = C_out`. Padding is `K/2` zeros on every side.

use rayon::prelude::*;

use crate::error::{shape_err, Result};
use crate::tensor::Tensor3;

/// Output positions handled per GEMM call. Fixed so results never depend on
/// the thread count.
const CHUNK_POSITIONS: usize = 4096;

#[derive(Clone, Copy, Debug)]
struct Geom {
    /// Channels, height and width of the full-resolution side.
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    s: usize,
    pad: usize,
    /// Output grid of the (regular) convolution.
    ho: usize,
    wo: usize,
}

impl Geom {
    fn new(c: usize, h: usize, w: usize, k: usize, s: usize) -> Self {
        Geom { c, h, w, k, s, pad: k / 2, ho: h / s, wo: w / s }
    }

    fn rows(&self) -> usize {
        self.c * self.k * self.k
    }

    fn positions(&self) -> usize {
        self.ho * self.wo
    }

    /// Row ranges `[oy0, oy1)` of the output grid, one per chunk.
    fn chunks(&self) -> Vec<(usize, usize)> {
        let per = (CHUNK_POSITIONS / self.wo.max(1)).max(1);
        (0..self.ho).step_by(per).map(|r| (r, (r + per).min(self.ho))).collect()
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.s == 1
    }
}

fn im2col(x: &[f64], g: &Geom, oy0: usize, oy1: usize, col: &mut Vec<f64>) {
    let n = (oy1 - oy0) * g.wo;
    col.clear();
    col.resize(g.rows() * n, 0.0);
    for ci in 0..g.c {
        let plane = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for kh in 0..g.k {
            for kw in 0..g.k {
                let r = (ci * g.k + kh) * g.k + kw;
                let dst = &mut col[r * n..(r + 1) * n];
                for oy in oy0..oy1 {
                    let iy = (oy * g.s + kh) as isize - g.pad as isize;
                    let row = &mut dst[(oy - oy0) * g.wo..(oy - oy0 + 1) * g.wo];
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, d) in row.iter_mut().enumerate() {
                        let ix = (ox * g.s + kw) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            *d = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
}

fn col2im_add(col: &[f64], g: &Geom, oy0: usize, oy1: usize, x: &mut [f64]) {
    let n = (oy1 - oy0) * g.wo;
    for ci in 0..g.c {
        let plane = &mut x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for kh in 0..g.k {
            for kw in 0..g.k {
                let r = (ci * g.k + kh) * g.k + kw;
                let src = &col[r * n..(r + 1) * n];
                for oy in oy0..oy1 {
                    let iy = (oy * g.s + kh) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let row = &src[(oy - oy0) * g.wo..(oy - oy0 + 1) * g.wo];
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, &v) in row.iter().enumerate() {
                        let ix = (ox * g.s + kw) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

/// `C[m×n] = A[m×k] * B[k×n] + beta * C`, all slices with explicit
/// row/column strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: usize,
    csa: usize,
    b: &[f64],
    rsb: usize,
    csb: usize,
    beta: f64,
    c: &mut [f64],
    rsc: usize,
    csc: usize,
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(a.len() > (m - 1) * rsa + k.saturating_sub(1) * csa || k == 0);
    assert!(b.len() > k.saturating_sub(1) * rsb + (n - 1) * csb || k == 0);
    assert!(c.len() > (m - 1) * rsc + (n - 1) * csc);
    // SAFETY: the asserts above bound every index touched by the kernel.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

pub fn kernel_size(w: &Tensor3) -> Result<usize> {
    let kk = w.width();
    let k = (kk as f64).sqrt().round() as usize;
    if k * k != kk || k.is_multiple_of(2) {
        return Err(shape_err!("weight last dim {} is not an odd square kernel", kk));
    }
    Ok(k)
}

fn check_bias(b: &Tensor3, c: usize) -> Result<()> {
    if b.shape() != (c, 1, 1) {
        return Err(shape_err!("bias shape {:?}, expected ({}, 1, 1)", b.shape(), c));
    }
    Ok(())
}

fn add_bias(out: &mut Tensor3, b: &Tensor3) {
    let n = out.plane_len();
    for (c, &bv) in b.data().iter().enumerate() {
        if bv != 0.0 {
            out.data_mut()[c * n..(c + 1) * n].iter_mut().for_each(|v| *v += bv);
        }
    }
}

fn bias_grad(dy: &Tensor3) -> Tensor3 {
    let n = dy.plane_len();
    let sums = (0..dy.channels()).map(|c| dy.data()[c * n..(c + 1) * n].iter().sum()).collect();
    Tensor3::from_vec(dy.channels(), 1, 1, sums).expect("bias grad shape")
}

fn conv_geom(x: &Tensor3, w: &Tensor3, b: &Tensor3, stride: usize) -> Result<Geom> {
    let k = kernel_size(w)?;
    let (c, h, wd) = x.shape();
    if w.height() != c {
        return Err(shape_err!("conv expects {} input channels, got {}", w.height(), c));
    }
    if stride == 0 || h % stride != 0 || wd % stride != 0 {
        return Err(shape_err!("spatial dims {}x{} not divisible by stride {}", h, wd, stride));
    }
    check_bias(b, w.channels())?;
    Ok(Geom::new(c, h, wd, k, stride))
}

/// Regular convolution. `x: (C_in, H, W)`, `w: (C_out, C_in, K*K)`, `b: (C_out, 1, 1)`.
pub fn conv2d_forward(x: &Tensor3, w: &Tensor3, b: &Tensor3, stride: usize) -> Result<Tensor3> {
    let g = conv_geom(x, w, b, stride)?;
    let cout = w.channels();
    let rows = g.rows();
    let mut out = Tensor3::zeros(cout, g.ho, g.wo);
    let np = g.positions();
    if g.is_pointwise() {
        gemm(cout, rows, np, w.data(), rows, 1, x.data(), np, 1, 0.0, out.data_mut(), np, 1);
    } else {
        let chunks = g.chunks();
        let parts: Vec<Vec<f64>> = chunks
            .par_iter()
            .map(|&(oy0, oy1)| {
                let n = (oy1 - oy0) * g.wo;
                let mut col = Vec::new();
                im2col(x.data(), &g, oy0, oy1, &mut col);
                let mut part = vec![0.0; cout * n];
                gemm(cout, rows, n, w.data(), rows, 1, &col, n, 1, 0.0, &mut part, n, 1);
                part
            })
            .collect();
        let od = out.data_mut();
        for (&(oy0, oy1), part) in chunks.iter().zip(&parts) {
            let n = (oy1 - oy0) * g.wo;
            let p0 = oy0 * g.wo;
            for co in 0..cout {
                od[co * np + p0..co * np + p0 + n].copy_from_slice(&part[co * n..(co + 1) * n]);
            }
        }
    }
    add_bias(&mut out, b);
    Ok(out)
}

/// Gradients of [`conv2d_forward`]: `(dx, dw, db)`.
pub fn conv2d_backward(x: &Tensor3, w: &Tensor3, b: &Tensor3, stride: usize, dy: &Tensor3) -> Result<(Tensor3, Tensor3, Tensor3)> {
    let g = conv_geom(x, w, b, stride)?;
    let cout = w.channels();
    let rows = g.rows();
    let np = g.positions();
    let mut dx = Tensor3::zeros(g.c, g.h, g.w);
    let mut dw = Tensor3::zeros(w.channels(), w.height(), w.width());
    if g.is_pointwise() {
        gemm(cout, np, rows, dy.data(), np, 1, x.data(), 1, np, 0.0, dw.data_mut(), rows, 1);
        gemm(rows, cout, np, w.data(), 1, rows, dy.data(), np, 1, 0.0, dx.data_mut(), np, 1);
    } else {
        let mut col = Vec::new();
        let mut dcol = Vec::new();
        for (oy0, oy1) in g.chunks() {
            let n = (oy1 - oy0) * g.wo;
            let p0 = oy0 * g.wo;
            im2col(x.data(), &g, oy0, oy1, &mut col);
            let dys = &dy.data()[p0..];
            gemm(cout, n, rows, dys, np, 1, &col, 1, n, 1.0, dw.data_mut(), rows, 1);
            dcol.clear();
            dcol.resize(rows * n, 0.0);
            gemm(rows, cout, n, w.data(), 1, rows, dys, np, 1, 0.0, &mut dcol, n, 1);
            col2im_add(&dcol, &g, oy0, oy1, dx.data_mut());
        }
    }
    Ok((dx, dw, bias_grad(dy)))
}

fn tconv_geom(x: &Tensor3, w: &Tensor3, b: &Tensor3, stride: usize) -> Result<Geom> {
    let k = kernel_size(w)?;
    let (cin, h, wd) = x.shape();
    if w.channels() != cin {
        return Err(shape_err!("transposed conv expects {} input channels, got {}", w.channels(), cin));
    }
    if stride == 0 {
        return Err(shape_err!("stride must be positive"));
    }
    check_bias(b, w.height())?;
    Ok(Geom::new(w.height(), h * stride, wd * stride, k, stride))
}

/// Transposed convolution with exact `stride×` upsampling.
/// `x: (C_in, h, w)`, `w: (C_in, C_out, K*K)`, output `(C_out, s*h, s*w)`.
pub fn tconv2d_forward(x: &Tensor3, w: &Tensor3, b: &Tensor3, stride: usize) -> Result<Tensor3> {
    let g = tconv_geom(x, w, b, stride)?;
    let cin = w.channels();
    let rows = g.rows();
    let np = g.positions();
    let mut out = Tensor3::zeros(g.c, g.h, g.w);
    let mut col = Vec::new();
    for (oy0, oy1) in g.chunks() {
        let n = (oy1 - oy0) * g.wo;
        let p0 = oy0 * g.wo;
        col.clear();
        col.resize(rows * n, 0.0);
        gemm(rows, cin, n, w.data(), 1, rows, &x.data()[p0..], np, 1, 0.0, &mut col, n, 1);
        col2im_add(&col, &g, oy0, oy1, out.data_mut());
    }
    add_bias(&mut out, b);
    Ok(out)
}

pub fn tconv2d_backward(x: &Tensor3, w: &Tensor3, b: &Tensor3, stride: usize, dy: &Tensor3) -> Result<(Tensor3, Tensor3, Tensor3)> {
    let g = tconv_geom(x, w, b, stride)?;
    let cin = w.channels();
    let rows = g.rows();
    let np = g.positions();
    let mut dx = Tensor3::zeros(cin, g.ho, g.wo);
    let mut dw = Tensor3::zeros(w.channels(), w.height(), w.width());
    let mut col = Vec::new();
    for (oy0, oy1) in g.chunks() {
        let n = (oy1 - oy0) * g.wo;
        let p0 = oy0 * g.wo;
        im2col(dy.data(), &g, oy0, oy1, &mut col);
        gemm(cin, rows, n, w.data(), rows, 1, &col, n, 1, 0.0, &mut dx.data_mut()[p0..], np, 1);
        gemm(cin, n, rows, &x.data()[p0..], np, 1, &col, 1, n, 1.0, dw.data_mut(), rows, 1);
    }
    Ok((dx, dw, bias_grad(dy)))
}
