//! PSNR and multi-scale SSIM on `[0, 1]` images.

use crate::error::{shape_err, Error, Result};
use crate::nn::ops::ssim_window;
use crate::tensor::Tensor3;

pub const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];
pub const MS_SSIM_MIN_DIM: usize = 176;
const K1: f64 = 0.01;
const K2: f64 = 0.03;

/// `10·log10(1/MSE)`; `+∞` for identical inputs.
pub fn psnr(a: &Tensor3, b: &Tensor3) -> Result<f64> {
    if !a.same_shape(b) {
        return Err(shape_err!("psnr: {:?} vs {:?}", a.shape(), b.shape()));
    }
    let mse = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (1.0 / mse).log10())
}

fn blur(x: &Tensor3) -> Tensor3 {
    let win = ssim_window();
    let k = win.len();
    let (c, h, w) = x.shape();
    let wo = w + 1 - k;
    let ho = h + 1 - k;
    let rows = Tensor3::from_fn(c, h, wo, |ci, y, ox| (0..k).map(|t| x.at(ci, y, ox + t) * win[t]).sum());
    Tensor3::from_fn(c, ho, wo, |ci, oy, ox| (0..k).map(|t| rows.at(ci, oy + t, ox) * win[t]).sum())
}

/// Per-channel mean SSIM and contrast-structure term at one scale.
fn ssim_terms(a: &Tensor3, b: &Tensor3) -> (Vec<f64>, Vec<f64>) {
    let (c1, c2) = (K1 * K1, K2 * K2);
    let mu_a = blur(a);
    let mu_b = blur(b);
    let aa = blur(&a.zip_map(a, |x, y| x * y).expect("same shape"));
    let bb = blur(&b.zip_map(b, |x, y| x * y).expect("same shape"));
    let ab = blur(&a.zip_map(b, |x, y| x * y).expect("same shape"));
    let n = mu_a.plane_len() as f64;
    let mut ssim = Vec::new();
    let mut cs = Vec::new();
    for ch in 0..a.channels() {
        let (mut s_sum, mut cs_sum) = (0.0, 0.0);
        for i in 0..mu_a.plane_len() {
            let (ma, mb) = (mu_a.plane(ch)[i], mu_b.plane(ch)[i]);
            let va = aa.plane(ch)[i] - ma * ma;
            let vb = bb.plane(ch)[i] - mb * mb;
            let cov = ab.plane(ch)[i] - ma * mb;
            let csv = (2.0 * cov + c2) / (va + vb + c2);
            let l = (2.0 * ma * mb + c1) / (ma * ma + mb * mb + c1);
            s_sum += l * csv;
            cs_sum += csv;
        }
        ssim.push(s_sum / n);
        cs.push(cs_sum / n);
    }
    (ssim, cs)
}

/// 2×2 average pooling, dropping a trailing odd row/column.
pub fn downsample2(x: &Tensor3) -> Tensor3 {
    let (c, h, w) = x.shape();
    Tensor3::from_fn(c, h / 2, w / 2, |ci, y, xx| {
        0.25 * (x.at(ci, 2 * y, 2 * xx) + x.at(ci, 2 * y, 2 * xx + 1) + x.at(ci, 2 * y + 1, 2 * xx) + x.at(ci, 2 * y + 1, 2 * xx + 1))
    })
}

/// Five-scale MS-SSIM (Gaussian 11×11, σ = 1.5, valid filtering), computed
/// per channel and averaged. Negative terms are clamped to zero.
pub fn ms_ssim(a: &Tensor3, b: &Tensor3) -> Result<f64> {
    if !a.same_shape(b) {
        return Err(shape_err!("ms_ssim: {:?} vs {:?}", a.shape(), b.shape()));
    }
    if a.height().min(a.width()) < MS_SSIM_MIN_DIM {
        return Err(Error::Argument(format!(
            "MS-SSIM needs both dims >= {MS_SSIM_MIN_DIM}, got {}x{}",
            a.height(),
            a.width()
        )));
    }
    let c = a.channels();
    let mut acc = vec![1.0; c];
    let (mut x, mut y) = (a.clone(), b.clone());
    for (s, &w) in MS_SSIM_WEIGHTS.iter().enumerate() {
        let (ssim, cs) = ssim_terms(&x, &y);
        let last = s + 1 == MS_SSIM_WEIGHTS.len();
        for ch in 0..c {
            let v = if last { ssim[ch] } else { cs[ch] };
            acc[ch] *= v.max(0.0).powf(w);
        }
        if !last {
            x = downsample2(&x);
            y = downsample2(&y);
        }
    }
    Ok(acc.iter().sum::<f64>() / c as f64)
}

/// `−10·log10(1 − v)`.
pub fn ms_ssim_db(v: f64) -> f64 {
    -10.0 * (1.0 - v).log10()
}
