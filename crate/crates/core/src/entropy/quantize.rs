//! Rounding quantizer and its additive-noise training surrogate.

use crate::error::{shape_err, Result};
use crate::tensor::{seeded_uniform, SeededRng, Tensor3};

/// Round half away from zero.
pub fn round_half_away(v: f64) -> f64 {
    v.round()
}

/// Mean-centred rounding: `symbols = round(y − μ)`, `dequant = symbols + μ`.
pub fn quantize(y: &Tensor3, mu: &Tensor3) -> Result<(Vec<i32>, Tensor3)> {
    if !y.same_shape(mu) {
        return Err(shape_err!("quantize: values {:?} vs means {:?}", y.shape(), mu.shape()));
    }
    let symbols: Vec<i32> = y.data().iter().zip(mu.data()).map(|(a, m)| round_half_away(a - m) as i32).collect();
    let dequant = dequantize(&symbols, mu)?;
    Ok((symbols, dequant))
}

pub fn dequantize(symbols: &[i32], mu: &Tensor3) -> Result<Tensor3> {
    if symbols.len() != mu.len() {
        return Err(shape_err!("dequantize: {} symbols for {} means", symbols.len(), mu.len()));
    }
    let (c, h, w) = mu.shape();
    Tensor3::from_vec(c, h, w, symbols.iter().zip(mu.data()).map(|(&s, m)| s as f64 + m).collect())
}

/// Training surrogate: `y + u`, `u ~ U(−0.5, 0.5)`.
pub fn add_uniform_noise(y: &Tensor3, rng: &mut SeededRng) -> Result<Tensor3> {
    let u = seeded_uniform(rng, y.shape(), -0.5, 0.5)?;
    y.zip_map(&u, |a, b| a + b)
}
