//! Quantization, probability tables, range coding and rate estimation.

pub mod gaussian;
mod pmf;
mod prior;
mod quantize;
mod range_coder;

pub use pmf::{
    estimate_rate, grid_scale, scale_index, scale_tables, table_for, PmfTable, ESCAPE_BITS, MAX_SUPPORT, PRECISION,
    SCALE_LEVELS, SIGMA_MAX, SIGMA_MIN, TOTAL,
};
pub use prior::FactorizedPrior;
pub use quantize::{add_uniform_noise, dequantize, quantize, round_half_away};
pub use range_coder::{range_decode, range_encode, RangeDecoder, RangeEncoder};
