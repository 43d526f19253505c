//! Integer frequency tables for discretized Gaussians.

use std::sync::OnceLock;

use crate::error::{Error, Result};

use super::gaussian::bin_mass;
use super::gaussian::normal_cdf;
use super::quantize::round_half_away;

pub const PRECISION: u32 = 16;
pub const TOTAL: u32 = 1 << PRECISION;
/// Largest residual magnitude with its own table entry.
pub const MAX_SUPPORT: i32 = 4096;
pub const SIGMA_MIN: f64 = 0.11;
pub const SIGMA_MAX: f64 = 256.0;
/// Number of log-spaced scales tables are built for.
pub const SCALE_LEVELS: usize = 128;
/// Bits spent on the raw value after an escape symbol.
pub const ESCAPE_BITS: f64 = 32.0;

/// Cumulative frequency table over the residuals `min..min+len`, optionally
/// followed by an escape entry for anything outside.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PmfTable {
    min: i32,
    freqs: Vec<u32>,
    /// `cum[i]` = sum of `freqs[..i]`; one longer than `freqs`.
    cum: Vec<u32>,
    escape: bool,
}

impl PmfTable {
    /// Build from explicit frequencies; they must be positive and sum to
    /// [`TOTAL`]. With `escape`, the last entry is the escape bucket.
    pub fn from_freqs(min: i32, freqs: Vec<u32>, escape: bool) -> Result<PmfTable> {
        if freqs.is_empty() || freqs.contains(&0) {
            return Err(Error::Argument("frequencies must be positive".into()));
        }
        if escape && freqs.len() < 2 {
            return Err(Error::Argument("escape table needs at least one symbol".into()));
        }
        let mut cum = Vec::with_capacity(freqs.len() + 1);
        let mut acc = 0u64;
        cum.push(0);
        for &f in &freqs {
            acc += f as u64;
            if acc > TOTAL as u64 {
                break;
            }
            cum.push(acc as u32);
        }
        if acc != TOTAL as u64 {
            return Err(Error::Argument(format!("frequencies sum to {acc}, expected {TOTAL}")));
        }
        Ok(PmfTable { min, freqs, cum, escape })
    }

    /// Discretized zero-mean Gaussian with scale `sigma` (clamped to
    /// `[SIGMA_MIN, SIGMA_MAX]`). Support covers `±min(4096, ceil(6σ)+1)`;
    /// everything further out shares the escape bucket.
    pub fn for_scale(sigma: f64) -> PmfTable {
        let sigma = if sigma.is_finite() { sigma.clamp(SIGMA_MIN, SIGMA_MAX) } else { SIGMA_MAX };
        let t = ((6.0 * sigma).ceil() as i32 + 1).min(MAX_SUPPORT);
        let mut p: Vec<f64> = (-t..=t).map(|k| bin_mass(k as f64, sigma)).collect();
        p.push(2.0 * normal_cdf(-(t as f64 + 0.5) / sigma));
        let mut freqs: Vec<u32> = p.iter().map(|&v| (round_half_away(v * TOTAL as f64) as u32).max(1)).collect();
        normalize(&mut freqs);
        PmfTable::from_freqs(-t, freqs, true).expect("normalized table")
    }

    pub fn min(&self) -> i32 {
        self.min
    }

    /// Largest in-range symbol.
    pub fn max(&self) -> i32 {
        self.min + self.symbol_count() as i32 - 1
    }

    pub fn has_escape(&self) -> bool {
        self.escape
    }

    fn symbol_count(&self) -> usize {
        self.freqs.len() - self.escape as usize
    }

    pub fn freqs(&self) -> &[u32] {
        &self.freqs
    }

    pub fn escape_index(&self) -> Option<usize> {
        self.escape.then(|| self.freqs.len() - 1)
    }

    /// Table entry coding `symbol`: its own, the escape bucket, or an error.
    pub fn index_of(&self, symbol: i32) -> Result<usize> {
        let off = symbol as i64 - self.min as i64;
        if off >= 0 && (off as usize) < self.symbol_count() {
            return Ok(off as usize);
        }
        self.escape_index().ok_or_else(|| Error::Range(format!("symbol {symbol} outside table without escape")))
    }

    pub fn symbol_at(&self, index: usize) -> i32 {
        self.min + index as i32
    }

    /// `(cumulative, frequency)` of entry `index`.
    pub fn interval(&self, index: usize) -> (u32, u32) {
        (self.cum[index], self.freqs[index])
    }

    /// Entry whose interval contains `target < TOTAL`.
    pub fn find(&self, target: u32) -> usize {
        self.cum.partition_point(|&c| c <= target) - 1
    }

    /// Probability of `symbol` under the integer table (escape mass for
    /// out-of-range symbols).
    pub fn prob(&self, symbol: i32) -> Result<f64> {
        Ok(self.freqs[self.index_of(symbol)?] as f64 / TOTAL as f64)
    }

    /// Bits to code `symbol` ideally, including the raw escape payload.
    pub fn bits(&self, symbol: i32) -> Result<f64> {
        let i = self.index_of(symbol)?;
        let raw = if Some(i) == self.escape_index() { ESCAPE_BITS } else { 0.0 };
        Ok(PRECISION as f64 - (self.freqs[i] as f64).log2() + raw)
    }
}

/// Force `freqs` to sum to [`TOTAL`], moving one unit at a time over entries
/// ordered by descending frequency then ascending index. Entries never drop
/// below 1.
fn normalize(freqs: &mut [u32]) {
    let sum: i64 = freqs.iter().map(|&f| f as i64).sum();
    let mut diff = TOTAL as i64 - sum;
    if diff == 0 {
        return;
    }
    let mut order: Vec<usize> = (0..freqs.len()).collect();
    order.sort_by(|&a, &b| freqs[b].cmp(&freqs[a]).then(a.cmp(&b)));
    while diff != 0 {
        let mut moved = false;
        for &i in &order {
            if diff > 0 {
                freqs[i] += 1;
                diff -= 1;
                moved = true;
            } else if diff < 0 && freqs[i] > 1 {
                freqs[i] -= 1;
                diff += 1;
                moved = true;
            }
            if diff == 0 {
                break;
            }
        }
        assert!(moved, "cannot normalize frequency table");
    }
}

/// Grid index of the table used for scale `sigma`: the smallest grid scale
/// not below `sigma`.
pub fn scale_index(sigma: f64) -> usize {
    if !sigma.is_finite() || sigma >= SIGMA_MAX {
        return SCALE_LEVELS - 1;
    }
    if sigma <= SIGMA_MIN {
        return 0;
    }
    let span = libm::log(SIGMA_MAX) - libm::log(SIGMA_MIN);
    let pos = (libm::log(sigma) - libm::log(SIGMA_MIN)) / span * (SCALE_LEVELS - 1) as f64;
    (pos - 1e-9).ceil().clamp(0.0, (SCALE_LEVELS - 1) as f64) as usize
}

pub fn grid_scale(index: usize) -> f64 {
    let span = libm::log(SIGMA_MAX) - libm::log(SIGMA_MIN);
    libm::exp(libm::log(SIGMA_MIN) + span * index as f64 / (SCALE_LEVELS - 1) as f64)
}

/// The shared set of coding tables, one per grid scale.
pub fn scale_tables() -> &'static [PmfTable] {
    static TABLES: OnceLock<Vec<PmfTable>> = OnceLock::new();
    TABLES.get_or_init(|| (0..SCALE_LEVELS).map(|i| PmfTable::for_scale(grid_scale(i))).collect())
}

/// Coding table for scale `sigma`.
pub fn table_for(sigma: f64) -> &'static PmfTable {
    &scale_tables()[scale_index(sigma)]
}

/// Ideal code length of `symbols` under per-symbol tables.
pub fn estimate_rate(symbols: &[i32], tables: &[&PmfTable]) -> Result<f64> {
    if symbols.len() != tables.len() {
        return Err(Error::Shape(format!("{} symbols for {} tables", symbols.len(), tables.len())));
    }
    symbols.iter().zip(tables).map(|(&s, t)| t.bits(s)).sum()
}
