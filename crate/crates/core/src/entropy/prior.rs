//! Per-channel Gaussian prior of the hyper-latent.

use crate::error::{shape_err, Result};
use crate::nn::{Graph, ParamStore};
use crate::tensor::Tensor3;

use super::pmf::{PmfTable, SIGMA_MAX, SIGMA_MIN};
use super::pmf::table_for;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FactorizedPrior {
    pub channels: usize,
}

impl FactorizedPrior {
    pub const MU: &'static str = "prior.mu";
    pub const LOG_SIGMA: &'static str = "prior.log_sigma";

    pub fn param_count(&self) -> usize {
        2 * self.channels
    }

    pub fn register(&self, store: &mut ParamStore) -> Result<()> {
        store.insert(Self::MU, vec![self.channels], Tensor3::zeros(self.channels, 1, 1))?;
        store.insert(Self::LOG_SIGMA, vec![self.channels], Tensor3::zeros(self.channels, 1, 1))
    }

    /// Broadcast `(μ, σ)` to `(channels, h, w)` on the graph; σ is clamped
    /// to `[SIGMA_MIN, SIGMA_MAX]`.
    pub fn params<G: Graph>(&self, g: &mut G, h: usize, w: usize) -> Result<(G::V, G::V)> {
        let mu = g.param(Self::MU)?;
        let ls = g.param(Self::LOG_SIGMA)?;
        if g.shape(&mu).0 != self.channels {
            return Err(shape_err!("prior has {} channels, expected {}", g.shape(&mu).0, self.channels));
        }
        let ls = g.clamp(&ls, SIGMA_MIN.ln(), SIGMA_MAX.ln())?;
        let sigma = g.exp(&ls)?;
        let mu = g.apply(crate::nn::Op::Broadcast { h, w }, &[&mu])?;
        let sigma = g.apply(crate::nn::Op::Broadcast { h, w }, &[&sigma])?;
        Ok((mu, sigma))
    }

    /// Coding tables in raster order for a `(channels, h, w)` hyper-latent.
    pub fn tables(&self, store: &ParamStore, h: usize, w: usize) -> Result<(Tensor3, Vec<&'static PmfTable>)> {
        let mu = store.value(Self::MU)?;
        let ls = store.value(Self::LOG_SIGMA)?;
        let mu_full = Tensor3::from_fn(self.channels, h, w, |c, _, _| mu.at(c, 0, 0));
        let mut tables = Vec::with_capacity(self.channels * h * w);
        for c in 0..self.channels {
            let s = ls.at(c, 0, 0).clamp(SIGMA_MIN.ln(), SIGMA_MAX.ln()).exp();
            tables.extend(std::iter::repeat_n(table_for(s), h * w));
        }
        Ok((mu_full, tables))
    }
}
