//! Wavelet-domain channel-wise autoregressive entropy model.
//!
//! The latent goes through a one-level channel DWT and a one-level spatial
//! DWT; the eight subbands are cut into ten slices coded from low to high
//! frequency. Each slice's Gaussian parameters come from the hyper features
//! and the slices already coded, and a refinement net predicts the
//! quantization error of the dequantized slice.

use crate::entropy::{dequantize, estimate_rate, quantize, range_decode, range_encode, table_for, PmfTable};
use crate::entropy::{SIGMA_MAX, SIGMA_MIN};
use crate::error::{shape_err, Error, Result};
use crate::nn::{ConvSpec, Eval, Graph, Op, ParamStore, LEAKY_SLOPE};
use crate::tensor::{SeededRng, Tensor3};
use crate::wavelet::{ChannelBand, Pass, SpatialBand, WaveletKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CharmConfig {
    /// Latent channels `M`.
    pub latent_channels: usize,
    /// Channels of the hyper-decoder output.
    pub hyper_channels: usize,
    pub channel_wavelet: WaveletKind,
    pub spatial_wavelet: WaveletKind,
    pub attention: bool,
    /// `false` selects the spatial-only variant: no channel DWT, four
    /// subbands, five slices.
    pub channel_dwt: bool,
}

impl CharmConfig {
    pub fn new(latent_channels: usize, hyper_channels: usize) -> Self {
        CharmConfig {
            latent_channels,
            hyper_channels,
            channel_wavelet: WaveletKind::Haar,
            spatial_wavelet: WaveletKind::Cdf97,
            attention: true,
            channel_dwt: true,
        }
    }
}

/// One slice: a channel range of one subband in the packed DWT layout.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SliceSpec {
    pub index: usize,
    /// Subband name, e.g. `LLL` or `HHL`; `LL`/`HL`/... without channel DWT.
    pub subband: String,
    /// Absolute channel range in the packed tensor.
    pub c0: usize,
    pub c1: usize,
    pub band: SpatialBand,
}

impl SliceSpec {
    pub fn channels(&self) -> usize {
        self.c1 - self.c0
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SlicePlan {
    pub slices: Vec<SliceSpec>,
    pub latent_channels: usize,
    pub channel_dwt: bool,
}

/// Detail bands in coding order within a channel group.
const DETAIL_ORDER: [SpatialBand; 3] = [SpatialBand::LH, SpatialBand::HL, SpatialBand::HH];

fn name(channel: Option<ChannelBand>, band: SpatialBand) -> String {
    match channel {
        Some(c) => format!("{}{}", c.label(), band.label()),
        None => band.label().to_string(),
    }
}

impl SlicePlan {
    pub fn new(m: usize, channel_dwt: bool) -> Result<SlicePlan> {
        let mut slices = Vec::new();
        let mut push = |subband: String, c0: usize, c1: usize, band: SpatialBand| {
            let index = slices.len();
            slices.push(SliceSpec { index, subband, c0, c1, band });
        };
        if channel_dwt {
            if m == 0 || !m.is_multiple_of(4) {
                return Err(shape_err!("latent channels must be a positive multiple of 4, got {}", m));
            }
            let g = m / 2;
            for (ch, off) in [(ChannelBand::L, 0), (ChannelBand::H, g)] {
                let n = name(Some(ch), SpatialBand::LL);
                push(n.clone(), off, off + g / 2, SpatialBand::LL);
                push(n, off + g / 2, off + g, SpatialBand::LL);
            }
            for (ch, off) in [(ChannelBand::L, 0), (ChannelBand::H, g)] {
                for b in DETAIL_ORDER {
                    push(name(Some(ch), b), off, off + g, b);
                }
            }
        } else {
            if m == 0 || !m.is_multiple_of(2) {
                return Err(shape_err!("latent channels must be a positive even number, got {}", m));
            }
            push(name(None, SpatialBand::LL), 0, m / 2, SpatialBand::LL);
            push(name(None, SpatialBand::LL), m / 2, m, SpatialBand::LL);
            for b in DETAIL_ORDER {
                push(name(None, b), 0, m, b);
            }
        }
        Ok(SlicePlan { slices, latent_channels: m, channel_dwt })
    }

    pub fn len(&self) -> usize {
        self.slices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slices.is_empty()
    }

    pub fn channel_counts(&self) -> Vec<usize> {
        self.slices.iter().map(SliceSpec::channels).collect()
    }

    /// Distinct subband names in coding order.
    pub fn subbands(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for s in &self.slices {
            if !out.contains(&s.subband) {
                out.push(s.subband.clone());
            }
        }
        out
    }
}

/// Everything slice `k` may condition on: the hyper features (already at
/// slice resolution) and the refined slices `0..k`.
pub struct SliceContext<V> {
    pub hyper: V,
    pub decoded: Vec<V>,
}

/// Output of the differentiable training pass.
pub struct CharmTrainOutput<V> {
    /// Reconstructed latent (spatial domain).
    pub y_hat: V,
    /// Bits per slice, as scalars.
    pub slice_bits: Vec<V>,
}

/// Result of coding the latent.
#[derive(Clone, Debug)]
pub struct CodedLatent {
    pub chunks: Vec<Vec<u8>>,
    /// Ideal bits per slice under the coding tables.
    pub estimated_bits: Vec<f64>,
    pub y_hat: Tensor3,
    /// Refined slices, as the decoder will see them.
    pub refined: Vec<Tensor3>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Charm {
    pub cfg: CharmConfig,
    pub plan: SlicePlan,
}

impl Charm {
    pub fn new(cfg: CharmConfig) -> Result<Charm> {
        let plan = SlicePlan::new(cfg.latent_channels, cfg.channel_dwt)?;
        if cfg.hyper_channels == 0 {
            return Err(Error::Argument("hyper features need at least one channel".into()));
        }
        Ok(Charm { cfg, plan })
    }

    fn ctx_channels(&self, k: usize) -> usize {
        self.cfg.hyper_channels + self.plan.slices[..k].iter().map(SliceSpec::channels).sum::<usize>()
    }

    fn layer_specs(&self, k: usize) -> Vec<(&'static str, ConvSpec)> {
        let c = self.plan.slices[k].channels();
        let x = self.ctx_channels(k);
        let mut v = Vec::new();
        if self.cfg.attention {
            v.push(("att", ConvSpec::conv(1, 1, x, x)));
        }
        v.push(("param.0", ConvSpec::conv(1, 1, x, 2 * c)));
        v.push(("param.1", ConvSpec::conv(1, 1, 2 * c, 2 * c)));
        v.push(("mu", ConvSpec::conv(1, 1, 2 * c, c)));
        v.push(("sigma", ConvSpec::conv(1, 1, 2 * c, c)));
        v.push(("lrp.0", ConvSpec::conv(1, 1, x + c, 2 * c)));
        v.push(("lrp.1", ConvSpec::conv(1, 1, 2 * c, c)));
        v
    }

    fn prefix(k: usize, layer: &str) -> String {
        format!("charm.slice{k}.{layer}")
    }

    pub fn param_count(&self) -> usize {
        (0..self.plan.len()).flat_map(|k| self.layer_specs(k)).map(|(_, s)| s.param_count()).sum()
    }

    pub fn register(&self, store: &mut ParamStore, rng: &mut SeededRng) -> Result<()> {
        for k in 0..self.plan.len() {
            for (layer, spec) in self.layer_specs(k) {
                let gain = match layer {
                    "att" | "lrp.1" => 0.1,
                    "mu" | "sigma" => 0.5,
                    _ => 1.0,
                };
                spec.register(store, &Self::prefix(k, layer), rng, gain)?;
            }
        }
        Ok(())
    }

    /// Packed DWT of the latent (channel DWT first when enabled).
    pub fn analyze<G: Graph>(&self, g: &mut G, y: &G::V) -> Result<G::V> {
        let (c, h, w) = g.shape(y);
        if c != self.cfg.latent_channels {
            return Err(shape_err!("latent has {} channels, model expects {}", c, self.cfg.latent_channels));
        }
        if h % 2 != 0 || w % 2 != 0 {
            return Err(shape_err!("latent {}x{} must have even dims", h, w));
        }
        let t = if self.cfg.channel_dwt { g.dwt_channel(y, self.cfg.channel_wavelet, Pass::Analyze)? } else { y.clone() };
        g.dwt2d(&t, self.cfg.spatial_wavelet, 1, Pass::Analyze)
    }

    /// Cut the packed DWT into the slices of the plan.
    pub fn partition<G: Graph>(&self, g: &mut G, packed: &G::V) -> Result<Vec<G::V>> {
        let (_, h, w) = g.shape(packed);
        self.plan
            .slices
            .iter()
            .map(|s| {
                let (y0, x0) = s.band.origin(h, w, 1);
                g.crop(packed, s.c0, s.c1, y0, x0, h / 2, w / 2)
            })
            .collect()
    }

    /// Reassemble slices and invert the DWT.
    pub fn reconstruct<G: Graph>(&self, g: &mut G, slices: &[G::V]) -> Result<G::V> {
        if slices.len() != self.plan.len() {
            return Err(Error::State(format!("{} of {} slices present", slices.len(), self.plan.len())));
        }
        let (_, sh, sw) = g.shape(&slices[0]);
        let (h, w) = (2 * sh, 2 * sw);
        let offsets = self
            .plan
            .slices
            .iter()
            .map(|s| {
                let (y0, x0) = s.band.origin(h, w, 1);
                (s.c0, y0, x0)
            })
            .collect();
        let refs: Vec<&G::V> = slices.iter().collect();
        let packed = g.apply(Op::Assemble { shape: (self.cfg.latent_channels, h, w), offsets }, &refs)?;
        let t = g.dwt2d(&packed, self.cfg.spatial_wavelet, 1, Pass::Synthesize)?;
        if self.cfg.channel_dwt {
            g.dwt_channel(&t, self.cfg.channel_wavelet, Pass::Synthesize)
        } else {
            Ok(t)
        }
    }

    fn context<G: Graph>(&self, g: &mut G, ctx: &SliceContext<G::V>, k: usize) -> Result<G::V> {
        if k >= self.plan.len() {
            return Err(Error::Range(format!("slice {k} of {}", self.plan.len())));
        }
        if ctx.decoded.len() != k {
            return Err(Error::Contract(format!(
                "slice {k} must see exactly {k} coded slices, context holds {}",
                ctx.decoded.len()
            )));
        }
        let mut parts = vec![&ctx.hyper];
        parts.extend(ctx.decoded.iter());
        let x = if parts.len() == 1 { ctx.hyper.clone() } else { g.concat(&parts)? };
        if !self.cfg.attention {
            return Ok(x);
        }
        let pooled = g.apply(Op::SpatialMean, &[&x])?;
        let a = g.conv2d(&pooled, &Self::prefix(k, "att"), 1)?;
        let gate = g.sigmoid(&a)?;
        g.apply(Op::MulChannel, &[&x, &gate])
    }

    fn params_from<G: Graph>(&self, g: &mut G, x: &G::V, k: usize) -> Result<(G::V, G::V)> {
        let h = g.conv2d(x, &Self::prefix(k, "param.0"), 1)?;
        let h = g.leaky_relu(&h, LEAKY_SLOPE)?;
        let h = g.conv2d(&h, &Self::prefix(k, "param.1"), 1)?;
        let h = g.leaky_relu(&h, LEAKY_SLOPE)?;
        let mu = g.conv2d(&h, &Self::prefix(k, "mu"), 1)?;
        let ls = g.conv2d(&h, &Self::prefix(k, "sigma"), 1)?;
        let ls = g.clamp(&ls, SIGMA_MIN.ln(), SIGMA_MAX.ln())?;
        let sigma = g.exp(&ls)?;
        Ok((mu, sigma))
    }

    fn refine_from<G: Graph>(&self, g: &mut G, x: &G::V, dequant: &G::V, k: usize) -> Result<G::V> {
        let (c, h, w) = g.shape(dequant);
        let (_, xh, xw) = g.shape(x);
        if c != self.plan.slices[k].channels() || (h, w) != (xh, xw) {
            return Err(shape_err!("slice {} refinement input {:?} does not match context", k, (c, h, w)));
        }
        let inp = g.concat(&[x, dequant])?;
        let r = g.conv2d(&inp, &Self::prefix(k, "lrp.0"), 1)?;
        let r = g.leaky_relu(&r, LEAKY_SLOPE)?;
        let r = g.conv2d(&r, &Self::prefix(k, "lrp.1"), 1)?;
        let r = g.tanh(&r)?;
        let r = g.scale(&r, 0.5)?;
        g.add(dequant, &r)
    }

    /// Gaussian `(μ, σ)` of slice `k`.
    pub fn predict_slice_params<G: Graph>(&self, g: &mut G, ctx: &SliceContext<G::V>, k: usize) -> Result<(G::V, G::V)> {
        let x = self.context(g, ctx, k)?;
        self.params_from(g, &x, k)
    }

    /// `dequant + 0.5·tanh(r)` with `r` predicted from the context.
    pub fn lrp_refine<G: Graph>(&self, g: &mut G, ctx: &SliceContext<G::V>, dequant: &G::V, k: usize) -> Result<G::V> {
        let x = self.context(g, ctx, k)?;
        self.refine_from(g, &x, dequant, k)
    }

    /// Average-pool hyper-decoder features to slice resolution.
    pub fn hyper_to_slices<G: Graph>(&self, g: &mut G, hyper: &G::V) -> Result<G::V> {
        let c = g.shape(hyper).0;
        if c != self.cfg.hyper_channels {
            return Err(shape_err!("hyper features have {} channels, expected {}", c, self.cfg.hyper_channels));
        }
        g.apply(Op::AvgPool2, &[hyper])
    }

    /// Differentiable pass with additive-noise quantization. `noise(k,
    /// shape)` supplies the uniform noise of slice `k`.
    pub fn forward_train<G: Graph>(
        &self,
        g: &mut G,
        y: &G::V,
        hyper: &G::V,
        noise: &mut dyn FnMut(usize, (usize, usize, usize)) -> Result<Tensor3>,
    ) -> Result<CharmTrainOutput<G::V>> {
        let packed = self.analyze(g, y)?;
        let slices = self.partition(g, &packed)?;
        let mut ctx = SliceContext { hyper: self.hyper_to_slices(g, hyper)?, decoded: Vec::new() };
        let mut bits = Vec::with_capacity(slices.len());
        for (k, s) in slices.iter().enumerate() {
            let x = self.context(g, &ctx, k)?;
            let (mu, sigma) = self.params_from(g, &x, k)?;
            let u = noise(k, g.shape(s))?;
            let u = g.constant(u);
            let noisy = g.add(s, &u)?;
            bits.push(g.apply(Op::GaussianBits, &[&noisy, &mu, &sigma])?);
            let refined = self.refine_from(g, &x, &noisy, k)?;
            ctx.decoded.push(refined);
        }
        let y_hat = self.reconstruct(g, &ctx.decoded)?;
        Ok(CharmTrainOutput { y_hat, slice_bits: bits })
    }

    /// Quantize and range-code every slice, one chunk per slice.
    pub fn encode(&self, store: &ParamStore, y: &Tensor3, hyper: &Tensor3) -> Result<CodedLatent> {
        let mut g = Eval::new(store);
        let y = g.constant(y.clone());
        let packed = self.analyze(&mut g, &y)?;
        let slices = self.partition(&mut g, &packed)?;
        let hyper = g.constant(hyper.clone());
        let mut ctx = SliceContext { hyper: self.hyper_to_slices(&mut g, &hyper)?, decoded: Vec::new() };
        let mut chunks = Vec::new();
        let mut estimated = Vec::new();
        for (k, s) in slices.iter().enumerate() {
            let x = self.context(&mut g, &ctx, k)?;
            let (mu, sigma) = self.params_from(&mut g, &x, k)?;
            let (symbols, dq) = quantize(s, &mu)?;
            let tables: Vec<&PmfTable> = sigma.data().iter().map(|&v| table_for(v)).collect();
            estimated.push(estimate_rate(&symbols, &tables)?);
            chunks.push(range_encode(&symbols, &tables)?);
            let dq = g.constant(dq);
            let refined = self.refine_from(&mut g, &x, &dq, k)?;
            ctx.decoded.push(refined);
        }
        let y_hat = self.reconstruct(&mut g, &ctx.decoded)?;
        Ok(CodedLatent {
            chunks,
            estimated_bits: estimated,
            y_hat: y_hat.as_ref().clone(),
            refined: ctx.decoded.iter().map(|v| v.as_ref().clone()).collect(),
        })
    }

    /// Decode slices in order. Stops at the first failing chunk and returns
    /// the slices decoded so far together with the error.
    pub fn decode_partial(
        &self,
        store: &ParamStore,
        chunks: &[&[u8]],
        hyper: &Tensor3,
    ) -> (Vec<Tensor3>, Option<Error>) {
        let mut g = Eval::new(store);
        let hyper = g.constant(hyper.clone());
        let mut ctx = match self.hyper_to_slices(&mut g, &hyper) {
            Ok(h) => SliceContext { hyper: h, decoded: Vec::new() },
            Err(e) => return (Vec::new(), Some(e)),
        };
        for k in 0..self.plan.len() {
            let step = (|| -> Result<_> {
                let chunk = chunks.get(k).ok_or_else(|| Error::Decode(format!("missing chunk for slice {k}")))?;
                let x = self.context(&mut g, &ctx, k)?;
                let (mu, sigma) = self.params_from(&mut g, &x, k)?;
                let tables: Vec<&PmfTable> = sigma.data().iter().map(|&v| table_for(v)).collect();
                let symbols = range_decode(chunk, &tables)?;
                let dq = g.constant(dequantize(&symbols, &mu)?);
                self.refine_from(&mut g, &x, &dq, k)
            })();
            match step {
                Ok(r) => ctx.decoded.push(r),
                Err(e) => return (ctx.decoded.iter().map(|v| v.as_ref().clone()).collect(), Some(e)),
            }
        }
        (ctx.decoded.iter().map(|v| v.as_ref().clone()).collect(), None)
    }

    /// Decode all slices and rebuild the latent.
    pub fn decode(&self, store: &ParamStore, chunks: &[&[u8]], hyper: &Tensor3) -> Result<Tensor3> {
        let (slices, err) = self.decode_partial(store, chunks, hyper);
        if let Some(e) = err {
            return Err(e);
        }
        self.reconstruct_latent(store, &slices)
    }

    pub fn reconstruct_latent(&self, store: &ParamStore, slices: &[Tensor3]) -> Result<Tensor3> {
        let mut g = Eval::new(store);
        let vs: Vec<_> = slices.iter().map(|s| g.constant(s.clone())).collect();
        Ok(self.reconstruct(&mut g, &vs)?.as_ref().clone())
    }

    /// Slices of a latent in plan order (no quantization).
    pub fn partition_latent(&self, y: &Tensor3) -> Result<Vec<Tensor3>> {
        let store = ParamStore::new();
        let mut g = Eval::new(&store);
        let y = g.constant(y.clone());
        let packed = self.analyze(&mut g, &y)?;
        Ok(self.partition(&mut g, &packed)?.into_iter().map(|v| v.as_ref().clone()).collect())
    }
}
