//! Wavelet-domain convolution layer: a (possibly strided) convolution, a
//! channel DWT, a grouped multi-level spatial DWT, one convolution per
//! subband, the inverse transforms and a residual shortcut.

use crate::error::{shape_err, Error, Result};
use crate::nn::{ConvSpec, Graph, Op, ParamStore, LINEAR_GAIN};
use crate::tensor::SeededRng;
use crate::wavelet::{ChannelBand, Pass, SpatialBand, SubbandLabel, WaveletKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WeConvConfig {
    pub c_in: usize,
    pub c_out: usize,
    pub stride: usize,
    pub channel_wavelet: WaveletKind,
    pub spatial_wavelet: WaveletKind,
    pub levels: usize,
    /// Kernel of the high-frequency subband convolutions (1, or 3 for the
    /// ablation).
    pub hf_kernel: usize,
    /// Upsampling variant: the leading convolution is transposed.
    pub transposed: bool,
}

impl WeConvConfig {
    pub fn new(c_in: usize, c_out: usize, stride: usize) -> Self {
        WeConvConfig {
            c_in,
            c_out,
            stride,
            channel_wavelet: WaveletKind::Haar,
            spatial_wavelet: WaveletKind::Cdf97,
            levels: 2,
            hf_kernel: 1,
            transposed: false,
        }
    }

    pub fn inverse(c_in: usize, c_out: usize, stride: usize) -> Self {
        WeConvConfig { transposed: true, ..Self::new(c_in, c_out, stride) }
    }

    pub fn validate(&self) -> Result<()> {
        if self.c_in == 0 || self.c_out == 0 || !self.c_out.is_multiple_of(2) {
            return Err(Error::Argument(format!("output channels must be even and positive, got {}", self.c_out)));
        }
        if !matches!(self.stride, 1 | 2) {
            return Err(Error::Argument(format!("stride must be 1 or 2, got {}", self.stride)));
        }
        if self.levels == 0 {
            return Err(Error::Argument("at least one spatial level is required".into()));
        }
        if !matches!(self.hf_kernel, 1 | 3) {
            return Err(Error::Argument(format!("high-frequency kernel must be 1 or 3, got {}", self.hf_kernel)));
        }
        Ok(())
    }

    fn head(&self) -> ConvSpec {
        if self.transposed {
            ConvSpec::tconv(3, self.stride, self.c_in, self.c_out)
        } else {
            ConvSpec::conv(3, self.stride, self.c_in, self.c_out)
        }
    }

    fn shortcut(&self) -> Option<ConvSpec> {
        if self.c_in == self.c_out && self.stride == 1 {
            None
        } else if self.transposed {
            Some(ConvSpec::tconv(1, self.stride, self.c_in, self.c_out))
        } else {
            Some(ConvSpec::conv(1, self.stride, self.c_in, self.c_out))
        }
    }

    /// Spatial size after the leading convolution.
    pub fn inner_dims(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let (ih, iw) = if self.transposed {
            (h * self.stride, w * self.stride)
        } else {
            if !h.is_multiple_of(self.stride) || !w.is_multiple_of(self.stride) {
                return Err(shape_err!("{}x{} not divisible by stride {}", h, w, self.stride));
            }
            (h / self.stride, w / self.stride)
        };
        let m = 1 << self.levels;
        if ih == 0 || iw == 0 || ih % m != 0 || iw % m != 0 {
            return Err(shape_err!("{}x{} after the leading convolution is not divisible by {}", ih, iw, m));
        }
        Ok((ih, iw))
    }

    pub fn param_count(&self) -> usize {
        self.head().param_count()
            + subband_conv_plan(self).iter().map(|p| p.spec.param_count()).sum::<usize>()
            + self.shortcut().map_or(0, |s| s.param_count())
    }
}

/// One per-subband convolution of the layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SubbandConv {
    pub label: SubbandLabel,
    pub spec: ConvSpec,
}

impl SubbandConv {
    /// Parameter name suffix, e.g. `lo.HL2`.
    pub fn name(&self) -> String {
        let group = match self.label.channel {
            ChannelBand::L => "lo",
            ChannelBand::H => "hi",
        };
        format!("{group}.{}{}", self.label.spatial.label(), self.label.level)
    }
}

/// Per-group subband convolutions: a 3×3 on the deepest LL and `hf_kernel`
/// on every detail band, channel width preserved within each group.
pub fn subband_conv_plan(cfg: &WeConvConfig) -> Vec<SubbandConv> {
    let gc = cfg.c_out / 2;
    let mut out = Vec::new();
    for channel in [ChannelBand::L, ChannelBand::H] {
        out.push(SubbandConv {
            label: SubbandLabel { channel, spatial: SpatialBand::LL, level: cfg.levels },
            spec: ConvSpec::conv(3, 1, gc, gc),
        });
        for level in (1..=cfg.levels).rev() {
            for spatial in SpatialBand::DETAILS {
                out.push(SubbandConv {
                    label: SubbandLabel { channel, spatial, level },
                    spec: ConvSpec::conv(cfg.hf_kernel, 1, gc, gc),
                });
            }
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WeConv {
    pub cfg: WeConvConfig,
    pub prefix: String,
}

impl WeConv {
    pub fn new(cfg: WeConvConfig, prefix: impl Into<String>) -> Result<Self> {
        cfg.validate()?;
        Ok(WeConv { cfg, prefix: prefix.into() })
    }

    pub fn register(&self, store: &mut ParamStore, rng: &mut SeededRng) -> Result<()> {
        let p = &self.prefix;
        self.cfg.head().register(store, &format!("{p}.head"), rng, LINEAR_GAIN)?;
        for sc in subband_conv_plan(&self.cfg) {
            sc.spec.register(store, &format!("{p}.{}", sc.name()), rng, 0.5)?;
        }
        if let Some(s) = self.cfg.shortcut() {
            s.register(store, &format!("{p}.skip"), rng, LINEAR_GAIN)?;
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.cfg.param_count()
    }

    pub fn apply<G: Graph>(&self, g: &mut G, x: &G::V) -> Result<G::V> {
        let cfg = &self.cfg;
        let p = &self.prefix;
        let (c, h, w) = g.shape(x);
        if c != cfg.c_in {
            return Err(shape_err!("layer {} expects {} channels, got {}", p, cfg.c_in, c));
        }
        let (ih, iw) = cfg.inner_dims(h, w)?;
        let head = cfg.head().apply(g, x, &format!("{p}.head"))?;
        let t = g.dwt_channel(&head, cfg.channel_wavelet, Pass::Analyze)?;
        let t = g.dwt2d(&t, cfg.spatial_wavelet, cfg.levels, Pass::Analyze)?;
        let gc = cfg.c_out / 2;
        let mut parts = Vec::new();
        let mut offsets = Vec::new();
        for sc in subband_conv_plan(cfg) {
            let c0 = match sc.label.channel {
                ChannelBand::L => 0,
                ChannelBand::H => gc,
            };
            let (y0, x0) = sc.label.spatial.origin(ih, iw, sc.label.level);
            let (bh, bw) = (ih >> sc.label.level, iw >> sc.label.level);
            let band = g.crop(&t, c0, c0 + gc, y0, x0, bh, bw)?;
            parts.push(g.conv2d(&band, &format!("{p}.{}", sc.name()), 1)?);
            offsets.push((c0, y0, x0));
        }
        let refs: Vec<&G::V> = parts.iter().collect();
        let t = g.apply(Op::Assemble { shape: (cfg.c_out, ih, iw), offsets }, &refs)?;
        let t = g.dwt2d(&t, cfg.spatial_wavelet, cfg.levels, Pass::Synthesize)?;
        let t = g.dwt_channel(&t, cfg.channel_wavelet, Pass::Synthesize)?;
        let skip = match cfg.shortcut() {
            None => x.clone(),
            Some(s) => s.apply(g, x, &format!("{p}.skip"))?,
        };
        g.add(&t, &skip)
    }
}
