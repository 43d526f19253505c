use std::fmt;

use crate::error::{shape_err, Error, Result};
use crate::tensor::Tensor3;

use super::lifting::{Lifting, WaveletKind};
use super::transform::{check_2d_dims, dwt2d_in_place, dwt_channel_in_place, Pass};

/// Spatial subband orientation. The first letter is the horizontal filter,
/// the second the vertical one (JPEG 2000 naming), so `HL` holds vertical
/// edges.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SpatialBand {
    LL,
    HL,
    LH,
    HH,
}

impl SpatialBand {
    pub const DETAILS: [SpatialBand; 3] = [SpatialBand::HL, SpatialBand::LH, SpatialBand::HH];

    pub fn label(self) -> &'static str {
        match self {
            SpatialBand::LL => "LL",
            SpatialBand::HL => "HL",
            SpatialBand::LH => "LH",
            SpatialBand::HH => "HH",
        }
    }

    /// Top-left corner of this band at `level` (1-based) in the packed layout.
    pub fn origin(self, h: usize, w: usize, level: usize) -> (usize, usize) {
        let (bh, bw) = (h >> level, w >> level);
        match self {
            SpatialBand::LL => (0, 0),
            SpatialBand::HL => (0, bw),
            SpatialBand::LH => (bh, 0),
            SpatialBand::HH => (bh, bw),
        }
    }
}

/// Channel-axis band.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ChannelBand {
    L,
    H,
}

impl ChannelBand {
    pub fn label(self) -> &'static str {
        match self {
            ChannelBand::L => "L",
            ChannelBand::H => "H",
        }
    }
}

/// Detail subbands of one decomposition level.
#[derive(Clone, Debug, PartialEq)]
pub struct Detail {
    pub hl: Tensor3,
    pub lh: Tensor3,
    pub hh: Tensor3,
}

impl Detail {
    pub fn band(&self, b: SpatialBand) -> Option<&Tensor3> {
        match b {
            SpatialBand::HL => Some(&self.hl),
            SpatialBand::LH => Some(&self.lh),
            SpatialBand::HH => Some(&self.hh),
            SpatialBand::LL => None,
        }
    }
}

/// Multi-level spatial decomposition. `details[0]` is level 1 (finest).
#[derive(Clone, Debug, PartialEq)]
pub struct Pyramid {
    pub ll: Tensor3,
    pub details: Vec<Detail>,
}

impl Pyramid {
    pub fn levels(&self) -> usize {
        self.details.len()
    }

    /// Spatial size of the decomposed signal.
    pub fn full_dims(&self) -> (usize, usize) {
        let l = self.levels();
        (self.ll.height() << l, self.ll.width() << l)
    }

    pub fn element_count(&self) -> usize {
        self.ll.len() + self.details.iter().map(|d| d.hl.len() + d.lh.len() + d.hh.len()).sum::<usize>()
    }

    pub fn from_packed(packed: &Tensor3, levels: usize) -> Result<Pyramid> {
        let (c, h, w) = packed.shape();
        check_2d_dims(h, w, levels)?;
        let ll = packed.crop(0, c, 0, 0, h >> levels, w >> levels)?;
        let mut details = Vec::with_capacity(levels);
        for lvl in 1..=levels {
            let (bh, bw) = (h >> lvl, w >> lvl);
            let grab = |b: SpatialBand| {
                let (y, x) = b.origin(h, w, lvl);
                packed.crop(0, c, y, x, bh, bw)
            };
            details.push(Detail { hl: grab(SpatialBand::HL)?, lh: grab(SpatialBand::LH)?, hh: grab(SpatialBand::HH)? });
        }
        Ok(Pyramid { ll, details })
    }

    pub fn to_packed(&self) -> Result<Tensor3> {
        let (h, w) = self.full_dims();
        let c = self.ll.channels();
        let mut out = Tensor3::zeros(c, h, w);
        out.paste(&self.ll, 0, 0, 0)?;
        for (i, d) in self.details.iter().enumerate() {
            let lvl = i + 1;
            for b in SpatialBand::DETAILS {
                let (y, x) = b.origin(h, w, lvl);
                let part = d.band(b).expect("detail band");
                if part.shape() != (c, h >> lvl, w >> lvl) {
                    return Err(shape_err!("level {} {} band has shape {:?}", lvl, b.label(), part.shape()));
                }
                out.paste(part, 0, y, x)?;
            }
        }
        Ok(out)
    }
}

/// Multi-level 2D forward DWT applied to each channel.
pub fn dwt2d_forward(t: &Tensor3, kind: WaveletKind, levels: usize) -> Result<Pyramid> {
    let mut packed = t.clone();
    dwt2d_in_place(&mut packed, &Lifting::new(kind), levels, Pass::Analyze)?;
    Pyramid::from_packed(&packed, levels)
}

pub fn dwt2d_inverse(p: &Pyramid, kind: WaveletKind) -> Result<Tensor3> {
    let mut packed = p.to_packed()?;
    dwt2d_in_place(&mut packed, &Lifting::new(kind), p.levels(), Pass::Synthesize)?;
    Ok(packed)
}

/// One-level DWT along the channel axis: returns `(low group, high group)`.
pub fn dwt_channel_forward(t: &Tensor3, kind: WaveletKind) -> Result<(Tensor3, Tensor3)> {
    let mut packed = t.clone();
    dwt_channel_in_place(&mut packed, &Lifting::new(kind), Pass::Analyze)?;
    let c = t.channels();
    Ok((packed.slice_channels(0, c / 2)?, packed.slice_channels(c / 2, c)?))
}

pub fn dwt_channel_inverse(low: &Tensor3, high: &Tensor3, kind: WaveletKind) -> Result<Tensor3> {
    if low.shape() != high.shape() {
        return Err(shape_err!("channel groups differ: {:?} vs {:?}", low.shape(), high.shape()));
    }
    let mut packed = Tensor3::concat_channels(&[low, high])?;
    dwt_channel_in_place(&mut packed, &Lifting::new(kind), Pass::Synthesize)?;
    Ok(packed)
}

/// A 3D subband label such as `LHL` (channel band, then spatial band) at a
/// given spatial level. Level is ignored for `xLL` labels, which always refer
/// to the deepest LL.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SubbandLabel {
    pub channel: ChannelBand,
    pub spatial: SpatialBand,
    pub level: usize,
}

impl fmt::Display for SubbandLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.channel.label(), self.spatial.label())?;
        if self.level > 1 {
            write!(f, "{}", self.level)?;
        }
        Ok(())
    }
}

impl std::str::FromStr for SubbandLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Argument(format!("bad subband label '{s}'"));
        let s = s.trim_start_matches("y_");
        let b = s.as_bytes();
        if b.len() < 3 {
            return Err(bad());
        }
        let channel = match b[0] {
            b'L' => ChannelBand::L,
            b'H' => ChannelBand::H,
            _ => return Err(bad()),
        };
        let spatial = match &s[1..3] {
            "LL" => SpatialBand::LL,
            "HL" => SpatialBand::HL,
            "LH" => SpatialBand::LH,
            "HH" => SpatialBand::HH,
            _ => return Err(bad()),
        };
        let level = if b.len() > 3 { s[3..].parse().map_err(|_| bad())? } else { 1 };
        Ok(SubbandLabel { channel, spatial, level })
    }
}

/// 3D decomposition: a channel DWT splits the tensor into two groups, then
/// each group gets a multi-level spatial DWT.
#[derive(Clone, Debug, PartialEq)]
pub struct SubbandTensor {
    pub low: Pyramid,
    pub high: Pyramid,
}

impl SubbandTensor {
    pub fn levels(&self) -> usize {
        self.low.levels()
    }

    pub fn group(&self, band: ChannelBand) -> &Pyramid {
        match band {
            ChannelBand::L => &self.low,
            ChannelBand::H => &self.high,
        }
    }

    pub fn element_count(&self) -> usize {
        self.low.element_count() + self.high.element_count()
    }

    pub fn band(&self, label: SubbandLabel) -> Option<&Tensor3> {
        let p = self.group(label.channel);
        match label.spatial {
            SpatialBand::LL => Some(&p.ll),
            b => p.details.get(label.level.checked_sub(1)?)?.band(b),
        }
    }

    /// Lookup by text label, e.g. `"LLL"`, `"y_HLH"`, `"LHH2"`.
    pub fn get(&self, label: &str) -> Option<&Tensor3> {
        self.band(label.parse().ok()?)
    }

    /// Every subband in coding order: LF first, then details from the
    /// deepest level outwards, low channel group before high.
    pub fn labels(&self) -> Vec<SubbandLabel> {
        let levels = self.levels();
        let mut out = vec![
            SubbandLabel { channel: ChannelBand::L, spatial: SpatialBand::LL, level: levels },
            SubbandLabel { channel: ChannelBand::H, spatial: SpatialBand::LL, level: levels },
        ];
        for lvl in (1..=levels).rev() {
            for ch in [ChannelBand::L, ChannelBand::H] {
                for sp in SpatialBand::DETAILS {
                    out.push(SubbandLabel { channel: ch, spatial: sp, level: lvl });
                }
            }
        }
        out
    }
}

pub fn dwt3d_forward(
    t: &Tensor3,
    channel_kind: WaveletKind,
    spatial_kind: WaveletKind,
    levels: usize,
) -> Result<SubbandTensor> {
    check_2d_dims(t.height(), t.width(), levels)?;
    let (lo, hi) = dwt_channel_forward(t, channel_kind)?;
    Ok(SubbandTensor { low: dwt2d_forward(&lo, spatial_kind, levels)?, high: dwt2d_forward(&hi, spatial_kind, levels)? })
}

pub fn dwt3d_inverse(s: &SubbandTensor, channel_kind: WaveletKind, spatial_kind: WaveletKind) -> Result<Tensor3> {
    let lo = dwt2d_inverse(&s.low, spatial_kind)?;
    let hi = dwt2d_inverse(&s.high, spatial_kind)?;
    dwt_channel_inverse(&lo, &hi, channel_kind)
}

/// Energy and zeroth-order entropy (bits per coefficient of the rounded
/// values) of one subband.
#[derive(Clone, Debug)]
pub struct SubbandStats {
    pub label: String,
    pub count: usize,
    pub energy: f64,
    pub entropy: f64,
}

pub fn subband_stats(label: impl Into<String>, t: &Tensor3) -> SubbandStats {
    use std::collections::HashMap;
    let mut hist: HashMap<i64, usize> = HashMap::new();
    for &v in t.data() {
        *hist.entry(v.round() as i64).or_default() += 1;
    }
    let n = t.len() as f64;
    let mut keys: Vec<_> = hist.into_iter().collect();
    keys.sort_unstable();
    let entropy = keys.iter().map(|&(_, k)| {
        let p = k as f64 / n;
        -p * p.log2()
    });
    SubbandStats { label: label.into(), count: t.len(), energy: t.sum_sq(), entropy: entropy.sum::<f64>().max(0.0) }
}
