//! Lifting factorizations of the supported filter banks.
//!
//! A signal of even length `2n` is split into `low = x[0], x[2], ...` and
//! `high = x[1], x[3], ...`, then the lifting steps run in place on the two
//! halves. Boundaries use whole-sample symmetric extension, which on the split
//! halves means `low[n] = low[n-1]` (right) and `high[-1] = high[0]` (left).

use std::f64::consts::SQRT_2;

use crate::error::{Error, Result};

// ISO/IEC 15444-1 irreversible 9/7 lifting constants.
pub const CDF97_ALPHA: f64 = -1.586134342059924;
pub const CDF97_BETA: f64 = -0.052980118572961;
pub const CDF97_GAMMA: f64 = 0.882911075530934;
pub const CDF97_DELTA: f64 = 0.443506852043971;
pub const CDF97_K: f64 = 1.230174104914001;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum WaveletKind {
    /// Orthonormal Haar (`1/sqrt(2)` normalization).
    Haar,
    /// LeGall 5/3, reversible integer lifting with floor rounding.
    LeGall53,
    /// CDF 9/7 (JPEG 2000 irreversible).
    Cdf97,
}

impl WaveletKind {
    pub const ALL: [WaveletKind; 3] = [WaveletKind::Haar, WaveletKind::LeGall53, WaveletKind::Cdf97];

    pub fn id(self) -> u8 {
        match self {
            WaveletKind::Haar => 0,
            WaveletKind::LeGall53 => 1,
            WaveletKind::Cdf97 => 2,
        }
    }

    pub fn from_id(id: u8) -> Result<Self> {
        match id {
            0 => Ok(WaveletKind::Haar),
            1 => Ok(WaveletKind::LeGall53),
            2 => Ok(WaveletKind::Cdf97),
            _ => Err(Error::Parse(format!("unknown wavelet id {id}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            WaveletKind::Haar => "haar",
            WaveletKind::LeGall53 => "5/3",
            WaveletKind::Cdf97 => "9/7",
        }
    }
}

impl std::str::FromStr for WaveletKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "haar" => Ok(WaveletKind::Haar),
            "5/3" | "53" | "legall" | "legall53" => Ok(WaveletKind::LeGall53),
            "9/7" | "97" | "cdf97" => Ok(WaveletKind::Cdf97),
            other => Err(Error::Argument(format!("unknown wavelet '{other}'"))),
        }
    }
}

impl std::fmt::Display for WaveletKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Inverse,
}

#[derive(Clone, Copy, Debug)]
enum Step {
    /// `high[i] += c * (low[i] + low[i+1])`, or `c * low[i]` when single-tap.
    Predict { c: f64, two_tap: bool },
    /// `low[i] += c * (high[i-1] + high[i])`, or `c * high[i]` when single-tap.
    Update { c: f64, two_tap: bool },
    Scale { low: f64, high: f64 },
    /// `high[i] -= floor((low[i] + low[i+1]) / 2)`
    PredictFloor,
    /// `low[i] += floor((high[i-1] + high[i] + 2) / 4)`
    UpdateFloor,
}

/// A lifting program for one wavelet.
#[derive(Clone, Debug)]
pub struct Lifting {
    kind: WaveletKind,
    steps: Vec<Step>,
}

impl Lifting {
    /// The transform as standardized: 5/3 uses integer floor rounding.
    pub fn new(kind: WaveletKind) -> Self {
        match kind {
            WaveletKind::LeGall53 => Lifting { kind, steps: vec![Step::PredictFloor, Step::UpdateFloor] },
            _ => Self::linear(kind),
        }
    }

    /// Purely linear variant. Identical to [`Lifting::new`] except for 5/3,
    /// where the rounding is dropped. This is the form used inside networks
    /// (it has a well-defined adjoint).
    pub fn linear(kind: WaveletKind) -> Self {
        let steps = match kind {
            WaveletKind::Haar => vec![
                Step::Predict { c: -1.0, two_tap: false },
                Step::Update { c: 0.5, two_tap: false },
                Step::Scale { low: SQRT_2, high: -1.0 / SQRT_2 },
            ],
            WaveletKind::LeGall53 => vec![
                Step::Predict { c: -0.5, two_tap: true },
                Step::Update { c: 0.25, two_tap: true },
            ],
            WaveletKind::Cdf97 => vec![
                Step::Predict { c: CDF97_ALPHA, two_tap: true },
                Step::Update { c: CDF97_BETA, two_tap: true },
                Step::Predict { c: CDF97_GAMMA, two_tap: true },
                Step::Update { c: CDF97_DELTA, two_tap: true },
                Step::Scale { low: 1.0 / CDF97_K, high: CDF97_K },
            ],
        };
        Lifting { kind, steps }
    }

    pub fn kind(&self) -> WaveletKind {
        self.kind
    }

    pub fn is_linear(&self) -> bool {
        !self.steps.iter().any(|s| matches!(s, Step::PredictFloor | Step::UpdateFloor))
    }

    /// Forward transform on already split halves.
    pub fn analyze(&self, low: &mut [f64], high: &mut [f64]) {
        debug_assert_eq!(low.len(), high.len());
        for step in &self.steps {
            apply(*step, low, high, 1.0);
        }
    }

    /// Inverse of [`Lifting::analyze`].
    pub fn synthesize(&self, low: &mut [f64], high: &mut [f64]) {
        debug_assert_eq!(low.len(), high.len());
        for step in self.steps.iter().rev() {
            apply(*step, low, high, -1.0);
        }
    }

    /// Transpose of [`Lifting::analyze`]: maps output gradients to input gradients.
    /// Rounding steps are transposed as their linear counterparts.
    pub fn analyze_adjoint(&self, low: &mut [f64], high: &mut [f64]) {
        for step in self.steps.iter().rev() {
            apply_transposed(*step, low, high, 1.0);
        }
    }

    /// Transpose of [`Lifting::synthesize`].
    pub fn synthesize_adjoint(&self, low: &mut [f64], high: &mut [f64]) {
        for step in &self.steps {
            apply_transposed(*step, low, high, -1.0);
        }
    }
}

#[inline]
fn apply(step: Step, low: &mut [f64], high: &mut [f64], sign: f64) {
    let n = low.len();
    match step {
        Step::Predict { c, two_tap } => {
            let c = c * sign;
            if two_tap {
                for i in 0..n {
                    let r = low[(i + 1).min(n - 1)];
                    high[i] += c * (low[i] + r);
                }
            } else {
                for i in 0..n {
                    high[i] += c * low[i];
                }
            }
        }
        Step::Update { c, two_tap } => {
            let c = c * sign;
            if two_tap {
                for i in 0..n {
                    let l = high[i.saturating_sub(1)];
                    low[i] += c * (l + high[i]);
                }
            } else {
                for i in 0..n {
                    low[i] += c * high[i];
                }
            }
        }
        Step::Scale { low: a, high: b } => {
            let (a, b) = if sign > 0.0 { (a, b) } else { (1.0 / a, 1.0 / b) };
            low.iter_mut().for_each(|v| *v *= a);
            high.iter_mut().for_each(|v| *v *= b);
        }
        Step::PredictFloor => {
            for i in 0..n {
                let r = low[(i + 1).min(n - 1)];
                let p = ((low[i] + r) / 2.0).floor();
                high[i] -= sign * p;
            }
        }
        Step::UpdateFloor => {
            for i in 0..n {
                let l = high[i.saturating_sub(1)];
                let u = ((l + high[i] + 2.0) / 4.0).floor();
                low[i] += sign * u;
            }
        }
    }
}

#[inline]
fn apply_transposed(step: Step, low: &mut [f64], high: &mut [f64], sign: f64) {
    let n = low.len();
    match step {
        Step::Predict { c, two_tap } => {
            let c = c * sign;
            for i in 0..n {
                let g = c * high[i];
                low[i] += g;
                if two_tap {
                    low[(i + 1).min(n - 1)] += g;
                }
            }
        }
        Step::Update { c, two_tap } => {
            let c = c * sign;
            for i in 0..n {
                let g = c * low[i];
                high[i] += g;
                if two_tap {
                    high[i.saturating_sub(1)] += g;
                }
            }
        }
        Step::Scale { .. } => apply(step, low, high, sign),
        Step::PredictFloor => apply_transposed(Step::Predict { c: -0.5, two_tap: true }, low, high, sign),
        Step::UpdateFloor => apply_transposed(Step::Update { c: 0.25, two_tap: true }, low, high, sign),
    }
}

/// One-level 1D forward transform of an even-length signal.
pub fn lift_forward(signal: &[f64], kind: WaveletKind) -> Result<(Vec<f64>, Vec<f64>)> {
    lift_forward_with(signal, &Lifting::new(kind))
}

pub fn lift_forward_with(signal: &[f64], lifting: &Lifting) -> Result<(Vec<f64>, Vec<f64>)> {
    if signal.len() < 2 || !signal.len().is_multiple_of(2) {
        return Err(Error::Shape(format!("1D DWT needs an even length >= 2, got {}", signal.len())));
    }
    let mut low: Vec<f64> = signal.iter().step_by(2).copied().collect();
    let mut high: Vec<f64> = signal.iter().skip(1).step_by(2).copied().collect();
    lifting.analyze(&mut low, &mut high);
    Ok((low, high))
}

/// Inverse of [`lift_forward`].
pub fn lift_inverse(low: &[f64], high: &[f64], kind: WaveletKind) -> Result<Vec<f64>> {
    lift_inverse_with(low, high, &Lifting::new(kind))
}

pub fn lift_inverse_with(low: &[f64], high: &[f64], lifting: &Lifting) -> Result<Vec<f64>> {
    if low.len() != high.len() || low.is_empty() {
        return Err(Error::Shape(format!(
            "inverse 1D DWT needs equal non-empty halves, got {} and {}",
            low.len(),
            high.len()
        )));
    }
    let mut l = low.to_vec();
    let mut h = high.to_vec();
    lifting.synthesize(&mut l, &mut h);
    Ok(l.iter().zip(&h).flat_map(|(&a, &b)| [a, b]).collect())
}
