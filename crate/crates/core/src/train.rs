//! Two-stage rate-distortion training on small RGB crops.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;

use crate::codec::{read_image, report_subbands, Codec, Model, RgbImage, PAD_MULTIPLE};
use crate::error::{Error, Result};
use crate::nn::{AdamConfig, Graph, Op, ParamStore, Tape};
use crate::tensor::{SeededRng, Tensor3};

/// Factor applied to the `[0, 1]` pixel MSE so that the usual λ grid
/// balances against rates measured in bits per pixel.
pub const MSE_SCALE: f64 = 255.0 * 255.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Distortion {
    Mse,
    MsSsim,
}

impl FromStr for Distortion {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mse" => Ok(Distortion::Mse),
            "ms-ssim" | "msssim" => Ok(Distortion::MsSsim),
            _ => Err(Error::Argument(format!("unknown distortion {s:?} (mse or ms-ssim)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrainStage {
    /// Plain sum of all rates.
    Joint,
    /// Low-frequency subband rates weighted by `w1`, the rest by `w2`.
    Reweighted,
}

impl TrainStage {
    pub fn from_number(n: u8) -> Result<TrainStage> {
        match n {
            1 => Ok(TrainStage::Joint),
            2 => Ok(TrainStage::Reweighted),
            _ => Err(Error::Argument(format!("stage must be 1 or 2, got {n}"))),
        }
    }
}

/// Subbands whose rate gets the low-frequency weight: spatial LL in either
/// channel band.
pub fn is_low_frequency(label: &str) -> bool {
    label.ends_with("LL")
}

#[derive(Clone, Debug, PartialEq)]
pub struct RdLoss {
    pub lambda: f64,
    pub distortion: Distortion,
    pub stage: TrainStage,
    pub w1: f64,
    pub w2: f64,
}

impl RdLoss {
    pub fn joint(lambda: f64) -> RdLoss {
        RdLoss { lambda, distortion: Distortion::Mse, stage: TrainStage::Joint, w1: 1.2, w2: 0.8 }
    }

    pub fn reweighted(lambda: f64, w1: f64, w2: f64) -> RdLoss {
        RdLoss { lambda, distortion: Distortion::Mse, stage: TrainStage::Reweighted, w1, w2 }
    }

    pub fn rate_weight(&self, label: &str) -> f64 {
        match self.stage {
            TrainStage::Joint => 1.0,
            TrainStage::Reweighted if is_low_frequency(label) => self.w1,
            TrainStage::Reweighted => self.w2,
        }
    }
}

/// `λ·D + Σ wᵢ·Rᵢ + R_z` with rates in bits per pixel. `rates` holds one
/// `(subband label, bpp)` entry per slice or subband.
pub fn rd_loss(distortion: f64, rates: &[(&str, f64)], z_bpp: f64, loss: &RdLoss) -> Result<f64> {
    if let Some((label, r)) = rates.iter().find(|(_, r)| !(*r >= 0.0)) {
        return Err(Error::Contract(format!("rate of {label} must be non-negative, got {r}")));
    }
    if !(z_bpp >= 0.0) {
        return Err(Error::Contract(format!("hyper-latent rate must be non-negative, got {z_bpp}")));
    }
    let r: f64 = rates.iter().map(|(l, r)| loss.rate_weight(l) * r).sum();
    Ok(loss.lambda * distortion + r + z_bpp)
}

/// Graph form of the five-scale MS-SSIM used by `codec::ms_ssim`. Spatial
/// dims must stay even down to the last scale.
pub fn ms_ssim_graph<G: Graph>(g: &mut G, a: &G::V, b: &G::V) -> Result<G::V> {
    const C1: f64 = 0.01 * 0.01;
    const C2: f64 = 0.03 * 0.03;
    let weights = crate::codec::MS_SSIM_WEIGHTS;
    let (mut x, mut y) = (a.clone(), b.clone());
    let mut acc: Option<G::V> = None;
    for (s, &w) in weights.iter().enumerate() {
        let last = s + 1 == weights.len();
        let mu_x = g.apply(Op::GaussianBlurValid, &[&x])?;
        let mu_y = g.apply(Op::GaussianBlurValid, &[&y])?;
        let xx = g.mul(&x, &x)?;
        let yy = g.mul(&y, &y)?;
        let xy = g.mul(&x, &y)?;
        let sxx = g.apply(Op::GaussianBlurValid, &[&xx])?;
        let syy = g.apply(Op::GaussianBlurValid, &[&yy])?;
        let sxy = g.apply(Op::GaussianBlurValid, &[&xy])?;
        let mxx = g.mul(&mu_x, &mu_x)?;
        let myy = g.mul(&mu_y, &mu_y)?;
        let mxy = g.mul(&mu_x, &mu_y)?;
        let vx = g.sub(&sxx, &mxx)?;
        let vy = g.sub(&syy, &myy)?;
        let cov = g.sub(&sxy, &mxy)?;
        let num = g.scale(&cov, 2.0)?;
        let num = g.add_scalar(&num, C2)?;
        let den = g.add(&vx, &vy)?;
        let den = g.add_scalar(&den, C2)?;
        let mut map = g.div(&num, &den)?;
        if last {
            let ln = g.scale(&mxy, 2.0)?;
            let ln = g.add_scalar(&ln, C1)?;
            let ld = g.add(&mxx, &myy)?;
            let ld = g.add_scalar(&ld, C1)?;
            let l = g.div(&ln, &ld)?;
            map = g.mul(&l, &map)?;
        }
        let v = g.apply(Op::SpatialMean, &[&map])?;
        let v = g.clamp(&v, 1e-12, f64::INFINITY)?;
        let v = g.apply(Op::PowScalar(w), &[&v])?;
        acc = Some(match acc {
            Some(p) => g.mul(&p, &v)?,
            None => v,
        });
        if !last {
            x = g.apply(Op::AvgPool2, &[&x])?;
            y = g.apply(Op::AvgPool2, &[&y])?;
        }
    }
    g.mean(&acc.expect("five scales"))
}

/// Graph nodes of one sample's loss, rates in bits per pixel.
pub struct LossTerms<V> {
    pub loss: V,
    pub distortion: V,
    pub slice_bpp: Vec<V>,
    pub z_bpp: V,
}

pub fn loss_graph<G: Graph>(model: &Model, g: &mut G, x: &G::V, rng: &mut SeededRng, loss: &RdLoss) -> Result<LossTerms<G::V>> {
    let (_, h, w) = g.shape(x);
    let pixels = (h * w) as f64;
    let out = model.forward_train(g, x, rng)?;
    let distortion = match loss.distortion {
        Distortion::Mse => {
            let mse = g.apply(Op::SquaredErrorMean, &[x, &out.x_hat])?;
            g.scale(&mse, MSE_SCALE)?
        }
        Distortion::MsSsim => {
            let v = ms_ssim_graph(g, x, &out.x_hat)?;
            let v = g.scale(&v, -1.0)?;
            g.add_scalar(&v, 1.0)?
        }
    };
    let z_bpp = g.scale(&out.z_bits, 1.0 / pixels)?;
    let mut total = g.scale(&distortion, loss.lambda)?;
    total = g.add(&total, &z_bpp)?;
    let mut slice_bpp = Vec::with_capacity(out.slice_bits.len());
    for (spec, bits) in model.charm.plan.slices.iter().zip(&out.slice_bits) {
        let bpp = g.scale(bits, 1.0 / pixels)?;
        let weighted = g.scale(&bpp, loss.rate_weight(&spec.subband))?;
        total = g.add(&total, &weighted)?;
        slice_bpp.push(bpp);
    }
    Ok(LossTerms { loss: total, distortion, slice_bpp, z_bpp })
}

/// Step-decay learning rate: `base` until `decay_start`, then multiplied by
/// `factor` every `decay_every` iterations.
#[derive(Clone, Debug, PartialEq)]
pub struct LrSchedule {
    pub base: f64,
    pub decay_start: u64,
    pub decay_every: u64,
    pub factor: f64,
}

impl LrSchedule {
    pub fn fixed(lr: f64) -> LrSchedule {
        LrSchedule { base: lr, decay_start: u64::MAX, decay_every: 1, factor: 1.0 }
    }

    pub fn full_scale() -> LrSchedule {
        LrSchedule { base: 1e-4, decay_start: 750_000, decay_every: 100_000, factor: 0.1 }
    }

    pub fn lr_at(&self, iteration: u64) -> f64 {
        if iteration < self.decay_start {
            return self.base;
        }
        let k = (iteration - self.decay_start) / self.decay_every.max(1) + 1;
        self.base * self.factor.powi(k as i32)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub loss: RdLoss,
    pub iterations: u64,
    pub batch_size: usize,
    pub schedule: LrSchedule,
    pub seed: u64,
    pub crop: usize,
}

impl TrainConfig {
    /// Small-scale stage-1 settings: 2000 iterations of batch 2 on 64×64
    /// crops. The rate is raised to 1e-3 so the short run gets past the
    /// initial transient.
    pub fn toy_stage1(lambda: f64) -> TrainConfig {
        TrainConfig {
            loss: RdLoss::joint(lambda),
            iterations: 2000,
            batch_size: 2,
            schedule: LrSchedule::fixed(1e-3),
            seed: 42,
            crop: 64,
        }
    }

    /// Small-scale stage-2 fine-tuning: 200 iterations at 1e-4.
    pub fn toy_stage2(lambda: f64, w1: f64, w2: f64) -> TrainConfig {
        TrainConfig {
            loss: RdLoss::reweighted(lambda, w1, w2),
            iterations: 200,
            schedule: LrSchedule::fixed(1e-4),
            ..TrainConfig::toy_stage1(lambda)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let l = &self.loss;
        if !(l.lambda >= 0.0) || !l.lambda.is_finite() {
            return Err(Error::Config(format!("λ must be finite and non-negative, got {}", l.lambda)));
        }
        if l.stage == TrainStage::Reweighted && !(l.w1 > l.w2 && l.w2 > 0.0) {
            return Err(Error::Config(format!("stage 2 needs w1 > w2 > 0, got w1={} w2={}", l.w1, l.w2)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if self.crop == 0 || !self.crop.is_multiple_of(PAD_MULTIPLE) {
            return Err(Error::Config(format!("crop size must be a multiple of {PAD_MULTIPLE}, got {}", self.crop)));
        }
        if l.distortion == Distortion::MsSsim && self.crop < 256 {
            return Err(Error::Config(format!("MS-SSIM training needs crops of at least 256, got {}", self.crop)));
        }
        Ok(())
    }
}

/// One line of the loss trace, averaged over the batch.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    pub iteration: u64,
    pub loss: f64,
    pub distortion: f64,
    pub bpp_latent: f64,
    pub bpp_z: f64,
}

impl TraceRow {
    pub const CSV_HEADER: &'static str = "iteration,loss,D,bpp_latent,bpp_z";

    pub fn to_csv(&self) -> String {
        format!("{},{:.8},{:.8},{:.8},{:.8}", self.iteration, self.loss, self.distortion, self.bpp_latent, self.bpp_z)
    }
}

impl fmt::Display for TraceRow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_csv())
    }
}

struct SampleResult {
    grads: BTreeMap<String, Tensor3>,
    row: TraceRow,
}

fn check_finite(iteration: u64, term: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::Numeric(format!("iteration {iteration}: {term} is {v}")))
    }
}

fn sample_step(model: &Model, store: &ParamStore, x: &Tensor3, iteration: u64, sample: u64, cfg: &TrainConfig) -> Result<SampleResult> {
    let mut rng = SeededRng::derive(cfg.seed, iteration, sample);
    let mut g = Tape::new(store);
    let xv = g.input(x.clone());
    let t = loss_graph(model, &mut g, &xv, &mut rng, &cfg.loss)?;
    let row = TraceRow {
        iteration,
        loss: g.value(&t.loss).item(),
        distortion: g.value(&t.distortion).item(),
        bpp_latent: t.slice_bpp.iter().map(|v| g.value(v).item()).sum(),
        bpp_z: g.value(&t.z_bpp).item(),
    };
    check_finite(iteration, "distortion", row.distortion)?;
    for (spec, v) in model.charm.plan.slices.iter().zip(&t.slice_bpp) {
        check_finite(iteration, &format!("rate of slice {} ({})", spec.index, spec.subband), g.value(v).item())?;
    }
    check_finite(iteration, "hyper-latent rate", row.bpp_z)?;
    check_finite(iteration, "loss", row.loss)?;
    let grads = g.backward(t.loss)?.into_params();
    Ok(SampleResult { grads, row })
}

/// Adam training over `crops`, cycling through them in order. Each sample's
/// noise comes from `(seed, iteration, sample)`, and per-sample gradients
/// are summed in sample order, so results do not depend on thread count.
/// `progress` sees every trace row as it is produced.
pub fn train(
    model: &Model,
    store: &mut ParamStore,
    crops: &[Tensor3],
    cfg: &TrainConfig,
    mut progress: impl FnMut(&TraceRow),
) -> Result<Vec<TraceRow>> {
    cfg.validate()?;
    if crops.is_empty() {
        return Err(Error::Argument("no training crops".into()));
    }
    for c in crops {
        model.check_input(c.shape())?;
    }
    let mut trace = Vec::with_capacity(cfg.iterations as usize);
    let b = cfg.batch_size;
    for it in 0..cfg.iterations {
        let results: Vec<Result<SampleResult>> = (0..b)
            .into_par_iter()
            .map(|s| {
                let x = &crops[(it as usize * b + s) % crops.len()];
                sample_step(model, store, x, it, s as u64, cfg)
            })
            .collect();
        store.zero_grad();
        let mut row = TraceRow { iteration: it, loss: 0.0, distortion: 0.0, bpp_latent: 0.0, bpp_z: 0.0 };
        let inv = 1.0 / b as f64;
        for r in results {
            let mut r = r?;
            for g in r.grads.values_mut() {
                g.scale_assign(inv);
            }
            store.accumulate(&r.grads)?;
            row.loss += r.row.loss * inv;
            row.distortion += r.row.distortion * inv;
            row.bpp_latent += r.row.bpp_latent * inv;
            row.bpp_z += r.row.bpp_z * inv;
        }
        if let Some((name, _)) = store.iter().find(|(_, e)| e.grad.as_ref().is_some_and(|g| !g.is_finite())) {
            return Err(Error::Numeric(format!("iteration {it}: gradient of {name} is not finite")));
        }
        let adam = AdamConfig { lr: cfg.schedule.lr_at(it), ..AdamConfig::default() };
        store.adam_step(&adam)?;
        progress(&row);
        trace.push(row);
    }
    Ok(trace)
}

/// Trailing moving average of the loss column over `window` rows.
pub fn moving_average(trace: &[TraceRow], window: usize) -> Vec<f64> {
    let w = window.max(1);
    let mut out = Vec::with_capacity(trace.len().saturating_sub(w - 1));
    let mut sum = 0.0;
    for (i, r) in trace.iter().enumerate() {
        sum += r.loss;
        if i >= w {
            sum -= trace[i - w].loss;
        }
        if i + 1 >= w {
            out.push(sum / w as f64);
        }
    }
    out
}

/// Deterministic smooth test crops: low-frequency colour gradients with a
/// few flat-shaded discs and bars, no pixel noise.
pub fn synthetic_crops(count: usize, size: usize, seed: u64) -> Vec<RgbImage> {
    (0..count)
        .map(|i| {
            let mut rng = SeededRng::derive(seed, 0x5eed, i as u64);
            let mut field = [[0.0; 5]; 3];
            for f in field.iter_mut() {
                *f = [rng.uniform(0.2, 0.8), rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3), rng.uniform(0.5, 3.0), rng.uniform(0.0, 6.3)];
            }
            let shapes: Vec<[f64; 7]> = (0..4)
                .map(|_| {
                    [
                        rng.uniform(0.0, 1.0),
                        rng.uniform(0.0, 1.0),
                        rng.uniform(0.08, 0.3),
                        rng.uniform(0.0, 1.0),
                        rng.uniform(0.0, 1.0),
                        rng.uniform(0.0, 1.0),
                        rng.uniform(0.0, 1.0),
                    ]
                })
                .collect();
            let s = size as f64;
            let mut data = Vec::with_capacity(size * size * 3);
            for y in 0..size {
                for x in 0..size {
                    let (u, v) = (x as f64 / s, y as f64 / s);
                    let mut px = [0.0; 3];
                    for (c, f) in field.iter().enumerate() {
                        px[c] = f[0] + f[1] * u + f[2] * v + 0.1 * (f[3] * (u + v) * std::f64::consts::PI + f[4]).sin();
                    }
                    for sh in &shapes {
                        let inside = if sh[6] < 0.5 {
                            (u - sh[0]).powi(2) + (v - sh[1]).powi(2) < sh[2] * sh[2]
                        } else {
                            (u - sh[0]).abs() < sh[2] && (v - sh[1]).abs() < 0.4 * sh[2]
                        };
                        if inside {
                            px = [sh[3], sh[4], sh[5]];
                        }
                    }
                    data.extend(px.iter().map(|p| (p.clamp(0.0, 1.0) * 255.0).round() as u8));
                }
            }
            RgbImage::new(size, size, data).expect("size matches")
        })
        .collect()
}

/// Centre crops of every PNG/PPM in `dir`, in file-name order.
pub fn load_crops(dir: &Path, size: usize) -> Result<Vec<RgbImage>> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| Error::Io(format!("{}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "ppm"))
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Io(format!("{}: no PNG or PPM images", dir.display())));
    }
    paths
        .iter()
        .map(|p| {
            let img = read_image(p)?;
            if img.width < size || img.height < size {
                return Err(Error::Config(format!("{}: {}x{} is smaller than the {size}px crop", p.display(), img.width, img.height)));
            }
            let (x0, y0) = ((img.width - size) / 2, (img.height - size) / 2);
            let mut data = Vec::with_capacity(size * size * 3);
            for y in y0..y0 + size {
                let row = (y * img.width + x0) * 3;
                data.extend_from_slice(&img.data[row..row + size * 3]);
            }
            RgbImage::new(size, size, data)
        })
        .collect()
}

/// Share of latent bits spent on low-frequency subbands, averaged over
/// the coded `images`.
pub fn mean_low_frequency_share(codec: &Codec, images: &[RgbImage]) -> Result<f64> {
    let mut total = 0.0;
    for img in images {
        let bytes = codec.encode(img)?.bytes;
        let rep = report_subbands(codec, &bytes, None)?;
        let lf: f64 = rep.subbands.iter().filter(|r| is_low_frequency(&r.label)).map(|r| r.bpp).sum();
        total += lf / rep.latent_bpp();
    }
    Ok(total / images.len() as f64)
}
