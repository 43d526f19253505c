//! Central-difference gradient checking against the tape.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::{SeededRng, Tensor3};

use super::graph::Graph;
use super::params::ParamStore;
use super::tape::{Tape, Var};

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub eps: f64,
    /// Denominator floor of the relative error, so coordinates with
    /// near-zero gradient compare absolutely. A central difference on a loss
    /// of magnitude `L` cannot resolve much below `ulp(L) / ε` (about 1e-10
    /// for `L ≈ 10`, `ε = 1e-5`); the default keeps tiny gradients above
    /// that noise at a 1e-4 tolerance.
    pub floor: f64,
    /// Check at most this many coordinates per tensor (sampled without
    /// replacement); `None` checks everything.
    pub max_coords: Option<usize>,
    pub seed: u64,
    /// Piecewise-linear activations make the loss non-smooth: a step of
    /// `eps` can cross a kink and bias the central difference. When set, a
    /// coordinate whose error exceeds this threshold is re-estimated at
    /// `eps/10` and `eps/100`; the finer estimate replaces the original only
    /// if the two agree with each other within the same threshold.
    pub refine_above: Option<f64>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions { eps: 1e-5, floor: 1e-5, max_coords: None, seed: 0, refine_above: None }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `name[index]` of the worst coordinate.
    pub worst: String,
    pub checked: usize,
    /// Coordinates whose estimate came from the refined step.
    pub refined: usize,
}

/// Analytic gradients of a graph: per parameter name and per input.
#[derive(Clone, Debug)]
pub struct AnalyticGrads {
    pub params: BTreeMap<String, Tensor3>,
    pub inputs: Vec<Tensor3>,
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

fn evaluate<F>(store: &ParamStore, inputs: &[Tensor3], build: &F) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new(store);
    let vars: Vec<Var> = inputs.iter().map(|t| tape.input(t.clone())).collect();
    let loss = build(&mut tape, &vars)?;
    let v = tape.value(&loss);
    if v.len() != 1 {
        return Err(Error::Shape(format!("gradient check needs a scalar loss, got {:?}", v.shape())));
    }
    let v = v.item();
    if !v.is_finite() {
        return Err(Error::Numeric(format!("loss is {v}")));
    }
    Ok(v)
}

pub fn analytic_grads<F>(store: &ParamStore, inputs: &[Tensor3], build: &F) -> Result<AnalyticGrads>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new(store);
    let vars: Vec<Var> = inputs.iter().map(|t| tape.input(t.clone())).collect();
    let loss = build(&mut tape, &vars)?;
    let lv = tape.value(&loss).item();
    if !lv.is_finite() {
        return Err(Error::Numeric(format!("loss is {lv}")));
    }
    let g = tape.backward(loss)?;
    let inputs_g = vars
        .iter()
        .zip(inputs)
        .map(|(v, t)| g.wrt(*v).cloned().unwrap_or_else(|| Tensor3::zeros(t.channels(), t.height(), t.width())))
        .collect();
    Ok(AnalyticGrads { params: g.into_params(), inputs: inputs_g })
}

fn coords(n: usize, opts: &GradCheckOptions, rng: &mut SeededRng) -> Vec<usize> {
    match opts.max_coords {
        Some(k) if k < n => {
            let mut all: Vec<usize> = (0..n).collect();
            for i in 0..k {
                let j = i + rng.below(n - i);
                all.swap(i, j);
            }
            all.truncate(k);
            all.sort_unstable();
            all
        }
        _ => (0..n).collect(),
    }
}

/// Compare `analytic` against central differences of `build`.
pub fn compare_gradients<F>(
    store: &ParamStore,
    inputs: &[Tensor3],
    opts: &GradCheckOptions,
    build: &F,
    analytic: &AnalyticGrads,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut rng = SeededRng::new(opts.seed);
    let mut report = GradCheckReport { max_rel_error: 0.0, worst: String::new(), checked: 0, refined: 0 };
    // `diff(h)` is the central difference with step `h`.
    let mut check = |name: &str, i: usize, a: f64, diff: &mut dyn FnMut(f64) -> Result<f64>| -> Result<()> {
        let mut e = relative_error(a, diff(opts.eps)?, opts.floor);
        if let Some(t) = opts.refine_above.filter(|&t| e > t) {
            let n1 = diff(opts.eps / 10.0)?;
            let n2 = diff(opts.eps / 100.0)?;
            if relative_error(n1, n2, opts.floor) <= t {
                e = relative_error(a, n2, opts.floor);
                report.refined += 1;
            }
        }
        report.checked += 1;
        if e > report.max_rel_error || report.worst.is_empty() {
            report.max_rel_error = e;
            report.worst = format!("{name}[{i}]");
        }
        Ok(())
    };
    let mut work = store.clone();
    let names: Vec<String> = store.names().map(str::to_string).collect();
    for name in &names {
        let base = store.value(name)?.as_ref().clone();
        let zero = Tensor3::zeros(base.channels(), base.height(), base.width());
        let a = analytic.params.get(name).unwrap_or(&zero);
        for i in coords(base.len(), opts, &mut rng) {
            let mut diff = |h: f64| -> Result<f64> {
                let mut t = base.clone();
                t.data_mut()[i] = base.data()[i] + h;
                work.set_value(name, t.clone())?;
                let up = evaluate(&work, inputs, build)?;
                t.data_mut()[i] = base.data()[i] - h;
                work.set_value(name, t)?;
                let down = evaluate(&work, inputs, build)?;
                Ok((up - down) / (2.0 * h))
            };
            check(name, i, a.data()[i], &mut diff)?;
        }
        work.set_value(name, base)?;
    }
    for (k, x) in inputs.iter().enumerate() {
        let mut probe = inputs.to_vec();
        for i in coords(x.len(), opts, &mut rng) {
            let mut diff = |h: f64| -> Result<f64> {
                probe[k].data_mut()[i] = x.data()[i] + h;
                let up = evaluate(store, &probe, build)?;
                probe[k].data_mut()[i] = x.data()[i] - h;
                let down = evaluate(store, &probe, build)?;
                probe[k].data_mut()[i] = x.data()[i];
                Ok((up - down) / (2.0 * h))
            };
            check(&format!("input{k}"), i, analytic.inputs[k].data()[i], &mut diff)?;
        }
    }
    Ok(report)
}

/// Worst relative error between tape gradients and central differences over
/// every parameter in `store` and every input tensor.
pub fn grad_check<F>(store: &ParamStore, inputs: &[Tensor3], opts: &GradCheckOptions, build: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let analytic = analytic_grads(store, inputs, &build)?;
    compare_gradients(store, inputs, opts, &build, &analytic)
}
