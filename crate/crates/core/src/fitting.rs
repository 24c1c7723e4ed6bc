//! Least-squares recovery of the coupling dipole and dephasing rates.
//!
//! The objective compares `scale·simulated + offset` with a target trace on
//! the target's own grid. Minimization is a bounded Nelder–Mead simplex run
//! sequentially; each evaluation may use the parallel spectrum engine.

use std::cell::RefCell;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::config::MeasuredSpectrum;
use crate::error::{Error, Result};
use crate::model::Scenario;
use crate::spectrum::{simulate, ScanConfig, Signal, Spectrum};
use crate::units::{angular_to_mhz, mhz_to_angular};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitParam {
    MuCoupling,
    Gamma12c,
    Gamma13c,
    Gamma23c,
    AmplitudeScale,
    BaselineOffset,
}

impl FitParam {
    pub fn name(self) -> &'static str {
        match self {
            FitParam::MuCoupling => "mu_coupling",
            FitParam::Gamma12c => "gamma12_c",
            FitParam::Gamma13c => "gamma13_c",
            FitParam::Gamma23c => "gamma23_c",
            FitParam::AmplitudeScale => "amplitude_scale",
            FitParam::BaselineOffset => "baseline_offset",
        }
    }

    pub fn unit(self) -> &'static str {
        match self {
            FitParam::MuCoupling => "au",
            FitParam::Gamma12c | FitParam::Gamma13c | FitParam::Gamma23c => "MHz",
            FitParam::AmplitudeScale | FitParam::BaselineOffset => "1",
        }
    }

    /// Enters the objective linearly, outside the simulation.
    pub fn is_linear(self) -> bool {
        matches!(self, FitParam::AmplitudeScale | FitParam::BaselineOffset)
    }

    /// Current value in the scenario, `None` for the linear parameters.
    pub fn scenario_value(self, scn: &Scenario) -> Option<f64> {
        let s = &scn.system;
        match self {
            FitParam::MuCoupling => Some(scn.dipoles.coupling),
            FitParam::Gamma12c => Some(angular_to_mhz(s.gamma12_c)),
            FitParam::Gamma13c => Some(angular_to_mhz(s.gamma13_c)),
            FitParam::Gamma23c => Some(angular_to_mhz(s.gamma23_c)),
            FitParam::AmplitudeScale | FitParam::BaselineOffset => None,
        }
    }

    fn apply(self, scn: &mut Scenario, value: f64) {
        let s = &mut scn.system;
        match self {
            FitParam::MuCoupling => scn.dipoles.coupling = value,
            FitParam::Gamma12c => s.gamma12_c = mhz_to_angular(value),
            FitParam::Gamma13c => s.gamma13_c = mhz_to_angular(value),
            FitParam::Gamma23c => s.gamma23_c = mhz_to_angular(value),
            FitParam::AmplitudeScale | FitParam::BaselineOffset => {}
        }
    }
}

impl std::str::FromStr for FitParam {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let all = [
            FitParam::MuCoupling,
            FitParam::Gamma12c,
            FitParam::Gamma13c,
            FitParam::Gamma23c,
            FitParam::AmplitudeScale,
            FitParam::BaselineOffset,
        ];
        all.into_iter()
            .find(|p| p.name() == s.trim())
            .ok_or_else(|| format!("unknown fit parameter `{}`", s.trim()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitProblem {
    /// Fixed context; free parameters are overwritten per evaluation.
    pub scenario: Scenario,
    /// Scan template: Doppler, sublevel mode, engine and δ2. The grid
    /// bounds the region the target may cover.
    pub scan: ScanConfig,
    pub target_delta1: Vec<f64>,
    pub target: Vec<f64>,
    pub channel: Signal,
    pub free: Vec<FitParam>,
    pub bounds: Vec<(f64, f64)>,
    pub max_evaluations: usize,
}

impl FitProblem {
    pub fn new(
        scenario: Scenario,
        scan: ScanConfig,
        target: &MeasuredSpectrum,
        channel: Signal,
        free: Vec<FitParam>,
        bounds: Vec<(f64, f64)>,
    ) -> Result<Self> {
        let fp = Self {
            scenario,
            scan,
            target_delta1: target.delta1.clone(),
            target: target.signal.clone(),
            channel,
            free,
            bounds,
            max_evaluations: 2000,
        };
        fp.validate()?;
        Ok(fp)
    }

    pub fn validate(&self) -> Result<()> {
        if self.free.is_empty() {
            return Err(Error::validation("fit.free", "at least one free parameter is required"));
        }
        if self.bounds.len() != self.free.len() {
            return Err(Error::validation("fit.bounds", "one bound pair per free parameter"));
        }
        for (p, &(lo, hi)) in self.free.iter().zip(&self.bounds) {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::validation(format!("fit.bound_{}", p.name()), "bounds must be finite with lo < hi"));
            }
        }
        if self.target.len() != self.target_delta1.len() || self.target.len() < 3 {
            return Err(Error::validation("data", "target needs at least 3 points"));
        }
        let (lo, hi) = match (self.scan.delta1.first(), self.scan.delta1.last()) {
            (Some(&a), Some(&b)) => (a, b),
            _ => return Err(Error::validation("scan", "empty simulation grid")),
        };
        if self.target_delta1.iter().any(|&x| x < lo || x > hi) {
            return Err(Error::validation(
                "data",
                format!("target extends outside the simulated range [{lo}, {hi}] MHz"),
            ));
        }
        let n_free = self.free.len();
        let mut seen = self.free.clone();
        seen.sort_by_key(|p| p.name());
        seen.dedup();
        if seen.len() != n_free {
            return Err(Error::validation("fit.free", "parameter listed twice"));
        }
        Ok(())
    }

    /// Scenario with the non-linear entries of `p` applied.
    pub fn scenario_at(&self, p: &[f64]) -> Scenario {
        let mut scn = self.scenario.clone();
        for (param, &v) in self.free.iter().zip(p) {
            param.apply(&mut scn, v);
        }
        scn
    }

    fn linear_parts(&self, p: &[f64]) -> (f64, f64) {
        let mut scale = 1.0;
        let mut offset = 0.0;
        for (param, &v) in self.free.iter().zip(p) {
            match param {
                FitParam::AmplitudeScale => scale = v,
                FitParam::BaselineOffset => offset = v,
                _ => {}
            }
        }
        (scale, offset)
    }

    /// Unscaled model signal on the target grid.
    pub fn model(&self, p: &[f64]) -> Result<Vec<f64>> {
        let scn = self.scenario_at(p);
        let cs = scn.channels()?;
        let scan = ScanConfig {
            delta1: self.target_delta1.clone(),
            rho22: self.channel == Signal::Rho22,
            rho33: self.channel == Signal::Rho33,
            ..self.scan.clone()
        };
        Ok(simulate(&scn, &cs, &scan)?.signal(self.channel).to_vec())
    }

    fn target_energy(&self) -> f64 {
        self.target.iter().map(|t| t * t).sum()
    }
}

fn sum_sq(model: &[f64], target: &[f64], scale: f64, offset: f64) -> f64 {
    model
        .iter()
        .zip(target)
        .map(|(m, t)| {
            let r = scale * m + offset - t;
            r * r
        })
        .sum()
}

/// Σ (scale·simulated + offset − target)² over the target grid.
pub fn objective(p: &[f64], fp: &FitProblem) -> Result<f64> {
    for ((param, &v), &(lo, hi)) in fp.free.iter().zip(p).zip(&fp.bounds) {
        if !(lo..=hi).contains(&v) {
            return Err(Error::validation(param.name(), format!("{v} lies outside [{lo}, {hi}]")));
        }
    }
    let (scale, offset) = fp.linear_parts(p);
    Ok(sum_sq(&fp.model(p)?, &fp.target, scale, offset))
}

/// Two-channel objective: the sum of the single-channel objectives of two
/// problems sharing the same free parameter list.
pub fn joint_objective(p: &[f64], first: &FitProblem, second: &FitProblem) -> Result<f64> {
    if first.free != second.free {
        return Err(Error::validation("fit.free", "joint problems must share free parameters"));
    }
    Ok(objective(p, first)? + objective(p, second)?)
}

/// Evaluator that re-simulates only when a non-linear parameter changed.
struct Evaluator<'a> {
    fp: &'a FitProblem,
    cache: RefCell<Option<(Vec<f64>, Vec<f64>)>>,
    evaluations: RefCell<usize>,
}

impl<'a> Evaluator<'a> {
    fn new(fp: &'a FitProblem) -> Self {
        Self {
            fp,
            cache: RefCell::new(None),
            evaluations: RefCell::new(0),
        }
    }

    fn eval(&self, p: &[f64]) -> Result<f64> {
        *self.evaluations.borrow_mut() += 1;
        let key: Vec<f64> = self
            .fp
            .free
            .iter()
            .zip(p)
            .filter(|(param, _)| !param.is_linear())
            .map(|(_, &v)| v)
            .collect();
        let hit = matches!(&*self.cache.borrow(), Some((k, _)) if *k == key);
        if !hit {
            let model = self.fp.model(p)?;
            *self.cache.borrow_mut() = Some((key, model));
        }
        let cache = self.cache.borrow();
        let model = &cache.as_ref().expect("filled above").1;
        let (scale, offset) = self.fp.linear_parts(p);
        Ok(sum_sq(model, &self.fp.target, scale, offset))
    }

    fn count(&self) -> usize {
        *self.evaluations.borrow()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEstimate {
    pub name: String,
    pub unit: String,
    pub value: f64,
    pub initial: f64,
    /// Local curvature sensitivity, `None` when the curvature is not positive.
    pub sensitivity: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iteration: usize,
    pub evaluations: usize,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub channel: Signal,
    pub params: Vec<ParamEstimate>,
    pub objective: f64,
    pub initial_objective: f64,
    /// sqrt of the objective at the best point.
    pub residual_norm: f64,
    pub initial_residual_norm: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    /// How `sensitivity` was obtained.
    pub sensitivity_method: String,
    pub trace: Vec<TraceEntry>,
}

impl FitResult {
    pub fn value(&self, param: FitParam) -> Option<f64> {
        self.params.iter().find(|e| e.name == param.name()).map(|e| e.value)
    }

    pub fn sensitivity(&self, param: FitParam) -> Option<f64> {
        self.params
            .iter()
            .find(|e| e.name == param.name())
            .and_then(|e| e.sensitivity)
    }

    pub fn best(&self) -> Vec<f64> {
        self.params.iter().map(|e| e.value).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Fills unset starting values: non-linear parameters from the scenario,
/// scale and offset by linear least squares at the starting point.
pub fn resolve_init(fp: &FitProblem, init: &[Option<f64>]) -> Result<Vec<f64>> {
    if init.len() != fp.free.len() {
        return Err(Error::validation("fit.init", "one starting value per free parameter"));
    }
    let mut p: Vec<f64> = fp
        .free
        .iter()
        .zip(init)
        .map(|(param, v)| {
            v.or_else(|| param.scenario_value(&fp.scenario))
                .unwrap_or(if *param == FitParam::AmplitudeScale { 1.0 } else { 0.0 })
        })
        .collect();
    let want_scale = fp.free.iter().zip(init).any(|(q, v)| *q == FitParam::AmplitudeScale && v.is_none());
    let want_offset = fp.free.iter().zip(init).any(|(q, v)| *q == FitParam::BaselineOffset && v.is_none());
    if want_scale || want_offset {
        let model = fp.model(&p)?;
        let (scale0, offset0) = fp.linear_parts(&p);
        let fixed_scale = (!want_scale).then_some(scale0);
        let fixed_offset = (!want_offset).then_some(offset0);
        let (scale, offset) = linear_least_squares(&model, &fp.target, fixed_scale, fixed_offset);
        for (i, param) in fp.free.iter().enumerate() {
            match param {
                FitParam::AmplitudeScale if want_scale => p[i] = scale,
                FitParam::BaselineOffset if want_offset => p[i] = offset,
                _ => {}
            }
        }
    }
    for (i, &(lo, hi)) in fp.bounds.iter().enumerate() {
        p[i] = p[i].clamp(lo, hi);
    }
    Ok(p)
}

/// Least-squares scale and offset for `target ≈ scale·model + offset`, with
/// either one optionally held fixed.
pub fn linear_least_squares(model: &[f64], target: &[f64], fixed_scale: Option<f64>, fixed_offset: Option<f64>) -> (f64, f64) {
    let n = model.len() as f64;
    let sm: f64 = model.iter().sum();
    let st: f64 = target.iter().sum();
    let smm: f64 = model.iter().map(|m| m * m).sum();
    let smt: f64 = model.iter().zip(target).map(|(m, t)| m * t).sum();
    match (fixed_scale, fixed_offset) {
        (Some(s), Some(o)) => (s, o),
        (Some(s), None) => (s, (st - s * sm) / n),
        (None, Some(o)) => (if smm > 0.0 { (smt - o * sm) / smm } else { 1.0 }, o),
        (None, None) => {
            let det = n * smm - sm * sm;
            if det.abs() <= f64::EPSILON * n * smm {
                (if smm > 0.0 { smt / smm } else { 1.0 }, 0.0)
            } else {
                let s = (n * smt - sm * st) / det;
                (s, (st - s * sm) / n)
            }
        }
    }
}

const DIAMETER_TOL: f64 = 1e-4;
const IMPROVEMENT_TOL: f64 = 1e-8;
const IMPROVEMENT_WINDOW: usize = 20;

/// Bounded Nelder–Mead from `init`. Never errors on non-convergence: the
/// result is returned with `converged = false`.
pub fn fit(fp: &FitProblem, init: &[f64]) -> Result<FitResult> {
    fp.validate()?;
    let k = fp.free.len();
    if init.len() != k {
        return Err(Error::validation("fit.init", "one starting value per free parameter"));
    }
    for ((param, &v), &(lo, hi)) in fp.free.iter().zip(init).zip(&fp.bounds) {
        if !(lo..=hi).contains(&v) {
            return Err(Error::validation(format!("fit.init_{}", param.name()), "initial value outside the bounds"));
        }
    }
    let ev = Evaluator::new(fp);
    let target_rms = (fp.target_energy() / fp.target.len() as f64).sqrt();
    let steps: Vec<f64> = fp
        .free
        .iter()
        .zip(init)
        .zip(&fp.bounds)
        .map(|((param, &v), &(lo, hi))| {
            let h = if v != 0.0 {
                0.1 * v.abs()
            } else if *param == FitParam::BaselineOffset && target_rms > 0.0 {
                0.1 * target_rms
            } else {
                0.05 * (hi - lo)
            };
            h.min(0.5 * (hi - lo))
        })
        .collect();
    let project = |x: &mut Vec<f64>| {
        for (xi, &(lo, hi)) in x.iter_mut().zip(&fp.bounds) {
            *xi = xi.clamp(lo, hi);
        }
    };

    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(k + 1);
    let f0 = ev.eval(init)?;
    simplex.push((init.to_vec(), f0));
    for i in 0..k {
        let mut x = init.to_vec();
        let (lo, hi) = fp.bounds[i];
        x[i] = if x[i] + steps[i] <= hi { x[i] + steps[i] } else { (x[i] - steps[i]).max(lo) };
        let f = ev.eval(&x)?;
        simplex.push((x, f));
    }

    let floor = 1e-16 * fp.target_energy();
    let mut history: Vec<f64> = Vec::new();
    let mut trace = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    loop {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let best = simplex[0].1;
        history.push(best);
        trace.push(TraceEntry {
            iteration: iterations,
            evaluations: ev.count(),
            objective: best,
        });

        let diameter = simplex[1..]
            .iter()
            .flat_map(|(x, _)| {
                x.iter()
                    .zip(&simplex[0].0)
                    .zip(&steps)
                    .map(|((a, b), h)| (a - b).abs() / b.abs().max(*h))
            })
            .fold(0.0f64, f64::max);
        let stalled = history.len() > IMPROVEMENT_WINDOW && {
            let before = history[history.len() - 1 - IMPROVEMENT_WINDOW];
            before - best <= IMPROVEMENT_TOL * best.abs() + floor
        };
        if diameter < DIAMETER_TOL && stalled {
            converged = true;
            break;
        }
        if ev.count() >= fp.max_evaluations {
            break;
        }
        iterations += 1;

        let worst = simplex[k].clone();
        let centroid: Vec<f64> = (0..k)
            .map(|i| simplex[..k].iter().map(|(x, _)| x[i]).sum::<f64>() / k as f64)
            .collect();
        let along = |t: f64| {
            let mut x: Vec<f64> = centroid.iter().zip(&worst.0).map(|(c, w)| c + t * (c - w)).collect();
            project(&mut x);
            x
        };

        let xr = along(1.0);
        let fr = ev.eval(&xr)?;
        if fr < simplex[0].1 {
            let xe = along(2.0);
            let fe = ev.eval(&xe)?;
            simplex[k] = if fe < fr { (xe, fe) } else { (xr, fr) };
            continue;
        }
        if fr < simplex[k - 1].1 {
            simplex[k] = (xr, fr);
            continue;
        }
        let (xc, fc) = if fr < worst.1 {
            let x = along(0.5);
            let f = ev.eval(&x)?;
            (x, f)
        } else {
            let x = along(-0.5);
            let f = ev.eval(&x)?;
            (x, f)
        };
        if fc < worst.1.min(fr) {
            simplex[k] = (xc, fc);
            continue;
        }
        let x0 = simplex[0].0.clone();
        for v in simplex.iter_mut().skip(1) {
            let mut x: Vec<f64> = x0.iter().zip(&v.0).map(|(b, xi)| b + 0.5 * (xi - b)).collect();
            project(&mut x);
            v.1 = ev.eval(&x)?;
            v.0 = x;
        }
    }

    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (best_x, best_f) = simplex[0].clone();
    let evaluations = ev.count();
    let sens = sensitivity(&ev, fp, &best_x, best_f, &steps)?;
    Ok(FitResult {
        channel: fp.channel,
        params: fp
            .free
            .iter()
            .enumerate()
            .map(|(i, p)| ParamEstimate {
                name: p.name().to_string(),
                unit: p.unit().to_string(),
                value: best_x[i],
                initial: init[i],
                sensitivity: sens[i],
            })
            .collect(),
        objective: best_f,
        initial_objective: f0,
        residual_norm: best_f.sqrt(),
        initial_residual_norm: f0.sqrt(),
        iterations,
        evaluations,
        converged,
        sensitivity_method: "curvature of the objective by central differences; sigma_i = sqrt(2 s^2 (H^-1)_ii), s^2 = objective/(N - k)".into(),
        trace,
    })
}

/// One-sigma local sensitivities from the finite-difference Hessian.
fn sensitivity(ev: &Evaluator<'_>, fp: &FitProblem, x: &[f64], fx: f64, steps: &[f64]) -> Result<Vec<Option<f64>>> {
    let k = x.len();
    let n = fp.target.len();
    if n <= k {
        return Ok(vec![None; k]);
    }
    let h: Vec<f64> = x
        .iter()
        .zip(steps)
        .zip(&fp.bounds)
        .map(|((v, s), &(lo, hi))| {
            let h = 1e-3 * v.abs().max(*s);
            h.min(0.25 * (hi - lo))
        })
        .collect();
    // evaluations may step slightly past the bounds; the objective is smooth there
    let at = |d: &[(usize, f64)]| -> Result<f64> {
        let mut p = x.to_vec();
        for &(i, s) in d {
            p[i] += s * h[i];
        }
        ev.eval(&p)
    };
    let mut hess = DMatrix::<f64>::zeros(k, k);
    for i in 0..k {
        hess[(i, i)] = (at(&[(i, 1.0)])? + at(&[(i, -1.0)])? - 2.0 * fx) / (h[i] * h[i]);
        for j in 0..i {
            let v = (at(&[(i, 1.0), (j, 1.0)])? - at(&[(i, 1.0), (j, -1.0)])? - at(&[(i, -1.0), (j, 1.0)])?
                + at(&[(i, -1.0), (j, -1.0)])?)
                / (4.0 * h[i] * h[j]);
            hess[(i, j)] = v;
            hess[(j, i)] = v;
        }
    }
    let s2 = fx / (n - k) as f64;
    let Some(inv) = hess.try_inverse() else {
        return Ok(vec![None; k]);
    };
    Ok((0..k)
        .map(|i| {
            let c = inv[(i, i)];
            (c > 0.0 && c.is_finite()).then(|| (2.0 * s2 * c).sqrt())
        })
        .collect())
}

/// `signal · (1 + rel·ξ)` with ξ standard normal from a seeded ChaCha stream.
pub fn multiplicative_noise(signal: &[f64], rel: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    signal.iter().map(|&s| s * (1.0 + rel * normal.sample(&mut rng))).collect()
}

/// Target trace from a simulated spectrum, optionally with multiplicative noise.
pub fn synthetic_target(spec: &Spectrum, channel: Signal, noise: Option<(f64, u64)>) -> MeasuredSpectrum {
    let clean = spec.signal(channel);
    let signal = match noise {
        Some((rel, seed)) => multiplicative_noise(clean, rel, seed),
        None => clean.to_vec(),
    };
    MeasuredSpectrum {
        delta1: spec.delta1.clone(),
        signal,
        uncertainty: None,
        metadata: crate::config::MeasuredMetadata {
            source: "synthetic".into(),
            abscissa: crate::config::Abscissa::DetuningMhz,
            resonance_cm: None,
            signal_column: match channel {
                Signal::Rho22 => "rho22_au".into(),
                Signal::Rho33 => "rho33_au".into(),
            },
            resorted: false,
        },
    }
}
