//! Fluorescence lineshapes versus probe detuning.
//!
//! Each grid point is the |M|-summed, Maxwellian-averaged steady-state
//! population of level 2 and level 3. Grid points are independent and are
//! evaluated through [`crate::parallel::map_indexed`]; every reduction runs in
//! a fixed order, so the output is bit-identical for any thread count.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analytic::ClosedForm;
use crate::doppler::{velocity_detunings, CompensatedSum, QuadratureScheme, VelocityQuadrature};
use crate::error::{Error, Result};
use crate::model::Scenario;
use crate::oracle::solve_steady_state;
use crate::parallel::map_indexed;
use crate::sublevels::{ChannelSet, SublevelChannel};
use crate::system::DriveParams;
use crate::units::{mhz_to_angular, rabi_frequency, wavenumber_to_angular};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Engine {
    Analytic,
    Oracle,
}

impl std::str::FromStr for Engine {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim() {
            "analytic" => Ok(Engine::Analytic),
            "oracle" => Ok(Engine::Oracle),
            other => Err(format!("unknown engine `{other}` (expected analytic or oracle)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Signal {
    Rho22,
    Rho33,
}

impl std::str::FromStr for Signal {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim() {
            "rho22" => Ok(Signal::Rho22),
            "rho33" => Ok(Signal::Rho33),
            other => Err(format!("unknown channel `{other}` (expected rho22 or rho33)")),
        }
    }
}

/// How magnetic sublevels enter the signal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SublevelMode {
    /// Multiplicity-weighted sum over every coupled |M|.
    Sum,
    /// One |M| channel, weight one.
    Single(u32),
    /// No rotational factors: one channel with g = μE/ħ.
    Unresolved,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanConfig {
    /// Probe detunings δ1, MHz, strictly increasing.
    pub delta1: Vec<f64>,
    /// Coupling detuning δ2, MHz.
    pub delta2: f64,
    pub rho22: bool,
    pub rho33: bool,
    pub doppler: bool,
    pub sublevels: SublevelMode,
    pub engine: Engine,
}

impl ScanConfig {
    /// Default scan: 801 points over ±3 GHz, both channels, Doppler and |M| sum on.
    pub fn new(delta2: f64) -> Self {
        Self {
            delta1: uniform_grid(-3000.0, 3000.0, 801),
            delta2,
            rho22: true,
            rho33: true,
            doppler: true,
            sublevels: SublevelMode::Sum,
            engine: Engine::Analytic,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.delta1.len() < 3 {
            return Err(Error::validation("points", "scan needs at least 3 grid points"));
        }
        if self.delta1.iter().any(|v| !v.is_finite()) || !self.delta2.is_finite() {
            return Err(Error::validation("scan", "detunings must be finite"));
        }
        if self.delta1.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::validation("scan", "probe detuning grid must be strictly increasing"));
        }
        Ok(())
    }
}

pub fn uniform_grid(start: f64, stop: f64, points: usize) -> Vec<f64> {
    if points == 1 {
        return vec![start];
    }
    let step = (stop - start) / (points - 1) as f64;
    (0..points).map(|i| start + step * i as f64).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadratureReport {
    pub scheme: QuadratureScheme,
    pub node_count: usize,
    pub tolerance: f64,
    /// max |reported − half-resolution| over the grid, relative to the peak.
    pub deviation_rho22: f64,
    pub deviation_rho33: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumMetadata {
    pub scenario: Scenario,
    pub delta2_mhz: f64,
    pub engine: Engine,
    pub doppler: bool,
    pub sublevels: SublevelMode,
    pub channels: Vec<Signal>,
    /// Set on single-|M| components.
    pub abs_m: Option<u32>,
    pub quadrature: Option<QuadratureReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    pub metadata: SpectrumMetadata,
    #[serde(rename = "delta1_MHz")]
    pub delta1: Vec<f64>,
    #[serde(rename = "rho22_au")]
    pub rho22: Vec<f64>,
    #[serde(rename = "rho33_au")]
    pub rho33: Vec<f64>,
}

impl Spectrum {
    pub fn signal(&self, which: Signal) -> &[f64] {
        match which {
            Signal::Rho22 => &self.rho22,
            Signal::Rho33 => &self.rho33,
        }
    }

    /// CSV with `# key = value` header lines echoing the metadata, then
    /// `delta1_MHz,rho22_au,rho33_au` rows at 12 significant digits.
    pub fn to_csv(&self) -> Result<String> {
        let mut out = String::new();
        let meta = serde_json::to_value(&self.metadata)?;
        let mut lines = Vec::new();
        flatten_json("", &meta, &mut lines);
        for (k, v) in lines {
            let _ = writeln!(out, "# {k} = {v}");
        }
        out.push_str("delta1_MHz,rho22_au,rho33_au\n");
        for i in 0..self.delta1.len() {
            let _ = writeln!(
                out,
                "{},{},{}",
                fmt_sig(self.delta1[i]),
                fmt_sig(self.rho22[i]),
                fmt_sig(self.rho33[i])
            );
        }
        Ok(out)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Writes `<stem>.csv` and `<stem>.json` into `dir`.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<(PathBuf, PathBuf)> {
        std::fs::create_dir_all(dir)?;
        let csv = dir.join(format!("{stem}.csv"));
        let json = dir.join(format!("{stem}.json"));
        std::fs::write(&csv, self.to_csv()?)?;
        std::fs::write(&json, self.to_json()?)?;
        Ok((csv, json))
    }
}

/// Twelve significant digits, scientific notation.
pub fn fmt_sig(v: f64) -> String {
    format!("{v:.11e}")
}

fn flatten_json(prefix: &str, v: &serde_json::Value, out: &mut Vec<(String, String)>) {
    match v {
        serde_json::Value::Object(map) => {
            for (k, val) in map {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten_json(&key, val, out);
            }
        }
        other => out.push((prefix.to_string(), other.to_string())),
    }
}

/// Channels that actually enter the scan, with the weight each carries.
fn active_channels(scn: &Scenario, cs: &ChannelSet, mode: SublevelMode) -> Result<Vec<SublevelChannel>> {
    match mode {
        SublevelMode::Sum => Ok(cs.channels.clone()),
        SublevelMode::Single(m) => {
            let c = cs
                .get(m)
                .ok_or_else(|| Error::validation("only_m", format!("|M| = {m} is not a coupled channel")))?;
            Ok(vec![SublevelChannel { multiplicity: 1, ..*c }])
        }
        SublevelMode::Unresolved => {
            let (e1, e2) = scn.lasers.fields()?;
            Ok(vec![SublevelChannel {
                abs_m: 0,
                multiplicity: 1,
                f_probe: 1.0,
                f_coupling: 1.0,
                g1: rabi_frequency(scn.dipoles.probe, e1),
                g2: rabi_frequency(scn.dipoles.coupling, e2),
            }])
        }
    }
}

/// Per-point, per-channel values: [ρ22, ρ33, ρ22 coarse, ρ33 coarse], multiplicity applied.
type PointTrace = Vec<[f64; 4]>;

struct Traces {
    channels: Vec<SublevelChannel>,
    points: Vec<PointTrace>,
}

fn compute(scn: &Scenario, cs: &ChannelSet, scan: &ScanConfig) -> Result<Traces> {
    scan.validate()?;
    scn.validate()?;
    let sys = &scn.system;
    let channels = active_channels(scn, cs, scan.sublevels)?;
    let closed = ClosedForm::new(sys);
    let rho0 = sys.rho11_0();
    let omega21 = wavenumber_to_angular(sys.omega21);
    let omega32 = wavenumber_to_angular(sys.omega32);
    let delta2 = mhz_to_angular(scan.delta2);
    let geometry = scn.ensemble.geometry;
    let quad = if scan.doppler {
        Some(VelocityQuadrature::new(&scn.ensemble, &scn.quadrature)?)
    } else {
        None
    };

    let engine = scan.engine;
    let eval = |c: &SublevelChannel, d1: f64, d2: f64| -> Result<[f64; 2]> {
        match engine {
            Engine::Analytic => {
                let (r22, r33) = closed.populations(c.g1 * c.g1, c.g2 * c.g2, d1, d2, rho0);
                Ok([r22, r33])
            }
            Engine::Oracle => {
                let st = solve_steady_state(
                    sys,
                    &DriveParams {
                        g1: c.g1,
                        g2: c.g2,
                        delta1: d1,
                        delta2: d2,
                        rho11_0: rho0,
                    },
                )?;
                Ok([st.rho22, st.rho33])
            }
        }
    };

    let points: Vec<Result<PointTrace>> = map_indexed(scan.delta1.len(), |i| {
        let delta1 = mhz_to_angular(scan.delta1[i]);
        channels
            .iter()
            .map(|c| {
                let weight = c.multiplicity as f64;
                match &quad {
                    None => {
                        let [r22, r33] = eval(c, delta1, delta2)?;
                        Ok([weight * r22, weight * r33, weight * r22, weight * r33])
                    }
                    Some(q) => {
                        let mut failure = None;
                        let [e22, e33] = q.integrate_n(|_, vz| {
                            let (d1, d2) = velocity_detunings(delta1, delta2, omega21, omega32, vz, geometry);
                            match eval(c, d1, d2) {
                                Ok(v) => v,
                                Err(e) => {
                                    failure.get_or_insert(e);
                                    [0.0, 0.0]
                                }
                            }
                        });
                        if let Some(e) = failure {
                            return Err(e);
                        }
                        Ok([
                            weight * e22.value,
                            weight * e33.value,
                            weight * e22.coarse,
                            weight * e33.coarse,
                        ])
                    }
                }
            })
            .collect()
    });
    let points = points.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(Traces { channels, points })
}

fn sum_channels(trace: &PointTrace, k: usize) -> f64 {
    let mut acc = CompensatedSum::default();
    for v in trace {
        acc.add(v[k]);
    }
    acc.value()
}

fn relative_deviation(fine: &[f64], coarse: &[f64]) -> f64 {
    let peak = fine.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak == 0.0 {
        return 0.0;
    }
    fine.iter().zip(coarse).fold(0.0f64, |m, (a, b)| m.max((a - b).abs())) / peak
}

fn metadata(scn: &Scenario, scan: &ScanConfig, abs_m: Option<u32>) -> SpectrumMetadata {
    let mut channels = Vec::new();
    if scan.rho22 {
        channels.push(Signal::Rho22);
    }
    if scan.rho33 {
        channels.push(Signal::Rho33);
    }
    SpectrumMetadata {
        scenario: scn.clone(),
        delta2_mhz: scan.delta2,
        engine: scan.engine,
        doppler: scan.doppler,
        sublevels: scan.sublevels,
        channels,
        abs_m,
        quadrature: None,
    }
}

/// Refinement check on a summed spectrum. `None` without Doppler averaging.
fn quadrature_report(scn: &Scenario, scan: &ScanConfig, rows: &[[f64; 4]]) -> Result<Option<QuadratureReport>> {
    if !scan.doppler {
        return Ok(None);
    }
    let col = |k: usize| rows.iter().map(|r| r[k]).collect::<Vec<_>>();
    let report = QuadratureReport {
        scheme: scn.quadrature.scheme,
        node_count: scn.quadrature.node_count,
        tolerance: scn.quadrature.refinement_tolerance,
        deviation_rho22: relative_deviation(&col(0), &col(2)),
        deviation_rho33: relative_deviation(&col(1), &col(3)),
    };
    let worst = report.deviation_rho22.max(report.deviation_rho33);
    if worst > report.tolerance {
        return Err(Error::QuadratureNotConverged {
            deviation: worst,
            tolerance: report.tolerance,
        });
    }
    Ok(Some(report))
}

fn assemble_spectrum(
    scn: &Scenario,
    scan: &ScanConfig,
    abs_m: Option<u32>,
    rows: impl Iterator<Item = [f64; 4]>,
    report: Option<QuadratureReport>,
) -> Spectrum {
    let (mut r22, mut r33): (Vec<f64>, Vec<f64>) = rows.map(|r| (r[0], r[1])).unzip();
    if !scan.rho22 {
        r22.iter_mut().for_each(|v| *v = 0.0);
    }
    if !scan.rho33 {
        r33.iter_mut().for_each(|v| *v = 0.0);
    }
    let mut metadata = metadata(scn, scan, abs_m);
    metadata.quadrature = report;
    Spectrum {
        metadata,
        delta1: scan.delta1.clone(),
        rho22: r22,
        rho33: r33,
    }
}

fn summed_rows(traces: &Traces) -> Vec<[f64; 4]> {
    traces.points.iter().map(|p| std::array::from_fn(|k| sum_channels(p, k))).collect()
}

/// Σ_|M| multiplicity · ∫ ρii N(vz) dvz at every probe detuning of the scan.
pub fn simulate(scn: &Scenario, cs: &ChannelSet, scan: &ScanConfig) -> Result<Spectrum> {
    let traces = compute(scn, cs, scan)?;
    let rows = summed_rows(&traces);
    let report = quadrature_report(scn, scan, &rows)?;
    Ok(assemble_spectrum(scn, scan, None, rows.into_iter(), report))
}

/// The terms of [`simulate`] before the |M| reduction, one spectrum per
/// channel in ascending |M|. Each component already carries its multiplicity,
/// so the components add up to the summed spectrum. The refinement check is
/// applied to the sum.
pub fn per_m_components(scn: &Scenario, cs: &ChannelSet, scan: &ScanConfig) -> Result<Vec<Spectrum>> {
    let traces = compute(scn, cs, scan)?;
    let report = quadrature_report(scn, scan, &summed_rows(&traces))?;
    Ok(traces
        .channels
        .iter()
        .enumerate()
        .map(|(ci, c)| {
            assemble_spectrum(scn, scan, Some(c.abs_m), traces.points.iter().map(|p| p[ci]), report.clone())
        })
        .collect())
}

/// Probe detuning (MHz) of the coherent dip: −|k1/k2|·δ2 with Doppler
/// averaging, −δ2 without. `omega1`, `omega2` are wavenumbers.
pub fn predict_dip_position(delta2: f64, omega1: f64, omega2: f64, doppler: bool) -> f64 {
    if doppler {
        -(omega1 / omega2).abs() * delta2
    } else {
        -delta2
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    pub position: f64,
    pub height: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineFeatures {
    /// Refined peak positions (MHz), ascending.
    pub peak_positions: Vec<f64>,
    pub dip_position: f64,
    pub dip_value: f64,
    pub dip_depth_fraction: f64,
    /// Full width of the dip at half its depth, MHz.
    pub dip_width: f64,
    /// Outer full width at half maximum, MHz.
    pub fwhm: Option<f64>,
    /// Separation of the two largest peaks, MHz.
    pub at_splitting: f64,
}

/// Vertex of the parabola through three points.
fn parabola_vertex(x: [f64; 3], y: [f64; 3]) -> (f64, f64) {
    let d1 = (y[1] - y[0]) / (x[1] - x[0]);
    let d2 = (y[2] - y[1]) / (x[2] - x[1]);
    let a = (d2 - d1) / (x[2] - x[0]);
    if a == 0.0 || !a.is_finite() {
        return (x[1], y[1]);
    }
    let xv = 0.5 * (x[0] + x[1]) - d1 / (2.0 * a);
    let xv = xv.clamp(x[0], x[2]);
    let yv = y[0] + d1 * (xv - x[0]) + a * (xv - x[0]) * (xv - x[1]);
    (xv, yv)
}

/// Local maxima above 1e-6 of the global maximum, refined by a three-point parabola.
pub fn find_peaks(x: &[f64], y: &[f64]) -> Vec<Peak> {
    let max = y.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(max > 0.0) {
        return Vec::new();
    }
    let floor = 1e-6 * max;
    (1..y.len().saturating_sub(1))
        .filter(|&i| y[i] > y[i - 1] && y[i] >= y[i + 1] && y[i] > floor)
        .map(|i| {
            let (position, height) = parabola_vertex([x[i - 1], x[i], x[i + 1]], [y[i - 1], y[i], y[i + 1]]);
            Peak { position, height }
        })
        .collect()
}

fn crossing(x0: f64, y0: f64, x1: f64, y1: f64, level: f64) -> f64 {
    if y1 == y0 {
        return 0.5 * (x0 + x1);
    }
    x0 + (level - y0) * (x1 - x0) / (y1 - y0)
}

/// Outer full width at half maximum, `None` if the profile does not fall
/// below half maximum on both sides within the grid.
pub fn fwhm(x: &[f64], y: &[f64]) -> Option<f64> {
    let (imax, &max) = y.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1))?;
    if !(max > 0.0) {
        return None;
    }
    let half = 0.5 * max;
    let first = y.iter().position(|&v| v >= half)?;
    let last = y.iter().rposition(|&v| v >= half)?;
    if first == 0 || last + 1 >= y.len() || first > imax || last < imax {
        return None;
    }
    let left = crossing(x[first - 1], y[first - 1], x[first], y[first], half);
    let right = crossing(x[last], y[last], x[last + 1], y[last + 1], half);
    Some(right - left)
}

pub fn extract_features(s: &Spectrum, channel: Signal) -> Result<LineFeatures> {
    let x = &s.delta1;
    let y = s.signal(channel);
    let peaks = find_peaks(x, y);
    if peaks.len() < 2 {
        return Err(Error::FewerThanTwoPeaks(peaks.len()));
    }
    let mut largest = peaks.clone();
    largest.sort_by(|a, b| b.height.total_cmp(&a.height));
    let (mut left, mut right) = (largest[0].clone(), largest[1].clone());
    if left.position > right.position {
        std::mem::swap(&mut left, &mut right);
    }

    // lowest sample strictly between the two peaks
    let inner: Vec<usize> = (0..x.len()).filter(|&i| x[i] > left.position && x[i] < right.position).collect();
    let imin = inner
        .iter()
        .copied()
        .min_by(|&a, &b| y[a].total_cmp(&y[b]))
        .ok_or(Error::NoDipFound)?;
    if y[imin] >= left.height.min(right.height) || imin == 0 || imin + 1 >= x.len() {
        return Err(Error::NoDipFound);
    }
    let (dip_position, dip_value) = parabola_vertex([x[imin - 1], x[imin], x[imin + 1]], [y[imin - 1], y[imin], y[imin + 1]]);
    let t = (dip_position - left.position) / (right.position - left.position);
    let baseline = left.height + t * (right.height - left.height);
    let depth = if baseline > 0.0 { (1.0 - dip_value / baseline).clamp(0.0, 1.0) } else { 0.0 };

    let level = 0.5 * (dip_value + baseline);
    let mut lo = left.position;
    for i in (1..=imin).rev() {
        if y[i - 1] >= level && y[i] < level && x[i - 1] >= left.position - (x[i] - x[i - 1]) {
            lo = crossing(x[i - 1], y[i - 1], x[i], y[i], level);
            break;
        }
    }
    let mut hi = right.position;
    for i in imin..x.len() - 1 {
        if y[i] < level && y[i + 1] >= level {
            hi = crossing(x[i], y[i], x[i + 1], y[i + 1], level);
            break;
        }
    }

    Ok(LineFeatures {
        peak_positions: peaks.iter().map(|p| p.position).collect(),
        dip_position,
        dip_value,
        dip_depth_fraction: depth,
        dip_width: hi - lo,
        fwhm: fwhm(x, y),
        at_splitting: right.position - left.position,
    })
}
