//! Velocity classes along the beam axis and Maxwellian averaging over them.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::units::{ATOMIC_MASS_UNIT, BOLTZMANN, SPEED_OF_LIGHT, WAVENUMBER_TO_MHZ};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Geometry {
    CounterPropagating,
    CoPropagating,
}

impl std::str::FromStr for Geometry {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim() {
            "counter" | "counter_propagating" => Ok(Geometry::CounterPropagating),
            "co" | "co_propagating" => Ok(Geometry::CoPropagating),
            other => Err(format!("unknown geometry `{other}` (expected counter or co)")),
        }
    }
}

/// Thermal molecular ensemble. `temperature` and `mass` are absent when the
/// most probable speed was set from a measured Doppler width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ensemble {
    pub temperature: Option<f64>,
    pub mass_amu: Option<f64>,
    /// Most probable speed u_p = sqrt(2kT/m), m/s.
    pub most_probable_speed: f64,
    pub geometry: Geometry,
}

impl Ensemble {
    pub fn thermal(temperature: f64, mass_amu: f64, geometry: Geometry) -> Result<Self> {
        if !(temperature > 0.0) || !(mass_amu > 0.0) {
            return Err(Error::InvalidInput(format!(
                "temperature and mass must be positive, got T = {temperature} K, m = {mass_amu} amu"
            )));
        }
        let u_p = (2.0 * BOLTZMANN * temperature / (mass_amu * ATOMIC_MASS_UNIT)).sqrt();
        Ok(Self {
            temperature: Some(temperature),
            mass_amu: Some(mass_amu),
            most_probable_speed: u_p,
            geometry,
        })
    }

    /// Inverts the Gaussian Doppler width: FWHM = 2√(ln 2)·u_p·ν̃, with ν̃ the
    /// transition wavenumber of the scanned laser.
    pub fn from_doppler_fwhm(fwhm_mhz: f64, wavenumber_cm: f64, geometry: Geometry) -> Result<Self> {
        if !(fwhm_mhz > 0.0) || !(wavenumber_cm > 0.0) {
            return Err(Error::InvalidInput(format!(
                "Doppler width and wavenumber must be positive, got {fwhm_mhz} MHz, {wavenumber_cm} cm-1"
            )));
        }
        let per_speed = doppler_fwhm_mhz(1.0, wavenumber_cm);
        Ok(Self {
            temperature: None,
            mass_amu: None,
            most_probable_speed: fwhm_mhz / per_speed,
            geometry,
        })
    }

    /// Maxwellian N(vz) = exp(−vz²/u_p²)/(√π u_p).
    pub fn density(&self, vz: f64) -> f64 {
        let u = self.most_probable_speed;
        (-(vz / u).powi(2)).exp() / (PI.sqrt() * u)
    }
}

/// Gaussian Doppler FWHM (cyclic MHz) for most probable speed `u_p` (m/s).
pub fn doppler_fwhm_mhz(u_p: f64, wavenumber_cm: f64) -> f64 {
    2.0 * 2f64.ln().sqrt() * u_p / SPEED_OF_LIGHT * wavenumber_cm * WAVENUMBER_TO_MHZ
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum QuadratureScheme {
    UniformTrapezoid,
    GaussHermite,
}

impl std::str::FromStr for QuadratureScheme {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim() {
            "trapezoid" | "uniform_trapezoid" => Ok(QuadratureScheme::UniformTrapezoid),
            "gauss_hermite" | "hermite" => Ok(QuadratureScheme::GaussHermite),
            other => Err(format!("unknown quadrature scheme `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureSpec {
    pub scheme: QuadratureScheme,
    pub node_count: usize,
    /// Half-width of the trapezoid span in units of u_p.
    pub span: f64,
    pub refinement_tolerance: f64,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        Self {
            scheme: QuadratureScheme::UniformTrapezoid,
            node_count: 4001,
            span: 4.0,
            refinement_tolerance: 1e-4,
        }
    }
}

impl QuadratureSpec {
    pub fn validate(&self) -> Result<()> {
        match self.scheme {
            QuadratureScheme::UniformTrapezoid => {
                if self.node_count < 51 || self.node_count.is_multiple_of(2) {
                    return Err(Error::validation(
                        "nodes",
                        format!("trapezoid needs an odd node count >= 51, got {}", self.node_count),
                    ));
                }
                if !(self.span > 0.0) {
                    return Err(Error::validation("span", "must be positive"));
                }
            }
            QuadratureScheme::GaussHermite => {
                if !(4..=400).contains(&self.node_count) {
                    return Err(Error::validation(
                        "nodes",
                        format!("Gauss-Hermite node count must lie in 4..=400, got {}", self.node_count),
                    ));
                }
            }
        }
        if !(self.refinement_tolerance > 0.0) {
            return Err(Error::validation("tolerance", "must be positive"));
        }
        Ok(())
    }
}

/// Velocity-dependent detunings (Mrad/s) seen by a molecule moving at `vz`.
///
/// `omega21` and `omega32` are the transition angular frequencies, so the
/// laser frequencies are `omega21 + delta1` and `omega32 + delta2`. The probe
/// travels towards +z; in the counter-propagating geometry the coupling beam
/// travels towards −z.
pub fn velocity_detunings(
    delta1: f64,
    delta2: f64,
    omega21: f64,
    omega32: f64,
    vz: f64,
    geometry: Geometry,
) -> (f64, f64) {
    let beta = vz / SPEED_OF_LIGHT;
    let d1 = (1.0 - beta) * delta1 - beta * omega21;
    let d2 = match geometry {
        Geometry::CounterPropagating => (1.0 + beta) * delta2 + beta * omega32,
        Geometry::CoPropagating => (1.0 - beta) * delta2 - beta * omega32,
    };
    (d1, d2)
}

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

/// One velocity integral evaluated with the reporting rule and with the
/// half-resolution comparison rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub coarse: f64,
    /// ∫|f| N dvz, the scale used for the refinement check.
    pub magnitude: f64,
}

impl Estimate {
    pub fn deviation(&self) -> f64 {
        (self.value - self.coarse).abs()
    }
}

/// Nodes and Maxwellian-weighted quadrature weights for a given ensemble.
///
/// Every node carries two weights: one for the reported rule and one for a
/// rule at half the resolution. For the trapezoid the coarse rule uses every
/// other node; for Gauss–Hermite it is a separate (n+1)/2-point rule whose
/// nodes are appended with zero fine weight. Both weight sets are normalized
/// to sum to one, so the truncated Maxwellian integrates to exactly one.
#[derive(Debug, Clone)]
pub struct VelocityQuadrature {
    pub nodes: Vec<f64>,
    pub fine: Vec<f64>,
    pub coarse: Vec<f64>,
    pub spec: QuadratureSpec,
}

impl VelocityQuadrature {
    pub fn new(ens: &Ensemble, spec: &QuadratureSpec) -> Result<Self> {
        spec.validate()?;
        let u = ens.most_probable_speed;
        if !(u > 0.0) || !u.is_finite() {
            return Err(Error::InvalidInput(format!("most probable speed must be positive, got {u}")));
        }
        let (nodes, mut fine, mut coarse) = match spec.scheme {
            QuadratureScheme::UniformTrapezoid => {
                let n = spec.node_count;
                let half = spec.span * u;
                let step = 2.0 * half / (n - 1) as f64;
                let nodes: Vec<f64> = (0..n).map(|i| -half + step * i as f64).collect();
                let mut fine = Vec::with_capacity(n);
                let mut coarse = Vec::with_capacity(n);
                for (i, &v) in nodes.iter().enumerate() {
                    let density = ens.density(v);
                    let edge = i == 0 || i == n - 1;
                    fine.push(if edge { 0.5 } else { 1.0 } * step * density);
                    coarse.push(if i % 2 == 1 {
                        0.0
                    } else if edge {
                        step * density
                    } else {
                        2.0 * step * density
                    });
                }
                (nodes, fine, coarse)
            }
            QuadratureScheme::GaussHermite => {
                let n = spec.node_count;
                let m = n.div_ceil(2);
                let (xf, wf) = gauss_hermite(n);
                let (xc, wc) = gauss_hermite(m);
                let mut nodes: Vec<f64> = xf.iter().map(|x| x * u).collect();
                let mut fine = wf.clone();
                let mut coarse = vec![0.0; n];
                nodes.extend(xc.iter().map(|x| x * u));
                fine.extend(std::iter::repeat_n(0.0, m));
                coarse.extend(wc);
                (nodes, fine, coarse)
            }
        };
        normalize(&mut fine);
        normalize(&mut coarse);
        Ok(Self {
            nodes,
            fine,
            coarse,
            spec: *spec,
        })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Integrates `f(index, vz)` against the Maxwellian, summing in node order.
    pub fn integrate<F: FnMut(usize, f64) -> f64>(&self, mut f: F) -> Estimate {
        let [est] = self.integrate_n(|i, v| [f(i, v)]);
        est
    }

    /// Integrates several observables that share one evaluation per node.
    pub fn integrate_n<const N: usize, F: FnMut(usize, f64) -> [f64; N]>(&self, mut f: F) -> [Estimate; N] {
        let mut value = [CompensatedSum::default(); N];
        let mut coarse = [CompensatedSum::default(); N];
        let mut magnitude = [CompensatedSum::default(); N];
        for (i, &v) in self.nodes.iter().enumerate() {
            let ys = f(i, v);
            let (wf, wc) = (self.fine[i], self.coarse[i]);
            for k in 0..N {
                let y = ys[k];
                value[k].add(wf * y);
                if wc != 0.0 {
                    coarse[k].add(wc * y);
                }
                magnitude[k].add(wf * y.abs());
            }
        }
        std::array::from_fn(|k| Estimate {
            value: value[k].value(),
            coarse: coarse[k].value(),
            magnitude: magnitude[k].value(),
        })
    }
}

fn normalize(w: &mut [f64]) {
    let mut s = CompensatedSum::default();
    for &x in w.iter() {
        s.add(x);
    }
    let total = s.value();
    for x in w.iter_mut() {
        *x /= total;
    }
}

/// ⟨f⟩ over the Maxwellian distribution of `ens`. The half-resolution rule
/// must agree with the reported value to `refinement_tolerance` relative to
/// ∫|f| N dvz.
pub fn doppler_average<F: Fn(f64) -> f64>(observable: F, ens: &Ensemble, q: &QuadratureSpec) -> Result<f64> {
    let quad = VelocityQuadrature::new(ens, q)?;
    let est = quad.integrate(|_, v| observable(v));
    if !est.value.is_finite() {
        return Err(Error::InvalidInput("observable is not finite on the velocity span".into()));
    }
    let tolerance = q.refinement_tolerance * est.magnitude;
    if est.deviation() > tolerance {
        return Err(Error::QuadratureNotConverged {
            deviation: est.deviation(),
            tolerance,
        });
    }
    Ok(est.value)
}

/// Gauss–Hermite nodes and weights for ∫ f(x) e^{−x²} dx, by Newton iteration
/// on the orthonormal Hermite recurrence.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    const PIM4: f64 = 0.751_125_544_464_942_5; // π^(−1/4)
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    let nf = n as f64;
    let mut z = 0.0f64;
    for i in 0..m {
        z = match i {
            0 => (2.0 * nf + 1.0).sqrt() - 1.855_75 * (2.0 * nf + 1.0).powf(-0.166_67),
            1 => z - 1.14 * nf.powf(0.426) / z,
            2 => 1.86 * z - 0.86 * x[0],
            3 => 1.91 * z - 0.91 * x[1],
            _ => 2.0 * z - x[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..100 {
            let mut p1 = PIM4;
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                let jf = (j + 1) as f64;
                p1 = z * (2.0 / jf).sqrt() * p2 - ((jf - 1.0) / jf).sqrt() * p3;
            }
            pp = (2.0 * nf).sqrt() * p2;
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 1e-15 * z.abs().max(1.0) {
                break;
            }
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[n - 1 - i] = w[i];
    }
    // ascending order
    x.reverse();
    w.reverse();
    (x, w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::units::wavenumber_to_angular;
    use approx::assert_relative_eq;

    fn li2_ensemble() -> Ensemble {
        Ensemble::thermal(1000.0, 14.0, Geometry::CounterPropagating).unwrap()
    }

    #[test]
    fn rest_frame() {
        let (d1, d2) = velocity_detunings(3.0, -7.0, 1e9, 1.1e9, 0.0, Geometry::CounterPropagating);
        assert_eq!((d1, d2), (3.0, -7.0));
    }

    #[test]
    fn moving_molecule_signs() {
        let w21 = wavenumber_to_angular(15642.636);
        let w32 = wavenumber_to_angular(17053.954);
        let (d1, d2) = velocity_detunings(0.0, 0.0, w21, w32, 100.0, Geometry::CounterPropagating);
        assert!(d1 < 0.0 && d2 > 0.0);
        assert_relative_eq!(d1.abs() / d2.abs(), w21 / w32, max_relative = 1e-14);
        let (_, d2co) = velocity_detunings(0.0, 0.0, w21, w32, 100.0, Geometry::CoPropagating);
        assert_eq!(d2co, -d2);
    }

    #[test]
    fn two_photon_velocity() {
        let w21 = wavenumber_to_angular(15642.636);
        let w32 = wavenumber_to_angular(17053.954);
        let (delta1, delta2) = (-2.0 * PI * 385.0, 2.0 * PI * 420.0);
        // Δ1 + Δ2 = δ1 + δ2 + (vz/c)(ω32 − ω21 + δ2 − δ1), linear in vz
        let vz = -SPEED_OF_LIGHT * (delta1 + delta2) / (w32 - w21 + delta2 - delta1);
        let (d1, d2) = velocity_detunings(delta1, delta2, w21, w32, vz, Geometry::CounterPropagating);
        assert!((d1 + d2).abs() <= 1e-9 * delta1.abs() + 1e-9, "{}", d1 + d2);
    }

    #[test]
    fn simple_and_full_forms_agree_for_thermal_speeds() {
        let w21 = wavenumber_to_angular(15642.636);
        let w32 = wavenumber_to_angular(17053.954);
        let (delta1, delta2) = (2.0 * PI * 1500.0, 2.0 * PI * 1000.0);
        let vz = 4.0 * li2_ensemble().most_probable_speed;
        let (d1, d2) = velocity_detunings(delta1, delta2, w21, w32, vz, Geometry::CounterPropagating);
        let beta = vz / SPEED_OF_LIGHT;
        let simple1 = delta1 - beta * w21;
        let simple2 = delta2 + beta * w32;
        assert!((d1 - simple1).abs() <= 1e-5 * d1.abs());
        assert!((d2 - simple2).abs() <= 1e-5 * d2.abs());
    }

    #[test]
    fn most_probable_speed() {
        let u = li2_ensemble().most_probable_speed;
        let expected = (2.0_f64 * 1.380649e-23 * 1000.0 / (14.0 * 1.66053906660e-27)).sqrt();
        assert_relative_eq!(u, expected, max_relative = 1e-15);
    }

    #[test]
    fn fwhm_inversion() {
        let ens = Ensemble::from_doppler_fwhm(2600.0, 15642.636, Geometry::CounterPropagating).unwrap();
        assert_relative_eq!(
            doppler_fwhm_mhz(ens.most_probable_speed, 15642.636),
            2600.0,
            max_relative = 1e-14
        );
    }

    #[test]
    fn normalization_and_odd_moment() {
        let ens = li2_ensemble();
        for spec in [
            QuadratureSpec::default(),
            QuadratureSpec {
                scheme: QuadratureScheme::GaussHermite,
                node_count: 64,
                ..Default::default()
            },
        ] {
            let one = doppler_average(|_| 1.0, &ens, &spec).unwrap();
            assert!((one - 1.0).abs() <= 1e-8);
            let first = doppler_average(|v| v, &ens, &spec).unwrap();
            assert!(first.abs() <= 1e-8 * ens.most_probable_speed);
        }
    }

    #[test]
    fn second_moment() {
        let ens = li2_ensemble();
        let u = ens.most_probable_speed;
        let gh = QuadratureSpec {
            scheme: QuadratureScheme::GaussHermite,
            node_count: 20,
            ..Default::default()
        };
        let m2 = doppler_average(|v| v * v, &ens, &gh).unwrap();
        assert_relative_eq!(m2, 0.5 * u * u, max_relative = 1e-12);
        let m2t = doppler_average(|v| v * v, &ens, &QuadratureSpec::default()).unwrap();
        assert_relative_eq!(m2t, 0.5 * u * u, max_relative = 1e-5);
    }

    #[test]
    fn hermite_weights() {
        let (x, w) = gauss_hermite(30);
        assert_relative_eq!(w.iter().sum::<f64>(), PI.sqrt(), max_relative = 1e-13);
        assert!(x.windows(2).all(|p| p[0] < p[1]));
    }

    #[test]
    fn unresolved_feature_detected() {
        let ens = li2_ensemble();
        let u = ens.most_probable_speed;
        let spec = QuadratureSpec {
            node_count: 51,
            ..Default::default()
        };
        // Lorentzian narrower than the node spacing
        let width = 1e-3 * u;
        let err = doppler_average(|v| 1.0 / (1.0 + ((v - 0.013 * u) / width).powi(2)), &ens, &spec).unwrap_err();
        assert!(matches!(err, Error::QuadratureNotConverged { .. }));
    }

    #[test]
    fn invalid_specs() {
        let even = QuadratureSpec {
            node_count: 4000,
            ..Default::default()
        };
        assert!(even.validate().is_err());
        let few = QuadratureSpec {
            node_count: 49,
            ..Default::default()
        };
        assert!(few.validate().is_err());
    }

    /// Two-level Doppler profile: for γ ≪ k u_p the width tends to the Gaussian value.
    #[test]
    fn gaussian_limit_width() {
        let ens = li2_ensemble();
        let w21 = wavenumber_to_angular(15642.636);
        let gamma = 2.0 * PI * 5.0;
        let lorentz = |d: f64| gamma / (d * d + gamma * gamma);
        let profile = |delta1_mhz: f64| {
            doppler_average(
                |v| {
                    let (d1, _) = velocity_detunings(2.0 * PI * delta1_mhz, 0.0, w21, 0.0, v, ens.geometry);
                    lorentz(d1)
                },
                &ens,
                &QuadratureSpec {
                    node_count: 40001,
                    ..Default::default()
                },
            )
            .unwrap()
        };
        let peak = profile(0.0);
        // bisection for the half-maximum point
        let (mut lo, mut hi) = (0.0, 5000.0);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if profile(mid) > 0.5 * peak {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let fwhm = 2.0 * lo;
        let expected = doppler_fwhm_mhz(ens.most_probable_speed, 15642.636);
        assert!((fwhm - expected).abs() < 0.02 * expected, "{fwhm} vs {expected}");
    }
}
