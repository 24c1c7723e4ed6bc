//! Closed-form populations versus the full steady-state solve.

use serde::{Deserialize, Serialize};

use crate::analytic::ClosedForm;
use crate::error::Result;
use crate::oracle::solve_steady_state;
use crate::system::{CascadeSystem, DriveParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorstPoint {
    pub delta1: f64,
    pub delta2: f64,
    pub g2: f64,
    pub rel_rho22: f64,
    pub rel_rho33: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    /// g1 / γ2 used on the comparison grid.
    pub g1_ratio: f64,
    pub points: usize,
    pub max_rel_rho22: f64,
    pub max_rel_rho33: f64,
    pub worst: WorstPoint,
    /// (g1/γ2, max relative deviation) pairs behind `slope`.
    pub scaling: Vec<(f64, f64)>,
    /// Log–log slope of the deviation against g1.
    pub slope: f64,
    pub tolerance: f64,
    pub slope_target: (f64, f64),
    pub pass: bool,
}

pub const GRID: usize = 5;
pub const TOLERANCE: f64 = 1e-4;

fn rel(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

/// Detunings span ±2·max(γ2, g2_max/2); g2 runs geometrically from 0.01·γ2
/// up to `g2_max` (at least 10·γ2).
fn grid(sys: &CascadeSystem, g2_max: f64) -> (Vec<f64>, Vec<f64>) {
    let g2_top = g2_max.max(10.0 * sys.gamma2);
    let g2_low = 0.01 * sys.gamma2;
    let span = 2.0 * sys.gamma2.max(0.5 * g2_top);
    let detunings = (0..GRID).map(|i| -span + 2.0 * span * i as f64 / (GRID - 1) as f64).collect();
    let g2s = (0..GRID)
        .map(|i| g2_low * (g2_top / g2_low).powf(i as f64 / (GRID - 1) as f64))
        .collect();
    (detunings, g2s)
}

fn sweep(sys: &CascadeSystem, g1: f64, detunings: &[f64], g2s: &[f64]) -> Result<(f64, f64, WorstPoint)> {
    let closed = ClosedForm::new(sys);
    let rho0 = sys.rho11_0();
    let mut max22 = 0.0f64;
    let mut max33 = 0.0f64;
    let mut worst = WorstPoint {
        delta1: 0.0,
        delta2: 0.0,
        g2: 0.0,
        rel_rho22: 0.0,
        rel_rho33: 0.0,
    };
    for &d1 in detunings {
        for &d2 in detunings {
            for &g2 in g2s {
                let (a22, a33) = closed.populations(g1 * g1, g2 * g2, d1, d2, rho0);
                let st = solve_steady_state(
                    sys,
                    &DriveParams {
                        g1,
                        g2,
                        delta1: d1,
                        delta2: d2,
                        rho11_0: rho0,
                    },
                )?;
                let (r22, r33) = (rel(a22, st.rho22), rel(a33, st.rho33));
                if r22.max(r33) > worst.rel_rho22.max(worst.rel_rho33) {
                    worst = WorstPoint {
                        delta1: d1,
                        delta2: d2,
                        g2,
                        rel_rho22: r22,
                        rel_rho33: r33,
                    };
                }
                max22 = max22.max(r22);
                max33 = max33.max(r33);
            }
        }
    }
    Ok((max22, max33, worst))
}

/// Least-squares slope of ln y against ln x.
pub fn loglog_slope(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    let (sx, sy) = pts.iter().fold((0.0, 0.0), |(a, b), &(x, y)| (a + x.ln(), b + y.ln()));
    let (mx, my) = (sx / n, sy / n);
    let (num, den) = pts.iter().fold((0.0, 0.0), |(a, b), &(x, y)| {
        let dx = x.ln() - mx;
        (a + dx * (y.ln() - my), b + dx * dx)
    });
    num / den
}

/// 5×5×5 comparison over (Δ1, Δ2, g2) at g1 = 1e-3·γ2, plus the scaling of
/// the worst deviation with g1 over the same grid.
pub fn oracle_check(sys: &CascadeSystem, g2_max: f64) -> Result<OracleReport> {
    sys.validate()?;
    let (detunings, g2s) = grid(sys, g2_max);
    let g1_ratio = 1e-3;
    let (max22, max33, worst) = sweep(sys, g1_ratio * sys.gamma2, &detunings, &g2s)?;
    let mut scaling = Vec::new();
    for ratio in [1e-2, 3e-3, 1e-3, 3e-4] {
        let (a, b, _) = sweep(sys, ratio * sys.gamma2, &detunings, &g2s)?;
        scaling.push((ratio, a.max(b)));
    }
    let slope = loglog_slope(&scaling);
    let slope_target = (1.9, 2.1);
    let pass = max22.max(max33) <= TOLERANCE && slope >= slope_target.0 && slope <= slope_target.1;
    Ok(OracleReport {
        g1_ratio,
        points: GRID * GRID * GRID,
        max_rel_rho22: max22,
        max_rel_rho33: max33,
        worst,
        scaling,
        slope,
        tolerance: TOLERANCE,
        slope_target,
        pass,
    })
}

impl OracleReport {
    pub fn render(&self) -> String {
        format!(
            "grid points: {}\ng1/gamma2: {:e}\nmax relative deviation rho22: {:.3e}\nmax relative deviation rho33: {:.3e}\nworst point: delta1 = {:.4} Mrad/s, delta2 = {:.4} Mrad/s, g2 = {:.4} Mrad/s\nlog-log slope vs g1: {:.4}\nresult: {}\n",
            self.points,
            self.g1_ratio,
            self.max_rel_rho22,
            self.max_rel_rho33,
            self.worst.delta1,
            self.worst.delta2,
            self.worst.g2,
            self.slope,
            if self.pass { "pass" } else { "FAIL" }
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets::li2_system;

    #[test]
    fn slope_of_power_law() {
        let pts: Vec<(f64, f64)> = [1.0, 2.0, 5.0].iter().map(|&x| (x, 3.0 * x * x)).collect();
        assert!((loglog_slope(&pts) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn li2_grid_agrees() {
        let r = oracle_check(&li2_system(), 0.0).unwrap();
        assert!(r.pass, "{}", r.render());
    }
}
