//! Closed-form steady-state populations of the open cascade, lowest order in
//! the probe Rabi frequency and all orders in the coupling Rabi frequency.
//!
//! The expressions are evaluated literally, leading sign and `Im{·}`
//! included, and are pinned against the full steady-state solve in
//! [`crate::oracle`].

use num_complex::Complex64;

use crate::error::Result;
use crate::system::{CascadeSystem, DriveParams};

/// Rate combinations of a [`CascadeSystem`] that do not depend on the drive.
/// Built once per system and reused across velocity classes and channels.
#[derive(Debug, Clone, Copy)]
pub struct ClosedForm {
    /// γ21 + w
    g21w: f64,
    /// γ31 + w
    g31w: f64,
    /// γ32 + w
    g32w: f64,
    /// γ2 + w
    g2w: f64,
    /// γ3 + w
    g3w: f64,
    /// 1 − W32/(γ3 + w)
    openness: f64,
}

impl ClosedForm {
    pub fn new(sys: &CascadeSystem) -> Self {
        let w = sys.transit;
        let g3w = sys.gamma3 + w;
        Self {
            g21w: sys.gamma21() + w,
            g31w: sys.gamma31() + w,
            g32w: sys.gamma32() + w,
            g2w: sys.gamma2 + w,
            g3w,
            openness: 1.0 - sys.w32() / g3w,
        }
    }

    /// Helper `A(Δ2)`.
    #[inline]
    pub fn a(&self, g2_sq: f64, delta2: f64) -> f64 {
        delta2 * delta2 + self.g32w * self.g32w + g2_sq * self.g32w / (2.0 * self.g3w)
    }

    /// Helper `D(Δ2)` built on `A`.
    #[inline]
    pub fn d(&self, g2_sq: f64, a: f64) -> f64 {
        a * self.g2w + 0.5 * g2_sq * self.g32w * self.openness
    }

    /// Returns the non-normalized (ρ22, ρ33).
    #[inline]
    pub fn populations(&self, g1_sq: f64, g2_sq: f64, delta1: f64, delta2: f64, rho11_0: f64) -> (f64, f64) {
        let a = self.a(g2_sq, delta2);
        let d = self.d(g2_sq, a);
        let quarter = 0.25 * g2_sq;
        let two_photon = Complex64::new(delta1 + delta2, self.g31w);
        let coupled = Complex64::new(delta2, -self.g32w);
        let den = Complex64::new(delta1, self.g21w) * two_photon - quarter;
        let inv_den = den.conj() / den.norm_sqr();

        let num22 = coupled * (quarter * self.openness) + two_photon * a;
        let rho22 = -g1_sq * rho11_0 / (2.0 * d) * (num22 * inv_den).im;

        let num33 = two_photon * (-2.0 * self.g32w) + coupled * self.g2w;
        let rho33 = g1_sq * g2_sq * rho11_0 / (8.0 * d * self.g3w) * (num33 * inv_den).im;
        (rho22, rho33)
    }
}

pub fn helper_a(sys: &CascadeSystem, drv: &DriveParams) -> f64 {
    ClosedForm::new(sys).a(drv.g2 * drv.g2, drv.delta2)
}

pub fn helper_d(sys: &CascadeSystem, drv: &DriveParams) -> f64 {
    let cf = ClosedForm::new(sys);
    let g2_sq = drv.g2 * drv.g2;
    cf.d(g2_sq, cf.a(g2_sq, drv.delta2))
}

/// `D(Δ2)` written out term by term, without going through `A`.
pub fn helper_d_expanded(sys: &CascadeSystem, drv: &DriveParams) -> f64 {
    let w = sys.transit;
    let g2_sq = drv.g2 * drv.g2;
    let g32w = sys.gamma32() + w;
    let g3w = sys.gamma3 + w;
    drv.delta2 * drv.delta2 * (sys.gamma2 + w)
        + g32w * g32w * (sys.gamma2 + w)
        + g2_sq * g32w * (sys.gamma2 + w) / (2.0 * g3w)
        + g2_sq * g32w / 2.0
        - g2_sq * g32w * sys.w32() / (2.0 * g3w)
}

pub fn rho22_analytic(sys: &CascadeSystem, drv: &DriveParams) -> Result<f64> {
    drv.check_finite()?;
    let (rho22, _) = ClosedForm::new(sys).populations(drv.g1 * drv.g1, drv.g2 * drv.g2, drv.delta1, drv.delta2, drv.rho11_0);
    Ok(rho22)
}

pub fn rho33_analytic(sys: &CascadeSystem, drv: &DriveParams) -> Result<f64> {
    drv.check_finite()?;
    let (_, rho33) = ClosedForm::new(sys).populations(drv.g1 * drv.g1, drv.g2 * drv.g2, drv.delta1, drv.delta2, drv.rho11_0);
    Ok(rho33)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets::li2_system;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn drive(g1: f64, g2: f64, d1: f64, d2: f64) -> DriveParams {
        li2_system().drive(g1, g2, d1, d2)
    }

    /// g2 = 0 reduction: g1²ρ⁰Γ21 / (2(γ2+w)(Δ1² + Γ21²)).
    fn two_level(sys: &CascadeSystem, g1: f64, d1: f64) -> f64 {
        let g21w = sys.gamma21() + sys.transit;
        g1 * g1 * sys.rho11_0() * g21w / (2.0 * (sys.gamma2 + sys.transit) * (d1 * d1 + g21w * g21w))
    }

    #[test]
    fn vanishes_without_probe() {
        let sys = li2_system();
        assert_eq!(rho22_analytic(&sys, &drive(0.0, 300.0, 10.0, 5.0)).unwrap(), 0.0);
        assert_eq!(rho33_analytic(&sys, &drive(0.0, 300.0, 10.0, 5.0)).unwrap(), 0.0);
    }

    #[test]
    fn rho33_vanishes_without_coupling() {
        let sys = li2_system();
        assert_eq!(rho33_analytic(&sys, &drive(1.0, 0.0, 10.0, 5.0)).unwrap(), 0.0);
    }

    #[test]
    fn two_level_limit() {
        let sys = li2_system();
        for &(d1, d2) in &[(0.0, 0.0), (50.0, 0.0), (-300.0, 120.0), (1000.0, -40.0)] {
            let got = rho22_analytic(&sys, &drive(0.7, 0.0, d1, d2)).unwrap();
            assert_relative_eq!(got, two_level(&sys, 0.7, d1), max_relative = 1e-13);
        }
    }

    #[test]
    fn eit_dip_at_resonance() {
        let sys = li2_system();
        let weak = rho22_analytic(&sys, &drive(1.0, 0.0, 0.0, 0.0)).unwrap();
        let strong = rho22_analytic(&sys, &drive(1.0, 3000.0, 0.0, 0.0)).unwrap();
        assert!(strong < 0.1 * weak, "{strong} vs {weak}");
    }

    #[test]
    fn rho33_autler_townes_doublet() {
        let sys = li2_system();
        let g2 = 3000.0;
        // dense scan over Δ1
        let scan: Vec<(f64, f64)> = (-4000..=4000)
            .map(|i| {
                let d1 = i as f64 * 0.5;
                (d1, rho33_analytic(&sys, &drive(1.0, g2, d1, 0.0)).unwrap())
            })
            .collect();
        let centre = scan[4000].1;
        let maxima: Vec<f64> = scan
            .windows(3)
            .filter(|w| w[1].1 > w[0].1 && w[1].1 > w[2].1)
            .map(|w| w[1].0)
            .collect();
        assert_eq!(maxima.len(), 2, "{maxima:?}");
        for m in &maxima {
            assert!((m.abs() - g2 / 2.0).abs() < 0.05 * g2, "{m}");
        }
        assert!(centre < scan[(4000.0 + g2) as usize].1);
        assert!(scan[3999].1 > centre && scan[4001].1 > centre);
    }

    #[test]
    fn helpers_without_coupling() {
        let sys = li2_system();
        let drv = drive(1.0, 0.0, 17.0, 0.0);
        let g32w = sys.gamma32() + sys.transit;
        assert_relative_eq!(helper_a(&sys, &drv), g32w * g32w, max_relative = 1e-15);
        assert_relative_eq!(
            helper_d(&sys, &drv),
            g32w * g32w * (sys.gamma2 + sys.transit),
            max_relative = 1e-15
        );
    }

    #[test]
    fn closed_system_d_reduces_to_a() {
        let mut sys = li2_system();
        sys.b3 = (sys.gamma3 + sys.transit) / sys.gamma3;
        assert!(sys.is_closed());
        for &(g2, d2) in &[(0.0, 0.0), (100.0, 30.0), (5000.0, -700.0)] {
            let drv = sys.drive(1.0, g2, 0.0, d2);
            let a = helper_a(&sys, &drv);
            assert_relative_eq!(helper_d(&sys, &drv), a * (sys.gamma2 + sys.transit), max_relative = 1e-12);
        }
    }

    #[test]
    fn nan_rejected() {
        let sys = li2_system();
        assert!(rho22_analytic(&sys, &drive(f64::NAN, 1.0, 0.0, 0.0)).is_err());
        assert!(rho33_analytic(&sys, &drive(1.0, 1.0, f64::NAN, 0.0)).is_err());
    }

    #[test]
    fn eit_suppression_monotone_in_coupling() {
        let sys = li2_system();
        let threshold = (4.0 * (sys.gamma21() + sys.transit) * (sys.gamma31() + sys.transit)).sqrt();
        let mut prev = f64::INFINITY;
        let mut g2 = threshold * 1.001;
        while g2 < 1e5 {
            let v = rho22_analytic(&sys, &drive(1.0, g2, 0.0, 0.0)).unwrap();
            assert!(v < prev, "g2 = {g2}");
            prev = v;
            g2 *= 1.05;
        }
    }

    proptest! {
        #[test]
        fn d_two_ways(g2 in 0.0f64..1e4, d2 in -5e3f64..5e3, b3 in 0.0f64..1.0) {
            let mut sys = li2_system();
            sys.b3 = b3;
            let drv = sys.drive(1.0, g2, 0.0, d2);
            let direct = helper_d_expanded(&sys, &drv);
            let via_a = helper_d(&sys, &drv);
            prop_assert!(via_a > 0.0);
            prop_assert!((direct - via_a).abs() <= 1e-14 * via_a.abs() * 4.0);
        }

        #[test]
        fn probe_scaling(g1 in 1e-3f64..10.0, g2 in 0.0f64..5e3, d1 in -3e3f64..3e3, d2 in -3e3f64..3e3) {
            let sys = li2_system();
            let one = sys.drive(g1, g2, d1, d2);
            let two = sys.drive(2.0 * g1, g2, d1, d2);
            let (a22, a33) = (rho22_analytic(&sys, &one).unwrap(), rho33_analytic(&sys, &one).unwrap());
            let (b22, b33) = (rho22_analytic(&sys, &two).unwrap(), rho33_analytic(&sys, &two).unwrap());
            prop_assert!((b22 - 4.0 * a22).abs() <= 1e-13 * b22.abs());
            prop_assert!((b33 - 4.0 * a33).abs() <= 1e-13 * b33.abs().max(f64::MIN_POSITIVE));
        }

        #[test]
        fn rho33_symmetric_at_resonant_coupling(g2 in 0.0f64..5e3, d1 in 0.0f64..3e3) {
            let sys = li2_system();
            let plus = rho33_analytic(&sys, &sys.drive(1.0, g2, d1, 0.0)).unwrap();
            let minus = rho33_analytic(&sys, &sys.drive(1.0, g2, -d1, 0.0)).unwrap();
            prop_assert!((plus - minus).abs() <= 1e-12 * plus.abs().max(f64::MIN_POSITIVE));
        }

        #[test]
        fn populations_non_negative(g2 in 0.0f64..5e3, d1 in -3e3f64..3e3, d2 in -3e3f64..3e3) {
            let sys = li2_system();
            let drv = sys.drive(1.0, g2, d1, d2);
            prop_assert!(rho22_analytic(&sys, &drv).unwrap() >= 0.0);
            prop_assert!(rho33_analytic(&sys, &drv).unwrap() >= 0.0);
        }
    }
}
