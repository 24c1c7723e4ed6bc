//! Parameter structures for the open cascade |1⟩ → |2⟩ → |3⟩.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rotational branch of a transition, labelled by ΔJ = J_lower − J_upper.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Branch {
    P,
    Q,
    R,
}

impl std::str::FromStr for Branch {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim() {
            "P" | "p" => Ok(Branch::P),
            "Q" | "q" => Ok(Branch::Q),
            "R" | "r" => Ok(Branch::R),
            other => Err(format!("unknown branch `{other}` (expected P, Q or R)")),
        }
    }
}

/// Level structure and relaxation of the three-level cascade.
///
/// Rates are angular frequencies in Mrad/s; `omega21` and `omega32` are
/// transition wavenumbers in cm⁻¹.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CascadeSystem {
    pub omega21: f64,
    pub omega32: f64,
    /// Total radiative decay rate of level 2.
    pub gamma2: f64,
    /// Total radiative decay rate of level 3.
    pub gamma3: f64,
    /// Fraction of level-2 decay returning to level 1.
    pub b2: f64,
    /// Fraction of level-3 decay returning to level 2.
    pub b3: f64,
    pub gamma12_c: f64,
    pub gamma13_c: f64,
    pub gamma23_c: f64,
    /// Transit rate `w`.
    pub transit: f64,
    /// Ground-state replenishment rate `Λ`.
    pub replenish: f64,
    pub j1: u32,
    pub j2: u32,
    pub j3: u32,
    pub branch_probe: Branch,
    pub branch_coupling: Branch,
}

impl CascadeSystem {
    pub fn validate(&self) -> Result<()> {
        let non_negative = [
            ("gamma2", self.gamma2),
            ("gamma3", self.gamma3),
            ("gamma12_c", self.gamma12_c),
            ("gamma13_c", self.gamma13_c),
            ("gamma23_c", self.gamma23_c),
            ("transit", self.transit),
            ("replenish", self.replenish),
        ];
        for (key, v) in non_negative {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::validation(key, format!("must be finite and >= 0, got {v}")));
            }
        }
        for (key, v) in [("b2", self.b2), ("b3", self.b3)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::validation(key, format!("branching ratio must lie in [0, 1], got {v}")));
            }
        }
        for (key, v) in [("omega21", self.omega21), ("omega32", self.omega32)] {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::validation(key, format!("must be a positive wavenumber, got {v}")));
            }
        }
        Ok(())
    }

    /// Population decay 2 → 1.
    pub fn w21(&self) -> f64 {
        self.b2 * self.gamma2
    }

    /// Population decay 3 → 2.
    pub fn w32(&self) -> f64 {
        self.b3 * self.gamma3
    }

    /// Coherence decay of ρ21 without transit: ½γ2 + γ12ᶜ.
    pub fn gamma21(&self) -> f64 {
        0.5 * self.gamma2 + self.gamma12_c
    }

    /// Coherence decay of ρ31 without transit: ½γ3 + γ13ᶜ.
    pub fn gamma31(&self) -> f64 {
        0.5 * self.gamma3 + self.gamma13_c
    }

    /// Coherence decay of ρ32 without transit: ½(γ2 + γ3) + γ23ᶜ.
    pub fn gamma32(&self) -> f64 {
        0.5 * (self.gamma2 + self.gamma3) + self.gamma23_c
    }

    /// True when W32 = γ3 + w, the limit where the closed-form populations simplify.
    pub fn is_closed(&self) -> bool {
        let target = self.gamma3 + self.transit;
        (self.w32() - target).abs() <= 1e-12 * target.abs().max(f64::MIN_POSITIVE)
    }

    /// Ground population without the probe, ρ11⁽⁰⁾ = Λ/w.
    pub fn rho11_0(&self) -> f64 {
        self.replenish / self.transit
    }

    /// Drive parameters for this system with the given fields and detunings.
    pub fn drive(&self, g1: f64, g2: f64, delta1: f64, delta2: f64) -> DriveParams {
        DriveParams {
            g1,
            g2,
            delta1,
            delta2,
            rho11_0: self.rho11_0(),
        }
    }
}

/// Field strengths and effective detunings seen by one velocity class, all in Mrad/s.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriveParams {
    pub g1: f64,
    pub g2: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub rho11_0: f64,
}

impl DriveParams {
    pub(crate) fn check_finite(&self) -> Result<()> {
        let all = [self.g1, self.g2, self.delta1, self.delta2, self.rho11_0];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite drive parameters: {self:?}")));
        }
        Ok(())
    }
}

/// Steady-state density matrix for one velocity class and one |M| channel.
/// Only the lower-triangle coherences are stored.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensityState {
    pub rho11: f64,
    pub rho22: f64,
    pub rho33: f64,
    pub rho21: Complex64,
    pub rho31: Complex64,
    pub rho32: Complex64,
}
