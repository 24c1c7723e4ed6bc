//! Magnetic-sublevel structure for linearly polarized (ΔM = 0) excitation.
//!
//! Every formula depends on |M| only, so channels are keyed by |M| and carry
//! a multiplicity of 1 (M = 0) or 2 (±M).

use serde::{Deserialize, Serialize};

use crate::doppler::CompensatedSum;
use crate::error::{Error, Result};
use crate::system::{Branch, CascadeSystem};
use crate::units::rabi_frequency;

fn check_domain(j: u32, m: i32) -> Result<()> {
    if j < 1 || m.unsigned_abs() > j {
        return Err(Error::Domain { j, m });
    }
    Ok(())
}

/// Q-branch line-strength factor |M| / sqrt(J(J+1)).
pub fn line_strength_q(j: u32, m: i32) -> Result<f64> {
    check_domain(j, m)?;
    let j = j as f64;
    Ok(m.unsigned_abs() as f64 / (j * (j + 1.0)).sqrt())
}

/// P-branch line-strength factor sqrt((J² − M²)/((2J+1)(2J−1))), with `j` the
/// larger J of the transition (its lower level).
pub fn line_strength_p(j: u32, m: i32) -> Result<f64> {
    check_domain(j, m)?;
    let (j, m) = (j as f64, m as f64);
    Ok(((j * j - m * m) / ((2.0 * j + 1.0) * (2.0 * j - 1.0))).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SublevelChannel {
    pub abs_m: u32,
    pub multiplicity: u32,
    pub f_probe: f64,
    pub f_coupling: f64,
    /// Probe Rabi frequency, Mrad/s.
    pub g1: f64,
    /// Coupling Rabi frequency, Mrad/s.
    pub g2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelSet {
    /// Ascending in |M|; decoupled ground sublevels are already removed.
    pub channels: Vec<SublevelChannel>,
}

impl ChannelSet {
    /// Number of M sublevels the probe couples (±M counted separately).
    pub fn probe_coupled(&self) -> u32 {
        self.channels.iter().filter(|c| c.f_probe > 0.0).map(|c| c.multiplicity).sum()
    }

    /// Number of M sublevels the coupling field couples.
    pub fn coupling_coupled(&self) -> u32 {
        self.channels.iter().filter(|c| c.f_coupling > 0.0).map(|c| c.multiplicity).sum()
    }

    pub fn get(&self, abs_m: u32) -> Option<&SublevelChannel> {
        self.channels.iter().find(|c| c.abs_m == abs_m)
    }

    pub fn len(&self) -> usize {
        self.channels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.channels.is_empty()
    }
}

/// Line-strength factor for a transition from `j_lower` to `j_upper`.
/// `Ok(None)` means sublevel M does not exist in the upper level.
fn factor(branch: Branch, j_lower: u32, j_upper: u32, m: i32, role: &str) -> Result<Option<f64>> {
    match branch {
        Branch::Q => {
            if j_upper != j_lower {
                return Err(Error::validation(role, format!("Q branch needs equal J, got {j_lower} -> {j_upper}")));
            }
            if m.unsigned_abs() > j_lower {
                return Ok(None);
            }
            line_strength_q(j_lower, m).map(Some)
        }
        Branch::P => {
            if j_upper + 1 != j_lower {
                return Err(Error::validation(
                    role,
                    format!("P branch needs J_upper = J_lower - 1, got {j_lower} -> {j_upper}"),
                ));
            }
            if m.unsigned_abs() > j_upper {
                return Ok(None);
            }
            line_strength_p(j_lower, m).map(Some)
        }
        Branch::R => Err(Error::UnsupportedBranch(Branch::R)),
    }
}

/// Per-|M| Rabi frequencies for fields `e1`, `e2` (V/m) and vibronic dipoles in a.u.
pub fn build_channels(
    sys: &CascadeSystem,
    mu_probe: f64,
    mu_coupling: f64,
    e1: f64,
    e2: f64,
) -> Result<ChannelSet> {
    let mut channels = Vec::new();
    for abs_m in 0..=sys.j1 {
        let m = abs_m as i32;
        let Some(f_probe) = factor(sys.branch_probe, sys.j1, sys.j2, m, "branch_probe")? else {
            continue;
        };
        if f_probe == 0.0 {
            continue;
        }
        let f_coupling = factor(sys.branch_coupling, sys.j2, sys.j3, m, "branch_coupling")?.unwrap_or(0.0);
        channels.push(SublevelChannel {
            abs_m,
            multiplicity: if abs_m == 0 { 1 } else { 2 },
            f_probe,
            f_coupling,
            g1: rabi_frequency(mu_probe * f_probe, e1),
            g2: rabi_frequency(mu_coupling * f_coupling, e2),
        });
    }
    Ok(ChannelSet { channels })
}

/// Σ multiplicity · signal(channel), accumulated in ascending |M|.
pub fn sublevel_sum<F: FnMut(&SublevelChannel) -> f64>(mut signal: F, cs: &ChannelSet) -> f64 {
    let mut acc = CompensatedSum::default();
    for c in &cs.channels {
        acc.add(c.multiplicity as f64 * signal(c));
    }
    acc.value()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets::li2_system;
    use approx::assert_relative_eq;

    #[test]
    fn q_factor() {
        assert_eq!(line_strength_q(14, 0).unwrap(), 0.0);
        assert_relative_eq!(line_strength_q(14, 14).unwrap(), 14.0 / 210f64.sqrt(), max_relative = 1e-15);
        assert_relative_eq!(line_strength_q(14, -14).unwrap(), 0.966_091_783, max_relative = 1e-8);
        assert_eq!(line_strength_q(14, 7).unwrap() * 2.0, line_strength_q(14, 14).unwrap());
        assert!(matches!(line_strength_q(14, 15), Err(Error::Domain { .. })));
    }

    #[test]
    fn p_factor() {
        assert_eq!(line_strength_p(15, 15).unwrap(), 0.0);
        assert_eq!(line_strength_p(15, -15).unwrap(), 0.0);
        assert_relative_eq!(line_strength_p(15, 0).unwrap(), (225.0f64 / (31.0 * 29.0)).sqrt(), max_relative = 1e-15);
        assert_relative_eq!(line_strength_p(15, 0).unwrap(), 0.50028, epsilon = 1e-5);
        let v: Vec<f64> = (0..=15).map(|m| line_strength_p(15, m).unwrap()).collect();
        assert!(v.windows(2).all(|w| w[1] < w[0]));
        assert!(line_strength_p(15, 16).is_err());
        assert!(line_strength_p(0, 0).is_err());
    }

    #[test]
    fn li2_channel_structure() {
        let cs = build_channels(&li2_system(), 1.0, 1.45, 3000.0, 4.2e4).unwrap();
        assert_eq!(cs.len(), 15);
        assert_eq!(cs.probe_coupled(), 29);
        assert_eq!(cs.coupling_coupled(), 28);
        assert_eq!(sublevel_sum(|_| 1.0, &cs), 29.0);
        let m0 = cs.get(0).unwrap();
        assert_eq!(m0.g2, 0.0);
        assert_eq!(m0.multiplicity, 1);
        assert!(cs.get(15).is_none());
        assert_eq!(cs.channels.iter().filter(|c| c.g2 > 0.0).count(), 14);
        for c in &cs.channels {
            assert!((0.0..=1.0).contains(&c.f_probe) && (0.0..=1.0).contains(&c.f_coupling));
        }
    }

    #[test]
    fn zero_fields() {
        let cs = build_channels(&li2_system(), 1.0, 1.45, 0.0, 0.0).unwrap();
        assert!(cs.channels.iter().all(|c| c.g1 == 0.0 && c.g2 == 0.0));
    }

    #[test]
    fn r_branch_rejected() {
        let mut sys = li2_system();
        sys.branch_coupling = Branch::R;
        assert!(matches!(
            build_channels(&sys, 1.0, 1.0, 1.0, 1.0),
            Err(Error::UnsupportedBranch(Branch::R))
        ));
    }

    #[test]
    fn inconsistent_j_rejected() {
        let mut sys = li2_system();
        sys.j2 = 15;
        assert!(matches!(build_channels(&sys, 1.0, 1.0, 1.0, 1.0), Err(Error::Validation { .. })));
    }

    #[test]
    fn single_channel_sum_is_identity() {
        let cs = ChannelSet {
            channels: vec![SublevelChannel {
                abs_m: 0,
                multiplicity: 1,
                f_probe: 0.5,
                f_coupling: 0.0,
                g1: 1.0,
                g2: 0.0,
            }],
        };
        assert_eq!(sublevel_sum(|c| c.g1 * 3.5, &cs), 3.5);
    }
}
