use serde::{Deserialize, Serialize};

use crate::doppler::{Ensemble, QuadratureSpec};
use crate::error::Result;
use crate::sublevels::{build_channels, ChannelSet};
use crate::system::CascadeSystem;
use crate::units::field_amplitude;

/// Probe (L1, drives 1 → 2) and coupling (L2, drives 2 → 3) beams.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LaserPair {
    pub probe_power: f64,
    pub probe_waist: f64,
    pub coupling_power: f64,
    pub coupling_waist: f64,
}

impl LaserPair {
    /// Peak fields (E1, E2) in V/m.
    pub fn fields(&self) -> Result<(f64, f64)> {
        Ok((
            field_amplitude(self.probe_power, self.probe_waist)?,
            field_amplitude(self.coupling_power, self.coupling_waist)?,
        ))
    }
}

/// Vibronic transition dipoles in atomic units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Dipoles {
    pub probe: f64,
    pub coupling: f64,
}

/// Everything the spectrum engine needs apart from the scan itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub system: CascadeSystem,
    pub lasers: LaserPair,
    pub dipoles: Dipoles,
    pub ensemble: Ensemble,
    pub quadrature: QuadratureSpec,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        self.system.validate()?;
        self.quadrature.validate()?;
        self.lasers.fields()?;
        Ok(())
    }

    pub fn channels(&self) -> Result<ChannelSet> {
        let (e1, e2) = self.lasers.fields()?;
        build_channels(&self.system, self.dipoles.probe, self.dipoles.coupling, e1, e2)
    }
}
