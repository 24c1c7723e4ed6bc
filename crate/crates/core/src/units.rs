//! Unit bookkeeping.
//!
//! Every rate, detuning and Rabi frequency inside the engine is an angular
//! frequency in Mrad/s (equivalently rad/µs). Cyclic frequencies (MHz) and
//! wavenumbers are converted once at the boundary. Decay rates are inverse
//! lifetimes, so 18 ns becomes 55.5556 Mrad/s with no factor of 2π.

use std::f64::consts::PI;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
pub const HBAR: f64 = 1.054_571_817e-34;
pub const VACUUM_PERMITTIVITY: f64 = 8.854_187_812_8e-12;
pub const BOLTZMANN: f64 = 1.380_649e-23;
pub const ATOMIC_MASS_UNIT: f64 = 1.660_539_066_60e-27;
pub const DIPOLE_AU: f64 = 8.478_353_6e-30;
/// 1 cm⁻¹ expressed in MHz.
pub const WAVENUMBER_TO_MHZ: f64 = SPEED_OF_LIGHT * 100.0 / 1.0e6;

/// (name, value, unit) for every physical constant the engine uses.
pub const CONSTANTS: &[(&str, f64, &str)] = &[
    ("speed_of_light", SPEED_OF_LIGHT, "m/s"),
    ("reduced_planck", HBAR, "J*s"),
    ("vacuum_permittivity", VACUUM_PERMITTIVITY, "F/m"),
    ("boltzmann", BOLTZMANN, "J/K"),
    ("atomic_mass_unit", ATOMIC_MASS_UNIT, "kg"),
    ("dipole_atomic_unit", DIPOLE_AU, "C*m"),
    ("wavenumber_to_frequency", WAVENUMBER_TO_MHZ, "MHz/cm-1"),
];

/// Renders [`CONSTANTS`] in the layout of the bundled `constants.txt`.
pub fn constants_table() -> String {
    let mut out = String::from("# name value unit\n");
    for (name, value, unit) in CONSTANTS {
        out.push_str(&format!("{name} {value:e} {unit}\n"));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Unit {
    WavenumberCm,
    FrequencyMHz,
    AngularMrads,
    TimeNs,
    DipoleAu,
    DipoleCm,
    PowerW,
    LengthM,
    TemperatureK,
    MassAmu,
    FieldVm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dimension {
    Frequency,
    Time,
    Dipole,
    Power,
    Length,
    Temperature,
    Mass,
    Field,
}

impl Unit {
    pub fn dimension(self) -> Dimension {
        match self {
            Unit::WavenumberCm | Unit::FrequencyMHz | Unit::AngularMrads => Dimension::Frequency,
            Unit::TimeNs => Dimension::Time,
            Unit::DipoleAu | Unit::DipoleCm => Dimension::Dipole,
            Unit::PowerW => Dimension::Power,
            Unit::LengthM => Dimension::Length,
            Unit::TemperatureK => Dimension::Temperature,
            Unit::MassAmu => Dimension::Mass,
            Unit::FieldVm => Dimension::Field,
        }
    }

    /// Multiplier taking a value in this unit to the base unit of its dimension.
    fn to_base(self) -> f64 {
        match self {
            Unit::AngularMrads => 1.0,
            Unit::FrequencyMHz => 2.0 * PI,
            Unit::WavenumberCm => 2.0 * PI * WAVENUMBER_TO_MHZ,
            Unit::DipoleCm => 1.0,
            Unit::DipoleAu => DIPOLE_AU,
            Unit::TimeNs
            | Unit::PowerW
            | Unit::LengthM
            | Unit::TemperatureK
            | Unit::MassAmu
            | Unit::FieldVm => 1.0,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Unit::WavenumberCm => "cm-1",
            Unit::FrequencyMHz => "MHz",
            Unit::AngularMrads => "Mrad/s",
            Unit::TimeNs => "ns",
            Unit::DipoleAu => "au",
            Unit::DipoleCm => "C*m",
            Unit::PowerW => "W",
            Unit::LengthM => "m",
            Unit::TemperatureK => "K",
            Unit::MassAmu => "amu",
            Unit::FieldVm => "V/m",
        }
    }
}

impl fmt::Display for Unit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quantity {
    pub value: f64,
    pub unit: Unit,
}

impl Quantity {
    pub const fn new(value: f64, unit: Unit) -> Self {
        Self { value, unit }
    }

    pub fn to(self, target: Unit) -> Result<Quantity> {
        convert(self, target)
    }
}

pub fn convert(q: Quantity, target: Unit) -> Result<Quantity> {
    if q.unit.dimension() != target.dimension() {
        return Err(Error::IncompatibleDimensions {
            from: q.unit,
            to: target,
        });
    }
    if q.unit == target {
        return Ok(q);
    }
    Ok(Quantity::new(
        q.value * q.unit.to_base() / target.to_base(),
        target,
    ))
}

/// Cyclic MHz to angular Mrad/s.
#[inline]
pub fn mhz_to_angular(mhz: f64) -> f64 {
    2.0 * PI * mhz
}

/// Angular Mrad/s to cyclic MHz.
#[inline]
pub fn angular_to_mhz(w: f64) -> f64 {
    w / (2.0 * PI)
}

/// Wavenumber (cm⁻¹) to angular frequency in Mrad/s.
#[inline]
pub fn wavenumber_to_angular(cm: f64) -> f64 {
    2.0 * PI * WAVENUMBER_TO_MHZ * cm
}

/// Decay rate in Mrad/s for a lifetime in ns: γ = 1/τ.
pub fn decay_rate_from_lifetime(tau_ns: f64) -> Result<f64> {
    if !(tau_ns > 0.0) || !tau_ns.is_finite() {
        return Err(Error::InvalidInput(format!(
            "lifetime must be positive and finite, got {tau_ns} ns"
        )));
    }
    Ok(1.0e3 / tau_ns)
}

/// Peak on-axis field (V/m) of a Gaussian beam with 1/e² intensity radius `waist`.
pub fn field_amplitude(power_w: f64, waist_m: f64) -> Result<f64> {
    if !(waist_m > 0.0) {
        return Err(Error::NonPositiveWaist(waist_m));
    }
    if !(power_w >= 0.0) || !power_w.is_finite() {
        return Err(Error::InvalidInput(format!(
            "beam power must be non-negative, got {power_w} W"
        )));
    }
    let intensity = 2.0 * power_w / (PI * waist_m * waist_m);
    Ok((2.0 * intensity / (VACUUM_PERMITTIVITY * SPEED_OF_LIGHT)).sqrt())
}

/// Rabi frequency μE/ħ in Mrad/s for a dipole in atomic units.
pub fn rabi_frequency(dipole_au: f64, field_vm: f64) -> f64 {
    dipole_au * DIPOLE_AU * field_vm / HBAR * 1.0e-6
}
