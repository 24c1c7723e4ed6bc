//! Run configuration files and measured-spectrum ingestion.
//!
//! Configuration is sectioned `key = value` text. Every physical value carries
//! a unit suffix (`omega21 = 15642.636 cm-1`, `coupling_power = 480 mW`) and
//! is converted to the engine's canonical units while loading. Unknown
//! sections and keys are rejected.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::doppler::{Ensemble, Geometry, QuadratureScheme, QuadratureSpec};
use crate::error::{Error, Result};
use crate::fitting::FitParam;
use crate::model::{Dipoles, LaserPair, Scenario};
use crate::spectrum::{uniform_grid, Engine, ScanConfig, Signal, SublevelMode};
use crate::system::{Branch, CascadeSystem};
use crate::units::{convert, decay_rate_from_lifetime, Quantity, Unit, WAVENUMBER_TO_MHZ};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub channel: Signal,
    pub free: Vec<FitParam>,
    /// Bounds in report units, same order as `free`.
    pub bounds: Vec<(f64, f64)>,
    /// Starting point in report units, same order as `free`. Unset entries
    /// are resolved when the fit starts.
    pub init: Vec<Option<f64>>,
    pub max_evaluations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub stem: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub scenario: Scenario,
    pub scan: ScanConfig,
    pub fit: Option<FitConfig>,
    pub output: OutputConfig,
}

#[derive(Debug, Clone)]
struct Entry {
    value: String,
    line: usize,
    column: usize,
}

type Sections = BTreeMap<String, BTreeMap<String, Entry>>;

const SECTIONS: &[(&str, &[&str])] = &[
    (
        "system",
        &[
            "omega21",
            "omega32",
            "tau2",
            "tau3",
            "b2",
            "b3",
            "gamma12_c",
            "gamma13_c",
            "gamma23_c",
            "transit",
            "replenish",
            "J1",
            "J2",
            "J3",
            "branch_probe",
            "branch_coupling",
            "mu_probe",
            "mu_coupling",
        ],
    ),
    (
        "lasers",
        &["probe_power", "probe_waist", "coupling_power", "coupling_waist", "delta2", "geometry"],
    ),
    ("ensemble", &["temperature", "mass", "doppler_fwhm"]),
    (
        "scan",
        &["start", "stop", "points", "channels", "doppler", "m_sum", "only_m", "engine"],
    ),
    ("quadrature", &["scheme", "nodes", "span", "tolerance"]),
    ("fit", &["channel", "free", "max_evaluations"]),
    ("output", &["dir", "stem"]),
];

fn parse_sections(text: &str) -> Result<Sections> {
    let mut sections = Sections::new();
    let mut current: Option<String> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("");
        let trimmed = content.trim();
        if trimmed.is_empty() {
            continue;
        }
        let indent = content.len() - content.trim_start().len();
        if let Some(rest) = trimmed.strip_prefix('[') {
            let name = rest.strip_suffix(']').ok_or_else(|| Error::Parse {
                line,
                column: indent + 1,
                message: "section header must end with `]`".into(),
            })?;
            let name = name.trim();
            if !SECTIONS.iter().any(|(s, _)| *s == name) {
                return Err(Error::validation(name, "unknown section"));
            }
            if sections.contains_key(name) {
                return Err(Error::validation(name, "section appears twice"));
            }
            sections.insert(name.to_string(), BTreeMap::new());
            current = Some(name.to_string());
            continue;
        }
        let Some(eq) = content.find('=') else {
            return Err(Error::Parse {
                line,
                column: indent + 1,
                message: "expected `key = value`".into(),
            });
        };
        let key = content[..eq].trim();
        if key.is_empty() || key.contains(char::is_whitespace) {
            return Err(Error::Parse {
                line,
                column: indent + 1,
                message: format!("malformed key `{key}`"),
            });
        }
        let section = current.as_ref().ok_or_else(|| Error::Parse {
            line,
            column: indent + 1,
            message: "key outside of any section".into(),
        })?;
        let value_raw = &content[eq + 1..];
        let column = eq + 2 + (value_raw.len() - value_raw.trim_start().len());
        let entries = sections.get_mut(section).expect("section inserted above");
        let allowed = SECTIONS.iter().find(|(s, _)| s == section).map(|(_, k)| *k).unwrap_or(&[]);
        let dynamic = section == "fit" && (key.starts_with("bound_") || key.starts_with("init_"));
        if !allowed.contains(&key) && !dynamic {
            return Err(Error::validation(format!("{section}.{key}"), "unknown key"));
        }
        if entries.contains_key(key) {
            return Err(Error::validation(format!("{section}.{key}"), "key appears twice"));
        }
        entries.insert(
            key.to_string(),
            Entry {
                value: value_raw.trim().to_string(),
                line,
                column,
            },
        );
    }
    Ok(sections)
}

/// Unit spellings accepted in files, with the multiplier onto an enumerated unit.
fn unit_from_str(s: &str) -> Option<(Unit, f64)> {
    Some(match s {
        "cm-1" | "cm^-1" => (Unit::WavenumberCm, 1.0),
        "MHz" => (Unit::FrequencyMHz, 1.0),
        "GHz" => (Unit::FrequencyMHz, 1e3),
        "kHz" => (Unit::FrequencyMHz, 1e-3),
        "Mrad/s" => (Unit::AngularMrads, 1.0),
        "ns" => (Unit::TimeNs, 1.0),
        "us" => (Unit::TimeNs, 1e3),
        "ps" => (Unit::TimeNs, 1e-3),
        "au" | "a.u." => (Unit::DipoleAu, 1.0),
        "C*m" | "Cm" => (Unit::DipoleCm, 1.0),
        "W" => (Unit::PowerW, 1.0),
        "mW" => (Unit::PowerW, 1e-3),
        "uW" => (Unit::PowerW, 1e-6),
        "nW" => (Unit::PowerW, 1e-9),
        "m" => (Unit::LengthM, 1.0),
        "mm" => (Unit::LengthM, 1e-3),
        "um" => (Unit::LengthM, 1e-6),
        "K" => (Unit::TemperatureK, 1.0),
        "amu" => (Unit::MassAmu, 1.0),
        "V/m" => (Unit::FieldVm, 1.0),
        _ => return None,
    })
}

struct Reader<'a> {
    sections: &'a Sections,
}

impl<'a> Reader<'a> {
    fn entry(&self, section: &str, key: &str) -> Option<&'a Entry> {
        self.sections.get(section).and_then(|s| s.get(key))
    }

    fn required(&self, section: &str, key: &str) -> Result<&'a Entry> {
        self.entry(section, key)
            .ok_or_else(|| Error::validation(format!("{section}.{key}"), "required key is missing"))
    }

    fn number(entry: &Entry, text: &str, offset: usize) -> Result<f64> {
        text.parse::<f64>().map_err(|_| Error::Parse {
            line: entry.line,
            column: entry.column + offset,
            message: format!("`{text}` is not a number"),
        })
    }

    /// Number followed by a unit, converted to `target`.
    fn quantity_of(entry: &Entry, text: &str, key: &str, target: Unit) -> Result<f64> {
        let mut parts = text.split_whitespace();
        let num = parts.next().unwrap_or("");
        let value = Self::number(entry, num, 0)?;
        let unit_text = parts.next().ok_or_else(|| Error::Unit {
            key: key.to_string(),
            message: format!("missing unit (expected {target}-compatible)"),
        })?;
        if parts.next().is_some() {
            return Err(Error::Parse {
                line: entry.line,
                column: entry.column,
                message: "unexpected trailing text".into(),
            });
        }
        let (unit, scale) = unit_from_str(unit_text).ok_or_else(|| Error::Unit {
            key: key.to_string(),
            message: format!("unknown unit `{unit_text}`"),
        })?;
        convert(Quantity::new(value * scale, unit), target)
            .map(|q| q.value)
            .map_err(|_| Error::Unit {
                key: key.to_string(),
                message: format!("`{unit_text}` is not compatible with {target}"),
            })
    }

    fn quantity(&self, section: &str, key: &str, target: Unit) -> Result<f64> {
        let e = self.required(section, key)?;
        Self::quantity_of(e, &e.value, &format!("{section}.{key}"), target)
    }

    fn scalar(&self, section: &str, key: &str) -> Result<f64> {
        let e = self.required(section, key)?;
        if e.value.split_whitespace().count() != 1 {
            return Err(Error::Unit {
                key: format!("{section}.{key}"),
                message: "dimensionless value must not carry a unit".into(),
            });
        }
        Self::number(e, &e.value, 0)
    }

    fn integer(&self, section: &str, key: &str) -> Result<u32> {
        let e = self.required(section, key)?;
        e.value.parse::<u32>().map_err(|_| Error::Parse {
            line: e.line,
            column: e.column,
            message: format!("`{}` is not a non-negative integer", e.value),
        })
    }

    fn parsed<T: std::str::FromStr<Err = String>>(&self, section: &str, key: &str) -> Result<T> {
        let e = self.required(section, key)?;
        e.value
            .parse::<T>()
            .map_err(|msg| Error::validation(format!("{section}.{key}"), msg))
    }

    fn flag(&self, section: &str, key: &str) -> Result<bool> {
        let e = self.required(section, key)?;
        match e.value.as_str() {
            "on" | "true" | "yes" => Ok(true),
            "off" | "false" | "no" => Ok(false),
            other => Err(Error::validation(format!("{section}.{key}"), format!("expected on/off, got `{other}`"))),
        }
    }

    fn list(&self, section: &str, key: &str) -> Result<Vec<String>> {
        let e = self.required(section, key)?;
        Ok(e.value
            .split(',')
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())
            .collect())
    }
}

fn positive(key: &str, v: f64) -> Result<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(Error::validation(key, format!("must be positive, got {v}")))
    }
}

/// Parses configuration text. `base` resolves a relative output directory.
pub fn parse_config(text: &str, base: Option<&Path>) -> Result<RunConfig> {
    let sections = parse_sections(text)?;
    let r = Reader { sections: &sections };

    let system = CascadeSystem {
        omega21: r.quantity("system", "omega21", Unit::WavenumberCm)?,
        omega32: r.quantity("system", "omega32", Unit::WavenumberCm)?,
        gamma2: decay_rate_from_lifetime(r.quantity("system", "tau2", Unit::TimeNs)?)
            .map_err(|e| Error::validation("system.tau2", e.to_string()))?,
        gamma3: decay_rate_from_lifetime(r.quantity("system", "tau3", Unit::TimeNs)?)
            .map_err(|e| Error::validation("system.tau3", e.to_string()))?,
        b2: r.scalar("system", "b2")?,
        b3: r.scalar("system", "b3")?,
        gamma12_c: r.quantity("system", "gamma12_c", Unit::AngularMrads)?,
        gamma13_c: r.quantity("system", "gamma13_c", Unit::AngularMrads)?,
        gamma23_c: r.quantity("system", "gamma23_c", Unit::AngularMrads)?,
        transit: positive("system.transit", r.quantity("system", "transit", Unit::AngularMrads)?)?,
        replenish: positive("system.replenish", r.quantity("system", "replenish", Unit::AngularMrads)?)?,
        j1: r.integer("system", "J1")?,
        j2: r.integer("system", "J2")?,
        j3: r.integer("system", "J3")?,
        branch_probe: r.parsed::<Branch>("system", "branch_probe")?,
        branch_coupling: r.parsed::<Branch>("system", "branch_coupling")?,
    };
    system.validate().map_err(|e| match e {
        Error::Validation { key, message } => Error::Validation {
            key: format!("system.{key}"),
            message,
        },
        other => other,
    })?;
    let dipoles = Dipoles {
        probe: r.quantity("system", "mu_probe", Unit::DipoleAu)?,
        coupling: r.quantity("system", "mu_coupling", Unit::DipoleAu)?,
    };

    let lasers = LaserPair {
        probe_power: r.quantity("lasers", "probe_power", Unit::PowerW)?,
        probe_waist: positive("lasers.probe_waist", r.quantity("lasers", "probe_waist", Unit::LengthM)?)?,
        coupling_power: r.quantity("lasers", "coupling_power", Unit::PowerW)?,
        coupling_waist: positive("lasers.coupling_waist", r.quantity("lasers", "coupling_waist", Unit::LengthM)?)?,
    };
    for (key, p) in [("lasers.probe_power", lasers.probe_power), ("lasers.coupling_power", lasers.coupling_power)] {
        if !(p >= 0.0) {
            return Err(Error::validation(key, "power must be >= 0"));
        }
    }
    let delta2 = r.quantity("lasers", "delta2", Unit::FrequencyMHz)?;
    let geometry = r.parsed::<Geometry>("lasers", "geometry")?;

    let has_thermal = r.entry("ensemble", "temperature").is_some() || r.entry("ensemble", "mass").is_some();
    let ensemble = match (has_thermal, r.entry("ensemble", "doppler_fwhm").is_some()) {
        (true, true) => {
            return Err(Error::validation(
                "ensemble",
                "give either temperature and mass or doppler_fwhm, not both",
            ))
        }
        (false, true) => Ensemble::from_doppler_fwhm(
            r.quantity("ensemble", "doppler_fwhm", Unit::FrequencyMHz)?,
            system.omega21,
            geometry,
        )
        .map_err(|e| Error::validation("ensemble.doppler_fwhm", e.to_string()))?,
        _ => Ensemble::thermal(
            r.quantity("ensemble", "temperature", Unit::TemperatureK)?,
            r.quantity("ensemble", "mass", Unit::MassAmu)?,
            geometry,
        )
        .map_err(|e| Error::validation("ensemble", e.to_string()))?,
    };

    let mut quadrature = QuadratureSpec::default();
    if r.entry("quadrature", "scheme").is_some() {
        quadrature.scheme = r.parsed::<QuadratureScheme>("quadrature", "scheme")?;
    }
    if r.entry("quadrature", "nodes").is_some() {
        quadrature.node_count = r.integer("quadrature", "nodes")? as usize;
    }
    if r.entry("quadrature", "span").is_some() {
        quadrature.span = r.scalar("quadrature", "span")?;
    }
    if r.entry("quadrature", "tolerance").is_some() {
        quadrature.refinement_tolerance = r.scalar("quadrature", "tolerance")?;
    }
    quadrature.validate().map_err(|e| match e {
        Error::Validation { key, message } => Error::Validation {
            key: format!("quadrature.{key}"),
            message,
        },
        other => other,
    })?;

    let start = r.quantity("scan", "start", Unit::FrequencyMHz)?;
    let stop = r.quantity("scan", "stop", Unit::FrequencyMHz)?;
    let points = r.integer("scan", "points")? as usize;
    if points < 3 || stop <= start {
        return Err(Error::validation("scan", "need stop > start and at least 3 points"));
    }
    let channels = r.list("scan", "channels")?;
    let mut rho22 = false;
    let mut rho33 = false;
    for c in &channels {
        match c.parse::<Signal>().map_err(|m| Error::validation("scan.channels", m))? {
            Signal::Rho22 => rho22 = true,
            Signal::Rho33 => rho33 = true,
        }
    }
    let m_sum = r.flag("scan", "m_sum")?;
    let sublevels = match (m_sum, r.entry("scan", "only_m").is_some()) {
        (_, true) => SublevelMode::Single(r.integer("scan", "only_m")?),
        (true, false) => SublevelMode::Sum,
        (false, false) => SublevelMode::Unresolved,
    };
    let scan = ScanConfig {
        delta1: uniform_grid(start, stop, points),
        delta2,
        rho22,
        rho33,
        doppler: r.flag("scan", "doppler")?,
        sublevels,
        engine: r.parsed::<Engine>("scan", "engine")?,
    };

    let fit = if sections.contains_key("fit") {
        let channel = r.parsed::<Signal>("fit", "channel")?;
        let mut free = Vec::new();
        for name in r.list("fit", "free")? {
            let p: FitParam = name.parse().map_err(|m| Error::validation("fit.free", m))?;
            free.push(p);
        }
        if free.is_empty() {
            return Err(Error::validation("fit.free", "at least one free parameter is required"));
        }
        let mut bounds = Vec::new();
        let mut init = Vec::new();
        for p in &free {
            let key = format!("bound_{}", p.name());
            let e = r.required("fit", &key)?;
            let (lo_text, hi_text) = e.value.split_once("..").ok_or_else(|| Error::Parse {
                line: e.line,
                column: e.column,
                message: "bounds must look like `lo .. hi [unit]`".into(),
            })?;
            let unit_suffix = hi_text.split_whitespace().nth(1);
            let full_key = format!("fit.{key}");
            let read = |text: &str| -> Result<f64> {
                let text = text.trim();
                let with_unit = match unit_suffix {
                    Some(u) if text.split_whitespace().count() == 1 => format!("{text} {u}"),
                    _ => text.to_string(),
                };
                p.read_value(e, &with_unit, &full_key)
            };
            let (lo, hi) = (read(lo_text)?, read(hi_text)?);
            if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(Error::validation(full_key, "bounds must be finite with lo < hi"));
            }
            bounds.push((lo, hi));
            let init_key = format!("init_{}", p.name());
            let start = match r.entry("fit", &init_key) {
                Some(ie) => Some(p.read_value(ie, &ie.value, &format!("fit.{init_key}"))?),
                None => None,
            };
            if start.is_some_and(|v| !(lo..=hi).contains(&v)) {
                return Err(Error::validation(format!("fit.{init_key}"), "initial value lies outside the bounds"));
            }
            init.push(start);
        }
        for key in sections["fit"].keys() {
            let known = free
                .iter()
                .any(|p| *key == format!("bound_{}", p.name()) || *key == format!("init_{}", p.name()));
            if (key.starts_with("bound_") || key.starts_with("init_")) && !known {
                return Err(Error::validation(format!("fit.{key}"), "not a free parameter"));
            }
        }
        let max_evaluations = match r.entry("fit", "max_evaluations") {
            Some(_) => r.integer("fit", "max_evaluations")? as usize,
            None => 2000,
        };
        Some(FitConfig {
            channel,
            free,
            bounds,
            init,
            max_evaluations,
        })
    } else {
        None
    };

    let dir = PathBuf::from(&r.required("output", "dir")?.value);
    let dir = match base {
        Some(b) if dir.is_relative() => b.join(dir),
        _ => dir,
    };
    let output = OutputConfig {
        dir,
        stem: r.required("output", "stem")?.value.clone(),
    };

    let scenario = Scenario {
        system,
        lasers,
        dipoles,
        ensemble,
        quadrature,
    };
    Ok(RunConfig {
        scenario,
        scan,
        fit,
        output,
    })
}

impl FitParam {
    fn read_value(&self, entry: &Entry, text: &str, key: &str) -> Result<f64> {
        match self {
            FitParam::MuCoupling => Reader::quantity_of(entry, text, key, Unit::DipoleAu),
            FitParam::Gamma12c | FitParam::Gamma13c | FitParam::Gamma23c => {
                Reader::quantity_of(entry, text, key, Unit::FrequencyMHz)
            }
            FitParam::AmplitudeScale | FitParam::BaselineOffset => {
                if text.split_whitespace().count() != 1 {
                    return Err(Error::Unit {
                        key: key.to_string(),
                        message: "dimensionless value must not carry a unit".into(),
                    });
                }
                Reader::number(entry, text, 0)
            }
        }
    }
}

/// Reads a configuration file, or a bundled preset written as `preset:NAME`.
pub fn load_config(path: impl AsRef<Path>) -> Result<RunConfig> {
    let path = path.as_ref();
    if let Some(name) = path.to_str().and_then(|s| s.strip_prefix("preset:")) {
        let text = crate::presets::text(name)
            .ok_or_else(|| Error::validation("config", format!("no bundled preset named `{name}`")))?;
        return parse_config(text, None);
    }
    let text = std::fs::read_to_string(path)?;
    parse_config(&text, path.parent())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Abscissa {
    DetuningMhz,
    WavenumberCm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasuredMetadata {
    pub source: String,
    pub abscissa: Abscissa,
    /// Resonance wavenumber used to turn absolute wavenumbers into detunings.
    pub resonance_cm: Option<f64>,
    pub signal_column: String,
    /// Rows were given in descending order and have been re-sorted.
    pub resorted: bool,
}

/// Experimental trace as probe detuning (MHz) versus signal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasuredSpectrum {
    pub delta1: Vec<f64>,
    pub signal: Vec<f64>,
    pub uncertainty: Option<Vec<f64>>,
    pub metadata: MeasuredMetadata,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct LoadOptions {
    /// Probe resonance wavenumber (cm⁻¹) for absolute-wavenumber data.
    pub resonance_cm: Option<f64>,
    /// Column to use when the file carries both `rho22_au` and `rho33_au`.
    pub channel: Option<Signal>,
}

/// Loads a comma-separated trace. `#` lines are comments; an optional header
/// names the columns. An abscissa header containing `cm-1` marks absolute
/// wavenumbers, otherwise the abscissa is a detuning in MHz. A third numeric
/// column, when present and not a second signal, is the uncertainty.
pub fn load_spectrum(path: impl AsRef<Path>, opts: LoadOptions) -> Result<MeasuredSpectrum> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    parse_spectrum(&text, &path.display().to_string(), opts)
}

pub fn parse_spectrum(text: &str, source: &str, opts: LoadOptions) -> Result<MeasuredSpectrum> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());

    let mut header: Option<Vec<String>> = None;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        if record.iter().all(|f| f.is_empty()) {
            continue;
        }
        let first_numeric = record.get(0).map(|f| f.parse::<f64>().is_ok()).unwrap_or(false);
        if !first_numeric && header.is_none() && rows.is_empty() {
            header = Some(record.iter().map(str::to_string).collect());
            continue;
        }
        let mut row = Vec::with_capacity(record.len());
        for (col, field) in record.iter().enumerate() {
            let v = field.parse::<f64>().map_err(|_| Error::Parse {
                line,
                column: col + 1,
                message: format!("`{field}` is not a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line,
                    column: col + 1,
                    message: "non-finite value".into(),
                });
            }
            row.push(v);
        }
        if row.len() < 2 {
            return Err(Error::Parse {
                line,
                column: 1,
                message: "need at least two columns".into(),
            });
        }
        rows.push(row);
    }
    if rows.len() < 3 {
        return Err(Error::validation("data", "spectrum needs at least 3 rows"));
    }
    let ncols = rows.iter().map(Vec::len).min().unwrap_or(0);

    let names = header.clone().unwrap_or_default();
    let abscissa = match names.first() {
        Some(h) if h.contains("cm-1") || h.contains("cm^-1") || h.contains("wavenumber") => Abscissa::WavenumberCm,
        _ => Abscissa::DetuningMhz,
    };
    let find = |name: &str| names.iter().position(|h| h == name);
    let (signal_col, signal_name) = match (find("rho22_au"), find("rho33_au"), opts.channel) {
        (Some(i), _, Some(Signal::Rho22)) => (i, "rho22_au".to_string()),
        (_, Some(i), Some(Signal::Rho33)) => (i, "rho33_au".to_string()),
        (Some(i), None, _) => (i, "rho22_au".to_string()),
        (None, Some(i), _) => (i, "rho33_au".to_string()),
        (Some(_), Some(_), None) => {
            return Err(Error::validation("data", "file has rho22_au and rho33_au; choose a channel"))
        }
        (None, None, _) => (1, names.get(1).cloned().unwrap_or_else(|| "column 2".into())),
    };
    if signal_col >= ncols {
        return Err(Error::validation("data", "signal column missing on some rows"));
    }
    let has_uncertainty = ncols >= 3 && find("rho22_au").is_none() && find("rho33_au").is_none();

    let mut x: Vec<f64> = rows.iter().map(|r| r[0]).collect();
    let mut signal: Vec<f64> = rows.iter().map(|r| r[signal_col]).collect();
    let mut uncertainty: Option<Vec<f64>> = has_uncertainty.then(|| rows.iter().map(|r| r[2]).collect());

    let resonance_cm = match abscissa {
        Abscissa::WavenumberCm => {
            let res = opts.resonance_cm.ok_or_else(|| {
                Error::validation("data", "absolute wavenumbers need a resonance wavenumber")
            })?;
            for v in &mut x {
                *v = (*v - res) * WAVENUMBER_TO_MHZ;
            }
            Some(res)
        }
        Abscissa::DetuningMhz => None,
    };

    let mut resorted = false;
    if x.windows(2).all(|w| w[1] < w[0]) {
        x.reverse();
        signal.reverse();
        if let Some(u) = uncertainty.as_mut() {
            u.reverse();
        }
        resorted = true;
    }
    if x.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::validation("data", "abscissa must be strictly monotone"));
    }

    Ok(MeasuredSpectrum {
        delta1: x,
        signal,
        uncertainty,
        metadata: MeasuredMetadata {
            source: source.to_string(),
            abscissa,
            resonance_cm,
            signal_column: signal_name,
            resorted,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn li2_preset_resolves() {
        let cfg = load_config("preset:li2_fig4").unwrap();
        let s = &cfg.scenario.system;
        assert_eq!(s.omega21, 15642.636);
        assert_eq!(s.omega32, 17053.954);
        assert_relative_eq!(1e3 / s.gamma2, 18.0, max_relative = 1e-14);
        assert_relative_eq!(1e3 / s.gamma3, 16.15, max_relative = 1e-14);
        assert_eq!((s.b2, s.b3), (0.1, 0.2));
        let two_pi = 2.0 * std::f64::consts::PI;
        assert_relative_eq!(s.transit, two_pi * 2.0, max_relative = 1e-14);
        assert_relative_eq!(s.gamma12_c, two_pi * 5.0, max_relative = 1e-14);
        assert_relative_eq!(s.gamma13_c, two_pi * 1.0, max_relative = 1e-14);
        assert_relative_eq!(s.gamma23_c, two_pi * 1.0, max_relative = 1e-14);
        let l = &cfg.scenario.lasers;
        assert_relative_eq!(l.coupling_power, 0.48, max_relative = 1e-14);
        assert_relative_eq!(l.coupling_waist, 360e-6, max_relative = 1e-14);
        assert_relative_eq!(l.probe_waist, 222e-6, max_relative = 1e-14);
        assert_eq!(cfg.scenario.dipoles.coupling, 1.45);
        assert_eq!(cfg.scan.delta1.len(), 801);
        let fit = cfg.fit.unwrap();
        assert_eq!(fit.free, vec![FitParam::MuCoupling, FitParam::AmplitudeScale]);
        assert_eq!(fit.bounds[0], (0.5, 3.0));
        assert_eq!(fit.init, vec![Some(1.2), None]);
    }

    #[test]
    fn all_presets_parse() {
        for name in crate::presets::NAMES {
            load_config(format!("preset:{name}")).unwrap();
        }
    }

    fn fig4_without(key: &str) -> String {
        crate::presets::text("li2_fig4")
            .unwrap()
            .lines()
            .filter(|l| !l.starts_with(&format!("{key} ")))
            .collect::<Vec<_>>()
            .join("\n")
    }

    #[test]
    fn missing_key_named() {
        let err = parse_config(&fig4_without("tau3"), None).unwrap_err();
        match err {
            Error::Validation { key, .. } => assert_eq!(key, "system.tau3"),
            other => panic!("{other}"),
        }
    }

    #[test]
    fn unknown_key_rejected() {
        let text = crate::presets::text("li2_fig4").unwrap().replace("b3 = 0.2", "b3 = 0.2\nb4 = 0.1");
        assert!(matches!(parse_config(&text, None), Err(Error::Validation { key, .. }) if key == "system.b4"));
    }

    #[test]
    fn missing_unit_rejected() {
        let text = crate::presets::text("li2_fig4").unwrap().replace("tau2 = 18 ns", "tau2 = 18");
        assert!(matches!(parse_config(&text, None), Err(Error::Unit { .. })));
        let text = crate::presets::text("li2_fig4").unwrap().replace("tau2 = 18 ns", "tau2 = 18 MHz");
        assert!(matches!(parse_config(&text, None), Err(Error::Unit { .. })));
    }

    #[test]
    fn parse_error_position() {
        let text = crate::presets::text("li2_fig4").unwrap().replace("b2 = 0.1", "b2 = zero");
        let line = text.lines().position(|l| l.starts_with("b2 =")).unwrap() + 1;
        match parse_config(&text, None).unwrap_err() {
            Error::Parse { line: l, column, .. } => {
                assert_eq!(l, line);
                assert_eq!(column, 6);
            }
            other => panic!("{other}"),
        }
        let bad = "[system]\nthis line has no equals\n";
        assert!(matches!(parse_config(bad, None), Err(Error::Parse { line: 2, column: 1, .. })));
    }

    #[test]
    fn fwhm_ensemble() {
        let text = crate::presets::text("li2_fig4")
            .unwrap()
            .replace("temperature = 1000 K\nmass = 14 amu", "doppler_fwhm = 2.6 GHz");
        let cfg = parse_config(&text, None).unwrap();
        assert!(cfg.scenario.ensemble.temperature.is_none());
        let fwhm = crate::doppler::doppler_fwhm_mhz(cfg.scenario.ensemble.most_probable_speed, 15642.636);
        assert_relative_eq!(fwhm, 2600.0, max_relative = 1e-12);
    }

    #[test]
    fn descending_trace_resorted() {
        let text = "delta1_MHz,signal\n30,3\n20,2\n10,1\n";
        let m = parse_spectrum(text, "mem", LoadOptions::default()).unwrap();
        assert_eq!(m.delta1, vec![10.0, 20.0, 30.0]);
        assert_eq!(m.signal, vec![1.0, 2.0, 3.0]);
        assert!(m.metadata.resorted);
    }

    #[test]
    fn wavenumber_trace_converted() {
        let text = "# probe scan\nwavenumber_cm-1,signal,sigma\n15642.626,1,0.1\n15642.636,5,0.2\n15642.646,2,0.1\n";
        let opts = LoadOptions {
            resonance_cm: Some(15642.636),
            channel: None,
        };
        let m = parse_spectrum(text, "mem", opts).unwrap();
        assert_eq!(m.metadata.abscissa, Abscissa::WavenumberCm);
        assert_relative_eq!(m.delta1[0], -0.01 * 29979.2458, max_relative = 1e-8);
        assert_eq!(m.uncertainty.unwrap(), vec![0.1, 0.2, 0.1]);
        assert!(parse_spectrum(text, "mem", LoadOptions::default()).is_err());
    }

    #[test]
    fn headerless_and_bad_rows() {
        let m = parse_spectrum("1,2\n2,3\n3,4\n", "mem", LoadOptions::default()).unwrap();
        assert_eq!(m.signal, vec![2.0, 3.0, 4.0]);
        let err = parse_spectrum("1,2\n2,x\n3,4\n", "mem", LoadOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, column: 2, .. }));
        assert!(parse_spectrum("1,2\n3,4\n2,3\n", "mem", LoadOptions::default()).is_err());
    }
}
