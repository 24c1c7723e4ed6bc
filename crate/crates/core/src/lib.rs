//! Steady-state lineshapes of a Doppler-broadened, magnetically degenerate
//! three-level cascade: closed-form populations, a full linear-solve
//! reference, velocity and |M| averaging, feature extraction and fitting.

// `!(x > 0.0)` is used so that NaN fails validation
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analytic;
pub mod check;
pub mod config;
pub mod doppler;
pub mod error;
pub mod fitting;
pub mod model;
pub mod oracle;
pub mod parallel;
pub mod presets;
pub mod spectrum;
pub mod sublevels;
pub mod system;
pub mod units;

pub use error::{Error, Result};
pub use model::{Dipoles, LaserPair, Scenario};
pub use spectrum::{simulate, ScanConfig, Signal, Spectrum};
pub use system::{Branch, CascadeSystem};
