//! Bundled Li2 cascade configurations.

use crate::config::{parse_config, RunConfig};
use crate::error::Result;
use crate::model::Scenario;
use crate::system::CascadeSystem;

pub const NAMES: [&str; 5] = ["li2_fig3a", "li2_fig3b", "li2_fig4", "li2_fig6a", "li2_fig6b"];

const TEXTS: [&str; 5] = [
    include_str!("../presets/li2_fig3a.cfg"),
    include_str!("../presets/li2_fig3b.cfg"),
    include_str!("../presets/li2_fig4.cfg"),
    include_str!("../presets/li2_fig6a.cfg"),
    include_str!("../presets/li2_fig6b.cfg"),
];

/// Raw configuration text of a bundled preset.
pub fn text(name: &str) -> Option<&'static str> {
    NAMES.iter().position(|n| *n == name).map(|i| TEXTS[i])
}

pub fn get(name: &str) -> Option<Result<RunConfig>> {
    text(name).map(|t| parse_config(t, None))
}

/// The 480 mW resonant-coupling scenario.
pub fn li2_scenario() -> Scenario {
    get("li2_fig4").expect("bundled").expect("bundled preset parses").scenario
}

pub fn li2_system() -> CascadeSystem {
    li2_scenario().system
}
