//! Optional TOML configuration. Every value here may be overridden by the
//! matching command-line flag; anything unset falls back to the built-in
//! defaults.
//!
//! ```toml
//! seed = 7
//!
//! [grid]
//! nx = 480
//! ny = 480
//! h = 0.0005
//! roi_radius = 0.1
//!
//! [acquisition]
//! sources = 256
//! ring_diameter = 0.22
//! freqs_hz = [300000.0, 400000.0]
//!
//! [cbs]
//! pad_width = 50
//! epsilon_safety = 1.1
//! tol = 1e-6
//! max_iter = 2000
//! k0_strategy = "midpoint"
//!
//! [inversion]
//! schedule_hz = [300000.0, 400000.0, 500000.0]
//! iters = 10
//! step_rule = "backtracking"
//! initial_step = 0.00667
//! min_speed = 1350.0
//! max_speed = 1650.0
//! source_subset = [0, 16, 32]
//! ```

use std::path::Path;

use anyhow::Context;
use serde::Deserialize;
use usct_core::fwi::StepRule;
use usct_core::solver::{CbsConfig, K0Strategy};

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    #[serde(default)]
    pub grid: GridSection,
    #[serde(default)]
    pub acquisition: AcquisitionSection,
    #[serde(default)]
    pub cbs: CbsSection,
    #[serde(default)]
    pub inversion: InversionSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub nx: Option<usize>,
    pub ny: Option<usize>,
    pub h: Option<f64>,
    pub roi_radius: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AcquisitionSection {
    pub sources: Option<usize>,
    pub ring_diameter: Option<f64>,
    pub freqs_hz: Option<Vec<f64>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CbsSection {
    pub pad_width: Option<usize>,
    pub epsilon_safety: Option<f64>,
    pub tol: Option<f64>,
    pub max_iter: Option<usize>,
    pub k0_strategy: Option<K0Name>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InversionSection {
    pub schedule_hz: Option<Vec<f64>>,
    pub iters: Option<usize>,
    pub step_rule: Option<StepName>,
    pub initial_step: Option<f64>,
    pub min_speed: Option<f64>,
    pub max_speed: Option<f64>,
    pub source_subset: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Copy, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum K0Name {
    Midpoint,
    Background,
}

impl From<K0Name> for K0Strategy {
    fn from(k: K0Name) -> Self {
        match k {
            K0Name::Midpoint => K0Strategy::Midpoint,
            K0Name::Background => K0Strategy::Background,
        }
    }
}

#[derive(Debug, Clone, Copy, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum StepName {
    Backtracking,
    FixedRelative,
}

impl From<StepName> for StepRule {
    fn from(s: StepName) -> Self {
        match s {
            StepName::Backtracking => StepRule::Backtracking,
            StepName::FixedRelative => StepRule::FixedRelative,
        }
    }
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }
}

/// Solver flags shared by every command that runs the Helmholtz solver.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct CbsFlags {
    /// Absorbing cells added on each side of the grid.
    #[arg(long)]
    pub pad: Option<usize>,
    /// Multiplier on the minimal admissible CBS shift.
    #[arg(long)]
    pub epsilon_safety: Option<f64>,
    /// Relative update tolerance.
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    #[arg(long, value_enum)]
    pub k0: Option<K0Name>,
}

impl CbsFlags {
    pub fn resolve(&self, file: &CbsSection) -> CbsConfig {
        let d = CbsConfig::default();
        CbsConfig {
            pad_width: self.pad.or(file.pad_width).unwrap_or(d.pad_width),
            epsilon_safety: self.epsilon_safety.or(file.epsilon_safety).unwrap_or(d.epsilon_safety),
            max_iter: self.max_iter.or(file.max_iter).unwrap_or(d.max_iter),
            tol: self.tol.or(file.tol).unwrap_or(d.tol),
            k0_strategy: self.k0.or(file.k0_strategy).map(Into::into).unwrap_or(d.k0_strategy),
        }
    }
}
