//! TOML configuration files. One file can carry both a `[sim]` and an
//! `[attack]` section; each command reads the section it needs and CLI
//! flags override file values.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::Path;

use scarl_core::pipeline::{AttackConfig, PipelineError};
use scarl_core::prep::ContainerError;
use scarl_core::sim::{SimConfig, SimError};

/// Command error carrying the process exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad configuration or arguments (exit 2).
    Config(String),
    /// Unreadable, malformed or insufficient data (exit 3).
    Data(String),
    /// Numerical failure inside an attack (exit 4).
    Numerical(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::Numerical(m) => write!(f, "numerical failure: {m}"),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numerical(_) => 4,
        }
    }
}

impl From<ContainerError> for CliError {
    fn from(e: ContainerError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        use scarl_core::stats::StatsError;
        match e {
            PipelineError::Nn(inner) => CliError::Numerical(inner.to_string()),
            PipelineError::Rl(inner) => CliError::Numerical(inner.to_string()),
            PipelineError::Stats(StatsError::DegenerateWindow { .. })
            | PipelineError::Stats(StatsError::ZeroVariance) => {
                CliError::Numerical(e.to_string())
            }
            PipelineError::Sim(inner) => CliError::Config(inner.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

/// `[sim]` section: the simulator config plus campaign-level extras.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct SimSection {
    #[serde(flatten)]
    pub config: SimConfig,
    /// Planted 128-bit key, hex. Drawn from the seed when absent.
    pub key_hex: Option<String>,
    /// Derive noise_sigma from a target POI signal-to-noise ratio.
    pub snr_db: Option<f64>,
    /// Pair the SNR target refers to.
    pub snr_pair: Option<usize>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ConfigFile {
    pub sim: Option<SimSection>,
    pub attack: Option<AttackConfig>,
}

pub fn load(path: &Path) -> Result<ConfigFile, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

pub fn parse_key_hex(hex: &str) -> Result<u128, CliError> {
    let cleaned = hex.trim_start_matches("0x").replace('_', "");
    u128::from_str_radix(&cleaned, 16)
        .map_err(|e| CliError::Config(format!("bad key_hex {hex:?}: {e}")))
}
