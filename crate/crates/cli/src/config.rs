//! Versioned run configuration. Command-line flags override values loaded
//! from `--config`, which override the defaults below.

use std::path::Path;

use rca_core::datagen::{SeriesSpec, SimSpec};
use rca_core::em::EmRcaConfig;
use rca_core::eval::EdgeMode;
use rca_core::glasso::GlassoConfig;
use rca_core::kernels::KernelSpec;
use rca_core::{io, RcaError, Result};
use serde::{Deserialize, Serialize};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    pub seed: Option<u64>,
    pub simulate: SimulateConfig,
    pub fit: FitConfig,
    pub stability: StabilityRunConfig,
    pub residual: KernelSpec,
    pub check: CheckConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            version: CONFIG_VERSION,
            seed: None,
            simulate: SimulateConfig::default(),
            fit: FitConfig::default(),
            stability: StabilityRunConfig::default(),
            residual: KernelSpec::default(),
            check: CheckConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let cfg: RunConfig = io::read_json(path)?;
        if cfg.version != CONFIG_VERSION {
            return Err(RcaError::Parse {
                path: path.to_path_buf(),
                message: format!(
                    "unsupported config version {} (expected {CONFIG_VERSION})",
                    cfg.version
                ),
            });
        }
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub gmrf: SimSpec,
    pub series: SeriesSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum FitMethod {
    Glasso,
    EmRca,
    Ppca,
    Rca,
}

impl FitMethod {
    pub fn name(self) -> &'static str {
        match self {
            FitMethod::Glasso => "glasso",
            FitMethod::EmRca => "em_rca",
            FitMethod::Ppca => "ppca",
            FitMethod::Rca => "rca",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub fitter: FitMethod,
    pub lambda: f64,
    /// Retained rank for ppca/rca; `None` keeps every eligible component.
    pub rank: Option<usize>,
    /// PPCA noise variance; defaults to `tr(C)/(2p)` as in the EM initialization.
    pub noise_var: Option<f64>,
    pub glasso: GlassoConfig,
    pub em_rca: EmRcaConfig,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            fitter: FitMethod::EmRca,
            lambda: 0.01,
            rank: None,
            noise_var: None,
            glasso: GlassoConfig::default(),
            em_rca: EmRcaConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum StabilityMethod {
    Glasso,
    EmRca,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub count: usize,
    pub lo_exp: f64,
    pub hi_exp: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            count: 23,
            lo_exp: -8.0,
            hi_exp: 3.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StabilityRunConfig {
    pub fitter: StabilityMethod,
    pub repeats: usize,
    pub fraction: f64,
    pub threshold: f64,
    pub mode: EdgeMode,
    pub grid: GridConfig,
    pub parallel: bool,
    pub glasso: GlassoConfig,
    pub em_rca: EmRcaConfig,
}

impl Default for StabilityRunConfig {
    fn default() -> Self {
        StabilityRunConfig {
            fitter: StabilityMethod::Glasso,
            repeats: 100,
            fraction: 0.9,
            threshold: 0.5,
            mode: EdgeMode::Support,
            grid: GridConfig::default(),
            parallel: true,
            glasso: GlassoConfig::default(),
            em_rca: EmRcaConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CheckConfig {
    pub gep_tol: f64,
    pub kkt_tol: f64,
}

impl Default for CheckConfig {
    fn default() -> Self {
        CheckConfig {
            gep_tol: 1e-8,
            kkt_tol: 1e-6,
        }
    }
}
