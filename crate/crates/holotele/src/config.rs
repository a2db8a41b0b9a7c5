//! JSON run configuration and command-line overrides.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use holotele_core::analysis::BlockShape;
use holotele_core::kernel::{KernelModel, KernelParams};
use holotele_core::lattice::SpaceTimeGrid;
use holotele_core::protocol::{ProtocolParams, TeleportConfig};
use holotele_core::stochastic::CoherentInputSpec;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::formats::{read_kernel_table, FormatError};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("cannot parse configuration {path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("kernel table {path}: {source}")]
    Table {
        path: PathBuf,
        #[source]
        source: FormatError,
    },
}

impl From<holotele_core::Error> for ConfigError {
    fn from(e: holotele_core::Error) -> Self {
        ConfigError::Invalid(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub nx: usize,
    pub ny: usize,
    pub nt: usize,
    pub dx: f64,
    pub dy: f64,
    pub dt: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            nx: 16,
            ny: 16,
            nt: 64,
            dx: 1.0,
            dy: 1.0,
            dt: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelName {
    FlatBand,
    GaussianBand,
    Tabulated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelSpec {
    pub model: ModelName,
    pub r0: f64,
    pub q_c: f64,
    pub omega_c: f64,
    pub psi0: f64,
    /// `HKRN` file for the tabulated model, relative to the config file.
    pub table: Option<PathBuf>,
}

impl Default for KernelSpec {
    fn default() -> Self {
        Self {
            model: ModelName::FlatBand,
            r0: 0.0,
            q_c: PI,
            omega_c: PI,
            psi0: 0.0,
            table: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolSpec {
    pub b0: f64,
    pub a0: f64,
    /// Overrides `g = 1 / (sqrt 2 B0)`.
    pub gain: Option<f64>,
}

impl Default for ProtocolSpec {
    fn default() -> Self {
        Self {
            b0: 1.0,
            a0: 1.0,
            gain: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InputSpec {
    /// `[re, im]` of the plane-wave amplitude.
    pub amplitude: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisSpec {
    /// Victor's homodyne angle.
    pub phi: f64,
    pub green: bool,
    /// Block shapes for coarse graining, in cells. `null` picks one block
    /// per axis of the largest divisor not above a quarter of the axis;
    /// `[]` turns coarse graining off.
    pub coarse_blocks: Option<Vec<[usize; 3]>>,
    /// Write every output field as an `HFLD` file.
    pub dump_fields: bool,
}

impl Default for AnalysisSpec {
    fn default() -> Self {
        Self {
            phi: 0.0,
            green: true,
            coarse_blocks: None,
            dump_fields: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub grid: GridSpec,
    pub kernel: KernelSpec,
    pub protocol: ProtocolSpec,
    pub input: InputSpec,
    pub trials: u64,
    pub seed: u64,
    pub analysis: AnalysisSpec,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            grid: GridSpec::default(),
            kernel: KernelSpec::default(),
            protocol: ProtocolSpec::default(),
            input: InputSpec::default(),
            trials: 2000,
            seed: 0,
            analysis: AnalysisSpec::default(),
            out: PathBuf::from("out"),
        }
    }
}

/// Values given on the command line; each replaces the file's value.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub trials: Option<u64>,
    pub grid: Option<[usize; 3]>,
    pub r0: Option<f64>,
    pub q_c: Option<f64>,
    pub omega_c: Option<f64>,
    pub psi0: Option<f64>,
    pub phi: Option<f64>,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_json(text: &str, path: &Path) -> Result<Self, ConfigError> {
        let mut cfg: RunConfig = serde_json::from_str(text).map_err(|source| ConfigError::Parse {
            path: path.to_path_buf(),
            source,
        })?;
        if let (Some(table), Some(dir)) = (&cfg.kernel.table, path.parent()) {
            if table.is_relative() {
                cfg.kernel.table = Some(dir.join(table));
            }
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text, path)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(v) = o.seed {
            self.seed = v;
        }
        if let Some(v) = o.trials {
            self.trials = v;
        }
        if let Some([nx, ny, nt]) = o.grid {
            self.grid.nx = nx;
            self.grid.ny = ny;
            self.grid.nt = nt;
        }
        if let Some(v) = o.r0 {
            self.kernel.r0 = v;
        }
        if let Some(v) = o.q_c {
            self.kernel.q_c = v;
        }
        if let Some(v) = o.omega_c {
            self.kernel.omega_c = v;
        }
        if let Some(v) = o.psi0 {
            self.kernel.psi0 = v;
        }
        if let Some(v) = o.phi {
            self.analysis.phi = v;
        }
        if let Some(v) = &o.out {
            self.out = v.clone();
        }
    }

    pub fn grid(&self) -> Result<SpaceTimeGrid, ConfigError> {
        let g = &self.grid;
        Ok(SpaceTimeGrid::new(g.nx, g.ny, g.nt, g.dx, g.dy, g.dt)?)
    }

    pub fn kernel_params(&self) -> Result<KernelParams, ConfigError> {
        let k = &self.kernel;
        let model = match k.model {
            ModelName::FlatBand => KernelModel::FlatBand,
            ModelName::GaussianBand => KernelModel::GaussianBand,
            ModelName::Tabulated => {
                let path = k
                    .table
                    .as_ref()
                    .ok_or_else(|| ConfigError::Invalid("tabulated kernel needs a `table` path".into()))?;
                let file = fs::File::open(path).map_err(|source| ConfigError::Io {
                    path: path.clone(),
                    source,
                })?;
                let table = read_kernel_table(std::io::BufReader::new(file)).map_err(|source| ConfigError::Table {
                    path: path.clone(),
                    source,
                })?;
                KernelModel::Tabulated(table)
            }
        };
        let params = KernelParams {
            model,
            r0: k.r0,
            q_c: k.q_c,
            omega_c: k.omega_c,
            psi0: k.psi0,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn protocol_params(&self) -> Result<ProtocolParams, ConfigError> {
        let p = ProtocolParams::new(self.protocol.b0, self.protocol.a0)?;
        Ok(match self.protocol.gain {
            Some(g) => p.with_gain(g)?,
            None => p,
        })
    }

    pub fn input_spec(&self) -> Result<CoherentInputSpec, ConfigError> {
        let [re, im] = self.input.amplitude;
        let spec = CoherentInputSpec {
            amplitude: Complex64::new(re, im),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn teleport_config(&self) -> Result<TeleportConfig, ConfigError> {
        Ok(TeleportConfig {
            grid: self.grid()?,
            kernel: self.kernel_params()?,
            protocol: self.protocol_params()?,
            input: self.input_spec()?,
        })
    }

    pub fn blocks(&self) -> Result<Vec<BlockShape>, ConfigError> {
        let grid = self.grid()?;
        let quarter = |n: usize| (1..=(n / 4).max(1)).rev().find(|d| n.is_multiple_of(*d)).unwrap_or(1);
        let auto = [[quarter(grid.nx), quarter(grid.ny), quarter(grid.nt)]];
        self.analysis
            .coarse_blocks
            .as_deref()
            .unwrap_or(&auto)
            .iter()
            .map(|&[bx, by, bt]| {
                let b = BlockShape::new(bx, by, bt);
                b.counts(&grid)?;
                Ok(b)
            })
            .collect()
    }

    /// Everything `run`, `alice` and `bob` need, checked up front.
    pub fn validate(&self) -> Result<TeleportConfig, ConfigError> {
        if self.trials < 2 {
            return Err(ConfigError::Invalid(format!(
                "at least 2 trials are needed for a fluctuation spectrum, got {}",
                self.trials
            )));
        }
        if !self.analysis.phi.is_finite() {
            return Err(ConfigError::Invalid("homodyne angle must be finite".into()));
        }
        self.blocks()?;
        self.teleport_config()
    }
}
