//! Pipeline configuration file.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::calendar::{Calendar, YearMonth};
use crate::error::{Error, Result};
use crate::ingestion::{FilterPolicy, InputFormat};
use crate::residence::{check_window, WindowMode};
use crate::solver::FitConfig;

/// One TOML file describing a full run. Relative paths are resolved against
/// the directory of the file they were read from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub epoch: YearMonth,
    pub months: usize,
    pub registry: PathBuf,
    #[serde(default)]
    pub centroids: Option<PathBuf>,
    pub input: PathBuf,
    #[serde(default = "default_format")]
    pub input_format: InputFormat,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub filter: FilterPolicy,
    #[serde(default = "default_window")]
    pub window: usize,
    #[serde(default)]
    pub window_mode: WindowMode,
    #[serde(default)]
    pub fit: FitConfig,
    #[serde(default = "default_top_k")]
    pub top_k: usize,
    #[serde(default = "default_n_top")]
    pub n_top: usize,
    /// Worker threads; 0 uses every core.
    #[serde(default)]
    pub threads: usize,
}

fn default_format() -> InputFormat {
    InputFormat::Csv
}

fn default_window() -> usize {
    1
}

fn default_top_k() -> usize {
    10
}

fn default_n_top() -> usize {
    5
}

impl PipelineConfig {
    /// Config with defaults for everything but the required fields.
    pub fn new(
        epoch: YearMonth,
        months: usize,
        registry: impl Into<PathBuf>,
        input: impl Into<PathBuf>,
        output_dir: impl Into<PathBuf>,
    ) -> Self {
        PipelineConfig {
            epoch,
            months,
            registry: registry.into(),
            centroids: None,
            input: input.into(),
            input_format: default_format(),
            output_dir: output_dir.into(),
            filter: FilterPolicy::default(),
            window: default_window(),
            window_mode: WindowMode::default(),
            fit: FitConfig::default(),
            top_k: default_top_k(),
            n_top: default_n_top(),
            threads: 0,
        }
    }

    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: PipelineConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        for p in [&mut cfg.registry, &mut cfg.input, &mut cfg.output_dir]
            .into_iter()
            .chain(cfg.centroids.as_mut())
        {
            if p.is_relative() {
                *p = base_dir.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn calendar(&self) -> Result<Calendar> {
        Calendar::new(self.epoch, self.months)
    }

    pub fn validate(&self) -> Result<()> {
        self.calendar()?;
        check_window(self.window, self.months)?;
        self.fit.validate()?;
        if self.top_k == 0 || self.n_top == 0 {
            return Err(Error::Config("top_k and n_top must be positive".into()));
        }
        for p in std::iter::once(&self.registry).chain(self.centroids.as_ref()) {
            if !p.is_file() {
                return Err(Error::Config(format!("{} does not exist", p.display())));
            }
        }
        Ok(())
    }
}
