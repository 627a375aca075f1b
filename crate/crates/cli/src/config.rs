use std::path::Path;

use fracpin::obstacles::ModelParams;
use fracpin::scaling::SelectionOptions;
use fracpin::supersolution::{PipelineConfig, SurfaceSpec, WeakObstacles};
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;

/// Top-level run configuration. Required sections must be complete; the
/// experiment sections fall back to their defaults when absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub schema_version: u32,
    pub run: RunSection,
    pub model: ModelParams,
    pub surface: SurfaceSpec,
    pub selection: SelectionOptions,
    pub pipeline: PipelineSection,
    #[serde(default)]
    pub percolate: PercolateSection,
    #[serde(default)]
    pub evolve: EvolveSection,
    #[serde(default)]
    pub homogenize: HomogenizeSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub seed: u64,
    /// Certification tolerance as a fraction of `F₂`.
    pub tolerance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineSection {
    pub columns: usize,
    pub grid: usize,
    pub profile_points: usize,
    #[serde(default)]
    pub level_cap: Option<usize>,
    /// Negative control: obstacles at `weak_fraction·F₁`.
    #[serde(default)]
    pub weak_fraction: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PercolateSection {
    pub columns: usize,
    pub levels: usize,
    pub p: f64,
    pub alpha: f64,
    pub replicates: u64,
}

impl Default for PercolateSection {
    fn default() -> Self {
        Self {
            columns: 16,
            levels: 24,
            p: 0.9,
            alpha: 0.5,
            replicates: 2000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvolveSection {
    pub columns: usize,
    pub grid: usize,
    pub horizon: f64,
    /// `F = force_fraction·F*`.
    pub force_fraction: f64,
    pub dt_max: f64,
    pub stop_when_pinned: bool,
    pub barrier_tolerance: f64,
    #[serde(default)]
    pub snapshot_times: Vec<f64>,
}

impl Default for EvolveSection {
    fn default() -> Self {
        Self {
            columns: 4,
            grid: 128,
            horizon: 4000.0,
            force_fraction: 1.0,
            dt_max: 5.0,
            stop_when_pinned: true,
            barrier_tolerance: 1e-3,
            snapshot_times: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HomogenizeSection {
    pub columns: usize,
    pub epsilons: Vec<f64>,
    pub replicates: usize,
    pub horizon: f64,
    pub force_fraction: f64,
    pub nodes_per_column: usize,
    pub samples_per_axis: usize,
    pub evolve: bool,
}

impl Default for HomogenizeSection {
    fn default() -> Self {
        Self {
            columns: 4,
            epsilons: vec![1.0, 0.5, 0.25, 0.125],
            replicates: 2,
            horizon: 2000.0,
            force_fraction: 1.0,
            nodes_per_column: 16,
            samples_per_axis: 16,
            evolve: true,
        }
    }
}

impl Config {
    pub fn desk_default() -> Self {
        let p = PipelineConfig::desk_default();
        Self {
            schema_version: SCHEMA_VERSION,
            run: RunSection {
                seed: p.model.rng_seed,
                tolerance: 1e-3,
            },
            model: p.model,
            surface: p.surface,
            selection: p.selection,
            pipeline: PipelineSection {
                columns: p.columns,
                grid: p.grid,
                profile_points: p.profile_points,
                level_cap: p.level_cap,
                weak_fraction: None,
            },
            percolate: PercolateSection::default(),
            evolve: EvolveSection::default(),
            homogenize: HomogenizeSection::default(),
        }
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: Config = toml::from_str(text).map_err(|e| CliError::Usage(format!("invalid config: {e}")))?;
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(CliError::Usage(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                cfg.schema_version
            )));
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serialises")
    }

    /// Pipeline for the main barrier; `run.seed` drives all randomness.
    pub fn pipeline(&self) -> PipelineConfig {
        let mut model = self.model.clone();
        model.rng_seed = self.run.seed;
        PipelineConfig {
            model,
            surface: self.surface.clone(),
            selection: self.selection,
            columns: self.pipeline.columns,
            grid: self.pipeline.grid,
            profile_points: self.pipeline.profile_points,
            level_cap: self.pipeline.level_cap,
            weak: self.pipeline.weak_fraction.map(|fraction| WeakObstacles { fraction }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips() {
        let cfg = Config::desk_default();
        assert_eq!(Config::parse(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn unknown_key_is_rejected() {
        let text = Config::desk_default().to_toml().replace("[run]", "[run]\nbogus = 1");
        assert!(Config::parse(&text).is_err());
    }

    #[test]
    fn missing_field_is_rejected() {
        let text: String = Config::desk_default()
            .to_toml()
            .lines()
            .filter(|l| !l.starts_with("lambda"))
            .collect::<Vec<_>>()
            .join("\n");
        assert!(Config::parse(&text).is_err());
    }
}
