//! Run configuration: one TOML file with a section per pipeline stage.
//! Command-line flags override individual fields; the resolved result is
//! written next to every output.

use std::path::Path;

use anyhow::{bail, Context, Result};
use rtkg::eval::EvalOptions;
use rtkg::kg::SplitMode;
use rtkg::model::Norm;
use rtkg::training::TrainConfig;
use rtkg::{ModelConfig, ModelKind, TemporalKg};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Top-level seed; when set it replaces `train.seed` and the sampler and
    /// split seeds.
    pub seed: Option<u64>,
    pub ingest: IngestSection,
    pub snowball: SnowballSection,
    pub temporal: TemporalSection,
    pub split: SplitSection,
    pub model: ModelSection,
    pub train: TrainConfig,
    pub selection: SelectionSection,
    pub eval: EvalOptions,
    pub grid: GridSection,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestSection {
    /// Rule file; the built-in table when absent.
    pub rules: Option<String>,
    /// Keep every relation instead of the default subset.
    pub all_relations: bool,
    /// Day zero as `YYYY-MM-DD`; the earliest event day when absent.
    pub epoch: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SnowballSection {
    pub sample_size: usize,
    pub growth_size: usize,
    pub initial_size: usize,
    pub seed: u64,
}

impl Default for SnowballSection {
    fn default() -> Self {
        SnowballSection {
            sample_size: 1_000_000,
            growth_size: 10,
            initial_size: 10,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TemporalSection {
    pub w_size: f64,
    pub w_span: f64,
    pub sample_size: usize,
}

impl Default for TemporalSection {
    fn default() -> Self {
        TemporalSection {
            w_size: 1.0,
            w_span: 1.0,
            sample_size: 100_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSection {
    pub mode: SplitMode,
    pub ratios: [f64; 3],
    pub seed: u64,
}

impl Default for SplitSection {
    fn default() -> Self {
        SplitSection {
            mode: SplitMode::Interpolated,
            ratios: [0.9, 0.05, 0.05],
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub kind: ModelKind,
    pub static_dim: usize,
    pub temporal_dim: usize,
    pub relative_dim: usize,
    pub norm: Norm,
    pub init_scale: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            kind: ModelKind::RtDeRotatE,
            static_dim: 64,
            temporal_dim: 64,
            relative_dim: 32,
            norm: Norm::L1,
            init_scale: 0.1,
        }
    }
}

impl ModelSection {
    pub fn config_for(&self, kg: &TemporalKg) -> ModelConfig {
        let mut c = ModelConfig::new(
            self.kind,
            kg.num_entities(),
            kg.num_relations(),
            (self.static_dim, self.temporal_dim, self.relative_dim),
        );
        c.norm = self.norm;
        c.init_scale = self.init_scale;
        c
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionSection {
    /// Train on train ∪ validation and keep the final parameters.
    pub train_on_validation: bool,
    /// Keep the final parameters without validating.
    pub disabled: bool,
}

/// Sweep lists; every combination is trained once.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub dropout: Vec<f64>,
    pub adversarial_temperature: Vec<f64>,
    pub margin: Vec<f64>,
    pub learning_rate: Vec<f64>,
    pub l3: Vec<f64>,
    /// `[d_s, d_t, d_r]` triples.
    pub dims: Vec<[usize; 3]>,
}

impl Default for GridSection {
    fn default() -> Self {
        GridSection {
            dropout: vec![0.0, 0.2, 0.4],
            adversarial_temperature: vec![0.5, 1.0],
            margin: vec![3.0, 6.0, 9.0],
            learning_rate: vec![1e-3, 1e-4, 3e-5, 1e-5],
            l3: vec![5e-4],
            dims: vec![[64, 64, 32]],
        }
    }
}

impl GridSection {
    pub fn len(&self) -> usize {
        self.dropout.len()
            * self.adversarial_temperature.len()
            * self.margin.len()
            * self.learning_rate.len()
            * self.l3.len()
            * self.dims.len()
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    /// Propagates the top-level seed and checks cross-field constraints.
    pub fn resolve(mut self) -> Result<Self> {
        if let Some(seed) = self.seed {
            self.train.seed = seed;
            self.snowball.seed = seed;
            self.split.seed = seed;
        }
        self.seed = Some(self.train.seed);
        self.train.validate()?;
        if self.selection.train_on_validation && self.selection.disabled {
            bail!("selection.train_on_validation already implies no selection; set only one");
        }
        Ok(self)
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(self.train.seed)
    }

    pub fn write_snapshot(&self, path: &Path) -> Result<()> {
        let text = toml::to_string_pretty(self).context("serialising resolved config")?;
        std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
    }
}

pub fn parse_triple<T>(s: &str) -> std::result::Result<[T; 3], String>
where
    T: std::str::FromStr,
    T::Err: std::fmt::Display,
{
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(format!("expected three comma-separated values, got `{s}`"));
    }
    let mut out = Vec::with_capacity(3);
    for p in parts {
        out.push(p.parse::<T>().map_err(|e| format!("`{p}`: {e}"))?);
    }
    out.try_into().map_err(|_| "expected three values".to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_default() {
        let c: RunConfig = toml::from_str("").unwrap();
        assert_eq!(c, RunConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<RunConfig>("[train]\nlearnig_rate = 1.0\n").is_err());
    }

    #[test]
    fn top_level_seed_wins() {
        let c: RunConfig = toml::from_str("seed = 9\n[train]\nseed = 2\n").unwrap();
        let c = c.resolve().unwrap();
        assert_eq!((c.train.seed, c.snowball.seed, c.split.seed), (9, 9, 9));
    }

    #[test]
    fn snapshot_round_trips() {
        let c = RunConfig::default().resolve().unwrap();
        let text = toml::to_string_pretty(&c).unwrap();
        assert_eq!(toml::from_str::<RunConfig>(&text).unwrap(), c);
    }

    #[test]
    fn default_grid_has_72_runs() {
        assert_eq!(GridSection::default().len(), 72);
    }

    #[test]
    fn triples() {
        assert_eq!(parse_triple::<usize>("64, 64,32").unwrap(), [64, 64, 32]);
        assert!(parse_triple::<f64>("0.9,0.1").is_err());
    }
}
