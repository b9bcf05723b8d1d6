//! Experiment configuration: a TOML file, bundled presets and dotted-key
//! overrides, resolved in that order.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::augment::{MixStrategyConfig, Strategy};
use crate::data::DatasetSource;
use crate::error::{Error, Result};
use crate::losses::LossKind;
use crate::metrics::DEFAULT_N_FAKE;
use crate::models::{DiscriminatorNorm, Family, GeneratorNorm, ModelSpec};
use crate::regularize::RegularizerConfig;
use crate::train::TrainConfig;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// feature extractor used for FID
    pub extractor: String,
    pub n_fake: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            extractor: "toy".into(),
            n_fake: DEFAULT_N_FAKE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub dataset: String,
    pub output_dir: PathBuf,
    pub model: ModelSpec,
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalConfig,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        DatasetSource::parse(&self.dataset).map_err(|e| Error::Config(format!("dataset: {e}")))?;
        self.model.validate().map_err(|e| Error::Config(format!("model: {e}")))?;
        self.train.validate().map_err(|e| Error::Config(format!("train: {e}")))?;
        if self.eval.n_fake < 2 {
            return Err(Error::Config("eval.n_fake must be at least 2".into()));
        }
        Ok(())
    }

    /// Canonical TOML text; parsing it back yields an equal config.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("cannot serialize config: {e}")))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let table: Table = text.parse().map_err(|e| Error::Config(format!("{e}")))?;
        from_table(table)
    }
}

/// The published training setups.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// DCGAN, hinge, layer norm, consistency + gradient penalty
    Case1,
    /// DCGAN, hinge, spectral norm, consistency
    Case2,
    /// ResNet, hinge, layer + spectral norm, consistency + gradient penalty
    Case3,
}

impl std::str::FromStr for Preset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "case1" => Ok(Preset::Case1),
            "case2" => Ok(Preset::Case2),
            "case3" => Ok(Preset::Case3),
            other => Err(Error::Config(format!("unknown preset `{other}` (expected case1, case2 or case3)"))),
        }
    }
}

impl Preset {
    pub fn config(self) -> ExperimentConfig {
        let (family, d_norm, gp, ratio) = match self {
            Preset::Case1 => (Family::Dcgan, vec![DiscriminatorNorm::Layer], true, 0.25),
            Preset::Case2 => (Family::Dcgan, vec![DiscriminatorNorm::Spectral], false, 0.25),
            Preset::Case3 => (
                Family::Resnet,
                vec![DiscriminatorNorm::Layer, DiscriminatorNorm::Spectral],
                true,
                0.15,
            ),
        };
        ExperimentConfig {
            schema_version: SCHEMA_VERSION,
            dataset: "synthetic://colored-shapes?n=2000&seed=7".into(),
            output_dir: PathBuf::from("runs").join(self.name()),
            model: ModelSpec {
                family,
                resolution: 64,
                z_dim: 128,
                base_channels: 64,
                d_norm,
                g_norm: GeneratorNorm::Batch,
            },
            train: TrainConfig {
                loss: LossKind::Hinge,
                // the strategy is chosen per run; the ratio belongs to the case
                mix: MixStrategyConfig::new(Strategy::None, ratio),
                regularizers: RegularizerConfig {
                    gp_enabled: gp,
                    gp_every: 5,
                    gp_coefficient: 10.0,
                    cr_enabled: true,
                    cr_coefficient: 1.0,
                    cr_max_shift: 4,
                    cr_include_mixed: false,
                },
                ..TrainConfig::default()
            },
            eval: EvalConfig::default(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Preset::Case1 => "case1",
            Preset::Case2 => "case2",
            Preset::Case3 => "case3",
        }
    }
}

fn to_table(cfg: &ExperimentConfig) -> Table {
    Table::try_from(cfg).expect("experiment config serializes to a table")
}

fn from_table(table: Table) -> Result<ExperimentConfig> {
    let cfg: ExperimentConfig = Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

/// Recursively overlays `top` onto `base`; tables merge, everything else
/// replaces.
pub fn merge(base: &mut Table, top: Table) {
    for (k, v) in top {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(t)) => merge(b, t),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Parses the right-hand side of an override as a TOML value, falling back
/// to a plain string (`strategy=srmix`).
fn parse_value(raw: &str) -> Value {
    format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

/// Applies one `a.b.c=value` override.
pub fn apply_override(table: &mut Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{assignment}` must look like key=value")))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("malformed key `{key}`")));
    }
    let mut node = table;
    for part in &path[..path.len() - 1] {
        let entry = node
            .entry(part.to_string())
            .or_insert_with(|| Value::Table(Table::new()));
        node = match entry {
            Value::Table(t) => t,
            _ => return Err(Error::Config(format!("`{part}` in `{key}` is not a table"))),
        };
    }
    node.insert(path[path.len() - 1].to_string(), parse_value(raw.trim()));
    Ok(())
}

/// Resolves preset (default `case1`), then the config file, then each
/// override in order, and validates the result.
pub fn resolve(preset: Option<Preset>, file: Option<&Path>, overrides: &[String]) -> Result<ExperimentConfig> {
    let mut table = to_table(&preset.unwrap_or(Preset::Case1).config());
    if let Some(path) = file {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let user: Table = text
            .parse()
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        merge(&mut table, user);
    }
    for o in overrides {
        apply_override(&mut table, o)?;
    }
    from_table(table)
}
