//! Experiment configuration: one TOML document holding every stage's
//! settings, with dotted-key overrides.
//!
//! Unset fields take their defaults. Optimization hyperparameters default to
//! full-scale values; architecture sizes default to desk scale.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::encoders::EncoderConfig;
use crate::error::{Error, Result};
use crate::finetune::{FinetuneConfig, FusionConfig, ModelConfig};
use crate::pointcloud::{DistortionKind, DistortionSchedule, MAX_LEVEL};
use crate::pretrain::PretrainConfig;
use crate::render::RenderConfig;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct PathsConfig {
    /// Unlabelled manifest for pre-training; defaults to `train_manifest`.
    pub pretrain_manifest: Option<PathBuf>,
    pub train_manifest: Option<PathBuf>,
    pub test_manifest: Option<PathBuf>,
    pub cache_dir: Option<PathBuf>,
    pub output_dir: PathBuf,
    /// Pre-trained checkpoint used to initialize fine-tuning.
    pub pretrained_checkpoint: Option<PathBuf>,
    /// Parameter file (checkpoint format, one section `backbone`) replacing
    /// the frozen semantic backbone.
    pub semantic_weights: Option<PathBuf>,
}

/// Quality-encoder architecture; the input size follows `render`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderSpec {
    pub widths: Vec<usize>,
    pub embedding_dim: usize,
}

impl Default for EncoderSpec {
    fn default() -> Self {
        let e = EncoderConfig::default();
        EncoderSpec {
            widths: e.widths,
            embedding_dim: e.embedding_dim,
        }
    }
}

/// Initialization of the quality encoder before fine-tuning.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    /// From `paths.pretrained_checkpoint`, or by pre-training on the
    /// training contents when no checkpoint is given.
    #[default]
    Pretrained,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub folds: usize,
    pub train_ratio: u32,
    pub test_ratio: u32,
    /// Write a scatter-plot PNG next to evaluation reports.
    pub plot: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            folds: 5,
            train_ratio: 7,
            test_ratio: 2,
            plot: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub kinds: Vec<DistortionKind>,
    pub levels: u8,
    /// Attach `1 + 4·(L + 1 − level)/L` as MOS.
    pub pseudo_mos: bool,
    /// Points per generated reference cloud.
    pub points: usize,
    pub schedule: DistortionSchedule,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            kinds: DistortionKind::ALL.to_vec(),
            levels: MAX_LEVEL,
            pseudo_mos: true,
            points: 4000,
            schedule: DistortionSchedule::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub version: u32,
    pub seed: u64,
    pub init: InitMode,
    pub paths: PathsConfig,
    pub render: RenderConfig,
    pub encoder: EncoderSpec,
    pub pretrain: PretrainConfig,
    pub finetune: FinetuneConfig,
    pub fusion: FusionConfig,
    pub eval: EvalConfig,
    pub synth: SynthConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            version: CONFIG_VERSION,
            seed: 0,
            init: InitMode::default(),
            paths: PathsConfig {
                output_dir: PathBuf::from("runs/default"),
                ..PathsConfig::default()
            },
            render: RenderConfig::default(),
            encoder: EncoderSpec::default(),
            pretrain: PretrainConfig::default(),
            finetune: FinetuneConfig::default(),
            fusion: FusionConfig::default(),
            eval: EvalConfig::default(),
            synth: SynthConfig::default(),
        }
    }
}

/// Parses `raw` as a TOML value, falling back to a plain string.
fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

/// Sets `a.b.c = value` in a TOML tree, creating tables as needed.
pub fn apply_override(root: &mut toml::Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{assignment}` is not of the form key=value")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("override key `{key}` is malformed")));
    }
    let mut node = root;
    for p in &parts[..parts.len() - 1] {
        let table = node
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override `{key}`: `{p}` is not a table")))?;
        node = table
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    }
    let table = node
        .as_table_mut()
        .ok_or_else(|| Error::Config(format!("override `{key}` does not address a table")))?;
    table.insert(parts[parts.len() - 1].to_string(), parse_value(raw.trim()));
    Ok(())
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self> {
        let mut root: toml::Value = toml::from_str::<toml::Table>(text)
            .map(toml::Value::Table)
            .map_err(|e| Error::Config(format!("config: {}", e.message())))?;
        for o in overrides {
            apply_override(&mut root, o)?;
        }
        let cfg: ExperimentConfig = root
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(format!("config: {}", e.message())))?;
        if cfg.version != CONFIG_VERSION {
            return Err(Error::Config(format!(
                "config version {} is not supported (expected {CONFIG_VERSION})",
                cfg.version
            )));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads `path` (or defaults when `None`) and applies overrides.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?,
            None => String::new(),
        };
        Self::from_toml_str(&text, overrides)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the JSON form, ignoring `paths.output_dir`.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.paths.output_dir = PathBuf::new();
        let json = serde_json::to_vec(&canonical).expect("config serializes");
        hex::encode(Sha256::digest(json))
    }

    pub fn encoder_config(&self, seed: u64) -> EncoderConfig {
        EncoderConfig {
            input_height: self.render.height,
            input_width: self.render.width,
            channels: self.render.channels,
            widths: self.encoder.widths.clone(),
            embedding_dim: self.encoder.embedding_dim,
            seed,
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            render: self.render.clone(),
            encoder: self.encoder_config(0),
            fusion: self.fusion.clone(),
            head_hidden: self.finetune.head_hidden,
            ..ModelConfig::default()
        }
    }

    /// Structural checks; path existence is checked by the commands that
    /// need each path.
    pub fn validate(&self) -> Result<()> {
        self.render.validate().map_err(prefix("render"))?;
        self.encoder_config(0).validate().map_err(prefix("encoder"))?;
        self.pretrain.validate()?;
        self.finetune.validate()?;
        self.fusion.validate(self.encoder.embedding_dim)?;
        self.synth.schedule.validate().map_err(prefix("synth.schedule"))?;
        if self.eval.folds < 2 || self.eval.train_ratio == 0 || self.eval.test_ratio == 0 {
            return Err(Error::Config("eval: folds must be >= 2 and ratios positive".into()));
        }
        if self.synth.kinds.is_empty() || !(1..=MAX_LEVEL).contains(&self.synth.levels) || self.synth.points == 0 {
            return Err(Error::Config(format!(
                "synth: need at least one kind, levels in 1..={MAX_LEVEL} and points > 0"
            )));
        }
        Ok(())
    }

    /// Fails with a config error when `path` is unset or missing.
    pub fn require_path<'a>(&self, field: &str, path: Option<&'a PathBuf>) -> Result<&'a Path> {
        match path {
            None => Err(Error::Config(format!("paths.{field} must be set"))),
            Some(p) if !p.exists() => Err(Error::Config(format!("paths.{field}: {} does not exist", p.display()))),
            Some(p) => Ok(p),
        }
    }
}

fn prefix(section: &'static str) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::Config(m) => Error::Config(format!("{section}: {m}")),
        Error::Validation(m) => Error::Config(format!("{section}: {m}")),
        other => other,
    }
}
