//! Run configuration file: TOML with `[data]`, `[model]`, `[train]` and
//! `[flow]` sections. Missing keys take defaults, unknown keys are errors.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use twostream_core::flow::FlowParams;
use twostream_core::fusion::FusionKind;
use twostream_core::model::{GruVariant, Streams, TrainConfig};
use twostream_core::nn::Preset;
use twostream_core::synth::SynthSpec;

use crate::error::{Error, IoContext, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub preset: Preset,
    pub streams: Streams,
    pub gru_direction: GruVariant,
    pub fusion_kind: FusionKind,
    pub hidden_dim: usize,
    /// Output width of conv fusion; 0 means the stream width.
    pub fusion_out: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub fusion_epochs: usize,
    pub batch_size: usize,
    pub rmsprop_decay: f64,
    pub rmsprop_eps: f64,
    pub seed: u64,
    pub coupled: bool,
    /// Share of each class's clips used for training.
    pub train_fraction: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self::from(&TrainConfig::default())
    }
}

impl Default for TrainSection {
    fn default() -> Self {
        let mut s = Self::from(&TrainConfig::default());
        s.train_fraction = 2.0 / 3.0;
        s
    }
}

impl From<&TrainConfig> for ModelSection {
    fn from(t: &TrainConfig) -> Self {
        Self {
            preset: t.preset,
            streams: t.streams,
            gru_direction: t.gru_direction,
            fusion_kind: t.fusion_kind,
            hidden_dim: t.hidden_dim,
            fusion_out: t.fusion_out,
        }
    }
}

impl From<&TrainConfig> for TrainSection {
    fn from(t: &TrainConfig) -> Self {
        Self {
            learning_rate: t.learning_rate,
            weight_decay: t.weight_decay,
            epochs: t.epochs,
            fusion_epochs: t.fusion_epochs,
            batch_size: t.batch_size,
            rmsprop_decay: t.rmsprop_decay,
            rmsprop_eps: t.rmsprop_eps,
            seed: t.seed,
            coupled: t.coupled,
            train_fraction: 2.0 / 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data: SynthSpec,
    pub model: ModelSection,
    pub train: TrainSection,
    pub flow: FlowParams,
}

impl RunConfig {
    /// Combined training configuration of `[model]` and `[train]`.
    pub fn train_config(&self) -> TrainConfig {
        let (m, t) = (&self.model, &self.train);
        TrainConfig {
            learning_rate: t.learning_rate,
            weight_decay: t.weight_decay,
            epochs: t.epochs,
            fusion_epochs: t.fusion_epochs,
            batch_size: t.batch_size,
            rmsprop_decay: t.rmsprop_decay,
            rmsprop_eps: t.rmsprop_eps,
            seed: t.seed,
            preset: m.preset,
            streams: m.streams,
            gru_direction: m.gru_direction,
            fusion_kind: m.fusion_kind,
            coupled: t.coupled,
            hidden_dim: m.hidden_dim,
            fusion_out: m.fusion_out,
        }
    }

    pub fn set_train_config(&mut self, t: &TrainConfig) {
        let fraction = self.train.train_fraction;
        self.model = ModelSection::from(t);
        self.train = TrainSection::from(t);
        self.train.train_fraction = fraction;
    }

    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        self.train_config().validate()?;
        self.flow.validate()?;
        let f = self.train.train_fraction;
        if !(f > 0.0 && f < 1.0) {
            return Err(Error::Config(format!("train.train_fraction must be in (0, 1), got {}", f)));
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).at(path)?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {}", path.display(), m)),
            other => other,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_toml()).at(path)
    }

    /// Applies `section.key=value`. The value is read as a TOML literal
    /// when it parses as one and as a bare string otherwise, then checked
    /// against the field's type.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (path, raw) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{}` is not section.key=value", assignment)))?;
        let (section, key) = path
            .trim()
            .split_once('.')
            .ok_or_else(|| Error::Config(format!("override key `{}` is not section.key", path.trim())))?;
        let raw = raw.trim();
        let value = toml::from_str::<toml::Table>(&format!("v = {}", raw))
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(raw.to_string()));

        let mut doc = toml::Value::try_from(&*self).expect("run config serializes");
        let slot = doc
            .get_mut(section)
            .and_then(|s| s.as_table_mut())
            .ok_or_else(|| Error::Config(format!("unknown section `{}`", section)))?;
        let value = match (slot.get(key), value) {
            (None, _) => return Err(Error::Config(format!("unknown key `{}.{}`", section, key))),
            (Some(toml::Value::Float(_)), toml::Value::Integer(i)) => toml::Value::Float(i as f64),
            (Some(_), v) => v,
        };
        slot.insert(key.to_string(), value);
        *self = doc
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(format!("{}: {}", path.trim(), e.message())))?;
        Ok(())
    }
}
