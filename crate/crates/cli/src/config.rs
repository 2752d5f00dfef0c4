//! Run configuration: one TOML file with a top-level `seed` and `[model]`,
//! `[train]` and `[data]` sections. Unset keys fall back to the chosen model
//! preset and the library defaults.

use std::path::Path;

use serde::Deserialize;

use ecoscale_core::data::{GenConfig, Task};
use ecoscale_core::model::{BackboneConfig, ModelSpec, Variant};
use ecoscale_core::train::TrainConfig;
use ecoscale_core::Error;

use crate::CliError;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    seed: Option<u64>,
    #[serde(default)]
    model: RawModel,
    #[serde(default)]
    train: RawTrain,
    #[serde(default)]
    data: RawData,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModel {
    preset: Option<String>,
    variant: Option<String>,
    leads: Option<usize>,
    input_length: Option<usize>,
    stem_channels: Option<usize>,
    blocks: Option<Vec<usize>>,
    channels: Option<Vec<usize>>,
    strides: Option<Vec<usize>>,
    initial_cover: Option<usize>,
    strict_coverage: Option<bool>,
    num_classes: Option<usize>,
    conv_bias: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTrain {
    batch_size: Option<usize>,
    epochs: Option<usize>,
    lr_init: Option<f64>,
    lr_final: Option<f64>,
    weight_decay: Option<f64>,
    beta1: Option<f64>,
    beta2: Option<f64>,
    epsilon: Option<f64>,
    precision: Option<String>,
    split_fractions: Option<[f64; 3]>,
    split_sizes: Option<[usize; 3]>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawData {
    num_records: Option<usize>,
    length: Option<usize>,
    leads: Option<usize>,
    class_scales: Option<Vec<usize>>,
    noise_std: Option<f64>,
    amplitude_min: Option<f64>,
    amplitude_max: Option<f64>,
    task: Option<String>,
    label_prob: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SplitRule {
    Fractions(f64, f64, f64),
    Sizes(usize, usize, usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub model: BackboneConfig,
    pub train: TrainConfig,
    pub data: GenConfig,
    pub precision: Precision,
    pub split: SplitRule,
}

/// Independent streams derived from the single `seed` key.
impl RunConfig {
    pub fn data_seed(&self) -> u64 {
        self.seed
    }

    pub fn split_seed(&self) -> u64 {
        self.seed.wrapping_add(1)
    }

    pub fn init_seed(&self) -> u64 {
        self.seed.wrapping_add(2)
    }

    pub fn shuffle_seed(&self) -> u64 {
        self.seed.wrapping_add(3)
    }

    pub fn model_spec(&self) -> Result<ModelSpec, CliError> {
        Ok(self.model.to_spec()?)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let raw: RawConfig =
            toml::from_str(text).map_err(|e| CliError::Config(e.message().to_string()))?;
        let seed = raw.seed.unwrap_or(0);

        let m = raw.model;
        let mut model = match m.preset.as_deref().unwrap_or("desk") {
            "desk" => BackboneConfig::desk(),
            "reference" => BackboneConfig::reference(),
            other => {
                return Err(invalid(
                    "model.preset",
                    format!("{other:?} (expected desk or reference)"),
                ))
            }
        };
        if let Some(v) = m.variant {
            model.variant = v
                .parse::<Variant>()
                .map_err(|e| rekey(e, "model.variant"))?;
        }
        set(&mut model.leads, m.leads);
        set(&mut model.input_length, m.input_length);
        set(&mut model.stem_channels, m.stem_channels);
        set(&mut model.blocks, m.blocks);
        set(&mut model.channels, m.channels);
        set(&mut model.strides, m.strides);
        set(&mut model.initial_cover, m.initial_cover);
        set(&mut model.strict_coverage, m.strict_coverage);
        set(&mut model.conv_bias, m.conv_bias);

        let d = raw.data;
        let mut data = GenConfig {
            seed,
            leads: model.leads,
            length: model.input_length,
            ..GenConfig::default()
        };
        set(&mut data.num_records, d.num_records);
        set(&mut data.length, d.length);
        set(&mut data.leads, d.leads);
        set(&mut data.class_scales, d.class_scales);
        set(&mut data.noise_std, d.noise_std);
        set(&mut data.amplitude_min, d.amplitude_min);
        set(&mut data.amplitude_max, d.amplitude_max);
        set(&mut data.label_prob, d.label_prob);
        if let Some(t) = d.task {
            data.task = t.parse::<Task>().map_err(|e| rekey(e, "data.task"))?;
        }
        data.validate().map_err(|e| prefix(e, "data"))?;

        model.num_classes = m.num_classes.unwrap_or_else(|| data.label_count());
        if model.num_classes != data.label_count() {
            return Err(invalid(
                "model.num_classes",
                format!(
                    "{} but [data] produces {} labels",
                    model.num_classes,
                    data.label_count()
                ),
            ));
        }
        if data.leads != model.leads {
            return Err(invalid(
                "data.leads",
                format!("{} but model.leads is {}", data.leads, model.leads),
            ));
        }
        if data.length != model.input_length {
            return Err(invalid(
                "data.length",
                format!(
                    "{} but model.input_length is {}",
                    data.length, model.input_length
                ),
            ));
        }
        model.to_spec()?;

        let t = raw.train;
        let mut train = TrainConfig {
            seed: seed.wrapping_add(3),
            ..TrainConfig::default()
        };
        set(&mut train.batch_size, t.batch_size);
        set(&mut train.epochs, t.epochs);
        set(&mut train.lr_init, t.lr_init);
        set(&mut train.lr_final, t.lr_final);
        set(&mut train.weight_decay, t.weight_decay);
        set(&mut train.betas.0, t.beta1);
        set(&mut train.betas.1, t.beta2);
        set(&mut train.epsilon, t.epsilon);
        train.validate().map_err(|e| prefix(e, "train"))?;
        let precision = match t.precision.as_deref().unwrap_or("f64") {
            "f64" => Precision::F64,
            "f32" => Precision::F32,
            other => {
                return Err(invalid(
                    "train.precision",
                    format!("{other:?} (expected f32 or f64)"),
                ))
            }
        };
        let split = match (t.split_fractions, t.split_sizes) {
            (Some(_), Some(_)) => {
                return Err(invalid(
                    "train.split_sizes",
                    "set either split_sizes or split_fractions, not both",
                ))
            }
            (_, Some([a, b, c])) => SplitRule::Sizes(a, b, c),
            (Some([a, b, c]), None) => SplitRule::Fractions(a, b, c),
            (None, None) => SplitRule::Fractions(0.9, 0.05, 0.05),
        };

        Ok(RunConfig {
            seed,
            model,
            train,
            data,
            precision,
            split,
        })
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn invalid(key: &str, message: impl Into<String>) -> CliError {
    CliError::Core(Error::Invalid {
        key: key.to_string(),
        message: message.into(),
    })
}

fn rekey(e: Error, key: &str) -> CliError {
    match e {
        Error::Invalid { message, .. } => invalid(key, message),
        other => other.into(),
    }
}

fn prefix(e: Error, section: &str) -> CliError {
    match e {
        Error::Invalid { key, message } if !key.starts_with(section) => {
            invalid(&format!("{section}.{key}"), message)
        }
        other => other.into(),
    }
}
