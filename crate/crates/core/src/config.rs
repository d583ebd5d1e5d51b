//! Run configuration as plain `key=value` text.
//!
//! Every key is optional; see [`RunConfig::default`] for the defaults and
//! [`RunConfig::to_entries`] for the full key list.

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::harness::{DatasetConfig, InstanceMode, TeacherSource, TrainConfig};
use crate::io::{parse_key_values, IoError};
use crate::losses::LossWeights;
use crate::occlusion::MaskCategory;
use crate::tuples::{TripletMode, TuplePolicy};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("duplicate key `{0}`")]
    DuplicateKey(String),
    #[error("key `{key}`: cannot parse `{value}`")]
    BadValue { key: String, value: String },
    #[error(transparent)]
    Io(#[from] IoError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Seeds the dataset, the student initialization and tuple sampling.
    pub seed: u64,
    pub dataset: DatasetConfig,
    pub train: TrainConfig,
    pub ablation_seeds: Vec<u64>,
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            dataset: DatasetConfig::default(),
            train: TrainConfig::default(),
            ablation_seeds: vec![0, 1, 2, 3, 4],
            data_dir: PathBuf::from("data"),
            out_dir: PathBuf::from("out"),
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
    value.parse().map_err(|_| ConfigError::BadValue {
        key: key.to_owned(),
        value: value.to_owned(),
    })
}

fn parse_with<T>(key: &str, value: &str, f: impl Fn(&str) -> Option<T>) -> Result<T, ConfigError> {
    f(value).ok_or_else(|| ConfigError::BadValue {
        key: key.to_owned(),
        value: value.to_owned(),
    })
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = RunConfig::default();
        let mut seen = std::collections::BTreeSet::new();
        for (key, value) in parse_key_values(text)? {
            if !seen.insert(key.clone()) {
                return Err(ConfigError::DuplicateKey(key));
            }
            cfg.set(&key, &value)?;
        }
        cfg.sync_seed();
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| IoError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    /// Propagates `seed` to the dataset, training and tuple sampler.
    pub fn sync_seed(&mut self) {
        self.dataset.seed = self.seed;
        self.train.seed = self.seed;
        self.train.policy.seed = self.seed;
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<(), ConfigError> {
        let d = &mut self.dataset;
        let t = &mut self.train;
        match key {
            "seed" => self.seed = parse(key, v)?,
            "num_identities" => d.num_identities = parse(key, v)?,
            "samples_per_identity" => d.samples_per_identity = parse(key, v)?,
            "embed_dim" => d.embed_dim = parse(key, v)?,
            "raster_side" => d.raster_side = parse(key, v)?,
            "noise_sigma" => d.noise_sigma = parse(key, v)?,
            "mask_category" => {
                d.mask_category = match v {
                    "mixed" => None,
                    _ => Some(parse_with(key, v, MaskCategory::parse)?),
                }
            }
            "mask_coverage" => d.mask_coverage = parse(key, v)?,
            "mask_flip" => d.mask_flip = parse(key, v)?,
            "mask_shift" => d.mask_shift = parse(key, v)?,
            "batch_size" => t.batch_size = parse(key, v)?,
            "lr0" => t.lr0 = parse(key, v)?,
            "lr_decay" => t.lr_decay = parse(key, v)?,
            "lr_step" => t.lr_step = parse(key, v)?,
            "epochs" => t.epochs = parse(key, v)?,
            "momentum" => t.momentum = parse(key, v)?,
            "hidden" => t.hidden = parse(key, v)?,
            "mode" => t.mode = parse_with(key, v, InstanceMode::parse)?,
            "teacher_source" => t.teacher_source = parse_with(key, v, TeacherSource::parse)?,
            "teacher_logit_scale" => t.teacher_logit_scale = parse(key, v)?,
            "eval_pairs" => t.eval_pairs = parse(key, v)?,
            "lambda_i" => t.weights.lambda_i = parse(key, v)?,
            "lambda_p" => t.weights.lambda_p = parse(key, v)?,
            "lambda_t" => t.weights.lambda_t = parse(key, v)?,
            "huber_delta" => t.weights.huber_delta = parse(key, v)?,
            "ce_temperature" => t.weights.ce_temperature = parse(key, v)?,
            "triplet_mode" => t.policy.triplet_mode = parse_with(key, v, TripletMode::parse)?,
            "max_tuples" => {
                t.policy.max_tuples = match v {
                    "none" => None,
                    _ => Some(parse(key, v)?),
                }
            }
            "ablation_seeds" => {
                self.ablation_seeds = v
                    .split(',')
                    .map(|s| parse(key, s.trim()))
                    .collect::<Result<_, _>>()?
            }
            "data_dir" => self.data_dir = PathBuf::from(v),
            "out_dir" => self.out_dir = PathBuf::from(v),
            _ => return Err(ConfigError::UnknownKey(key.to_owned())),
        }
        Ok(())
    }

    /// Every key with its current value, in a fixed order.
    pub fn to_entries(&self) -> Vec<(String, String)> {
        let d = &self.dataset;
        let t = &self.train;
        let w: &LossWeights = &t.weights;
        let p: &TuplePolicy = &t.policy;
        let seeds: Vec<String> = self.ablation_seeds.iter().map(u64::to_string).collect();
        [
            ("seed", self.seed.to_string()),
            ("num_identities", d.num_identities.to_string()),
            ("samples_per_identity", d.samples_per_identity.to_string()),
            ("embed_dim", d.embed_dim.to_string()),
            ("raster_side", d.raster_side.to_string()),
            ("noise_sigma", d.noise_sigma.to_string()),
            (
                "mask_category",
                d.mask_category
                    .map_or("mixed", MaskCategory::name)
                    .to_owned(),
            ),
            ("mask_coverage", d.mask_coverage.to_string()),
            ("mask_flip", d.mask_flip.to_string()),
            ("mask_shift", d.mask_shift.to_string()),
            ("batch_size", t.batch_size.to_string()),
            ("lr0", t.lr0.to_string()),
            ("lr_decay", t.lr_decay.to_string()),
            ("lr_step", t.lr_step.to_string()),
            ("epochs", t.epochs.to_string()),
            ("momentum", t.momentum.to_string()),
            ("hidden", t.hidden.to_string()),
            ("mode", t.mode.name().to_owned()),
            ("teacher_source", t.teacher_source.name().to_owned()),
            ("teacher_logit_scale", t.teacher_logit_scale.to_string()),
            ("eval_pairs", t.eval_pairs.to_string()),
            ("lambda_i", w.lambda_i.to_string()),
            ("lambda_p", w.lambda_p.to_string()),
            ("lambda_t", w.lambda_t.to_string()),
            ("huber_delta", w.huber_delta.to_string()),
            ("ce_temperature", w.ce_temperature.to_string()),
            ("triplet_mode", p.triplet_mode.name().to_owned()),
            (
                "max_tuples",
                p.max_tuples.map_or("none".to_owned(), |m| m.to_string()),
            ),
            ("ablation_seeds", seeds.join(",")),
            ("data_dir", self.data_dir.display().to_string()),
            ("out_dir", self.out_dir.display().to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_owned(), v))
        .collect()
    }

    pub fn to_text(&self) -> String {
        self.to_entries()
            .into_iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect()
    }
}
