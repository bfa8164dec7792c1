//! Flat `key = value` experiment configuration.
//!
//! One assignment per line; blank lines and lines starting with `#` are
//! ignored. Unknown or repeated keys are errors. Any key can be overridden
//! from the environment as `UVREC_<KEY>` (upper case).

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use sha2::{Digest, Sha256};
use uvrec_core::fusion::{QueryEncoderConfig, TokenConfig};
use uvrec_core::imaging::CleanConfig;
use uvrec_core::modality::{DatasetMeta, ImageFormConfig};
use uvrec_core::numerics::AdamConfig;
use uvrec_core::reconstructor::{FieldConfig, FusionArm, ModelConfig, TrainConfig};
use uvrec_core::skysim::{ArrayConfig, SkyKind};

use crate::error::{Error, IoContext, Result};

pub const ENV_PREFIX: &str = "UVREC_";

/// Station layouts the simulator knows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArrayLayout {
    /// Eight-station millimetre VLBI array.
    EhtLike,
}

impl fmt::Display for ArrayLayout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ArrayLayout::EhtLike => "eht_like",
        })
    }
}

impl FromStr for ArrayLayout {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "eht_like" => Ok(ArrayLayout::EhtLike),
            _ => Err(format!("unknown array layout `{s}`")),
        }
    }
}

/// Conversion between a config field and its text form. `Display` output
/// must parse back to the identical value.
trait ConfigValue: Sized {
    fn parse_value(raw: &str) -> Result<Self, String>;
    fn to_value(&self) -> String;
}

macro_rules! display_value {
    ($($t:ty),*) => {$(
        impl ConfigValue for $t {
            fn parse_value(raw: &str) -> Result<Self, String> {
                raw.parse().map_err(|e| format!("`{raw}`: {e}"))
            }
            fn to_value(&self) -> String {
                self.to_string()
            }
        }
    )*};
}

display_value!(usize, u64, bool, ArrayLayout);

impl ConfigValue for f64 {
    fn parse_value(raw: &str) -> Result<Self, String> {
        raw.parse().map_err(|e| format!("`{raw}`: {e}"))
    }

    fn to_value(&self) -> String {
        // Debug prints the shortest string that parses back to the same bits.
        format!("{self:?}")
    }
}

impl ConfigValue for String {
    fn parse_value(raw: &str) -> Result<Self, String> {
        Ok(raw.to_string())
    }

    fn to_value(&self) -> String {
        self.clone()
    }
}

impl ConfigValue for FusionArm {
    fn parse_value(raw: &str) -> Result<Self, String> {
        raw.parse().map_err(|e: uvrec_core::Error| e.to_string())
    }

    fn to_value(&self) -> String {
        self.name().to_string()
    }
}

impl ConfigValue for Vec<SkyKind> {
    fn parse_value(raw: &str) -> Result<Self, String> {
        raw.split(',')
            .map(|s| s.trim().parse().map_err(|e: uvrec_core::Error| e.to_string()))
            .collect()
    }

    fn to_value(&self) -> String {
        self.iter().map(|k| k.as_str()).collect::<Vec<_>>().join(",")
    }
}

macro_rules! experiment_config {
    ($($(#[doc = $doc:literal])* $key:ident: $ty:ty = $default:expr,)*) => {
        /// Every knob of a simulate/train/evaluate run.
        #[derive(Debug, Clone, PartialEq)]
        pub struct ExperimentConfig {
            $($(#[doc = $doc])* pub $key: $ty,)*
        }

        impl Default for ExperimentConfig {
            fn default() -> Self {
                Self { $($key: $default,)* }
            }
        }

        impl ExperimentConfig {
            /// Keys in file order.
            pub const KEYS: &'static [&'static str] = &[$(stringify!($key)),*];

            pub fn get(&self, key: &str) -> Option<String> {
                match key {
                    $(stringify!($key) => Some(self.$key.to_value()),)*
                    _ => None,
                }
            }

            /// Parses `raw` into field `key`; does not validate ranges.
            pub fn set(&mut self, key: &str, raw: &str) -> Result<()> {
                match key {
                    $(stringify!($key) => {
                        self.$key = <$ty as ConfigValue>::parse_value(raw.trim())
                            .map_err(|r| Error::config(key, r))?;
                    })*
                    _ => return Err(Error::config(key, "unknown key")),
                }
                Ok(())
            }
        }
    };
}

experiment_config! {
    /// Grid size; a power of two.
    n: usize = 64,
    /// Sky morphologies, cycled through sample by sample.
    kinds: Vec<SkyKind> = SkyKind::ALL.to_vec(),
    train: usize = 200,
    /// May be 0; training then monitors a slice of the training set.
    val: usize = 20,
    test: usize = 40,
    /// Complex noise standard deviation relative to the peak visibility amplitude.
    noise_sigma: f64 = 0.05,
    array: ArrayLayout = ArrayLayout::EhtLike,
    /// Hour angles in the observing track.
    hours: usize = 24,
    /// Total hour-angle span in radians.
    hour_span: f64 = 8.0,
    survey: String = "synthetic-vlbi".to_string(),
    subject: String = "mixed compact and extended sources".to_string(),
    d_model: usize = 64,
    heads: usize = 4,
    encoder_layers: usize = 2,
    ff_dim: usize = 128,
    query_tokens: usize = 16,
    token_frequencies: usize = 4,
    token_position_codes: bool = true,
    conjugate_tokens: bool = false,
    channels: usize = 4,
    kernel_1d: usize = 3,
    kernel_2d: usize = 3,
    patch: usize = 8,
    text_tokens: usize = 32,
    vocab: usize = 512,
    field_depth: usize = 5,
    field_width: usize = 64,
    field_frequencies: usize = 16,
    arm: FusionArm = FusionArm::Full,
    encoder_seed: u64 = 0x5eed,
    epochs: usize = 5,
    lr: f64 = 1e-3,
    beta1: f64 = 0.9,
    beta2: f64 = 0.999,
    eps: f64 = 1e-8,
    /// Seed of the model weights and the training order.
    seed: u64 = 0,
    /// Number of consecutive seeds, from `seed`, used by comparative runs.
    seeds: usize = 3,
    /// Seed of the simulated dataset.
    data_seed: u64 = 1,
    train_fraction: f64 = 1.0,
    clean_gain: f64 = 0.1,
    clean_max_iter: usize = 1000,
    clean_threshold: f64 = 0.05,
}

impl ExperimentConfig {
    /// Parses and validates the file form.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = std::collections::HashSet::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("line {}", lineno + 1), "expected `key = value`"))?;
            let key = key.trim();
            if !seen.insert(key.to_string()) {
                return Err(Error::config(key, "repeated key"));
            }
            cfg.set(key, value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies `UVREC_<KEY>` overrides from `vars` and revalidates.
    /// Variables with the prefix but no matching key are errors.
    pub fn apply_env<I, K, V>(&mut self, vars: I) -> Result<()>
    where
        I: IntoIterator<Item = (K, V)>,
        K: AsRef<str>,
        V: AsRef<str>,
    {
        for (k, v) in vars {
            if let Some(key) = k.as_ref().strip_prefix(ENV_PREFIX) {
                self.set(&key.to_ascii_lowercase(), v.as_ref())
                    .map_err(|e| match e {
                        Error::Config { field, reason } => Error::config(format!("{}{}", ENV_PREFIX, field.to_ascii_uppercase()), reason),
                        other => other,
                    })?;
            }
        }
        self.validate()
    }

    /// Reads `path` and applies overrides from the process environment.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).at(path)?;
        let mut cfg = Self::parse(&text)?;
        cfg.apply_env(std::env::vars())?;
        Ok(cfg)
    }

    /// Canonical file form; [`ExperimentConfig::parse`] inverts it exactly.
    pub fn to_text(&self) -> String {
        let mut out = String::from("# uvrec experiment config\n");
        for key in Self::KEYS {
            let value = self.get(key).expect("listed key");
            out.push_str(&format!("{key} = {value}\n"));
        }
        out
    }

    /// Hex SHA-256 of the canonical file form.
    pub fn hash(&self) -> String {
        hex_digest(self.to_text().as_bytes())
    }

    pub fn validate(&self) -> Result<()> {
        for (key, v) in [("train", self.train), ("test", self.test), ("epochs", self.epochs), ("seeds", self.seeds)] {
            if v == 0 {
                return Err(Error::config(key, "must be at least 1"));
            }
        }
        if self.kinds.is_empty() {
            return Err(Error::config("kinds", "must list at least one kind"));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction <= 1.0) {
            return Err(Error::config("train_fraction", "must be in (0, 1]"));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::config("noise_sigma", "must be finite and non-negative"));
        }
        if self.hours == 0 || !(self.hour_span > 0.0 && self.hour_span.is_finite()) {
            return Err(Error::config("hours", "need a positive number of hour angles over a positive span"));
        }
        if !(self.lr > 0.0) || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0) {
            return Err(Error::config("lr", "optimizer settings out of range"));
        }
        if !(self.clean_gain > 0.0 && self.clean_gain <= 1.0) {
            return Err(Error::config("clean_gain", "must be in (0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.clean_threshold) {
            return Err(Error::config("clean_threshold", "must be in [0, 1]"));
        }
        for (key, s) in [("survey", &self.survey), ("subject", &self.subject)] {
            if s.trim() != s || s.contains(['\n', '\r']) {
                return Err(Error::config(key, "must be a single trimmed line"));
            }
        }
        self.model_config().validate()?;
        Ok(())
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            n: self.n,
            image: ImageFormConfig {
                channels: self.channels,
                kernel_1d: self.kernel_1d,
                kernel_2d: self.kernel_2d,
            },
            query: QueryEncoderConfig {
                tokens: TokenConfig {
                    frequencies: self.token_frequencies,
                    position_codes: self.token_position_codes,
                    conjugate_tokens: self.conjugate_tokens,
                },
                d_model: self.d_model,
                heads: self.heads,
                layers: self.encoder_layers,
                ff_dim: self.ff_dim,
                query_tokens: self.query_tokens,
            },
            patch: self.patch,
            text_tokens: self.text_tokens,
            vocab: self.vocab,
            field: FieldConfig {
                depth: self.field_depth,
                width: self.field_width,
                frequencies: self.field_frequencies,
            },
            arm: self.arm,
            encoder_seed: self.encoder_seed,
        }
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            adam: AdamConfig {
                lr: self.lr,
                beta1: self.beta1,
                beta2: self.beta2,
                eps: self.eps,
            },
            seed,
            train_fraction: self.train_fraction,
        }
    }

    pub fn array_config(&self) -> ArrayConfig {
        match self.array {
            ArrayLayout::EhtLike => ArrayConfig::eht_like(self.hours, self.hour_span),
        }
    }

    pub fn clean_config(&self) -> CleanConfig {
        CleanConfig {
            gain: self.clean_gain,
            max_iter: self.clean_max_iter,
            threshold: self.clean_threshold,
        }
    }

    pub fn dataset_meta(&self) -> DatasetMeta {
        DatasetMeta {
            name: self.survey.clone(),
            subject: self.subject.clone(),
        }
    }

    /// The seeds used by comparative runs.
    pub fn seed_list(&self) -> Vec<u64> {
        (0..self.seeds as u64).map(|i| self.seed.wrapping_add(i)).collect()
    }
}

pub fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}
