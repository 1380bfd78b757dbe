//! Flat `key = value` run configuration.
//!
//! One file configures the whole pipeline; the key set mirrors the
//! library's four config structs. Lines starting with `#` and blank
//! lines are skipped. Every key is parsed with its proper type, unknown
//! and duplicated keys are rejected **collectively** — the error lists
//! every offender so a bad file needs only one round trip to fix — and
//! missing keys keep the documented library defaults.

use std::collections::BTreeSet;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use hdrunet_core::data::degrade::DegradationParams;
use hdrunet_core::loss::LossKind;
use hdrunet_core::metrics::MetricConfig;
use hdrunet_core::model::ModelConfig;
use hdrunet_core::nn::ModulationStrategy;
use hdrunet_core::train::TrainConfig;
use hdrunet_core::{Error, Result};

/// Parsed configuration for every subcommand.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub degrade: DegradationParams,
    pub metrics: MetricConfig,
}

/// Every accepted key, in documentation order.
pub const KNOWN_KEYS: [&str; 22] = [
    // model
    "base_channels",
    "n_res_blocks",
    "n_scales",
    "modulation_strategy",
    "weighting_enabled",
    // training
    "batch_size",
    "patch_size",
    "total_iters",
    "loss",
    "seed",
    "eval_every",
    "checkpoint_every",
    "initial_lr",
    "decay_every",
    // degradation
    "exposure_gain",
    "noise_sigma",
    "quant_bits",
    "clip_low",
    "clip_high",
    // metrics
    "mu",
    "percentile",
    "psnr_cap_db",
];

fn parse<T>(key: &str, value: &str) -> Result<T>
where
    T: FromStr,
    T::Err: Display,
{
    value.parse::<T>().map_err(|e| {
        Error::config(format!("key '{key}': cannot parse '{value}': {e}"))
    })
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        other => Err(Error::config(format!(
            "key '{key}': expected 'true' or 'false', got '{other}'"
        ))),
    }
}

impl RunConfig {
    /// Reads and validates a configuration file.
    pub fn from_file(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::MalformedFile {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        RunConfig::from_str_contents(&text)
    }

    /// Parses configuration text. Exposed separately so tests and
    /// defaults don't need the filesystem.
    pub fn from_str_contents(text: &str) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        let mut unknown = Vec::new();
        let mut duplicate = Vec::new();
        let mut seen = BTreeSet::new();

        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::config(format!(
                    "line {}: expected 'key = value', got '{line}'",
                    idx + 1
                )));
            };
            let (key, value) = (key.trim(), value.trim());
            if !KNOWN_KEYS.contains(&key) {
                unknown.push(key.to_string());
                continue;
            }
            if !seen.insert(key.to_string()) {
                duplicate.push(key.to_string());
                continue;
            }
            cfg.apply(key, value)?;
        }

        let mut offenses = Vec::new();
        if !unknown.is_empty() {
            offenses.push(format!("unknown keys: {}", unknown.join(", ")));
        }
        if !duplicate.is_empty() {
            offenses.push(format!("duplicated keys: {}", duplicate.join(", ")));
        }
        if !offenses.is_empty() {
            return Err(Error::config(offenses.join("; ")));
        }

        cfg.validate()?;
        Ok(cfg)
    }

    fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "base_channels" => self.model.base_channels = parse(key, value)?,
            "n_res_blocks" => self.model.n_res_blocks = parse(key, value)?,
            "n_scales" => self.model.n_scales = parse(key, value)?,
            "modulation_strategy" => {
                self.model.modulation = value.parse::<ModulationStrategy>()?
            }
            "weighting_enabled" => self.model.weighting_enabled = parse_bool(key, value)?,
            "batch_size" => self.train.batch_size = parse(key, value)?,
            "patch_size" => self.train.patch_size = parse(key, value)?,
            "total_iters" => self.train.total_iters = parse(key, value)?,
            "loss" => self.train.loss = value.parse::<LossKind>()?,
            "seed" => self.train.seed = parse(key, value)?,
            "eval_every" => self.train.eval_every = parse(key, value)?,
            "checkpoint_every" => self.train.checkpoint_every = parse(key, value)?,
            "initial_lr" => self.train.initial_lr = parse(key, value)?,
            "decay_every" => self.train.decay_every = parse(key, value)?,
            "exposure_gain" => self.degrade.exposure_gain = parse(key, value)?,
            "noise_sigma" => self.degrade.noise_sigma = parse(key, value)?,
            "quant_bits" => self.degrade.quant_bits = parse(key, value)?,
            "clip_low" => self.degrade.clip_low = parse(key, value)?,
            "clip_high" => self.degrade.clip_high = parse(key, value)?,
            "mu" => self.metrics.mu = parse(key, value)?,
            "percentile" => self.metrics.percentile = parse(key, value)?,
            "psnr_cap_db" => self.metrics.psnr_cap_db = parse(key, value)?,
            other => {
                return Err(Error::contract(format!(
                    "apply called with unvetted key '{other}'"
                )))
            }
        }
        Ok(())
    }

    /// Cross-field validation, delegated to each section.
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.degrade.validate()?;
        self.metrics.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_yields_library_defaults() {
        let cfg = RunConfig::from_str_contents("").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.model.base_channels, 64);
        assert_eq!(cfg.train.batch_size, 4);
    }

    #[test]
    fn comments_blanks_and_spacing_are_tolerated() {
        let text = "\n# a comment\n  base_channels = 16 \n\nloss=tanh_l2\n";
        let cfg = RunConfig::from_str_contents(text).unwrap();
        assert_eq!(cfg.model.base_channels, 16);
        assert_eq!(cfg.train.loss, LossKind::TanhL2);
    }

    #[test]
    fn every_documented_key_is_applied() {
        let text = "\
base_channels = 8
n_res_blocks = 2
n_scales = 2
modulation_strategy = spatial_shared
weighting_enabled = false
batch_size = 2
patch_size = 16
total_iters = 10
loss = l2
seed = 42
eval_every = 5
checkpoint_every = 10
initial_lr = 0.001
decay_every = 4
exposure_gain = 2.0
noise_sigma = 0.01
quant_bits = 6
clip_low = 0.0
clip_high = 0.9
mu = 1000
percentile = 95
psnr_cap_db = 80
";
        let cfg = RunConfig::from_str_contents(text).unwrap();
        assert_eq!(cfg.model.modulation, ModulationStrategy::SpatialShared);
        assert!(!cfg.model.weighting_enabled);
        assert_eq!(cfg.train.total_iters, 10);
        assert_eq!(cfg.train.initial_lr, 0.001);
        assert_eq!(cfg.degrade.quant_bits, 6);
        assert_eq!(cfg.metrics.percentile, 95.0);
    }

    #[test]
    fn unknown_keys_are_reported_all_at_once() {
        let text = "base_channels = 8\nbogus = 1\nalso_bogus = 2\n";
        let err = RunConfig::from_str_contents(text).unwrap_err().to_string();
        assert!(err.contains("bogus"), "{err}");
        assert!(err.contains("also_bogus"), "{err}");
    }

    #[test]
    fn duplicated_keys_are_rejected() {
        let text = "seed = 1\nseed = 2\n";
        let err = RunConfig::from_str_contents(text).unwrap_err().to_string();
        assert!(err.contains("duplicated"), "{err}");
        assert!(err.contains("seed"), "{err}");
    }

    #[test]
    fn typed_parse_errors_name_the_key_and_value() {
        let err = RunConfig::from_str_contents("batch_size = many\n")
            .unwrap_err()
            .to_string();
        assert!(err.contains("batch_size"), "{err}");
        assert!(err.contains("many"), "{err}");
    }

    #[test]
    fn lines_without_an_equals_sign_are_rejected_with_position() {
        let err = RunConfig::from_str_contents("# ok\njust words\n")
            .unwrap_err()
            .to_string();
        assert!(err.contains("line 2"), "{err}");
    }

    #[test]
    fn section_validation_still_runs() {
        // 6 is not a multiple of 4, caught by the model's own validate.
        let err = RunConfig::from_str_contents("base_channels = 6\n").unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }
}
