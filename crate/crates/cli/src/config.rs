//! Flat `key = value` run configuration. Lines starting with `#` and blank
//! lines are ignored; unknown keys and out-of-range values are rejected.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use downscaler_core::baseline::BaselineArch;
use downscaler_core::cvae::CvaeArch;
use downscaler_core::data::SynthConfig;
use downscaler_core::eval::EvalConfig;
use downscaler_core::nn::AdamConfig;
use downscaler_core::train::TrainConfig;
use downscaler_core::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub synth: SynthConfig,
    pub latent_dim: usize,
    pub embedding_dim: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub baseline_lr: f64,
    pub kl_warmup_fraction: f64,
    pub train_seed: u64,
    pub wet_threshold: f64,
    pub ensemble_size: usize,
    pub max_lag: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let train = TrainConfig::default();
        let arch = CvaeArch::default();
        Self {
            seed: 2024,
            synth: SynthConfig::default(),
            latent_dim: arch.latent_dim,
            embedding_dim: arch.embedding_dim,
            epochs: train.epochs,
            batch_size: train.batch_size,
            lr: train.adam.lr,
            baseline_lr: train.adam.lr,
            kl_warmup_fraction: train.kl_warmup_fraction,
            train_seed: train.seed,
            wet_threshold: EvalConfig::default().wet_threshold,
            ensemble_size: 20,
            max_lag: EvalConfig::default().max_lag,
        }
    }
}

/// Parses `raw` and checks it lies in `lo..=hi`.
fn ranged<V>(key: &str, raw: &str, lo: V, hi: V) -> Result<V>
where
    V: FromStr + PartialOrd + std::fmt::Display + Copy,
{
    let v: V = raw
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {raw:?}")))?;
    if !(v >= lo && v <= hi) {
        return Err(Error::Config(format!("{key} = {v} outside [{lo}, {hi}]")));
    }
    Ok(v)
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", no + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            if entries.insert(k.to_string(), v.to_string()).is_some() {
                return Err(Error::Config(format!("line {}: duplicate key {k}", no + 1)));
            }
        }
        let mut c = Self::default();
        for (k, v) in &entries {
            let v = v.as_str();
            let s = &mut c.synth;
            match k.as_str() {
                "seed" => c.seed = ranged(k, v, 0, u64::MAX)?,
                "n_times" => s.n_times = ranged(k, v, 10, 1_000_000)?,
                "channels" => s.channels = ranged(k, v, 1, 1024)?,
                "coarse_height" => s.coarse_height = ranged(k, v, 1, 256)?,
                "coarse_width" => s.coarse_width = ranged(k, v, 1, 256)?,
                "pattern_length" => s.pattern_length = ranged(k, v, 0.0, 64.0)?,
                "large_scale_length" => s.large_scale_length = ranged(k, v, 0.0, 256.0)?,
                "regime_weight" => s.regime_weight = ranged(k, v, 0.0, 10.0)?,
                "large_scale_weight" => s.large_scale_weight = ranged(k, v, 0.0, 10.0)?,
                "pattern_weight" => s.pattern_weight = ranged(k, v, 0.0, 10.0)?,
                "wet_offset" => s.wet_offset = ranged(k, v, -10.0, 10.0)?,
                "intensity" => s.intensity = ranged(k, v, 0.01, 10.0)?,
                "predictor_noise" => s.predictor_noise = ranged(k, v, 0.0, 10.0)?,
                "predictor_noise_length" => s.predictor_noise_length = ranged(k, v, 0.0, 64.0)?,
                "latent_dim" => c.latent_dim = ranged(k, v, 1, 4096)?,
                "embedding_dim" => c.embedding_dim = ranged(k, v, 1, 4096)?,
                "epochs" => c.epochs = ranged(k, v, 1, 100_000)?,
                "batch_size" => c.batch_size = ranged(k, v, 1, 1_000_000)?,
                "lr" => c.lr = ranged(k, v, 1e-12, 1.0)?,
                "baseline_lr" => c.baseline_lr = ranged(k, v, 1e-12, 1.0)?,
                "kl_warmup_fraction" => c.kl_warmup_fraction = ranged(k, v, 0.0, 1.0)?,
                "train_seed" => c.train_seed = ranged(k, v, 0, u64::MAX)?,
                "wet_threshold" => c.wet_threshold = ranged(k, v, 1e-6, 1000.0)?,
                "ensemble_size" => c.ensemble_size = ranged(k, v, 1, 100_000)?,
                "max_lag" => c.max_lag = ranged(k, v, 1, 1024)?,
                _ => return Err(Error::Config(format!("unknown key `{k}`"))),
            }
        }
        c.synth.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn load_or_default(path: Option<&Path>) -> Result<Self> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    pub fn cvae_train(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            adam: AdamConfig::with_lr(self.lr),
            seed: self.train_seed,
            kl_warmup_fraction: self.kl_warmup_fraction,
        }
    }

    pub fn baseline_train(&self) -> TrainConfig {
        TrainConfig {
            adam: AdamConfig::with_lr(self.baseline_lr),
            ..self.cvae_train()
        }
    }

    /// Architecture for predictors of shape `(C, H_c, W_c)`.
    pub fn cvae_arch(&self, channels: usize, hc: usize, wc: usize) -> CvaeArch {
        CvaeArch {
            channels,
            coarse_height: hc,
            coarse_width: wc,
            embedding_dim: self.embedding_dim,
            latent_dim: self.latent_dim,
            ..CvaeArch::default()
        }
    }

    pub fn baseline_arch(&self, channels: usize, hc: usize, wc: usize) -> BaselineArch {
        BaselineArch {
            channels,
            coarse_height: hc,
            coarse_width: wc,
            ..BaselineArch::default()
        }
    }

    pub fn eval(&self) -> EvalConfig {
        EvalConfig {
            wet_threshold: self.wet_threshold,
            max_lag: self.max_lag,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_is_default() {
        assert_eq!(RunConfig::parse("# nothing\n\n").unwrap(), RunConfig::default());
    }

    #[test]
    fn values_and_comments() {
        let c = RunConfig::parse("seed = 7\n  # comment\nepochs=3\nlr = 1e-3\nn_times = 50\n").unwrap();
        assert_eq!((c.seed, c.epochs, c.lr, c.synth.n_times), (7, 3, 1e-3, 50));
    }

    #[test]
    fn unknown_key_named() {
        let err = RunConfig::parse("epochz = 3").unwrap_err().to_string();
        assert!(err.contains("epochz"), "{err}");
    }

    #[test]
    fn range_and_syntax_errors() {
        assert!(RunConfig::parse("epochs = 0").is_err());
        assert!(RunConfig::parse("lr = -1").is_err());
        assert!(RunConfig::parse("lr = abc").is_err());
        assert!(RunConfig::parse("seed 4").is_err());
        assert!(RunConfig::parse("seed = 1\nseed = 2").is_err());
        assert!(RunConfig::parse("kl_warmup_fraction = 1.5").is_err());
    }
}
