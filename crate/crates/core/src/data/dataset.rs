//! Synthetic coarse-predictor / fine-precipitation pairs.
//!
//! Each time step draws a latent fine-grid weather state
//!
//! ```text
//! L = regime_weight·r + large_scale_weight·G + pattern_weight·P
//! ```
//!
//! where `r ~ N(0, 1)` is a domain-wide wetness regime, `G` a long-range
//! random field and `P` a short-range random field. Precipitation is
//! `expm1(intensity·max(L − wet_offset, 0))`: exactly zero where the state is
//! below the offset, heavy-tailed above it.
//!
//! The predictors see only the coarse-resolvable part `r, G`: each of the `C`
//! channels is a 4×4 block mean of a smooth, channel-specific transform of
//! `regime_weight·r + large_scale_weight·G`, plus channel-specific correlated
//! noise. The short-range pattern `P` is invisible to them, so a predictor
//! stack determines the day's intensity and broad shape but leaves the
//! fine-scale arrangement of rain undetermined.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::grf::generate_gaussian_random_field;
use super::standardize::{compute_standardization, standardize_predictors, StandardizationStats};
use crate::error::{Error, Result};
use crate::rng::RandomStream;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Fine cells per coarse cell along each axis (2° → 0.5°).
pub const SCALE_FACTOR: usize = 4;

/// Fraction of the time axis used for training.
pub const TRAIN_FRACTION: f64 = 0.8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_times: usize,
    pub channels: usize,
    pub coarse_height: usize,
    pub coarse_width: usize,
    /// Correlation length (fine cells) of the predictor-invisible pattern `P`.
    pub pattern_length: f64,
    /// Correlation length (fine cells) of the predictor-visible field `G`.
    pub large_scale_length: f64,
    pub regime_weight: f64,
    pub large_scale_weight: f64,
    pub pattern_weight: f64,
    /// Latent level below which a cell is dry; controls the zero fraction.
    pub wet_offset: f64,
    /// Slope of the log1p-precipitation in the latent state.
    pub intensity: f64,
    pub predictor_noise: f64,
    /// Correlation length (coarse cells) of the predictor noise.
    pub predictor_noise_length: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_times: 2000,
            channels: 20,
            coarse_height: 8,
            coarse_width: 8,
            pattern_length: 2.0,
            large_scale_length: 6.0,
            regime_weight: 1.0,
            large_scale_weight: 0.35,
            pattern_weight: 1.0,
            wet_offset: 0.0,
            intensity: 1.2,
            predictor_noise: 0.3,
            predictor_noise_length: 1.0,
        }
    }
}

impl SynthConfig {
    pub fn fine_height(&self) -> usize {
        self.coarse_height * SCALE_FACTOR
    }

    pub fn fine_width(&self) -> usize {
        self.coarse_width * SCALE_FACTOR
    }

    pub fn split_index(&self) -> usize {
        (TRAIN_FRACTION * self.n_times as f64).floor() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.n_times < 2 {
            return fail("n_times must be at least 2");
        }
        let split = self.split_index();
        if split == 0 || split >= self.n_times {
            return fail("n_times too small for a train/test split");
        }
        if self.channels == 0 || self.coarse_height == 0 || self.coarse_width == 0 {
            return fail("channels and coarse extents must be positive");
        }
        let nonneg = [
            ("pattern_length", self.pattern_length),
            ("large_scale_length", self.large_scale_length),
            ("regime_weight", self.regime_weight),
            ("large_scale_weight", self.large_scale_weight),
            ("pattern_weight", self.pattern_weight),
            ("predictor_noise", self.predictor_noise),
            ("predictor_noise_length", self.predictor_noise_length),
        ];
        for (name, v) in nonneg {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if !(self.intensity.is_finite() && self.intensity > 0.0) {
            return fail("intensity must be > 0");
        }
        if !self.wet_offset.is_finite() {
            return fail("wet_offset must be finite");
        }
        Ok(())
    }
}

/// Predictor/predictand pairs with a chronological split.
#[derive(Clone, Debug, PartialEq)]
pub struct DownscalingDataset<T = f32> {
    /// `[T, C, H_c, W_c]`, standardized with train-slice statistics.
    pub predictors: Tensor<T>,
    /// `[T, H_f, W_f]`, mm/day, `>= 0`.
    pub precip: Tensor<T>,
    /// Times `< split_index` are training, the rest test.
    pub split_index: usize,
    /// JSON document describing how the data was produced.
    pub metadata: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMetadata {
    pub seed: u64,
    pub generator: SynthConfig,
    pub standardization: StandardizationStats,
}

impl<T: Scalar> DownscalingDataset<T> {
    /// Checks shape and split invariants.
    pub fn new(
        predictors: Tensor<T>,
        precip: Tensor<T>,
        split_index: usize,
        metadata: String,
    ) -> Result<Self> {
        const OP: &str = "DownscalingDataset";
        predictors.expect_rank(OP, 4)?;
        precip.expect_rank(OP, 3)?;
        let (t, hc, wc) = (predictors.shape()[0], predictors.shape()[2], predictors.shape()[3]);
        let (ty, hf, wf) = (precip.shape()[0], precip.shape()[1], precip.shape()[2]);
        if t != ty {
            return Err(Error::shape(OP, "time steps", t, ty));
        }
        if hf != SCALE_FACTOR * hc {
            return Err(Error::shape(OP, "fine height", SCALE_FACTOR * hc, hf));
        }
        if wf != SCALE_FACTOR * wc {
            return Err(Error::shape(OP, "fine width", SCALE_FACTOR * wc, wf));
        }
        if split_index == 0 || split_index >= t {
            return Err(Error::shape(OP, "split index", format!("in 1..{t}"), split_index));
        }
        if precip.data().iter().any(|&v| !(v >= T::zero())) {
            return Err(Error::domain(OP, "precipitation must be non-negative"));
        }
        Ok(Self {
            predictors,
            precip,
            split_index,
            metadata,
        })
    }

    pub fn n_times(&self) -> usize {
        self.predictors.shape()[0]
    }

    pub fn channels(&self) -> usize {
        self.predictors.shape()[1]
    }

    /// `(H_c, W_c)`
    pub fn coarse_extent(&self) -> (usize, usize) {
        (self.predictors.shape()[2], self.predictors.shape()[3])
    }

    /// `(H_f, W_f)`
    pub fn fine_extent(&self) -> (usize, usize) {
        (self.precip.shape()[1], self.precip.shape()[2])
    }

    pub fn train_range(&self) -> std::ops::Range<usize> {
        0..self.split_index
    }

    pub fn test_range(&self) -> std::ops::Range<usize> {
        self.split_index..self.n_times()
    }

    /// Predictor stack `[C, H_c, W_c]` at time `t`.
    pub fn predictors_at(&self, t: usize) -> Tensor<T> {
        self.predictors.slice_outer(t).expect("time index in range")
    }

    /// Precipitation field `[H_f, W_f]` at time `t`.
    pub fn precip_at(&self, t: usize) -> Tensor<T> {
        self.precip.slice_outer(t).expect("time index in range")
    }

    pub fn parsed_metadata(&self) -> Option<DatasetMetadata> {
        serde_json::from_str(&self.metadata).ok()
    }
}

/// Mean over non-overlapping `factor × factor` blocks of an `[H, W]` field.
pub fn coarsen(field: &[f64], height: usize, width: usize, factor: usize) -> Vec<f64> {
    let (h, w) = (height / factor, width / factor);
    let mut out = vec![0.0; h * w];
    for y in 0..height {
        for x in 0..width {
            out[(y / factor) * w + x / factor] += field[y * width + x];
        }
    }
    let norm = (factor * factor) as f64;
    out.iter_mut().for_each(|v| *v /= norm);
    out
}

/// Channel-specific smooth transform `a·tanh(b·v + c) + d·v`.
#[derive(Clone, Copy, Debug)]
struct ChannelTransform {
    a: f64,
    b: f64,
    c: f64,
    d: f64,
}

impl ChannelTransform {
    fn draw<R: Rng>(rng: &mut R) -> Self {
        let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
        Self {
            a: sign * rng.random_range(0.5..1.5),
            b: rng.random_range(0.3..1.2),
            c: rng.random_range(-0.5..0.5),
            d: rng.random_range(-0.5..0.5),
        }
    }

    fn apply(&self, v: f64) -> f64 {
        self.a * (self.b * v + self.c).tanh() + self.d * v
    }
}

struct Step {
    predictors: Vec<f64>,
    precip: Vec<f64>,
}

fn generate_step(cfg: &SynthConfig, transforms: &[ChannelTransform], stream: &RandomStream) -> Step {
    let (hf, wf) = (cfg.fine_height(), cfg.fine_width());
    let (hc, wc) = (cfg.coarse_height, cfg.coarse_width);
    let regime: f64 = stream.named("regime").rng().sample(StandardNormal);
    let large: Tensor<f64> =
        generate_gaussian_random_field(hf, wf, cfg.large_scale_length, &stream.named("large"));
    let pattern: Tensor<f64> =
        generate_gaussian_random_field(hf, wf, cfg.pattern_length, &stream.named("pattern"));

    let visible: Vec<f64> = large
        .data()
        .iter()
        .map(|g| cfg.regime_weight * regime + cfg.large_scale_weight * g)
        .collect();
    let precip = visible
        .iter()
        .zip(pattern.data())
        .map(|(v, p)| {
            let excess = (v + cfg.pattern_weight * p - cfg.wet_offset).max(0.0);
            if excess > 0.0 {
                (cfg.intensity * excess).exp_m1()
            } else {
                0.0
            }
        })
        .collect();

    let mut predictors = Vec::with_capacity(cfg.channels * hc * wc);
    for (c, tr) in transforms.iter().enumerate() {
        let transformed: Vec<f64> = visible.iter().map(|&v| tr.apply(v)).collect();
        let coarse = coarsen(&transformed, hf, wf, SCALE_FACTOR);
        let noise: Tensor<f64> = generate_gaussian_random_field(
            hc,
            wc,
            cfg.predictor_noise_length,
            &stream.named("noise").substream(c as u64),
        );
        predictors.extend(
            coarse
                .iter()
                .zip(noise.data())
                .map(|(v, n)| v + cfg.predictor_noise * n),
        );
    }
    Step { predictors, precip }
}

/// Generates the full dataset; predictors are standardized with train-slice statistics.
pub fn generate_dataset<T: Scalar>(cfg: &SynthConfig, stream: &RandomStream) -> Result<DownscalingDataset<T>> {
    cfg.validate()?;
    let mut trng = stream.named("channels").rng();
    let transforms: Vec<_> = (0..cfg.channels)
        .map(|_| ChannelTransform::draw(&mut trng))
        .collect();

    let steps_stream = stream.named("steps");
    let steps: Vec<Step> = (0..cfg.n_times)
        .into_par_iter()
        .map(|t| generate_step(cfg, &transforms, &steps_stream.substream(t as u64)))
        .collect();

    let (hc, wc) = (cfg.coarse_height, cfg.coarse_width);
    let (hf, wf) = (cfg.fine_height(), cfg.fine_width());
    let mut xs = Vec::with_capacity(cfg.n_times * cfg.channels * hc * wc);
    let mut ys = Vec::with_capacity(cfg.n_times * hf * wf);
    for s in &steps {
        xs.extend(s.predictors.iter().map(|&v| T::of(v)));
        ys.extend(s.precip.iter().map(|&v| T::of(v)));
    }
    let raw_x = Tensor::new(&[cfg.n_times, cfg.channels, hc, wc], xs)?;
    let precip = Tensor::new(&[cfg.n_times, hf, wf], ys)?;

    let split = cfg.split_index();
    let stats = compute_standardization(&raw_x, split)?;
    let predictors = standardize_predictors(&raw_x, &stats)?;
    let metadata = serde_json::to_string(&DatasetMetadata {
        seed: stream.seed(),
        generator: cfg.clone(),
        standardization: stats,
    })
    .expect("metadata serializes");
    DownscalingDataset::new(predictors, precip, split, metadata)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            n_times: 50,
            channels: 4,
            coarse_height: 4,
            coarse_width: 4,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn shapes_and_split() {
        let d: DownscalingDataset = generate_dataset(&small(), &RandomStream::new(1)).unwrap();
        assert_eq!(d.predictors.shape(), &[50, 4, 4, 4]);
        assert_eq!(d.precip.shape(), &[50, 16, 16]);
        assert_eq!(d.split_index, 40);
        assert!(d.precip.data().iter().all(|&v| v >= 0.0));
        let meta = d.parsed_metadata().unwrap();
        assert_eq!(meta.seed, 1);
        assert_eq!(meta.generator, small());
    }

    #[test]
    fn deterministic_per_seed() {
        let a: DownscalingDataset = generate_dataset(&small(), &RandomStream::new(9)).unwrap();
        let b: DownscalingDataset = generate_dataset(&small(), &RandomStream::new(9)).unwrap();
        let c: DownscalingDataset = generate_dataset(&small(), &RandomStream::new(10)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.precip, c.precip);
    }

    #[test]
    fn coarsening_constant_is_constant() {
        let f = vec![2.5; 8 * 12];
        let c = coarsen(&f, 8, 12, 4);
        assert_eq!(c.len(), 6);
        assert!(c.iter().all(|&v| (v - 2.5).abs() < 1e-15));
    }

    #[test]
    fn coarsening_averages_blocks() {
        let f: Vec<f64> = (0..16).map(|i| i as f64).collect();
        let c = coarsen(&f, 4, 4, 2);
        assert_eq!(c, vec![2.5, 4.5, 10.5, 12.5]);
    }

    #[test]
    fn invalid_config_rejected() {
        let bad = SynthConfig {
            n_times: 1,
            ..small()
        };
        assert!(matches!(
            generate_dataset::<f32>(&bad, &RandomStream::new(0)),
            Err(Error::Config(_))
        ));
        let bad = SynthConfig {
            intensity: 0.0,
            ..small()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn dataset_constructor_checks_scale_gap() {
        let x = Tensor::<f32>::zeros(&[4, 1, 2, 2]);
        let y = Tensor::<f32>::zeros(&[4, 6, 8]);
        assert!(DownscalingDataset::new(x.clone(), y, 2, String::new()).is_err());
        let y = Tensor::<f32>::zeros(&[4, 8, 8]);
        assert!(DownscalingDataset::new(x.clone(), y.clone(), 4, String::new()).is_err());
        assert!(DownscalingDataset::new(x, y, 3, String::new()).is_ok());
    }
}
