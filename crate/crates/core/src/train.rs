//! Minibatch loop shared by both models.
//!
//! Per-sample gradients are accumulated in fixed-size chunks; chunks may run
//! on any thread, but their partial sums are always added in chunk order, so
//! results are bit-identical for any thread count.

use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::nn::{adam_update, AdamConfig, AdamState};
use crate::rng::RandomStream;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Samples per reduction chunk; part of the determinism contract.
pub const REDUCTION_CHUNK: usize = 8;

/// Loss components averaged over one epoch.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EpochLoss {
    pub total: f64,
    pub recon: f64,
    pub kl: f64,
}

impl std::ops::AddAssign for EpochLoss {
    fn add_assign(&mut self, o: Self) {
        self.total += o.total;
        self.recon += o.recon;
        self.kl += o.kl;
    }
}

impl EpochLoss {
    fn scaled(self, f: f64) -> Self {
        Self {
            total: self.total * f,
            recon: self.recon * f,
            kl: self.kl * f,
        }
    }

    fn is_finite(&self) -> bool {
        self.total.is_finite() && self.recon.is_finite() && self.kl.is_finite()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Fraction of epochs over which the KL weight ramps linearly from 0 to 1.
    pub kl_warmup_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 64,
            adam: AdamConfig::default(),
            seed: 1234,
            kl_warmup_fraction: 0.2,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.kl_warmup_fraction) {
            return Err(Error::Config("kl_warmup_fraction must lie in [0, 1]".into()));
        }
        self.adam.validate().map_err(|e| Error::Config(e.to_string()))
    }

    /// KL weight for `epoch` (0-based): `min(1, epoch / warm-up epochs)`.
    pub fn kl_weight(&self, epoch: usize) -> f64 {
        let warm = (self.kl_warmup_fraction * self.epochs as f64).ceil();
        if warm <= 0.0 {
            1.0
        } else {
            (epoch as f64 / warm).min(1.0)
        }
    }
}

/// A model whose parameters are a flat list of tensors.
pub trait Parameterized<T: Scalar> {
    fn parameters(&self) -> Vec<&Tensor<T>>;
    fn parameters_mut(&mut self) -> Vec<&mut Tensor<T>>;
    fn parameter_names(&self) -> Vec<String>;

    fn zero_grads(&self) -> Vec<Tensor<T>> {
        self.parameters().into_iter().map(Tensor::zeros_like).collect()
    }
}

/// Where a training step failed.
#[derive(Clone, Copy, Debug)]
pub struct StepContext {
    pub epoch: usize,
    pub batch: usize,
}

/// Mean gradient and mean loss over `indices`.
///
/// `sample` must add one sample's loss gradient into the buffer and return
/// its loss components.
pub fn batch_gradient<T, M, F>(
    model: &M,
    indices: &[usize],
    sample: F,
) -> Result<(Vec<Tensor<T>>, EpochLoss)>
where
    T: Scalar,
    M: Parameterized<T> + Sync,
    F: Fn(usize, &mut [Tensor<T>]) -> Result<EpochLoss> + Sync,
{
    let partials: Vec<Result<(Vec<Tensor<T>>, EpochLoss)>> = indices
        .par_chunks(REDUCTION_CHUNK)
        .map(|chunk| {
            let mut grads = model.zero_grads();
            let mut loss = EpochLoss::default();
            for &i in chunk {
                loss += sample(i, &mut grads)?;
            }
            Ok((grads, loss))
        })
        .collect();

    let mut total_grads: Option<Vec<Tensor<T>>> = None;
    let mut total_loss = EpochLoss::default();
    for part in partials {
        let (g, l) = part?;
        total_loss += l;
        match total_grads.as_mut() {
            None => total_grads = Some(g),
            Some(acc) => {
                for (a, b) in acc.iter_mut().zip(&g) {
                    a.add_assign(b)?;
                }
            }
        }
    }
    let mut grads = total_grads.unwrap_or_else(|| model.zero_grads());
    let inv = 1.0 / indices.len().max(1) as f64;
    grads.iter_mut().for_each(|g| g.scale_in_place(T::of(inv)));
    Ok((grads, total_loss.scaled(inv)))
}

/// Shuffled minibatch Adam over `train_indices`; returns the per-epoch mean losses.
///
/// `sample(epoch, batch, index, grads)` accumulates one sample's gradient.
pub fn run_training<T, M, F>(
    model: &mut M,
    train_indices: &[usize],
    cfg: &TrainConfig,
    stream: &RandomStream,
    sample: F,
) -> Result<Vec<EpochLoss>>
where
    T: Scalar,
    M: Parameterized<T> + Sync,
    F: Fn(&M, usize, usize, &mut [Tensor<T>]) -> Result<EpochLoss> + Sync,
{
    cfg.validate()?;
    if train_indices.is_empty() {
        return Err(Error::Config("empty training set".into()));
    }
    let mut state = AdamState::new(model.parameters());
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut order = train_indices.to_vec();
    for epoch in 0..cfg.epochs {
        order.copy_from_slice(train_indices);
        order.shuffle(&mut stream.substream(epoch as u64).rng());
        let mut epoch_loss = EpochLoss::default();
        let mut batches = 0usize;
        for (batch, idx) in order.chunks(cfg.batch_size).enumerate() {
            let ctx = StepContext { epoch, batch };
            let m: &M = model;
            let (grads, loss) = batch_gradient(m, idx, |i, g| sample(m, epoch, i, g))
                .map_err(|e| at(ctx, e))?;
            if !loss.is_finite() {
                return Err(Error::NonFinite {
                    context: format!("training loss at epoch {epoch}, batch {batch}"),
                });
            }
            let mut params = model.parameters_mut();
            adam_update(&mut params, &grads, &mut state, &cfg.adam).map_err(|e| at(ctx, e))?;
            epoch_loss += loss;
            batches += 1;
        }
        history.push(epoch_loss.scaled(1.0 / batches as f64));
    }
    Ok(history)
}

fn at(ctx: StepContext, e: Error) -> Error {
    match e {
        Error::NonFinite { context } => Error::NonFinite {
            context: format!("{context} (epoch {}, batch {})", ctx.epoch, ctx.batch),
        },
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Quad {
        w: Tensor<f64>,
    }

    impl Parameterized<f64> for Quad {
        fn parameters(&self) -> Vec<&Tensor<f64>> {
            vec![&self.w]
        }
        fn parameters_mut(&mut self) -> Vec<&mut Tensor<f64>> {
            vec![&mut self.w]
        }
        fn parameter_names(&self) -> Vec<String> {
            vec!["w".into()]
        }
    }

    fn fit(cfg: &TrainConfig) -> (Quad, Vec<EpochLoss>) {
        // least squares towards targets t_i = i
        let mut q = Quad {
            w: Tensor::from_vec(vec![0.0]),
        };
        let idx: Vec<usize> = (0..20).collect();
        let h = run_training(&mut q, &idx, cfg, &RandomStream::new(1), |m, _, i, g| {
            let r = m.w.data()[0] - (i as f64) / 10.0;
            g[0].data_mut()[0] += 2.0 * r;
            Ok(EpochLoss {
                total: r * r,
                recon: r * r,
                kl: 0.0,
            })
        })
        .unwrap();
        (q, h)
    }

    #[test]
    fn converges_and_records_history() {
        let cfg = TrainConfig {
            epochs: 30,
            batch_size: 6,
            adam: AdamConfig::with_lr(0.05),
            ..TrainConfig::default()
        };
        let (q, h) = fit(&cfg);
        assert_eq!(h.len(), 30);
        assert!(h.last().unwrap().total < h[0].total);
        assert!((q.w.data()[0] - 0.95).abs() < 0.1, "{:?}", q.w);
    }

    #[test]
    fn reduction_is_deterministic() {
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 7,
            adam: AdamConfig::with_lr(0.01),
            ..TrainConfig::default()
        };
        assert_eq!(fit(&cfg).0.w, fit(&cfg).0.w);
    }

    #[test]
    fn kl_weight_warms_up_linearly() {
        let cfg = TrainConfig {
            epochs: 10,
            kl_warmup_fraction: 0.2,
            ..TrainConfig::default()
        };
        assert_eq!(cfg.kl_weight(0), 0.0);
        assert_eq!(cfg.kl_weight(1), 0.5);
        assert_eq!(cfg.kl_weight(2), 1.0);
        assert_eq!(cfg.kl_weight(9), 1.0);
        let none = TrainConfig {
            kl_warmup_fraction: 0.0,
            ..cfg
        };
        assert_eq!(none.kl_weight(0), 1.0);
    }

    #[test]
    fn non_finite_loss_names_epoch_and_batch() {
        let mut q = Quad {
            w: Tensor::from_vec(vec![0.0]),
        };
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 4,
            ..TrainConfig::default()
        };
        let err = run_training(&mut q, &[0, 1, 2, 3], &cfg, &RandomStream::new(0), |_, e, _, _| {
            Ok(EpochLoss {
                total: if e == 1 { f64::NAN } else { 1.0 },
                ..EpochLoss::default()
            })
        })
        .unwrap_err();
        assert!(err.to_string().contains("epoch 1, batch 0"), "{err}");
    }
}
