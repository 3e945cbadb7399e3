use super::model::{Baseline, BaselineArch};
use crate::data::DownscalingDataset;
use crate::error::{Error, Result};
use crate::rng::RandomStream;
use crate::scalar::Scalar;
use crate::train::{run_training, EpochLoss, TrainConfig};

/// Head weights are shrunk by this factor at initialization so the first
/// epochs start close to the training climatology.
const HEAD_WEIGHT_SCALE: f64 = 0.1;

/// Fits the Bernoulli-Gamma baseline on the training slice of `data` by
/// minibatch Adam on the mean per-site NLL.
pub fn train_baseline<T: Scalar>(
    data: &DownscalingDataset<T>,
    arch: BaselineArch,
    cfg: &TrainConfig,
    wet_threshold: f64,
) -> Result<(Baseline<T>, Vec<EpochLoss>)> {
    cfg.validate()?;
    if !(wet_threshold > 0.0 && wet_threshold.is_finite()) {
        return Err(Error::Config(format!("wet_threshold must be > 0, got {wet_threshold}")));
    }
    let want = (arch.channels, arch.coarse_height, arch.coarse_width);
    let (hc, wc) = data.coarse_extent();
    let got = (data.channels(), hc, wc);
    if want != got {
        return Err(Error::shape(
            "train_baseline",
            "predictor shape (C, H_c, W_c)",
            format!("{want:?}"),
            format!("{got:?}"),
        ));
    }
    let root = RandomStream::new(cfg.seed);
    let mut model = Baseline::init(arch, &root.named("init"))?;
    model.init_from_climatology(data, wet_threshold, HEAD_WEIGHT_SCALE)?;

    let train: Vec<usize> = data.train_range().collect();
    let xs: Vec<_> = train.iter().map(|&t| data.predictors_at(t)).collect();
    let ys: Vec<_> = train.iter().map(|&t| data.precip_at(t)).collect();
    let positions: Vec<usize> = (0..train.len()).collect();
    let history = run_training(
        &mut model,
        &positions,
        cfg,
        &root.named("shuffle"),
        |m, _epoch, i, grads| m.nll_backward(&xs[i], &ys[i], wet_threshold, grads),
    )?;
    Ok((model, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_dataset, SynthConfig};
    use crate::nn::AdamConfig;
    use crate::train::Parameterized;

    fn tiny_data() -> DownscalingDataset<f32> {
        let cfg = SynthConfig {
            n_times: 40,
            channels: 3,
            coarse_height: 2,
            coarse_width: 2,
            ..SynthConfig::default()
        };
        generate_dataset(&cfg, &RandomStream::new(2)).unwrap()
    }

    fn tiny_arch() -> BaselineArch {
        BaselineArch {
            channels: 3,
            coarse_height: 2,
            coarse_width: 2,
            conv_widths: vec![4, 2],
        }
    }

    #[test]
    fn loss_decreases_and_is_deterministic() {
        let data = tiny_data();
        let cfg = TrainConfig {
            epochs: 6,
            batch_size: 8,
            adam: AdamConfig::with_lr(3e-3),
            ..TrainConfig::default()
        };
        let (a, ha) = train_baseline(&data, tiny_arch(), &cfg, 1.0).unwrap();
        let (b, hb) = train_baseline(&data, tiny_arch(), &cfg, 1.0).unwrap();
        assert_eq!(ha.len(), 6);
        assert!(ha[5].total < ha[0].total, "{ha:?}");
        assert_eq!(ha, hb);
        assert!(a.parameters().iter().zip(b.parameters()).all(|(x, y)| x == &y));
    }

    #[test]
    fn mismatched_arch_rejected() {
        let data = tiny_data();
        let arch = BaselineArch { channels: 5, ..tiny_arch() };
        assert!(train_baseline(&data, arch, &TrainConfig::default(), 1.0).is_err());
        assert!(train_baseline(&data, tiny_arch(), &TrainConfig::default(), 0.0).is_err());
    }
}
