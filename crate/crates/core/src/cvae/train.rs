use super::loss::ElboExample;
use super::model::{standard_normal, Cvae, CvaeArch};
use crate::data::DownscalingDataset;
use crate::error::{Error, Result};
use crate::rng::RandomStream;
use crate::scalar::Scalar;
use crate::train::{run_training, EpochLoss, TrainConfig};

/// Fits a CVAE on the training slice of `data` by minibatch Adam on the
/// ELBO, with the KL weight warmed up linearly over the first epochs.
///
/// Fully determined by `cfg.seed`: initialization, shuffling and the
/// reparameterization noise all come from substreams of it.
pub fn train_cvae<T: Scalar>(
    data: &DownscalingDataset<T>,
    arch: CvaeArch,
    cfg: &TrainConfig,
) -> Result<(Cvae<T>, Vec<EpochLoss>)> {
    cfg.validate()?;
    check_compatible(data, &arch)?;
    let root = RandomStream::new(cfg.seed);
    let mut model = Cvae::init(arch, &root.named("init"))?;

    let train: Vec<usize> = data.train_range().collect();
    let xs: Vec<_> = train.iter().map(|&t| data.predictors_at(t)).collect();
    let ys: Vec<_> = train.iter().map(|&t| data.precip_at(t)).collect();
    let positions: Vec<usize> = (0..train.len()).collect();
    let noise = root.named("eps");
    let latent_dim = model.arch.latent_dim;

    let history = run_training(
        &mut model,
        &positions,
        cfg,
        &root.named("shuffle"),
        |m, epoch, i, grads| {
            let eps = standard_normal(latent_dim, &noise.substream(epoch as u64).substream(i as u64));
            let ex = ElboExample {
                predictors: &xs[i],
                precip: &ys[i],
                eps: &eps,
                beta_kl: cfg.kl_weight(epoch),
            };
            m.elbo_backward(&ex, grads)
        },
    )?;
    Ok((model, history))
}

pub(crate) fn check_compatible<T: Scalar>(data: &DownscalingDataset<T>, arch: &CvaeArch) -> Result<()> {
    let want = (arch.channels, arch.coarse_height, arch.coarse_width);
    let (hc, wc) = data.coarse_extent();
    let got = (data.channels(), hc, wc);
    if want != got {
        return Err(Error::shape(
            "train_cvae",
            "predictor shape (C, H_c, W_c)",
            format!("{want:?}"),
            format!("{got:?}"),
        ));
    }
    Ok(())
}
