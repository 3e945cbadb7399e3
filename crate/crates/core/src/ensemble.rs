//! Either trained model behind one interface, and ensemble generation over
//! a dataset's test slice.

use rayon::prelude::*;

use crate::baseline::{sample_bg_field, Baseline};
use crate::cvae::Cvae;
use crate::data::DownscalingDataset;
use crate::error::{Error, Result};
use crate::io::{Checkpoint, ModelKind, SampleMetadata, SampleSet};
use crate::rng::RandomStream;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub enum Model<T = f32> {
    Cvae(Cvae<T>),
    Baseline(Baseline<T>),
}

impl<T: Scalar> Model<T> {
    pub fn kind(&self) -> ModelKind {
        match self {
            Model::Cvae(_) => ModelKind::Cvae,
            Model::Baseline(_) => ModelKind::Baseline,
        }
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        match self {
            Model::Cvae(m) => Checkpoint::from_cvae(m),
            Model::Baseline(m) => Checkpoint::from_baseline(m),
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        match ck.model_kind() {
            Some(ModelKind::Cvae) => Ok(Model::Cvae(ck.to_cvae()?)),
            Some(ModelKind::Baseline) => Ok(Model::Baseline(ck.to_baseline()?)),
            None => Err(Error::Format {
                file: "CKPT",
                field: "architecture tensor".into(),
            }),
        }
    }

    /// `(C, H_c, W_c)` the model was built for.
    pub fn predictor_shape(&self) -> (usize, usize, usize) {
        match self {
            Model::Cvae(m) => (m.arch.channels, m.arch.coarse_height, m.arch.coarse_width),
            Model::Baseline(m) => (m.arch.channels, m.arch.coarse_height, m.arch.coarse_width),
        }
    }

    pub fn check_dataset(&self, data: &DownscalingDataset<T>) -> Result<()> {
        let want = self.predictor_shape();
        let (hc, wc) = data.coarse_extent();
        let got = (data.channels(), hc, wc);
        if want != got {
            return Err(Error::shape(
                "checkpoint vs dataset",
                "predictor shape (C, H_c, W_c)",
                format!("{want:?}"),
                format!("{got:?}"),
            ));
        }
        Ok(())
    }

    /// `n` fields for one predictor stack; member `i` uses `stream.substream(i)`.
    pub fn sample(&self, x: &Tensor<T>, n: usize, stream: &RandomStream) -> Result<Vec<Tensor<T>>> {
        match self {
            Model::Cvae(m) => m.sample_downscaled(x, n, stream),
            Model::Baseline(m) => {
                if n == 0 {
                    return Err(Error::domain("sample", "ensemble size must be >= 1"));
                }
                let field = m.bg_forward(x)?;
                Ok((0..n as u64)
                    .map(|i| sample_bg_field(&field, &stream.substream(i)))
                    .collect())
            }
        }
    }
}

/// Draws `n` members for every test day. Day `t` uses the substream `t` of
/// the seed, so the result does not depend on thread scheduling.
pub fn sample_test_slice<T: Scalar>(
    model: &Model<T>,
    data: &DownscalingDataset<T>,
    n: usize,
    seed: u64,
) -> Result<SampleSet<T>> {
    model.check_dataset(data)?;
    let root = RandomStream::new(seed);
    let test = data.test_range();
    let days: Vec<Tensor<T>> = test
        .clone()
        .into_par_iter()
        .map(|t| {
            let members = model.sample(&data.predictors_at(t), n, &root.substream(t as u64))?;
            Tensor::stack(&members)
        })
        .collect::<Result<_>>()?;
    let meta = SampleMetadata {
        model: model.kind().name().to_string(),
        ensemble_size: n,
        seed,
    };
    SampleSet::new(Tensor::stack(&days)?, test.start, meta)
}
