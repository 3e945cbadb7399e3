use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Per-channel mean and standard deviation of a `[T, C, H, W]` predictor block.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StandardizationStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Statistics over the first `train_len` time steps of `x` only.
pub fn compute_standardization<T: Scalar>(
    x: &Tensor<T>,
    train_len: usize,
) -> Result<StandardizationStats> {
    x.expect_rank("compute_standardization", 4)?;
    let train = x.slice_outer_range(0..train_len)?;
    let (t, c) = (train.shape()[0], train.shape()[1]);
    let plane = train.shape()[2] * train.shape()[3];
    let n = (t * plane) as f64;
    let mut mean = vec![0.0; c];
    let mut std = vec![0.0; c];
    for ch in 0..c {
        let values = (0..t).flat_map(|ti| {
            let o = (ti * c + ch) * plane;
            train.data()[o..o + plane].iter().map(|v| v.as_f64())
        });
        let m = values.clone().sum::<f64>() / n;
        let var = values.map(|v| (v - m) * (v - m)).sum::<f64>() / n;
        if !(var > 0.0) {
            return Err(Error::domain(
                "compute_standardization",
                format!("channel {ch} has zero variance"),
            ));
        }
        mean[ch] = m;
        std[ch] = var.sqrt();
    }
    Ok(StandardizationStats { mean, std })
}

/// `(x − mean_c) / std_c` for every channel `c`.
pub fn standardize_predictors<T: Scalar>(
    x: &Tensor<T>,
    stats: &StandardizationStats,
) -> Result<Tensor<T>> {
    x.expect_rank("standardize_predictors", 4)?;
    let c = x.shape()[1];
    if stats.mean.len() != c || stats.std.len() != c {
        return Err(Error::shape("standardize_predictors", "channels", c, stats.mean.len()));
    }
    let plane = x.shape()[2] * x.shape()[3];
    let mut out = x.clone();
    for (i, v) in out.data_mut().iter_mut().enumerate() {
        let ch = (i / plane) % c;
        *v = T::of((v.as_f64() - stats.mean[ch]) / stats.std[ch]);
    }
    Ok(out)
}
