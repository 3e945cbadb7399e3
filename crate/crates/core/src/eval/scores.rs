//! Per-site verification of an ensemble against observed fields.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const QUANTILES: [f64; 3] = [0.5, 0.9, 0.98];

/// One `[H, W]` map per score.
#[derive(Clone, Debug, PartialEq)]
pub struct PerSiteScores {
    /// RMSE of the ensemble mean against the truth.
    pub rmse: Tensor<f64>,
    /// Model wet-day frequency minus observed wet-day frequency.
    pub wet_frequency_bias: Tensor<f64>,
    /// `(q_model − q_truth) / max(q_truth, wet_threshold)` for each entry of
    /// [`QUANTILES`].
    pub quantile_bias: [Tensor<f64>; 3],
}

/// Smallest value whose empirical CDF reaches `q`. Unchanged when the
/// sample is replicated, so a replicated truth scores exactly zero.
pub fn empirical_quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    let k = ((q * n as f64).ceil() as usize).clamp(1, n);
    sorted[k - 1]
}

fn sorted(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v
}

/// `ensembles[t]` holds the members for test day `t`; `truth` is
/// `[T_test, H, W]`.
pub fn per_site_scores<T: Scalar>(
    ensembles: &[Vec<Tensor<T>>],
    truth: &Tensor<T>,
    wet_threshold: f64,
) -> Result<PerSiteScores> {
    const OP: &str = "per_site_scores";
    truth.expect_rank(OP, 3)?;
    let (days, h, w) = (truth.shape()[0], truth.shape()[1], truth.shape()[2]);
    if ensembles.len() != days {
        return Err(Error::shape(OP, "test days", days, ensembles.len()));
    }
    let n = ensembles.first().map_or(0, Vec::len);
    if n == 0 {
        return Err(Error::shape(OP, "ensemble size", ">= 1", 0));
    }
    for members in ensembles {
        if members.len() != n {
            return Err(Error::shape(OP, "ensemble size", n, members.len()));
        }
        for m in members {
            m.expect_shape(OP, &[h, w])?;
        }
    }

    let sites = h * w;
    let mut rmse = vec![0.0; sites];
    let mut wet_bias = vec![0.0; sites];
    let mut qbias: [Vec<f64>; 3] = [vec![0.0; sites], vec![0.0; sites], vec![0.0; sites]];
    for s in 0..sites {
        let obs: Vec<f64> = (0..days).map(|t| truth.data()[t * sites + s].as_f64()).collect();
        let pooled: Vec<f64> = ensembles
            .iter()
            .flat_map(|m| m.iter().map(move |f| f.data()[s].as_f64()))
            .collect();
        let mut se = 0.0;
        for (t, members) in ensembles.iter().enumerate() {
            let mean = members.iter().map(|f| f.data()[s].as_f64()).sum::<f64>() / n as f64;
            se += (mean - obs[t]).powi(2);
        }
        rmse[s] = (se / days as f64).sqrt();
        let freq = |v: &[f64]| v.iter().filter(|&&x| x >= wet_threshold).count() as f64 / v.len() as f64;
        wet_bias[s] = freq(&pooled) - freq(&obs);
        let (obs, pooled) = (sorted(obs), sorted(pooled));
        for (k, &q) in QUANTILES.iter().enumerate() {
            let qt = empirical_quantile(&obs, q);
            let qm = empirical_quantile(&pooled, q);
            qbias[k][s] = (qm - qt) / qt.max(wet_threshold);
        }
    }
    let map = |v: Vec<f64>| Tensor::new(&[h, w], v).expect("site count");
    let [q0, q1, q2] = qbias;
    Ok(PerSiteScores {
        rmse: map(rmse),
        wet_frequency_bias: map(wet_bias),
        quantile_bias: [map(q0), map(q1), map(q2)],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn truth() -> Tensor<f64> {
        Tensor::from_fn(&[10, 2, 2], |k| if k % 3 == 0 { 0.0 } else { (k % 7) as f64 * 1.5 })
    }

    fn days(t: &Tensor<f64>) -> Vec<Tensor<f64>> {
        (0..t.shape()[0]).map(|d| t.slice_outer(d).unwrap()).collect()
    }

    #[test]
    fn replicated_truth_is_perfect() {
        let y = truth();
        let ens: Vec<_> = days(&y).into_iter().map(|f| vec![f.clone(), f.clone(), f]).collect();
        let s = per_site_scores(&ens, &y, 1.0).unwrap();
        assert!(s.rmse.data().iter().all(|&v| v == 0.0));
        assert!(s.wet_frequency_bias.data().iter().all(|&v| v == 0.0));
        assert!(s.quantile_bias.iter().all(|q| q.data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn dry_ensemble_bias_is_minus_wet_fraction() {
        let y = truth();
        let ens: Vec<_> = (0..10).map(|_| vec![Tensor::zeros(&[2, 2])]).collect();
        let s = per_site_scores(&ens, &y, 1.0).unwrap();
        for site in 0..4 {
            let w = (0..10).filter(|t| y.data()[t * 4 + site] >= 1.0).count() as f64 / 10.0;
            assert_eq!(s.wet_frequency_bias.data()[site], -w);
        }
    }

    #[test]
    fn constant_rmse() {
        let y = Tensor::<f64>::full(&[4, 2, 2], 3.0);
        let ens: Vec<_> = (0..4).map(|_| vec![Tensor::full(&[2, 2], 5.5)]).collect();
        let s = per_site_scores(&ens, &y, 1.0).unwrap();
        assert!(s.rmse.data().iter().all(|&v| (v - 2.5).abs() < 1e-12));
    }

    #[test]
    fn shape_mismatch() {
        let y = truth();
        let ens: Vec<_> = (0..10).map(|_| vec![Tensor::zeros(&[2, 3])]).collect();
        assert!(per_site_scores(&ens, &y, 1.0).is_err());
        assert!(per_site_scores(&ens[..3], &y, 1.0).is_err());
    }

    #[test]
    fn quantile_definition() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(empirical_quantile(&v, 0.5), 2.0);
        assert_eq!(empirical_quantile(&v, 0.9), 4.0);
        assert_eq!(empirical_quantile(&v, 0.0), 1.0);
    }
}
