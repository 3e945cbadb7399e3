//! Side-by-side metric report for the two generative models and the truth.

use std::fmt::Write as _;

use rayon::prelude::*;

use super::scores::{per_site_scores, QUANTILES};
use super::spatial::{morans_i, neighbor_correlation, variogram};
use crate::cvae::to_log_space;
use crate::data::DownscalingDataset;
use crate::error::{Error, Result};
use crate::io::SampleSet;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const MODELS: [&str; 3] = ["cvae", "baseline", "truth"];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalConfig {
    pub wet_threshold: f64,
    pub max_lag: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            wet_threshold: crate::baseline::DEFAULT_WET_THRESHOLD,
            max_lag: 5,
        }
    }
}

/// Metric names in report order. Spatial statistics are means over test
/// days and members of the log1p field; per-site scores are means over
/// sites.
pub fn metric_names(max_lag: usize) -> Vec<String> {
    let mut names: Vec<String> = ["ensemble_size", "neighbor_correlation", "morans_i"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    names.extend((1..=max_lag).map(|h| format!("variogram_lag_{h}")));
    names.extend(
        [
            "rmse_ensemble_mean",
            "wet_frequency_bias",
            "wet_frequency_abs_bias",
            "q50_relative_bias",
            "q90_relative_bias",
            "q98_relative_bias",
        ]
        .iter()
        .map(|s| s.to_string()),
    );
    names
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub metric: String,
    pub model: String,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub ensemble_size: usize,
    pub max_lag: usize,
    pub rows: Vec<MetricRow>,
    pub metadata: String,
}

impl MetricReport {
    pub fn value(&self, metric: &str, model: &str) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.metric == metric && r.model == model)
            .map(|r| r.value)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,model,value\n");
        for r in &self.rows {
            writeln!(out, "{},{},{}", r.metric, r.model, r.value).expect("write to string");
        }
        out
    }

    /// One line comparing mean neighbour correlation against the truth's.
    pub fn verdict(&self) -> String {
        let get = |m| self.value("neighbor_correlation", m).unwrap_or(f64::NAN);
        let (c, b, t) = (get("cvae"), get("baseline"), get("truth"));
        let closer = if (c - t).abs() < (b - t).abs() { "cvae" } else { "baseline" };
        format!("neighbor correlation: cvae {c:.3}, baseline {b:.3}, truth {t:.3}; closer to truth: {closer}")
    }
}

#[derive(Default)]
struct SpatialSums {
    fields: usize,
    nc: f64,
    moran: f64,
    vg: Vec<f64>,
}

fn spatial_sums<T: Scalar>(fields: &[Tensor<T>], max_lag: usize) -> Result<SpatialSums> {
    let mut acc = SpatialSums {
        vg: vec![0.0; max_lag],
        ..SpatialSums::default()
    };
    for f in fields {
        let lf = to_log_space(f);
        // all-dry fields have no spatial structure to measure
        let (nc, mi) = match (neighbor_correlation(&lf), morans_i(&lf)) {
            (Ok(a), Ok(b)) => (a, b),
            (Err(Error::UndefinedCorrelation), _) | (_, Err(Error::UndefinedCorrelation)) => continue,
            (Err(e), _) | (_, Err(e)) => return Err(e),
        };
        acc.fields += 1;
        acc.nc += nc;
        acc.moran += mi;
        for (a, v) in acc.vg.iter_mut().zip(variogram(&lf, max_lag)?) {
            *a += v;
        }
    }
    Ok(acc)
}

fn mean(t: &Tensor<f64>) -> f64 {
    t.data().iter().sum::<f64>() / t.len() as f64
}

fn model_rows<T: Scalar>(
    name: &str,
    ensembles: &[Vec<Tensor<T>>],
    truth: &Tensor<T>,
    cfg: &EvalConfig,
) -> Result<Vec<MetricRow>> {
    let partial: Vec<SpatialSums> = ensembles
        .par_iter()
        .map(|members| spatial_sums(members, cfg.max_lag))
        .collect::<Result<_>>()?;
    // reduce in day order so the result does not depend on scheduling
    let mut total = SpatialSums {
        vg: vec![0.0; cfg.max_lag],
        ..SpatialSums::default()
    };
    for p in partial {
        total.fields += p.fields;
        total.nc += p.nc;
        total.moran += p.moran;
        for (a, v) in total.vg.iter_mut().zip(p.vg) {
            *a += v;
        }
    }
    if total.fields == 0 {
        return Err(Error::UndefinedCorrelation);
    }
    let k = total.fields as f64;
    let scores = per_site_scores(ensembles, truth, cfg.wet_threshold)?;

    let mut values = vec![ensembles[0].len() as f64, total.nc / k, total.moran / k];
    values.extend(total.vg.iter().map(|v| v / k));
    values.push(mean(&scores.rmse));
    values.push(mean(&scores.wet_frequency_bias));
    values.push(mean(&scores.wet_frequency_bias.map(f64::abs)));
    debug_assert_eq!(QUANTILES.len(), scores.quantile_bias.len());
    values.extend(scores.quantile_bias.iter().map(mean));

    let names = metric_names(cfg.max_lag);
    debug_assert_eq!(names.len(), values.len());
    names
        .into_iter()
        .zip(values)
        .map(|(metric, value)| {
            if !value.is_finite() {
                return Err(Error::NonFinite {
                    context: format!("metric {metric} for {name}"),
                });
            }
            Ok(MetricRow {
                metric,
                model: name.to_string(),
                value,
            })
        })
        .collect()
}

fn check_coverage<T: Scalar>(label: &str, s: &SampleSet<T>, truth: &DownscalingDataset<T>) -> Result<()> {
    let test = truth.test_range();
    let (hf, wf) = truth.fine_extent();
    if s.first_time != test.start || s.days() != test.len() {
        return Err(Error::shape(
            "compare_models",
            format!("{label} test coverage"),
            format!("days {}..{}", test.start, test.end),
            format!("days {}..{}", s.first_time, s.first_time + s.days()),
        ));
    }
    if s.samples.shape()[2..] != [hf, wf] {
        return Err(Error::shape(
            "compare_models",
            format!("{label} field shape"),
            format!("[{hf}, {wf}]"),
            format!("{:?}", &s.samples.shape()[2..]),
        ));
    }
    Ok(())
}

fn members<T: Scalar>(s: &SampleSet<T>) -> Result<Vec<Vec<Tensor<T>>>> {
    (0..s.days()).map(|d| s.ensemble(d)).collect()
}

pub fn compare_models<T: Scalar>(
    cvae: &SampleSet<T>,
    baseline: &SampleSet<T>,
    truth: &DownscalingDataset<T>,
    cfg: &EvalConfig,
) -> Result<MetricReport> {
    check_coverage("cvae", cvae, truth)?;
    check_coverage("baseline", baseline, truth)?;
    if cvae.ensemble_size() != baseline.ensemble_size() {
        return Err(Error::shape(
            "compare_models",
            "ensemble size",
            cvae.ensemble_size(),
            baseline.ensemble_size(),
        ));
    }
    let test = truth.test_range();
    let obs = truth.precip.slice_outer_range(test.clone())?;
    let obs_days: Vec<Vec<Tensor<T>>> = test.clone().map(|t| vec![truth.precip_at(t)]).collect();

    let mut rows = model_rows("cvae", &members(cvae)?, &obs, cfg)?;
    rows.extend(model_rows("baseline", &members(baseline)?, &obs, cfg)?);
    rows.extend(model_rows("truth", &obs_days, &obs, cfg)?);
    Ok(MetricReport {
        ensemble_size: cvae.ensemble_size(),
        max_lag: cfg.max_lag,
        rows,
        metadata: format!(
            "test_days={} ensemble_size={} wet_threshold={} max_lag={}",
            test.len(),
            cvae.ensemble_size(),
            cfg.wet_threshold,
            cfg.max_lag
        ),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_dataset, SynthConfig};
    use crate::io::SampleMetadata;
    use crate::rng::RandomStream;

    fn data() -> DownscalingDataset<f32> {
        let cfg = SynthConfig {
            n_times: 20,
            channels: 2,
            coarse_height: 2,
            coarse_width: 2,
            ..SynthConfig::default()
        };
        generate_dataset(&cfg, &RandomStream::new(8)).unwrap()
    }

    fn truth_as_samples(d: &DownscalingDataset<f32>, n: usize, model: &str) -> SampleSet<f32> {
        let test = d.test_range();
        let (h, w) = d.fine_extent();
        let days: Vec<Tensor<f32>> = test
            .clone()
            .map(|t| Tensor::stack(&vec![d.precip_at(t); n]).unwrap())
            .collect();
        let samples = Tensor::stack(&days).unwrap();
        assert_eq!(samples.shape(), &[test.len(), n, h, w]);
        let meta = SampleMetadata {
            model: model.into(),
            ensemble_size: n,
            seed: 0,
        };
        SampleSet::new(samples, test.start, meta).unwrap()
    }

    #[test]
    fn truth_as_both_models_gives_identical_columns() {
        let d = data();
        let a = truth_as_samples(&d, 2, "cvae");
        let b = truth_as_samples(&d, 2, "baseline");
        let r = compare_models(&a, &b, &d, &EvalConfig::default()).unwrap();
        let names = metric_names(5);
        assert_eq!(r.rows.len(), 3 * names.len());
        for m in &names {
            assert_eq!(r.value(m, "cvae"), r.value(m, "baseline"), "{m}");
        }
        assert_eq!(r.value("rmse_ensemble_mean", "cvae"), Some(0.0));
        assert_eq!(r.value("neighbor_correlation", "cvae"), r.value("neighbor_correlation", "truth"));
        let csv = r.to_csv();
        assert!(csv.starts_with("metric,model,value\n"));
        assert_eq!(csv.lines().count(), 1 + r.rows.len());
        assert!(r.verdict().contains("truth"));
    }

    #[test]
    fn coverage_mismatch_rejected() {
        let d = data();
        let a = truth_as_samples(&d, 2, "cvae");
        let mut b = truth_as_samples(&d, 2, "baseline");
        b.first_time -= 1;
        assert!(compare_models(&a, &b, &d, &EvalConfig::default()).is_err());
        let c = truth_as_samples(&d, 3, "baseline");
        assert!(compare_models(&a, &c, &d, &EvalConfig::default()).is_err());
    }
}
