//! Per-site stochastic sampling of Bernoulli-Gamma fields.

use rand::Rng;
use rand_distr::StandardNormal;

use super::model::BernoulliGammaField;
use crate::rng::RandomStream;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Gamma(shape, scale = 1) by Marsaglia–Tsang; shapes below 1 use the
/// `Gamma(shape + 1)·U^{1/shape}` boost.
pub fn sample_gamma<R: Rng + ?Sized>(rng: &mut R, shape: f64) -> f64 {
    assert!(shape > 0.0, "gamma shape must be positive");
    if shape < 1.0 {
        let u: f64 = rng.random();
        return sample_gamma(rng, shape + 1.0) * u.powf(1.0 / shape);
    }
    let d = shape - 1.0 / 3.0;
    let c = 1.0 / (9.0 * d).sqrt();
    loop {
        let x: f64 = rng.sample(StandardNormal);
        let v = 1.0 + c * x;
        if v <= 0.0 {
            continue;
        }
        let v = v * v * v;
        let u: f64 = rng.random();
        let x2 = x * x;
        if u < 1.0 - 0.0331 * x2 * x2 {
            return d * v;
        }
        if u.ln() < 0.5 * x2 + d * (1.0 - v + v.ln()) {
            return d * v;
        }
    }
}

/// Draws one field: each site independently rains with probability `p`,
/// and a wet site receives a Gamma(α, scale β) amount. Site `s` reads only
/// `stream.substream(s)`.
pub fn sample_bg_field<T: Scalar>(field: &BernoulliGammaField<T>, stream: &RandomStream) -> Tensor<T> {
    let mut out = Tensor::zeros_like(&field.p);
    let (p, a, b) = (field.p.data(), field.alpha.data(), field.beta.data());
    for (s, v) in out.data_mut().iter_mut().enumerate() {
        let mut rng = stream.substream(s as u64).rng();
        let u: f64 = rng.random();
        if u < p[s].as_f64() {
            *v = T::of(sample_gamma(&mut rng, a[s].as_f64()) * b[s].as_f64());
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn moments(shape: f64, scale: f64, n: usize) -> (f64, f64) {
        let mut rng = RandomStream::new(21).rng();
        let xs: Vec<f64> = (0..n).map(|_| sample_gamma(&mut rng, shape) * scale).collect();
        let m = xs.iter().sum::<f64>() / n as f64;
        let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64;
        (m, v)
    }

    #[test]
    fn gamma_moments() {
        let (m, v) = moments(4.0, 0.5, 100_000);
        assert!((m - 2.0).abs() / 2.0 < 0.02, "mean {m}");
        assert!((v - 1.0).abs() < 0.02, "variance {v}");
    }

    #[test]
    fn small_shape_moments() {
        let (m, v) = moments(0.4, 2.0, 100_000);
        assert!((m - 0.8).abs() / 0.8 < 0.03, "mean {m}");
        assert!((v - 1.6).abs() / 1.6 < 0.05, "variance {v}");
    }

    fn uniform_field(h: usize, w: usize, p: f32, a: f32, b: f32) -> BernoulliGammaField<f32> {
        BernoulliGammaField {
            p: Tensor::full(&[h, w], p),
            alpha: Tensor::full(&[h, w], a),
            beta: Tensor::full(&[h, w], b),
        }
    }

    #[test]
    fn nearly_dry_field_is_zero() {
        let f = uniform_field(16, 16, 1e-9, 2.0, 2.0);
        let y = sample_bg_field(&f, &RandomStream::new(4));
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn wet_frequency_matches_p() {
        let f = uniform_field(1, 1, 0.3, 2.0, 2.0);
        let root = RandomStream::new(6);
        let wet = (0..10_000)
            .filter(|&i| sample_bg_field(&f, &root.substream(i)).data()[0] > 0.0)
            .count();
        let freq = wet as f64 / 10_000.0;
        assert!((freq - 0.3).abs() < 0.015, "{freq}");
    }

    #[test]
    fn samples_nonnegative_and_reproducible() {
        let f = uniform_field(4, 4, 0.6, 0.7, 3.0);
        let s = RandomStream::new(1);
        let a = sample_bg_field(&f, &s);
        assert_eq!(a, sample_bg_field(&f, &s));
        assert!(a.data().iter().all(|&v| v >= 0.0));
    }
}
