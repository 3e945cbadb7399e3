//! Stationary Gaussian random fields by kernel smoothing of white noise.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::rng::RandomStream;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Kernel half-width in units of the correlation length.
const TRUNCATION: f64 = 3.0;

fn gaussian_kernel(length: f64) -> Vec<f64> {
    if length <= 0.0 {
        return vec![1.0];
    }
    let radius = (TRUNCATION * length).ceil() as isize;
    (-radius..=radius)
        .map(|d| (-(d * d) as f64 / (2.0 * length * length)).exp())
        .collect()
}

/// Draws an `H×W` field whose autocorrelation decays as `exp(-d²/(4ℓ²))`.
///
/// White noise on a padded grid is smoothed with a separable Gaussian kernel
/// of standard deviation `correlation_length` (truncated at 3ℓ), cropped so
/// that every cell sees the full kernel, then divided by its sample standard
/// deviation. `correlation_length = 0` yields white noise.
pub fn generate_gaussian_random_field<T: Scalar>(
    height: usize,
    width: usize,
    correlation_length: f64,
    stream: &RandomStream,
) -> Tensor<T> {
    assert!(height >= 1 && width >= 1, "field extents must be positive");
    assert!(correlation_length >= 0.0, "correlation length must be non-negative");
    let kernel = gaussian_kernel(correlation_length);
    let r = kernel.len() / 2;
    let (ph, pw) = (height + 2 * r, width + 2 * r);

    let mut rng = stream.rng();
    let noise: Vec<f64> = (0..ph * pw).map(|_| rng.sample(StandardNormal)).collect();

    // rows first: padded height x cropped width
    let mut rows = vec![0.0; ph * width];
    for y in 0..ph {
        let src = &noise[y * pw..(y + 1) * pw];
        for x in 0..width {
            rows[y * width + x] = kernel.iter().zip(&src[x..]).map(|(k, v)| k * v).sum();
        }
    }
    let mut field = vec![0.0; height * width];
    for y in 0..height {
        for x in 0..width {
            field[y * width + x] = kernel
                .iter()
                .enumerate()
                .map(|(i, k)| k * rows[(y + i) * width + x])
                .sum();
        }
    }

    let n = field.len() as f64;
    let mean = field.iter().sum::<f64>() / n;
    let var = field.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let scale = if var > 0.0 { var.sqrt().recip() } else { 1.0 };
    Tensor::from_fn(&[height, width], |i| T::of(field[i] * scale))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn neighbor_corr(f: &Tensor<f64>) -> f64 {
        let (h, w) = (f.shape()[0], f.shape()[1]);
        let d = f.data();
        let mut pairs = Vec::new();
        for y in 0..h {
            for x in 0..w {
                if x + 1 < w {
                    pairs.push((d[y * w + x], d[y * w + x + 1]));
                }
                if y + 1 < h {
                    pairs.push((d[y * w + x], d[(y + 1) * w + x]));
                }
            }
        }
        let n = pairs.len() as f64;
        let ma = pairs.iter().map(|p| p.0).sum::<f64>() / n;
        let mb = pairs.iter().map(|p| p.1).sum::<f64>() / n;
        let cov = pairs.iter().map(|p| (p.0 - ma) * (p.1 - mb)).sum::<f64>();
        let va = pairs.iter().map(|p| (p.0 - ma).powi(2)).sum::<f64>();
        let vb = pairs.iter().map(|p| (p.1 - mb).powi(2)).sum::<f64>();
        cov / (va * vb).sqrt()
    }

    fn mean_neighbor_corr(length: f64) -> f64 {
        let root = RandomStream::new(11);
        (0..100)
            .map(|i| neighbor_corr(&generate_gaussian_random_field(32, 32, length, &root.substream(i))))
            .sum::<f64>()
            / 100.0
    }

    #[test]
    fn zero_length_is_white() {
        let r = mean_neighbor_corr(0.0);
        assert!(r.abs() < 0.05, "{r}");
    }

    #[test]
    fn length_three_is_smooth() {
        let r = mean_neighbor_corr(3.0);
        assert!(r > 0.5, "{r}");
    }

    #[test]
    fn moments_are_standard() {
        let root = RandomStream::new(5);
        let (mut m, mut v) = (0.0, 0.0);
        for i in 0..100 {
            let f = generate_gaussian_random_field::<f64>(32, 32, 2.0, &root.substream(i));
            let n = f.len() as f64;
            let fm = f.sum() / n;
            m += fm;
            v += f.data().iter().map(|x| (x - fm).powi(2)).sum::<f64>() / (n - 1.0);
        }
        m /= 100.0;
        v /= 100.0;
        assert!(m.abs() < 0.05, "mean {m}");
        assert!((v - 1.0).abs() < 0.05, "variance {v}");
    }

    #[test]
    fn reproducible() {
        let s = RandomStream::new(3);
        let a = generate_gaussian_random_field::<f32>(8, 5, 1.5, &s);
        let b = generate_gaussian_random_field::<f32>(8, 5, 1.5, &s);
        assert_eq!(a, b);
        assert_eq!(a.shape(), &[8, 5]);
    }
}
