//! Spatial-dependence statistics of a single 2-D field.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

fn grid<T: Scalar>(op: &'static str, field: &Tensor<T>) -> Result<(usize, usize, Vec<f64>)> {
    field.expect_rank(op, 2)?;
    let v: Vec<f64> = field.data().iter().map(|x| x.as_f64()).collect();
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite { context: op.to_string() });
    }
    Ok((field.shape()[0], field.shape()[1], v))
}

/// Calls `f(a, b)` for every horizontally and vertically adjacent pair.
fn for_each_pair(h: usize, w: usize, v: &[f64], mut f: impl FnMut(f64, f64)) {
    for i in 0..h {
        for j in 0..w {
            let a = v[i * w + j];
            if j + 1 < w {
                f(a, v[i * w + j + 1]);
            }
            if i + 1 < h {
                f(a, v[(i + 1) * w + j]);
            }
        }
    }
}

/// Pearson correlation between the first and second members of all
/// 4-neighbour pairs.
pub fn neighbor_correlation<T: Scalar>(field: &Tensor<T>) -> Result<f64> {
    let (h, w, v) = grid("neighbor_correlation", field)?;
    let (mut n, mut sa, mut sb) = (0.0, 0.0, 0.0);
    for_each_pair(h, w, &v, |a, b| {
        n += 1.0;
        sa += a;
        sb += b;
    });
    if n == 0.0 {
        return Err(Error::UndefinedCorrelation);
    }
    let (ma, mb) = (sa / n, sb / n);
    let (mut cab, mut caa, mut cbb) = (0.0, 0.0, 0.0);
    for_each_pair(h, w, &v, |a, b| {
        let (da, db) = (a - ma, b - mb);
        cab += da * db;
        caa += da * da;
        cbb += db * db;
    });
    if caa == 0.0 || cbb == 0.0 {
        return Err(Error::UndefinedCorrelation);
    }
    Ok((cab / (caa.sqrt() * cbb.sqrt())).clamp(-1.0, 1.0))
}

/// Moran's I with binary rook-contiguity weights.
pub fn morans_i<T: Scalar>(field: &Tensor<T>) -> Result<f64> {
    let (h, w, v) = grid("morans_i", field)?;
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let z: Vec<f64> = v.iter().map(|x| x - mean).collect();
    let denom: f64 = z.iter().map(|d| d * d).sum();
    if denom == 0.0 {
        return Err(Error::UndefinedCorrelation);
    }
    let (mut pairs, mut cross) = (0.0, 0.0);
    for_each_pair(h, w, &z, |a, b| {
        pairs += 1.0;
        cross += a * b;
    });
    if pairs == 0.0 {
        return Err(Error::UndefinedCorrelation);
    }
    // symmetric weights: each pair appears twice in both S0 and the double sum
    Ok(n / (2.0 * pairs) * (2.0 * cross) / denom)
}

/// Semivariance `½·mean[(x(s) − x(s+h))²]` over horizontal and vertical
/// pairs at offset `h`, for `h = 1..=max_lag`. Entry `h − 1` holds lag `h`.
pub fn variogram<T: Scalar>(field: &Tensor<T>, max_lag: usize) -> Result<Vec<f64>> {
    let (h, w, v) = grid("variogram", field)?;
    if max_lag == 0 || max_lag >= h.min(w) {
        return Err(Error::domain(
            "variogram",
            format!("max_lag = {max_lag} must lie in 1..{}", h.min(w)),
        ));
    }
    Ok((1..=max_lag)
        .map(|lag| {
            let (mut s, mut n) = (0.0, 0usize);
            for i in 0..h {
                for j in 0..w {
                    let a = v[i * w + j];
                    if j + lag < w {
                        s += (a - v[i * w + j + lag]).powi(2);
                        n += 1;
                    }
                    if i + lag < h {
                        s += (a - v[(i + lag) * w + j]).powi(2);
                        n += 1;
                    }
                }
            }
            0.5 * s / n as f64
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn checkerboard(n: usize) -> Tensor<f64> {
        Tensor::from_fn(&[n, n], |k| if (k / n + k % n) % 2 == 0 { 1.0 } else { -1.0 })
    }

    #[test]
    fn checkerboard_is_anticorrelated() {
        let c = checkerboard(4);
        assert!((neighbor_correlation(&c).unwrap() + 1.0).abs() < 1e-12);
        // 4x4: N = 16, 24 pairs, every cross product −1, denominator 16
        assert!((morans_i(&c).unwrap() + 1.0).abs() < 1e-12);
        let vg = variogram(&c, 2).unwrap();
        assert_eq!(vg, vec![2.0, 0.0]);
    }

    #[test]
    fn gradient_is_correlated() {
        let g = Tensor::<f64>::from_fn(&[32, 32], |k| (k / 32 + k % 32) as f64);
        assert!(neighbor_correlation(&g).unwrap() > 0.95);
        assert!(morans_i(&g).unwrap() > 0.9);
    }

    #[test]
    fn halves_strongly_positive() {
        let f = Tensor::<f64>::from_fn(&[32, 32], |k| if k % 32 < 16 { 1.0 } else { -1.0 });
        assert!(morans_i(&f).unwrap() > 0.8);
    }

    #[test]
    fn constant_field_errors() {
        let c = Tensor::<f32>::full(&[5, 5], 2.0);
        assert!(matches!(neighbor_correlation(&c), Err(Error::UndefinedCorrelation)));
        assert!(morans_i(&c).is_err());
        assert_eq!(variogram(&c, 3).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn variogram_lag_range() {
        let c = checkerboard(4);
        assert!(variogram(&c, 0).is_err());
        assert!(variogram(&c, 4).is_err());
    }
}
