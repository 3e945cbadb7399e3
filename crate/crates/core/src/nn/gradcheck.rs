//! Central-difference gradient checking.

use crate::scalar::Scalar;

/// Denominator floor of the relative error.
pub const REL_FLOOR: f64 = 1e-8;

/// `|a - b| / max(|a|, |b|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Central differences of `f` at `point`, one coordinate at a time.
pub fn central_differences<T: Scalar>(
    f: &mut dyn FnMut(&[T]) -> T,
    point: &[T],
    eps: f64,
) -> Vec<f64> {
    let mut x = point.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + T::of(eps);
            let up = f(&x).as_f64();
            x[i] = orig - T::of(eps);
            let down = f(&x).as_f64();
            x[i] = orig;
            (up - down) / (2.0 * eps)
        })
        .collect()
}

/// Largest relative error between `analytic` and central differences of `f`.
pub fn finite_difference_check<T: Scalar>(
    f: &mut dyn FnMut(&[T]) -> T,
    analytic: &[T],
    point: &[T],
    eps: f64,
) -> f64 {
    assert!(eps > 0.0, "finite-difference step must be positive");
    assert_eq!(analytic.len(), point.len(), "gradient/point length mismatch");
    central_differences(f, point, eps)
        .iter()
        .zip(analytic)
        .map(|(&n, &a)| relative_error(a.as_f64(), n))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_map_is_exact() {
        let coeffs = [1.5f64, -2.0, 0.25];
        let mut f = |x: &[f64]| x.iter().zip(&coeffs).map(|(a, b)| a * b).sum::<f64>();
        let err = finite_difference_check(&mut f, &coeffs, &[0.3, 1.0, -4.0], 1e-3);
        assert!(err < 1e-5, "{err}");
    }

    #[test]
    fn square_at_three() {
        let mut f = |x: &[f64]| x[0] * x[0];
        let fd = central_differences(&mut f, &[3.0], 1e-3);
        assert!((fd[0] - 6.0).abs() < 1e-6);
        let err = finite_difference_check(&mut f, &[6.0], &[3.0], 1e-3);
        assert!(err < 1e-6);
    }

    #[test]
    fn doubled_gradient_reports_half() {
        let mut f = |x: &[f64]| x[0] * x[0];
        let err = finite_difference_check(&mut f, &[12.0], &[3.0], 1e-3);
        assert!((err - 0.5).abs() < 1e-6, "{err}");
    }
}
