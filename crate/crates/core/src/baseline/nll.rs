//! Bernoulli-Gamma negative log-likelihood of daily precipitation.
//!
//! Dry days (`y < wet_threshold`) contribute `−ln(1 − p)`; wet days contribute
//! `−ln p` plus the Gamma(α, scale β) negative log-density of `y`.

use crate::error::{Error, Result};
use crate::nn::{sigmoid, softplus};
use crate::special::{digamma, ln_gamma};

/// Floor applied to `y` inside the logarithm of the wet branch.
pub const AMOUNT_FLOOR: f64 = 1e-6;

/// Lower bound added to the softplus outputs for α and β.
pub const POSITIVE_FLOOR: f64 = 1e-4;

/// Default wet-day threshold in mm/day.
pub const DEFAULT_WET_THRESHOLD: f64 = 1.0;

fn check_domain(p: f64, alpha: f64, beta: f64, y: f64) -> Result<()> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::domain("bg_nll", format!("p = {p} outside (0, 1)")));
    }
    if !(alpha > 0.0 && beta > 0.0) {
        return Err(Error::domain("bg_nll", format!("alpha = {alpha}, beta = {beta} must be > 0")));
    }
    if !(y >= 0.0) {
        return Err(Error::domain("bg_nll", format!("y = {y} must be >= 0")));
    }
    Ok(())
}

fn gamma_nll(y: f64, alpha: f64, beta: f64) -> f64 {
    let ly = y.max(AMOUNT_FLOOR).ln();
    -((alpha - 1.0) * ly - y / beta - alpha * beta.ln() - ln_gamma(alpha))
}

pub fn bg_nll(y: f64, p: f64, alpha: f64, beta: f64, wet_threshold: f64) -> Result<f64> {
    check_domain(p, alpha, beta, y)?;
    Ok(if y < wet_threshold {
        -(-p).ln_1p()
    } else {
        -p.ln() + gamma_nll(y, alpha, beta)
    })
}

/// Value and partial derivatives `(nll, ∂/∂p, ∂/∂α, ∂/∂β)`.
pub fn bg_nll_grad(
    y: f64,
    p: f64,
    alpha: f64,
    beta: f64,
    wet_threshold: f64,
) -> Result<(f64, f64, f64, f64)> {
    let v = bg_nll(y, p, alpha, beta, wet_threshold)?;
    if y < wet_threshold {
        Ok((v, 1.0 / (1.0 - p), 0.0, 0.0))
    } else {
        let ly = y.max(AMOUNT_FLOOR).ln();
        Ok((
            v,
            -1.0 / p,
            -ly + beta.ln() + digamma(alpha),
            -y / (beta * beta) + alpha / beta,
        ))
    }
}

/// Maps raw head outputs to `(p, α, β)`.
pub fn link(p_logit: f64, alpha_raw: f64, beta_raw: f64) -> (f64, f64, f64) {
    (
        sigmoid(p_logit),
        softplus(alpha_raw) + POSITIVE_FLOOR,
        softplus(beta_raw) + POSITIVE_FLOOR,
    )
}

/// Inverse of the α/β link for values above the floor.
pub fn inverse_positive_link(v: f64) -> f64 {
    let s = (v - POSITIVE_FLOOR).max(1e-12);
    // softplus⁻¹(s) = ln(e^s − 1)
    if s > 30.0 {
        s
    } else {
        s.exp_m1().ln()
    }
}

/// NLL and its gradient with respect to the raw head outputs.
///
/// The Bernoulli part is evaluated through the logit (`−ln(1 − p) =
/// softplus(a)`, `−ln p = softplus(−a)`), which stays finite when `p`
/// saturates in single precision.
pub fn bg_nll_logits(
    y: f64,
    p_logit: f64,
    alpha_raw: f64,
    beta_raw: f64,
    wet_threshold: f64,
) -> (f64, [f64; 3]) {
    let (p, alpha, beta) = link(p_logit, alpha_raw, beta_raw);
    if y < wet_threshold {
        (softplus(p_logit), [p, 0.0, 0.0])
    } else {
        let ly = y.max(AMOUNT_FLOOR).ln();
        let value = softplus(-p_logit) + gamma_nll(y, alpha, beta);
        let d_alpha = -ly + beta.ln() + digamma(alpha);
        let d_beta = -y / (beta * beta) + alpha / beta;
        (
            value,
            [p - 1.0, d_alpha * sigmoid(alpha_raw), d_beta * sigmoid(beta_raw)],
        )
    }
}
