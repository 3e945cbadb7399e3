//! Deterministic-parameter baseline: a convolutional network predicting an
//! independent Bernoulli-Gamma distribution at every fine-grid site.

mod model;
mod nll;
mod sampler;
mod train;

pub use model::{Baseline, BaselineArch, BernoulliGammaField};
pub use nll::{
    bg_nll, bg_nll_grad, bg_nll_logits, inverse_positive_link, link, AMOUNT_FLOOR, DEFAULT_WET_THRESHOLD,
    POSITIVE_FLOOR,
};
pub use sampler::{sample_bg_field, sample_gamma};
pub use train::train_baseline;
