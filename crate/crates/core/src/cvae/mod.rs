//! Conditional variational auto-encoder for stochastic downscaling.
//!
//! Training path: predictors `X` are embedded to `z_x`; the encoder maps the
//! fine field `Y` together with `z_x` to a diagonal Gaussian posterior; a
//! reparameterized draw `z` is stacked with `z_x` and decoded back to a field.
//! Inference path: `z` is drawn from the standard-normal prior instead, so
//! `Y` is never read.

mod loss;
mod model;
mod train;

pub use loss::{elbo_loss, ElboExample};
pub use model::{
    from_log_space, kl_divergence, reparameterize, standard_normal, to_log_space, Cvae, CvaeArch,
    GaussianLatent, LatentSample, PredictorEmbedding, LOGVAR_CLAMP,
};
pub use train::train_cvae;
