//! Evidence lower bound and its gradient with respect to every parameter.

use super::model::{kl_divergence, to_log_space, Cvae, GaussianLatent, LOGVAR_CLAMP};
use crate::error::Result;
use crate::nn::ops;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::train::{EpochLoss, Parameterized};

/// `(total, recon, kl)` where `recon` is the mean squared error between
/// `log1p(y)` and the decoder's transformed-space output `y_hat`.
pub fn elbo_loss<T: Scalar>(
    y: &Tensor<T>,
    y_hat: &Tensor<T>,
    lat: &GaussianLatent<T>,
    beta_kl: f64,
) -> Result<(f64, f64, f64)> {
    y_hat.expect_shape("elbo_loss", y.shape())?;
    let target = to_log_space(y);
    let recon = target
        .data()
        .iter()
        .zip(y_hat.data())
        .map(|(&t, &o)| (o.as_f64() - t.as_f64()).powi(2))
        .sum::<f64>()
        / y.len() as f64;
    let kl = kl_divergence(lat);
    Ok((recon + beta_kl * kl, recon, kl))
}

/// One training example on the training path: both the encoder (posterior)
/// and the decoder are run, with the latent reparameterized from `eps`.
pub struct ElboExample<'a, T> {
    pub predictors: &'a Tensor<T>,
    pub precip: &'a Tensor<T>,
    pub eps: &'a Tensor<T>,
    pub beta_kl: f64,
}

impl<T: Scalar> Cvae<T> {
    /// ELBO of one example; adds its gradient into `grads` (ordered as
    /// [`Parameterized::parameters`]).
    pub fn elbo_backward(
        &self,
        ex: &ElboExample<'_, T>,
        grads: &mut [Tensor<T>],
    ) -> Result<EpochLoss> {
        self.check_predictors(ex.predictors)?;
        self.check_field("elbo", ex.precip)?;
        let arch = &self.arch;
        let (hf, wf) = (arch.fine_height(), arch.fine_width());
        let target = to_log_space(ex.precip);

        // forward
        let emb = self.embedding.forward_trace(ex.predictors)?;
        let zx = &emb.output;
        let enc = self.encoder.forward_trace(&target.clone().reshape(&[1, hf, wf])?)?;
        let h = ops::concat(&[&enc.output, zx]);
        let mu_tr = self.mu_head.forward_trace(&h)?;
        let lv_tr = self.log_var_head.forward_trace(&h)?;
        let lat = GaussianLatent::new(mu_tr.output.clone(), lv_tr.output.clone())?;
        let sigma = lat.sigma();
        let eps = ex.eps;
        eps.expect_shape("elbo", lat.mu.shape())?;
        let z = lat.mu.zip_map(&sigma.zip_map(eps, "elbo", |s, e| s * e)?, "elbo", |m, n| m + n)?;
        let dec_in = ops::concat(&[&z, zx]);
        let dec = self.decoder.forward_trace(&dec_in)?;
        let out = dec.output.clone().reshape(&[hf, wf])?;
        let (total, recon, kl) = elbo_loss(ex.precip, &out, &lat, ex.beta_kl)?;

        // reverse
        let n = (hf * wf) as f64;
        let g_out = out.zip_map(&target, "elbo", |o, t| T::of(2.0 * (o - t).as_f64() / n))?;
        let g_out = g_out.reshape(dec.output.shape())?;

        let sizes = self.group_sizes();
        let (g_emb, rest) = grads.split_at_mut(sizes[0]);
        let (g_enc, rest) = rest.split_at_mut(sizes[1]);
        let (g_mu, rest) = rest.split_at_mut(sizes[2]);
        let (g_lv, g_dec) = rest.split_at_mut(sizes[3]);

        let g_dec_in = self
            .decoder
            .backward_into(&dec, &g_out, g_dec, true)?
            .expect("input gradient");
        let parts = ops::split(&g_dec_in, &[arch.latent_dim, arch.embedding_dim])?;
        let (g_z, g_zx_dec) = (&parts[0], &parts[1]);

        let beta = T::of(ex.beta_kl);
        let half = T::of(0.5);
        let clamp = T::of(LOGVAR_CLAMP);
        let mut g_mu_out = Tensor::zeros_like(&lat.mu);
        let mut g_lv_out = Tensor::zeros_like(&lat.mu);
        for j in 0..arch.latent_dim {
            let (m, lv, s, e) = (
                lat.mu.data()[j],
                lat.log_var.data()[j],
                sigma.data()[j],
                eps.data()[j],
            );
            let gz = g_z.data()[j];
            g_mu_out.data_mut()[j] = gz + beta * m;
            let raw = lv_tr.output.data()[j];
            g_lv_out.data_mut()[j] = if raw.abs() <= clamp {
                gz * e * half * s + beta * half * lv.exp_m1()
            } else {
                T::zero()
            };
        }
        let g_h_mu = self
            .mu_head
            .backward_into(&mu_tr, &g_mu_out, g_mu, true)?
            .expect("input gradient");
        let g_h_lv = self
            .log_var_head
            .backward_into(&lv_tr, &g_lv_out, g_lv, true)?
            .expect("input gradient");
        let mut g_h = g_h_mu;
        g_h.add_assign(&g_h_lv)?;
        let parts = ops::split(&g_h, &[enc.output.len(), arch.embedding_dim])?;
        self.encoder.backward_into(&enc, &parts[0], g_enc, false)?;

        let mut g_zx = parts[1].clone();
        g_zx.add_assign(g_zx_dec)?;
        self.embedding.backward_into(&emb, &g_zx, g_emb, false)?;

        Ok(EpochLoss { total, recon, kl })
    }

    fn group_sizes(&self) -> [usize; 5] {
        [
            self.embedding.params().len(),
            self.encoder.params().len(),
            self.mu_head.params().len(),
            self.log_var_head.params().len(),
            self.decoder.params().len(),
        ]
    }

    /// ELBO value only, for the same example (used by gradient checks).
    pub fn elbo_value(&self, ex: &ElboExample<'_, T>) -> Result<f64> {
        let mut scratch = self.zero_grads();
        Ok(self.elbo_backward(ex, &mut scratch)?.total)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cvae::model::{from_log_space, reparameterize, CvaeArch};
    use crate::nn::finite_difference_check;
    use crate::rng::RandomStream;

    fn standard(d: usize) -> GaussianLatent<f64> {
        GaussianLatent::new(Tensor::zeros(&[d]), Tensor::zeros(&[d])).unwrap()
    }

    #[test]
    fn perfect_reconstruction_with_prior_is_zero() {
        let y = Tensor::<f64>::from_fn(&[4, 4], |i| i as f64 * 0.5);
        let (total, recon, kl) = elbo_loss(&y, &to_log_space(&y), &standard(2), 1.0).unwrap();
        assert!(total.abs() < 1e-15 && recon.abs() < 1e-15 && kl == 0.0);
    }

    #[test]
    fn zero_beta_drops_kl() {
        let y = Tensor::<f64>::full(&[2, 2], 3.0);
        let lat = GaussianLatent::new(Tensor::full(&[2], 1.0), Tensor::zeros(&[2])).unwrap();
        let (total, recon, kl) = elbo_loss(&y, &Tensor::zeros(&[2, 2]), &lat, 0.0).unwrap();
        assert_eq!(total, recon);
        assert!((kl - 1.0).abs() < 1e-12);
    }

    #[test]
    fn dry_field_against_unit_output() {
        let y = Tensor::<f64>::zeros(&[3, 3]);
        let (_, recon, _) = elbo_loss(&y, &Tensor::full(&[3, 3], 1.0), &standard(1), 1.0).unwrap();
        assert!((recon - 1.0).abs() < 1e-15);
    }

    #[test]
    fn elbo_value_matches_public_pieces() {
        let arch = CvaeArch {
            channels: 2,
            coarse_height: 1,
            coarse_width: 1,
            embedding_dim: 3,
            latent_dim: 2,
            embedding_widths: vec![3],
            encoder_widths: vec![2],
            decoder_widths: [2, 2, 2],
        };
        let m = Cvae::<f64>::init(arch, &RandomStream::new(5)).unwrap();
        let x = Tensor::from_vec(vec![0.3, -0.7]).reshape(&[2, 1, 1]).unwrap();
        let y = Tensor::from_fn(&[4, 4], |i| (i % 3) as f64);
        let eps = Tensor::from_vec(vec![0.4, -1.1]);
        let zx = m.embed_predictors(&x).unwrap();
        let lat = m.encode(&zx, &y).unwrap();
        let z = reparameterize(&lat, &eps).unwrap();
        let out = m.decode_transformed(&z, &zx).unwrap();
        let (total, _, _) = elbo_loss(&y, &out, &lat, 0.7).unwrap();
        let ex = ElboExample {
            predictors: &x,
            precip: &y,
            eps: &eps,
            beta_kl: 0.7,
        };
        assert!((m.elbo_value(&ex).unwrap() - total).abs() < 1e-12);
        assert!(from_log_space(&out).data().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn elbo_gradient_matches_finite_differences() {
        let arch = CvaeArch {
            channels: 2,
            coarse_height: 1,
            coarse_width: 1,
            embedding_dim: 3,
            latent_dim: 2,
            embedding_widths: vec![3, 2],
            encoder_widths: vec![2, 2],
            decoder_widths: [2, 2, 2],
        };
        let mut m = Cvae::<f64>::init(arch.clone(), &RandomStream::new(17)).unwrap();
        // nonzero biases keep every ReLU away from its kink
        let mut k = 0.0;
        for p in m.parameters_mut() {
            if p.rank() == 1 {
                p.data_mut().iter_mut().for_each(|v| {
                    k += 1.0;
                    *v = 0.1 * (k * 1.7f64).sin();
                });
            }
        }
        let x = Tensor::from_vec(vec![0.9, -0.4]).reshape(&[2, 1, 1]).unwrap();
        let y = Tensor::from_fn(&[4, 4], |i| ((i * 5) % 7) as f64 * 0.8);
        let eps = Tensor::from_vec(vec![0.6, -0.3]);
        let ex = ElboExample {
            predictors: &x,
            precip: &y,
            eps: &eps,
            beta_kl: 0.5,
        };
        let mut grads = m.zero_grads();
        m.elbo_backward(&ex, &mut grads).unwrap();
        let flat_grad: Vec<f64> = grads.iter().flat_map(|g| g.data().to_vec()).collect();
        let point: Vec<f64> = m.parameters().iter().flat_map(|p| p.data().to_vec()).collect();
        let mut f = |w: &[f64]| {
            let mut off = 0;
            let params = m
                .parameters()
                .iter()
                .map(|p| {
                    let t = Tensor::new(p.shape(), w[off..off + p.len()].to_vec()).unwrap();
                    off += p.len();
                    t
                })
                .collect();
            Cvae::from_parameters(arch.clone(), params)
                .unwrap()
                .elbo_value(&ex)
                .unwrap()
        };
        let err = finite_difference_check(&mut f, &flat_grad, &point, 1e-5);
        assert!(err < 1e-4, "max relative error {err}");
    }
}
