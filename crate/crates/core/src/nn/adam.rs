use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0;
        if !ok {
            return Err(Error::domain("adam_update", format!("invalid hyperparameters {self:?}")));
        }
        Ok(())
    }
}

/// First/second moment estimates for a list of parameter tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T = f32> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub step: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Tensor<T>>) -> Self {
        let m: Vec<_> = params.into_iter().map(Tensor::zeros_like).collect();
        Self {
            v: m.clone(),
            m,
            step: 0,
        }
    }
}

/// One bias-corrected Adam step, applied in place.
///
/// Gradients are checked for finiteness before anything is modified, so a
/// failed update leaves both parameters and state untouched.
pub fn adam_update<T: Scalar>(
    params: &mut [&mut Tensor<T>],
    grads: &[Tensor<T>],
    state: &mut AdamState<T>,
    cfg: &AdamConfig,
) -> Result<()> {
    cfg.validate()?;
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::shape(
            "adam_update",
            "parameter count",
            params.len(),
            format!("{} grads / {} moments", grads.len(), state.m.len()),
        ));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        g.expect_shape("adam_update", p.shape())?;
        state.m[i].expect_shape("adam_update", p.shape())?;
        if !g.is_finite() {
            return Err(Error::NonFinite {
                context: format!("gradient of parameter {i}"),
            });
        }
    }

    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (T::of(cfg.beta1), T::of(cfg.beta2));
    let bc1 = T::of(1.0 - cfg.beta1.powi(t));
    let bc2 = T::of(1.0 - cfg.beta2.powi(t));
    let lr = T::of(cfg.lr);
    let eps = T::of(cfg.eps);
    let one = T::one();

    for (i, p) in params.iter_mut().enumerate() {
        let g = grads[i].data();
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for (j, w) in p.data_mut().iter_mut().enumerate() {
            m[j] = b1 * m[j] + (one - b1) * g[j];
            v[j] = b2 * v[j] + (one - b2) * g[j] * g[j];
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            *w -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = Tensor::<f32>::from_vec(vec![1.0, -2.0]);
        let mut st = AdamState::new([&p]);
        adam_update(&mut [&mut p], &[Tensor::zeros(&[2])], &mut st, &AdamConfig::default())
            .unwrap();
        assert_eq!(p.data(), &[1.0, -2.0]);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = Tensor::<f64>::from_vec(vec![1.0]);
        let mut st = AdamState::new([&p]);
        let cfg = AdamConfig::with_lr(0.1);
        adam_update(&mut [&mut p], &[Tensor::from_vec(vec![1.0])], &mut st, &cfg).unwrap();
        // m̂ = 1, v̂ = 1 -> step = lr / (1 + eps)
        assert!((p.data()[0] - 0.9).abs() < 1e-7, "{}", p.data()[0]);
    }

    #[test]
    fn two_steps_descend_quadratic() {
        let mut p = Tensor::<f64>::from_vec(vec![2.0]);
        let mut st = AdamState::new([&p]);
        let cfg = AdamConfig::with_lr(0.1);
        let loss = |w: f64| w * w;
        let mut prev = loss(p.data()[0]);
        for _ in 0..2 {
            let g = Tensor::from_vec(vec![2.0 * p.data()[0]]);
            adam_update(&mut [&mut p], &[g], &mut st, &cfg).unwrap();
            let now = loss(p.data()[0]);
            assert!(now < prev);
            prev = now;
        }
        assert_eq!(st.step, 2);
    }

    #[test]
    fn non_finite_gradient_aborts_untouched() {
        let mut p = Tensor::<f32>::from_vec(vec![1.0, 1.0]);
        let mut st = AdamState::new([&p]);
        let g = Tensor::from_vec(vec![0.5, f32::NAN]);
        let err = adam_update(&mut [&mut p], &[g], &mut st, &AdamConfig::default()).unwrap_err();
        assert!(matches!(err, Error::NonFinite { .. }));
        assert_eq!(p.data(), &[1.0, 1.0]);
        assert_eq!(st.step, 0);
    }

    #[test]
    fn rejects_bad_hyperparameters() {
        let mut p = Tensor::<f32>::from_vec(vec![1.0]);
        let mut st = AdamState::new([&p]);
        let g = [Tensor::from_vec(vec![1.0])];
        let bad = AdamConfig {
            beta1: 1.0,
            ..AdamConfig::default()
        };
        assert!(adam_update(&mut [&mut p], &g, &mut st, &bad).is_err());
        assert!(adam_update(&mut [&mut p], &g, &mut st, &AdamConfig::with_lr(0.0)).is_err());
    }
}
