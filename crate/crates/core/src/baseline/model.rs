use super::nll::{bg_nll_logits, inverse_positive_link, link};
use crate::data::{DownscalingDataset, SCALE_FACTOR};
use crate::error::{Error, Result};
use crate::nn::{LayerSpec, Network};
use crate::rng::RandomStream;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::train::{EpochLoss, Parameterized};

/// Keeps `p` strictly inside (0, 1) after single-precision rounding.
const P_MARGIN: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BaselineArch {
    pub channels: usize,
    pub coarse_height: usize,
    pub coarse_width: usize,
    pub conv_widths: Vec<usize>,
}

impl Default for BaselineArch {
    fn default() -> Self {
        Self {
            channels: 20,
            coarse_height: 8,
            coarse_width: 8,
            conv_widths: vec![50, 25, 10],
        }
    }
}

impl BaselineArch {
    pub fn sites(&self) -> usize {
        self.fine_height() * self.fine_width()
    }

    pub fn fine_height(&self) -> usize {
        self.coarse_height * SCALE_FACTOR
    }

    pub fn fine_width(&self) -> usize {
        self.coarse_width * SCALE_FACTOR
    }

    pub fn validate(&self) -> Result<()> {
        if [self.channels, self.coarse_height, self.coarse_width].contains(&0)
            || self.conv_widths.is_empty()
            || self.conv_widths.contains(&0)
        {
            return Err(Error::Config(format!("invalid baseline architecture {self:?}")));
        }
        Ok(())
    }

    fn feature_layers(&self) -> Vec<LayerSpec> {
        let mut layers = Vec::new();
        let mut c = self.channels;
        for &w in &self.conv_widths {
            layers.push(LayerSpec::conv(c, w, 3));
            layers.push(LayerSpec::Relu);
            c = w;
        }
        layers.push(LayerSpec::Flatten);
        layers
    }

    fn head_layers(&self) -> Vec<LayerSpec> {
        let features = self.conv_widths.last().copied().unwrap_or(1) * self.coarse_height * self.coarse_width;
        vec![LayerSpec::dense(features, self.sites())]
    }

    pub fn to_codes(&self) -> Vec<usize> {
        let mut v = vec![self.channels, self.coarse_height, self.coarse_width, self.conv_widths.len()];
        v.extend(&self.conv_widths);
        v
    }

    pub fn from_codes(codes: &[usize]) -> Result<Self> {
        let bad = || Error::Format {
            file: "CKPT",
            field: "baseline architecture".into(),
        };
        if codes.len() < 4 || codes.len() != 4 + codes[3] {
            return Err(bad());
        }
        let arch = Self {
            channels: codes[0],
            coarse_height: codes[1],
            coarse_width: codes[2],
            conv_widths: codes[4..].to_vec(),
        };
        arch.validate().map_err(|_| bad())?;
        Ok(arch)
    }
}

/// Per-site Bernoulli-Gamma parameters over the fine grid.
#[derive(Clone, Debug, PartialEq)]
pub struct BernoulliGammaField<T = f32> {
    /// Rain probability, in (0, 1).
    pub p: Tensor<T>,
    /// Gamma shape, > 0.
    pub alpha: Tensor<T>,
    /// Gamma scale, > 0.
    pub beta: Tensor<T>,
}

/// Convolutional network with three per-site output heads.
#[derive(Clone, Debug, PartialEq)]
pub struct Baseline<T = f32> {
    pub arch: BaselineArch,
    pub features: Network<T>,
    pub p_head: Network<T>,
    pub alpha_head: Network<T>,
    pub beta_head: Network<T>,
}

struct Traces<T> {
    features: crate::nn::Trace<T>,
    heads: [crate::nn::Trace<T>; 3],
}

impl<T: Scalar> Baseline<T> {
    pub fn init(arch: BaselineArch, stream: &RandomStream) -> Result<Self> {
        arch.validate()?;
        let mut rng = stream.rng();
        Ok(Self {
            features: Network::init(arch.feature_layers(), &mut rng)?,
            p_head: Network::init(arch.head_layers(), &mut rng)?,
            alpha_head: Network::init(arch.head_layers(), &mut rng)?,
            beta_head: Network::init(arch.head_layers(), &mut rng)?,
            arch,
        })
    }

    pub fn zeros(arch: BaselineArch) -> Result<Self> {
        arch.validate()?;
        Ok(Self {
            features: Network::zeros(arch.feature_layers())?,
            p_head: Network::zeros(arch.head_layers())?,
            alpha_head: Network::zeros(arch.head_layers())?,
            beta_head: Network::zeros(arch.head_layers())?,
            arch,
        })
    }

    pub fn from_parameters(arch: BaselineArch, params: Vec<Tensor<T>>) -> Result<Self> {
        let mut model = Self::zeros(arch)?;
        let slots = model.parameters_mut();
        if slots.len() != params.len() {
            return Err(Error::shape(
                "Baseline::from_parameters",
                "parameter count",
                slots.len(),
                params.len(),
            ));
        }
        for (slot, p) in slots.into_iter().zip(params) {
            p.expect_shape("Baseline::from_parameters", slot.shape())?;
            *slot = p;
        }
        Ok(model)
    }

    fn heads(&self) -> [&Network<T>; 3] {
        [&self.p_head, &self.alpha_head, &self.beta_head]
    }

    fn check_predictors(&self, x: &Tensor<T>) -> Result<()> {
        let a = &self.arch;
        let want = [a.channels, a.coarse_height, a.coarse_width];
        if x.shape() != want {
            return Err(Error::shape(
                "bg_forward",
                "predictor shape",
                format!("{want:?}"),
                format!("{:?}", x.shape()),
            ));
        }
        Ok(())
    }

    fn trace(&self, x: &Tensor<T>) -> Result<Traces<T>> {
        self.check_predictors(x)?;
        let features = self.features.forward_trace(x)?;
        let h = &features.output;
        let heads = [
            self.p_head.forward_trace(h)?,
            self.alpha_head.forward_trace(h)?,
            self.beta_head.forward_trace(h)?,
        ];
        Ok(Traces { features, heads })
    }

    /// Per-site distribution parameters for one predictor stack.
    pub fn bg_forward(&self, x: &Tensor<T>) -> Result<BernoulliGammaField<T>> {
        self.check_predictors(x)?;
        let h = self.features.forward(x)?;
        let shape = [self.arch.fine_height(), self.arch.fine_width()];
        let raw: Vec<Tensor<T>> = self
            .heads()
            .iter()
            .map(|n| n.forward(&h))
            .collect::<Result<_>>()?;
        let n = self.arch.sites();
        let (mut p, mut a, mut b) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
        for s in 0..n {
            let (ps, al, be) = link(
                raw[0].data()[s].as_f64(),
                raw[1].data()[s].as_f64(),
                raw[2].data()[s].as_f64(),
            );
            p.push(T::of(ps.clamp(P_MARGIN, 1.0 - P_MARGIN)));
            a.push(T::of(al));
            b.push(T::of(be));
        }
        Ok(BernoulliGammaField {
            p: Tensor::new(&shape, p)?,
            alpha: Tensor::new(&shape, a)?,
            beta: Tensor::new(&shape, b)?,
        })
    }

    /// Mean NLL over all sites of one example; adds its gradient into `grads`.
    pub fn nll_backward(
        &self,
        x: &Tensor<T>,
        y: &Tensor<T>,
        wet_threshold: f64,
        grads: &mut [Tensor<T>],
    ) -> Result<EpochLoss> {
        let n = self.arch.sites();
        let want = [self.arch.fine_height(), self.arch.fine_width()];
        if y.shape() != want {
            return Err(Error::shape("bg_nll", "field shape", format!("{want:?}"), format!("{:?}", y.shape())));
        }
        let tr = self.trace(x)?;
        let mut total = 0.0;
        let mut upstream: [Vec<T>; 3] = [vec![T::zero(); n], vec![T::zero(); n], vec![T::zero(); n]];
        let inv_n = 1.0 / n as f64;
        for s in 0..n {
            let (v, g) = bg_nll_logits(
                y.data()[s].as_f64(),
                tr.heads[0].output.data()[s].as_f64(),
                tr.heads[1].output.data()[s].as_f64(),
                tr.heads[2].output.data()[s].as_f64(),
                wet_threshold,
            );
            total += v;
            for k in 0..3 {
                upstream[k][s] = T::of(g[k] * inv_n);
            }
        }
        let total = total * inv_n;

        let nf = self.features.params().len();
        let nh = self.p_head.params().len();
        let (g_feat, g_heads) = grads.split_at_mut(nf);
        let mut g_h: Option<Tensor<T>> = None;
        for (k, (head, up)) in self.heads().into_iter().zip(upstream).enumerate() {
            let gi = head
                .backward_into(
                    &tr.heads[k],
                    &Tensor::from_vec(up),
                    &mut g_heads[k * nh..(k + 1) * nh],
                    true,
                )?
                .expect("input gradient");
            match g_h.as_mut() {
                None => g_h = Some(gi),
                Some(acc) => acc.add_assign(&gi)?,
            }
        }
        self.features
            .backward_into(&tr.features, &g_h.expect("three heads"), g_feat, false)?;
        Ok(EpochLoss {
            total,
            recon: total,
            kl: 0.0,
        })
    }

    /// Mean NLL of one example without gradients.
    pub fn mean_nll(&self, x: &Tensor<T>, y: &Tensor<T>, wet_threshold: f64) -> Result<f64> {
        let mut scratch = self.zero_grads();
        Ok(self.nll_backward(x, y, wet_threshold, &mut scratch)?.total)
    }

    /// Sets head biases to the training climatology: per-site logit of the
    /// wet fraction and method-of-moments Gamma parameters of the pooled wet
    /// amounts. Head weights are scaled by `weight_scale` so training starts
    /// near that climatology.
    pub fn init_from_climatology(
        &mut self,
        data: &DownscalingDataset<T>,
        wet_threshold: f64,
        weight_scale: f64,
    ) -> Result<()> {
        let n = self.arch.sites();
        let train = data.train_range();
        let days = train.len() as f64;
        let mut wet_counts = vec![0usize; n];
        let (mut sum, mut sum_sq, mut count) = (0.0, 0.0, 0usize);
        for t in train {
            let y = data.precip_at(t);
            for (s, &v) in y.data().iter().enumerate() {
                let v = v.as_f64();
                if v >= wet_threshold {
                    wet_counts[s] += 1;
                    sum += v;
                    sum_sq += v * v;
                    count += 1;
                }
            }
        }
        let (alpha, beta) = if count > 1 {
            let m = sum / count as f64;
            let var = (sum_sq / count as f64 - m * m).max(1e-6);
            (m * m / var, var / m)
        } else {
            (1.0, 1.0)
        };
        let margin = 0.5 / days;
        for head in [&mut self.p_head, &mut self.alpha_head, &mut self.beta_head] {
            let (w, _) = head.layer_params_mut(0).expect("dense head");
            w.scale_in_place(T::of(weight_scale));
        }
        let (_, pb) = self.p_head.layer_params_mut(0).expect("dense head");
        for (s, b) in pb.data_mut().iter_mut().enumerate() {
            let f = (wet_counts[s] as f64 / days).clamp(margin, 1.0 - margin);
            *b = T::of((f / (1.0 - f)).ln());
        }
        let (_, ab) = self.alpha_head.layer_params_mut(0).expect("dense head");
        ab.fill(T::of(inverse_positive_link(alpha)));
        let (_, bb) = self.beta_head.layer_params_mut(0).expect("dense head");
        bb.fill(T::of(inverse_positive_link(beta)));
        Ok(())
    }
}

impl<T: Scalar> Parameterized<T> for Baseline<T> {
    fn parameters(&self) -> Vec<&Tensor<T>> {
        std::iter::once(&self.features)
            .chain(self.heads())
            .flat_map(|n| n.params())
            .collect()
    }

    fn parameters_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let Self {
            features,
            p_head,
            alpha_head,
            beta_head,
            ..
        } = self;
        [features, p_head, alpha_head, beta_head]
            .into_iter()
            .flat_map(|n| n.params_mut().iter_mut())
            .collect()
    }

    fn parameter_names(&self) -> Vec<String> {
        [
            ("features", &self.features),
            ("p_head", &self.p_head),
            ("alpha_head", &self.alpha_head),
            ("beta_head", &self.beta_head),
        ]
        .into_iter()
        .flat_map(|(name, n)| n.param_names().into_iter().map(move |p| format!("baseline.{name}.{p}")))
        .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::finite_difference_check;

    fn tiny() -> BaselineArch {
        BaselineArch {
            channels: 2,
            coarse_height: 1,
            coarse_width: 1,
            conv_widths: vec![3, 2],
        }
    }

    #[test]
    fn outputs_in_range_and_deterministic() {
        let m = Baseline::<f32>::init(BaselineArch::default(), &RandomStream::new(1)).unwrap();
        let x = Tensor::from_fn(&[20, 8, 8], |i| ((i * 13 % 29) as f32 - 14.0) / 4.0);
        let f = m.bg_forward(&x).unwrap();
        assert_eq!(f.p.shape(), &[32, 32]);
        assert!(f.p.data().iter().all(|&p| p > 0.0 && p < 1.0));
        assert!(f.alpha.data().iter().all(|&a| a > 0.0));
        assert!(f.beta.data().iter().all(|&b| b > 0.0));
        assert_eq!(f, m.bg_forward(&x).unwrap());
        assert!(m.bg_forward(&Tensor::zeros(&[20, 8, 7])).is_err());
    }

    #[test]
    fn zero_heads_give_even_odds() {
        let mut m = Baseline::<f32>::init(BaselineArch::default(), &RandomStream::new(2)).unwrap();
        m.p_head.params_mut().iter_mut().for_each(|p| p.fill(0.0));
        let x = Tensor::from_fn(&[20, 8, 8], |i| (i as f32).sin());
        let f = m.bg_forward(&x).unwrap();
        assert!(f.p.data().iter().all(|&p| p == 0.5));
    }

    #[test]
    fn nll_gradient_matches_finite_differences() {
        let mut m = Baseline::<f64>::init(tiny(), &RandomStream::new(3)).unwrap();
        let mut k = 0.0;
        for p in m.parameters_mut() {
            if p.rank() == 1 {
                p.data_mut().iter_mut().for_each(|v| {
                    k += 1.0;
                    *v = 0.1 * (k * 2.3f64).cos();
                });
            }
        }
        let x = Tensor::from_vec(vec![0.8, -1.2]).reshape(&[2, 1, 1]).unwrap();
        let y = Tensor::from_fn(&[4, 4], |i| if i % 3 == 0 { 0.0 } else { 0.5 + i as f64 });
        let mut grads = m.zero_grads();
        m.nll_backward(&x, &y, 1.0, &mut grads).unwrap();
        let flat: Vec<f64> = grads.iter().flat_map(|g| g.data().to_vec()).collect();
        let point: Vec<f64> = m.parameters().iter().flat_map(|p| p.data().to_vec()).collect();
        let shapes: Vec<Vec<usize>> = m.parameters().iter().map(|p| p.shape().to_vec()).collect();
        let mut f = |w: &[f64]| {
            let mut off = 0;
            let params = shapes
                .iter()
                .map(|s| {
                    let n: usize = s.iter().product();
                    let t = Tensor::new(s, w[off..off + n].to_vec()).unwrap();
                    off += n;
                    t
                })
                .collect();
            Baseline::from_parameters(tiny(), params).unwrap().mean_nll(&x, &y, 1.0).unwrap()
        };
        let err = finite_difference_check(&mut f, &flat, &point, 1e-5);
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn arch_codes_roundtrip() {
        let a = BaselineArch::default();
        assert_eq!(BaselineArch::from_codes(&a.to_codes()).unwrap(), a);
        assert!(BaselineArch::from_codes(&[20, 8, 8, 2, 5]).is_err());
    }
}
