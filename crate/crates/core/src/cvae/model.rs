use rand::Rng;
use rand_distr::StandardNormal;

use crate::data::SCALE_FACTOR;
use crate::error::{Error, Result};
use crate::nn::{ops, LayerSpec, Network};
use crate::rng::RandomStream;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::train::Parameterized;

/// Bounds applied to the encoder's log-variance head.
pub const LOGVAR_CLAMP: f64 = 10.0;

/// Architecture hyperparameters of the three networks.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CvaeArch {
    pub channels: usize,
    pub coarse_height: usize,
    pub coarse_width: usize,
    pub embedding_dim: usize,
    pub latent_dim: usize,
    /// Conv widths of the predictor embedding stack.
    pub embedding_widths: Vec<usize>,
    /// Conv widths applied to the predictand inside the encoder.
    pub encoder_widths: Vec<usize>,
    /// Channels of the decoder's seed map and its two upsampling stages.
    pub decoder_widths: [usize; 3],
}

impl Default for CvaeArch {
    fn default() -> Self {
        Self {
            channels: 20,
            coarse_height: 8,
            coarse_width: 8,
            embedding_dim: 128,
            latent_dim: 16,
            embedding_widths: vec![50, 25, 10],
            encoder_widths: vec![16, 8],
            decoder_widths: [8, 8, 4],
        }
    }
}

impl CvaeArch {
    pub fn fine_height(&self) -> usize {
        self.coarse_height * SCALE_FACTOR
    }

    pub fn fine_width(&self) -> usize {
        self.coarse_width * SCALE_FACTOR
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.channels,
            self.coarse_height,
            self.coarse_width,
            self.embedding_dim,
            self.latent_dim,
        ];
        if dims.contains(&0)
            || self.embedding_widths.is_empty()
            || self.encoder_widths.is_empty()
            || self.embedding_widths.contains(&0)
            || self.encoder_widths.contains(&0)
            || self.decoder_widths.contains(&0)
        {
            return Err(Error::Config(format!("invalid CVAE architecture {self:?}")));
        }
        Ok(())
    }

    fn embedding_layers(&self) -> Vec<LayerSpec> {
        let mut layers = Vec::new();
        let mut c = self.channels;
        for &w in &self.embedding_widths {
            layers.push(LayerSpec::conv(c, w, 3));
            layers.push(LayerSpec::Relu);
            c = w;
        }
        layers.push(LayerSpec::Flatten);
        layers.push(LayerSpec::dense(c * self.coarse_height * self.coarse_width, self.embedding_dim));
        layers
    }

    fn encoder_layers(&self) -> Vec<LayerSpec> {
        let mut layers = Vec::new();
        let mut c = 1;
        for &w in &self.encoder_widths {
            layers.push(LayerSpec::conv(c, w, 3));
            layers.push(LayerSpec::Relu);
            c = w;
        }
        layers.push(LayerSpec::Flatten);
        layers
    }

    fn encoder_features(&self) -> usize {
        self.encoder_widths.last().copied().unwrap_or(1) * self.fine_height() * self.fine_width()
    }

    fn head_layers(&self) -> Vec<LayerSpec> {
        vec![LayerSpec::dense(
            self.encoder_features() + self.embedding_dim,
            self.latent_dim,
        )]
    }

    fn decoder_layers(&self) -> Vec<LayerSpec> {
        let [seed, mid, last] = self.decoder_widths;
        let (h, w) = (self.coarse_height, self.coarse_width);
        vec![
            LayerSpec::dense(self.latent_dim + self.embedding_dim, seed * h * w),
            LayerSpec::Relu,
            LayerSpec::Reshape(vec![seed, h, w]),
            LayerSpec::Upsample(2),
            LayerSpec::conv(seed, mid, 3),
            LayerSpec::Relu,
            LayerSpec::Upsample(2),
            LayerSpec::conv(mid, last, 3),
            LayerSpec::Relu,
            LayerSpec::conv(last, 1, 1),
        ]
    }

    /// Flat integer encoding stored in checkpoints.
    pub fn to_codes(&self) -> Vec<usize> {
        let mut v = vec![
            self.channels,
            self.coarse_height,
            self.coarse_width,
            self.embedding_dim,
            self.latent_dim,
            self.embedding_widths.len(),
        ];
        v.extend(&self.embedding_widths);
        v.push(self.encoder_widths.len());
        v.extend(&self.encoder_widths);
        v.extend(self.decoder_widths);
        v
    }

    pub fn from_codes(codes: &[usize]) -> Result<Self> {
        let bad = || Error::Format {
            file: "CKPT",
            field: "cvae architecture".into(),
        };
        let mut it = codes.iter().copied();
        let mut next = || it.next().ok_or_else(bad);
        let (channels, coarse_height, coarse_width, embedding_dim, latent_dim) =
            (next()?, next()?, next()?, next()?, next()?);
        let n_emb = next()?;
        let embedding_widths = (0..n_emb).map(|_| next()).collect::<Result<Vec<_>>>()?;
        let n_enc = next()?;
        let encoder_widths = (0..n_enc).map(|_| next()).collect::<Result<Vec<_>>>()?;
        let decoder_widths = [next()?, next()?, next()?];
        if next().is_ok() {
            return Err(bad());
        }
        let arch = Self {
            channels,
            coarse_height,
            coarse_width,
            embedding_dim,
            latent_dim,
            embedding_widths,
            encoder_widths,
            decoder_widths,
        };
        arch.validate().map_err(|_| bad())?;
        Ok(arch)
    }
}

/// Low-dimensional embedding `z_x` of a predictor stack.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictorEmbedding<T = f32> {
    pub z_x: Tensor<T>,
}

/// Diagonal Gaussian posterior over the latent space.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianLatent<T = f32> {
    pub mu: Tensor<T>,
    /// Log-variance, already clamped to `[-10, 10]`.
    pub log_var: Tensor<T>,
}

impl<T: Scalar> GaussianLatent<T> {
    pub fn new(mu: Tensor<T>, log_var: Tensor<T>) -> Result<Self> {
        log_var.expect_shape("GaussianLatent", mu.shape())?;
        let c = T::of(LOGVAR_CLAMP);
        Ok(Self {
            mu,
            log_var: log_var.map(|v| v.max(-c).min(c)),
        })
    }

    /// Builds the latent from a mean and strictly positive standard deviation.
    pub fn from_std(mu: Tensor<T>, sigma: &Tensor<T>) -> Result<Self> {
        if sigma.data().iter().any(|&s| !(s > T::zero())) {
            return Err(Error::domain("GaussianLatent", "sigma must be > 0"));
        }
        Self::new(mu, sigma.map(|s| T::of(2.0) * s.ln()))
    }

    pub fn sigma(&self) -> Tensor<T> {
        self.log_var.map(|v| (T::of(0.5) * v).exp())
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }
}

/// A latent draw together with the stream that produced its noise.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentSample<T = f32> {
    pub z: Tensor<T>,
    pub stream: Option<RandomStream>,
}

/// `z = μ + σ ⊙ ε`.
pub fn reparameterize<T: Scalar>(lat: &GaussianLatent<T>, eps: &Tensor<T>) -> Result<LatentSample<T>> {
    let sigma = lat.sigma();
    let scaled = sigma.zip_map(eps, "reparameterize", |s, e| s * e)?;
    let z = lat.mu.zip_map(&scaled, "reparameterize", |m, s| m + s)?;
    Ok(LatentSample { z, stream: None })
}

/// Standard-normal vector of length `dim` drawn from `stream`.
pub fn standard_normal<T: Scalar>(dim: usize, stream: &RandomStream) -> Tensor<T> {
    let mut rng = stream.rng();
    Tensor::from_fn(&[dim], |_| T::of(rng.sample::<f64, _>(StandardNormal)))
}

/// Closed-form `KL(N(μ, σ²) ‖ N(0, I)) = ½ Σ (μ² + σ² − 1 − ln σ²)`.
pub fn kl_divergence<T: Scalar>(lat: &GaussianLatent<T>) -> f64 {
    lat.mu
        .data()
        .iter()
        .zip(lat.log_var.data())
        .map(|(&m, &lv)| {
            let (m, lv) = (m.as_f64(), lv.as_f64());
            // exp_m1(lv) - lv keeps precision near σ = 1
            0.5 * (m * m + lv.exp_m1() - lv)
        })
        .sum()
}

/// The conditional VAE: predictor embedding, encoder with Gaussian heads, decoder.
#[derive(Clone, Debug, PartialEq)]
pub struct Cvae<T = f32> {
    pub arch: CvaeArch,
    pub embedding: Network<T>,
    pub encoder: Network<T>,
    pub mu_head: Network<T>,
    pub log_var_head: Network<T>,
    pub decoder: Network<T>,
}

impl<T: Scalar> Cvae<T> {
    pub fn init(arch: CvaeArch, stream: &RandomStream) -> Result<Self> {
        arch.validate()?;
        let mut rng = stream.rng();
        Ok(Self {
            embedding: Network::init(arch.embedding_layers(), &mut rng)?,
            encoder: Network::init(arch.encoder_layers(), &mut rng)?,
            mu_head: Network::init(arch.head_layers(), &mut rng)?,
            log_var_head: Network::init(arch.head_layers(), &mut rng)?,
            decoder: Network::init(arch.decoder_layers(), &mut rng)?,
            arch,
        })
    }

    pub fn zeros(arch: CvaeArch) -> Result<Self> {
        arch.validate()?;
        Ok(Self {
            embedding: Network::zeros(arch.embedding_layers())?,
            encoder: Network::zeros(arch.encoder_layers())?,
            mu_head: Network::zeros(arch.head_layers())?,
            log_var_head: Network::zeros(arch.head_layers())?,
            decoder: Network::zeros(arch.decoder_layers())?,
            arch,
        })
    }

    /// Rebuilds a model from parameters in [`Parameterized::parameters`] order.
    pub fn from_parameters(arch: CvaeArch, params: Vec<Tensor<T>>) -> Result<Self> {
        let mut model = Self::zeros(arch)?;
        let slots = model.parameters_mut();
        if slots.len() != params.len() {
            return Err(Error::shape("Cvae::from_parameters", "parameter count", slots.len(), params.len()));
        }
        for (slot, p) in slots.into_iter().zip(params) {
            p.expect_shape("Cvae::from_parameters", slot.shape())?;
            *slot = p;
        }
        Ok(model)
    }

    fn networks(&self) -> [(&'static str, &Network<T>); 5] {
        [
            ("embedding", &self.embedding),
            ("encoder", &self.encoder),
            ("mu_head", &self.mu_head),
            ("log_var_head", &self.log_var_head),
            ("decoder", &self.decoder),
        ]
    }

    pub(crate) fn check_predictors(&self, x: &Tensor<T>) -> Result<()> {
        let a = &self.arch;
        if x.shape() != [a.channels, a.coarse_height, a.coarse_width] {
            return Err(Error::shape(
                "embed_predictors",
                "predictor shape",
                format!("{:?}", [a.channels, a.coarse_height, a.coarse_width]),
                format!("{:?}", x.shape()),
            ));
        }
        Ok(())
    }

    pub(crate) fn check_field(&self, op: &'static str, y: &Tensor<T>) -> Result<()> {
        let want = [self.arch.fine_height(), self.arch.fine_width()];
        if y.shape() != want {
            return Err(Error::shape(op, "field shape", format!("{want:?}"), format!("{:?}", y.shape())));
        }
        Ok(())
    }

    pub fn embed_predictors(&self, x: &Tensor<T>) -> Result<PredictorEmbedding<T>> {
        self.check_predictors(x)?;
        Ok(PredictorEmbedding {
            z_x: self.embedding.forward(x)?,
        })
    }

    /// Posterior `q(z | x, y)`. The field `y` is in mm/day and enters the
    /// encoder in log1p space.
    pub fn encode(&self, zx: &PredictorEmbedding<T>, y: &Tensor<T>) -> Result<GaussianLatent<T>> {
        self.check_field("encode", y)?;
        if y.data().iter().any(|&v| v < T::zero()) {
            return Err(Error::domain("encode", "precipitation must be non-negative"));
        }
        let input = to_log_space(y).reshape(&[1, self.arch.fine_height(), self.arch.fine_width()])?;
        let features = self.encoder.forward(&input)?;
        let h = ops::concat(&[&features, &zx.z_x]);
        GaussianLatent::new(self.mu_head.forward(&h)?, self.log_var_head.forward(&h)?)
    }

    /// Decoder output in transformed (log1p) precipitation space, `[H_f, W_f]`.
    pub fn decode_transformed(
        &self,
        z: &LatentSample<T>,
        zx: &PredictorEmbedding<T>,
    ) -> Result<Tensor<T>> {
        if z.z.len() != self.arch.latent_dim {
            return Err(Error::shape("decode", "latent dim", self.arch.latent_dim, z.z.len()));
        }
        if zx.z_x.len() != self.arch.embedding_dim {
            return Err(Error::shape("decode", "embedding dim", self.arch.embedding_dim, zx.z_x.len()));
        }
        let input = ops::concat(&[&z.z, &zx.z_x]);
        self.decoder
            .forward(&input)?
            .reshape(&[self.arch.fine_height(), self.arch.fine_width()])
    }

    /// Decoded precipitation in mm/day: `max(expm1(output), 0)`.
    pub fn decode(&self, z: &LatentSample<T>, zx: &PredictorEmbedding<T>) -> Result<Tensor<T>> {
        Ok(from_log_space(&self.decode_transformed(z, zx)?))
    }

    /// Inference path: `n` fields for one predictor stack, latents from `N(0, I)`.
    ///
    /// Member `i` uses `stream.substream(i)`, so ensembles are reproducible
    /// member by member.
    pub fn sample_downscaled(
        &self,
        x: &Tensor<T>,
        n: usize,
        stream: &RandomStream,
    ) -> Result<Vec<Tensor<T>>> {
        if n == 0 {
            return Err(Error::domain("sample_downscaled", "ensemble size must be >= 1"));
        }
        let zx = self.embed_predictors(x)?;
        (0..n as u64)
            .map(|i| {
                let s = stream.substream(i);
                let z = LatentSample {
                    z: standard_normal(self.arch.latent_dim, &s),
                    stream: Some(s),
                };
                self.decode(&z, &zx)
            })
            .collect()
    }
}

impl<T: Scalar> Parameterized<T> for Cvae<T> {
    fn parameters(&self) -> Vec<&Tensor<T>> {
        self.networks().into_iter().flat_map(|(_, n)| n.params()).collect()
    }

    fn parameters_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let Self {
            embedding,
            encoder,
            mu_head,
            log_var_head,
            decoder,
            ..
        } = self;
        [embedding, encoder, mu_head, log_var_head, decoder]
            .into_iter()
            .flat_map(|n| n.params_mut().iter_mut())
            .collect()
    }

    fn parameter_names(&self) -> Vec<String> {
        self.networks()
            .into_iter()
            .flat_map(|(name, n)| n.param_names().into_iter().map(move |p| format!("cvae.{name}.{p}")))
            .collect()
    }
}

/// `log1p(y)` elementwise.
pub fn to_log_space<T: Scalar>(y: &Tensor<T>) -> Tensor<T> {
    y.map(|v| v.ln_1p())
}

/// `max(expm1(t), 0)` elementwise.
pub fn from_log_space<T: Scalar>(t: &Tensor<T>) -> Tensor<T> {
    t.map(|v| v.exp_m1().max(T::zero()))
}
