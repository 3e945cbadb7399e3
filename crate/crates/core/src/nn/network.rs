//! Fixed layer stacks with cached forward traces and hand-derived backward passes.

use rand::Rng;
use rand_distr::StandardNormal;

use super::ops::{self, Activation, ConvGeometry, Padding};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// One layer of a sequential stack.
///
/// `concat` is a two-input operation and lives outside the stack as
/// [`ops::concat`] / [`ops::split`].
#[derive(Clone, Debug, PartialEq)]
pub enum LayerSpec {
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        padding: Padding,
    },
    Dense {
        inputs: usize,
        outputs: usize,
    },
    Relu,
    Softplus,
    Sigmoid,
    Flatten,
    Reshape(Vec<usize>),
    /// Nearest-neighbour upsampling by an integer factor.
    Upsample(usize),
}

impl LayerSpec {
    pub fn conv(in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        LayerSpec::Conv2d {
            in_channels,
            out_channels,
            kernel,
            padding: Padding::Same,
        }
    }

    pub fn dense(inputs: usize, outputs: usize) -> Self {
        LayerSpec::Dense { inputs, outputs }
    }

    pub fn validate(&self) -> Result<()> {
        const OP: &str = "LayerSpec";
        match self {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => {
                if kernel % 2 == 0 {
                    return Err(Error::shape(OP, "kernel extent", "odd", kernel));
                }
                if *in_channels == 0 || *out_channels == 0 {
                    return Err(Error::shape(OP, "channels", "> 0", 0));
                }
            }
            LayerSpec::Dense { inputs, outputs } => {
                if *inputs == 0 || *outputs == 0 {
                    return Err(Error::shape(
                        OP,
                        "dense width",
                        "> 0",
                        format!("{inputs}x{outputs}"),
                    ));
                }
            }
            LayerSpec::Reshape(shape) => {
                if shape.is_empty() || shape.contains(&0) {
                    return Err(Error::shape(OP, "reshape extents", "> 0", format!("{shape:?}")));
                }
            }
            LayerSpec::Upsample(f) => {
                if *f == 0 {
                    return Err(Error::shape(OP, "upsample factor", ">= 1", 0));
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// Shapes of the trainable tensors (weights first, then bias).
    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        match *self {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => vec![vec![out_channels, in_channels, kernel, kernel], vec![out_channels]],
            LayerSpec::Dense { inputs, outputs } => vec![vec![outputs, inputs], vec![outputs]],
            _ => Vec::new(),
        }
    }

    fn fan_in(&self) -> usize {
        match *self {
            LayerSpec::Conv2d {
                in_channels,
                kernel,
                ..
            } => in_channels * kernel * kernel,
            LayerSpec::Dense { inputs, .. } => inputs,
            _ => 1,
        }
    }

    fn activation(&self) -> Option<Activation> {
        match self {
            LayerSpec::Relu => Some(Activation::Relu),
            LayerSpec::Softplus => Some(Activation::Softplus),
            LayerSpec::Sigmoid => Some(Activation::Sigmoid),
            _ => None,
        }
    }
}

enum Cache<T> {
    Conv { cols: Vec<T>, geom: ConvGeometry },
    Dense { input: Tensor<T> },
    Act { input: Tensor<T> },
    Shape { shape: Vec<usize> },
    Upsample,
}

/// Intermediate values of one forward pass, consumed by [`Network::backward_into`].
pub struct Trace<T> {
    caches: Vec<Cache<T>>,
    pub output: Tensor<T>,
}

/// A sequential stack of layers together with its parameters.
///
/// Parameters are stored flat in layer order, weights before bias.
#[derive(Clone, Debug, PartialEq)]
pub struct Network<T = f32> {
    layers: Vec<LayerSpec>,
    params: Vec<Tensor<T>>,
    offsets: Vec<usize>,
}

impl<T: Scalar> Network<T> {
    /// Builds a stack with zero parameters.
    pub fn zeros(layers: Vec<LayerSpec>) -> Result<Self> {
        let mut params = Vec::new();
        let mut offsets = Vec::with_capacity(layers.len());
        for layer in &layers {
            layer.validate()?;
            offsets.push(params.len());
            params.extend(layer.param_shapes().iter().map(|s| Tensor::zeros(s)));
        }
        Ok(Self {
            layers,
            params,
            offsets,
        })
    }

    /// He-normal weights, zero biases.
    pub fn init<R: Rng + ?Sized>(layers: Vec<LayerSpec>, rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(layers)?;
        for (li, layer) in net.layers.iter().enumerate() {
            if layer.param_shapes().is_empty() {
                continue;
            }
            let std = (2.0 / layer.fan_in() as f64).sqrt();
            let w = &mut net.params[net.offsets[li]];
            for v in w.data_mut() {
                let n: f64 = rng.sample(StandardNormal);
                *v = T::of(n * std);
            }
        }
        Ok(net)
    }

    pub fn from_params(layers: Vec<LayerSpec>, params: Vec<Tensor<T>>) -> Result<Self> {
        let mut net = Self::zeros(layers)?;
        if params.len() != net.params.len() {
            return Err(Error::shape(
                "Network::from_params",
                "parameter count",
                net.params.len(),
                params.len(),
            ));
        }
        for (slot, p) in net.params.iter_mut().zip(params) {
            p.expect_shape("Network::from_params", slot.shape())?;
            *slot = p;
        }
        Ok(net)
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn params(&self) -> &[Tensor<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.params
    }

    /// Parameter names of the form `<layer index>.weight` / `<layer index>.bias`.
    pub fn param_names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(self.params.len());
        for (li, layer) in self.layers.iter().enumerate() {
            for (pi, _) in layer.param_shapes().iter().enumerate() {
                let kind = if pi == 0 { "weight" } else { "bias" };
                names.push(format!("{li}.{kind}"));
            }
        }
        names
    }

    pub fn zero_grads(&self) -> Vec<Tensor<T>> {
        self.params.iter().map(Tensor::zeros_like).collect()
    }

    /// Weights and bias of layer `index`, if it has any.
    pub fn layer_params_mut(&mut self, index: usize) -> Option<(&mut Tensor<T>, &mut Tensor<T>)> {
        if self.layers.get(index)?.param_shapes().is_empty() {
            return None;
        }
        let o = self.offsets[index];
        let (w, rest) = self.params[o..].split_at_mut(1);
        Some((&mut w[0], &mut rest[0]))
    }

    pub fn forward(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let mut x = input.clone();
        for (li, layer) in self.layers.iter().enumerate() {
            x = self.apply(li, layer, x, None)?;
        }
        Ok(x)
    }

    pub fn forward_trace(&self, input: &Tensor<T>) -> Result<Trace<T>> {
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut x = input.clone();
        for (li, layer) in self.layers.iter().enumerate() {
            x = self.apply(li, layer, x, Some(&mut caches))?;
        }
        Ok(Trace { caches, output: x })
    }

    fn apply(
        &self,
        li: usize,
        layer: &LayerSpec,
        x: Tensor<T>,
        caches: Option<&mut Vec<Cache<T>>>,
    ) -> Result<Tensor<T>> {
        let o = self.offsets[li];
        let (out, cache) = match layer {
            LayerSpec::Conv2d { padding, .. } => {
                let (k, b) = (&self.params[o], &self.params[o + 1]);
                let geom = ConvGeometry::resolve(&x, k, b, *padding)?;
                let cols = ops::im2col(x.data(), &geom);
                let y = ops::conv2d_from_cols(&cols, k, b, &geom);
                (y, Cache::Conv { cols, geom })
            }
            LayerSpec::Dense { .. } => {
                let y = ops::dense_forward(&x, &self.params[o], &self.params[o + 1])?;
                (y, Cache::Dense { input: x })
            }
            LayerSpec::Relu | LayerSpec::Softplus | LayerSpec::Sigmoid => {
                let kind = layer.activation().expect("activation layer");
                (ops::activation(&x, kind), Cache::Act { input: x })
            }
            LayerSpec::Flatten => {
                let shape = x.shape().to_vec();
                let n = x.len();
                (x.reshape(&[n])?, Cache::Shape { shape })
            }
            LayerSpec::Reshape(target) => {
                let shape = x.shape().to_vec();
                (x.reshape(target)?, Cache::Shape { shape })
            }
            LayerSpec::Upsample(f) => (ops::upsample_nearest(&x, *f)?, Cache::Upsample),
        };
        if let Some(c) = caches {
            c.push(cache);
        }
        Ok(out)
    }

    /// Reverse pass: adds parameter gradients into `grads` and returns the
    /// input gradient when `need_input` is set.
    pub fn backward_into(
        &self,
        trace: &Trace<T>,
        grad_out: &Tensor<T>,
        grads: &mut [Tensor<T>],
        need_input: bool,
    ) -> Result<Option<Tensor<T>>> {
        grad_out.expect_shape("network_backward", trace.output.shape())?;
        if grads.len() != self.params.len() {
            return Err(Error::shape(
                "network_backward",
                "gradient count",
                self.params.len(),
                grads.len(),
            ));
        }
        let mut g = grad_out.clone();
        for li in (0..self.layers.len()).rev() {
            let o = self.offsets[li];
            let want_input = need_input || li > 0;
            let next = match (&self.layers[li], &trace.caches[li]) {
                (LayerSpec::Conv2d { .. }, Cache::Conv { cols, geom }) => {
                    let (gw, gb) = grads[o..].split_at_mut(1);
                    ops::conv2d_backward_cols(
                        cols,
                        &self.params[o],
                        &g,
                        geom,
                        &mut gw[0],
                        &mut gb[0],
                        want_input,
                    )?
                }
                (LayerSpec::Dense { .. }, Cache::Dense { input }) => {
                    let (gw, gb) = grads[o..].split_at_mut(1);
                    ops::dense_backward_into(
                        input,
                        &self.params[o],
                        &g,
                        &mut gw[0],
                        &mut gb[0],
                        want_input,
                    )?
                }
                (layer, Cache::Act { input }) => {
                    let kind = layer.activation().expect("activation layer");
                    Some(ops::activation_backward(input, &g, kind)?)
                }
                (_, Cache::Shape { shape }) => Some(g.reshape(shape)?),
                (LayerSpec::Upsample(f), Cache::Upsample) => {
                    Some(ops::upsample_nearest_backward(&g, *f)?)
                }
                _ => unreachable!("trace does not match layer stack"),
            };
            match next {
                Some(n) => g = n,
                None => return Ok(None),
            }
        }
        Ok(Some(g))
    }
}

/// Exact reverse-mode gradients of a layer stack at `input` for the given
/// upstream gradient. Returns `(parameter gradients, input gradient)`.
pub fn network_backward<T: Scalar>(
    layers: &[LayerSpec],
    params: &[Tensor<T>],
    input: &Tensor<T>,
    upstream_grad: &Tensor<T>,
) -> Result<(Vec<Tensor<T>>, Tensor<T>)> {
    let net = Network::from_params(layers.to_vec(), params.to_vec())?;
    let trace = net.forward_trace(input)?;
    let mut grads = net.zero_grads();
    let gi = net
        .backward_into(&trace, upstream_grad, &mut grads, true)?
        .expect("input gradient requested");
    Ok((grads, gi))
}
