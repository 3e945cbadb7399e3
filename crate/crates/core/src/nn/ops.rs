//! Forward and backward kernels for the closed set of layer kinds.
//!
//! Convolutions are cross-correlations (no kernel flip) computed through an
//! explicit column buffer, so forward and backward reduce to dense
//! row-times-matrix loops over contiguous memory.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// Zero padding of `k / 2` on every side; spatial extents are preserved.
    Same,
    /// No padding; each extent shrinks by `k - 1`.
    Valid,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Softplus,
    Sigmoid,
}

#[inline]
pub fn relu<T: Scalar>(t: T) -> T {
    t.max(T::zero())
}

/// `ln(1 + e^t)` evaluated as `max(t, 0) + ln(1 + e^{-|t|})`.
#[inline]
pub fn softplus<T: Scalar>(t: T) -> T {
    t.max(T::zero()) + (-t.abs()).exp().ln_1p()
}

#[inline]
pub fn sigmoid<T: Scalar>(t: T) -> T {
    if t >= T::zero() {
        T::one() / (T::one() + (-t).exp())
    } else {
        let e = t.exp();
        e / (T::one() + e)
    }
}

pub fn activation<T: Scalar>(x: &Tensor<T>, kind: Activation) -> Tensor<T> {
    match kind {
        Activation::Relu => x.map(relu),
        Activation::Softplus => x.map(softplus),
        Activation::Sigmoid => x.map(sigmoid),
    }
}

/// Gradient of an activation given its pre-activation input `x`.
pub fn activation_backward<T: Scalar>(
    x: &Tensor<T>,
    grad_out: &Tensor<T>,
    kind: Activation,
) -> Result<Tensor<T>> {
    match kind {
        Activation::Relu => x.zip_map(grad_out, "relu_backward", |v, g| {
            if v > T::zero() {
                g
            } else {
                T::zero()
            }
        }),
        Activation::Softplus => x.zip_map(grad_out, "softplus_backward", |v, g| g * sigmoid(v)),
        Activation::Sigmoid => x.zip_map(grad_out, "sigmoid_backward", |v, g| {
            let s = sigmoid(v);
            g * s * (T::one() - s)
        }),
    }
}

/// Geometry of one conv2d application, resolved from the operand shapes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub height: usize,
    pub width: usize,
    pub out_height: usize,
    pub out_width: usize,
    pub pad: usize,
}

impl ConvGeometry {
    pub fn resolve<T: Scalar>(
        input: &Tensor<T>,
        kernel: &Tensor<T>,
        bias: &Tensor<T>,
        padding: Padding,
    ) -> Result<Self> {
        const OP: &str = "conv2d";
        input.expect_rank(OP, 3)?;
        kernel.expect_rank(OP, 4)?;
        let [c_in, h, w] = [input.shape()[0], input.shape()[1], input.shape()[2]];
        let [c_out, kc_in, kh, kw] = [
            kernel.shape()[0],
            kernel.shape()[1],
            kernel.shape()[2],
            kernel.shape()[3],
        ];
        if kc_in != c_in {
            return Err(Error::shape(OP, "input channels", kc_in, c_in));
        }
        if kh != kw {
            return Err(Error::shape(OP, "kernel width", kh, kw));
        }
        if kh % 2 == 0 {
            return Err(Error::shape(OP, "kernel extent", "odd", kh));
        }
        if bias.shape() != [c_out] {
            return Err(Error::shape(
                OP,
                "bias length",
                c_out,
                format!("{:?}", bias.shape()),
            ));
        }
        let (pad, out_h, out_w) = match padding {
            Padding::Same => (kh / 2, h, w),
            Padding::Valid => {
                if h < kh {
                    return Err(Error::shape(OP, "height", format!(">= {kh}"), h));
                }
                if w < kh {
                    return Err(Error::shape(OP, "width", format!(">= {kh}"), w));
                }
                (0, h - kh + 1, w - kh + 1)
            }
        };
        Ok(Self {
            in_channels: c_in,
            out_channels: c_out,
            kernel: kh,
            height: h,
            width: w,
            out_height: out_h,
            out_width: out_w,
            pad,
        })
    }

    fn rows(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    fn pixels(&self) -> usize {
        self.out_height * self.out_width
    }

    /// Valid output-column range for kernel column `kx`.
    fn col_range(&self, kx: usize) -> (usize, usize) {
        let lo = self.pad.saturating_sub(kx);
        let hi = (self.width + self.pad).saturating_sub(kx).min(self.out_width);
        (lo, hi.max(lo))
    }
}

/// Unfolds `input` into a `[C_in·k·k, H'·W']` column buffer.
pub fn im2col<T: Scalar>(input: &[T], g: &ConvGeometry) -> Vec<T> {
    let (k, p) = (g.kernel, g.pixels());
    let mut cols = vec![T::zero(); g.rows() * p];
    for ci in 0..g.in_channels {
        let plane = &input[ci * g.height * g.width..(ci + 1) * g.height * g.width];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst = &mut cols[row * p..(row + 1) * p];
                let (lo, hi) = g.col_range(kx);
                for oy in 0..g.out_height {
                    let iy = oy + ky;
                    if iy < g.pad || iy - g.pad >= g.height {
                        continue;
                    }
                    let iy = iy - g.pad;
                    let src = &plane[iy * g.width..(iy + 1) * g.width];
                    let out_row = &mut dst[oy * g.out_width..(oy + 1) * g.out_width];
                    let shift = kx as isize - g.pad as isize;
                    for ox in lo..hi {
                        out_row[ox] = src[(ox as isize + shift) as usize];
                    }
                }
            }
        }
    }
    cols
}

/// Folds a column-buffer gradient back onto the input grid (adjoint of [`im2col`]).
pub fn col2im<T: Scalar>(cols: &[T], g: &ConvGeometry) -> Vec<T> {
    let (k, p) = (g.kernel, g.pixels());
    let mut out = vec![T::zero(); g.in_channels * g.height * g.width];
    for ci in 0..g.in_channels {
        let plane = &mut out[ci * g.height * g.width..(ci + 1) * g.height * g.width];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src = &cols[row * p..(row + 1) * p];
                let (lo, hi) = g.col_range(kx);
                for oy in 0..g.out_height {
                    let iy = oy + ky;
                    if iy < g.pad || iy - g.pad >= g.height {
                        continue;
                    }
                    let iy = iy - g.pad;
                    let dst = &mut plane[iy * g.width..(iy + 1) * g.width];
                    let in_row = &src[oy * g.out_width..(oy + 1) * g.out_width];
                    let shift = kx as isize - g.pad as isize;
                    for ox in lo..hi {
                        dst[(ox as isize + shift) as usize] += in_row[ox];
                    }
                }
            }
        }
    }
    out
}

/// Convolution on an already unfolded column buffer.
pub(crate) fn conv2d_from_cols<T: Scalar>(
    cols: &[T],
    kernel: &Tensor<T>,
    bias: &Tensor<T>,
    g: &ConvGeometry,
) -> Tensor<T> {
    let (rows, p) = (g.rows(), g.pixels());
    let mut out = vec![T::zero(); g.out_channels * p];
    let weights = kernel.data();
    for co in 0..g.out_channels {
        let dst = &mut out[co * p..(co + 1) * p];
        dst.iter_mut().for_each(|v| *v = bias.data()[co]);
        for r in 0..rows {
            let w = weights[co * rows + r];
            if w == T::zero() {
                continue;
            }
            axpy(w, &cols[r * p..(r + 1) * p], dst);
        }
    }
    Tensor {
        shape: vec![g.out_channels, g.out_height, g.out_width],
        data: out,
    }
    .checked()
}

pub fn conv2d_forward<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: &Tensor<T>,
    padding: Padding,
) -> Result<Tensor<T>> {
    let g = ConvGeometry::resolve(input, kernel, bias, padding)?;
    let cols = im2col(input.data(), &g);
    Ok(conv2d_from_cols(&cols, kernel, bias, &g))
}

/// Gradients of a conv2d application.
pub struct ConvGrads<T> {
    pub input: Tensor<T>,
    pub kernel: Tensor<T>,
    pub bias: Tensor<T>,
}

/// Accumulates kernel/bias gradients into `grad_kernel`/`grad_bias` and
/// returns the input gradient.
pub(crate) fn conv2d_backward_cols<T: Scalar>(
    cols: &[T],
    kernel: &Tensor<T>,
    grad_out: &Tensor<T>,
    g: &ConvGeometry,
    grad_kernel: &mut Tensor<T>,
    grad_bias: &mut Tensor<T>,
    need_input: bool,
) -> Result<Option<Tensor<T>>> {
    grad_out.expect_shape("conv2d_backward", &[g.out_channels, g.out_height, g.out_width])?;
    let (rows, p) = (g.rows(), g.pixels());
    let go = grad_out.data();
    let weights = kernel.data();
    let gk = grad_kernel.data_mut();
    for co in 0..g.out_channels {
        let gslice = &go[co * p..(co + 1) * p];
        grad_bias.data_mut()[co] += gslice.iter().copied().sum::<T>();
        for r in 0..rows {
            gk[co * rows + r] += dot(gslice, &cols[r * p..(r + 1) * p]);
        }
    }
    if !need_input {
        return Ok(None);
    }
    let mut gcols = vec![T::zero(); rows * p];
    for co in 0..g.out_channels {
        let gslice = &go[co * p..(co + 1) * p];
        for r in 0..rows {
            axpy(weights[co * rows + r], gslice, &mut gcols[r * p..(r + 1) * p]);
        }
    }
    let data = col2im(&gcols, g);
    Ok(Some(Tensor {
        shape: vec![g.in_channels, g.height, g.width],
        data,
    }))
}

pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: &Tensor<T>,
    padding: Padding,
    grad_out: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    let g = ConvGeometry::resolve(input, kernel, bias, padding)?;
    let cols = im2col(input.data(), &g);
    let mut gk = Tensor::zeros_like(kernel);
    let mut gb = Tensor::zeros_like(bias);
    let gi = conv2d_backward_cols(&cols, kernel, grad_out, &g, &mut gk, &mut gb, true)?
        .expect("input gradient requested");
    Ok(ConvGrads {
        input: gi,
        kernel: gk,
        bias: gb,
    })
}

fn dense_check<T: Scalar>(input: &Tensor<T>, weights: &Tensor<T>, bias: &Tensor<T>) -> Result<(usize, usize)> {
    const OP: &str = "dense";
    weights.expect_rank(OP, 2)?;
    let (m, n) = (weights.shape()[0], weights.shape()[1]);
    if input.len() != n {
        return Err(Error::shape(OP, "input width", n, input.len()));
    }
    if bias.shape() != [m] {
        return Err(Error::shape(OP, "bias length", m, format!("{:?}", bias.shape())));
    }
    Ok((m, n))
}

/// `W·x + b` for a vector input (any shape with `n` elements).
pub fn dense_forward<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (m, n) = dense_check(input, weights, bias)?;
    let x = input.data();
    let w = weights.data();
    let data = (0..m)
        .map(|i| dot(&w[i * n..(i + 1) * n], x) + bias.data()[i])
        .collect();
    Ok(Tensor {
        shape: vec![m],
        data,
    }
    .checked())
}

pub struct DenseGrads<T> {
    pub input: Tensor<T>,
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
}

pub(crate) fn dense_backward_into<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    grad_out: &Tensor<T>,
    grad_weights: &mut Tensor<T>,
    grad_bias: &mut Tensor<T>,
    need_input: bool,
) -> Result<Option<Tensor<T>>> {
    let (m, n) = (weights.shape()[0], weights.shape()[1]);
    if grad_out.len() != m {
        return Err(Error::shape("dense_backward", "upstream width", m, grad_out.len()));
    }
    let x = input.data();
    let g = grad_out.data();
    let gw = grad_weights.data_mut();
    for i in 0..m {
        if g[i] != T::zero() {
            axpy(g[i], x, &mut gw[i * n..(i + 1) * n]);
        }
    }
    grad_bias.add_assign(&Tensor::from_vec(g.to_vec()))?;
    if !need_input {
        return Ok(None);
    }
    let w = weights.data();
    let mut gx = vec![T::zero(); n];
    for i in 0..m {
        if g[i] != T::zero() {
            axpy(g[i], &w[i * n..(i + 1) * n], &mut gx);
        }
    }
    Ok(Some(Tensor {
        shape: input.shape().to_vec(),
        data: gx,
    }))
}

pub fn dense_backward<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<DenseGrads<T>> {
    dense_check(input, weights, bias)?;
    let mut gw = Tensor::zeros_like(weights);
    let mut gb = Tensor::zeros_like(bias);
    let gi = dense_backward_into(input, weights, grad_out, &mut gw, &mut gb, true)?
        .expect("input gradient requested");
    Ok(DenseGrads {
        input: gi,
        weights: gw,
        bias: gb,
    })
}

/// Nearest-neighbour upsampling of a `[C, H, W]` map by an integer factor.
pub fn upsample_nearest<T: Scalar>(input: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
    input.expect_rank("upsample", 3)?;
    let [c, h, w] = [input.shape()[0], input.shape()[1], input.shape()[2]];
    let (oh, ow) = (h * factor, w * factor);
    let src = input.data();
    let mut data = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        for oy in 0..oh {
            let row = &src[(ch * h + oy / factor) * w..(ch * h + oy / factor + 1) * w];
            for ox in 0..ow {
                data.push(row[ox / factor]);
            }
        }
    }
    Ok(Tensor {
        shape: vec![c, oh, ow],
        data,
    })
}

pub fn upsample_nearest_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    factor: usize,
) -> Result<Tensor<T>> {
    grad_out.expect_rank("upsample_backward", 3)?;
    let [c, oh, ow] = [grad_out.shape()[0], grad_out.shape()[1], grad_out.shape()[2]];
    if oh % factor != 0 || ow % factor != 0 {
        return Err(Error::shape(
            "upsample_backward",
            "extent",
            format!("multiple of {factor}"),
            format!("{oh}x{ow}"),
        ));
    }
    let (h, w) = (oh / factor, ow / factor);
    let mut out = Tensor::zeros(&[c, h, w]);
    let dst = out.data_mut();
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                dst[(ch * h + oy / factor) * w + ox / factor] +=
                    grad_out.data()[(ch * oh + oy) * ow + ox];
            }
        }
    }
    Ok(out)
}

/// Concatenates the flattened parts into one vector.
pub fn concat<T: Scalar>(parts: &[&Tensor<T>]) -> Tensor<T> {
    let mut data = Vec::with_capacity(parts.iter().map(|p| p.len()).sum());
    for p in parts {
        data.extend_from_slice(p.data());
    }
    Tensor::from_vec(data)
}

/// Adjoint of [`concat`]: cuts a vector into pieces of the given lengths.
pub fn split<T: Scalar>(whole: &Tensor<T>, lengths: &[usize]) -> Result<Vec<Tensor<T>>> {
    let total: usize = lengths.iter().sum();
    if total != whole.len() {
        return Err(Error::shape("split", "length", total, whole.len()));
    }
    let mut offset = 0;
    Ok(lengths
        .iter()
        .map(|&n| {
            let piece = Tensor::from_vec(whole.data()[offset..offset + n].to_vec());
            offset += n;
            piece
        })
        .collect())
}

#[inline]
pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    // Four independent accumulators let the optimiser vectorise the loop.
    let mut acc = [T::zero(); 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        for l in 0..4 {
            acc[l] += a[4 * i + l] * b[4 * i + l];
        }
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in 4 * chunks..a.len() {
        s += a[i] * b[i];
    }
    s
}

#[inline]
pub(crate) fn axpy<T: Scalar>(alpha: T, x: &[T], y: &mut [T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

impl<T: Scalar> Tensor<T> {
    #[inline]
    fn checked(self) -> Self {
        debug_assert!(self.is_finite(), "non-finite output {self:?}");
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::new(shape, v.to_vec()).unwrap()
    }

    #[test]
    fn identity_1x1_kernel() {
        let x = Tensor::<f64>::from_fn(&[1, 3, 4], |i| (i as f64).sin());
        let k = t(&[1, 1, 1, 1], &[1.0]);
        let b = t(&[1], &[0.0]);
        let y = conv2d_forward(&x, &k, &b, Padding::Same).unwrap();
        assert_eq!(y, x);
        let y = conv2d_forward(&x, &k, &b, Padding::Valid).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn averaging_constant_keeps_interior() {
        let x = Tensor::<f64>::full(&[1, 5, 5], 2.5);
        let k = Tensor::<f64>::full(&[1, 1, 3, 3], 1.0 / 9.0);
        let b = t(&[1], &[0.0]);
        let y = conv2d_forward(&x, &k, &b, Padding::Same).unwrap();
        assert_eq!(y.shape(), &[1, 5, 5]);
        for i in 1..4 {
            for j in 1..4 {
                assert!((y.data()[i * 5 + j] - 2.5).abs() < 1e-12);
            }
        }
        // corners see 4 of 9 taps
        assert!((y.data()[0] - 2.5 * 4.0 / 9.0).abs() < 1e-12);
    }

    #[test]
    fn valid_sum_of_3x3() {
        let x = t(&[1, 3, 3], &[1., 2., 3., 4., 5., 6., 7., 8., 9.]);
        let k = Tensor::<f64>::full(&[1, 1, 3, 3], 1.0);
        let b = t(&[1], &[0.0]);
        let y = conv2d_forward(&x, &k, &b, Padding::Valid).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1]);
        assert_eq!(y.data()[0], 45.0);
    }

    #[test]
    fn conv_is_cross_correlation() {
        // A one-hot kernel at the top-left tap reads the up-left neighbour.
        let x = Tensor::<f64>::from_fn(&[1, 3, 3], |i| i as f64);
        let mut k = Tensor::<f64>::zeros(&[1, 1, 3, 3]);
        k.data_mut()[0] = 1.0;
        let y = conv2d_forward(&x, &k, &t(&[1], &[0.0]), Padding::Same).unwrap();
        assert_eq!(y.data()[4], x.data()[0]);
        assert_eq!(y.data()[8], x.data()[4]);
    }

    #[test]
    fn conv_shape_errors_name_dimension() {
        let x = Tensor::<f64>::zeros(&[2, 4, 4]);
        let k = Tensor::<f64>::zeros(&[1, 3, 3, 3]);
        let err = conv2d_forward(&x, &k, &t(&[1], &[0.0]), Padding::Same).unwrap_err();
        assert!(err.to_string().contains("input channels"), "{err}");
        let k = Tensor::<f64>::zeros(&[1, 2, 2, 2]);
        let err = conv2d_forward(&x, &k, &t(&[1], &[0.0]), Padding::Same).unwrap_err();
        assert!(err.to_string().contains("kernel extent"), "{err}");
        let x = Tensor::<f64>::zeros(&[1, 2, 5]);
        let k = Tensor::<f64>::zeros(&[1, 1, 3, 3]);
        let err = conv2d_forward(&x, &k, &t(&[1], &[0.0]), Padding::Valid).unwrap_err();
        assert!(err.to_string().contains("height"), "{err}");
    }

    #[test]
    fn dense_examples() {
        let w = t(&[2, 2], &[1., 1., 1., -1.]);
        let b = t(&[2], &[0., 1.]);
        let y = dense_forward(&t(&[2], &[1., 2.]), &w, &b).unwrap();
        assert_eq!(y.data(), &[3.0, 0.0]);

        let eye = t(&[2, 2], &[1., 0., 0., 1.]);
        let x = t(&[2], &[0.3, -4.0]);
        assert_eq!(dense_forward(&x, &eye, &t(&[2], &[0., 0.])).unwrap(), x);

        let y = dense_forward(&t(&[2], &[0., 0.]), &w, &b).unwrap();
        assert_eq!(y, b);

        assert!(dense_forward(&t(&[3], &[0., 0., 0.]), &w, &b).is_err());
    }

    #[test]
    fn dense_weight_grad_is_outer_product() {
        let x = t(&[3], &[1., 2., 3.]);
        let w = Tensor::<f64>::zeros(&[2, 3]);
        let b = Tensor::<f64>::zeros(&[2]);
        let g = t(&[2], &[0.5, -1.0]);
        let grads = dense_backward(&x, &w, &b, &g).unwrap();
        assert_eq!(grads.weights.data(), &[0.5, 1.0, 1.5, -1.0, -2.0, -3.0]);
        assert_eq!(grads.bias.data(), g.data());
    }

    #[test]
    fn activation_values() {
        let x = t(&[3], &[0.0, -3.0, 3.0]);
        assert_eq!(activation(&x, Activation::Relu).data(), &[0.0, 0.0, 3.0]);
        assert_eq!(sigmoid(0.0f64), 0.5);
        assert!((softplus(0.0f64) - std::f64::consts::LN_2).abs() < 1e-12);
        assert!((softplus(0.0f32) - 0.693147).abs() < 1e-6);
    }

    #[test]
    fn softplus_is_overflow_safe() {
        for &v in &[-1e4f32, -50.0, 0.0, 50.0, 1e4] {
            let s = softplus(v);
            assert!(s.is_finite() && s >= 0.0, "{v} -> {s}");
        }
        assert_eq!(softplus(1e4f32), 1e4);
        assert!(sigmoid(-1e4f32).is_finite());
    }

    #[test]
    fn upsample_roundtrip_shapes() {
        let x = Tensor::<f64>::from_fn(&[2, 2, 3], |i| i as f64);
        let y = upsample_nearest(&x, 2).unwrap();
        assert_eq!(y.shape(), &[2, 4, 6]);
        assert_eq!(y.data()[0], y.data()[7]);
        let g = upsample_nearest_backward(&Tensor::full(&[2, 4, 6], 1.0), 2).unwrap();
        assert!(g.data().iter().all(|&v| v == 4.0));
    }

    #[test]
    fn concat_split_inverse() {
        let a = t(&[2], &[1., 2.]);
        let b = t(&[3], &[3., 4., 5.]);
        let c = concat(&[&a, &b]);
        let parts = split(&c, &[2, 3]).unwrap();
        assert_eq!(parts[0], a);
        assert_eq!(parts[1], b);
        assert!(split(&c, &[2, 2]).is_err());
    }
}
