//! Layer kernels. Convolutions lower to im2col + GEMM, one image at a time, so
//! the reduction order for a given image never depends on the batch it is in.

use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Square-kernel convolution geometry for one image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub in_channels: usize,
    pub out_channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeom {
    pub fn out_height(&self) -> usize {
        (self.height + 2 * self.padding - self.kernel) / self.stride + 1
    }

    pub fn out_width(&self) -> usize {
        (self.width + 2 * self.padding - self.kernel) / self.stride + 1
    }

    fn patch_len(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    fn positions(&self) -> usize {
        self.out_height() * self.out_width()
    }

    /// A 1x1 stride-1 unpadded conv reads its input directly as the column matrix.
    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.padding == 0
    }

    fn validate(&self) -> Result<()> {
        if self.kernel == 0
            || self.stride == 0
            || self.height + 2 * self.padding < self.kernel
            || self.width + 2 * self.padding < self.kernel
        {
            return Err(Error::ShapeMismatch(format!("invalid conv geometry {self:?}")));
        }
        Ok(())
    }

    fn im2col<T: Scalar>(&self, input: &[T], col: &mut Vec<T>) {
        let (oh, ow) = (self.out_height(), self.out_width());
        let k = self.kernel;
        col.clear();
        col.resize(self.patch_len() * oh * ow, T::zero());
        for c in 0..self.in_channels {
            let plane = &input[c * self.height * self.width..(c + 1) * self.height * self.width];
            for ky in 0..k {
                for kx in 0..k {
                    let row = (c * k + ky) * k + kx;
                    let dst = &mut col[row * oh * ow..(row + 1) * oh * ow];
                    for oy in 0..oh {
                        let iy = (oy * self.stride + ky) as isize - self.padding as isize;
                        if iy < 0 || iy >= self.height as isize {
                            continue;
                        }
                        let src_row = &plane[iy as usize * self.width..(iy as usize + 1) * self.width];
                        for ox in 0..ow {
                            let ix = (ox * self.stride + kx) as isize - self.padding as isize;
                            if ix >= 0 && ix < self.width as isize {
                                dst[oy * ow + ox] = src_row[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }

    fn col2im_add<T: Scalar>(&self, col: &[T], grad_in: &mut [T]) {
        let (oh, ow) = (self.out_height(), self.out_width());
        let k = self.kernel;
        for c in 0..self.in_channels {
            let plane =
                &mut grad_in[c * self.height * self.width..(c + 1) * self.height * self.width];
            for ky in 0..k {
                for kx in 0..k {
                    let row = (c * k + ky) * k + kx;
                    let src = &col[row * oh * ow..(row + 1) * oh * ow];
                    for oy in 0..oh {
                        let iy = (oy * self.stride + ky) as isize - self.padding as isize;
                        if iy < 0 || iy >= self.height as isize {
                            continue;
                        }
                        for ox in 0..ow {
                            let ix = (ox * self.stride + kx) as isize - self.padding as isize;
                            if ix >= 0 && ix < self.width as isize {
                                let v = &mut plane[iy as usize * self.width + ix as usize];
                                *v = *v + src[oy * ow + ox];
                            }
                        }
                    }
                }
            }
        }
    }

    /// `out = W * col(input) + b` for a single image.
    pub fn forward_image<T: Scalar>(
        &self,
        input: &[T],
        weight: &[T],
        bias: &[T],
        out: &mut [T],
        scratch: &mut Vec<T>,
    ) {
        let p = self.positions();
        let kk = self.patch_len();
        for (o, chunk) in out.chunks_exact_mut(p).enumerate() {
            chunk.fill(bias[o]);
        }
        let col: &[T] = if self.is_pointwise() {
            input
        } else {
            self.im2col(input, scratch);
            scratch
        };
        T::gemm(
            self.out_channels,
            kk,
            p,
            T::one(),
            weight,
            kk as isize,
            1,
            col,
            p as isize,
            1,
            T::one(),
            out,
            p as isize,
            1,
        );
    }

    /// Accumulates weight/bias gradients and, when requested, the input
    /// gradient for a single image.
    #[allow(clippy::too_many_arguments)]
    pub fn backward_image<T: Scalar>(
        &self,
        input: &[T],
        weight: &[T],
        grad_out: &[T],
        grad_weight: &mut [T],
        grad_bias: &mut [T],
        grad_in: Option<&mut [T]>,
        scratch: &mut Vec<T>,
    ) {
        let p = self.positions();
        let kk = self.patch_len();
        for (o, chunk) in grad_out.chunks_exact(p).enumerate() {
            grad_bias[o] = chunk.iter().fold(grad_bias[o], |acc, &g| acc + g);
        }
        let col: &[T] = if self.is_pointwise() {
            input
        } else {
            self.im2col(input, scratch);
            scratch
        };
        // dW (O x KK) += dOut (O x P) * col^T (P x KK)
        T::gemm(
            self.out_channels,
            p,
            kk,
            T::one(),
            grad_out,
            p as isize,
            1,
            col,
            1,
            p as isize,
            T::one(),
            grad_weight,
            kk as isize,
            1,
        );
        let Some(grad_in) = grad_in else { return };
        if self.is_pointwise() {
            // dIn (C x P) += W^T (C x O) * dOut (O x P)
            T::gemm(
                kk,
                self.out_channels,
                p,
                T::one(),
                weight,
                1,
                kk as isize,
                grad_out,
                p as isize,
                1,
                T::one(),
                grad_in,
                p as isize,
                1,
            );
            return;
        }
        let mut dcol = vec![T::zero(); kk * p];
        T::gemm(
            kk,
            self.out_channels,
            p,
            T::one(),
            weight,
            1,
            kk as isize,
            grad_out,
            p as isize,
            1,
            T::zero(),
            &mut dcol,
            p as isize,
            1,
        );
        self.col2im_add(&dcol, grad_in);
    }
}

fn conv_geom<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<ConvGeom> {
    let (_, c, h, w) = input.dims4()?;
    let (o, wc, kh, kw) = weight.dims4()?;
    if wc != c || kh != kw || bias.shape() != [o] {
        return Err(Error::ShapeMismatch(format!(
            "conv input {:?}, weight {:?}, bias {:?}",
            input.shape(),
            weight.shape(),
            bias.shape()
        )));
    }
    let geom = ConvGeom {
        in_channels: c,
        out_channels: o,
        height: h,
        width: w,
        kernel: kh,
        stride,
        padding,
    };
    geom.validate()?;
    Ok(geom)
}

/// Batched 2-D convolution with zero padding.
pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let g = conv_geom(input, weight, bias, stride, padding)?;
    let n = input.shape()[0];
    let in_len = g.in_channels * g.height * g.width;
    let out_len = g.out_channels * g.out_height() * g.out_width();
    let mut out = Tensor::zeros(vec![n, g.out_channels, g.out_height(), g.out_width()]);
    let mut scratch = Vec::new();
    for (x, y) in input
        .data()
        .chunks_exact(in_len)
        .zip(out.data_mut().chunks_exact_mut(out_len))
    {
        g.forward_image(x, weight.data(), bias.data(), y, &mut scratch);
    }
    Ok(out)
}

/// Gradients of [`conv2d`]: `(d_input, d_weight, d_bias)`.
pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    padding: usize,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let g = conv_geom(input, weight, bias, stride, padding)?;
    let n = input.shape()[0];
    if grad_out.shape() != [n, g.out_channels, g.out_height(), g.out_width()] {
        return Err(Error::ShapeMismatch(format!(
            "conv grad_out {:?}",
            grad_out.shape()
        )));
    }
    let in_len = g.in_channels * g.height * g.width;
    let out_len = g.out_channels * g.out_height() * g.out_width();
    let mut d_in = Tensor::zeros(input.shape().to_vec());
    let mut d_w = Tensor::zeros(weight.shape().to_vec());
    let mut d_b = Tensor::zeros(bias.shape().to_vec());
    let mut scratch = Vec::new();
    for ((x, dy), dx) in input
        .data()
        .chunks_exact(in_len)
        .zip(grad_out.data().chunks_exact(out_len))
        .zip(d_in.data_mut().chunks_exact_mut(in_len))
    {
        g.backward_image(
            x,
            weight.data(),
            dy,
            d_w.data_mut(),
            d_b.data_mut(),
            Some(dx),
            &mut scratch,
        );
    }
    Ok((d_in, d_w, d_b))
}

pub fn relu<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    Tensor::new(
        input.shape().to_vec(),
        input.data().iter().map(|&v| v.max(T::zero())).collect(),
    )
    .expect("same shape")
}

/// Gradient through ReLU given its pre-activation input.
pub fn relu_backward<T: Scalar>(input: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    if input.shape() != grad_out.shape() {
        return Err(Error::ShapeMismatch("relu grad shape".into()));
    }
    Tensor::new(
        input.shape().to_vec(),
        input
            .data()
            .iter()
            .zip(grad_out.data())
            .map(|(&x, &g)| if x > T::zero() { g } else { T::zero() })
            .collect(),
    )
}

/// 2x2 stride-2 average pooling; a trailing odd row/column is dropped.
pub fn avg_pool2<T: Scalar>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, h, w) = input.dims4()?;
    let (oh, ow) = (h / 2, w / 2);
    if oh == 0 || ow == 0 {
        return Err(Error::ShapeMismatch(format!("cannot pool {h}x{w}")));
    }
    let quarter = T::from_f64(0.25);
    let src = input.data();
    let mut out = Tensor::zeros(vec![n, c, oh, ow]);
    for (plane, dst) in src
        .chunks_exact(h * w)
        .zip(out.data_mut().chunks_exact_mut(oh * ow))
    {
        for y in 0..oh {
            for x in 0..ow {
                let i = 2 * y * w + 2 * x;
                dst[y * ow + x] = (plane[i] + plane[i + 1] + plane[i + w] + plane[i + w + 1]) * quarter;
            }
        }
    }
    Ok(out)
}

pub fn avg_pool2_backward<T: Scalar>(
    input_shape: &[usize],
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    let &[n, c, h, w] = input_shape else {
        return Err(Error::ShapeMismatch("pool input must be NCHW".into()));
    };
    let (oh, ow) = (h / 2, w / 2);
    if grad_out.shape() != [n, c, oh, ow] {
        return Err(Error::ShapeMismatch("pool grad shape".into()));
    }
    let quarter = T::from_f64(0.25);
    let mut d_in = Tensor::zeros(input_shape.to_vec());
    for (dst, g) in d_in
        .data_mut()
        .chunks_exact_mut(h * w)
        .zip(grad_out.data().chunks_exact(oh * ow))
    {
        for y in 0..oh {
            for x in 0..ow {
                let v = g[y * ow + x] * quarter;
                let i = 2 * y * w + 2 * x;
                dst[i] = v;
                dst[i + 1] = v;
                dst[i + w] = v;
                dst[i + w + 1] = v;
            }
        }
    }
    Ok(d_in)
}

/// Per-channel spatial mean: `(n, c, h, w)` to `(n, c)`.
pub fn global_avg_pool<T: Scalar>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, h, w) = input.dims4()?;
    let inv = T::from_f64(1.0 / (h * w) as f64);
    let data = input
        .data()
        .chunks_exact(h * w)
        .map(|plane| plane.iter().fold(T::zero(), |a, &v| a + v) * inv)
        .collect();
    Tensor::new(vec![n, c], data)
}

pub fn global_avg_pool_backward<T: Scalar>(
    input_shape: &[usize],
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    let &[n, c, h, w] = input_shape else {
        return Err(Error::ShapeMismatch("pool input must be NCHW".into()));
    };
    if grad_out.shape() != [n, c] {
        return Err(Error::ShapeMismatch("global pool grad shape".into()));
    }
    let inv = T::from_f64(1.0 / (h * w) as f64);
    let mut d_in = Tensor::zeros(input_shape.to_vec());
    for (plane, &g) in d_in.data_mut().chunks_exact_mut(h * w).zip(grad_out.data()) {
        plane.fill(g * inv);
    }
    Ok(d_in)
}

/// `out = x W^T + b` with `x: (n, in)`, `W: (out, in)`.
pub fn linear<T: Scalar>(x: &Tensor<T>, weight: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, din) = x.dims2()?;
    let (dout, win) = weight.dims2()?;
    if win != din || bias.shape() != [dout] {
        return Err(Error::ShapeMismatch(format!(
            "linear input {:?}, weight {:?}, bias {:?}",
            x.shape(),
            weight.shape(),
            bias.shape()
        )));
    }
    let mut out = Tensor::zeros(vec![n, dout]);
    for row in out.data_mut().chunks_exact_mut(dout) {
        row.copy_from_slice(bias.data());
    }
    T::gemm(
        n,
        din,
        dout,
        T::one(),
        x.data(),
        din as isize,
        1,
        weight.data(),
        1,
        din as isize,
        T::one(),
        out.data_mut(),
        dout as isize,
        1,
    );
    Ok(out)
}

/// Gradients of [`linear`]: `(d_x, d_weight, d_bias)`.
pub fn linear_backward<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let (n, din) = x.dims2()?;
    let (dout, _) = weight.dims2()?;
    if grad_out.shape() != [n, dout] {
        return Err(Error::ShapeMismatch("linear grad shape".into()));
    }
    let mut dx = Tensor::zeros(vec![n, din]);
    T::gemm(
        n,
        dout,
        din,
        T::one(),
        grad_out.data(),
        dout as isize,
        1,
        weight.data(),
        din as isize,
        1,
        T::zero(),
        dx.data_mut(),
        din as isize,
        1,
    );
    let mut dw = Tensor::zeros(vec![dout, din]);
    T::gemm(
        dout,
        n,
        din,
        T::one(),
        grad_out.data(),
        1,
        dout as isize,
        x.data(),
        din as isize,
        1,
        T::zero(),
        dw.data_mut(),
        din as isize,
        1,
    );
    let mut db = Tensor::zeros(vec![dout]);
    for row in grad_out.data().chunks_exact(dout) {
        for (d, &g) in db.data_mut().iter_mut().zip(row) {
            *d = *d + g;
        }
    }
    Ok((dx, dw, db))
}
