//! Strided 2-D convolution and its transpose, lowered to GEMM via im2col.

use super::{Backward, Scalar, Tensor};
use crate::error::{Error, Result};

/// `floor((size + 2·padding − kernel) / stride) + 1`, or `None` when the
/// kernel does not fit.
pub fn conv_output_size(size: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = size + 2 * padding;
    if stride == 0 || padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

/// `(size − 1)·stride − 2·padding + kernel`, or `None` when negative.
pub fn conv_transpose_output_size(
    size: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
) -> Option<usize> {
    let full = (size.checked_sub(1)?) * stride + kernel;
    full.checked_sub(2 * padding).filter(|&v| v > 0)
}

#[derive(Clone, Copy, Debug)]
struct Geometry {
    channels: usize,
    height: usize,
    width: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    out_h: usize,
    out_w: usize,
}

impl Geometry {
    fn rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    fn cols(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Calls `f(column_index, image_index)` for every in-bounds tap.
    #[inline]
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize)) {
        let (k, s, p) = (self.kernel, self.stride, self.padding as isize);
        for c in 0..self.channels {
            for ki in 0..k {
                for kj in 0..k {
                    let row = (c * k + ki) * k + kj;
                    for oy in 0..self.out_h {
                        let iy = (oy * s + ki) as isize - p;
                        if iy < 0 || iy >= self.height as isize {
                            continue;
                        }
                        let src_row = (c * self.height + iy as usize) * self.width;
                        let dst_row = row * self.cols() + oy * self.out_w;
                        for ox in 0..self.out_w {
                            let ix = (ox * s + kj) as isize - p;
                            if ix < 0 || ix >= self.width as isize {
                                continue;
                            }
                            f(dst_row + ox, src_row + ix as usize);
                        }
                    }
                }
            }
        }
    }

    fn im2col<T: Scalar>(&self, src: &[T], cols: &mut [T]) {
        cols.iter_mut().for_each(|v| *v = T::zero());
        self.for_each_tap(|c, s| cols[c] = src[s]);
    }

    fn col2im<T: Scalar>(&self, cols: &[T], dst: &mut [T]) {
        self.for_each_tap(|c, d| dst[d] = dst[d] + cols[c]);
    }
}

fn expect_rank4<T: Scalar>(t: &Tensor<T>, what: &str) -> Result<[usize; 4]> {
    match t.shape() {
        &[a, b, c, d] => Ok([a, b, c, d]),
        other => Err(Error::Shape(format!("{what} must be rank 4, got {other:?}"))),
    }
}

fn add_bias<T: Scalar>(out: &mut [T], bias: &[T], plane: usize) {
    for (chunk, &b) in out.chunks_mut(plane).zip(bias.iter().cycle()) {
        chunk.iter_mut().for_each(|v| *v = *v + b);
    }
}

fn bias_grad<T: Scalar>(grad: &[T], channels: usize, plane: usize) -> Vec<T> {
    let mut gb = vec![T::zero(); channels];
    for (i, chunk) in grad.chunks(plane).enumerate() {
        gb[i % channels] = gb[i % channels] + chunk.iter().copied().sum();
    }
    gb
}

struct Conv2d<T: Scalar> {
    input: Tensor<T>,
    weight: Tensor<T>,
    bias: Tensor<T>,
    geo: Geometry,
    batch: usize,
    out_channels: usize,
}

impl<T: Scalar> Backward<T> for Conv2d<T> {
    fn inputs(&self) -> Vec<&Tensor<T>> {
        vec![&self.input, &self.weight, &self.bias]
    }

    fn backward(&self, _out: &[T], grad: &[T], needs: &[bool]) -> Vec<Option<Vec<T>>> {
        let g = self.geo;
        let (rows, cols) = (g.rows(), g.cols());
        let in_plane = g.channels * g.height * g.width;
        let out_plane = self.out_channels * cols;
        let x = self.input.data();
        let w = self.weight.data();

        let mut gx = needs[0].then(|| vec![T::zero(); x.len()]);
        let mut gw = needs[1].then(|| vec![T::zero(); w.len()]);
        let mut buf = vec![T::zero(); rows * cols];
        for n in 0..self.batch {
            let go = &grad[n * out_plane..(n + 1) * out_plane];
            if let Some(gw) = gw.as_mut() {
                g.im2col(&x[n * in_plane..(n + 1) * in_plane], &mut buf);
                T::gemm(self.out_channels, cols, rows, go, false, &buf, true, gw, true);
            }
            if let Some(gx) = gx.as_mut() {
                T::gemm(rows, self.out_channels, cols, &w, true, go, false, &mut buf, false);
                g.col2im(&buf, &mut gx[n * in_plane..(n + 1) * in_plane]);
            }
        }
        let gb = needs[2].then(|| bias_grad(grad, self.out_channels, cols));
        vec![gx, gw, gb]
    }
}

/// Cross-correlation of `[N,C_in,H,W]` with `[C_out,C_in,k,k]` plus a
/// per-channel bias.
pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let [n, c_in, h, w] = expect_rank4(input, "conv2d input")?;
    let [c_out, wc_in, kh, kw] = expect_rank4(weight, "conv2d weight")?;
    if wc_in != c_in || kh != kw || bias.shape() != [c_out] {
        return Err(Error::Shape(format!(
            "conv2d: input {:?}, weight {:?}, bias {:?}",
            input.shape(),
            weight.shape(),
            bias.shape()
        )));
    }
    let (Some(out_h), Some(out_w)) = (
        conv_output_size(h, kh, stride, padding),
        conv_output_size(w, kw, stride, padding),
    ) else {
        return Err(Error::Shape(format!(
            "conv2d: kernel {kh} stride {stride} padding {padding} does not fit {h}x{w}"
        )));
    };
    let geo = Geometry {
        channels: c_in,
        height: h,
        width: w,
        kernel: kh,
        stride,
        padding,
        out_h,
        out_w,
    };
    let (rows, cols) = (geo.rows(), geo.cols());
    let in_plane = c_in * h * w;
    let out_plane = c_out * cols;
    let mut out = vec![T::zero(); n * out_plane];
    {
        let x = input.data();
        let wt = weight.data();
        let mut buf = vec![T::zero(); rows * cols];
        for b in 0..n {
            geo.im2col(&x[b * in_plane..(b + 1) * in_plane], &mut buf);
            T::gemm(
                c_out,
                rows,
                cols,
                &wt,
                false,
                &buf,
                false,
                &mut out[b * out_plane..(b + 1) * out_plane],
                false,
            );
        }
        add_bias(&mut out, &bias.data(), cols);
    }
    Ok(Tensor::from_op(
        out,
        vec![n, c_out, out_h, out_w],
        Box::new(Conv2d {
            input: input.clone(),
            weight: weight.clone(),
            bias: bias.clone(),
            geo,
            batch: n,
            out_channels: c_out,
        }),
    ))
}

struct ConvTranspose2d<T: Scalar> {
    input: Tensor<T>,
    weight: Tensor<T>,
    bias: Tensor<T>,
    /// Geometry of the forward convolution that this operator transposes:
    /// it maps the *output* grid onto the input grid.
    geo: Geometry,
    batch: usize,
    in_channels: usize,
}

impl<T: Scalar> Backward<T> for ConvTranspose2d<T> {
    fn inputs(&self) -> Vec<&Tensor<T>> {
        vec![&self.input, &self.weight, &self.bias]
    }

    fn backward(&self, _out: &[T], grad: &[T], needs: &[bool]) -> Vec<Option<Vec<T>>> {
        let g = self.geo;
        let (rows, cols) = (g.rows(), g.cols());
        let out_plane = g.channels * g.height * g.width;
        let in_plane = self.in_channels * cols;
        let x = self.input.data();
        let w = self.weight.data();

        let mut gx = needs[0].then(|| vec![T::zero(); x.len()]);
        let mut gw = needs[1].then(|| vec![T::zero(); w.len()]);
        let mut buf = vec![T::zero(); rows * cols];
        if gx.is_some() || gw.is_some() {
            for n in 0..self.batch {
                g.im2col(&grad[n * out_plane..(n + 1) * out_plane], &mut buf);
                let xn = &x[n * in_plane..(n + 1) * in_plane];
                if let Some(gx) = gx.as_mut() {
                    T::gemm(
                        self.in_channels,
                        rows,
                        cols,
                        &w,
                        false,
                        &buf,
                        false,
                        &mut gx[n * in_plane..(n + 1) * in_plane],
                        false,
                    );
                }
                if let Some(gw) = gw.as_mut() {
                    T::gemm(self.in_channels, cols, rows, xn, false, &buf, true, gw, true);
                }
            }
        }
        let gb = needs[2].then(|| bias_grad(grad, g.channels, g.height * g.width));
        vec![gx, gw, gb]
    }
}

/// Fractionally strided convolution of `[N,C_in,H,W]` with
/// `[C_in,C_out,k,k]`: the adjoint of [`conv2d`] with the same weight,
/// plus a per-channel bias.
pub fn conv2d_transpose<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let [n, c_in, h, w] = expect_rank4(input, "conv2d_transpose input")?;
    let [wc_in, c_out, kh, kw] = expect_rank4(weight, "conv2d_transpose weight")?;
    if wc_in != c_in || kh != kw || bias.shape() != [c_out] || stride == 0 {
        return Err(Error::Shape(format!(
            "conv2d_transpose: input {:?}, weight {:?}, bias {:?}, stride {stride}",
            input.shape(),
            weight.shape(),
            bias.shape()
        )));
    }
    let (Some(out_h), Some(out_w)) = (
        conv_transpose_output_size(h, kh, stride, padding),
        conv_transpose_output_size(w, kw, stride, padding),
    ) else {
        return Err(Error::Shape(format!(
            "conv2d_transpose: kernel {kh} stride {stride} padding {padding} gives an empty output for {h}x{w}"
        )));
    };
    let geo = Geometry {
        channels: c_out,
        height: out_h,
        width: out_w,
        kernel: kh,
        stride,
        padding,
        out_h: h,
        out_w: w,
    };
    let (rows, cols) = (geo.rows(), geo.cols());
    let in_plane = c_in * cols;
    let out_plane = c_out * out_h * out_w;
    let mut out = vec![T::zero(); n * out_plane];
    {
        let x = input.data();
        let wt = weight.data();
        let mut buf = vec![T::zero(); rows * cols];
        for b in 0..n {
            T::gemm(
                rows,
                c_in,
                cols,
                &wt,
                true,
                &x[b * in_plane..(b + 1) * in_plane],
                false,
                &mut buf,
                false,
            );
            geo.col2im(&buf, &mut out[b * out_plane..(b + 1) * out_plane]);
        }
        add_bias(&mut out, &bias.data(), out_h * out_w);
    }
    Ok(Tensor::from_op(
        out,
        vec![n, c_out, out_h, out_w],
        Box::new(ConvTranspose2d {
            input: input.clone(),
            weight: weight.clone(),
            bias: bias.clone(),
            geo,
            batch: n,
            in_channels: c_in,
        }),
    ))
}
