//! Depthwise separable Gaussian low-pass with reflect-101 borders, as a
//! differentiable operation. The kernel is a constant.

use super::{Backward, Scalar, Tensor};
use crate::error::{Error, Result};
use crate::imaging::reflect101;

fn rows_forward<T: Scalar>(src: &[T], h: usize, w: usize, taps: &[T], dst: &mut [T]) {
    let r = (taps.len() / 2) as isize;
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for x in 0..w {
            let mut acc = T::zero();
            for (t, &k) in taps.iter().enumerate() {
                acc = acc + k * row[reflect101(x as isize + t as isize - r, w)];
            }
            dst[y * w + x] = acc;
        }
    }
}

fn rows_adjoint<T: Scalar>(grad: &[T], h: usize, w: usize, taps: &[T], dst: &mut [T]) {
    let r = (taps.len() / 2) as isize;
    dst.iter_mut().for_each(|v| *v = T::zero());
    for y in 0..h {
        for x in 0..w {
            let g = grad[y * w + x];
            for (t, &k) in taps.iter().enumerate() {
                let i = y * w + reflect101(x as isize + t as isize - r, w);
                dst[i] = dst[i] + k * g;
            }
        }
    }
}

fn cols_forward<T: Scalar>(src: &[T], h: usize, w: usize, taps: &[T], dst: &mut [T]) {
    let r = (taps.len() / 2) as isize;
    dst.iter_mut().for_each(|v| *v = T::zero());
    for y in 0..h {
        for (t, &k) in taps.iter().enumerate() {
            let sy = reflect101(y as isize + t as isize - r, h);
            for x in 0..w {
                dst[y * w + x] = dst[y * w + x] + k * src[sy * w + x];
            }
        }
    }
}

fn cols_adjoint<T: Scalar>(grad: &[T], h: usize, w: usize, taps: &[T], dst: &mut [T]) {
    let r = (taps.len() / 2) as isize;
    dst.iter_mut().for_each(|v| *v = T::zero());
    for y in 0..h {
        for (t, &k) in taps.iter().enumerate() {
            let sy = reflect101(y as isize + t as isize - r, h);
            for x in 0..w {
                dst[sy * w + x] = dst[sy * w + x] + k * grad[y * w + x];
            }
        }
    }
}

struct GaussianBlur<T: Scalar> {
    input: Tensor<T>,
    taps: Vec<T>,
}

impl<T: Scalar> Backward<T> for GaussianBlur<T> {
    fn inputs(&self) -> Vec<&Tensor<T>> {
        vec![&self.input]
    }

    fn backward(&self, _out: &[T], grad: &[T], _needs: &[bool]) -> Vec<Option<Vec<T>>> {
        let s = self.input.shape();
        let (h, w) = (s[2], s[3]);
        let plane = h * w;
        let mut out = vec![T::zero(); grad.len()];
        let mut tmp = vec![T::zero(); plane];
        for (g, o) in grad.chunks(plane).zip(out.chunks_mut(plane)) {
            cols_adjoint(g, h, w, &self.taps, &mut tmp);
            rows_adjoint(&tmp, h, w, &self.taps, o);
        }
        vec![Some(out)]
    }
}

/// Filters every plane of `[N,C,H,W]` with the separable kernel whose 1-D
/// profile is `taps` (odd length).
pub fn gaussian_blur<T: Scalar>(input: &Tensor<T>, taps: &[f64]) -> Result<Tensor<T>> {
    let s = input.shape();
    if s.len() != 4 || taps.len().is_multiple_of(2) {
        return Err(Error::Shape(format!(
            "gaussian_blur: input {s:?}, {} taps",
            taps.len()
        )));
    }
    let (h, w) = (s[2], s[3]);
    let plane = h * w;
    let taps: Vec<T> = taps.iter().map(|&v| T::of(v)).collect();
    let mut out = vec![T::zero(); input.len()];
    {
        let x = input.data();
        let mut tmp = vec![T::zero(); plane];
        for (src, dst) in x.chunks(plane).zip(out.chunks_mut(plane)) {
            rows_forward(src, h, w, &taps, &mut tmp);
            cols_forward(&tmp, h, w, &taps, dst);
        }
    }
    Ok(Tensor::from_op(
        out,
        s.to_vec(),
        Box::new(GaussianBlur {
            input: input.clone(),
            taps,
        }),
    ))
}
