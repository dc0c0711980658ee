//! Elementwise operations, reductions, channel concatenation and L1 loss.

use super::{Backward, Scalar, Tensor};
use crate::error::{Error, Result};

fn same_shape<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!(
            "{what}: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

struct Add<T: Scalar> {
    a: Tensor<T>,
    b: Tensor<T>,
    sign: T,
}

impl<T: Scalar> Backward<T> for Add<T> {
    fn inputs(&self) -> Vec<&Tensor<T>> {
        vec![&self.a, &self.b]
    }

    fn backward(&self, _out: &[T], grad: &[T], needs: &[bool]) -> Vec<Option<Vec<T>>> {
        let ga = needs[0].then(|| grad.to_vec());
        let gb = needs[1].then(|| grad.iter().map(|&g| g * self.sign).collect());
        vec![ga, gb]
    }
}

fn add_signed<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, sign: T) -> Result<Tensor<T>> {
    same_shape(a, b, "add")?;
    let data = a
        .data()
        .iter()
        .zip(b.data().iter())
        .map(|(&x, &y)| x + sign * y)
        .collect();
    Ok(Tensor::from_op(
        data,
        a.shape().to_vec(),
        Box::new(Add {
            a: a.clone(),
            b: b.clone(),
            sign,
        }),
    ))
}

pub fn add<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    add_signed(a, b, T::one())
}

pub fn sub<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    add_signed(a, b, -T::one())
}

struct Mul<T: Scalar> {
    a: Tensor<T>,
    b: Tensor<T>,
}

impl<T: Scalar> Backward<T> for Mul<T> {
    fn inputs(&self) -> Vec<&Tensor<T>> {
        vec![&self.a, &self.b]
    }

    fn backward(&self, _out: &[T], grad: &[T], needs: &[bool]) -> Vec<Option<Vec<T>>> {
        let times = |other: &Tensor<T>| -> Vec<T> {
            grad.iter().zip(other.data().iter()).map(|(&g, &v)| g * v).collect()
        };
        vec![needs[0].then(|| times(&self.b)), needs[1].then(|| times(&self.a))]
    }
}

/// Elementwise product.
pub fn mul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    same_shape(a, b, "mul")?;
    let data = a
        .data()
        .iter()
        .zip(b.data().iter())
        .map(|(&x, &y)| x * y)
        .collect();
    Ok(Tensor::from_op(
        data,
        a.shape().to_vec(),
        Box::new(Mul {
            a: a.clone(),
            b: b.clone(),
        }),
    ))
}

struct Affine<T: Scalar> {
    x: Tensor<T>,
    gain: T,
}

impl<T: Scalar> Backward<T> for Affine<T> {
    fn inputs(&self) -> Vec<&Tensor<T>> {
        vec![&self.x]
    }

    fn backward(&self, _out: &[T], grad: &[T], _needs: &[bool]) -> Vec<Option<Vec<T>>> {
        vec![Some(grad.iter().map(|&g| g * self.gain).collect())]
    }
}

/// `gain · x + offset`.
pub fn affine<T: Scalar>(x: &Tensor<T>, gain: f64, offset: f64) -> Tensor<T> {
    let (gain, offset) = (T::of(gain), T::of(offset));
    let data = x.data().iter().map(|&v| gain * v + offset).collect();
    Tensor::from_op(
        data,
        x.shape().to_vec(),
        Box::new(Affine { x: x.clone(), gain }),
    )
}

pub fn scale<T: Scalar>(x: &Tensor<T>, factor: f64) -> Tensor<T> {
    affine(x, factor, 0.0)
}

struct LeakyRelu<T: Scalar> {
    x: Tensor<T>,
    slope: T,
}

impl<T: Scalar> Backward<T> for LeakyRelu<T> {
    fn inputs(&self) -> Vec<&Tensor<T>> {
        vec![&self.x]
    }

    fn backward(&self, _out: &[T], grad: &[T], _needs: &[bool]) -> Vec<Option<Vec<T>>> {
        let x = self.x.data();
        let g = grad
            .iter()
            .zip(x.iter())
            .map(|(&g, &v)| if v > T::zero() { g } else { g * self.slope })
            .collect();
        vec![Some(g)]
    }

    fn kinks(&self) -> Option<Vec<bool>> {
        Some(self.x.data().iter().map(|&v| v > T::zero()).collect())
    }
}

/// `max(x, 0) + slope · min(x, 0)`; the derivative at exactly 0 is `slope`.
pub fn leaky_relu<T: Scalar>(x: &Tensor<T>, slope: f64) -> Tensor<T> {
    let slope = T::of(slope);
    let data = x
        .data()
        .iter()
        .map(|&v| if v > T::zero() { v } else { v * slope })
        .collect();
    Tensor::from_op(
        data,
        x.shape().to_vec(),
        Box::new(LeakyRelu { x: x.clone(), slope }),
    )
}

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    leaky_relu(x, 0.0)
}

struct Tanh<T: Scalar> {
    x: Tensor<T>,
}

impl<T: Scalar> Backward<T> for Tanh<T> {
    fn inputs(&self) -> Vec<&Tensor<T>> {
        vec![&self.x]
    }

    fn backward(&self, out: &[T], grad: &[T], _needs: &[bool]) -> Vec<Option<Vec<T>>> {
        let g = grad
            .iter()
            .zip(out)
            .map(|(&g, &y)| g * (T::one() - y * y))
            .collect();
        vec![Some(g)]
    }
}

pub fn tanh<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let data = x.data().iter().map(|v| v.tanh()).collect();
    Tensor::from_op(data, x.shape().to_vec(), Box::new(Tanh { x: x.clone() }))
}

struct Sum<T: Scalar> {
    x: Tensor<T>,
}

impl<T: Scalar> Backward<T> for Sum<T> {
    fn inputs(&self) -> Vec<&Tensor<T>> {
        vec![&self.x]
    }

    fn backward(&self, _out: &[T], grad: &[T], _needs: &[bool]) -> Vec<Option<Vec<T>>> {
        vec![Some(vec![grad[0]; self.x.len()])]
    }
}

/// Sum of all elements as a one-element tensor.
pub fn sum<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let total = x.data().iter().copied().sum();
    Tensor::from_op(vec![total], vec![1], Box::new(Sum { x: x.clone() }))
}

struct Concat<T: Scalar> {
    a: Tensor<T>,
    b: Tensor<T>,
}

impl<T: Scalar> Backward<T> for Concat<T> {
    fn inputs(&self) -> Vec<&Tensor<T>> {
        vec![&self.a, &self.b]
    }

    fn backward(&self, _out: &[T], grad: &[T], needs: &[bool]) -> Vec<Option<Vec<T>>> {
        let n = self.a.shape()[0];
        let plane_a = self.a.len() / n.max(1);
        let plane_b = self.b.len() / n.max(1);
        let mut ga = needs[0].then(|| Vec::with_capacity(self.a.len()));
        let mut gb = needs[1].then(|| Vec::with_capacity(self.b.len()));
        for chunk in grad.chunks((plane_a + plane_b).max(1)) {
            if let Some(g) = ga.as_mut() {
                g.extend_from_slice(&chunk[..plane_a]);
            }
            if let Some(g) = gb.as_mut() {
                g.extend_from_slice(&chunk[plane_a..]);
            }
        }
        vec![ga, gb]
    }
}

/// Concatenates `[N,C1,H,W]` and `[N,C2,H,W]` along the channel axis.
pub fn concat_channels<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa.len() != 4 || sb.len() != 4 || sa[0] != sb[0] || sa[2..] != sb[2..] {
        return Err(Error::Shape(format!("concat_channels: {sa:?} vs {sb:?}")));
    }
    let n = sa[0];
    let plane_a = a.len() / n.max(1);
    let plane_b = b.len() / n.max(1);
    let mut data = Vec::with_capacity(a.len() + b.len());
    {
        let (da, db) = (a.data(), b.data());
        for i in 0..n {
            data.extend_from_slice(&da[i * plane_a..(i + 1) * plane_a]);
            data.extend_from_slice(&db[i * plane_b..(i + 1) * plane_b]);
        }
    }
    Ok(Tensor::from_op(
        data,
        vec![n, sa[1] + sb[1], sa[2], sa[3]],
        Box::new(Concat {
            a: a.clone(),
            b: b.clone(),
        }),
    ))
}

struct L1<T: Scalar> {
    pred: Tensor<T>,
    target: Tensor<T>,
}

impl<T: Scalar> L1<T> {
    fn signs(&self) -> Vec<T> {
        let (p, t) = (self.pred.data(), self.target.data());
        p.iter()
            .zip(t.iter())
            .map(|(&a, &b)| {
                let r = a - b;
                if r > T::zero() {
                    T::one()
                } else if r < T::zero() {
                    -T::one()
                } else {
                    T::zero()
                }
            })
            .collect()
    }
}

impl<T: Scalar> Backward<T> for L1<T> {
    fn inputs(&self) -> Vec<&Tensor<T>> {
        vec![&self.pred, &self.target]
    }

    fn backward(&self, _out: &[T], grad: &[T], needs: &[bool]) -> Vec<Option<Vec<T>>> {
        let w = grad[0] / T::of(self.pred.len() as f64);
        let signs = self.signs();
        let gp = needs[0].then(|| signs.iter().map(|&s| s * w).collect());
        let gt = needs[1].then(|| signs.iter().map(|&s| -s * w).collect());
        vec![gp, gt]
    }

    fn kinks(&self) -> Option<Vec<bool>> {
        let (p, t) = (self.pred.data(), self.target.data());
        Some(p.iter().zip(t.iter()).map(|(&a, &b)| a > b).collect())
    }
}

/// Mean absolute difference. Both arguments may carry gradients; the
/// subgradient at a zero residual is 0.
pub fn l1_loss<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<Tensor<T>> {
    same_shape(pred, target, "l1_loss")?;
    if pred.is_empty() {
        return Err(Error::Shape("l1_loss on an empty tensor".into()));
    }
    let total: f64 = pred
        .data()
        .iter()
        .zip(target.data().iter())
        .map(|(&a, &b)| (a - b).abs().as_f64())
        .sum();
    let mean = T::of(total / pred.len() as f64);
    Ok(Tensor::from_op(
        vec![mean],
        vec![1],
        Box::new(L1 {
            pred: pred.clone(),
            target: target.clone(),
        }),
    ))
}
