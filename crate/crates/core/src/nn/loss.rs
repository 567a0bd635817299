use serde::{Deserialize, Serialize};

use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Probabilities are clamped to `[CLAMP, 1 - CLAMP]` before taking logs.
pub const CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Per-class binary cross-entropy summed over classes:
    /// `-sum_i [y'_i ln y_i + (1 - y'_i) ln(1 - y_i)]`, averaged over the batch.
    #[default]
    SummedBinary,
    /// `-sum_i y'_i ln y_i`, averaged over the batch.
    Categorical,
}

/// Row-wise softmax with max subtraction.
pub fn softmax<T: Scalar>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    let (_, c) = logits.dims2()?;
    let mut out = logits.clone();
    for row in out.data_mut().chunks_exact_mut(c) {
        let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum = sum + *v;
        }
        for v in row.iter_mut() {
            *v = *v / sum;
        }
    }
    Ok(out)
}

/// Given `dL/dprobs`, returns `dL/dlogits`.
pub fn softmax_backward<T: Scalar>(probs: &Tensor<T>, grad_probs: &Tensor<T>) -> Result<Tensor<T>> {
    let (_, c) = probs.dims2()?;
    if probs.shape() != grad_probs.shape() {
        return Err(Error::ShapeMismatch("softmax grad shape".into()));
    }
    let mut out = Tensor::zeros(probs.shape().to_vec());
    for ((p, g), d) in probs
        .data()
        .chunks_exact(c)
        .zip(grad_probs.data().chunks_exact(c))
        .zip(out.data_mut().chunks_exact_mut(c))
    {
        let dot = p.iter().zip(g).fold(T::zero(), |a, (&p, &g)| a + p * g);
        for ((d, &p), &g) in d.iter_mut().zip(p).zip(g) {
            *d = p * (g - dot);
        }
    }
    Ok(out)
}

fn check_pair<T: Scalar>(probs: &Tensor<T>, target: &Tensor<T>) -> Result<(usize, usize)> {
    let (n, c) = probs.dims2()?;
    if target.shape() != probs.shape() || n == 0 {
        return Err(Error::ShapeMismatch(format!(
            "probs {:?} vs targets {:?}",
            probs.shape(),
            target.shape()
        )));
    }
    Ok((n, c))
}

/// Batch-mean loss of `probs` against one-hot `target`.
pub fn cross_entropy<T: Scalar>(probs: &Tensor<T>, target: &Tensor<T>, kind: LossKind) -> Result<T> {
    let (n, _) = check_pair(probs, target)?;
    let lo = T::from_f64(CLAMP);
    let hi = T::one() - lo;
    let mut total = T::zero();
    for (&p, &t) in probs.data().iter().zip(target.data()) {
        let p = p.max(lo).min(hi);
        let term = match kind {
            LossKind::SummedBinary => t * p.ln() + (T::one() - t) * (T::one() - p).ln(),
            LossKind::Categorical => t * p.ln(),
        };
        total = total - term;
    }
    Ok(total / T::from_f64(n as f64))
}

/// `dL/dprobs` of [`cross_entropy`]; zero where the clamp is active.
pub fn cross_entropy_grad<T: Scalar>(
    probs: &Tensor<T>,
    target: &Tensor<T>,
    kind: LossKind,
) -> Result<Tensor<T>> {
    let (n, _) = check_pair(probs, target)?;
    let lo = T::from_f64(CLAMP);
    let hi = T::one() - lo;
    let inv_n = T::from_f64(1.0 / n as f64);
    let data = probs
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| {
            if p < lo || p > hi {
                return T::zero();
            }
            let g = match kind {
                LossKind::SummedBinary => -t / p + (T::one() - t) / (T::one() - p),
                LossKind::Categorical => -t / p,
            };
            g * inv_n
        })
        .collect();
    Tensor::new(probs.shape().to_vec(), data)
}

/// One-hot rows for `labels` over `classes` classes.
pub fn one_hot<T: Scalar>(labels: &[usize], classes: usize) -> Result<Tensor<T>> {
    let mut t = Tensor::zeros(vec![labels.len(), classes]);
    for (row, &l) in t.data_mut().chunks_exact_mut(classes).zip(labels) {
        if l >= classes {
            return Err(Error::InvalidParam(format!("label {l} >= {classes} classes")));
        }
        row[l] = T::one();
    }
    Ok(t)
}
