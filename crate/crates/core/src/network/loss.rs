//! Softmax cross-entropy.

use crate::error::{invalid, shape_err, Error, Result};
use crate::tensor::Tensor;

pub fn log_softmax_row(row: &[f64]) -> Vec<f64> {
    let argmax = super::argmax(row);
    let max = row[argmax];
    // the max term contributes exactly 1; ln_1p keeps confident rows accurate
    let rest: f64 = row
        .iter()
        .enumerate()
        .filter(|&(k, _)| k != argmax)
        .map(|(_, v)| (v - max).exp())
        .sum();
    let log_z = rest.ln_1p();
    row.iter().map(|v| (v - max) - log_z).collect()
}

pub fn softmax_row(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

pub fn softmax_rows(logits: &Tensor) -> Tensor {
    let mut out = logits.clone();
    for r in 0..logits.rows() {
        let p = softmax_row(logits.row(r));
        out.row_mut(r).copy_from_slice(&p);
    }
    out
}

/// Mean negative log-likelihood over the batch and its gradient
/// `(softmax - onehot) / M` with respect to the logits.
pub fn loss_and_grad(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    if logits.rank() != 2 || logits.rows() != labels.len() || logits.rows() == 0 {
        return shape_err(
            "loss_and_grad",
            format!("logits {:?} with {} labels", logits.shape(), labels.len()),
        );
    }
    if !logits.is_finite() {
        return Err(Error::NonFinite("logits".into()));
    }
    let (m, k) = (logits.rows(), logits.row_len());
    if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
        return invalid(format!("label {bad} out of range for {k} classes"));
    }
    let mut nll = 0.0;
    let mut grad = Vec::with_capacity(m * k);
    for (r, &y) in labels.iter().enumerate() {
        let lp = log_softmax_row(logits.row(r));
        nll -= lp[y];
        for (c, l) in lp.iter().enumerate() {
            let onehot = if c == y { 1.0 } else { 0.0 };
            grad.push((l.exp() - onehot) / m as f64);
        }
    }
    Ok((nll / m as f64, Tensor::new(vec![m, k], grad)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::RngStream;

    #[test]
    #[allow(clippy::approx_constant)]
    fn uniform_logits_give_ln_k() {
        let logits = Tensor::full(&[3, 10], 0.7);
        let (nll, _) = loss_and_grad(&logits, &[0, 4, 9]).unwrap();
        assert!((nll - 10f64.ln()).abs() < 1e-15);
        assert!((nll - 2.302585).abs() < 1e-6);
    }

    #[test]
    fn confident_correct_logit() {
        let logits = Tensor::from_rows(&[vec![10.0, -10.0]]).unwrap();
        let (nll, _) = loss_and_grad(&logits, &[0]).unwrap();
        // -log sigmoid(20) = log1p(exp(-20))
        let oracle = (-20f64).exp().ln_1p();
        assert!((nll - oracle).abs() <= 1e-12 * oracle);
        assert!((nll - 2.0611536e-9).abs() < 1e-15);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = RngStream::new(21, 0);
        let logits = rng.normal_tensor(&[4, 5]).scale(2.0);
        let labels = [0, 3, 4, 1];
        let (_, g) = loss_and_grad(&logits, &labels).unwrap();
        let h = 1e-5;
        for j in 0..logits.len() {
            let mut p = logits.clone();
            p.values_mut()[j] += h;
            let mut q = logits.clone();
            q.values_mut()[j] -= h;
            let fd = (loss_and_grad(&p, &labels).unwrap().0 - loss_and_grad(&q, &labels).unwrap().0) / (2.0 * h);
            assert!((fd - g.values()[j]).abs() < 1e-7);
        }
    }

    #[test]
    fn bad_labels_are_rejected() {
        let logits = Tensor::zeros(&[2, 3]);
        assert!(loss_and_grad(&logits, &[0, 3]).is_err());
        assert!(loss_and_grad(&logits, &[0]).is_err());
        let mut nan = logits.clone();
        nan.values_mut()[0] = f64::NAN;
        assert!(loss_and_grad(&nan, &[0, 1]).is_err());
    }

    #[test]
    fn softmax_is_shift_invariant_and_normalized() {
        let p = softmax_row(&[1000.0, 1001.0, 999.0]);
        let q = softmax_row(&[0.0, 1.0, -1.0]);
        for (a, b) in p.iter().zip(&q) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }
}
