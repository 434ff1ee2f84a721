use alloc::vec::Vec;

use crate::error::{ensure, Result};
use crate::Tensor;

pub fn relu(input: &Tensor) -> Tensor {
    let mut out = input.clone();
    out.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
    out
}

/// Gradient of `relu` at `input`; the subgradient at 0 is 0.
pub fn relu_backward(input: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    ensure!(
        input.dims() == grad_out.dims(),
        "relu grad shape {:?} != input shape {:?}",
        grad_out.dims(),
        input.dims()
    );
    let data = input
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::from_vec(input.dims(), data)
}

/// Max-subtracted softmax probabilities.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| libm::exp(l - max)).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Cross-entropy of `softmax(logits)` against `label`, with its gradient
/// `p - onehot(label)`.
pub fn softmax_xent(logits: &Tensor, label: usize) -> Result<(f64, Tensor)> {
    let k = logits.len();
    ensure!(k > 0, "softmax over empty logits");
    ensure!(label < k, "label {} out of range for {} classes", label, k);
    let l = logits.data();
    let max = l.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = l.iter().map(|&v| libm::exp(v - max)).sum();
    let log_z = max + libm::log(sum);
    let loss = log_z - l[label];
    let mut grad: Vec<f64> = l.iter().map(|&v| libm::exp(v - log_z)).collect();
    grad[label] -= 1.0;
    Ok((loss, Tensor::from_vec(logits.dims(), grad)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn relu_values() {
        let y = relu(&Tensor::vector(vec![-1.0, 0.0, 2.0]));
        assert_eq!(y.data(), &[0.0, 0.0, 2.0]);
        let g = relu_backward(&Tensor::vector(vec![-1.0, 0.0, 2.0]), &Tensor::filled(&[3], 1.0)).unwrap();
        assert_eq!(g.data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn uniform_logits() {
        let (loss, g) = softmax_xent(&Tensor::zeros(&[4]), 2).unwrap();
        assert!((loss - 4f64.ln()).abs() < 1e-12);
        let expected = [0.25, 0.25, -0.75, 0.25];
        for (a, b) in g.data().iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn large_logits_do_not_overflow() {
        let (loss, g) = softmax_xent(&Tensor::vector(vec![1000.0, 0.0]), 0).unwrap();
        assert!(loss.abs() < 1e-12);
        assert!(g.is_finite());
    }

    #[test]
    fn label_out_of_range() {
        assert!(softmax_xent(&Tensor::zeros(&[3]), 3).is_err());
    }
}
