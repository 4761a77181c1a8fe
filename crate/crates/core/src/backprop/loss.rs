use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Loss value and its gradient with respect to the network output.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub value: f64,
    pub grad: Matrix,
}

/// A supervised target for one batch.
#[derive(Debug, Clone, PartialEq)]
pub enum Loss {
    Mse(Matrix),
    CrossEntropy(Vec<usize>),
}

impl Loss {
    pub fn eval(&self, output: &Matrix) -> Result<LossGrad> {
        match self {
            Loss::Mse(target) => mse(output, target),
            Loss::CrossEntropy(labels) => softmax_cross_entropy(output, labels),
        }
    }
}

/// `(1/B) Σ_b ½‖pred_b − target_b‖²` over the `B` columns.
pub fn mse(pred: &Matrix, target: &Matrix) -> Result<LossGrad> {
    if pred.shape() != target.shape() {
        return Err(Error::Shape(format!(
            "mse: prediction {:?} vs target {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    let batch = pred.cols().max(1) as f64;
    let diff = pred.sub(target)?;
    let value = 0.5 * diff.as_slice().iter().map(|d| d * d).sum::<f64>() / batch;
    Ok(LossGrad {
        value,
        grad: diff.scale(1.0 / batch),
    })
}

/// Mean negative log-likelihood of `labels` under a column-wise softmax.
pub fn softmax_cross_entropy(logits: &Matrix, labels: &[usize]) -> Result<LossGrad> {
    let (classes, batch) = logits.shape();
    if labels.len() != batch {
        return Err(Error::Shape(format!(
            "cross entropy: {} labels for {batch} columns",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::LabelOutOfRange {
            label: bad,
            classes,
        });
    }
    let inv_b = 1.0 / batch.max(1) as f64;
    let mut grad = Matrix::zeros(classes, batch);
    let mut total = 0.0;
    for (c, &label) in labels.iter().enumerate() {
        let max = (0..classes)
            .map(|r| logits.get(r, c))
            .fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = (0..classes).map(|r| (logits.get(r, c) - max).exp()).sum();
        let log_z = max + sum.ln();
        total += log_z - logits.get(label, c);
        for r in 0..classes {
            let p = (logits.get(r, c) - log_z).exp();
            let target = if r == label { 1.0 } else { 0.0 };
            grad.set(r, c, (p - target) * inv_b);
        }
    }
    Ok(LossGrad {
        value: total * inv_b,
        grad,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn uniform_logits_give_log_c() {
        let logits = Matrix::from_fn(7, 3, |_, _| 0.25);
        let lg = softmax_cross_entropy(&logits, &[0, 3, 6]).unwrap();
        assert!((lg.value - 7f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn perfect_prediction_mse() {
        let p = Matrix::from_rows(&[&[1.0, 2.0]]);
        let lg = mse(&p, &p).unwrap();
        assert_eq!(lg.value, 0.0);
        assert!(lg.grad.as_slice().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn label_out_of_range() {
        let logits = Matrix::zeros(3, 1);
        assert!(matches!(
            softmax_cross_entropy(&logits, &[3]),
            Err(Error::LabelOutOfRange { label: 3, classes: 3 })
        ));
    }

    #[test]
    fn large_logits_stay_finite() {
        let logits = Matrix::from_rows(&[&[1000.0], &[-1000.0]]);
        let lg = softmax_cross_entropy(&logits, &[1]).unwrap();
        assert!(lg.value.is_finite() && lg.grad.is_finite());
    }

    fn fd_matches(loss: &dyn Fn(&Matrix) -> LossGrad, x: &Matrix) {
        let analytic = loss(x).grad;
        let eps = 1e-6;
        for i in 0..x.rows() {
            for j in 0..x.cols() {
                let mut p = x.clone();
                p.set(i, j, x.get(i, j) + eps);
                let mut m = x.clone();
                m.set(i, j, x.get(i, j) - eps);
                let fd = (loss(&p).value - loss(&m).value) / (2.0 * eps);
                let err = (analytic.get(i, j) - fd).abs() / fd.abs().max(1.0);
                assert!(err <= 1e-6, "({i},{j}) analytic {} fd {fd}", analytic.get(i, j));
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let logits = Matrix::from_fn(5, 4, |_, _| rng.random_range(-3.0..3.0));
        let labels = vec![0, 4, 2, 2];
        fd_matches(&|z| softmax_cross_entropy(z, &labels).unwrap(), &logits);
        let target = Matrix::from_fn(5, 4, |_, _| rng.random_range(-1.0..1.0));
        fd_matches(&|z| mse(z, &target).unwrap(), &logits);
    }
}
