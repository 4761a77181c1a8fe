//! The linear parametrizations under comparison, plus bias and the
//! trainable-parameter accounting shared by all of them.

mod dense;
mod hyperbolic;
mod lora;
mod spectral;

pub use dense::DenseLinear;
pub use hyperbolic::{lorentz_inner_self, HyperbolicGrad, HyperbolicSpectralLinear};
pub use lora::{LoraGrad, LoraLinear};
pub use spectral::{GradMode, GradScope, SpectralGrad, SpectralLinear};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Uniform `(−√(1/fan_in), √(1/fan_in))` initialization for a `rows × fan_in`
/// weight.
pub fn kaiming_uniform<R: Rng + ?Sized>(rows: usize, fan_in: usize, rng: &mut R) -> Matrix {
    let bound = (1.0 / fan_in.max(1) as f64).sqrt();
    Matrix::from_fn(rows, fan_in, |_, _| rng.random_range(-bound..bound))
}

/// Per-output bias `h = x + b`, trained full-rank by every method.
#[derive(Debug, Clone, PartialEq)]
pub struct Bias {
    b: Vec<f64>,
    fresh: bool,
}

impl Bias {
    pub fn new(b: Vec<f64>) -> Self {
        Self { b, fresh: false }
    }

    pub fn zeros(n: usize) -> Self {
        Self::new(vec![0.0; n])
    }

    pub fn values(&self) -> &[f64] {
        &self.b
    }

    pub fn values_mut(&mut self) -> &mut Vec<f64> {
        self.fresh = false;
        &mut self.b
    }

    pub fn dim(&self) -> usize {
        self.b.len()
    }

    pub fn forward(&mut self, x: &Matrix) -> Result<Matrix> {
        dense::check_input(x, self.b.len())?;
        let mut h = x.clone();
        for (r, &bias) in self.b.iter().enumerate() {
            h.row_mut(r).iter_mut().for_each(|v| *v += bias);
        }
        self.fresh = true;
        Ok(h)
    }

    /// Returns `(∂L/∂b, ∂L/∂x)`.
    pub fn backward(&self, grad_h: &Matrix) -> Result<(Vec<f64>, Matrix)> {
        if !self.fresh {
            return Err(Error::StaleCache);
        }
        if grad_h.rows() != self.b.len() {
            return Err(Error::Shape(format!(
                "bias of length {} got gradient {}x{}",
                self.b.len(),
                grad_h.rows(),
                grad_h.cols()
            )));
        }
        let gb = (0..grad_h.rows())
            .map(|r| grad_h.row(r).iter().sum())
            .collect();
        Ok((gb, grad_h.clone()))
    }

    pub(crate) fn clear_cache(&mut self) {
        self.fresh = false;
    }
}

/// Weight parametrization of a linear layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    Dense,
    Lora,
    Spectral,
}

/// Trainable weight entries of an `m × n` layer at rank `r`: `mn` for
/// dense, `r(m+n)` for LoRA and `r(m+n) + min(m,n)` for spectral (the full
/// singular-value vector is always trained).
pub fn trainable_weight_params(kind: LayerKind, m: usize, n: usize, r: usize) -> usize {
    match kind {
        LayerKind::Dense => m * n,
        LayerKind::Lora => r * (m + n),
        LayerKind::Spectral => r * (m + n) + m.min(n),
    }
}

/// Fraction of an `m × n` dense layer's parameters that are trainable.
pub fn param_ratio(kind: LayerKind, m: usize, n: usize, r: usize) -> f64 {
    debug_assert!(r <= m.min(n));
    trainable_weight_params(kind, m, n, r) as f64 / (m * n) as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sst_ratio_at_768() {
        let g = param_ratio(LayerKind::Spectral, 768, 768, 64);
        assert!((g - (64.0 * 1536.0 + 768.0) / (768.0 * 768.0)).abs() < 1e-15);
        assert!((g - 0.16797).abs() < 5e-6);
    }

    #[test]
    fn dense_ratio_is_one() {
        assert_eq!(param_ratio(LayerKind::Dense, 7, 9, 3), 1.0);
    }

    #[test]
    fn ratio_ordering() {
        for m in 1..12 {
            for n in m..14 {
                for r in 1..m {
                    let lora = param_ratio(LayerKind::Lora, m, n, r);
                    let sst = param_ratio(LayerKind::Spectral, m, n, r);
                    let lora_next = param_ratio(LayerKind::Lora, m, n, r + 1);
                    assert!(lora < sst && sst < lora_next);
                }
            }
        }
    }

    #[test]
    fn eight_by_eight_counts() {
        assert_eq!(trainable_weight_params(LayerKind::Spectral, 8, 8, 2), 40);
        assert_eq!(trainable_weight_params(LayerKind::Lora, 8, 8, 2), 32);
    }

    #[test]
    fn bias_gradient_sums_batch() {
        let mut b = Bias::new(vec![1.0, -1.0]);
        let x = Matrix::from_rows(&[&[0.0, 1.0], &[2.0, 3.0]]);
        let h = b.forward(&x).unwrap();
        assert_eq!(h, Matrix::from_rows(&[&[1.0, 2.0], &[1.0, 2.0]]));
        let g = Matrix::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let (gb, gx) = b.backward(&g).unwrap();
        assert_eq!(gb, vec![3.0, 7.0]);
        assert_eq!(gx, g);
    }
}
