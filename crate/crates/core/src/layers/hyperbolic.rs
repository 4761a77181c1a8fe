//! Lorentz-model spectral layer.
//!
//! The space-like part of the output is the spectral map `y = U Σ Vᵀ x`; the
//! time-like coordinate is `h₀ = sqrt(‖y‖² − 1/K)`, which places every output
//! column on the hyperboloid `−h₀² + ‖y‖² = 1/K`.

use super::spectral::{GradMode, GradScope, SpectralGrad, SpectralLinear};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

#[derive(Debug, Clone, PartialEq)]
pub struct HyperbolicSpectralLinear {
    inner: SpectralLinear,
    /// Row vector of the source construction. It cancels out of `h₀`, so it
    /// never affects the output and its gradient is identically zero.
    v: Vec<f64>,
    v_trainable: bool,
    curvature: f64,
    cache: Option<HyperCache>,
}

#[derive(Debug, Clone, PartialEq)]
struct HyperCache {
    y: Matrix,
    h0: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HyperbolicGrad {
    pub spectral: SpectralGrad,
    pub v: Vec<f64>,
}

impl HyperbolicSpectralLinear {
    pub fn new(inner: SpectralLinear, curvature: f64) -> Result<Self> {
        if !(curvature < 0.0) {
            return Err(Error::InvalidArgument(format!(
                "curvature must be negative, got {curvature}"
            )));
        }
        let n = inner.in_dim();
        Ok(Self {
            inner,
            v: vec![1.0; n],
            v_trainable: true,
            curvature,
            cache: None,
        })
    }

    pub fn inner(&self) -> &SpectralLinear {
        &self.inner
    }

    pub fn inner_mut(&mut self) -> &mut SpectralLinear {
        self.cache = None;
        self.inner.clear_cache();
        &mut self.inner
    }

    pub fn curvature(&self) -> f64 {
        self.curvature
    }

    pub fn v(&self) -> &[f64] {
        &self.v
    }

    pub fn v_mut(&mut self) -> &mut Vec<f64> {
        &mut self.v
    }

    pub fn v_trainable(&self) -> bool {
        self.v_trainable
    }

    pub fn set_v_trainable(&mut self, trainable: bool) {
        self.v_trainable = trainable;
    }

    pub fn out_dim(&self) -> usize {
        self.inner.out_dim() + 1
    }

    pub fn in_dim(&self) -> usize {
        self.inner.in_dim()
    }

    pub fn forward(&mut self, x: &Matrix) -> Result<Matrix> {
        let y = self.inner.forward(x)?;
        let (m, b) = y.shape();
        let inv_k = 1.0 / self.curvature;
        let h0: Vec<f64> = (0..b)
            .map(|c| {
                let sq: f64 = (0..m).map(|r| y.get(r, c).powi(2)).sum();
                (sq - inv_k).sqrt()
            })
            .collect();
        let h = Matrix::from_fn(m + 1, b, |r, c| if r == 0 { h0[c] } else { y.get(r - 1, c) });
        self.cache = Some(HyperCache { y, h0 });
        Ok(h)
    }

    pub fn backward(
        &self,
        grad_h: &Matrix,
        mode: GradMode,
        scope: GradScope,
    ) -> Result<(HyperbolicGrad, Matrix)> {
        let cache = self.cache.as_ref().ok_or(Error::StaleCache)?;
        let (m, b) = cache.y.shape();
        if grad_h.shape() != (m + 1, b) {
            return Err(Error::Shape(format!(
                "expected output gradient {}x{b}, got {}x{}",
                m + 1,
                grad_h.rows(),
                grad_h.cols()
            )));
        }
        // ∂h₀/∂y = y / h₀
        let grad_y = Matrix::from_fn(m, b, |r, c| {
            grad_h.get(r + 1, c) + grad_h.get(0, c) * cache.y.get(r, c) / cache.h0[c]
        });
        let (spectral, grad_x) = self.inner.backward(&grad_y, mode, scope)?;
        Ok((
            HyperbolicGrad {
                spectral,
                v: if self.v_trainable { vec![0.0; self.v.len()] } else { Vec::new() },
            },
            grad_x,
        ))
    }

    /// `U`, `σ`, `Vᵀ` and, when trainable, `v`.
    pub(crate) fn param_blocks_mut(&mut self) -> Vec<&mut [f64]> {
        self.cache = None;
        let Self {
            inner,
            v,
            v_trainable,
            ..
        } = self;
        let (u, s, vt) = inner.factors_mut();
        let mut blocks = vec![u.as_mut_slice(), s.as_mut_slice(), vt.as_mut_slice()];
        if *v_trainable {
            blocks.push(v.as_mut_slice());
        }
        blocks
    }

    pub(crate) fn clear_cache(&mut self) {
        self.cache = None;
        self.inner.clear_cache();
    }
}

/// `−h₀² + ‖h₁:‖²` for each column.
pub fn lorentz_inner_self(h: &Matrix) -> Vec<f64> {
    (0..h.cols())
        .map(|c| {
            let space: f64 = (1..h.rows()).map(|r| h.get(r, c).powi(2)).sum();
            space - h.get(0, c).powi(2)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_map_lands_on_origin() {
        let inner = SpectralLinear::from_parts(
            Matrix::identity(2),
            vec![0.0, 0.0],
            Matrix::identity(2),
            vec![0],
        )
        .unwrap();
        let mut l = HyperbolicSpectralLinear::new(inner, -1.0).unwrap();
        let h = l.forward(&Matrix::from_rows(&[&[0.3], &[-2.0]])).unwrap();
        assert_eq!(h.get(0, 0), 1.0);
        assert_eq!(h.get(1, 0), 0.0);
    }

    #[test]
    fn outputs_satisfy_lorentz_constraint() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let w = Matrix::from_fn(3, 5, |_, _| rng.random_range(-1.0..1.0));
        for k in [-1.0, -0.25, -4.0] {
            let mut l =
                HyperbolicSpectralLinear::new(SpectralLinear::from_weight(&w, 2).unwrap(), k)
                    .unwrap();
            let x = Matrix::from_fn(5, 7, |_, _| rng.random_range(-2.0..2.0));
            let h = l.forward(&x).unwrap();
            for v in lorentz_inner_self(&h) {
                assert!((v - 1.0 / k).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn non_negative_curvature_rejected() {
        let inner = SpectralLinear::from_weight(&Matrix::identity(2), 1).unwrap();
        assert!(HyperbolicSpectralLinear::new(inner.clone(), 0.0).is_err());
        assert!(HyperbolicSpectralLinear::new(inner, 1.0).is_err());
    }
}
