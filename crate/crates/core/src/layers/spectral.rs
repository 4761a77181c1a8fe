//! Spectral parametrization `h = U Σ Vᵀ x`.

use super::dense::{check_input, check_output};
use crate::error::{Error, Result};
use crate::linalg::{dot, matmul, matmul_nt, matmul_tn, svd, Matrix, SvdResult};

/// Which formula the U/V column gradients follow.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradMode {
    /// True gradient, `(∂L/∂W) vᵢ σᵢ` and `σᵢ (∂L/∂W)ᵀ uᵢ`.
    Default,
    /// Direction-only gradient with the `σᵢ` factor dropped.
    Enhanced,
}

/// Which singular-vector columns to compute U/V gradients for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradScope {
    All,
    Active,
}

/// Spectral-layer gradients. `u` holds one column per entry of `columns`
/// (`m × c`); `vt` one row per entry (`c × n`); `sigma` covers every
/// singular value.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralGrad {
    pub columns: Vec<usize>,
    pub u: Matrix,
    pub sigma: Vec<f64>,
    pub vt: Matrix,
    pub mode: GradMode,
}

impl SpectralGrad {
    /// Enhanced `U`/`Vᵀ` gradients rescaled by `σᵢ` into true gradients.
    pub fn to_default(&self, sigma: &[f64]) -> SpectralGrad {
        if self.mode == GradMode::Default {
            return self.clone();
        }
        let s: Vec<f64> = self.columns.iter().map(|&i| sigma[i]).collect();
        SpectralGrad {
            columns: self.columns.clone(),
            u: self.u.scale_cols(&s),
            sigma: self.sigma.clone(),
            vt: self.vt.scale_rows(&s),
            mode: GradMode::Default,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct SpectralCache {
    x: Matrix,
    /// `Vᵀ x`
    z: Matrix,
}

/// Spectral linear layer holding `U (m×k)`, `σ (k)`, `Vᵀ (k×n)` with
/// `k = min(m, n)` and an ordered active index set of size `r`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralLinear {
    u: Matrix,
    sigma: Vec<f64>,
    vt: Matrix,
    active: Vec<usize>,
    cache: Option<SpectralCache>,
}

impl SpectralLinear {
    /// Decomposes `w` and marks the leading `rank` indices active.
    pub fn from_weight(w: &Matrix, rank: usize) -> Result<Self> {
        let s = svd(w)?;
        Self::from_svd(s, (0..rank).collect())
    }

    pub fn from_svd(s: SvdResult, active: Vec<usize>) -> Result<Self> {
        Self::from_parts(s.u, s.sigma, s.vt, active)
    }

    pub fn from_parts(u: Matrix, sigma: Vec<f64>, vt: Matrix, active: Vec<usize>) -> Result<Self> {
        let k = sigma.len();
        if u.cols() != k || vt.rows() != k {
            return Err(Error::Shape(format!(
                "spectral factors U {:?}, sigma {k}, Vt {:?} do not compose",
                u.shape(),
                vt.shape()
            )));
        }
        if sigma.iter().any(|&s| s < 0.0 || !s.is_finite()) {
            return Err(Error::InvalidArgument(
                "singular values must be finite and non-negative".into(),
            ));
        }
        validate_active(&active, k)?;
        Ok(Self {
            u,
            sigma,
            vt,
            active,
            cache: None,
        })
    }

    pub fn out_dim(&self) -> usize {
        self.u.rows()
    }

    pub fn in_dim(&self) -> usize {
        self.vt.cols()
    }

    /// Number of singular triplets, `min(m, n)`.
    pub fn capacity(&self) -> usize {
        self.sigma.len()
    }

    pub fn rank(&self) -> usize {
        self.active.len()
    }

    pub fn u(&self) -> &Matrix {
        &self.u
    }

    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    pub fn vt(&self) -> &Matrix {
        &self.vt
    }

    pub fn active(&self) -> &[usize] {
        &self.active
    }

    /// Mutable access to `(U, σ, Vᵀ)`; invalidates the forward cache.
    pub fn factors_mut(&mut self) -> (&mut Matrix, &mut Vec<f64>, &mut Matrix) {
        self.cache = None;
        (&mut self.u, &mut self.sigma, &mut self.vt)
    }

    pub fn set_active(&mut self, active: Vec<usize>) -> Result<()> {
        validate_active(&active, self.capacity())?;
        self.active = active;
        Ok(())
    }

    /// `U diag(σ) Vᵀ`, materialized.
    pub fn effective_weight(&self) -> Matrix {
        matmul(&self.u.scale_cols(&self.sigma), &self.vt).expect("consistent factors")
    }

    /// Replaces the factors with a fresh SVD of the represented matrix. The
    /// active set is kept.
    pub fn re_svd(&mut self) -> Result<()> {
        let s = svd(&self.effective_weight())?;
        self.u = s.u;
        self.sigma = s.sigma;
        self.vt = s.vt;
        self.cache = None;
        Ok(())
    }

    /// Right to left: `U (σ ⊙ (Vᵀ x))`.
    pub fn forward(&mut self, x: &Matrix) -> Result<Matrix> {
        check_input(x, self.in_dim())?;
        let z = matmul(&self.vt, x)?;
        let h = matmul(&self.u, &z.scale_rows(&self.sigma))?;
        self.cache = Some(SpectralCache { x: x.clone(), z });
        Ok(h)
    }

    /// Gradients for `U`, `σ`, `Vᵀ` and the input.
    ///
    /// Uses `∂L/∂W = G xᵀ` only through the projections `G (Vᵀx)ᵀ` and
    /// `(UᵀG) xᵀ`, so `∂L/∂W` itself is never formed.
    pub fn backward(
        &self,
        grad_h: &Matrix,
        mode: GradMode,
        scope: GradScope,
    ) -> Result<(SpectralGrad, Matrix)> {
        let cache = self.cache.as_ref().ok_or(Error::StaleCache)?;
        check_output(grad_h, self.out_dim(), cache.x.cols())?;
        let y = matmul_tn(&self.u, grad_h)?;
        let sigma_grad: Vec<f64> = (0..self.capacity())
            .map(|i| dot(y.row(i), cache.z.row(i)))
            .collect();

        let columns: Vec<usize> = match scope {
            GradScope::All => (0..self.capacity()).collect(),
            GradScope::Active => self.active.clone(),
        };
        let mut gu = matmul_nt(grad_h, &cache.z.select_rows(&columns))?;
        let mut gvt = matmul_nt(&y.select_rows(&columns), &cache.x)?;
        if mode == GradMode::Default {
            let s: Vec<f64> = columns.iter().map(|&i| self.sigma[i]).collect();
            gu = gu.scale_cols(&s);
            gvt = gvt.scale_rows(&s);
        }
        let grad_x = matmul_tn(&self.vt, &y.scale_rows(&self.sigma))?;
        Ok((
            SpectralGrad {
                columns,
                u: gu,
                sigma: sigma_grad,
                vt: gvt,
                mode,
            },
            grad_x,
        ))
    }

    pub(crate) fn clear_cache(&mut self) {
        self.cache = None;
    }
}

fn validate_active(active: &[usize], k: usize) -> Result<()> {
    let mut seen = vec![false; k];
    for &i in active {
        if i >= k {
            return Err(Error::InvalidArgument(format!(
                "active index {i} out of range 0..{k}"
            )));
        }
        if seen[i] {
            return Err(Error::DuplicateIndex(i));
        }
        seen[i] = true;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
        Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn zero_sigma_gives_zero_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut s = SpectralLinear::from_weight(&random(3, 5, &mut rng), 2).unwrap();
        s.factors_mut().1.iter_mut().for_each(|v| *v = 0.0);
        let h = s.forward(&random(5, 4, &mut rng)).unwrap();
        assert!(h.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_factors_are_identity_map() {
        let mut s =
            SpectralLinear::from_parts(Matrix::identity(3), vec![1.0; 3], Matrix::identity(3), vec![0])
                .unwrap();
        let x = Matrix::from_rows(&[&[1.0, 2.0], &[3.0, 4.0], &[5.0, 6.0]]);
        assert_eq!(s.forward(&x).unwrap(), x);
    }

    #[test]
    fn matches_dense_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for (m, n) in [(4, 6), (6, 4), (5, 5)] {
            let w = random(m, n, &mut rng);
            let x = random(n, 3, &mut rng);
            let mut s = SpectralLinear::from_weight(&w, 1).unwrap();
            let h = s.forward(&x).unwrap();
            assert!(h.max_abs_diff(&matmul(&w, &x).unwrap()) <= 1e-10);
        }
    }

    #[test]
    fn doubling_one_sigma_adds_its_rank_one_term() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut s = SpectralLinear::from_weight(&random(4, 4, &mut rng), 1).unwrap();
        let x = random(4, 1, &mut rng);
        let before = s.forward(&x).unwrap();
        let i = 2;
        let sigma_i = s.sigma()[i];
        let vx = dot(s.vt().row(i), x.as_slice());
        let ui = s.u().col(i);
        s.factors_mut().1[i] *= 2.0;
        let after = s.forward(&x).unwrap();
        for r in 0..4 {
            let expected = 2.0 * sigma_i * ui[r] * vx - sigma_i * ui[r] * vx;
            assert!((after.get(r, 0) - before.get(r, 0) - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn scalar_sigma_gradient() {
        // L = ½(σx − y)²
        let (sigma, x, y) = (0.7, 1.3, -0.4);
        let mut s = SpectralLinear::from_parts(
            Matrix::identity(1),
            vec![sigma],
            Matrix::identity(1),
            vec![0],
        )
        .unwrap();
        let h = s.forward(&Matrix::from_rows(&[&[x]])).unwrap();
        let g = Matrix::from_rows(&[&[h.get(0, 0) - y]]);
        let (grad, _) = s.backward(&g, GradMode::Default, GradScope::All).unwrap();
        assert!((grad.sigma[0] - (sigma * x - y) * x).abs() < 1e-15);
    }

    #[test]
    fn zero_sigma_kills_default_but_not_enhanced() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut s = SpectralLinear::from_weight(&random(4, 5, &mut rng), 2).unwrap();
        s.factors_mut().1[1] = 0.0;
        s.forward(&random(5, 3, &mut rng)).unwrap();
        let g = random(4, 3, &mut rng);
        let (d, _) = s.backward(&g, GradMode::Default, GradScope::All).unwrap();
        let (e, _) = s.backward(&g, GradMode::Enhanced, GradScope::All).unwrap();
        assert!(d.u.col(1).iter().all(|&v| v == 0.0));
        assert!(d.vt.row(1).iter().all(|&v| v == 0.0));
        assert!(e.u.col(1).iter().any(|&v| v != 0.0));
        assert!(e.vt.row(1).iter().any(|&v| v != 0.0));
    }

    #[test]
    fn enhanced_matches_dense_weight_gradient_projection() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut s = SpectralLinear::from_weight(&random(5, 7, &mut rng), 3).unwrap();
        s.set_active(vec![4, 0, 2]).unwrap();
        let x = random(7, 6, &mut rng);
        s.forward(&x).unwrap();
        let g = random(5, 6, &mut rng);
        let (e, _) = s.backward(&g, GradMode::Enhanced, GradScope::Active).unwrap();
        let dw = matmul_nt(&g, &x).unwrap();
        let v = s.vt().transpose();
        for (j, &i) in [4usize, 0, 2].iter().enumerate() {
            let oracle_u = matmul(&dw, &Matrix::from_vec(7, 1, v.col(i)).unwrap()).unwrap();
            let oracle_v =
                matmul_tn(&dw, &Matrix::from_vec(5, 1, s.u().col(i)).unwrap()).unwrap();
            for r in 0..5 {
                assert!((e.u.get(r, j) - oracle_u.get(r, 0)).abs() < 1e-12);
            }
            for c in 0..7 {
                assert!((e.vt.get(j, c) - oracle_v.get(c, 0)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn re_svd_preserves_map() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut s = SpectralLinear::from_weight(&random(4, 6, &mut rng), 2).unwrap();
        {
            let (u, _, vt) = s.factors_mut();
            *u = u.add(&random(4, 4, &mut rng).scale(0.1)).unwrap();
            *vt = vt.add(&random(4, 6, &mut rng).scale(0.1)).unwrap();
        }
        let before = s.effective_weight();
        s.re_svd().unwrap();
        let after = s.effective_weight();
        let rel = crate::linalg::frobenius_norm(&before.sub(&after).unwrap())
            / crate::linalg::frobenius_norm(&before);
        assert!(rel <= 1e-10);
        assert!(crate::linalg::orthogonality_error(s.u()) <= 1e-10);
    }

    #[test]
    fn active_validation() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut s = SpectralLinear::from_weight(&random(3, 3, &mut rng), 2).unwrap();
        assert!(matches!(s.set_active(vec![1, 1]), Err(Error::DuplicateIndex(1))));
        assert!(s.set_active(vec![0, 3]).is_err());
    }
}
