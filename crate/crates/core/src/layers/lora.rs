use rand::Rng;

use super::dense::{check_input, check_output};
use super::kaiming_uniform;
use crate::error::{Error, Result};
use crate::linalg::{matmul, matmul_nt, matmul_tn, Matrix};

/// Low-rank adapted linear map `h = (W₀ + B A) x`, without an α/r scale.
#[derive(Debug, Clone, PartialEq)]
pub struct LoraLinear {
    w0: Matrix,
    b: Matrix,
    a: Matrix,
    frozen: bool,
    cache: Option<LoraCache>,
}

#[derive(Debug, Clone, PartialEq)]
struct LoraCache {
    x: Matrix,
    ax: Matrix,
}

/// Gradients of a LoRA layer. `w0` is present only when the base is trainable.
#[derive(Debug, Clone, PartialEq)]
pub struct LoraGrad {
    pub w0: Option<Matrix>,
    pub b: Matrix,
    pub a: Matrix,
}

impl LoraLinear {
    /// `B = 0`, `A` fan-in scaled uniform; the base starts frozen.
    pub fn new<R: Rng + ?Sized>(w0: Matrix, rank: usize, rng: &mut R) -> Result<Self> {
        let (m, n) = w0.shape();
        if rank == 0 || rank > m.min(n) {
            return Err(Error::InvalidArgument(format!(
                "LoRA rank {rank} must be in 1..={}",
                m.min(n)
            )));
        }
        Ok(Self {
            w0,
            b: Matrix::zeros(m, rank),
            a: kaiming_uniform(rank, n, rng),
            frozen: true,
            cache: None,
        })
    }

    pub fn from_parts(w0: Matrix, b: Matrix, a: Matrix, frozen: bool) -> Result<Self> {
        if b.rows() != w0.rows() || a.cols() != w0.cols() || b.cols() != a.rows() {
            return Err(Error::Shape(format!(
                "LoRA parts W0 {:?}, B {:?}, A {:?} do not compose",
                w0.shape(),
                b.shape(),
                a.shape()
            )));
        }
        Ok(Self {
            w0,
            b,
            a,
            frozen,
            cache: None,
        })
    }

    pub fn rank(&self) -> usize {
        self.b.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.w0.rows()
    }

    pub fn in_dim(&self) -> usize {
        self.w0.cols()
    }

    pub fn base(&self) -> &Matrix {
        &self.w0
    }

    pub fn b(&self) -> &Matrix {
        &self.b
    }

    pub fn a(&self) -> &Matrix {
        &self.a
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn set_frozen(&mut self, frozen: bool) {
        self.frozen = frozen;
    }

    /// Mutable access to `(W₀, B, A)`; invalidates the forward cache.
    pub fn parts_mut(&mut self) -> (&mut Matrix, &mut Matrix, &mut Matrix) {
        self.cache = None;
        (&mut self.w0, &mut self.b, &mut self.a)
    }

    /// `W₀ + B A`.
    pub fn effective_weight(&self) -> Matrix {
        let mut w = matmul(&self.b, &self.a).expect("consistent factors");
        w.add_assign(&self.w0).expect("same shape");
        w
    }

    pub fn forward(&mut self, x: &Matrix) -> Result<Matrix> {
        check_input(x, self.in_dim())?;
        let ax = matmul(&self.a, x)?;
        let mut h = matmul(&self.w0, x)?;
        h.add_assign(&matmul(&self.b, &ax)?)?;
        self.cache = Some(LoraCache { x: x.clone(), ax });
        Ok(h)
    }

    /// `∂L/∂B = (∂L/∂W) Aᵀ`, `∂L/∂A = Bᵀ (∂L/∂W)` with `∂L/∂W = (∂L/∂h) xᵀ`,
    /// evaluated through the cached projections.
    pub fn backward(&self, grad_h: &Matrix) -> Result<(LoraGrad, Matrix)> {
        let cache = self.cache.as_ref().ok_or(Error::StaleCache)?;
        check_output(grad_h, self.out_dim(), cache.x.cols())?;
        let bt_g = matmul_tn(&self.b, grad_h)?;
        let grad_b = matmul_nt(grad_h, &cache.ax)?;
        let grad_a = matmul_nt(&bt_g, &cache.x)?;
        let grad_w0 = if self.frozen {
            None
        } else {
            Some(matmul_nt(grad_h, &cache.x)?)
        };
        let mut grad_x = matmul_tn(&self.w0, grad_h)?;
        grad_x.add_assign(&matmul_tn(&self.a, &bt_g)?)?;
        Ok((
            LoraGrad {
                w0: grad_w0,
                b: grad_b,
                a: grad_a,
            },
            grad_x,
        ))
    }

    /// Folds `B A` into the base, zeroes `B` and redraws `A`.
    pub fn merge<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let delta = matmul(&self.b, &self.a).expect("consistent factors");
        self.w0.add_assign(&delta).expect("same shape");
        self.b = Matrix::zeros(self.b.rows(), self.b.cols());
        self.a = kaiming_uniform(self.a.rows(), self.a.cols(), rng);
        self.cache = None;
    }

    pub(crate) fn clear_cache(&mut self) {
        self.cache = None;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
        Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn zero_b_means_base_forward_and_zero_a_grad() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w0 = random(4, 6, &mut rng);
        let x = random(6, 3, &mut rng);
        let mut l = LoraLinear::new(w0.clone(), 2, &mut rng).unwrap();
        let h = l.forward(&x).unwrap();
        assert!(h.max_abs_diff(&matmul(&w0, &x).unwrap()) <= 1e-15);
        let g = random(4, 3, &mut rng);
        let (grads, _) = l.backward(&g).unwrap();
        assert!(grads.a.as_slice().iter().all(|&v| v == 0.0));
        assert!(grads.w0.is_none());
    }

    #[test]
    fn identity_b_passes_full_weight_grad_to_a() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 3;
        let w0 = random(n, n, &mut rng);
        let mut l = LoraLinear::from_parts(w0, Matrix::identity(n), Matrix::zeros(n, n), true)
            .unwrap();
        let x = random(n, 4, &mut rng);
        l.forward(&x).unwrap();
        let g = random(n, 4, &mut rng);
        let (grads, _) = l.backward(&g).unwrap();
        let dw = matmul_nt(&g, &x).unwrap();
        assert!(grads.a.max_abs_diff(&dw) <= 1e-15);
    }

    #[test]
    fn merge_preserves_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w0 = random(5, 7, &mut rng);
        let b = random(5, 2, &mut rng);
        let a = random(2, 7, &mut rng);
        let mut l = LoraLinear::from_parts(w0.clone(), b.clone(), a.clone(), true).unwrap();
        let x = random(7, 4, &mut rng);
        let before = l.forward(&x).unwrap();
        l.merge(&mut rng);
        let after = l.forward(&x).unwrap();
        assert!(before.max_abs_diff(&after) <= 1e-12);
        let expected = w0.add(&matmul(&b, &a).unwrap()).unwrap();
        assert!(l.base().max_abs_diff(&expected) <= 1e-15);
        assert!(l.b().as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn merging_zero_b_leaves_base() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let w0 = random(3, 3, &mut rng);
        let mut l = LoraLinear::new(w0.clone(), 1, &mut rng).unwrap();
        l.merge(&mut rng);
        l.merge(&mut rng);
        assert_eq!(l.base(), &w0);
    }

    #[test]
    fn reinit_is_fan_in_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut l = LoraLinear::new(Matrix::zeros(4, 16), 3, &mut rng).unwrap();
        l.merge(&mut rng);
        let bound = (1.0f64 / 16.0).sqrt();
        assert!(l.a().as_slice().iter().all(|v| v.abs() <= bound));
    }

    #[test]
    fn rank_validated() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        assert!(LoraLinear::new(Matrix::zeros(2, 5), 3, &mut rng).is_err());
    }
}
