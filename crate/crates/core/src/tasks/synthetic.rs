//! Low-rank matrix recovery: learn `W*` from pairs `(x, W* x + noise)`.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, matmul, matmul_nt, Matrix};

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticRecoveryTask {
    target: Matrix,
    u0: Matrix,
    v0: Matrix,
    spectrum: Vec<f64>,
    noise: f64,
}

/// Builds `W* = U₀ diag(spectrum) V₀ᵀ` from random orthonormal `U₀ (m×k)` and
/// `V₀ (n×k)`, `k = min(m, n)`.
pub fn gen_synthetic(m: usize, n: usize, spectrum: &[f64], seed: u64) -> Result<SyntheticRecoveryTask> {
    let k = m.min(n);
    if spectrum.len() != k {
        return Err(Error::InvalidArgument(format!(
            "spectrum has {} values, expected min({m}, {n}) = {k}",
            spectrum.len()
        )));
    }
    if spectrum.iter().any(|s| !s.is_finite() || *s < 0.0) {
        return Err(Error::InvalidArgument("spectrum entries must be finite and non-negative".into()));
    }
    if spectrum.windows(2).any(|w| w[0] < w[1]) {
        return Err(Error::InvalidArgument("spectrum must be sorted descending".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u0 = random_orthonormal(m, k, &mut rng);
    let v0 = random_orthonormal(n, k, &mut rng);
    let target = matmul_nt(&u0.scale_cols(spectrum), &v0)?;
    Ok(SyntheticRecoveryTask {
        target,
        u0,
        v0,
        spectrum: spectrum.to_vec(),
        noise: 0.0,
    })
}

/// `k` leading values of `head` followed by `tail` for the rest, with a
/// linear decay across the head from `head` down to `head / rank`.
pub fn low_rank_plus_tail(k: usize, rank: usize, head: f64, tail: f64) -> Vec<f64> {
    (0..k)
        .map(|i| {
            if i < rank {
                head * (rank - i) as f64 / rank as f64
            } else {
                tail
            }
        })
        .collect()
}

/// Columns of a Gaussian matrix orthonormalized by modified Gram–Schmidt,
/// applied twice.
pub fn random_orthonormal<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Matrix {
    assert!(cols <= rows, "cannot fit {cols} orthonormal columns in dimension {rows}");
    let mut q: Vec<Vec<f64>> = Vec::with_capacity(cols);
    while q.len() < cols {
        let mut v: Vec<f64> = (0..rows).map(|_| rng.sample(StandardNormal)).collect();
        for _ in 0..2 {
            for prev in &q {
                let p = dot(prev, &v);
                v.iter_mut().zip(prev).for_each(|(a, b)| *a -= p * b);
            }
        }
        let n = crate::linalg::norm2(&v);
        if n > 1e-8 {
            v.iter_mut().for_each(|a| *a /= n);
            q.push(v);
        }
    }
    Matrix::from_fn(rows, cols, |i, j| q[j][i])
}

impl SyntheticRecoveryTask {
    pub fn with_noise(mut self, noise: f64) -> Self {
        self.noise = noise;
        self
    }

    pub fn target(&self) -> &Matrix {
        &self.target
    }

    pub fn factors(&self) -> (&Matrix, &Matrix) {
        (&self.u0, &self.v0)
    }

    pub fn spectrum(&self) -> &[f64] {
        &self.spectrum
    }

    pub fn noise(&self) -> f64 {
        self.noise
    }

    pub fn input_dim(&self) -> usize {
        self.target.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.target.rows()
    }

    /// `batch` columns of standard normal inputs and their noisy targets.
    pub fn sample<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> (Matrix, Matrix) {
        let x = Matrix::from_fn(self.input_dim(), batch, |_, _| rng.sample(StandardNormal));
        let mut y = matmul(&self.target, &x).expect("target and input agree");
        if self.noise > 0.0 {
            for v in y.as_mut_slice() {
                *v += self.noise * rng.sample::<f64, _>(StandardNormal);
            }
        }
        (x, y)
    }
}

/// Serializable description of a synthetic task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub m: usize,
    pub n: usize,
    pub spectrum: Vec<f64>,
    pub noise: f64,
    pub eval_samples: usize,
}

impl SyntheticSpec {
    pub fn build(&self, seed: u64) -> Result<SyntheticRecoveryTask> {
        Ok(gen_synthetic(self.m, self.n, &self.spectrum, seed)?.with_noise(self.noise))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{orthogonality_error, svd};

    #[test]
    fn spectrum_recovered() {
        let t = gen_synthetic(3, 5, &[3.0, 2.0, 1.0], 1).unwrap();
        let s = svd(t.target()).unwrap();
        for (a, b) in s.sigma.iter().zip([3.0, 2.0, 1.0]) {
            assert!((a - b).abs() <= 1e-10);
        }
    }

    #[test]
    fn zero_spectrum_is_zero_matrix() {
        let t = gen_synthetic(4, 4, &[0.0; 4], 2).unwrap();
        assert!(t.target().as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn factors_reconstruct_target() {
        let spec = low_rank_plus_tail(6, 3, 4.0, 0.1);
        let t = gen_synthetic(6, 9, &spec, 3).unwrap();
        let (u, v) = t.factors();
        assert!(orthogonality_error(u) <= 1e-12);
        assert!(orthogonality_error(v) <= 1e-12);
        let mut oracle = Matrix::zeros(6, 9);
        for i in 0..6 {
            for j in 0..9 {
                let s: f64 = (0..6).map(|l| u.get(i, l) * spec[l] * v.get(j, l)).sum();
                oracle.set(i, j, s);
            }
        }
        assert!(t.target().max_abs_diff(&oracle) <= 1e-12);
    }

    #[test]
    fn invalid_spectra_rejected() {
        assert!(gen_synthetic(3, 3, &[1.0, 2.0, 0.0], 0).is_err());
        assert!(gen_synthetic(3, 3, &[1.0, 0.5], 0).is_err());
        assert!(gen_synthetic(3, 3, &[1.0, -0.5, -1.0], 0).is_err());
    }

    #[test]
    fn noiseless_samples_fit_exactly() {
        let t = gen_synthetic(4, 3, &[2.0, 1.0, 0.5], 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (x, y) = t.sample(7, &mut rng);
        assert_eq!(y, matmul(t.target(), &x).unwrap());
    }

    #[test]
    fn head_and_tail() {
        assert_eq!(low_rank_plus_tail(5, 2, 4.0, 0.5), vec![4.0, 2.0, 0.5, 0.5, 0.5]);
    }
}
