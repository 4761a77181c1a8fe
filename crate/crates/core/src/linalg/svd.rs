//! One-sided Jacobi SVD.
//!
//! For a wide matrix `W` (m ≤ n) the rows of `W` are rotated pairwise until
//! they are mutually orthogonal. The accumulated rotation is `U`, the row
//! norms are the singular values and the normalized rows form `Vᵀ`. Tall
//! inputs are transposed first and the factors swapped on the way out.

use crate::linalg::matrix::{dot, matmul, Matrix};
use crate::linalg::LinalgError;

/// Sweep cap before giving up.
pub const MAX_SWEEPS: usize = 60;
/// A pair of rows counts as orthogonal once `|⟨p,q⟩| ≤ TOL·‖p‖‖q‖`.
pub const ORTHO_TOL: f64 = 1e-14;

/// Thin SVD: `u` is `m × k`, `sigma` has length `k` and `vt` is `k × n`,
/// with `k = min(m, n)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SvdResult {
    pub u: Matrix,
    pub sigma: Vec<f64>,
    pub vt: Matrix,
}

impl SvdResult {
    pub fn rank_capacity(&self) -> usize {
        self.sigma.len()
    }

    /// `U · diag(σ) · Vᵀ`.
    pub fn reconstruct(&self) -> Matrix {
        matmul(&self.u.scale_cols(&self.sigma), &self.vt).expect("consistent factors")
    }
}

pub fn svd(w: &Matrix) -> Result<SvdResult, LinalgError> {
    if !w.is_finite() {
        return Err(LinalgError::NonFinite);
    }
    if w.rows() <= w.cols() {
        svd_wide(w)
    } else {
        let t = svd_wide(&w.transpose())?;
        let mut out = SvdResult {
            u: t.vt.transpose(),
            sigma: t.sigma,
            vt: t.u.transpose(),
        };
        fix_signs(&mut out);
        Ok(out)
    }
}

fn svd_wide(w: &Matrix) -> Result<SvdResult, LinalgError> {
    let (m, n) = w.shape();
    let mut b = w.clone();
    // rows of `jt` are the columns of U
    let mut jt = Matrix::identity(m);

    let mut converged = m < 2;
    let mut residual = 0.0;
    let mut norms: Vec<f64> = (0..m).map(|i| dot(b.row(i), b.row(i))).collect();
    // rows at roundoff level cannot be made relatively orthogonal; they end
    // up under the σ floor anyway
    let negligible = norms.iter().sum::<f64>() * f64::EPSILON * f64::EPSILON;
    for _sweep in 0..MAX_SWEEPS {
        if converged {
            break;
        }
        let mut rotated = false;
        residual = 0.0f64;
        for i in 0..m {
            norms[i] = dot(b.row(i), b.row(i));
        }
        for p in 0..m - 1 {
            for q in p + 1..m {
                let alpha = norms[p];
                let beta = norms[q];
                let scale = (alpha * beta).sqrt();
                if scale == 0.0 || alpha <= negligible || beta <= negligible {
                    continue;
                }
                let gamma = dot(b.row(p), b.row(q));
                let cosine = gamma.abs() / scale;
                residual = residual.max(cosine);
                if cosine <= ORTHO_TOL {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate_rows(&mut b, p, q, c, s);
                rotate_rows(&mut jt, p, q, c, s);
                norms[p] = alpha - t * gamma;
                norms[q] = beta + t * gamma;
            }
        }
        if !rotated {
            converged = true;
        }
    }
    if !converged {
        return Err(LinalgError::NoConvergence {
            sweeps: MAX_SWEEPS,
            residual,
        });
    }

    let raw: Vec<f64> = (0..m).map(|i| dot(b.row(i), b.row(i)).sqrt()).collect();
    let mut order: Vec<usize> = (0..m).collect();
    // stable: ties keep the lower index first
    order.sort_by(|&x, &y| raw[y].total_cmp(&raw[x]));

    let sigma_max = order.first().map_or(0.0, |&i| raw[i]);
    let floor = sigma_max * (n.max(1) as f64) * f64::EPSILON;

    // Rows of Vᵀ for small σ carry relative error ~ eps·σmax/σ; those are
    // re-orthogonalized against the rows before them.
    let reortho = sigma_max * 1e-8;
    let mut u = Matrix::zeros(m, m);
    let mut vt = Matrix::zeros(m, n);
    let mut sigma = vec![0.0; m];
    let mut null_slots = Vec::new();
    for (slot, &i) in order.iter().enumerate() {
        u.set_col(slot, jt.row(i));
        if raw[i] > floor && raw[i] > 0.0 {
            sigma[slot] = raw[i];
            let mut row: Vec<f64> = b.row(i).iter().map(|x| x / raw[i]).collect();
            if raw[i] < reortho {
                for _ in 0..2 {
                    for prev in 0..slot {
                        if null_slots.contains(&prev) {
                            continue;
                        }
                        let proj = dot(&row, vt.row(prev));
                        row.iter_mut().zip(vt.row(prev)).for_each(|(x, y)| *x -= proj * y);
                    }
                }
                let norm = dot(&row, &row).sqrt();
                if norm < 0.5 {
                    null_slots.push(slot);
                    continue;
                }
                row.iter_mut().for_each(|x| *x /= norm);
            }
            vt.row_mut(slot).copy_from_slice(&row);
        } else {
            null_slots.push(slot);
        }
    }
    complete_rows(&mut vt, &null_slots);

    let mut out = SvdResult { u, sigma, vt };
    fix_signs(&mut out);
    Ok(out)
}

#[inline]
fn rotate_rows(m: &mut Matrix, p: usize, q: usize, c: f64, s: f64) {
    let cols = m.cols();
    let data = m.as_mut_slice();
    let (head, tail) = data.split_at_mut(q * cols);
    let rp = &mut head[p * cols..(p + 1) * cols];
    let rq = &mut tail[..cols];
    for (x, y) in rp.iter_mut().zip(rq.iter_mut()) {
        let a = *x;
        let b = *y;
        *x = c * a - s * b;
        *y = s * a + c * b;
    }
}

/// Fills the rows listed in `slots` with unit vectors orthogonal to every
/// other row. Each slot takes the standard basis vector with the largest
/// component outside the rows filled so far (lowest index on ties).
fn complete_rows(vt: &mut Matrix, slots: &[usize]) {
    if slots.is_empty() {
        return;
    }
    let n = vt.cols();
    let mut filled: Vec<usize> = (0..vt.rows()).filter(|r| !slots.contains(r)).collect();
    for &slot in slots {
        let mut best: Option<(f64, Vec<f64>)> = None;
        for candidate in 0..n {
            let mut v = vec![0.0; n];
            v[candidate] = 1.0;
            // two passes of Gram-Schmidt
            for _ in 0..2 {
                for &r in &filled {
                    let proj = dot(&v, vt.row(r));
                    for (x, &y) in v.iter_mut().zip(vt.row(r)) {
                        *x -= proj * y;
                    }
                }
            }
            let norm = dot(&v, &v).sqrt();
            if best.as_ref().is_none_or(|(b, _)| norm > *b) {
                best = Some((norm, v));
            }
        }
        let (norm, v) = best.expect("at least one column");
        assert!(norm > 1e-3, "cannot complete orthonormal rows");
        for (dst, x) in vt.row_mut(slot).iter_mut().zip(&v) {
            *dst = x / norm;
        }
        filled.push(slot);
    }
}

/// Makes the largest-magnitude entry of each left singular vector
/// non-negative, flipping the matching right vector.
fn fix_signs(s: &mut SvdResult) {
    let k = s.sigma.len();
    for i in 0..k {
        let mut best = 0.0f64;
        let mut best_val = 0.0;
        for r in 0..s.u.rows() {
            let v = s.u.get(r, i);
            if v.abs() > best {
                best = v.abs();
                best_val = v;
            }
        }
        if best_val < 0.0 {
            for r in 0..s.u.rows() {
                s.u.set(r, i, -s.u.get(r, i));
            }
            s.vt.row_mut(i).iter_mut().for_each(|v| *v = -*v);
        }
    }
}

/// Best rank-`r` approximation `Σ_{i<r} σᵢ uᵢ vᵢᵀ`.
pub fn truncate_rank(s: &SvdResult, r: usize) -> Result<Matrix, LinalgError> {
    let k = s.sigma.len();
    if r == 0 || r > k {
        return Err(LinalgError::RankOutOfRange { rank: r, max: k });
    }
    let idx: Vec<usize> = (0..r).collect();
    let u = s.u.select_cols(&idx).scale_cols(&s.sigma[..r]);
    let vt = s.vt.select_rows(&idx);
    matmul(&u, &vt)
}

/// `sqrt(σ_{r+1}² + … + σ_k²)`, the optimal rank-`r` Frobenius error.
pub fn tail_energy(sigma: &[f64], r: usize) -> f64 {
    sigma.iter().skip(r).map(|s| s * s).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{frobenius_norm, orthogonality_error};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
        Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    fn check(w: &Matrix) -> SvdResult {
        let s = svd(w).unwrap();
        let k = w.rows().min(w.cols());
        assert_eq!(s.u.shape(), (w.rows(), k));
        assert_eq!(s.vt.shape(), (k, w.cols()));
        let err = frobenius_norm(&s.reconstruct().sub(w).unwrap());
        assert!(err <= 1e-10 * frobenius_norm(w).max(f64::MIN_POSITIVE), "recon {err}");
        assert!(orthogonality_error(&s.u) <= 1e-10);
        assert!(orthogonality_error(&s.vt.transpose()) <= 1e-10);
        for pair in s.sigma.windows(2) {
            assert!(pair[0] >= pair[1]);
        }
        assert!(s.sigma.iter().all(|&x| x >= 0.0));
        s
    }

    #[test]
    fn square_rank_deficient_completes_basis() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for rank in [1, 2, 5, 20] {
            let w = matmul(&random(32, rank, &mut rng), &random(rank, 32, &mut rng)).unwrap();
            let s = check(&w);
            assert!(orthogonality_error(&s.vt.transpose()) < 1e-10);
            assert!(s.sigma[rank..].iter().all(|&x| x < 1e-10));
        }
    }

    #[test]
    fn identity_has_unit_spectrum() {
        let s = check(&Matrix::identity(4));
        assert_eq!(s.sigma, vec![1.0; 4]);
    }

    #[test]
    fn padded_diagonal() {
        let w = Matrix::from_fn(3, 5, |i, j| if i == j { 3.0 - i as f64 } else { 0.0 });
        let s = check(&w);
        assert_eq!(s.sigma, vec![3.0, 2.0, 1.0]);
    }

    #[test]
    fn random_wide_and_tall() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        check(&random(6, 8, &mut rng));
        check(&random(9, 4, &mut rng));
        check(&random(1, 1, &mut rng));
    }

    #[test]
    fn rank_deficient_gets_completed_basis() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random(5, 2, &mut rng);
        let b = random(2, 7, &mut rng);
        let w = matmul(&a, &b).unwrap();
        let s = check(&w);
        assert!(s.sigma[2..].iter().all(|&x| x == 0.0));
        check(&Matrix::zeros(3, 4));
    }

    #[test]
    fn signs_are_canonical() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let w = random(4, 6, &mut rng);
        let s = svd(&w).unwrap();
        for i in 0..4 {
            let col = s.u.col(i);
            let big = col.iter().cloned().fold(0.0f64, |a, v| if v.abs() > a.abs() { v } else { a });
            assert!(big >= 0.0);
        }
        // negating the input flips V only
        let s2 = svd(&w.scale(-1.0)).unwrap();
        assert!(s2.u.max_abs_diff(&s.u) < 1e-12);
        assert!(s2.vt.max_abs_diff(&s.vt.scale(-1.0)) < 1e-12);
    }

    #[test]
    fn truncation_on_diagonal() {
        let w = Matrix::from_diag(&[3.0, 2.0, 1.0]);
        let s = svd(&w).unwrap();
        let t = truncate_rank(&s, 1).unwrap();
        let err = frobenius_norm(&w.sub(&t).unwrap());
        assert!((err - 5f64.sqrt()).abs() < 1e-12);
        let full = truncate_rank(&s, 3).unwrap();
        assert!(frobenius_norm(&w.sub(&full).unwrap()) < 1e-10);
        assert!(matches!(
            truncate_rank(&s, 4),
            Err(LinalgError::RankOutOfRange { .. })
        ));
        assert!(truncate_rank(&s, 0).is_err());
    }

    #[test]
    fn truncation_random_tail() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let w = random(5, 7, &mut rng);
        let s = svd(&w).unwrap();
        let t = truncate_rank(&s, 2).unwrap();
        let err = frobenius_norm(&w.sub(&t).unwrap());
        let oracle = (s.sigma[2].powi(2) + s.sigma[3].powi(2) + s.sigma[4].powi(2)).sqrt();
        assert!((err - oracle).abs() <= 1e-9);
    }

    #[test]
    fn deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let w = random(7, 9, &mut rng);
        assert_eq!(svd(&w).unwrap(), svd(&w).unwrap());
    }

    #[test]
    fn non_finite_rejected() {
        let mut w = Matrix::identity(2);
        w.set(0, 1, f64::NAN);
        assert!(matches!(svd(&w), Err(LinalgError::NonFinite)));
    }
}
