//! Optimizer state for the active singular vectors of one spectral layer.
//!
//! `U` and `Vᵀ` stay in the layer at full width; the partition only owns Adam
//! moments for the `r` active slots plus all of `σ`. Frozen columns have no
//! state anywhere, and swapping the active set only rewrites `index_map`.

use super::adam::{AdamHyper, AdamState};
use crate::error::{Error, Result};
use crate::layers::{SpectralGrad, SpectralLinear};
use crate::linalg::norm2;

/// Columns whose updated norm falls below this are treated as degenerate.
const DEGENERATE_NORM: f64 = 1e-300;

#[derive(Debug, Clone, PartialEq)]
pub struct ActivePartition {
    index_map: Vec<usize>,
    u_state: AdamState,
    vt_state: AdamState,
    sigma_state: AdamState,
}

impl ActivePartition {
    /// Takes the layer's current active set as the initial `index_map`.
    pub fn new(layer: &SpectralLinear, hyper: AdamHyper) -> Self {
        let r = layer.rank();
        Self {
            index_map: layer.active().to_vec(),
            u_state: AdamState::new(layer.out_dim() * r, hyper),
            vt_state: AdamState::new(r * layer.in_dim(), hyper),
            sigma_state: AdamState::new(layer.capacity(), hyper),
        }
    }

    pub fn index_map(&self) -> &[usize] {
        &self.index_map
    }

    pub fn rank(&self) -> usize {
        self.index_map.len()
    }

    pub fn u_state(&self) -> &AdamState {
        &self.u_state
    }

    pub fn vt_state(&self) -> &AdamState {
        &self.vt_state
    }

    pub fn sigma_state(&self) -> &AdamState {
        &self.sigma_state
    }

    /// Clears the moments of `U`, `Vᵀ` and `σ`.
    pub fn reset_all(&mut self) {
        self.u_state.reset();
        self.vt_state.reset();
        self.sigma_state.reset();
    }

    /// Activates `new_indices` on the layer and resets the `U`/`Vᵀ` states.
    /// The factors themselves are untouched, so the layer's map is unchanged.
    pub fn swap_active(&mut self, layer: &mut SpectralLinear, new_indices: Vec<usize>) -> Result<()> {
        if new_indices.len() != self.rank() {
            return Err(Error::InvalidArgument(format!(
                "swap needs {} indices, got {}",
                self.rank(),
                new_indices.len()
            )));
        }
        layer.set_active(new_indices.clone())?;
        self.index_map = new_indices;
        self.u_state.reset();
        self.vt_state.reset();
        Ok(())
    }

    /// Adam on all of `σ`, then clamps at zero.
    pub fn sigma_step(&mut self, layer: &mut SpectralLinear, grad_sigma: &[f64], lr: f64) {
        let (_, sigma, _) = layer.factors_mut();
        sigma_step(sigma, grad_sigma, &mut self.sigma_state, lr);
    }

    /// Adam on the active `U` columns and `Vᵀ` rows, each renormalized to unit
    /// length. Returns how many vectors were left at their previous value
    /// because the update collapsed them.
    pub fn uv_step(&mut self, layer: &mut SpectralLinear, grad: &SpectralGrad, lr: f64) -> Result<usize> {
        if grad.columns != self.index_map {
            return Err(Error::InvalidArgument(format!(
                "gradient columns {:?} do not match active set {:?}",
                grad.columns, self.index_map
            )));
        }
        let r = self.rank();
        let du = self.u_state.direction(grad.u.as_slice());
        let dvt = self.vt_state.direction(grad.vt.as_slice());
        let (u, _, vt) = layer.factors_mut();
        let (m, n) = (u.rows(), vt.cols());
        let mut degenerate = 0;

        for (slot, &col) in self.index_map.iter().enumerate() {
            let updated: Vec<f64> = (0..m).map(|i| u.get(i, col) - lr * du[i * r + slot]).collect();
            match unit(&updated) {
                Some(v) => u.set_col(col, &v),
                None => {
                    degenerate += 1;
                    log::warn!("U column {col} collapsed; keeping previous value");
                }
            }
            let row = vt.row_mut(col);
            let updated: Vec<f64> = (0..n).map(|j| row[j] - lr * dvt[slot * n + j]).collect();
            match unit(&updated) {
                Some(v) => row.copy_from_slice(&v),
                None => {
                    degenerate += 1;
                    log::warn!("V row {col} collapsed; keeping previous value");
                }
            }
        }
        Ok(degenerate)
    }
}

fn unit(v: &[f64]) -> Option<Vec<f64>> {
    let n = norm2(v);
    (n.is_finite() && n > DEGENERATE_NORM).then(|| v.iter().map(|x| x / n).collect())
}

/// `σ ← max(σ − lr·adam(g), 0)` element-wise.
pub fn sigma_step(sigma: &mut [f64], grad: &[f64], state: &mut AdamState, lr: f64) {
    state.step(sigma, grad, lr);
    for s in sigma.iter_mut() {
        *s = s.max(0.0);
    }
}
