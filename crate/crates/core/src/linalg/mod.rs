//! Dense matrices, products and the Jacobi SVD.

mod matrix;
mod svd;

pub use matrix::{
    dot, frobenius_norm, matmul, matmul_nt, matmul_sequential, matmul_tn, norm2,
    normalize_columns, orthogonality_error, Matrix,
};
pub use svd::{svd, tail_energy, truncate_rank, SvdResult, MAX_SWEEPS, ORTHO_TOL};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LinalgError {
    #[error("{op}: incompatible shapes {}x{} and {}x{}", left.0, left.1, right.0, right.1)]
    ShapeMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("buffer of length {len} does not fit a {rows}x{cols} matrix")]
    BufferLength { rows: usize, cols: usize, len: usize },
    #[error("column {index} has zero norm")]
    ZeroColumn { index: usize },
    #[error("index {index} out of range (bound {bound})")]
    IndexOutOfRange { index: usize, bound: usize },
    #[error("rank {rank} outside 1..={max}")]
    RankOutOfRange { rank: usize, max: usize },
    #[error("SVD did not converge after {sweeps} sweeps (off-diagonal residual {residual:e})")]
    NoConvergence { sweeps: usize, residual: f64 },
    #[error("matrix contains NaN or infinite entries")]
    NonFinite,
}
