use crate::error::{Error, Result};
use crate::linalg::{matmul, matmul_nt, matmul_tn, Matrix};

/// Full-rank linear map `h = W x`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLinear {
    w: Matrix,
    cache: Option<Matrix>,
}

impl DenseLinear {
    pub fn new(w: Matrix) -> Self {
        Self { w, cache: None }
    }

    pub fn weight(&self) -> &Matrix {
        &self.w
    }

    pub fn weight_mut(&mut self) -> &mut Matrix {
        self.cache = None;
        &mut self.w
    }

    pub fn out_dim(&self) -> usize {
        self.w.rows()
    }

    pub fn in_dim(&self) -> usize {
        self.w.cols()
    }

    pub fn forward(&mut self, x: &Matrix) -> Result<Matrix> {
        check_input(x, self.in_dim())?;
        let h = matmul(&self.w, x)?;
        self.cache = Some(x.clone());
        Ok(h)
    }

    /// Returns `(∂L/∂W, ∂L/∂x)` with `∂L/∂W = (∂L/∂h) xᵀ`.
    pub fn backward(&self, grad_h: &Matrix) -> Result<(Matrix, Matrix)> {
        let x = self.cache.as_ref().ok_or(Error::StaleCache)?;
        check_output(grad_h, self.out_dim(), x.cols())?;
        Ok((matmul_nt(grad_h, x)?, matmul_tn(&self.w, grad_h)?))
    }

    pub(crate) fn clear_cache(&mut self) {
        self.cache = None;
    }
}

pub(crate) fn check_input(x: &Matrix, rows: usize) -> Result<()> {
    if x.rows() != rows {
        return Err(Error::Shape(format!(
            "expected input with {rows} rows, got {}x{}",
            x.rows(),
            x.cols()
        )));
    }
    Ok(())
}

pub(crate) fn check_output(g: &Matrix, rows: usize, batch: usize) -> Result<()> {
    if g.shape() != (rows, batch) {
        return Err(Error::Shape(format!(
            "expected output gradient {rows}x{batch}, got {}x{}",
            g.rows(),
            g.cols()
        )));
    }
    Ok(())
}
