//! Dense row-major `f64` matrix.

use std::fmt;

use crate::exec;
use crate::linalg::LinalgError;

/// Dense row-major matrix of 64-bit floats.
///
/// Columns of an activation matrix are samples, so a batch of `b` inputs of
/// width `n` is an `n × b` matrix.
#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for r in 0..self.rows.min(8) {
            let row = &self.row(r)[..self.cols.min(8)];
            writeln!(f, "  {row:?}")?;
        }
        write!(f, "]")
    }
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, LinalgError> {
        if data.len() != rows * cols {
            return Err(LinalgError::BufferLength {
                rows,
                cols,
                len: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from nested rows; panics on ragged input.
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Self {
            rows: r,
            cols: c,
            data,
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    /// Square matrix with `diag` on the diagonal.
    pub fn from_diag(diag: &[f64]) -> Self {
        let n = diag.len();
        let mut m = Self::zeros(n, n);
        for (i, &d) in diag.iter().enumerate() {
            m.data[i * n + i] = d;
        }
        m
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn col(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    pub fn set_col(&mut self, c: usize, values: &[f64]) {
        assert_eq!(values.len(), self.rows);
        for (r, &v) in values.iter().enumerate() {
            self.set(r, c, v);
        }
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    /// Gathers the listed columns into a new `rows × indices.len()` matrix.
    pub fn select_cols(&self, indices: &[usize]) -> Matrix {
        Matrix::from_fn(self.rows, indices.len(), |r, j| self.get(r, indices[j]))
    }

    /// Gathers the listed rows into a new `indices.len() × cols` matrix.
    pub fn select_rows(&self, indices: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: indices.len(),
            cols: self.cols,
            data,
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, s: f64) -> Matrix {
        self.map(|v| v * s)
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix, LinalgError> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix, LinalgError> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    pub fn add_assign(&mut self, other: &Matrix) -> Result<(), LinalgError> {
        self.check_same(other, "add_assign")?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    fn zip_with(
        &self,
        other: &Matrix,
        op: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Matrix, LinalgError> {
        self.check_same(other, op)?;
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    fn check_same(&self, other: &Matrix, op: &'static str) -> Result<(), LinalgError> {
        if self.shape() != other.shape() {
            return Err(LinalgError::ShapeMismatch {
                op,
                left: self.shape(),
                right: other.shape(),
            });
        }
        Ok(())
    }

    /// Multiplies row `i` by `s[i]`.
    pub fn scale_rows(&self, s: &[f64]) -> Matrix {
        assert_eq!(s.len(), self.rows);
        let mut out = self.clone();
        for (i, &si) in s.iter().enumerate() {
            out.row_mut(i).iter_mut().for_each(|v| *v *= si);
        }
        out
    }

    /// Multiplies column `j` by `s[j]`.
    pub fn scale_cols(&self, s: &[f64]) -> Matrix {
        assert_eq!(s.len(), self.cols);
        let mut out = self.clone();
        for r in 0..self.rows {
            out.row_mut(r)
                .iter_mut()
                .zip(s)
                .for_each(|(v, &sj)| *v *= sj);
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

#[derive(Clone, Copy)]
enum Op {
    N,
    T,
}

/// Rows of the output handled by one parallel task. Fixed so the result does
/// not depend on the thread count.
const ROW_CHUNK: usize = 32;

fn gemm(a: &Matrix, ta: Op, b: &Matrix, tb: Op, name: &'static str) -> Result<Matrix, LinalgError> {
    let (ar, ac) = match ta {
        Op::N => a.shape(),
        Op::T => (a.cols, a.rows),
    };
    let (br, bc) = match tb {
        Op::N => b.shape(),
        Op::T => (b.cols, b.rows),
    };
    if ac != br {
        return Err(LinalgError::ShapeMismatch {
            op: name,
            left: (ar, ac),
            right: (br, bc),
        });
    }
    let (m, k, n) = (ar, ac, bc);
    let mut out = Matrix::zeros(m, n);
    if m == 0 || n == 0 || k == 0 {
        return Ok(out);
    }
    // strides of the logical (transposed) operands
    let (rsa, csa) = match ta {
        Op::N => (a.cols as isize, 1isize),
        Op::T => (1isize, a.cols as isize),
    };
    let (rsb, csb) = match tb {
        Op::N => (b.cols as isize, 1isize),
        Op::T => (1isize, b.cols as isize),
    };
    let a_data = a.as_slice();
    let b_data = b.as_slice();
    exec::for_each_chunk_mut(out.as_mut_slice(), ROW_CHUNK * n, |chunk_idx, c_chunk| {
        let row0 = chunk_idx * ROW_CHUNK;
        let rows = c_chunk.len() / n;
        let a_off = row0 as isize * rsa;
        // SAFETY: the pointers cover `rows × k` of `a` starting at row `row0`,
        // `k × n` of `b` and the `rows × n` output chunk, all in bounds given
        // the shape checks above.
        unsafe {
            matrixmultiply::dgemm(
                rows,
                k,
                n,
                1.0,
                a_data.as_ptr().offset(a_off),
                rsa,
                csa,
                b_data.as_ptr(),
                rsb,
                csb,
                0.0,
                c_chunk.as_mut_ptr(),
                n as isize,
                1,
            );
        }
    });
    Ok(out)
}

/// `a · b`.
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix, LinalgError> {
    gemm(a, Op::N, b, Op::N, "matmul")
}

/// `aᵀ · b` without forming the transpose.
pub fn matmul_tn(a: &Matrix, b: &Matrix) -> Result<Matrix, LinalgError> {
    gemm(a, Op::T, b, Op::N, "matmul_tn")
}

/// `a · bᵀ` without forming the transpose.
pub fn matmul_nt(a: &Matrix, b: &Matrix) -> Result<Matrix, LinalgError> {
    gemm(a, Op::N, b, Op::T, "matmul_nt")
}

/// Sequential reference product, one row at a time. Used by the benches to
/// compare against the chunked parallel path.
pub fn matmul_sequential(a: &Matrix, b: &Matrix) -> Result<Matrix, LinalgError> {
    if a.cols != b.rows {
        return Err(LinalgError::ShapeMismatch {
            op: "matmul",
            left: a.shape(),
            right: b.shape(),
        });
    }
    let mut out = Matrix::zeros(a.rows, b.cols);
    if out.data.is_empty() || a.cols == 0 {
        return Ok(out);
    }
    unsafe {
        // SAFETY: shapes checked above; contiguous row-major buffers.
        matrixmultiply::dgemm(
            a.rows,
            a.cols,
            b.cols,
            1.0,
            a.data.as_ptr(),
            a.cols as isize,
            1,
            b.data.as_ptr(),
            b.cols as isize,
            1,
            0.0,
            out.data.as_mut_ptr(),
            b.cols as isize,
            1,
        );
    }
    Ok(out)
}

pub fn frobenius_norm(m: &Matrix) -> f64 {
    m.data.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Max-abs deviation of the Gram matrix of the columns from the identity,
/// i.e. `max |MᵀM − I|`.
pub fn orthogonality_error(m: &Matrix) -> f64 {
    let gram = matmul_tn(m, m).expect("square gram");
    let mut worst: f64 = 0.0;
    for i in 0..gram.rows {
        for j in 0..gram.cols {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((gram.get(i, j) - target).abs());
        }
    }
    worst
}

/// Scales each selected column to unit 2-norm; other columns are copied as is.
pub fn normalize_columns(m: &Matrix, indices: &[usize]) -> Result<Matrix, LinalgError> {
    let mut out = m.clone();
    for &c in indices {
        if c >= m.cols {
            return Err(LinalgError::IndexOutOfRange {
                index: c,
                bound: m.cols,
            });
        }
        let norm = (0..m.rows).map(|r| m.get(r, c).powi(2)).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(LinalgError::ZeroColumn { index: c });
        }
        for r in 0..m.rows {
            out.set(r, c, m.get(r, c) / norm);
        }
    }
    Ok(out)
}

/// Dot product with a fixed left-to-right summation order.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn naive(a: &Matrix, b: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(a.rows(), b.cols());
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                let mut s = 0.0;
                for k in 0..a.cols() {
                    s += a.get(i, k) * b.get(k, j);
                }
                out.set(i, j, s);
            }
        }
        out
    }

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
        Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn identity_times_m() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = random(3, 4, &mut rng);
        assert_eq!(matmul(&Matrix::identity(3), &m).unwrap(), m);
    }

    #[test]
    fn hand_product() {
        let a = Matrix::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let b = Matrix::from_rows(&[&[1.0], &[1.0]]);
        assert_eq!(
            matmul(&a, &b).unwrap(),
            Matrix::from_rows(&[&[3.0], &[7.0]])
        );
    }

    #[test]
    fn matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = random(5, 4, &mut rng);
        let b = random(4, 3, &mut rng);
        assert!(matmul(&a, &b).unwrap().max_abs_diff(&naive(&a, &b)) <= 1e-12);

        // tall enough to span several row chunks
        let a = random(97, 31, &mut rng);
        let b = random(31, 45, &mut rng);
        let c = matmul(&a, &b).unwrap();
        assert!(c.max_abs_diff(&naive(&a, &b)) <= 1e-12);
        assert_eq!(c, matmul_sequential(&a, &b).unwrap());
        let at = a.transpose();
        assert!(matmul_tn(&at, &b).unwrap().max_abs_diff(&c) <= 1e-12);
        let bt = b.transpose();
        assert!(matmul_nt(&a, &bt).unwrap().max_abs_diff(&c) <= 1e-12);
    }

    #[test]
    fn mismatch_names_shapes() {
        let err = matmul(&Matrix::zeros(2, 3), &Matrix::zeros(2, 3)).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("2x3"), "{msg}");
    }

    #[test]
    fn normalize_three_four_five() {
        let m = Matrix::from_rows(&[&[3.0, 1.0], &[4.0, 1.0]]);
        let n = normalize_columns(&m, &[0]).unwrap();
        assert_eq!(n.col(0), vec![0.6, 0.8]);
        assert_eq!(n.col(1), vec![1.0, 1.0]);
    }

    #[test]
    fn normalize_unit_is_idempotent() {
        let m = Matrix::from_rows(&[&[0.6], &[0.8]]);
        let n = normalize_columns(&m, &[0]).unwrap();
        assert!(n.max_abs_diff(&m) <= 1e-15);
    }

    #[test]
    fn normalize_all_random_columns() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = random(6, 9, &mut rng);
        let idx: Vec<usize> = (0..9).collect();
        let n = normalize_columns(&m, &idx).unwrap();
        for c in 0..9 {
            assert!((norm2(&n.col(c)) - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn normalize_zero_column_errors() {
        let m = Matrix::from_rows(&[&[1.0, 0.0], &[1.0, 0.0]]);
        match normalize_columns(&m, &[0, 1]) {
            Err(LinalgError::ZeroColumn { index }) => assert_eq!(index, 1),
            other => panic!("unexpected {other:?}"),
        }
    }
}
