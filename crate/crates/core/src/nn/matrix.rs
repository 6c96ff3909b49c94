use crate::error::{Error, Result};

/// Dense row-major matrix of `f64`.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Builds a matrix from row-major values. Rejects wrong lengths and
    /// non-finite entries.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::dim(format!(
                "{} values cannot fill a {rows}x{cols} matrix",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite value {} at row {}, col {}",
                data[pos],
                pos / cols.max(1),
                pos % cols.max(1)
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::dim("ragged rows"));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub(crate) fn from_vec_unchecked(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Self { rows, cols, data }
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
    pub(crate) fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub(crate) fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub(crate) fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols.max(1)).take(self.rows)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Copies the given rows, in order, into a new matrix.
    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Matrix::from_vec_unchecked(idx.len(), self.cols, data)
    }
}

/// `out = a · bᵀ` with `a: n×k`, `b: m×k`, `out: n×m`.
pub(crate) fn matmul_a_bt(a: &Matrix, b: &Matrix, out: &mut Matrix) {
    let (n, k) = a.shape();
    let m = b.rows();
    debug_assert_eq!(b.cols(), k);
    debug_assert_eq!(out.shape(), (n, m));
    if n == 0 || m == 0 {
        return;
    }
    unsafe {
        // SAFETY: shapes checked above; strides describe the row-major
        // buffers, and bᵀ is read with swapped strides.
        matrixmultiply::dgemm(
            n,
            k,
            m,
            1.0,
            a.data.as_ptr(),
            k as isize,
            1,
            b.data.as_ptr(),
            1,
            k as isize,
            0.0,
            out.data.as_mut_ptr(),
            m as isize,
            1,
        );
    }
}

/// `out = a · b` with `a: n×k`, `b: k×m`.
pub(crate) fn matmul(a: &Matrix, b: &Matrix, out: &mut Matrix) {
    let (n, k) = a.shape();
    let m = b.cols();
    debug_assert_eq!(b.rows(), k);
    debug_assert_eq!(out.shape(), (n, m));
    if n == 0 || m == 0 {
        return;
    }
    unsafe {
        // SAFETY: shapes checked above.
        matrixmultiply::dgemm(
            n,
            k,
            m,
            1.0,
            a.data.as_ptr(),
            k as isize,
            1,
            b.data.as_ptr(),
            m as isize,
            1,
            0.0,
            out.data.as_mut_ptr(),
            m as isize,
            1,
        );
    }
}

/// `out = aᵀ · b` with `a: n×k`, `b: n×m`, `out: k×m`.
pub(crate) fn matmul_at_b(a: &Matrix, b: &Matrix, out: &mut Matrix) {
    let (n, k) = a.shape();
    let m = b.cols();
    debug_assert_eq!(b.rows(), n);
    debug_assert_eq!(out.shape(), (k, m));
    if k == 0 || m == 0 {
        return;
    }
    if n == 0 {
        out.data.fill(0.0);
        return;
    }
    unsafe {
        // SAFETY: shapes checked above; aᵀ is read with swapped strides.
        matrixmultiply::dgemm(
            k,
            n,
            m,
            1.0,
            a.data.as_ptr(),
            1,
            k as isize,
            b.data.as_ptr(),
            m as isize,
            1,
            0.0,
            out.data.as_mut_ptr(),
            m as isize,
            1,
        );
    }
}
