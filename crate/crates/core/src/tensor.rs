//! Dense row-major matrices and vectors in 64-bit floating point.
//!
//! Reductions accumulate in natural index order in a single pass, so every
//! result is bit-reproducible across runs and platforms.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check_finite(what: &'static str, data: &[f64]) -> Result<()> {
    match data.iter().position(|x| !x.is_finite()) {
        Some(index) => Err(Error::NonFinite { what, index }),
        None => Ok(()),
    }
}

/// Dense `rows × cols` matrix stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Shape(format!("matrix must be non-empty, got {rows}x{cols}")));
        }
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{rows}x{cols} matrix needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        check_finite("matrix", &data)?;
        Ok(Matrix { rows, cols, data })
    }

    /// Builds a matrix from values the caller has already shown to be finite.
    pub(crate) fn from_raw(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        debug_assert!(data.iter().all(|x| x.is_finite()));
        Matrix { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Shape("ragged rows".into()));
        }
        Matrix::new(rows.len(), cols, rows.concat())
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "matrix must be non-empty");
        Matrix::from_raw(rows, cols, vec![0.0; rows * cols])
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        assert!(rows > 0 && cols > 0, "matrix must be non-empty");
        assert!(value.is_finite());
        Matrix::from_raw(rows, cols, vec![value; rows * cols])
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_iter(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols)
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = vec![0.0; self.data.len()];
        for i in 0..self.rows {
            for j in 0..self.cols {
                out[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        Matrix::from_raw(self.cols, self.rows, out)
    }

    /// Elementwise map. The closure must keep values finite.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Matrix> {
        Matrix::new(self.rows, self.cols, self.data.iter().map(|&x| f(x)).collect())
    }

    pub fn abs(&self) -> Matrix {
        Matrix::from_raw(self.rows, self.cols, self.data.iter().map(|x| x.abs()).collect())
    }

    /// Elementwise (Hadamard) product.
    pub fn hadamard(&self, other: &Matrix) -> Result<Matrix> {
        if self.shape() != other.shape() {
            return Err(Error::Shape(format!(
                "hadamard of {:?} and {:?}",
                self.shape(),
                other.shape()
            )));
        }
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a * b).collect();
        Matrix::new(self.rows, self.cols, data)
    }

    /// Σ over all entries of `|a|`.
    pub fn abs_sum(&self) -> f64 {
        self.data.iter().fold(0.0, |acc, x| acc + x.abs())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().fold(0.0, |acc, x| acc + x)
    }
}

/// Standard product `a × b`.
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(Error::Shape(format!(
            "matmul of {}x{} by {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let mut out = vec![0.0; a.rows * b.cols];
    for i in 0..a.rows {
        let out_row = &mut out[i * b.cols..(i + 1) * b.cols];
        for (k, &aik) in a.row(i).iter().enumerate() {
            for (o, &bkj) in out_row.iter_mut().zip(b.row(k)) {
                *o += aik * bkj;
            }
        }
    }
    Matrix::new(a.rows, b.cols, out)
}

/// `x × wᵀ`, the linear-layer product for a weight stored output × input.
pub fn matmul_transposed(x: &Matrix, w: &Matrix) -> Result<Matrix> {
    if x.cols != w.cols {
        return Err(Error::Shape(format!(
            "linear of {}x{} input by {}x{} weight",
            x.rows, x.cols, w.rows, w.cols
        )));
    }
    let mut out = Vec::with_capacity(x.rows * w.rows);
    for xi in x.row_iter() {
        for wo in w.row_iter() {
            out.push(xi.iter().zip(wo).fold(0.0, |acc, (a, b)| acc + a * b));
        }
    }
    Matrix::new(x.rows, w.rows, out)
}

/// Per-row Σ|a_ij|.
pub fn abs_row_sums(a: &Matrix) -> Vector {
    Vector::from_raw(
        a.row_iter()
            .map(|r| r.iter().fold(0.0, |acc, x| acc + x.abs()))
            .collect(),
    )
}

/// Per-column Σ|a_ij|.
pub fn abs_col_sums(a: &Matrix) -> Vector {
    let mut sums = vec![0.0; a.cols];
    for r in a.row_iter() {
        for (s, x) in sums.iter_mut().zip(r) {
            *s += x.abs();
        }
    }
    Vector::from_raw(sums)
}

pub fn frobenius_norm(a: &Matrix) -> f64 {
    a.data.iter().fold(0.0, |acc, x| acc + x * x).sqrt()
}

/// Dense vector of finite values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Vector(Vec<f64>);

impl Vector {
    pub fn new(data: Vec<f64>) -> Result<Self> {
        check_finite("vector", &data)?;
        Ok(Vector(data))
    }

    pub(crate) fn from_raw(data: Vec<f64>) -> Self {
        debug_assert!(data.iter().all(|x| x.is_finite()));
        Vector(data)
    }

    pub fn filled(len: usize, value: f64) -> Self {
        assert!(value.is_finite());
        Vector(vec![value; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.0
    }

    pub fn into_data(self) -> Vec<f64> {
        self.0
    }

    pub fn sum(&self) -> f64 {
        self.0.iter().fold(0.0, |acc, x| acc + x)
    }

    pub fn l2_norm(&self) -> f64 {
        self.0.iter().fold(0.0, |acc, x| acc + x * x).sqrt()
    }
}

impl std::ops::Index<usize> for Vector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn m(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn matmul_examples() {
        let a = m(&[&[1.0, 2.0], &[3.0, 4.0]]);
        assert_eq!(matmul(&Matrix::identity(2), &a).unwrap(), a);
        assert_eq!(
            matmul(&m(&[&[1.0, 2.0]]), &m(&[&[3.0], &[4.0]])).unwrap(),
            m(&[&[11.0]])
        );
        let z = matmul(&Matrix::zeros(2, 2), &m(&[&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]])).unwrap();
        assert_eq!(z, Matrix::zeros(2, 3));
    }

    #[test]
    fn matmul_rejects_mismatch() {
        let err = matmul(&Matrix::zeros(2, 3), &Matrix::zeros(2, 3)).unwrap_err();
        assert!(matches!(err, Error::Shape(_)));
    }

    #[test]
    fn linear_product_matches_explicit_transpose() {
        let x = m(&[&[1.0, -1.0, 2.0], &[0.5, 3.0, 0.0]]);
        let w = m(&[&[1.0, 2.0, 3.0], &[-4.0, 0.0, 1.0]]);
        assert_eq!(matmul_transposed(&x, &w).unwrap(), matmul(&x, &w.transpose()).unwrap());
    }

    #[test]
    fn abs_sums() {
        let a = m(&[&[1.0, -2.0], &[3.0, 4.0]]);
        assert_eq!(abs_row_sums(&a).data(), &[3.0, 7.0]);
        assert_eq!(abs_col_sums(&a).data(), &[4.0, 6.0]);
        assert_eq!(abs_row_sums(&Matrix::zeros(2, 3)).data(), &[0.0, 0.0]);
        assert_eq!(abs_col_sums(&Matrix::zeros(2, 3)).data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn frobenius() {
        let a = m(&[&[1.0, 2.0], &[3.0, 4.0]]);
        assert!((frobenius_norm(&a) - 30f64.sqrt()).abs() < 1e-15);
        assert!((frobenius_norm(&a) - 5.477226).abs() < 1e-6);
        assert_eq!(frobenius_norm(&Matrix::identity(2)), 2f64.sqrt());
        assert_eq!(frobenius_norm(&Matrix::zeros(3, 3)), 0.0);
    }

    #[test]
    fn construction_rejects_bad_input() {
        assert!(matches!(Matrix::new(2, 2, vec![1.0; 3]), Err(Error::Shape(_))));
        assert!(matches!(Matrix::new(0, 2, vec![]), Err(Error::Shape(_))));
        assert!(matches!(
            Matrix::new(1, 2, vec![1.0, f64::NAN]),
            Err(Error::NonFinite { index: 1, .. })
        ));
        assert!(Vector::new(vec![f64::INFINITY]).is_err());
    }

    fn matrix_strategy(rows: usize, cols: usize) -> impl Strategy<Value = Matrix> {
        prop::collection::vec(-2.0f64..2.0, rows * cols)
            .prop_map(move |d| Matrix::new(rows, cols, d).unwrap())
    }

    proptest! {
        #[test]
        fn matmul_is_associative(
            a in matrix_strategy(3, 4),
            b in matrix_strategy(4, 2),
            c in matrix_strategy(2, 5),
        ) {
            let left = matmul(&matmul(&a, &b).unwrap(), &c).unwrap();
            let right = matmul(&a, &matmul(&b, &c).unwrap()).unwrap();
            let scale = left.data().iter().fold(1.0f64, |s, x| s.max(x.abs()));
            for (l, r) in left.data().iter().zip(right.data()) {
                prop_assert!((l - r).abs() <= 1e-6 * scale);
            }
        }

        #[test]
        fn frobenius_squared_is_hadamard_sum(a in matrix_strategy(4, 3)) {
            let f2 = frobenius_norm(&a).powi(2);
            let s = a.hadamard(&a).unwrap().sum();
            prop_assert!((f2 - s).abs() <= 1e-12 * s.max(f64::MIN_POSITIVE));
        }

        #[test]
        fn row_sums_of_transpose_are_col_sums(a in matrix_strategy(3, 5)) {
            prop_assert_eq!(abs_row_sums(&a.transpose()), abs_col_sums(&a));
        }
    }
}
