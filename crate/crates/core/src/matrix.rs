//! Dense square matrices over the return state space.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance used when validating that rows of a transition matrix sum to one.
pub const STOCHASTIC_TOLERANCE: f64 = 1e-9;

/// Row-major square matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct Matrix {
    size: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(size: usize) -> Self {
        Self {
            size,
            data: vec![0.0; size * size],
        }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let size = rows.len();
        if size == 0 {
            return Err(Error::Empty("matrix"));
        }
        let mut data = Vec::with_capacity(size * size);
        for row in &rows {
            if row.len() != size {
                return Err(Error::ShapeMismatch {
                    left: size,
                    right: row.len(),
                });
            }
            if row.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidParameter("matrix entries must be finite".into()));
            }
            data.extend_from_slice(row);
        }
        Ok(Self { size, data })
    }

    #[inline]
    pub fn size(&self) -> usize {
        self.size
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.size + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.data[i * self.size + j] = value;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.size..(i + 1) * self.size]
    }

    pub fn entries(&self) -> &[f64] {
        &self.data
    }

    pub fn total(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.size).map(<[f64]>::to_vec).collect()
    }

    /// Divide every row by its sum. Rows summing to zero become uniform.
    pub fn normalized_rows(&self) -> Self {
        let mut out = self.clone();
        let n = self.size;
        for row in out.data.chunks_mut(n) {
            let s: f64 = row.iter().sum();
            if s > 0.0 {
                row.iter_mut().for_each(|x| *x /= s);
            } else {
                row.iter_mut().for_each(|x| *x = 1.0 / n as f64);
            }
        }
        out
    }
}

impl TryFrom<Vec<Vec<f64>>> for Matrix {
    type Error = Error;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        Matrix::from_rows(rows)
    }
}

impl From<Matrix> for Vec<Vec<f64>> {
    fn from(m: Matrix) -> Self {
        m.rows()
    }
}

/// A row-stochastic transition matrix with precomputed cumulative rows for sampling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Matrix", into = "Matrix")]
pub struct StochasticMatrix {
    matrix: Matrix,
    cumulative: Vec<f64>,
}

impl StochasticMatrix {
    pub fn new(matrix: Matrix) -> Result<Self> {
        for i in 0..matrix.size() {
            let row = matrix.row(i);
            if row.iter().any(|&p| p < 0.0) {
                return Err(Error::NotStochastic(format!("row {i} has a negative entry")));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > STOCHASTIC_TOLERANCE {
                return Err(Error::NotStochastic(format!("row {i} sums to {s}")));
            }
        }
        let n = matrix.size();
        let mut cumulative = Vec::with_capacity(n * n);
        for i in 0..n {
            let mut acc = 0.0;
            for &p in matrix.row(i) {
                acc += p;
                cumulative.push(acc);
            }
        }
        Ok(Self { matrix, cumulative })
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(Matrix::from_rows(rows)?)
    }

    pub fn uniform(size: usize) -> Self {
        let mut m = Matrix::zeros(size);
        for i in 0..size {
            for j in 0..size {
                m.set(i, j, 1.0 / size as f64);
            }
        }
        Self::new(m).expect("uniform rows are stochastic")
    }

    #[inline]
    pub fn size(&self) -> usize {
        self.matrix.size()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.matrix.get(i, j)
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        self.matrix.row(i)
    }

    pub fn as_matrix(&self) -> &Matrix {
        &self.matrix
    }

    /// Inverse-CDF draw of the successor of `from` given a uniform `u` in [0, 1).
    #[inline]
    pub fn sample_next(&self, from: usize, u: f64) -> usize {
        let n = self.matrix.size();
        let cum = &self.cumulative[from * n..(from + 1) * n];
        for (j, &c) in cum.iter().enumerate() {
            if u < c {
                return j;
            }
        }
        // u landed in the rounding slack above the last cumulative value;
        // return the last state with positive probability.
        let row = self.matrix.row(from);
        row.iter().rposition(|&p| p > 0.0).unwrap_or(n - 1)
    }
}

impl TryFrom<Matrix> for StochasticMatrix {
    type Error = Error;

    fn try_from(m: Matrix) -> Result<Self> {
        StochasticMatrix::new(m)
    }
}

impl From<StochasticMatrix> for Matrix {
    fn from(m: StochasticMatrix) -> Self {
        m.matrix
    }
}
