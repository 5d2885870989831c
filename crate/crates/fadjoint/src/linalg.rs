//! Dense f64 vector/matrix kernel with seeded randomness.
//!
//! Everything is plain row-major storage and serial, fixed-order reductions,
//! so results are bitwise reproducible run to run.

use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Column vector of f64 values.
#[derive(Debug, Clone, PartialEq)]
pub struct Vector {
    data: Vec<f64>,
}

impl Vector {
    pub fn new(data: Vec<f64>) -> Self {
        Vector { data }
    }

    pub fn zeros(len: usize) -> Self {
        Vector {
            data: vec![0.0; len],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.data.iter()
    }

    /// Copy with `extra` appended at the end.
    pub fn with_appended(&self, extra: f64) -> Vector {
        let mut data = Vec::with_capacity(self.data.len() + 1);
        data.extend_from_slice(&self.data);
        data.push(extra);
        Vector { data }
    }

    /// Copy of all entries except the last one.
    pub fn without_last(&self) -> Vector {
        Vector {
            data: self.data[..self.data.len() - 1].to_vec(),
        }
    }

    /// Elementwise product; lengths must agree.
    pub fn hadamard(&self, other: &Vector) -> Result<Vector> {
        if self.len() != other.len() {
            return Err(Error::Shape {
                op: "hadamard",
                detail: format!("lengths {} vs {}", self.len(), other.len()),
            });
        }
        Ok(Vector {
            data: self
                .data
                .iter()
                .zip(other.data.iter())
                .map(|(a, b)| a * b)
                .collect(),
        })
    }

    /// Euclidean norm, serial summation.
    pub fn l2_norm(&self) -> f64 {
        let mut acc = 0.0;
        for v in &self.data {
            acc += v * v;
        }
        acc.sqrt()
    }

    pub fn scale(&self, factor: f64) -> Vector {
        Vector {
            data: self.data.iter().map(|v| v * factor).collect(),
        }
    }
}

impl From<Vec<f64>> for Vector {
    fn from(data: Vec<f64>) -> Self {
        Vector::new(data)
    }
}

impl std::ops::Index<usize> for Vector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.data[i]
    }
}

/// Row-major dense matrix of f64 values.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape {
                op: "Matrix::from_vec",
                detail: format!("{} entries for {}x{}", data.len(), rows, cols),
            });
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(nrows * ncols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != ncols {
                return Err(Error::Shape {
                    op: "Matrix::from_rows",
                    detail: format!("row {} has {} entries, expected {}", i, r.len(), ncols),
                });
            }
            data.extend_from_slice(r);
        }
        Matrix::from_vec(nrows, ncols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn to_nested_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|r| self.row(r).to_vec()).collect()
    }

    /// y = W x with y_i = sum_j W_ij x_j.
    pub fn mat_vec(&self, x: &Vector) -> Result<Vector> {
        if self.cols != x.len() {
            return Err(Error::Shape {
                op: "mat_vec",
                detail: format!("matrix {}x{} vs vector {}", self.rows, self.cols, x.len()),
            });
        }
        let xs = x.as_slice();
        let mut out = Vec::with_capacity(self.rows);
        for r in 0..self.rows {
            let mut acc = 0.0;
            for (w, v) in self.row(r).iter().zip(xs) {
                acc += w * v;
            }
            out.push(acc);
        }
        Ok(Vector { data: out })
    }

    /// u = (W without its last column)^T v, i.e. u_j = sum_i W_ij v_i for
    /// j < cols-1. The last column holds the bias and is never propagated
    /// backwards.
    pub fn mat_t_vec_nobias(&self, v: &Vector) -> Result<Vector> {
        if self.rows != v.len() || self.cols < 2 {
            return Err(Error::Shape {
                op: "mat_t_vec_nobias",
                detail: format!("matrix {}x{} vs vector {}", self.rows, self.cols, v.len()),
            });
        }
        let n = self.cols - 1;
        let mut out = vec![0.0; n];
        // row-wise accumulation keeps memory access sequential; per output
        // component the summation order over i is unchanged
        for (i, vi) in v.iter().enumerate() {
            let row = &self.row(i)[..n];
            for (o, w) in out.iter_mut().zip(row) {
                *o += vi * w;
            }
        }
        Ok(Vector { data: out })
    }

    /// self += alpha * other, entry by entry in storage order.
    pub fn axpy(&mut self, alpha: f64, other: &Matrix) -> Result<()> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::Shape {
                op: "axpy",
                detail: format!(
                    "{}x{} vs {}x{}",
                    self.rows, self.cols, other.rows, other.cols
                ),
            });
        }
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn frobenius_norm(&self) -> f64 {
        let mut acc = 0.0;
        for v in &self.data {
            acc += v * v;
        }
        acc.sqrt()
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        &self.data[r * self.cols + c]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }
}

/// Outer product M_ij = u_i v_j.
pub fn outer(u: &Vector, v: &Vector) -> Matrix {
    let mut data = Vec::with_capacity(u.len() * v.len());
    for ui in u.iter() {
        for vj in v.iter() {
            data.push(ui * vj);
        }
    }
    Matrix {
        rows: u.len(),
        cols: v.len(),
        data,
    }
}

/// Deterministic seedable generator; identical seeds give identical streams
/// on every platform.
#[derive(Debug, Clone)]
pub struct Rng {
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn seed_from(seed: u64) -> Self {
        Rng {
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Uniform draw from [0, 1).
    pub fn next_f64(&mut self) -> f64 {
        self.inner.gen::<f64>()
    }

    /// Uniform draw from [lo, hi).
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        self.inner.gen_range(lo..hi)
    }

    /// Standard normal draw (Box-Muller).
    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.next_f64(); // (0, 1]
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    /// Uniform draw from 0..n.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.gen_range(0..n)
    }

    pub fn shuffle<T>(&mut self, slice: &mut [T]) {
        use rand::seq::SliceRandom;
        slice.shuffle(&mut self.inner);
    }
}

/// Glorot-uniform weight matrix: non-bias entries i.i.d. uniform on
/// [-b, b) with b = sqrt(6 / (fan_in + fan_out)), fan_in = cols - 1
/// (the bias column is excluded from the fan counts), fan_out = rows.
/// The bias column starts at zero.
pub fn xavier_init(rows: usize, cols: usize, rng: &mut Rng) -> Matrix {
    assert!(rows >= 1 && cols >= 2, "xavier_init: need rows>=1, cols>=2");
    let fan_in = (cols - 1) as f64;
    let fan_out = rows as f64;
    let bound = (6.0 / (fan_in + fan_out)).sqrt();
    let mut m = Matrix::zeros(rows, cols);
    for r in 0..rows {
        for c in 0..cols - 1 {
            m[(r, c)] = rng.uniform(-bound, bound);
        }
    }
    m
}
