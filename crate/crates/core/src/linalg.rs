//! Small dense matrices (at most 3×3) stored row-major, and point helpers.

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use std::ops::{Add, AddAssign, Mul, Neg, Sub, SubAssign};

/// Largest supported row or column count.
pub const MAX_DIM: usize = 3;

/// A point or vector in R^n, n ≤ 3; unused trailing entries are zero.
pub type Point = [f64; 3];

/// Dense m×n matrix with m, n ≤ 3, row-major. All norms are Frobenius.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: [f64; 9],
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(
            (1..=MAX_DIM).contains(&rows) && (1..=MAX_DIM).contains(&cols),
            "matrix shape {rows}x{cols} outside 1..=3"
        );
        Matrix {
            rows,
            cols,
            data: [0.0; 9],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    /// Builds a matrix from a row-major slice of length `rows * cols`.
    pub fn from_row_major(rows: usize, cols: usize, values: &[f64]) -> Option<Self> {
        if values.len() != rows * cols || rows == 0 || cols == 0 || rows > 3 || cols > 3 {
            return None;
        }
        let mut m = Matrix::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m.set(i, j, values[i * cols + j]);
            }
        }
        Some(m)
    }

    /// a ⊗ b with (a ⊗ b)_{ij} = a_i b_j.
    pub fn outer(a: &[f64], b: &[f64]) -> Self {
        let mut m = Matrix::zeros(a.len(), b.len());
        for (i, ai) in a.iter().enumerate() {
            for (j, bj) in b.iter().enumerate() {
                m.set(i, j, ai * bj);
            }
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
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * 3 + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.data[i * 3 + j] = value;
    }

    /// Row-major entries, length rows·cols.
    pub fn to_row_major(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.rows * self.cols);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.push(self.get(i, j));
            }
        }
        out
    }

    pub fn same_shape(&self, other: &Matrix) -> bool {
        self.rows == other.rows && self.cols == other.cols
    }

    /// Frobenius inner product.
    pub fn dot(&self, other: &Matrix) -> f64 {
        debug_assert!(self.same_shape(other));
        self.data.iter().zip(other.data.iter()).map(|(a, b)| a * b).sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.dot(self)
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn scale(&self, s: f64) -> Matrix {
        let mut out = *self;
        out.data.iter_mut().for_each(|x| *x *= s);
        out
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.set(j, i, self.get(i, j));
            }
        }
        out
    }

    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows);
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for j in 0..other.cols {
                let mut acc = 0.0;
                for k in 0..self.cols {
                    acc += self.get(i, k) * other.get(k, j);
                }
                out.set(i, j, acc);
            }
        }
        out
    }

    /// Matrix-vector product on the first `cols` entries of `x`.
    pub fn apply(&self, x: &[f64]) -> Point {
        let mut out = [0.0; 3];
        for (i, o) in out.iter_mut().enumerate().take(self.rows) {
            *o = (0..self.cols).map(|j| self.get(i, j) * x[j]).sum();
        }
        out
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self.get(i, i)).sum()
    }

    /// Determinant; panics for non-square input.
    pub fn det(&self) -> f64 {
        assert_eq!(self.rows, self.cols, "determinant of a non-square matrix");
        let a = |i, j| self.get(i, j);
        match self.rows {
            1 => a(0, 0),
            2 => a(0, 0) * a(1, 1) - a(0, 1) * a(1, 0),
            _ => {
                a(0, 0) * (a(1, 1) * a(2, 2) - a(1, 2) * a(2, 1))
                    - a(0, 1) * (a(1, 0) * a(2, 2) - a(1, 2) * a(2, 0))
                    + a(0, 2) * (a(1, 0) * a(2, 1) - a(1, 1) * a(2, 0))
            }
        }
    }

    /// Cofactor matrix, (Cof s)_{ij} = (−1)^{i+j} det of s with row i and column j removed.
    pub fn cofactor(&self) -> Matrix {
        assert_eq!(self.rows, self.cols, "cofactor of a non-square matrix");
        let n = self.rows;
        let mut out = Matrix::zeros(n, n);
        if n == 1 {
            out.set(0, 0, 1.0);
            return out;
        }
        for i in 0..n {
            for j in 0..n {
                let minor = self.minor(i, j);
                let sign = if (i + j) % 2 == 0 { 1.0 } else { -1.0 };
                out.set(i, j, sign * minor);
            }
        }
        out
    }

    fn minor(&self, row: usize, col: usize) -> f64 {
        let n = self.rows;
        let keep_r: Vec<usize> = (0..n).filter(|&r| r != row).collect();
        let keep_c: Vec<usize> = (0..n).filter(|&c| c != col).collect();
        let mut sub = Matrix::zeros(n - 1, n - 1);
        for (a, &r) in keep_r.iter().enumerate() {
            for (b, &c) in keep_c.iter().enumerate() {
                sub.set(a, b, self.get(r, c));
            }
        }
        sub.det()
    }

    /// Largest absolute 2×2 minor; zero exactly for rank ≤ 1.
    pub fn max_minor_2x2(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.rows {
            for k in (i + 1)..self.rows {
                for j in 0..self.cols {
                    for l in (j + 1)..self.cols {
                        let m = self.get(i, j) * self.get(k, l) - self.get(i, l) * self.get(k, j);
                        worst = worst.max(m.abs());
                    }
                }
            }
        }
        worst
    }

    /// Rank-one test relative to the squared norm.
    pub fn is_rank_one(&self, tol: f64) -> bool {
        let n2 = self.norm_sq();
        n2 > 0.0 && self.max_minor_2x2() <= tol * n2
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, x| m.max(x.abs()))
    }
}

impl Add for Matrix {
    type Output = Matrix;
    fn add(mut self, rhs: Matrix) -> Matrix {
        debug_assert!(self.same_shape(&rhs));
        self.data.iter_mut().zip(rhs.data.iter()).for_each(|(a, b)| *a += b);
        self
    }
}

impl AddAssign for Matrix {
    fn add_assign(&mut self, rhs: Matrix) {
        *self = *self + rhs;
    }
}

impl Sub for Matrix {
    type Output = Matrix;
    fn sub(mut self, rhs: Matrix) -> Matrix {
        debug_assert!(self.same_shape(&rhs));
        self.data.iter_mut().zip(rhs.data.iter()).for_each(|(a, b)| *a -= b);
        self
    }
}

impl SubAssign for Matrix {
    fn sub_assign(&mut self, rhs: Matrix) {
        *self = *self - rhs;
    }
}

impl Neg for Matrix {
    type Output = Matrix;
    fn neg(self) -> Matrix {
        self.scale(-1.0)
    }
}

impl Mul<f64> for Matrix {
    type Output = Matrix;
    fn mul(self, rhs: f64) -> Matrix {
        self.scale(rhs)
    }
}

#[derive(Serialize, Deserialize)]
struct MatrixRepr {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Serialize for Matrix {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        MatrixRepr {
            rows: self.rows,
            cols: self.cols,
            data: self.to_row_major(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Matrix {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let repr = MatrixRepr::deserialize(deserializer)?;
        Matrix::from_row_major(repr.rows, repr.cols, &repr.data).ok_or_else(|| {
            serde::de::Error::custom(format!(
                "matrix {}x{} needs {} row-major entries (got {})",
                repr.rows,
                repr.cols,
                repr.rows * repr.cols,
                repr.data.len()
            ))
        })
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn sub(a: &Point, b: &Point) -> Point {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn add_scaled(a: &Point, s: f64, b: &Point) -> Point {
    [a[0] + s * b[0], a[1] + s * b[1], a[2] + s * b[2]]
}

/// Pads a slice of length ≤ 3 into a point.
pub fn point(xs: &[f64]) -> Point {
    let mut p = [0.0; 3];
    p[..xs.len()].copy_from_slice(xs);
    p
}

/// Orthogonal matrix with determinant +1 (for n ≥ 2) sending e_n to the unit vector `rho`.
pub fn rotation_to(rho: &[f64]) -> Matrix {
    let n = rho.len();
    if n == 1 {
        let mut m = Matrix::zeros(1, 1);
        m.set(0, 0, rho[0].signum());
        return m;
    }
    let mut w = vec![0.0; n];
    w[n - 1] = 1.0;
    for i in 0..n {
        w[i] -= rho[i];
    }
    let ww = dot(&w, &w);
    let mut h = Matrix::identity(n);
    if ww > 1e-30 {
        for i in 0..n {
            for j in 0..n {
                h.set(i, j, h.get(i, j) - 2.0 * w[i] * w[j] / ww);
            }
        }
        // flip the first axis so the determinant becomes +1
        for i in 0..n {
            h.set(i, 0, -h.get(i, 0));
        }
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cofactor_matches_adjugate_identity() {
        let s = Matrix::from_row_major(3, 3, &[1.0, 2.0, -1.0, 0.5, 3.0, 2.0, -2.0, 1.0, 4.0])
            .unwrap();
        let prod = s.matmul(&s.cofactor().transpose());
        let d = s.det();
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j { d } else { 0.0 };
                assert!((prod.get(i, j) - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rotation_sends_last_axis_to_rho() {
        for rho in [vec![0.0, 1.0], vec![1.0 / 2f64.sqrt(), 1.0 / 2f64.sqrt()], vec![0.0, 0.0, 1.0], vec![0.6, 0.0, -0.8]] {
            let q = rotation_to(&rho);
            let mut e = vec![0.0; rho.len()];
            e[rho.len() - 1] = 1.0;
            let img = q.apply(&e);
            for i in 0..rho.len() {
                assert!((img[i] - rho[i]).abs() < 1e-14);
            }
            assert!((q.det() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn rank_one_detection() {
        let a = Matrix::outer(&[1.0, 2.0], &[0.0, 3.0]);
        assert!(a.is_rank_one(1e-10));
        assert!(!Matrix::identity(2).is_rank_one(1e-10));
    }

    #[test]
    fn json_shape_is_checked() {
        let m: Matrix = serde_json::from_str(r#"{"rows":2,"cols":2,"data":[1,2,3,4]}"#).unwrap();
        assert_eq!(m.get(1, 0), 3.0);
        assert!(serde_json::from_str::<Matrix>(r#"{"rows":2,"cols":2,"data":[1,2,3]}"#).is_err());
    }
}
