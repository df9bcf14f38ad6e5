//! Dense row-major matrices over `f64`, sized for control loops (a handful of
//! states and inputs), plus the matrix exponential and a norm-based spectral
//! radius estimate.

use std::fmt;
use std::ops::{Add, Index, Mul, Sub};

use crate::error::{Error, Result};

/// A dense `rows x cols` matrix with row-major storage.
///
/// Construction validates that every entry is finite; arithmetic operators
/// panic on dimension mismatch (callers are expected to have validated shapes
/// through the typed constructors).
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    entries: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, entries: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Dimension(format!(
                "matrix dimensions must be positive, got {rows}x{cols}"
            )));
        }
        if entries.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "{rows}x{cols} matrix needs {} entries, got {}",
                rows * cols,
                entries.len()
            )));
        }
        if let Some(bad) = entries.iter().find(|e| !e.is_finite()) {
            return Err(Error::Domain(format!("non-finite matrix entry {bad}")));
        }
        Ok(Self {
            rows,
            cols,
            entries,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::Dimension("ragged matrix rows".into()));
        }
        Self::new(r, c, rows.concat())
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            entries: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.entries[i * n + i] = 1.0;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.entries[i * self.cols + j] = value;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.cols..(i + 1) * self.cols]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    /// Rows of the matrix as owned vectors (the nested-array form used by
    /// scenario files).
    pub fn to_nested(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.entries[j * self.rows + i] = self.get(i, j);
            }
        }
        out
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            entries: self.entries.iter().map(|e| e * s).collect(),
        }
    }

    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(
            self.cols, other.rows,
            "matmul dimension mismatch: {}x{} * {}x{}",
            self.rows, self.cols, other.rows, other.cols
        );
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out.entries[i * other.cols + j] += a * other.get(k, j);
                }
            }
        }
        out
    }

    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(
            self.cols,
            v.len(),
            "matvec dimension mismatch: {}x{} * {}",
            self.rows,
            self.cols,
            v.len()
        );
        (0..self.rows).map(|i| dot(self.row(i), v)).collect()
    }

    /// Maximum absolute column sum (the induced 1-norm).
    pub fn norm_one(&self) -> f64 {
        (0..self.cols)
            .map(|j| (0..self.rows).map(|i| self.get(i, j).abs()).sum())
            .fold(0.0, f64::max)
    }

    /// Maximum absolute row sum (the induced infinity norm).
    pub fn norm_inf(&self) -> f64 {
        (0..self.rows)
            .map(|i| self.row(i).iter().map(|e| e.abs()).sum())
            .fold(0.0, f64::max)
    }

    pub fn norm_fro(&self) -> f64 {
        self.entries.iter().map(|e| e * e).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.entries.iter().fold(0.0, |m, e| m.max(e.abs()))
    }

    pub fn block(&self, r0: usize, c0: usize, rows: usize, cols: usize) -> Self {
        assert!(r0 + rows <= self.rows && c0 + cols <= self.cols);
        let mut out = Self::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                out.entries[i * cols + j] = self.get(r0 + i, c0 + j);
            }
        }
        out
    }

    pub fn set_block(&mut self, r0: usize, c0: usize, block: &Self) {
        assert!(r0 + block.rows <= self.rows && c0 + block.cols <= self.cols);
        for i in 0..block.rows {
            for j in 0..block.cols {
                self.set(r0 + i, c0 + j, block.get(i, j));
            }
        }
    }

    /// Solve `self * X = rhs` by Gaussian elimination with partial pivoting.
    pub fn solve(&self, rhs: &Self) -> Result<Self> {
        if !self.is_square() {
            return Err(Error::Dimension(format!(
                "solve needs a square system, got {}x{}",
                self.rows, self.cols
            )));
        }
        if rhs.rows != self.rows {
            return Err(Error::Dimension(format!(
                "solve rhs has {} rows, expected {}",
                rhs.rows, self.rows
            )));
        }
        let n = self.rows;
        let m = rhs.cols;
        let mut a = self.entries.clone();
        let mut b = rhs.entries.clone();
        for col in 0..n {
            let pivot_row = (col..n)
                .max_by(|&r, &s| {
                    a[r * n + col]
                        .abs()
                        .total_cmp(&a[s * n + col].abs())
                })
                .unwrap();
            let pivot = a[pivot_row * n + col];
            if pivot.abs() < f64::EPSILON * self.norm_inf().max(1.0) {
                return Err(Error::Domain("singular matrix in solve".into()));
            }
            if pivot_row != col {
                for j in 0..n {
                    a.swap(col * n + j, pivot_row * n + j);
                }
                for j in 0..m {
                    b.swap(col * m + j, pivot_row * m + j);
                }
            }
            for r in col + 1..n {
                let factor = a[r * n + col] / a[col * n + col];
                if factor == 0.0 {
                    continue;
                }
                for j in col..n {
                    a[r * n + j] -= factor * a[col * n + j];
                }
                for j in 0..m {
                    b[r * m + j] -= factor * b[col * m + j];
                }
            }
        }
        for col in (0..n).rev() {
            for j in 0..m {
                let mut s = b[col * m + j];
                for k in col + 1..n {
                    s -= a[col * n + k] * b[k * m + j];
                }
                b[col * m + j] = s / a[col * n + col];
            }
        }
        Matrix::new(n, m, b)
    }

    pub fn inverse(&self) -> Result<Self> {
        self.solve(&Matrix::identity(self.rows))
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.entries[i * self.cols + j]
    }
}

impl Add for &Matrix {
    type Output = Matrix;

    fn add(self, other: &Matrix) -> Matrix {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        Matrix {
            rows: self.rows,
            cols: self.cols,
            entries: self
                .entries
                .iter()
                .zip(&other.entries)
                .map(|(a, b)| a + b)
                .collect(),
        }
    }
}

impl Sub for &Matrix {
    type Output = Matrix;

    fn sub(self, other: &Matrix) -> Matrix {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        Matrix {
            rows: self.rows,
            cols: self.cols,
            entries: self
                .entries
                .iter()
                .zip(&other.entries)
                .map(|(a, b)| a - b)
                .collect(),
        }
    }
}

impl Mul for &Matrix {
    type Output = Matrix;

    fn mul(self, other: &Matrix) -> Matrix {
        self.matmul(other)
    }
}

impl fmt::Display for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for i in 0..self.rows {
            for (j, e) in self.row(i).iter().enumerate() {
                if j > 0 {
                    write!(f, " ")?;
                }
                write!(f, "{e}")?;
            }
            if i + 1 < self.rows {
                writeln!(f)?;
            }
        }
        Ok(())
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// Numerators of the degree-13 Pade approximant of the exponential.
const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];

/// Largest 1-norm for which the [13/13] Pade approximant stays within unit
/// roundoff of the exponential (Higham's theta_13).
const PADE13_THETA: f64 = 5.371920351148152;

/// Matrix exponential `e^{m t}` by scaling and squaring with a [13/13] Pade
/// approximant.
pub fn mat_exp(m: &Matrix, t: f64) -> Result<Matrix> {
    if !m.is_square() {
        return Err(Error::Dimension(format!(
            "matrix exponential needs a square matrix, got {}x{}",
            m.rows(),
            m.cols()
        )));
    }
    if !t.is_finite() || t < 0.0 {
        return Err(Error::Domain(format!(
            "matrix exponential needs a finite nonnegative time, got {t}"
        )));
    }
    let a = m.scale(t);
    let eta = a.norm_one();
    let squarings = if eta <= PADE13_THETA {
        0
    } else {
        (eta / PADE13_THETA).log2().ceil() as u32
    };
    let a = a.scale(0.5f64.powi(squarings as i32));

    let n = a.rows();
    let ident = Matrix::identity(n);
    let a2 = &a * &a;
    let a4 = &a2 * &a2;
    let a6 = &a2 * &a4;
    let b = &PADE13;

    let u_inner = &(&a6.scale(b[13]) + &a4.scale(b[11])) + &a2.scale(b[9]);
    let u_poly = &(&(&(&a6 * &u_inner) + &a6.scale(b[7])) + &a4.scale(b[5])) + &a2.scale(b[3]);
    let u = &a * &(&u_poly + &ident.scale(b[1]));

    let v_inner = &(&a6.scale(b[12]) + &a4.scale(b[10])) + &a2.scale(b[8]);
    let v = &(&(&(&a6 * &v_inner) + &a6.scale(b[6])) + &a4.scale(b[4]))
        + &(&a2.scale(b[2]) + &ident.scale(b[0]));

    let mut result = (&v - &u).solve(&(&v + &u))?;
    for _ in 0..squarings {
        result = &result * &result;
    }
    Ok(result)
}

/// Relative convergence tolerance for successive spectral radius estimates.
const RADIUS_TOL: f64 = 1e-6;
/// Repeated-squaring budget; 2^40 powers are enough for any radius gap.
const RADIUS_MAX_SQUARINGS: usize = 40;
/// Norms of low powers can plateau before the dominant eigenvalue takes
/// over (e.g. rotation-like blocks), so convergence is only trusted after
/// this many squarings and two consecutive agreements.
const RADIUS_MIN_SQUARINGS: usize = 12;

/// Spectral radius estimate via norm-normalized repeated squaring,
/// `rho = lim ||M^{2^k}||^{1/2^k}`.
///
/// Converges when successive estimates agree to `1e-6` relative twice in a
/// row past the minimum squaring count, or the budget runs out; an exactly
/// nilpotent power short-circuits to 0.
pub fn spectral_radius(m: &Matrix) -> Result<f64> {
    if !m.is_square() {
        return Err(Error::Dimension(format!(
            "spectral radius needs a square matrix, got {}x{}",
            m.rows(),
            m.cols()
        )));
    }
    let norm = m.norm_inf();
    if norm == 0.0 {
        return Ok(0.0);
    }
    // Track M^{2^k} = e^{log_scale} * b with ||b|| = 1 to dodge overflow.
    let mut b = m.scale(1.0 / norm);
    let mut log_scale = norm.ln();
    let mut estimate = norm;
    let mut agreed = 0usize;
    for k in 1..=RADIUS_MAX_SQUARINGS {
        let squared = &b * &b;
        let s = squared.norm_inf();
        if s == 0.0 {
            return Ok(0.0);
        }
        b = squared.scale(1.0 / s);
        log_scale = 2.0 * log_scale + s.ln();
        let next = (log_scale / 2f64.powi(k as i32)).exp();
        if (next - estimate).abs() <= RADIUS_TOL * next.max(f64::MIN_POSITIVE) {
            agreed += 1;
            if k >= RADIUS_MIN_SQUARINGS && agreed >= 2 {
                return Ok(next);
            }
        } else {
            agreed = 0;
        }
        estimate = next;
    }
    Ok(estimate)
}
