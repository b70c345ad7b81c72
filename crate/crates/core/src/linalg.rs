//! Dense row-major `f64` matrices and the handful of factorizations the
//! solvers and constructions need.

use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::ops::{Index, IndexMut};

use crate::error::{shape, Error, Result};
use crate::rng;

/// Row-major real matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "matrix dimensions must be positive");
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn diag(values: &[f64]) -> Self {
        let mut m = Self::zeros(values.len(), values.len());
        for (i, &v) in values.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m[(i, j)] = f(i, j);
            }
        }
        m
    }

    /// Wraps a row-major buffer; rejects wrong lengths and non-finite entries.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(shape("from_vec", "dimensions must be positive"));
        }
        if data.len() != rows * cols {
            return Err(shape(
                "from_vec",
                format!("{} entries for a {rows}x{cols} matrix", data.len()),
            ));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("non-finite entry at flat index {pos}")));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(shape("from_rows", "ragged rows"));
        }
        Self::from_vec(r, c, rows.concat())
    }

    pub fn column_vector(v: &[f64]) -> Self {
        Self { rows: v.len(), cols: 1, data: v.to_vec() }
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

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn col(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn scale(&self, s: f64) -> Self {
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().map(|v| v * s).collect() }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip(other, "sub", |a, b| a - b)
    }

    fn zip(&self, other: &Self, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if self.shape() != other.shape() {
            return Err(shape(op, format!("{:?} vs {:?}", self.shape(), other.shape())));
        }
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Ok(Self { rows: self.rows, cols: self.cols, data })
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Copies the `h`×`w` block whose top-left corner is `(r0, c0)`.
    pub fn block(&self, r0: usize, c0: usize, h: usize, w: usize) -> Self {
        assert!(r0 + h <= self.rows && c0 + w <= self.cols, "block out of bounds");
        Self::from_fn(h, w, |i, j| self[(r0 + i, c0 + j)])
    }

    pub fn set_block(&mut self, r0: usize, c0: usize, m: &Self) {
        assert!(r0 + m.rows <= self.rows && c0 + m.cols <= self.cols, "block out of bounds");
        for i in 0..m.rows {
            for j in 0..m.cols {
                self[(r0 + i, c0 + j)] = m[(i, j)];
            }
        }
    }

    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.cols {
            return Err(shape("matvec", format!("{}x{} times length {}", self.rows, self.cols, v.len())));
        }
        Ok((0..self.rows).map(|i| dot(self.row(i), v)).collect())
    }

    /// Writes one matrix row per line with 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let mut line = String::new();
        for i in 0..self.rows {
            line.clear();
            for (j, v) in self.row(i).iter().enumerate() {
                if j > 0 {
                    line.push(',');
                }
                write!(line, "{}", fmt_f64(*v)).expect("writing to a String cannot fail");
            }
            line.push('\n');
            w.write_all(line.as_bytes())?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut rows = Vec::new();
        for (lineno, line) in r.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let row = line
                .split(',')
                .map(|s| {
                    s.trim().parse::<f64>().map_err(|e| {
                        Error::Parse(format!("line {}: `{}`: {e}", lineno + 1, s.trim()))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push(row);
        }
        Self::from_rows(&rows)
    }
}

impl Index<(usize, usize)> for DenseMatrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for DenseMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

/// Formats with 17 significant digits, the shortest width that always
/// round-trips an `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// Plain `ikj` product. Summation order is fixed so results are reproducible.
pub fn matmul(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    if a.cols != b.rows {
        return Err(shape(
            "matmul",
            format!("{}x{} times {}x{}", a.rows, a.cols, b.rows, b.cols),
        ));
    }
    let mut out = DenseMatrix::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        let out_row = &mut out.data[i * b.cols..(i + 1) * b.cols];
        for k in 0..a.cols {
            let aik = a.data[i * a.cols + k];
            if aik == 0.0 {
                continue;
            }
            let b_row = &b.data[k * b.cols..(k + 1) * b.cols];
            for (o, &bkj) in out_row.iter_mut().zip(b_row) {
                *o += aik * bkj;
            }
        }
    }
    Ok(out)
}

/// Power-iteration estimate of the largest singular value.
///
/// Runs power iteration on `aᵀa` from a seeded Gaussian start and returns
/// the best Rayleigh estimate `‖a v‖ / ‖v‖` seen so far, which never
/// exceeds `σ_max(a)` and never decreases with `iters`.
pub fn spectral_norm_est(a: &DenseMatrix, iters: usize, seed: u64) -> f64 {
    assert!(iters >= 1, "iters must be at least 1");
    if a.data.iter().all(|&v| v == 0.0) {
        return 0.0;
    }
    let at = a.transpose();
    let mut rng = rng::stream(seed, rng::streams::POWER_ITERATION);
    let mut v = rng::gaussian_vec(&mut rng, a.cols);
    let mut best = 0.0_f64;
    for _ in 0..iters {
        let av = a.matvec(&v).expect("shapes agree by construction");
        let est = (dot(&av, &av) / dot(&v, &v)).sqrt();
        best = best.max(est);
        let w = at.matvec(&av).expect("shapes agree by construction");
        let nw = norm2(&w);
        if nw == 0.0 {
            break;
        }
        v = w.into_iter().map(|x| x / nw).collect();
    }
    best
}

/// Solves `a x = b` for symmetric positive definite `a` by Cholesky.
///
/// Symmetry is checked to `1e-12` relative to the largest entry; a
/// non-positive pivot reports the failing index.
pub fn solve_spd(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    if !a.is_square() || b.rows != a.rows {
        return Err(shape(
            "solve_spd",
            format!("a is {:?}, b is {:?}", a.shape(), b.shape()),
        ));
    }
    let l = cholesky(a)?;
    let n = a.rows;
    let mut x = b.clone();
    for c in 0..b.cols {
        // forward substitution L z = b
        for i in 0..n {
            let mut s = x[(i, c)];
            for k in 0..i {
                s -= l[(i, k)] * x[(k, c)];
            }
            x[(i, c)] = s / l[(i, i)];
        }
        // back substitution Lᵀ x = z
        for i in (0..n).rev() {
            let mut s = x[(i, c)];
            for k in i + 1..n {
                s -= l[(k, i)] * x[(k, c)];
            }
            x[(i, c)] = s / l[(i, i)];
        }
    }
    Ok(x)
}

/// Lower Cholesky factor of a symmetric positive definite matrix.
pub fn cholesky(a: &DenseMatrix) -> Result<DenseMatrix> {
    if !a.is_square() {
        return Err(shape("cholesky", format!("{:?} is not square", a.shape())));
    }
    check_symmetric(a, 1e-12)?;
    let n = a.rows;
    let mut l = DenseMatrix::zeros(n, n);
    for j in 0..n {
        let mut s = a[(j, j)];
        for k in 0..j {
            s -= l[(j, k)] * l[(j, k)];
        }
        if s <= 0.0 || !s.is_finite() {
            return Err(Error::NotPositiveDefinite { pivot: j, value: s });
        }
        let ljj = s.sqrt();
        l[(j, j)] = ljj;
        for i in j + 1..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / ljj;
        }
    }
    Ok(l)
}

fn check_symmetric(a: &DenseMatrix, rel: f64) -> Result<()> {
    let tol = rel * a.max_abs();
    for i in 0..a.rows {
        for j in i + 1..a.cols {
            let gap = (a[(i, j)] - a[(j, i)]).abs();
            if gap > tol {
                return Err(Error::Asymmetric { i, j, gap });
            }
        }
    }
    Ok(())
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, ascending.
pub fn sym_eigenvalues(a: &DenseMatrix) -> Result<Vec<f64>> {
    if !a.is_square() {
        return Err(shape("sym_eigenvalues", format!("{:?} is not square", a.shape())));
    }
    check_symmetric(a, 1e-10)?;
    let n = a.rows;
    let mut m = a.clone();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[(i, j)] * m[(i, j)])
            .sum();
        if off <= 1e-30 * m.frobenius_norm().powi(2) || off == 0.0 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| m[(i, i)]).collect();
    ev.sort_by(f64::total_cmp);
    Ok(ev)
}

/// Orthogonal factor `Q` of a Householder QR of a square matrix, with column
/// signs fixed so that `R` has a nonnegative diagonal.
pub fn orthogonal_factor(a: &DenseMatrix) -> Result<DenseMatrix> {
    if !a.is_square() {
        return Err(shape("orthogonal_factor", format!("{:?} is not square", a.shape())));
    }
    let n = a.rows;
    let mut r = a.clone();
    let mut q = DenseMatrix::identity(n);
    for k in 0..n.saturating_sub(1) {
        let x: Vec<f64> = (k..n).map(|i| r[(i, k)]).collect();
        let alpha = -x[0].signum() * norm2(&x);
        let alpha = if x[0] == 0.0 { -norm2(&x) } else { alpha };
        let mut v = x;
        v[0] -= alpha;
        let vn = norm2(&v);
        if vn == 0.0 {
            continue;
        }
        v.iter_mut().for_each(|e| *e /= vn);
        // R <- H R, Q <- Q H with H = I - 2 v vᵀ acting on rows/cols k..n
        for j in 0..n {
            let s: f64 = (k..n).map(|i| v[i - k] * r[(i, j)]).sum();
            for i in k..n {
                r[(i, j)] -= 2.0 * v[i - k] * s;
            }
        }
        for i in 0..n {
            let s: f64 = (k..n).map(|j| q[(i, j)] * v[j - k]).sum();
            for j in k..n {
                q[(i, j)] -= 2.0 * s * v[j - k];
            }
        }
    }
    for k in 0..n {
        if r[(k, k)] < 0.0 {
            for i in 0..n {
                q[(i, k)] = -q[(i, k)];
            }
        }
    }
    Ok(q)
}
