use std::fmt::Debug;
use std::ops::{Add, AddAssign, Div, Index, IndexMut, Mul, MulAssign, Neg, Sub, SubAssign};

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Pivots with magnitude below this are treated as exact zeros.
pub const PIVOT_EPS: f64 = 1e-12;

/// Field element usable by the dense kernels: `f64` or `Complex64`.
pub trait Scalar:
    Copy
    + Debug
    + PartialEq
    + Send
    + Sync
    + 'static
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
{
    fn zero() -> Self;
    fn one() -> Self;
    fn from_f64(x: f64) -> Self;
    fn modulus(self) -> f64;
    /// `self / |self|` as a complex number; zero maps to zero.
    fn unit_phase(self) -> Complex64;
    fn is_finite(self) -> bool;
}

impl Scalar for f64 {
    fn zero() -> Self {
        0.0
    }
    fn one() -> Self {
        1.0
    }
    fn from_f64(x: f64) -> Self {
        x
    }
    fn modulus(self) -> f64 {
        self.abs()
    }
    fn unit_phase(self) -> Complex64 {
        if self > 0.0 {
            Complex64::new(1.0, 0.0)
        } else if self < 0.0 {
            Complex64::new(-1.0, 0.0)
        } else {
            Complex64::new(0.0, 0.0)
        }
    }
    fn is_finite(self) -> bool {
        f64::is_finite(self)
    }
}

impl Scalar for Complex64 {
    fn zero() -> Self {
        Complex64::new(0.0, 0.0)
    }
    fn one() -> Self {
        Complex64::new(1.0, 0.0)
    }
    fn from_f64(x: f64) -> Self {
        Complex64::new(x, 0.0)
    }
    fn modulus(self) -> f64 {
        self.norm()
    }
    fn unit_phase(self) -> Complex64 {
        let r = self.norm();
        if r == 0.0 {
            Complex64::new(0.0, 0.0)
        } else {
            self / r
        }
    }
    fn is_finite(self) -> bool {
        self.re.is_finite() && self.im.is_finite()
    }
}

/// Dense row-major matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

pub type RMatrix = Matrix<f64>;
pub type CMatrix = Matrix<Complex64>;

impl<T: Scalar> Matrix<T> {
    pub fn new(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(Error::shape(format!(
                "{rows}x{cols} matrix needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![T::zero(); rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Matrix { rows, cols, data }
    }

    pub fn from_diag(diag: &[T]) -> Self {
        let mut m = Self::zeros(diag.len(), diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = d;
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

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |r, c| self[(c, r)])
    }

    pub fn matmul(&self, rhs: &Self) -> Result<Self> {
        if self.cols != rhs.rows {
            return Err(Error::shape(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        let mut out = Self::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == T::zero() {
                    continue;
                }
                let rrow = rhs.row(k);
                let orow = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
                for (o, &b) in orow.iter_mut().zip(rrow) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn matvec(&self, v: &[T]) -> Result<Vec<T>> {
        if v.len() != self.cols {
            return Err(Error::shape(format!(
                "cannot multiply {}x{} by vector of length {}",
                self.rows,
                self.cols,
                v.len()
            )));
        }
        Ok((0..self.rows).map(|r| self.row(r).iter().zip(v).fold(T::zero(), |acc, (&a, &b)| acc + a * b)).collect())
    }

    /// Largest entrywise modulus of `self - other`.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data.iter().zip(&other.data).map(|(&a, &b)| (a - b).modulus()).fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

impl RMatrix {
    pub fn to_complex(&self) -> CMatrix {
        Matrix { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&x| Complex64::new(x, 0.0)).collect() }
    }
}

impl<T> Index<(usize, usize)> for Matrix<T> {
    type Output = T;

    fn index(&self, (r, c): (usize, usize)) -> &T {
        debug_assert!(r < self.rows && c < self.cols);
        &self.data[r * self.cols + c]
    }
}

impl<T> IndexMut<(usize, usize)> for Matrix<T> {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut T {
        debug_assert!(r < self.rows && c < self.cols);
        &mut self.data[r * self.cols + c]
    }
}

/// Sign (or complex phase) and log-magnitude of a determinant.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SlogDet {
    pub phase: Complex64,
    pub log_abs: f64,
}

impl SlogDet {
    pub fn is_singular(&self) -> bool {
        self.log_abs == f64::NEG_INFINITY
    }
}

/// LU factorization with partial pivoting, `P_r · A = L · U`, packed in one buffer.
#[derive(Clone, Debug)]
pub struct Lu<T> {
    n: usize,
    packed: Vec<T>,
    /// `perm[i]` is the row of `A` that ended up in row `i`.
    perm: Vec<usize>,
    swaps: usize,
    singular_at: Option<usize>,
}

impl<T: Scalar> Lu<T> {
    pub fn factor(m: &Matrix<T>) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::shape(format!("LU needs a square matrix, got {}x{}", m.rows, m.cols)));
        }
        let n = m.rows;
        let mut a = m.data.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut swaps = 0;
        let mut singular_at = None;

        for k in 0..n {
            let (p, pmag) =
                (k..n)
                    .map(|r| (r, a[r * n + k].modulus()))
                    .fold((k, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
            if pmag < PIVOT_EPS {
                singular_at = Some(k);
                break;
            }
            if p != k {
                for c in 0..n {
                    a.swap(k * n + c, p * n + c);
                }
                perm.swap(k, p);
                swaps += 1;
            }
            let pivot = a[k * n + k];
            for r in k + 1..n {
                let f = a[r * n + k] / pivot;
                a[r * n + k] = f;
                if f == T::zero() {
                    continue;
                }
                for c in k + 1..n {
                    let u = a[k * n + c];
                    a[r * n + c] -= f * u;
                }
            }
        }
        Ok(Lu { n, packed: a, perm, swaps, singular_at })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn singular_pivot(&self) -> Option<usize> {
        self.singular_at
    }

    pub fn slogdet(&self) -> SlogDet {
        if self.singular_at.is_some() {
            return SlogDet { phase: Complex64::new(0.0, 0.0), log_abs: f64::NEG_INFINITY };
        }
        let mut phase = if self.swaps.is_multiple_of(2) { Complex64::new(1.0, 0.0) } else { Complex64::new(-1.0, 0.0) };
        let mut log_abs = 0.0;
        for i in 0..self.n {
            let d = self.packed[i * self.n + i];
            phase *= d.unit_phase();
            log_abs += d.modulus().ln();
        }
        SlogDet { phase, log_abs }
    }

    /// Overwrites `b` with the solution of `A x = b`.
    pub fn solve_in_place(&self, b: &mut [T]) -> Result<()> {
        if let Some(pivot) = self.singular_at {
            return Err(Error::Singular { pivot });
        }
        let n = self.n;
        if b.len() != n {
            return Err(Error::shape(format!("rhs length {} for {n}x{n} system", b.len())));
        }
        let permuted: Vec<T> = self.perm.iter().map(|&p| b[p]).collect();
        b.copy_from_slice(&permuted);
        for i in 0..n {
            let mut acc = b[i];
            for j in 0..i {
                acc -= self.packed[i * n + j] * b[j];
            }
            b[i] = acc;
        }
        for i in (0..n).rev() {
            let mut acc = b[i];
            for j in i + 1..n {
                acc -= self.packed[i * n + j] * b[j];
            }
            b[i] = acc / self.packed[i * n + i];
        }
        Ok(())
    }

    pub fn solve(&self, b: &[T]) -> Result<Vec<T>> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x)?;
        Ok(x)
    }

    pub fn inverse(&self) -> Result<Matrix<T>> {
        let n = self.n;
        let mut inv = Matrix::zeros(n, n);
        let mut col = vec![T::zero(); n];
        for j in 0..n {
            col.iter_mut().for_each(|x| *x = T::zero());
            col[j] = T::one();
            self.solve_in_place(&mut col)?;
            for i in 0..n {
                inv[(i, j)] = col[i];
            }
        }
        Ok(inv)
    }

    /// Explicit factors `(P, L, U)` with `A = P · L · U` and `L` unit lower-triangular.
    pub fn factors(&self) -> Result<(Matrix<T>, Matrix<T>, Matrix<T>)> {
        if let Some(pivot) = self.singular_at {
            return Err(Error::Singular { pivot });
        }
        let n = self.n;
        let mut p = Matrix::zeros(n, n);
        for (i, &src) in self.perm.iter().enumerate() {
            p[(src, i)] = T::one();
        }
        let l = Matrix::from_fn(n, n, |r, c| match r.cmp(&c) {
            std::cmp::Ordering::Greater => self.packed[r * n + c],
            std::cmp::Ordering::Equal => T::one(),
            std::cmp::Ordering::Less => T::zero(),
        });
        let u = Matrix::from_fn(n, n, |r, c| if r <= c { self.packed[r * n + c] } else { T::zero() });
        Ok((p, l, u))
    }
}

/// Sign/phase and log-magnitude of `det(m)`. Exactly singular inputs give `log_abs = -inf`.
pub fn lu_slogdet<T: Scalar>(m: &Matrix<T>) -> Result<SlogDet> {
    Ok(Lu::factor(m)?.slogdet())
}

/// Solves `m · x = b`.
pub fn solve<T: Scalar>(m: &Matrix<T>, b: &[T]) -> Result<Vec<T>> {
    Lu::factor(m)?.solve(b)
}

pub fn inverse<T: Scalar>(m: &Matrix<T>) -> Result<Matrix<T>> {
    Lu::factor(m)?.inverse()
}
