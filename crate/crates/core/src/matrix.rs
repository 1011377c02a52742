//! Dense complex matrices in row-major order.
//!
//! This is the substrate for every operator in the crate: measurement
//! operators, density operators, unitaries, and triangular factors. The
//! convention throughout the crate is row-major storage and signal-first
//! ordering for tensor products.

use std::fmt;
use std::ops::{Index, IndexMut};

use num_complex::Complex;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense rectangular matrix of complex numbers, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexMatrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<Complex<T>>,
}

impl<T: Scalar> ComplexMatrix<T> {
    /// Builds a matrix from row-major entries, validating shape and finiteness.
    pub fn new(rows: usize, cols: usize, data: Vec<Complex<T>>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::domain("matrix dimensions must be positive"));
        }
        if data.len() != rows * cols {
            return Err(Error::shape(format!(
                "entry count {} does not equal rows*cols = {}",
                data.len(),
                rows * cols
            )));
        }
        let m = Self { rows, cols, data };
        if !m.is_finite() {
            return Err(Error::domain("matrix contains a non-finite entry"));
        }
        Ok(m)
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![Complex::new(T::zero(), T::zero()); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = Complex::new(T::one(), T::zero());
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> Complex<T>) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    /// Square matrix with the given real diagonal.
    pub fn from_real_diag(diag: &[T]) -> Self {
        let n = diag.len();
        let mut m = Self::zeros(n, n);
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = Complex::new(d, T::zero());
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

    pub fn data(&self) -> &[Complex<T>] {
        &self.data
    }

    /// Contiguous view of row `r`.
    pub fn row(&self, r: usize) -> &[Complex<T>] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    /// Standard matrix product.
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
                let a = self.data[i * self.cols + k];
                if a.re.is_zero() && a.im.is_zero() {
                    continue;
                }
                let rhs_row = &rhs.data[k * rhs.cols..(k + 1) * rhs.cols];
                let out_row = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
                for (o, &b) in out_row.iter_mut().zip(rhs_row) {
                    *o = *o + a * b;
                }
            }
        }
        Ok(out)
    }

    /// Conjugate transpose.
    pub fn adjoint(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |r, c| self.data[c * self.cols + r].conj())
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |r, c| self.data[c * self.cols + r])
    }

    pub fn conj(&self) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|z| z.conj()).collect(),
        }
    }

    /// Kronecker product; `self` is the first (signal) factor.
    pub fn tensor(&self, rhs: &Self) -> Self {
        let rows = self.rows * rhs.rows;
        let cols = self.cols * rhs.cols;
        let mut out = Self::zeros(rows, cols);
        for ia in 0..self.rows {
            for ja in 0..self.cols {
                let a = self.data[ia * self.cols + ja];
                if a.re.is_zero() && a.im.is_zero() {
                    continue;
                }
                for ib in 0..rhs.rows {
                    for jb in 0..rhs.cols {
                        out[(ia * rhs.rows + ib, ja * rhs.cols + jb)] =
                            a * rhs.data[ib * rhs.cols + jb];
                    }
                }
            }
        }
        out
    }

    pub fn add(&self, rhs: &Self) -> Self {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols), "add: shape mismatch");
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a + b).collect(),
        }
    }

    pub fn sub(&self, rhs: &Self) -> Self {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols), "sub: shape mismatch");
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a - b).collect(),
        }
    }

    pub fn scale(&self, s: T) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|z| z * s).collect(),
        }
    }

    pub fn scale_complex(&self, s: Complex<T>) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|z| z * s).collect(),
        }
    }

    /// In-place `self += rhs * s`, used by hot accumulation loops.
    pub fn accumulate_scaled(&mut self, rhs: &Self, s: T) {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols), "accumulate: shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&rhs.data) {
            *a = *a + b * s;
        }
    }

    pub fn trace(&self) -> Complex<T> {
        assert!(self.is_square(), "trace of a non-square matrix");
        (0..self.rows).map(|i| self.data[i * self.cols + i]).fold(
            Complex::new(T::zero(), T::zero()),
            |acc, z| acc + z,
        )
    }

    /// `Re Tr(self * rhs)` without forming the product; both square, same dim.
    pub fn trace_product_re(&self, rhs: &Self) -> T {
        assert!(self.is_square() && rhs.is_square() && self.rows == rhs.rows);
        let n = self.rows;
        let mut acc = T::zero();
        for a in 0..n {
            let row = &self.data[a * n..(a + 1) * n];
            for (b, &x) in row.iter().enumerate() {
                let y = rhs.data[b * n + a];
                acc = acc + x.re * y.re - x.im * y.im;
            }
        }
        acc
    }

    pub fn frobenius_norm(&self) -> T {
        self.data
            .iter()
            .map(|z| z.norm_sqr())
            .fold(T::zero(), |a, b| a + b)
            .sqrt()
    }

    /// Largest elementwise modulus.
    pub fn max_abs(&self) -> T {
        self.data
            .iter()
            .map(|z| z.norm())
            .fold(T::zero(), |a, b| if b > a { b } else { a })
    }

    /// Largest elementwise modulus of the difference.
    pub fn max_abs_diff(&self, rhs: &Self) -> T {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols), "diff: shape mismatch");
        self.data
            .iter()
            .zip(&rhs.data)
            .map(|(a, b)| (a - b).norm())
            .fold(T::zero(), |a, b| if b > a { b } else { a })
    }

    /// Largest elementwise modulus of `self - self†`.
    pub fn hermiticity_error(&self) -> T {
        assert!(self.is_square());
        let mut err = T::zero();
        for r in 0..self.rows {
            for c in r..self.cols {
                let d = (self.data[r * self.cols + c] - self.data[c * self.cols + r].conj()).norm();
                if d > err {
                    err = d;
                }
            }
        }
        err
    }

    pub fn is_hermitian(&self, tol: T) -> bool {
        self.is_square() && self.hermiticity_error() <= tol
    }

    /// `(self + self†)/2`.
    pub fn hermitized(&self) -> Self {
        assert!(self.is_square());
        let half = T::from_f64(0.5).unwrap();
        let adj = self.adjoint();
        self.add(&adj).scale(half)
    }

    /// Rank-one operator `v† v` built from a row (bra) vector: out[a,b] = conj(v[a])·v[b].
    pub fn outer_of_row(bra: &[Complex<T>]) -> Self {
        let n = bra.len();
        Self::from_fn(n, n, |a, b| bra[a].conj() * bra[b])
    }

    /// Row-major nested arrays of the real and imaginary parts, as `f64`.
    pub fn to_re_im(&self) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let mut re = Vec::with_capacity(self.rows);
        let mut im = Vec::with_capacity(self.rows);
        for r in 0..self.rows {
            let row = self.row(r);
            re.push(row.iter().map(|z| z.re.to_f64().unwrap()).collect());
            im.push(row.iter().map(|z| z.im.to_f64().unwrap()).collect());
        }
        (re, im)
    }

    /// Rebuilds a matrix from nested real/imaginary arrays.
    pub fn from_re_im(re: &[Vec<f64>], im: &[Vec<f64>]) -> Result<Self> {
        if re.len() != im.len() || re.is_empty() {
            return Err(Error::shape("re/im row counts differ or are empty"));
        }
        let rows = re.len();
        let cols = re[0].len();
        let mut data = Vec::with_capacity(rows * cols);
        for (r, (rre, rim)) in re.iter().zip(im).enumerate() {
            if rre.len() != cols || rim.len() != cols {
                return Err(Error::shape(format!("ragged row {r} in re/im arrays")));
            }
            for (x, y) in rre.iter().zip(rim) {
                data.push(Complex::new(
                    T::from_f64(*x).ok_or_else(|| Error::domain("entry not representable"))?,
                    T::from_f64(*y).ok_or_else(|| Error::domain("entry not representable"))?,
                ));
            }
        }
        Self::new(rows, cols, data)
    }
}

impl<T: Scalar> Index<(usize, usize)> for ComplexMatrix<T> {
    type Output = Complex<T>;

    fn index(&self, (r, c): (usize, usize)) -> &Complex<T> {
        &self.data[r * self.cols + c]
    }
}

impl<T: Scalar> IndexMut<(usize, usize)> for ComplexMatrix<T> {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut Complex<T> {
        &mut self.data[r * self.cols + c]
    }
}

impl<T: Scalar> fmt::Display for ComplexMatrix<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for r in 0..self.rows {
            for c in 0..self.cols {
                let z = self[(r, c)];
                write!(f, "{}{:+}i", z.re, z.im)?;
                if c + 1 < self.cols {
                    write!(f, "  ")?;
                }
            }
            writeln!(f)?;
        }
        Ok(())
    }
}
