//! Spectral and factorization routines for the small dense matrices used in
//! tomography (dimensions up to a few hundred).
//!
//! Eigendecomposition of Hermitian matrices uses the cyclic complex Jacobi
//! method; singular values of real matrices use the one-sided (Hestenes)
//! Jacobi method, which resolves small singular values to high relative
//! accuracy — we rely on that to separate true rank deficiency from float
//! noise when ranking design matrices.

use num_complex::Complex;

use crate::error::{Error, Result};
use crate::matrix::ComplexMatrix;
use crate::scalar::{lit, Scalar};

/// Eigendecomposition of a Hermitian matrix: `a == vectors · diag(values) · vectors†`.
#[derive(Debug, Clone)]
pub struct HermitianEig<T> {
    /// Real eigenvalues in ascending order.
    pub values: Vec<T>,
    /// Orthonormal eigenvectors as columns, ordered to match `values`.
    pub vectors: ComplexMatrix<T>,
}

fn hermitian_input_tol<T: Scalar>(a: &ComplexMatrix<T>) -> T {
    // 1e-10 absolute for well-scaled f64 data, widened for low-precision
    // scalars or large-magnitude inputs.
    let scaled = T::epsilon() * lit::<T>(32.0) * (T::one() + a.max_abs());
    let floor = lit::<T>(1e-10);
    if scaled > floor {
        scaled
    } else {
        floor
    }
}

/// Eigendecomposition of a Hermitian matrix by the cyclic complex Jacobi method.
///
/// The input must be Hermitian within tolerance; it is symmetrized before
/// iteration so the returned factors are exactly consistent.
pub fn eig_hermitian<T: Scalar>(a: &ComplexMatrix<T>) -> Result<HermitianEig<T>> {
    if !a.is_square() {
        return Err(Error::shape(format!(
            "eigendecomposition requires a square matrix, got {}x{}",
            a.rows(),
            a.cols()
        )));
    }
    let herm_err = a.hermiticity_error();
    if herm_err > hermitian_input_tol(a) {
        return Err(Error::Contract(format!(
            "matrix is not Hermitian: max |a - a†| = {:e}",
            herm_err.to_f64().unwrap_or(f64::NAN)
        )));
    }

    let n = a.rows();
    let mut m = a.hermitized();
    let mut v = ComplexMatrix::<T>::identity(n);

    let off_norm = |m: &ComplexMatrix<T>| -> T {
        let mut s = T::zero();
        for p in 0..n {
            for q in (p + 1)..n {
                s = s + m[(p, q)].norm_sqr();
            }
        }
        s.sqrt()
    };

    let scale = m.frobenius_norm() + T::one();
    let target = T::epsilon() * scale * lit::<T>(0.5);
    let max_sweeps = 64;

    for _ in 0..max_sweeps {
        if off_norm(&m) <= target {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let gamma = m[(p, q)];
                let gnorm = gamma.norm();
                if gnorm <= T::epsilon() * scale * lit::<T>(1e-3) {
                    continue;
                }
                // Unitary 2x2 block [[c, -s·u], [s·conj(u), c]] with u = gamma/|gamma|
                // annihilates the (p,q) entry.
                let u = gamma / gnorm;
                let alpha = m[(p, p)].re;
                let beta = m[(q, q)].re;
                let tau = (beta - alpha) / (gnorm + gnorm);
                // Smaller-magnitude root of t² - 2τt - 1 = 0 for this block
                // convention: t = -sign(τ)/(|τ| + sqrt(1+τ²)).
                let t = if tau >= T::zero() {
                    -T::one() / (tau + (T::one() + tau * tau).sqrt())
                } else {
                    T::one() / (-tau + (T::one() + tau * tau).sqrt())
                };
                let c = T::one() / (T::one() + t * t).sqrt();
                let s = t * c;
                let su = Complex::new(s, T::zero()) * u;
                let su_conj = su.conj();

                // Column update: M <- M·J, V <- V·J.
                for r in 0..n {
                    let mp = m[(r, p)];
                    let mq = m[(r, q)];
                    m[(r, p)] = mp * c + mq * su_conj;
                    m[(r, q)] = mq * c - mp * su;

                    let vp = v[(r, p)];
                    let vq = v[(r, q)];
                    v[(r, p)] = vp * c + vq * su_conj;
                    v[(r, q)] = vq * c - vp * su;
                }
                // Row update: M <- J†·M.
                for r in 0..n {
                    let mp = m[(p, r)];
                    let mq = m[(q, r)];
                    m[(p, r)] = mp * c + mq * su;
                    m[(q, r)] = mq * c - mp * su_conj;
                }
                let zero = Complex::new(T::zero(), T::zero());
                m[(p, q)] = zero;
                m[(q, p)] = zero;
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    let diag: Vec<T> = (0..n).map(|i| m[(i, i)].re).collect();
    order.sort_by(|&i, &j| diag[i].partial_cmp(&diag[j]).unwrap());

    let values: Vec<T> = order.iter().map(|&i| diag[i]).collect();
    let vectors = ComplexMatrix::from_fn(n, n, |r, c| v[(r, order[c])]);
    Ok(HermitianEig { values, vectors })
}

impl<T: Scalar> HermitianEig<T> {
    /// `vectors · diag(f(values)) · vectors†`.
    pub fn apply_to_spectrum(&self, f: impl Fn(T) -> T) -> ComplexMatrix<T> {
        let n = self.values.len();
        let mut out = ComplexMatrix::zeros(n, n);
        for (k, &lambda) in self.values.iter().enumerate() {
            let w = f(lambda);
            if w.is_zero() {
                continue;
            }
            for r in 0..n {
                let vr = self.vectors[(r, k)];
                if vr.re.is_zero() && vr.im.is_zero() {
                    continue;
                }
                for c in 0..n {
                    out[(r, c)] = out[(r, c)] + vr * self.vectors[(c, k)].conj() * w;
                }
            }
        }
        out
    }
}

/// Hermitian PSD square root, with eigenvalues in `[-1e-8, 0)` clamped to zero.
pub fn matrix_sqrt_psd<T: Scalar>(a: &ComplexMatrix<T>) -> Result<ComplexMatrix<T>> {
    let eig = eig_hermitian(a)?;
    let neg_tol = lit::<T>(-1e-8);
    if let Some(&min) = eig.values.first() {
        if min < neg_tol {
            return Err(Error::NotPsd {
                min_eig: min.to_f64().unwrap_or(f64::NAN),
            });
        }
    }
    // Eigenvalues at the solver's noise floor are exact zeros whose error the
    // square root would amplify to sqrt(eps); snap them first.
    let scale = eig.values.iter().fold(T::zero(), |m, &l| m.max(l.abs()));
    let floor = T::epsilon() * scale * T::from_usize(a.rows()).unwrap();
    Ok(eig.apply_to_spectrum(|l| if l > floor { l.sqrt() } else { T::zero() }))
}

/// Cholesky factorization `a == l·l†` with `l` lower triangular, real positive diagonal.
pub fn cholesky_lower<T: Scalar>(a: &ComplexMatrix<T>) -> Result<ComplexMatrix<T>> {
    if !a.is_square() {
        return Err(Error::shape("Cholesky requires a square matrix"));
    }
    let n = a.rows();
    let mut l = ComplexMatrix::<T>::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)].re;
        for k in 0..j {
            d = d - l[(j, k)].norm_sqr();
        }
        if d <= T::zero() {
            return Err(Error::NotPsd {
                min_eig: d.to_f64().unwrap_or(f64::NAN),
            });
        }
        let djj = d.sqrt();
        l[(j, j)] = Complex::new(djj, T::zero());
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s = s - l[(i, k)] * l[(j, k)].conj();
            }
            l[(i, j)] = s / djj;
        }
    }
    Ok(l)
}

/// Factors a positive-definite Hermitian `a` as `r†·r` with `r` lower
/// triangular and real positive diagonal (the parametrization used by the
/// maximum-likelihood search).
///
/// Computed by Cholesky on the index-reversed matrix.
pub fn factor_rtr<T: Scalar>(a: &ComplexMatrix<T>) -> Result<ComplexMatrix<T>> {
    let n = a.rows();
    let flipped = ComplexMatrix::from_fn(n, n, |r, c| a[(n - 1 - r, n - 1 - c)]);
    let l = cholesky_lower(&flipped)?;
    // r = (P·l·P)† is lower triangular with real positive diagonal.
    Ok(ComplexMatrix::from_fn(n, n, |r, c| {
        l[(n - 1 - c, n - 1 - r)].conj()
    }))
}

/// Singular values and right singular vectors of a real matrix, by one-sided
/// (Hestenes) Jacobi orthogonalization.
#[derive(Debug, Clone)]
pub struct RealSvd<T> {
    m: usize,
    n: usize,
    /// Columns of `A·V` (orthogonal, with norms equal to the singular values).
    av: Vec<Vec<T>>,
    /// Columns of `V`.
    v: Vec<Vec<T>>,
    /// Singular values, one per column of `av`, unsorted.
    sigma: Vec<T>,
}

impl<T: Scalar> RealSvd<T> {
    /// Decomposes the `m x n` real matrix given by `column(j)`.
    pub fn from_columns(m: usize, columns: Vec<Vec<T>>) -> Self {
        let n = columns.len();
        assert!(columns.iter().all(|c| c.len() == m), "ragged column data");
        let mut av = columns;
        let mut v: Vec<Vec<T>> = (0..n)
            .map(|j| {
                let mut e = vec![T::zero(); n];
                e[j] = T::one();
                e
            })
            .collect();

        let eps = T::epsilon();
        let tol = eps * lit::<T>(8.0);
        let max_sweeps = 64;
        for _ in 0..max_sweeps {
            let mut rotated = false;
            for i in 0..n {
                for j in (i + 1)..n {
                    let (mut aii, mut ajj, mut aij) = (T::zero(), T::zero(), T::zero());
                    for r in 0..m {
                        let x = av[i][r];
                        let y = av[j][r];
                        aii = aii + x * x;
                        ajj = ajj + y * y;
                        aij = aij + x * y;
                    }
                    if aij.abs() <= tol * (aii * ajj).sqrt() {
                        continue;
                    }
                    rotated = true;
                    let zeta = (ajj - aii) / (aij + aij);
                    let t = if zeta >= T::zero() {
                        T::one() / (zeta + (T::one() + zeta * zeta).sqrt())
                    } else {
                        -T::one() / (-zeta + (T::one() + zeta * zeta).sqrt())
                    };
                    let c = T::one() / (T::one() + t * t).sqrt();
                    let s = c * t;
                    for r in 0..m {
                        let x = av[i][r];
                        let y = av[j][r];
                        av[i][r] = c * x - s * y;
                        av[j][r] = s * x + c * y;
                    }
                    for r in 0..n {
                        let x = v[i][r];
                        let y = v[j][r];
                        v[i][r] = c * x - s * y;
                        v[j][r] = s * x + c * y;
                    }
                }
            }
            if !rotated {
                break;
            }
        }

        let sigma: Vec<T> = av
            .iter()
            .map(|col| col.iter().map(|&x| x * x).fold(T::zero(), |a, b| a + b).sqrt())
            .collect();
        Self { m, n, av, v, sigma }
    }

    pub fn max_singular_value(&self) -> T {
        self.sigma
            .iter()
            .fold(T::zero(), |a, &b| if b > a { b } else { a })
    }

    /// Singular values in descending order.
    pub fn singular_values(&self) -> Vec<T> {
        let mut s = self.sigma.clone();
        s.sort_by(|a, b| b.partial_cmp(a).unwrap());
        s
    }

    /// Number of singular values above `rel_tol` times the largest.
    pub fn rank(&self, rel_tol: T) -> usize {
        let thr = self.max_singular_value() * rel_tol;
        self.sigma.iter().filter(|&&s| s > thr).count()
    }

    /// Minimum-norm least-squares solution of `A x ≈ rhs`, truncating singular
    /// values at `rel_tol` times the largest.
    pub fn solve_least_squares(&self, rhs: &[T], rel_tol: T) -> Vec<T> {
        assert_eq!(rhs.len(), self.m, "rhs length mismatch");
        let thr = self.max_singular_value() * rel_tol;
        let mut x = vec![T::zero(); self.n];
        for k in 0..self.n {
            let s = self.sigma[k];
            if s <= thr {
                continue;
            }
            // coefficient = (u_k · rhs)/sigma = (av_k · rhs)/sigma².
            let mut dot = T::zero();
            for r in 0..self.m {
                dot = dot + self.av[k][r] * rhs[r];
            }
            let coeff = dot / (s * s);
            for r in 0..self.n {
                x[r] = x[r] + self.v[k][r] * coeff;
            }
        }
        x
    }
}
