//! Density operators and their JSON wire format.

use num_complex::Complex;
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::linalg::eig_hermitian;
use crate::matrix::ComplexMatrix;
use crate::scalar::{lit, Scalar};

/// Tolerance for the Hermiticity and unit-trace checks.
pub const DENSITY_TOL: f64 = 1e-10;

/// A d-dimensional density operator: Hermitian, unit trace, positive
/// semidefinite (eigenvalues at or above `-1e-10`).
#[derive(Debug, Clone, PartialEq)]
pub struct DensityOperator<T> {
    dim: usize,
    matrix: ComplexMatrix<T>,
}

impl<T: Scalar> DensityOperator<T> {
    /// Validates all invariants before wrapping the matrix.
    pub fn new(matrix: ComplexMatrix<T>) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::shape(format!(
                "density operator must be square, got {}x{}",
                matrix.rows(),
                matrix.cols()
            )));
        }
        if !matrix.is_finite() {
            return Err(Error::domain("density operator contains non-finite entries"));
        }
        let tol = lit::<T>(DENSITY_TOL);
        let herm = matrix.hermiticity_error();
        if herm > tol {
            return Err(Error::Contract(format!(
                "density operator not Hermitian: max |rho - rho†| = {:e}",
                herm.to_f64().unwrap_or(f64::NAN)
            )));
        }
        let tr = matrix.trace();
        let tr_err = (tr - Complex::new(T::one(), T::zero())).norm();
        if tr_err > tol {
            return Err(Error::Contract(format!(
                "density operator trace differs from 1 by {:e}",
                tr_err.to_f64().unwrap_or(f64::NAN)
            )));
        }
        let eig = eig_hermitian(&matrix)?;
        let min = eig.values[0];
        if min < -tol {
            return Err(Error::NotPsd {
                min_eig: min.to_f64().unwrap_or(f64::NAN),
            });
        }
        Ok(Self {
            dim: matrix.rows(),
            matrix,
        })
    }

    /// Wraps a matrix that is physical by construction (e.g. `R†R/Tr(R†R)`),
    /// skipping the spectral check. Hermiticity and trace are still asserted
    /// in debug builds.
    pub fn new_unchecked(matrix: ComplexMatrix<T>) -> Self {
        debug_assert!(matrix.is_square());
        debug_assert!(matrix.hermiticity_error() <= lit::<T>(1e-8));
        Self {
            dim: matrix.rows(),
            matrix,
        }
    }

    pub fn maximally_mixed(dim: usize) -> Self {
        let w = T::one() / T::from_usize(dim).unwrap();
        Self {
            dim,
            matrix: ComplexMatrix::identity(dim).scale(w),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn matrix(&self) -> &ComplexMatrix<T> {
        &self.matrix
    }

    pub fn into_matrix(self) -> ComplexMatrix<T> {
        self.matrix
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> Result<Vec<T>> {
        Ok(eig_hermitian(&self.matrix)?.values)
    }

    /// `Tr(rho²)`, a cheap purity measure.
    pub fn purity(&self) -> T {
        self.matrix
            .data()
            .iter()
            .map(|z| z.norm_sqr())
            .fold(T::zero(), |a, b| a + b)
    }
}

/// JSON form shared by density operators and other complex matrices:
/// `{"dim": d, "re": [[...]], "im": [[...]]}` with row-major nested arrays.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MatrixJson {
    pub dim: usize,
    pub re: Vec<Vec<f64>>,
    pub im: Vec<Vec<f64>>,
}

impl MatrixJson {
    pub fn from_matrix<T: Scalar>(m: &ComplexMatrix<T>) -> Self {
        let (re, im) = m.to_re_im();
        Self {
            dim: m.rows(),
            re,
            im,
        }
    }

    pub fn to_matrix<T: Scalar>(&self) -> Result<ComplexMatrix<T>> {
        let m = ComplexMatrix::from_re_im(&self.re, &self.im)?;
        if m.rows() != self.dim || m.cols() != self.dim {
            return Err(Error::shape(format!(
                "declared dim {} does not match {}x{} entry arrays",
                self.dim,
                m.rows(),
                m.cols()
            )));
        }
        Ok(m)
    }
}

impl<T: Scalar> Serialize for DensityOperator<T> {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        MatrixJson::from_matrix(&self.matrix).serialize(serializer)
    }
}

impl<'de, T: Scalar> Deserialize<'de> for DensityOperator<T> {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let json = MatrixJson::deserialize(deserializer)?;
        let matrix = json.to_matrix().map_err(D::Error::custom)?;
        DensityOperator::new(matrix).map_err(D::Error::custom)
    }
}
