//! Generalized Gell-Mann operator basis and the linear tomography design matrix.
//!
//! The basis is the identity followed by the symmetric, antisymmetric, and
//! diagonal generator families (each in ascending pair/index order),
//! normalized so that `Tr(G_i G_j) = 2δ_ij` for `i, j >= 1` — the qubit Pauli
//! convention. State coordinates are `g_0 = 1/d` and `g_i = Tr(ρ G_i)/2`.

use num_complex::Complex;
use serde::Serialize;

use crate::density::DensityOperator;
use crate::error::{Error, Result};
use crate::linalg::RealSvd;
use crate::matrix::ComplexMatrix;
use crate::scalar::{lit, Scalar};

/// Singular values below this fraction of the largest count as zero when
/// ranking a design matrix.
pub const RANK_REL_TOL: f64 = 1e-9;

/// Hermitian operator basis of dimension d: `d²` matrices with the identity first.
#[derive(Debug, Clone)]
pub struct GellMannBasis<T> {
    dim: usize,
    matrices: Vec<ComplexMatrix<T>>,
}

impl<T: Scalar> GellMannBasis<T> {
    pub fn new(dim: usize) -> Result<Self> {
        if dim < 2 {
            return Err(Error::domain(format!("basis dimension must be >= 2, got {dim}")));
        }
        let zero = T::zero();
        let one = T::one();
        let mut matrices = Vec::with_capacity(dim * dim);
        matrices.push(ComplexMatrix::identity(dim));

        // Symmetric pairs |j><k| + |k><j|, j < k.
        for j in 0..dim {
            for k in (j + 1)..dim {
                let mut m = ComplexMatrix::zeros(dim, dim);
                m[(j, k)] = Complex::new(one, zero);
                m[(k, j)] = Complex::new(one, zero);
                matrices.push(m);
            }
        }
        // Antisymmetric pairs -i|j><k| + i|k><j|, j < k.
        for j in 0..dim {
            for k in (j + 1)..dim {
                let mut m = ComplexMatrix::zeros(dim, dim);
                m[(j, k)] = Complex::new(zero, -one);
                m[(k, j)] = Complex::new(zero, one);
                matrices.push(m);
            }
        }
        // Diagonal generators sqrt(2/(l(l+1)))·(Σ_{j<l}|j><j| - l|l><l|), l = 1..d-1.
        for l in 1..dim {
            let lw = T::from_usize(l).unwrap();
            let norm = (T::from_f64(2.0).unwrap() / (lw * (lw + one))).sqrt();
            let mut m = ComplexMatrix::zeros(dim, dim);
            for j in 0..l {
                m[(j, j)] = Complex::new(norm, zero);
            }
            m[(l, l)] = Complex::new(-norm * lw, zero);
            matrices.push(m);
        }
        debug_assert_eq!(matrices.len(), dim * dim);
        Ok(Self { dim, matrices })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.matrices.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn matrices(&self) -> &[ComplexMatrix<T>] {
        &self.matrices
    }

    pub fn get(&self, i: usize) -> &ComplexMatrix<T> {
        &self.matrices[i]
    }
}

/// Coordinates of a density operator in the basis: `g_0 = 1/d`, `g_i = Tr(ρ G_i)/2`.
pub fn decompose<T: Scalar>(rho: &DensityOperator<T>, basis: &GellMannBasis<T>) -> Result<Vec<T>> {
    if rho.dim() != basis.dim() {
        return Err(Error::shape(format!(
            "state dim {} does not match basis dim {}",
            rho.dim(),
            basis.dim()
        )));
    }
    Ok(decompose_matrix(rho.matrix(), basis))
}

pub(crate) fn decompose_matrix<T: Scalar>(m: &ComplexMatrix<T>, basis: &GellMannBasis<T>) -> Vec<T> {
    let half = lit::<T>(0.5);
    let mut g = Vec::with_capacity(basis.len());
    g.push(T::one() / T::from_usize(basis.dim()).unwrap());
    for gi in &basis.matrices()[1..] {
        g.push(m.trace_product_re(gi) * half);
    }
    g
}

/// `Σ g_i G_i`; Hermitian by construction with trace `d·g_0`.
pub fn compose<T: Scalar>(g: &[T], basis: &GellMannBasis<T>) -> Result<ComplexMatrix<T>> {
    if g.len() != basis.len() {
        return Err(Error::shape(format!(
            "coordinate vector length {} does not match basis size {}",
            g.len(),
            basis.len()
        )));
    }
    let mut out = ComplexMatrix::zeros(basis.dim(), basis.dim());
    for (&gi, mat) in g.iter().zip(basis.matrices()) {
        if gi.is_zero() {
            continue;
        }
        out.accumulate_scaled(mat, gi);
    }
    Ok(out)
}

/// The linear map from state coordinates to expected counts:
/// `A_ij = Tr(E_j G_i)` with rows indexed by the basis and columns by the
/// measurement operators. `rank` counts singular values above
/// [`RANK_REL_TOL`] times the largest.
#[derive(Debug, Clone, Serialize)]
pub struct DesignMatrix<T> {
    pub rows: usize,
    pub cols: usize,
    /// Row-major `rows x cols` real entries.
    pub entries: Vec<T>,
    pub rank: usize,
    /// Singular values in descending order.
    pub singular_values: Vec<T>,
}

impl<T: Scalar> DesignMatrix<T> {
    pub fn entry(&self, i: usize, j: usize) -> T {
        self.entries[i * self.cols + j]
    }

    /// Column-major copy of the transposed matrix (columns of length `cols`),
    /// i.e. the data layout the least-squares solver wants for `Aᵀ c = n`.
    pub(crate) fn transpose_columns(&self) -> Vec<Vec<T>> {
        (0..self.rows)
            .map(|i| (0..self.cols).map(|j| self.entry(i, j)).collect())
            .collect()
    }
}

/// Builds the design matrix of a set of (aggregated) measurement operators.
pub fn design_matrix<T: Scalar>(
    operators: &[ComplexMatrix<T>],
    basis: &GellMannBasis<T>,
) -> Result<DesignMatrix<T>> {
    let d = basis.dim();
    for (j, op) in operators.iter().enumerate() {
        if !op.is_square() || op.rows() != d {
            return Err(Error::shape(format!(
                "operator {j} is {}x{}, expected {d}x{d}",
                op.rows(),
                op.cols()
            )));
        }
    }
    let rows = basis.len();
    let cols = operators.len();
    let mut entries = vec![T::zero(); rows * cols];
    for (i, gi) in basis.matrices().iter().enumerate() {
        for (j, ej) in operators.iter().enumerate() {
            entries[i * cols + j] = ej.trace_product_re(gi);
        }
    }

    // Rank from the singular values of the rows-by-cols matrix; orthogonalize
    // over whichever side has fewer columns.
    let svd = if rows <= cols {
        let columns = (0..rows)
            .map(|i| entries[i * cols..(i + 1) * cols].to_vec())
            .collect();
        RealSvd::from_columns(cols, columns)
    } else {
        let columns = (0..cols)
            .map(|j| (0..rows).map(|i| entries[i * cols + j]).collect())
            .collect();
        RealSvd::from_columns(rows, columns)
    };
    let rank = svd.rank(lit::<T>(RANK_REL_TOL));
    Ok(DesignMatrix {
        rows,
        cols,
        entries,
        rank,
        singular_values: svd.singular_values(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measurement::PhaseSetting;
    use crate::mzi::{povm_elements, CascadeSpec, TransmittanceSet};

    #[test]
    fn d2_basis_is_pauli_set() {
        let basis = GellMannBasis::<f64>::new(2).unwrap();
        assert_eq!(basis.len(), 4);
        let x = basis.get(1);
        assert_eq!(x[(0, 1)], Complex::new(1.0, 0.0));
        assert_eq!(x[(1, 0)], Complex::new(1.0, 0.0));
        let y = basis.get(2);
        assert_eq!(y[(0, 1)], Complex::new(0.0, -1.0));
        assert_eq!(y[(1, 0)], Complex::new(0.0, 1.0));
        let z = basis.get(3);
        assert_eq!(z[(0, 0)], Complex::new(1.0, 0.0));
        assert_eq!(z[(1, 1)], Complex::new(-1.0, 0.0));
    }

    #[test]
    fn orthogonality_and_tracelessness() {
        for d in 2..=6usize {
            let basis = GellMannBasis::<f64>::new(d).unwrap();
            assert_eq!(basis.len(), d * d);
            for i in 1..basis.len() {
                let gi = basis.get(i);
                assert!(gi.trace().norm() < 1e-12, "G_{i} not traceless in d={d}");
                assert!(gi.hermiticity_error() < 1e-12);
                for j in 1..basis.len() {
                    let want = if i == j { 2.0 } else { 0.0 };
                    let got = gi.trace_product_re(basis.get(j));
                    assert!(
                        (got - want).abs() < 1e-12,
                        "Tr(G_{i} G_{j}) = {got} in d={d}"
                    );
                }
            }
        }
    }

    #[test]
    fn casimir_identity() {
        for d in 2..=5usize {
            let basis = GellMannBasis::<f64>::new(d).unwrap();
            let mut sum = ComplexMatrix::<f64>::zeros(d, d);
            for gi in &basis.matrices()[1..] {
                sum = sum.add(&gi.matmul(gi).unwrap());
            }
            let expect = ComplexMatrix::identity(d).scale(2.0 * (d * d - 1) as f64 / d as f64);
            assert!(sum.max_abs_diff(&expect) < 1e-12, "Casimir failed for d={d}");
        }
    }

    #[test]
    fn decompose_maximally_mixed_and_basis_state() {
        let basis = GellMannBasis::<f64>::new(4).unwrap();
        let mm = DensityOperator::maximally_mixed(4);
        let g = decompose(&mm, &basis).unwrap();
        assert!((g[0] - 0.25).abs() < 1e-15);
        for &gi in &g[1..] {
            assert!(gi.abs() < 1e-15);
        }

        let basis2 = GellMannBasis::<f64>::new(2).unwrap();
        let zero_state =
            DensityOperator::new(ComplexMatrix::from_real_diag(&[1.0, 0.0])).unwrap();
        let g = decompose(&zero_state, &basis2).unwrap();
        assert_eq!(g.len(), 4);
        assert!((g[0] - 0.5).abs() < 1e-15);
        assert!(g[1].abs() < 1e-15);
        assert!(g[2].abs() < 1e-15);
        assert!((g[3] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn compose_round_trip() {
        let basis = GellMannBasis::<f64>::new(3).unwrap();
        // A valid but non-trivial state.
        let mut m = ComplexMatrix::<f64>::zeros(3, 3);
        m[(0, 0)] = Complex::new(0.5, 0.0);
        m[(1, 1)] = Complex::new(0.3, 0.0);
        m[(2, 2)] = Complex::new(0.2, 0.0);
        m[(0, 1)] = Complex::new(0.1, 0.05);
        m[(1, 0)] = Complex::new(0.1, -0.05);
        m[(1, 2)] = Complex::new(0.0, -0.08);
        m[(2, 1)] = Complex::new(0.0, 0.08);
        let rho = DensityOperator::new(m.clone()).unwrap();
        let g = decompose(&rho, &basis).unwrap();
        let back = compose(&g, &basis).unwrap();
        assert!(back.max_abs_diff(&m) < 1e-10);

        // g with only the identity component is the maximally mixed state.
        let mut g0 = vec![0.0; 9];
        g0[0] = 1.0 / 3.0;
        let mm = compose(&g0, &basis).unwrap();
        assert!(mm.max_abs_diff(&ComplexMatrix::identity(3).scale(1.0 / 3.0)) < 1e-15);

        // Large g_1 keeps Hermiticity and unit trace but breaks positivity.
        let mut g1 = vec![0.0; 9];
        g1[0] = 1.0 / 3.0;
        g1[1] = 5.0;
        let bad = compose(&g1, &basis).unwrap();
        assert!(bad.hermiticity_error() < 1e-15);
        assert!((bad.trace().re - 1.0).abs() < 1e-12);
        assert!(crate::linalg::eig_hermitian(&bad).unwrap().values[0] < -1e-3);
    }

    #[test]
    fn exact_counts_solve_the_linear_system() {
        // n_j = N·Σ_i A_ij g_i must hold exactly for the true (N, g).
        let basis = GellMannBasis::<f64>::new(4).unwrap();
        let spec = CascadeSpec::new(4).unwrap();
        let eta = TransmittanceSet::ideal();
        let mut rho_m = ComplexMatrix::<f64>::zeros(4, 4);
        rho_m[(0, 0)] = Complex::new(0.4, 0.0);
        rho_m[(1, 1)] = Complex::new(0.3, 0.0);
        rho_m[(2, 2)] = Complex::new(0.2, 0.0);
        rho_m[(3, 3)] = Complex::new(0.1, 0.0);
        rho_m[(0, 3)] = Complex::new(0.1, 0.12);
        rho_m[(3, 0)] = Complex::new(0.1, -0.12);
        let rho = DensityOperator::new(rho_m).unwrap();
        let g = decompose(&rho, &basis).unwrap();
        let n = 7.5e5;

        let mut ops = Vec::new();
        let mut counts = Vec::new();
        for setting in PhaseSetting::canonical_set(2) {
            for e in povm_elements::<f64>(&spec, &setting, &eta) {
                counts.push(n * e.op.trace_product_re(rho.matrix()));
                ops.push(e.op);
            }
        }
        let a = design_matrix(&ops, &basis).unwrap();
        let mut residual = 0.0f64;
        for (j, &n_j) in counts.iter().enumerate() {
            let predicted: f64 = (0..a.rows).map(|i| a.entry(i, j) * g[i]).sum::<f64>() * n;
            residual = residual.max((predicted - n_j).abs() / n);
        }
        assert!(residual <= 1e-8, "relative residual {residual:e}");
    }

    #[test]
    fn design_matrix_ranks() {
        let basis = GellMannBasis::<f64>::new(4).unwrap();
        let spec = CascadeSpec::new(4).unwrap();
        let eta = TransmittanceSet::ideal();
        let mut ops = Vec::new();
        let mut ops_d1 = Vec::new();
        for setting in PhaseSetting::canonical_set(2) {
            for e in povm_elements::<f64>(&spec, &setting, &eta) {
                if e.detector == crate::measurement::Detector::D1 {
                    ops_d1.push(e.op.clone());
                }
                ops.push(e.op);
            }
        }
        assert_eq!(ops.len(), 52);
        let a = design_matrix(&ops, &basis).unwrap();
        assert_eq!((a.rows, a.cols), (16, 52));
        assert_eq!(a.rank, 16);

        let a1 = design_matrix(&ops_d1, &basis).unwrap();
        assert_eq!(a1.rank, 16, "D1 alone must already be tomographically complete");

        let id_only = design_matrix(&[ComplexMatrix::identity(4)], &basis).unwrap();
        assert_eq!(id_only.rank, 1);
    }
}
