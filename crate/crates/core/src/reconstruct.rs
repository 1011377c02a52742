//! Recovering `(ρ, N)` from classwise counts: linear inversion of the design
//! matrix, and maximum-likelihood estimation over a triangular-factor
//! parametrization that keeps the estimate physical by construction.
//!
//! The factor `R` is lower triangular; `ρ = R†R/Tr(R†R)` and `N = Tr(R†R)`,
//! so the expected count of class `j` is simply `Tr(E_j R†R)`. The likelihood
//! is `L(R) = Σ_j [(n_j^M - n_j^E)²/n_j^E + ln n_j^E]`, with `n_j^E` floored
//! at a tiny constant inside the denominator and the logarithm so the value
//! stays finite when a class expectation vanishes.

use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::dedup::MeasurementClass;
use crate::density::{DensityOperator, MatrixJson};
use crate::error::{Error, Result};
use crate::gellmann::{compose, design_matrix, GellMannBasis, RANK_REL_TOL};
use crate::linalg::{eig_hermitian, factor_rtr, RealSvd};
use crate::matrix::ComplexMatrix;
use crate::optim::{lbfgs, nelder_mead, OptimConfig, OptimOutcome, SimplexConfig};
use crate::scalar::{lit, Scalar};

/// Floor applied to expected class counts inside the likelihood.
pub const COUNT_FLOOR: f64 = 1e-9;

/// Eigenvalue clamp used when seeding the factor from a linear-inversion estimate.
pub const INIT_EIGENVALUE_CLAMP: f64 = 1e-6;

/// Real parametrization of a lower-triangular factor: the `dim` diagonal
/// entries (real), then row-major re/im pairs for the strict lower triangle —
/// `dim²` parameters in total.
#[derive(Debug, Clone, PartialEq)]
pub struct TriangularFactor<T> {
    dim: usize,
    params: Vec<T>,
}

impl<T: Scalar> TriangularFactor<T> {
    pub fn from_params(dim: usize, params: Vec<T>) -> Result<Self> {
        if params.len() != dim * dim {
            return Err(Error::shape(format!(
                "triangular factor of dim {dim} needs {} parameters, got {}",
                dim * dim,
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::domain("triangular factor parameters must be finite"));
        }
        Ok(Self { dim, params })
    }

    /// `R = sqrt(n_total/dim)·I`, the factor of the maximally mixed state at
    /// photon scale `n_total`.
    pub fn scaled_identity(dim: usize, n_total: T) -> Self {
        let mut params = vec![T::zero(); dim * dim];
        let diag = (n_total / T::from_usize(dim).unwrap()).max(T::zero()).sqrt();
        for p in params.iter_mut().take(dim) {
            *p = diag;
        }
        Self { dim, params }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    fn offdiag_pos(dim: usize, row: usize, col: usize) -> usize {
        debug_assert!(col < row && row < dim);
        dim + 2 * (row * (row - 1) / 2 + col)
    }

    /// The lower-triangular matrix this parameter vector encodes.
    pub fn to_matrix(&self) -> ComplexMatrix<T> {
        let d = self.dim;
        let mut m = ComplexMatrix::zeros(d, d);
        for k in 0..d {
            m[(k, k)] = Complex::new(self.params[k], T::zero());
            for l in 0..k {
                let p = Self::offdiag_pos(d, k, l);
                m[(k, l)] = Complex::new(self.params[p], self.params[p + 1]);
            }
        }
        m
    }

    /// Packs a lower-triangular matrix with (numerically) real diagonal.
    pub fn from_matrix(r: &ComplexMatrix<T>) -> Result<Self> {
        if !r.is_square() {
            return Err(Error::shape("triangular factor must be square"));
        }
        let d = r.rows();
        let tol = lit::<T>(1e-9) + T::epsilon() * lit::<T>(64.0) * r.max_abs();
        let mut params = vec![T::zero(); d * d];
        for k in 0..d {
            if r[(k, k)].im.abs() > tol {
                return Err(Error::Contract(format!(
                    "diagonal entry ({k},{k}) of a triangular factor must be real"
                )));
            }
            params[k] = r[(k, k)].re;
            for l in (k + 1)..d {
                if r[(k, l)].norm() > tol {
                    return Err(Error::Contract(format!(
                        "entry ({k},{l}) above the diagonal must vanish"
                    )));
                }
            }
            for l in 0..k {
                let p = Self::offdiag_pos(d, k, l);
                params[p] = r[(k, l)].re;
                params[p + 1] = r[(k, l)].im;
            }
        }
        Ok(Self { dim: d, params })
    }

    /// `ρ = R†R/Tr(R†R)` and `N = Tr(R†R)`.
    pub fn state_and_scale(&self) -> (ComplexMatrix<T>, T) {
        let r = self.to_matrix();
        let s = r.adjoint().matmul(&r).expect("square");
        let n = s.trace().re;
        (s.scale(T::one() / n), n)
    }
}

/// Precomputed likelihood data for one set of measurement classes.
pub(crate) struct LikelihoodModel<T> {
    dim: usize,
    ops: Vec<ComplexMatrix<T>>,
    counts: Vec<T>,
    floor: T,
}

impl<T: Scalar> LikelihoodModel<T> {
    pub(crate) fn new(n_m: &[f64], classes: &[MeasurementClass<T>], floor: T) -> Result<Self> {
        if n_m.len() != classes.len() {
            return Err(Error::shape(format!(
                "{} counts for {} classes",
                n_m.len(),
                classes.len()
            )));
        }
        if classes.is_empty() {
            return Err(Error::domain("cannot build a likelihood over zero classes"));
        }
        let dim = classes[0].aggregated_op.rows();
        let counts = n_m
            .iter()
            .map(|&c| T::from_f64(c).ok_or_else(|| Error::domain("count not representable")))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            dim,
            ops: classes.iter().map(|c| c.aggregated_op.clone()).collect(),
            counts,
            floor,
        })
    }

    pub(crate) fn dim(&self) -> usize {
        self.dim
    }

    /// Expected class counts `Tr(E_j R†R)` for an arbitrary (not necessarily
    /// triangular) factor matrix.
    pub(crate) fn expected(&self, r: &ComplexMatrix<T>) -> Vec<T> {
        let s = r.adjoint().matmul(r).expect("square");
        self.ops.iter().map(|e| e.trace_product_re(&s)).collect()
    }

    pub(crate) fn value_of_matrix(&self, r: &ComplexMatrix<T>) -> T {
        let mut l = T::zero();
        for (n_e_raw, &n_m) in self.expected(r).into_iter().zip(&self.counts) {
            let denom = if n_e_raw > self.floor { n_e_raw } else { self.floor };
            let resid = n_m - n_e_raw;
            l = l + resid * resid / denom + denom.ln();
        }
        l
    }

    /// Likelihood and gradient with respect to the packed real parameters.
    pub(crate) fn value_grad(&self, params: &[T], grad: &mut [T]) -> T {
        let d = self.dim;
        let factor = TriangularFactor {
            dim: d,
            params: params.to_vec(),
        };
        let r = factor.to_matrix();
        let s = r.adjoint().matmul(&r).expect("square");

        let mut l = T::zero();
        let mut weight_mat = ComplexMatrix::<T>::zeros(d, d);
        let two = lit::<T>(2.0);
        for (e, &n_m) in self.ops.iter().zip(&self.counts) {
            let n_e = e.trace_product_re(&s);
            let (contrib, w) = if n_e > self.floor {
                let resid = n_m - n_e;
                let ratio = resid / n_e;
                (
                    resid * ratio + n_e.ln(),
                    -two * ratio - ratio * ratio + T::one() / n_e,
                )
            } else {
                let resid = n_m - n_e;
                (
                    resid * resid / self.floor + self.floor.ln(),
                    -two * resid / self.floor,
                )
            };
            l = l + contrib;
            weight_mat.accumulate_scaled(e, w);
        }

        // dL/dR via d(Tr(E R†R)) = 2 Re Tr(E R† dR): one product with the
        // weighted operator sum covers every parameter.
        let d_mat = weight_mat.matmul(&r.adjoint()).expect("square");
        for k in 0..d {
            grad[k] = two * d_mat[(k, k)].re;
            for lcol in 0..k {
                let p = TriangularFactor::<T>::offdiag_pos(d, k, lcol);
                let z = d_mat[(lcol, k)];
                grad[p] = two * z.re;
                grad[p + 1] = -two * z.im;
            }
        }
        l
    }
}

/// The likelihood `L(R)` of a packed triangular factor against classwise counts.
pub fn likelihood<T: Scalar>(
    r: &TriangularFactor<T>,
    n_m: &[f64],
    classes: &[MeasurementClass<T>],
) -> Result<T> {
    let model = LikelihoodModel::new(n_m, classes, lit(COUNT_FLOOR))?;
    if r.dim() != model.dim() {
        return Err(Error::shape(format!(
            "factor dim {} does not match class dim {}",
            r.dim(),
            model.dim()
        )));
    }
    Ok(model.value_of_matrix(&r.to_matrix()))
}

/// The likelihood of an arbitrary factor matrix; `L` depends on it only
/// through `(ρ, N)`, so any unit-modulus global phase leaves it unchanged.
pub fn likelihood_of_matrix<T: Scalar>(
    r: &ComplexMatrix<T>,
    n_m: &[f64],
    classes: &[MeasurementClass<T>],
) -> Result<T> {
    let model = LikelihoodModel::new(n_m, classes, lit(COUNT_FLOOR))?;
    if r.rows() != model.dim() || r.cols() != model.dim() {
        return Err(Error::shape("factor matrix dim does not match class dim"));
    }
    Ok(model.value_of_matrix(r))
}

/// Likelihood value and its analytic gradient with respect to the packed
/// parameter vector.
pub fn likelihood_gradient<T: Scalar>(
    r: &TriangularFactor<T>,
    n_m: &[f64],
    classes: &[MeasurementClass<T>],
) -> Result<(T, Vec<T>)> {
    let model = LikelihoodModel::new(n_m, classes, lit(COUNT_FLOOR))?;
    if r.dim() != model.dim() {
        return Err(Error::shape("factor dim does not match class dim"));
    }
    let mut grad = vec![T::zero(); r.params().len()];
    let value = model.value_grad(r.params(), &mut grad);
    Ok((value, grad))
}

/// How the reconstruction was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Linear,
    Mle,
}

/// A reconstructed state with its photon-scale estimate and fit diagnostics.
///
/// `rho` is always Hermitian with unit trace; only when `psd` is set does it
/// satisfy the full density-operator contract (linear inversion can and does
/// produce indefinite estimates on noisy data).
#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructionResult<T> {
    pub rho: ComplexMatrix<T>,
    pub n_hat: T,
    pub likelihood: T,
    pub iterations: usize,
    pub converged: bool,
    pub method: Method,
    pub psd: bool,
    pub min_eigenvalue: T,
}

impl<T: Scalar> ReconstructionResult<T> {
    /// The estimate as a validated density operator; fails when `psd` is false.
    pub fn density(&self) -> Result<DensityOperator<T>> {
        DensityOperator::new(self.rho.clone())
    }
}

#[derive(Serialize, Deserialize)]
struct ResultJson {
    rho: MatrixJson,
    #[serde(rename = "N_hat")]
    n_hat: f64,
    likelihood: f64,
    iterations: usize,
    converged: bool,
    method: Method,
    psd: bool,
    min_eigenvalue: f64,
}

impl<T: Scalar> Serialize for ReconstructionResult<T> {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        ResultJson {
            rho: MatrixJson::from_matrix(&self.rho),
            n_hat: self.n_hat.to_f64().unwrap(),
            likelihood: self.likelihood.to_f64().unwrap(),
            iterations: self.iterations,
            converged: self.converged,
            method: self.method,
            psd: self.psd,
            min_eigenvalue: self.min_eigenvalue.to_f64().unwrap(),
        }
        .serialize(serializer)
    }
}

impl<'de, T: Scalar> Deserialize<'de> for ReconstructionResult<T> {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let json = ResultJson::deserialize(deserializer)?;
        Ok(Self {
            rho: json.rho.to_matrix().map_err(D::Error::custom)?,
            n_hat: T::from_f64(json.n_hat).ok_or_else(|| D::Error::custom("N_hat"))?,
            likelihood: T::from_f64(json.likelihood).ok_or_else(|| D::Error::custom("likelihood"))?,
            iterations: json.iterations,
            converged: json.converged,
            method: json.method,
            psd: json.psd,
            min_eigenvalue: T::from_f64(json.min_eigenvalue)
                .ok_or_else(|| D::Error::custom("min_eigenvalue"))?,
        })
    }
}

fn spectral_summary<T: Scalar>(rho: &ComplexMatrix<T>) -> Result<(T, bool)> {
    let eig = eig_hermitian(rho)?;
    let min = eig.values[0];
    Ok((min, min >= lit::<T>(-1e-10)))
}

/// Least-squares inversion of the classwise design system `n_j = Σ_i A_ij (N g_i)`.
///
/// Solves jointly for `N·g` through the pseudo-inverse of the design matrix,
/// reads `N` off the identity coordinate, and renormalizes so the estimate
/// has exactly unit trace. The estimate need not be positive; `psd` reports
/// whether it is.
pub fn linear_inversion<T: Scalar>(
    n_m: &[f64],
    classes: &[MeasurementClass<T>],
    basis: &GellMannBasis<T>,
) -> Result<ReconstructionResult<T>> {
    let coords = linear_coordinates(n_m, classes, basis, None)?;
    finish_linear(coords, n_m, classes, basis)
}

/// Linear inversion with the photon scale fixed externally (e.g. from total
/// counts) instead of estimated jointly.
pub fn linear_inversion_fixed_total<T: Scalar>(
    n_m: &[f64],
    classes: &[MeasurementClass<T>],
    basis: &GellMannBasis<T>,
    n_total: f64,
) -> Result<ReconstructionResult<T>> {
    if !(n_total > 0.0) {
        return Err(Error::domain("fixed photon total must be positive"));
    }
    let coords = linear_coordinates(n_m, classes, basis, Some(n_total))?;
    finish_linear(coords, n_m, classes, basis)
}

struct LinearCoords<T> {
    g: Vec<T>,
    n_hat: T,
}

fn linear_coordinates<T: Scalar>(
    n_m: &[f64],
    classes: &[MeasurementClass<T>],
    basis: &GellMannBasis<T>,
    fixed_total: Option<f64>,
) -> Result<LinearCoords<T>> {
    if n_m.len() != classes.len() {
        return Err(Error::shape(format!(
            "{} counts for {} classes",
            n_m.len(),
            classes.len()
        )));
    }
    let d = basis.dim();
    let ops: Vec<ComplexMatrix<T>> = classes.iter().map(|c| c.aggregated_op.clone()).collect();
    let a = design_matrix(&ops, basis)?;
    if a.rank < d * d {
        return Err(Error::Underdetermined {
            rank: a.rank,
            needed: d * d,
        });
    }

    let rhs_f: Vec<T> = n_m
        .iter()
        .map(|&c| T::from_f64(c).ok_or_else(|| Error::domain("count not representable")))
        .collect::<Result<Vec<_>>>()?;

    match fixed_total {
        None => {
            // Columns of Aᵀ are the rows of A; solve Aᵀ·c ≈ n for c = N·g.
            let svd = RealSvd::from_columns(a.cols, a.transpose_columns());
            let c = svd.solve_least_squares(&rhs_f, lit(RANK_REL_TOL));
            let n_hat = c[0] * T::from_usize(d).unwrap();
            if !(n_hat > T::zero()) {
                return Err(Error::domain(format!(
                    "linear inversion produced a nonpositive photon estimate {n_hat}"
                )));
            }
            let mut g: Vec<T> = c.iter().map(|&ci| ci / n_hat).collect();
            g[0] = T::one() / T::from_usize(d).unwrap();
            Ok(LinearCoords { g, n_hat })
        }
        Some(n_total) => {
            let n_hat = T::from_f64(n_total).unwrap();
            // Move the fixed identity term to the right-hand side and solve
            // for the traceless coordinates only.
            let g0 = T::one() / T::from_usize(d).unwrap();
            let rhs: Vec<T> = rhs_f
                .iter()
                .enumerate()
                .map(|(j, &nj)| nj - n_hat * g0 * a.entry(0, j))
                .collect();
            let columns: Vec<Vec<T>> = (1..a.rows)
                .map(|i| (0..a.cols).map(|j| a.entry(i, j)).collect())
                .collect();
            let svd = RealSvd::from_columns(a.cols, columns);
            let c = svd.solve_least_squares(&rhs, lit(RANK_REL_TOL));
            let mut g = Vec::with_capacity(d * d);
            g.push(g0);
            g.extend(c.iter().map(|&ci| ci / n_hat));
            Ok(LinearCoords { g, n_hat })
        }
    }
}

fn finish_linear<T: Scalar>(
    coords: LinearCoords<T>,
    n_m: &[f64],
    classes: &[MeasurementClass<T>],
    basis: &GellMannBasis<T>,
) -> Result<ReconstructionResult<T>> {
    let rho = compose(&coords.g, basis)?;
    let (min_eigenvalue, psd) = spectral_summary(&rho)?;
    let model = LikelihoodModel::new(n_m, classes, lit(COUNT_FLOOR))?;
    // Report Eq-style likelihood of the linear estimate: expected counts are
    // N·Tr(E_j ρ̂), possibly negative for indefinite ρ̂ (the floor guards them).
    let mut l = T::zero();
    for (e, &n_mj) in model.ops.iter().zip(&model.counts) {
        let n_e_raw = e.trace_product_re(&rho) * coords.n_hat;
        let denom = if n_e_raw > model.floor { n_e_raw } else { model.floor };
        let resid = n_mj - n_e_raw;
        l = l + resid * resid / denom + denom.ln();
    }
    Ok(ReconstructionResult {
        rho,
        n_hat: coords.n_hat,
        likelihood: l,
        iterations: 0,
        converged: true,
        method: Method::Linear,
        psd,
        min_eigenvalue,
    })
}

/// Which optimizer drives the likelihood minimization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MleOptimizer {
    /// L-BFGS with the analytic gradient (default).
    QuasiNewton,
    /// Derivative-free Nelder-Mead; practical for small dimensions.
    Simplex,
}

#[derive(Debug, Clone)]
pub struct MleConfig<T> {
    pub optimizer: MleOptimizer,
    pub optim: OptimConfig<T>,
    pub count_floor: T,
    /// Eigenvalue clamp for the warm start from linear inversion.
    pub init_clamp: T,
}

impl<T: Scalar> Default for MleConfig<T> {
    fn default() -> Self {
        Self {
            optimizer: MleOptimizer::QuasiNewton,
            optim: OptimConfig::default(),
            count_floor: lit(COUNT_FLOOR),
            init_clamp: lit(INIT_EIGENVALUE_CLAMP),
        }
    }
}

/// Builds the automatic starting factor: the clamped spectral form of the
/// linear-inversion estimate when it exists, otherwise the maximally mixed
/// state at the count-implied photon scale.
pub fn auto_init<T: Scalar>(
    n_m: &[f64],
    classes: &[MeasurementClass<T>],
    clamp: T,
) -> Result<TriangularFactor<T>> {
    let dim = classes
        .first()
        .map(|c| c.aggregated_op.rows())
        .ok_or_else(|| Error::domain("no measurement classes"))?;
    let basis = GellMannBasis::new(dim)?;
    match linear_inversion(n_m, classes, &basis) {
        Ok(lin) => {
            let eig = eig_hermitian(&lin.rho)?;
            let clamped = eig.apply_to_spectrum(|l| if l < clamp { clamp } else { l });
            let tr = clamped.trace().re;
            let target = clamped.scale(lin.n_hat / tr);
            let r = factor_rtr(&target)?;
            TriangularFactor::from_matrix(&r)
        }
        Err(_) => {
            let total: f64 = n_m.iter().sum();
            let trace_sum: T = classes.iter().map(|c| c.trace()).fold(T::zero(), |a, b| a + b);
            let n_est = if trace_sum > T::zero() {
                T::from_f64(total).unwrap() * T::from_usize(dim).unwrap() / trace_sum
            } else {
                T::one()
            };
            Ok(TriangularFactor::scaled_identity(dim, n_est))
        }
    }
}

/// Maximum-likelihood reconstruction over the triangular-factor chart.
///
/// Needs at least `d²` classes with nonzero aggregated trace. If every count
/// is zero the maximally mixed state is returned with `converged = false`.
pub fn mle_reconstruct<T: Scalar>(
    n_m: &[f64],
    classes: &[MeasurementClass<T>],
    init: Option<&TriangularFactor<T>>,
    cfg: &MleConfig<T>,
) -> Result<ReconstructionResult<T>> {
    let model = LikelihoodModel::new(n_m, classes, cfg.count_floor)?;
    let dim = model.dim();
    let usable = classes
        .iter()
        .filter(|c| c.trace() > lit::<T>(crate::dedup::CLASS_TRACE_FLOOR))
        .count();
    if usable < dim * dim {
        return Err(Error::Underdetermined {
            rank: usable,
            needed: dim * dim,
        });
    }

    if n_m.iter().all(|&c| c == 0.0) {
        let rho = ComplexMatrix::identity(dim).scale(T::one() / T::from_usize(dim).unwrap());
        let (min_eigenvalue, psd) = (T::zero(), true);
        let zero_factor = TriangularFactor::scaled_identity(dim, T::zero());
        let likelihood = model.value_of_matrix(&zero_factor.to_matrix());
        return Ok(ReconstructionResult {
            rho,
            n_hat: T::zero(),
            likelihood,
            iterations: 0,
            converged: false,
            method: Method::Mle,
            psd,
            min_eigenvalue,
        });
    }

    let start = match init {
        Some(r) => {
            if r.dim() != dim {
                return Err(Error::shape(format!(
                    "initial factor dim {} does not match class dim {dim}",
                    r.dim()
                )));
            }
            r.clone()
        }
        None => auto_init(n_m, classes, cfg.init_clamp)?,
    };

    let outcome: OptimOutcome<T> = match cfg.optimizer {
        MleOptimizer::QuasiNewton => lbfgs(
            |params, grad| model.value_grad(params, grad),
            start.params().to_vec(),
            &cfg.optim,
        ),
        MleOptimizer::Simplex => {
            let simplex_cfg = SimplexConfig {
                max_iters: cfg.optim.max_iters,
                f_tol: cfg.optim.f_rel_tol,
                init_step: lit(0.05),
            };
            nelder_mead(
                |params| {
                    let factor = TriangularFactor {
                        dim,
                        params: params.to_vec(),
                    };
                    model.value_of_matrix(&factor.to_matrix())
                },
                start.params().to_vec(),
                &simplex_cfg,
            )
        }
    };

    let factor = TriangularFactor::from_params(dim, outcome.x)?;
    let (rho, n_hat) = factor.state_and_scale();
    if !(n_hat > T::zero()) || !rho.is_finite() {
        return Err(Error::domain(
            "likelihood optimization collapsed to a zero-photon factor",
        ));
    }
    let (min_eigenvalue, psd) = spectral_summary(&rho)?;
    Ok(ReconstructionResult {
        rho,
        n_hat,
        likelihood: outcome.f,
        iterations: outcome.iterations,
        converged: outcome.converged,
        method: Method::Mle,
        psd,
        min_eigenvalue,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::counts::expected_counts;
    use crate::dedup::{aggregate_counts, build_classes, CLASS_TOL};
    use crate::measurement::{MeasElement, PhaseSetting};
    use crate::mzi::{povm_elements, CascadeSpec, TransmittanceSet};
    use crate::states::PureState;

    fn single_qudit_classes() -> Vec<MeasurementClass<f64>> {
        let spec = CascadeSpec::new(4).unwrap();
        let eta = TransmittanceSet::ideal();
        let mut elements = Vec::new();
        for setting in PhaseSetting::canonical_set(2) {
            for e in povm_elements::<f64>(&spec, &setting, &eta) {
                elements.push(MeasElement::from(e));
            }
        }
        build_classes(&elements, CLASS_TOL).unwrap().classes
    }

    fn noiseless_counts(rho: &DensityOperator<f64>, n: f64) -> (Vec<f64>, Vec<MeasurementClass<f64>>) {
        let spec = CascadeSpec::new(4).unwrap();
        let eta = TransmittanceSet::ideal();
        let mut record: Option<crate::counts::CountRecord> = None;
        let mut elements = Vec::new();
        for setting in PhaseSetting::canonical_set(2) {
            let es = povm_elements::<f64>(&spec, &setting, &eta);
            let r = expected_counts(rho, &es, n).unwrap();
            record = Some(match record {
                None => r,
                Some(mut acc) => {
                    for (k, v) in r.iter() {
                        acc.insert(k.clone(), v);
                    }
                    acc
                }
            });
            elements.extend(es.into_iter().map(MeasElement::from));
        }
        let classes = build_classes(&elements, CLASS_TOL).unwrap().classes;
        let n_m = aggregate_counts(&classes, &record.unwrap()).unwrap();
        (n_m, classes)
    }

    #[test]
    fn factor_pack_round_trip() {
        let params: Vec<f64> = (0..16).map(|i| 0.1 * (i as f64) - 0.3).collect();
        let f = TriangularFactor::from_params(4, params.clone()).unwrap();
        let m = f.to_matrix();
        let back = TriangularFactor::from_matrix(&m).unwrap();
        assert_eq!(back.params(), params.as_slice());
        assert!(TriangularFactor::<f64>::from_params(4, vec![0.0; 15]).is_err());
    }

    #[test]
    fn likelihood_at_exact_counts_is_log_sum() {
        let classes = single_qudit_classes();
        let n_total = 1e5;
        let factor = TriangularFactor::<f64>::scaled_identity(4, n_total);
        let model = LikelihoodModel::new(
            &vec![0.0; classes.len()],
            &classes,
            lit(COUNT_FLOOR),
        )
        .unwrap();
        let n_e = model.expected(&factor.to_matrix());
        let n_m: Vec<f64> = n_e.clone();
        let l = likelihood(&factor, &n_m, &classes).unwrap();
        let expect: f64 = n_e.iter().map(|x| x.ln()).sum();
        assert!((l - expect).abs() < 1e-9 * (1.0 + expect.abs()));
    }

    #[test]
    fn doubling_the_factor_quadruples_n_and_keeps_rho() {
        let f1 = TriangularFactor::from_params(2, vec![1.0f64, 2.0, 0.3, -0.4]).unwrap();
        let f2 = TriangularFactor::from_params(2, vec![2.0, 4.0, 0.6, -0.8]).unwrap();
        let (rho1, n1) = f1.state_and_scale();
        let (rho2, n2) = f2.state_and_scale();
        assert!((n2 / n1 - 4.0).abs() < 1e-12);
        assert!(rho1.max_abs_diff(&rho2) < 1e-12);
    }

    #[test]
    fn single_class_plugin_value() {
        // One class with trace-1 operator, n_M = n_E = 100 => L = ln 100.
        let class = MeasurementClass {
            id: 0,
            members: vec![],
            aggregated_op: ComplexMatrix::from_real_diag(&[1.0, 0.0]),
        };
        // R with Tr(E R†R) = 100: R = diag(10, anything with no overlap).
        let f = TriangularFactor::from_params(2, vec![10.0, 0.0, 0.0, 0.0]).unwrap();
        let l = likelihood(&f, &[100.0], &[class]).unwrap();
        assert!((l - 100.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn gauge_invariance_under_global_phase() {
        let classes = single_qudit_classes();
        let n_m: Vec<f64> = (0..classes.len()).map(|i| 50.0 + 3.0 * i as f64).collect();
        let f = TriangularFactor::from_params(
            4,
            (0..16).map(|i| 1.0 + 0.2 * (i as f64)).collect(),
        )
        .unwrap();
        let r = f.to_matrix();
        let base = likelihood_of_matrix(&r, &n_m, &classes).unwrap();
        for alpha in [0.3f64, 1.2, 2.9] {
            let phase = Complex::new(alpha.cos(), alpha.sin());
            let rotated = r.scale_complex(phase);
            let l = likelihood_of_matrix(&rotated, &n_m, &classes).unwrap();
            assert!((l - base).abs() <= 1e-12 * (1.0 + base.abs()));
        }
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        let classes = single_qudit_classes();
        let n_m: Vec<f64> = (0..classes.len()).map(|i| 80.0 + 7.0 * (i as f64)).collect();
        let params: Vec<f64> = (0..16).map(|i| 2.0 + ((i * 37 + 11) % 17) as f64 * 0.13).collect();
        let f = TriangularFactor::from_params(4, params.clone()).unwrap();
        let (_, grad) = likelihood_gradient(&f, &n_m, &classes).unwrap();

        let mut max_rel = 0.0f64;
        for i in 0..params.len() {
            let h = 1e-5 * (1.0 + params[i].abs());
            let mut plus = params.clone();
            plus[i] += h;
            let mut minus = params.clone();
            minus[i] -= h;
            let lp = likelihood(
                &TriangularFactor::from_params(4, plus).unwrap(),
                &n_m,
                &classes,
            )
            .unwrap();
            let lm = likelihood(
                &TriangularFactor::from_params(4, minus).unwrap(),
                &n_m,
                &classes,
            )
            .unwrap();
            let fd = (lp - lm) / (2.0 * h);
            let rel = (fd - grad[i]).abs() / (1.0 + grad[i].abs());
            max_rel = max_rel.max(rel);
        }
        assert!(max_rel < 1e-6, "max relative gradient error {max_rel}");
    }

    #[test]
    fn linear_inversion_recovers_noiseless_states() {
        let n = 1e6;
        let basis = GellMannBasis::<f64>::new(4).unwrap();

        let mm = DensityOperator::maximally_mixed(4);
        let (n_m, classes) = noiseless_counts(&mm, n);
        let out = linear_inversion(&n_m, &classes, &basis).unwrap();
        assert!(out.rho.max_abs_diff(mm.matrix()) < 1e-8);
        assert!((out.n_hat / n - 1.0).abs() < 1e-6);
        assert!(out.psd);

        let psi = PureState::normalized(vec![
            Complex::new(0.5, 0.1),
            Complex::new(-0.3, 0.4),
            Complex::new(0.2, -0.6),
            Complex::new(0.1, 0.2),
        ])
        .unwrap();
        let rho = psi.density();
        let (n_m, classes) = noiseless_counts(&rho, n);
        let out = linear_inversion(&n_m, &classes, &basis).unwrap();
        assert!(out.rho.max_abs_diff(rho.matrix()) < 1e-8);
    }

    #[test]
    fn linear_inversion_flags_underdetermined_sets() {
        let basis = GellMannBasis::<f64>::new(4).unwrap();
        // A single setting with only D2 slots cannot reach rank 16.
        let spec = CascadeSpec::new(4).unwrap();
        let eta = TransmittanceSet::ideal();
        let setting = PhaseSetting::new(vec![0.0, 0.0]);
        let elements: Vec<MeasElement<f64>> = povm_elements::<f64>(&spec, &setting, &eta)
            .into_iter()
            .map(MeasElement::from)
            .collect();
        let classes = build_classes(&elements, CLASS_TOL).unwrap().classes;
        let n_m = vec![1.0; classes.len()];
        assert!(matches!(
            linear_inversion(&n_m, &classes, &basis),
            Err(Error::Underdetermined { .. })
        ));
    }

    #[test]
    fn linear_inversion_goes_indefinite_on_scarce_pure_state_counts() {
        // With few photons from a pure state, the unconstrained estimate
        // spills outside the physical set for a healthy fraction of seeds.
        let basis = GellMannBasis::<f64>::new(4).unwrap();
        let psi = PureState::normalized(vec![
            Complex::new(0.7, 0.0),
            Complex::new(0.0, 0.5),
            Complex::new(-0.4, 0.0),
            Complex::new(0.0, -0.32),
        ])
        .unwrap();
        let (expected, classes) = noiseless_counts(&psi.density(), 200.0);
        let template = {
            let mut rec = crate::counts::CountRecord::new(
                crate::counts::CountMode::Single,
                crate::counts::CountMeta::new(200.0),
            );
            // Rebuild a keyed record from classwise expectations by spreading
            // them over members; Poisson noise only needs the right totals.
            for (class, &n_e) in classes.iter().zip(&expected) {
                let share = n_e / class.members.len() as f64;
                for key in &class.members {
                    rec.insert(key.clone(), share);
                }
            }
            rec
        };
        let mut indefinite = 0;
        for seed in 0..30u64 {
            let sampled = crate::counts::sample_counts(&template, seed);
            let n_m = crate::dedup::aggregate_counts(&classes, &sampled).unwrap();
            let out = linear_inversion(&n_m, &classes, &basis).unwrap();
            if !out.psd {
                indefinite += 1;
                assert!(out.min_eigenvalue < -1e-10);
                assert!(out.density().is_err());
            }
        }
        assert!(
            indefinite > 0,
            "expected at least one indefinite linear estimate over 30 seeds"
        );
    }

    #[test]
    fn mle_outputs_stay_physical_on_arbitrary_counts() {
        let classes = single_qudit_classes();
        for seed in 0..3u64 {
            let n_m: Vec<f64> = (0..classes.len())
                .map(|i| (((seed as usize + 1) * (i * i * 7919 + 31)) % 2000) as f64)
                .collect();
            let out = mle_reconstruct(&n_m, &classes, None, &MleConfig::default()).unwrap();
            assert!(out.min_eigenvalue >= -1e-10);
            assert!((out.rho.trace().re - 1.0).abs() < 1e-10);
            out.density().unwrap();
        }
    }

    #[test]
    fn mle_two_qudit_noiseless_mes_is_essentially_exact() {
        let spec = CascadeSpec::new(4).unwrap();
        let eta = TransmittanceSet::ideal();
        let mut signal = Vec::new();
        for setting in PhaseSetting::canonical_set(2) {
            signal.extend(povm_elements::<f64>(&spec, &setting, &eta));
        }
        let joint = crate::measurement::joint_elements(&signal, &signal);
        let classes = build_classes(&joint, CLASS_TOL).unwrap().classes;
        let truth = crate::states::mes_state::<f64>(4, 0.0).unwrap().density();
        let record = crate::counts::expected_counts_joint(&truth, &joint, 25_000.0).unwrap();
        let n_m = aggregate_counts(&classes, &record).unwrap();
        let out = mle_reconstruct(&n_m, &classes, None, &MleConfig::default()).unwrap();
        let f = crate::metrics::fidelity(&out.density().unwrap(), &truth).unwrap();
        assert!(f >= 0.9999, "fidelity {f}");
    }

    #[test]
    fn mle_recovers_maximally_mixed_from_exact_counts() {
        let mm = DensityOperator::maximally_mixed(4);
        let (n_m, classes) = noiseless_counts(&mm, 1e6);
        let out = mle_reconstruct(&n_m, &classes, None, &MleConfig::default()).unwrap();
        assert!(out.converged);
        assert!(out.psd);
        assert!(out.min_eigenvalue >= -1e-10);
        assert!(out.rho.max_abs_diff(mm.matrix()) < 1e-4);
        out.density().unwrap();
    }

    #[test]
    fn mle_zero_counts_returns_maximally_mixed_unconverged() {
        let classes = single_qudit_classes();
        let n_m = vec![0.0; classes.len()];
        let out = mle_reconstruct(&n_m, &classes, None, &MleConfig::default()).unwrap();
        assert!(!out.converged);
        assert_eq!(out.n_hat, 0.0);
        let mm = DensityOperator::<f64>::maximally_mixed(4);
        assert!(out.rho.max_abs_diff(mm.matrix()) < 1e-15);
    }

    #[test]
    fn simplex_fallback_works_on_a_small_problem() {
        let mm = DensityOperator::maximally_mixed(2);
        // Build a tiny d=2 model.
        let spec = CascadeSpec::new(2).unwrap();
        let eta = TransmittanceSet::ideal();
        let mut elements = Vec::new();
        let mut record: Option<crate::counts::CountRecord> = None;
        for setting in PhaseSetting::canonical_set(1) {
            let es = povm_elements::<f64>(&spec, &setting, &eta);
            let r = expected_counts(&mm, &es, 1e5).unwrap();
            record = Some(match record {
                None => r,
                Some(mut acc) => {
                    for (k, v) in r.iter() {
                        acc.insert(k.clone(), v);
                    }
                    acc
                }
            });
            elements.extend(es.into_iter().map(MeasElement::from));
        }
        let classes = build_classes(&elements, CLASS_TOL).unwrap().classes;
        let n_m = aggregate_counts(&classes, &record.unwrap()).unwrap();
        let cfg = MleConfig {
            optimizer: MleOptimizer::Simplex,
            ..MleConfig::default()
        };
        let out = mle_reconstruct(&n_m, &classes, None, &cfg).unwrap();
        assert!(out.rho.max_abs_diff(mm.matrix()) < 1e-3);
    }

    #[test]
    fn result_json_round_trip() {
        let mm = DensityOperator::maximally_mixed(4);
        let (n_m, classes) = noiseless_counts(&mm, 1e5);
        let out = mle_reconstruct(&n_m, &classes, None, &MleConfig::default()).unwrap();
        let text = serde_json::to_string(&out).unwrap();
        assert!(text.contains("\"N_hat\""));
        let back: ReconstructionResult<f64> = serde_json::from_str(&text).unwrap();
        assert_eq!(out, back);
    }
}
