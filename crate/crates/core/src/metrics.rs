//! Figures of merit for reconstructed states: fidelity, trace distance,
//! linear and von Neumann entropies, conditional entropies, the
//! fidelity-maximizing entangled-state phase, and the critical values derived
//! from the depolarized entangled state at a given mixing probability.

use serde::{Deserialize, Serialize};

use crate::density::DensityOperator;
use crate::error::{Error, Result};
use crate::linalg::{eig_hermitian, matrix_sqrt_psd};
use crate::scalar::{lit, Scalar};
use crate::states::{depolarized, mes_state, partial_trace, PureState, Side};

/// Eigenvalues below this contribute zero entropy.
pub const ENTROPY_EIG_FLOOR: f64 = 1e-14;

fn check_dims<T: Scalar>(rho: &DensityOperator<T>, sigma: &DensityOperator<T>) -> Result<()> {
    if rho.dim() != sigma.dim() {
        return Err(Error::shape(format!(
            "state dimensions differ: {} vs {}",
            rho.dim(),
            sigma.dim()
        )));
    }
    Ok(())
}

/// Uhlmann fidelity `[Tr sqrt(sqrt(σ) ρ sqrt(σ))]²`, clamped into `[0, 1]`.
pub fn fidelity<T: Scalar>(rho: &DensityOperator<T>, sigma: &DensityOperator<T>) -> Result<T> {
    check_dims(rho, sigma)?;
    let s = matrix_sqrt_psd(sigma.matrix())?;
    let inner = s.matmul(rho.matrix())?.matmul(&s)?.hermitized();
    let eig = eig_hermitian(&inner)?;
    // Eigenvalues at the solver's noise floor are exact zeros; including them
    // would pollute the square-root sum with sqrt(eps)-size terms.
    let scale = eig.values.iter().fold(T::zero(), |m, &l| m.max(l.abs()));
    let floor = T::epsilon() * scale * T::from_usize(rho.dim()).unwrap();
    let root_sum: T = eig
        .values
        .iter()
        .map(|&l| if l > floor { l.sqrt() } else { T::zero() })
        .fold(T::zero(), |a, b| a + b);
    Ok((root_sum * root_sum).min(T::one()).max(T::zero()))
}

/// `<ψ|ρ|ψ>`, the fidelity shortcut for pure targets.
pub fn fidelity_to_pure<T: Scalar>(rho: &DensityOperator<T>, psi: &PureState<T>) -> Result<T> {
    if rho.dim() != psi.dim() {
        return Err(Error::shape(format!(
            "state dim {} does not match target dim {}",
            rho.dim(),
            psi.dim()
        )));
    }
    let amps = psi.amplitudes();
    let m = rho.matrix();
    let mut acc = T::zero();
    for r in 0..rho.dim() {
        for c in 0..rho.dim() {
            // Re(conj(ψ_r) ρ_rc ψ_c), the imaginary parts cancel in the sum.
            let z = amps[r].conj() * m[(r, c)] * amps[c];
            acc = acc + z.re;
        }
    }
    Ok(acc.min(T::one()).max(T::zero()))
}

/// Trace distance `(1/2)·Tr|ρ - σ|`.
pub fn trace_distance<T: Scalar>(rho: &DensityOperator<T>, sigma: &DensityOperator<T>) -> Result<T> {
    check_dims(rho, sigma)?;
    let diff = rho.matrix().sub(sigma.matrix());
    let eig = eig_hermitian(&diff)?;
    let half = lit::<T>(0.5);
    Ok(eig.values.iter().map(|l| l.abs()).fold(T::zero(), |a, b| a + b) * half)
}

/// Linear entropy `1 - Tr(ρ²)`.
pub fn linear_entropy<T: Scalar>(rho: &DensityOperator<T>) -> T {
    T::one() - rho.purity()
}

/// Von Neumann entropy `-Tr(ρ log₂ ρ)`; eigenvalues at or below the floor
/// contribute zero.
pub fn von_neumann_entropy<T: Scalar>(rho: &DensityOperator<T>) -> Result<T> {
    let eig = eig_hermitian(rho.matrix())?;
    let floor = lit::<T>(ENTROPY_EIG_FLOOR);
    let ln2 = T::from_f64(std::f64::consts::LN_2).unwrap();
    Ok(eig
        .values
        .iter()
        .filter(|&&l| l > floor)
        .map(|&l| -l * (l.ln() / ln2))
        .fold(T::zero(), |a, b| a + b))
}

/// Conditional entropy `H(ρ) - H(ρ_X)`; negative values certify entanglement.
pub fn conditional_entropy<T: Scalar>(rho_joint: &DensityOperator<T>, side: Side) -> Result<T> {
    let reduced = partial_trace(rho_joint, side)?;
    Ok(von_neumann_entropy(rho_joint)? - von_neumann_entropy(&reduced)?)
}

/// Finds the entangled-target phase maximizing the fidelity of `rho` against
/// the maximally entangled state family: a 256-point grid scan over `[0, 2π)`
/// followed by golden-section refinement to 1e-8 in the phase.
pub fn best_phase_target<T: Scalar>(rho_joint: &DensityOperator<T>, d: usize) -> Result<(T, T)> {
    if rho_joint.dim() != d * d {
        return Err(Error::shape(format!(
            "state dim {} is not the square of local dim {d}",
            rho_joint.dim()
        )));
    }
    let eval = |phi: T| -> T {
        let psi = mes_state(d, phi).expect("valid dim");
        fidelity_to_pure(rho_joint, &psi).expect("matched dims")
    };

    let tau = T::from_f64(std::f64::consts::TAU).unwrap();
    let grid = 256usize;
    let step = tau / T::from_usize(grid).unwrap();
    let mut best_idx = 0usize;
    let mut best_val = eval(T::zero());
    for i in 1..grid {
        let v = eval(step * T::from_usize(i).unwrap());
        if v > best_val {
            best_val = v;
            best_idx = i;
        }
    }

    // Golden-section refinement around the best grid point.
    let center = step * T::from_usize(best_idx).unwrap();
    let mut a = center - step;
    let mut b = center + step;
    let gr = lit::<T>(0.618_033_988_749_894_9);
    let tol = lit::<T>(1e-8);
    while (b - a) > tol {
        let c = b - gr * (b - a);
        let d_pt = a + gr * (b - a);
        if eval(c) > eval(d_pt) {
            b = d_pt;
        } else {
            a = c;
        }
    }
    let mid = (a + b) * lit::<T>(0.5);
    let phi = mid - (mid / tau).floor() * tau;
    Ok((phi, eval(phi)))
}

/// Figures of merit of a two-qudit state against an entangled-state target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeritReport<T> {
    pub fidelity: T,
    pub trace_distance: T,
    pub linear_entropy: T,
    pub von_neumann_entropy: T,
    pub conditional_entropy_signal: T,
    pub conditional_entropy_idler: T,
    /// Phase of the entangled target, when the target is from the
    /// maximally-entangled family.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub best_phi: Option<T>,
}

/// Target state for a merit evaluation.
#[derive(Debug, Clone)]
pub enum MeritTarget<T> {
    /// Maximally entangled state at the fidelity-maximizing phase.
    MesAuto,
    /// Maximally entangled state at a fixed phase.
    Mes { phi: T },
    /// An explicit density operator.
    State(DensityOperator<T>),
}

/// Evaluates all figures of merit of a two-qudit state.
pub fn merit_report<T: Scalar>(
    rho_joint: &DensityOperator<T>,
    target: &MeritTarget<T>,
) -> Result<MeritReport<T>> {
    let d = (0..=rho_joint.dim())
        .find(|&k| k * k == rho_joint.dim())
        .ok_or_else(|| {
            Error::shape(format!(
                "merit report needs a two-qudit state; dim {} is not a perfect square",
                rho_joint.dim()
            ))
        })?;

    let (sigma, best_phi) = match target {
        MeritTarget::MesAuto => {
            let (phi, _) = best_phase_target(rho_joint, d)?;
            (mes_state(d, phi)?.density(), Some(phi))
        }
        MeritTarget::Mes { phi } => (mes_state(d, *phi)?.density(), Some(*phi)),
        MeritTarget::State(s) => {
            check_dims(rho_joint, s)?;
            (s.clone(), None)
        }
    };

    Ok(MeritReport {
        fidelity: fidelity(rho_joint, &sigma)?,
        trace_distance: trace_distance(rho_joint, &sigma)?,
        linear_entropy: linear_entropy(rho_joint),
        von_neumann_entropy: von_neumann_entropy(rho_joint)?,
        conditional_entropy_signal: conditional_entropy(rho_joint, Side::Signal)?,
        conditional_entropy_idler: conditional_entropy(rho_joint, Side::Idler)?,
        best_phi,
    })
}

/// Critical values for violating the d-dimensional Bell-type inequality:
/// every metric evaluated on the depolarized entangled state at mixing
/// probability `p`, against the zero-phase maximally entangled target.
pub fn cglmp_critical_table<T: Scalar>(p: T, d: usize) -> Result<MeritReport<T>> {
    let mes = mes_state::<T>(d, T::zero())?.density();
    let rho = depolarized(&mes, p)?;
    merit_report(&rho, &MeritTarget::Mes { phi: T::zero() })
}
