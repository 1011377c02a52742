//! Measurement model of the cascaded delay-interferometer analyzer.
//!
//! A d-dimensional time-bin qudit is analyzed by `K = ceil(log2 d)` delay
//! interferometers in series, with delays `2^(K-1), ..., 2, 1` slots in
//! propagation order and one phase per stage. Detector D1 sits at the end of
//! the x-port chain; detector D2 taps the y-port of the largest-delay stage;
//! remaining y-ports are terminated. Each stage widens the time-slot space by
//! its delay, so stage operators are rectangular maps and the POVM elements
//! come back to d×d through the adjoint sandwich with the detection-time
//! projector.
//!
//! Unequal arm and detector transmittances are compensated by scaling the
//! long-arm amplitude of each stage with the square root of its relative
//! transmittance and the D1 elements with the detector ratio.

use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::ComplexMatrix;
use crate::measurement::{Detector, PhaseSetting, PovmElement};
use crate::scalar::{lit, Scalar};

/// Elements whose trace falls below this are identically-zero slots and are dropped.
pub const TRACE_FLOOR: f64 = 1e-14;

/// Geometry of the cascade for one photon.
#[derive(Debug, Clone, PartialEq)]
pub struct CascadeSpec {
    dim: usize,
    num_stages: usize,
    stage_delays: Vec<usize>,
    /// Physical time per slot in seconds; informational only.
    pub slot_interval: Option<f64>,
}

impl CascadeSpec {
    pub fn new(dim: usize) -> Result<Self> {
        if dim < 2 {
            return Err(Error::domain(format!("cascade dimension must be >= 2, got {dim}")));
        }
        let mut num_stages = 0usize;
        while (1usize << num_stages) < dim {
            num_stages += 1;
        }
        let stage_delays = (0..num_stages).map(|i| 1usize << (num_stages - 1 - i)).collect();
        Ok(Self {
            dim,
            num_stages,
            stage_delays,
            slot_interval: None,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_stages(&self) -> usize {
        self.num_stages
    }

    /// Delays in slots, largest first (propagation order).
    pub fn stage_delays(&self) -> &[usize] {
        &self.stage_delays
    }
}

/// Relative transmittances of the analyzer: long arm over short arm per stage
/// port, and the D1-over-D2 detector-path ratio. The ideal analyzer is all ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransmittanceSet<T> {
    pub eta_2x: T,
    pub eta_2y: T,
    pub eta_1x: T,
    pub eta_1y: T,
    pub eta_d1: T,
}

impl<T: Scalar> TransmittanceSet<T> {
    pub fn ideal() -> Self {
        Self {
            eta_2x: T::one(),
            eta_2y: T::one(),
            eta_1x: T::one(),
            eta_1y: T::one(),
            eta_d1: T::one(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("eta_2x", self.eta_2x),
            ("eta_2y", self.eta_2y),
            ("eta_1x", self.eta_1x),
            ("eta_1y", self.eta_1y),
            ("eta_d1", self.eta_d1),
        ] {
            if !(v > T::zero()) || !v.is_finite() {
                return Err(Error::domain(format!("transmittance {name} must be positive and finite")));
            }
        }
        Ok(())
    }

    /// (x, y) transmittances of the stage with the given delay. Stages beyond
    /// the two calibrated ones (delays 1 and 2) are treated as ideal.
    pub fn stage_etas(&self, delay: usize) -> (T, T) {
        match delay {
            1 => (self.eta_1x, self.eta_1y),
            2 => (self.eta_2x, self.eta_2y),
            _ => (T::one(), T::one()),
        }
    }

    pub fn cast<U: Scalar>(&self) -> TransmittanceSet<U> {
        let c = |x: T| U::from_f64(x.to_f64().unwrap()).unwrap();
        TransmittanceSet {
            eta_2x: c(self.eta_2x),
            eta_2y: c(self.eta_2y),
            eta_1x: c(self.eta_1x),
            eta_1y: c(self.eta_1y),
            eta_d1: c(self.eta_d1),
        }
    }
}

/// Output port of a delay stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PortKind {
    X,
    Y,
}

/// Rectangular map of one stage port: `in_dim` input slots to
/// `in_dim + delay` output slots.
#[derive(Debug, Clone)]
pub struct PortOperator<T> {
    pub port: PortKind,
    pub delay: usize,
    pub matrix: ComplexMatrix<T>,
}

impl<T: Scalar> PortOperator<T> {
    pub fn in_dim(&self) -> usize {
        self.matrix.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.matrix.rows()
    }
}

/// Builds the pair of port operators for one delay stage.
///
/// Column `k` of the x-port is `(|k> + sqrt(eta_x)·e^{iθ}|k+delay>)/sqrt(2(1+eta_x))`;
/// the y-port carries `-1` on the short arm and `eta_y` on the long arm. With
/// unit transmittances both reduce exactly to the ideal beam-splitter forms.
pub fn stage_operators<T: Scalar>(
    delay: usize,
    theta: T,
    eta_x: T,
    eta_y: T,
    in_dim: usize,
) -> Result<(PortOperator<T>, PortOperator<T>)> {
    if delay == 0 || in_dim == 0 {
        return Err(Error::domain("stage delay and input dimension must be >= 1"));
    }
    if !(eta_x > T::zero()) || !(eta_y > T::zero()) {
        return Err(Error::domain("relative transmittances must be positive"));
    }
    let out_dim = in_dim + delay;
    let phase = Complex::new(theta.cos(), theta.sin());
    let two = T::from_f64(2.0).unwrap();

    let build = |short_sign: T, eta: T, port: PortKind| {
        let inv_norm = T::one() / (two * (T::one() + eta)).sqrt();
        let long_amp = phase * (eta.sqrt() * inv_norm);
        let short_amp = Complex::new(short_sign * inv_norm, T::zero());
        let mut m = ComplexMatrix::zeros(out_dim, in_dim);
        for k in 0..in_dim {
            m[(k, k)] = short_amp;
            m[(k + delay, k)] = long_amp;
        }
        PortOperator {
            port,
            delay,
            matrix: m,
        }
    };

    Ok((
        build(T::one(), eta_x, PortKind::X),
        build(-T::one(), eta_y, PortKind::Y),
    ))
}

/// Projector `|l><l|` onto one detection time slot.
pub fn detection_projector<T: Scalar>(slot: usize, dim: usize) -> Result<ComplexMatrix<T>> {
    if slot >= dim {
        return Err(Error::domain(format!("detection slot {slot} out of range for dim {dim}")));
    }
    let mut m = ComplexMatrix::zeros(dim, dim);
    m[(slot, slot)] = Complex::new(T::one(), T::zero());
    Ok(m)
}

struct CascadeChains<T> {
    /// Full x-port chain, `(d + 2^K - 1) x d`.
    d1_chain: ComplexMatrix<T>,
    /// y-port of the largest-delay stage, `(d + 2^(K-1)) x d`.
    d2_chain: ComplexMatrix<T>,
    /// Chains ending in a terminated y-port (stages after the first).
    terminated: Vec<ComplexMatrix<T>>,
}

fn build_chains<T: Scalar>(
    spec: &CascadeSpec,
    setting: &PhaseSetting,
    eta: &TransmittanceSet<T>,
) -> CascadeChains<T> {
    assert_eq!(
        setting.num_stages(),
        spec.num_stages(),
        "phase setting has {} angles but the cascade has {} stages",
        setting.num_stages(),
        spec.num_stages()
    );
    let mut x_chain = ComplexMatrix::<T>::identity(spec.dim());
    let mut d2_chain = None;
    let mut terminated = Vec::new();
    let mut dim_in = spec.dim();
    for (i, &delay) in spec.stage_delays().iter().enumerate() {
        let theta = T::from_f64(setting.theta(i)).unwrap();
        let (ex, ey) = eta.stage_etas(delay);
        let (mx, my) = stage_operators(delay, theta, ex, ey, dim_in)
            .expect("validated stage parameters");
        let y_applied = my.matrix.matmul(&x_chain).expect("chain dims");
        if i == 0 {
            d2_chain = Some(y_applied);
        } else {
            terminated.push(y_applied);
        }
        x_chain = mx.matrix.matmul(&x_chain).expect("chain dims");
        dim_in += delay;
    }
    CascadeChains {
        d1_chain: x_chain,
        d2_chain: d2_chain.expect("at least one stage"),
        terminated,
    }
}

/// All POVM elements of the cascade for one phase setting: D1 elements over
/// `d + 2^K - 1` detection slots (scaled by the detector ratio), then D2
/// elements over `d + 2^(K-1)` slots. Slots whose operator is identically
/// zero are dropped.
pub fn povm_elements<T: Scalar>(
    spec: &CascadeSpec,
    setting: &PhaseSetting,
    eta: &TransmittanceSet<T>,
) -> Vec<PovmElement<T>> {
    let chains = build_chains(spec, setting, eta);
    let floor = lit::<T>(TRACE_FLOOR);
    let mut out = Vec::new();
    for l in 0..chains.d1_chain.rows() {
        let op = ComplexMatrix::outer_of_row(chains.d1_chain.row(l)).scale(eta.eta_d1);
        if op.trace().re > floor {
            out.push(PovmElement {
                detector: Detector::D1,
                slot: l,
                setting: setting.clone(),
                op,
            });
        }
    }
    for l in 0..chains.d2_chain.rows() {
        let op = ComplexMatrix::outer_of_row(chains.d2_chain.row(l));
        if op.trace().re > floor {
            out.push(PovmElement {
                detector: Detector::D2,
                slot: l,
                setting: setting.clone(),
                op,
            });
        }
    }
    out
}

/// Sum of the POVM elements of every terminated y-port, over all detection
/// slots. With ideal transmittances the D1 and D2 element sums plus this
/// completion equal the identity; it is never part of tomography data.
pub fn termination_completion<T: Scalar>(
    spec: &CascadeSpec,
    setting: &PhaseSetting,
    eta: &TransmittanceSet<T>,
) -> ComplexMatrix<T> {
    let chains = build_chains(spec, setting, eta);
    let mut total = ComplexMatrix::zeros(spec.dim(), spec.dim());
    for chain in &chains.terminated {
        // Σ_l chain† |l><l| chain = chain†·chain.
        total = total.add(&chain.adjoint().matmul(chain).expect("square"));
    }
    total
}

/// Closed form of one measurement row: the operator
/// `M_D(slot)·(port chain)` equals `weight · |slot><bra|` with `bra` a unit
/// vector in the d-dimensional input space.
#[derive(Debug, Clone)]
pub struct SimplifiedForm<T> {
    pub detector: Detector,
    pub slot: usize,
    pub weight: Complex<T>,
    /// Unit-norm bra coefficients over the input basis.
    pub bra: Vec<Complex<T>>,
}

impl<T: Scalar> SimplifiedForm<T> {
    /// The POVM element this form predicts: `|weight|² |bra†><bra†|` as a d×d operator.
    pub fn predicted_element(&self) -> ComplexMatrix<T> {
        ComplexMatrix::outer_of_row(&self.bra).scale(self.weight.norm_sqr())
    }
}

fn normalized_form<T: Scalar>(
    detector: Detector,
    slot: usize,
    prefactor: Complex<T>,
    coeffs: Vec<Complex<T>>,
) -> Option<SimplifiedForm<T>> {
    let norm_sq = coeffs.iter().map(|c| c.norm_sqr()).fold(T::zero(), |a, b| a + b);
    if norm_sq <= lit::<T>(TRACE_FLOOR) {
        return None;
    }
    let norm = norm_sq.sqrt();
    let inv = T::one() / norm;
    Some(SimplifiedForm {
        detector,
        slot,
        weight: prefactor * norm,
        bra: coeffs.into_iter().map(|c| c * inv).collect(),
    })
}

/// Closed-form simplified measurement operators at the given setting, for the
/// ideal (unit-transmittance) analyzer.
///
/// For the four-dimensional reference cascade these are built from the
/// tabulated closed forms (prefactors 1/4 for D1 and -1/2 for D2, phases
/// accumulated per delayed path), independently of the matrix-product route.
/// For other dimensions they are read off the numerically built chains.
pub fn simplified_forms<T: Scalar>(spec: &CascadeSpec, setting: &PhaseSetting) -> Vec<SimplifiedForm<T>> {
    if spec.dim() == 4 {
        return table_forms(setting);
    }
    let chains = build_chains(spec, setting, &TransmittanceSet::ideal());
    let mut out = Vec::new();
    for (detector, chain) in [(Detector::D1, &chains.d1_chain), (Detector::D2, &chains.d2_chain)] {
        for l in 0..chain.rows() {
            let coeffs = chain.row(l).to_vec();
            if let Some(f) = normalized_form(detector, l, Complex::new(T::one(), T::zero()), coeffs)
            {
                out.push(f);
            }
        }
    }
    out
}

/// The d = 4 closed forms: D1 at slot l collects every input k reachable by a
/// delay pattern `l - k` in {0,1,2,3}, with phase `θ1` for the 1-slot delay
/// and `θ2` for the 2-slot delay; D2 at slot l sees `<l| - e^{iθ2}<l-2|`.
fn table_forms<T: Scalar>(setting: &PhaseSetting) -> Vec<SimplifiedForm<T>> {
    assert_eq!(setting.num_stages(), 2, "tabulated forms are for the two-stage cascade");
    let theta2 = T::from_f64(setting.theta(0)).unwrap();
    let theta1 = T::from_f64(setting.theta(1)).unwrap();
    let phase = |t: T| Complex::new(t.cos(), t.sin());
    let zero = Complex::new(T::zero(), T::zero());
    let one = Complex::new(T::one(), T::zero());

    let mut out = Vec::new();
    let quarter = Complex::new(lit::<T>(0.25), T::zero());
    for l in 0..7usize {
        let mut coeffs = vec![zero; 4];
        for k in 0..4usize {
            if l < k || l - k > 3 {
                continue;
            }
            let path = l - k;
            let mut t = T::zero();
            if path & 1 == 1 {
                t = t + theta1;
            }
            if path & 2 == 2 {
                t = t + theta2;
            }
            coeffs[k] = phase(t);
        }
        if let Some(f) = normalized_form(Detector::D1, l, quarter, coeffs) {
            out.push(f);
        }
    }

    let minus_half = Complex::new(lit::<T>(-0.5), T::zero());
    for l in 0..6usize {
        let mut coeffs = vec![zero; 4];
        if l < 4 {
            coeffs[l] = one;
        }
        if l >= 2 && l - 2 < 4 {
            coeffs[l - 2] = -phase(theta2);
        }
        if let Some(f) = normalized_form(Detector::D2, l, minus_half, coeffs) {
            out.push(f);
        }
    }
    out
}
