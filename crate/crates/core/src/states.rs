//! Reference states: maximally entangled time-bin pairs, depolarized
//! mixtures, local phase rotations, and partial traces.
//!
//! Joint two-qudit indices follow the signal-first convention everywhere:
//! `joint = signal·d + idler`.

use num_complex::Complex;
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::density::DensityOperator;
use crate::error::{Error, Result};
use crate::matrix::ComplexMatrix;
use crate::scalar::{lit, Scalar};

/// A pure state: unit-norm complex amplitude vector.
#[derive(Debug, Clone, PartialEq)]
pub struct PureState<T> {
    dim: usize,
    amplitudes: Vec<Complex<T>>,
}

impl<T: Scalar> PureState<T> {
    /// Validates unit norm within 1e-12 (scaled for low-precision scalars).
    pub fn new(amplitudes: Vec<Complex<T>>) -> Result<Self> {
        if amplitudes.is_empty() {
            return Err(Error::domain("pure state needs at least one amplitude"));
        }
        let norm_sq: T = amplitudes.iter().map(|a| a.norm_sqr()).fold(T::zero(), |a, b| a + b);
        let tol = lit::<T>(1e-12).max(T::epsilon() * lit::<T>(64.0));
        if (norm_sq.sqrt() - T::one()).abs() > tol {
            return Err(Error::domain(format!(
                "pure state norm {} differs from 1",
                norm_sq.sqrt()
            )));
        }
        Ok(Self {
            dim: amplitudes.len(),
            amplitudes,
        })
    }

    /// Normalizes an arbitrary nonzero vector.
    pub fn normalized(amplitudes: Vec<Complex<T>>) -> Result<Self> {
        let norm_sq: T = amplitudes.iter().map(|a| a.norm_sqr()).fold(T::zero(), |a, b| a + b);
        if norm_sq <= T::zero() {
            return Err(Error::domain("cannot normalize the zero vector"));
        }
        let inv = T::one() / norm_sq.sqrt();
        Ok(Self {
            dim: amplitudes.len(),
            amplitudes: amplitudes.into_iter().map(|a| a * inv).collect(),
        })
    }

    pub fn basis_state(dim: usize, k: usize) -> Result<Self> {
        if k >= dim {
            return Err(Error::domain(format!("basis index {k} out of range for dim {dim}")));
        }
        let mut amplitudes = vec![Complex::new(T::zero(), T::zero()); dim];
        amplitudes[k] = Complex::new(T::one(), T::zero());
        Ok(Self { dim, amplitudes })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn amplitudes(&self) -> &[Complex<T>] {
        &self.amplitudes
    }

    /// The projector `|ψ><ψ|` as a density operator.
    pub fn density(&self) -> DensityOperator<T> {
        let m = ComplexMatrix::from_fn(self.dim, self.dim, |r, c| {
            self.amplitudes[r] * self.amplitudes[c].conj()
        });
        DensityOperator::new_unchecked(m)
    }
}

/// Maximally entangled two-qudit state `(1/√d) Σ_k e^{iφk} |k>_s|k>_i` in
/// dimension `d²`.
pub fn mes_state<T: Scalar>(d: usize, phi: T) -> Result<PureState<T>> {
    if d < 2 {
        return Err(Error::domain(format!("entangled pair dimension must be >= 2, got {d}")));
    }
    let amp = T::one() / T::from_usize(d).unwrap().sqrt();
    let mut amplitudes = vec![Complex::new(T::zero(), T::zero()); d * d];
    for k in 0..d {
        let t = phi * T::from_usize(k).unwrap();
        amplitudes[k * d + k] = Complex::new(t.cos(), t.sin()) * amp;
    }
    PureState::new(amplitudes)
}

/// Convex mixture `p·σ + (1-p)·I/dim`.
pub fn depolarized<T: Scalar>(sigma: &DensityOperator<T>, p: T) -> Result<DensityOperator<T>> {
    if !(T::zero()..=T::one()).contains(&p) {
        return Err(Error::domain(format!("mixing probability {p} outside [0, 1]")));
    }
    let dim = sigma.dim();
    let mixed_weight = (T::one() - p) / T::from_usize(dim).unwrap();
    let mut m = sigma.matrix().scale(p);
    for i in 0..dim {
        m[(i, i)] = m[(i, i)] + mixed_weight;
    }
    Ok(DensityOperator::new_unchecked(m))
}

/// Diagonal local unitary `Σ_k e^{-iφ'k}|k><k|` for the signal qudit.
pub fn local_phase_unitary<T: Scalar>(d: usize, phi_prime: T) -> ComplexMatrix<T> {
    ComplexMatrix::from_fn(d, d, |r, c| {
        if r == c {
            let t = -phi_prime * T::from_usize(r).unwrap();
            Complex::new(t.cos(), t.sin())
        } else {
            Complex::new(T::zero(), T::zero())
        }
    })
}

/// Which subsystem of a two-qudit state to keep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Signal,
    Idler,
}

/// Reduced density operator of one side of a two-qudit state.
pub fn partial_trace<T: Scalar>(rho: &DensityOperator<T>, side: Side) -> Result<DensityOperator<T>> {
    let d = integer_sqrt(rho.dim()).ok_or_else(|| {
        Error::shape(format!(
            "partial trace needs a perfect-square dimension, got {}",
            rho.dim()
        ))
    })?;
    let m = rho.matrix();
    let reduced = match side {
        Side::Signal => ComplexMatrix::from_fn(d, d, |a, b| {
            (0..d).fold(Complex::new(T::zero(), T::zero()), |acc, k| {
                acc + m[(a * d + k, b * d + k)]
            })
        }),
        Side::Idler => ComplexMatrix::from_fn(d, d, |a, b| {
            (0..d).fold(Complex::new(T::zero(), T::zero()), |acc, k| {
                acc + m[(k * d + a, k * d + b)]
            })
        }),
    };
    Ok(DensityOperator::new_unchecked(reduced))
}

fn integer_sqrt(n: usize) -> Option<usize> {
    let r = (n as f64).sqrt().round() as usize;
    (r * r == n).then_some(r)
}

/// JSON form of a pure state: `{"dim": n, "re": [...], "im": [...]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct PureStateJson {
    dim: usize,
    re: Vec<f64>,
    im: Vec<f64>,
}

impl<T: Scalar> Serialize for PureState<T> {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        PureStateJson {
            dim: self.dim,
            re: self.amplitudes.iter().map(|a| a.re.to_f64().unwrap()).collect(),
            im: self.amplitudes.iter().map(|a| a.im.to_f64().unwrap()).collect(),
        }
        .serialize(serializer)
    }
}

impl<'de, T: Scalar> Deserialize<'de> for PureState<T> {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let json = PureStateJson::deserialize(deserializer)?;
        if json.re.len() != json.dim || json.im.len() != json.dim {
            return Err(D::Error::custom("amplitude arrays do not match declared dim"));
        }
        let amplitudes = json
            .re
            .iter()
            .zip(&json.im)
            .map(|(&r, &i)| {
                Ok(Complex::new(
                    T::from_f64(r).ok_or_else(|| D::Error::custom("amplitude not representable"))?,
                    T::from_f64(i).ok_or_else(|| D::Error::custom("amplitude not representable"))?,
                ))
            })
            .collect::<std::result::Result<Vec<_>, D::Error>>()?;
        PureState::new(amplitudes).map_err(D::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mes_amplitudes_sit_on_the_diagonal() {
        let psi = mes_state::<f64>(4, 0.0).unwrap();
        assert_eq!(psi.dim(), 16);
        for (idx, a) in psi.amplitudes().iter().enumerate() {
            if [0, 5, 10, 15].contains(&idx) {
                assert!((a - Complex::new(0.5, 0.0)).norm() < 1e-15);
            } else {
                assert_eq!(a.norm(), 0.0);
            }
        }

        // d = 2 gives the standard Bell state.
        let bell = mes_state::<f64>(2, 0.0).unwrap();
        let inv = 1.0 / 2.0f64.sqrt();
        assert!((bell.amplitudes()[0].re - inv).abs() < 1e-15);
        assert!((bell.amplitudes()[3].re - inv).abs() < 1e-15);
    }

    #[test]
    fn mes_is_pure_and_reduces_to_maximally_mixed() {
        for phi in [0.0, 0.7, 2.9] {
            let rho = mes_state::<f64>(4, phi).unwrap().density();
            assert!((rho.purity() - 1.0).abs() < 1e-12);
            for side in [Side::Signal, Side::Idler] {
                let red = partial_trace(&rho, side).unwrap();
                let mm = DensityOperator::maximally_mixed(4);
                assert!(red.matrix().max_abs_diff(mm.matrix()) < 1e-12);
            }
        }
    }

    #[test]
    fn depolarized_limits_and_eigenvalues() {
        let mes = mes_state::<f64>(4, 0.0).unwrap().density();
        let full = depolarized(&mes, 1.0).unwrap();
        assert!(full.matrix().max_abs_diff(mes.matrix()) < 1e-15);
        let none = depolarized(&mes, 0.0).unwrap();
        assert!(
            none.matrix()
                .max_abs_diff(DensityOperator::maximally_mixed(16).matrix())
                < 1e-15
        );
        assert!(depolarized(&mes, 1.2).is_err());

        let p = 0.69055;
        let mix = depolarized(&mes, p).unwrap();
        let eig = mix.eigenvalues().unwrap();
        let small = (1.0 - p) / 16.0;
        let large = p + small;
        for &l in &eig[..15] {
            assert!((l - small).abs() < 1e-12);
        }
        assert!((eig[15] - large).abs() < 1e-12);
        assert!((large - 0.70990).abs() < 2e-5);
        assert!((small - 0.019341).abs() < 5e-7);
    }

    #[test]
    fn local_phase_unitary_rotates_mes_phase_away() {
        let d = 4;
        let phi = 0.7;
        let u = local_phase_unitary::<f64>(d, phi);
        // Unitarity.
        let utu = u.adjoint().matmul(&u).unwrap();
        assert!(utu.max_abs_diff(&ComplexMatrix::identity(d)) < 1e-14);
        assert!(local_phase_unitary::<f64>(d, 0.0).max_abs_diff(&ComplexMatrix::identity(d)) < 1e-15);

        let big_u = u.tensor(&ComplexMatrix::identity(d));
        let rho = mes_state::<f64>(d, phi).unwrap().density();
        let rotated = big_u
            .matmul(rho.matrix())
            .unwrap()
            .matmul(&big_u.adjoint())
            .unwrap();
        let target = mes_state::<f64>(d, 0.0).unwrap().density();
        assert!(rotated.max_abs_diff(target.matrix()) < 1e-12);
    }

    #[test]
    fn partial_trace_of_product_state() {
        let mut sa = ComplexMatrix::<f64>::zeros(2, 2);
        sa[(0, 0)] = Complex::new(0.75, 0.0);
        sa[(1, 1)] = Complex::new(0.25, 0.0);
        sa[(0, 1)] = Complex::new(0.1, 0.2);
        sa[(1, 0)] = Complex::new(0.1, -0.2);
        let sb = ComplexMatrix::from_real_diag(&[0.4, 0.6]);
        let joint = DensityOperator::new(sa.tensor(&sb)).unwrap();
        let red_s = partial_trace(&joint, Side::Signal).unwrap();
        assert!(red_s.matrix().max_abs_diff(&sa) < 1e-14);
        let red_i = partial_trace(&joint, Side::Idler).unwrap();
        assert!(red_i.matrix().max_abs_diff(&sb) < 1e-14);
        assert!((red_s.matrix().trace().re - 1.0).abs() < 1e-12);
    }

    #[test]
    fn partial_trace_rejects_non_square_dims() {
        let rho = DensityOperator::<f64>::maximally_mixed(6);
        assert!(matches!(partial_trace(&rho, Side::Signal), Err(Error::Shape(_))));
    }

    #[test]
    fn pure_state_json_round_trip() {
        let psi = mes_state::<f64>(2, 0.3).unwrap();
        let text = serde_json::to_string(&psi).unwrap();
        let back: PureState<f64> = serde_json::from_str(&text).unwrap();
        assert_eq!(psi, back);
    }
}
