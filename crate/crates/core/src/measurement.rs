//! Measurement bookkeeping: detectors, phase settings, the keys that index
//! photon counts, and POVM elements tagged with those keys.
//!
//! Keys order and compare by value (angles via total ordering), so records
//! and classes built from them are deterministic regardless of construction
//! order.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::matrix::ComplexMatrix;
use crate::scalar::Scalar;

/// Photon detector at the end of a cascade path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Detector {
    D1,
    D2,
}

impl fmt::Display for Detector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Detector::D1 => write!(f, "D1"),
            Detector::D2 => write!(f, "D2"),
        }
    }
}

/// Interferometer phase setting: one angle per stage, largest delay first.
///
/// Angles are normalized into `[0, 2π)`. The canonical tomography set draws
/// each angle from `{0, π/2}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PhaseSetting {
    thetas: Vec<f64>,
}

impl PhaseSetting {
    pub fn new(thetas: Vec<f64>) -> Self {
        let tau = std::f64::consts::TAU;
        Self {
            // `+ 0.0` maps -0.0 to +0.0 so keys compare cleanly.
            thetas: thetas.iter().map(|t| t.rem_euclid(tau) + 0.0).collect(),
        }
    }

    /// All `2^num_stages` canonical settings, each angle in `{0, π/2}`.
    ///
    /// Ordered so the phase of the smallest-delay stage varies slowest; for
    /// two stages this is (θ1,θ2) = (0,0), (0,π/2), (π/2,0), (π/2,π/2).
    pub fn canonical_set(num_stages: usize) -> Vec<Self> {
        let half_pi = std::f64::consts::FRAC_PI_2;
        (0..(1usize << num_stages))
            .map(|m| {
                Self::new(
                    (0..num_stages)
                        .map(|i| if (m >> i) & 1 == 1 { half_pi } else { 0.0 })
                        .collect(),
                )
            })
            .collect()
    }

    pub fn num_stages(&self) -> usize {
        self.thetas.len()
    }

    /// Angle of the stage at `index` in propagation order (largest delay first).
    pub fn theta(&self, index: usize) -> f64 {
        self.thetas[index]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.thetas
    }

    fn total_cmp(&self, other: &Self) -> Ordering {
        self.thetas
            .len()
            .cmp(&other.thetas.len())
            .then_with(|| {
                for (a, b) in self.thetas.iter().zip(&other.thetas) {
                    let ord = a.total_cmp(b);
                    if ord != Ordering::Equal {
                        return ord;
                    }
                }
                Ordering::Equal
            })
    }
}

impl PartialEq for PhaseSetting {
    fn eq(&self, other: &Self) -> bool {
        self.total_cmp(other) == Ordering::Equal
    }
}

impl Eq for PhaseSetting {}

impl PartialOrd for PhaseSetting {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.total_cmp(other))
    }
}

impl Ord for PhaseSetting {
    fn cmp(&self, other: &Self) -> Ordering {
        self.total_cmp(other)
    }
}

/// Key of a single-qudit measurement outcome.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SingleKey {
    pub detector: Detector,
    pub slot: usize,
    #[serde(rename = "theta")]
    pub setting: PhaseSetting,
}

/// Detector/slot half of a coincidence key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DetSlot {
    pub detector: Detector,
    pub slot: usize,
}

/// Key of a two-qudit coincidence outcome (signal side first).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct JointKey {
    pub signal: DetSlot,
    pub idler: DetSlot,
    #[serde(rename = "theta_signal")]
    pub setting_signal: PhaseSetting,
    #[serde(rename = "theta_idler")]
    pub setting_idler: PhaseSetting,
}

/// Measurement key: either a single-qudit outcome or a coincidence pair.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MeasKey {
    Single(SingleKey),
    Joint(JointKey),
}

impl MeasKey {
    /// Stable 64-bit hash (FNV-1a over a canonical byte encoding); used to
    /// derive independent, order-insensitive sampling seeds per key.
    pub fn stable_hash(&self, seed: u64) -> u64 {
        let mut h = 0xcbf29ce484222325u64 ^ seed.wrapping_mul(0x9e3779b97f4a7c15);
        let mut eat = |bytes: &[u8]| {
            for &b in bytes {
                h ^= b as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
        };
        let eat_setting = |h: &mut u64, s: &PhaseSetting| {
            for t in s.as_slice() {
                let bits = t.to_bits();
                for b in bits.to_le_bytes() {
                    *h ^= b as u64;
                    *h = h.wrapping_mul(0x100000001b3);
                }
            }
        };
        match self {
            MeasKey::Single(k) => {
                eat(&[1u8, k.detector as u8]);
                eat(&(k.slot as u64).to_le_bytes());
                eat_setting(&mut h, &k.setting);
            }
            MeasKey::Joint(k) => {
                eat(&[2u8, k.signal.detector as u8]);
                eat(&(k.signal.slot as u64).to_le_bytes());
                eat(&[k.idler.detector as u8]);
                eat(&(k.idler.slot as u64).to_le_bytes());
                eat_setting(&mut h, &k.setting_signal);
                eat_setting(&mut h, &k.setting_idler);
            }
        }
        h
    }

    /// Compact human-readable rendering for error messages.
    pub fn describe(&self) -> String {
        match self {
            MeasKey::Single(k) => format!(
                "{} t_{} theta={:?}",
                k.detector,
                k.slot,
                k.setting.as_slice()
            ),
            MeasKey::Joint(k) => format!(
                "({} t_{}, {} t_{}) theta_s={:?} theta_i={:?}",
                k.signal.detector,
                k.signal.slot,
                k.idler.detector,
                k.idler.slot,
                k.setting_signal.as_slice(),
                k.setting_idler.as_slice()
            ),
        }
    }
}

/// One POVM element of the single-qudit cascade model.
#[derive(Debug, Clone)]
pub struct PovmElement<T> {
    pub detector: Detector,
    pub slot: usize,
    pub setting: PhaseSetting,
    /// d×d Hermitian PSD operator.
    pub op: ComplexMatrix<T>,
}

impl<T: Scalar> PovmElement<T> {
    pub fn key(&self) -> MeasKey {
        MeasKey::Single(SingleKey {
            detector: self.detector,
            slot: self.slot,
            setting: self.setting.clone(),
        })
    }
}

/// A keyed positive operator, the common currency of deduplication, design
/// matrices, and count prediction. Joint two-qudit elements use the tensor
/// product operator with the signal factor first.
#[derive(Debug, Clone)]
pub struct MeasElement<T> {
    pub key: MeasKey,
    pub op: ComplexMatrix<T>,
}

impl<T: Scalar> From<PovmElement<T>> for MeasElement<T> {
    fn from(e: PovmElement<T>) -> Self {
        let key = e.key();
        Self { key, op: e.op }
    }
}

impl<T: Scalar> MeasElement<T> {
    pub fn from_povm(e: &PovmElement<T>) -> Self {
        Self {
            key: e.key(),
            op: e.op.clone(),
        }
    }
}

/// Builds the joint two-qudit element set: every pairing of a signal element
/// with an idler element, with the tensor-product operator (signal first).
pub fn joint_elements<T: Scalar>(
    signal: &[PovmElement<T>],
    idler: &[PovmElement<T>],
) -> Vec<MeasElement<T>> {
    let mut out = Vec::with_capacity(signal.len() * idler.len());
    for s in signal {
        for i in idler {
            out.push(MeasElement {
                key: MeasKey::Joint(JointKey {
                    signal: DetSlot {
                        detector: s.detector,
                        slot: s.slot,
                    },
                    idler: DetSlot {
                        detector: i.detector,
                        slot: i.slot,
                    },
                    setting_signal: s.setting.clone(),
                    setting_idler: i.setting.clone(),
                }),
                op: s.op.tensor(&i.op),
            });
        }
    }
    out
}
