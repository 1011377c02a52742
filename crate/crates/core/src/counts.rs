//! Photon-count records: expected values from a state and measurement model,
//! seeded Poisson sampling, and the single-pulse calibration procedure for
//! relative transmittances.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::density::DensityOperator;
use crate::error::{Error, Result};
use crate::measurement::{MeasElement, MeasKey, PhaseSetting, PovmElement};
use crate::mzi::{CascadeSpec, TransmittanceSet};
use crate::scalar::Scalar;
use crate::states::Side;

/// Whether a record holds single-detector counts or coincidence counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CountMode {
    Single,
    Coincidence,
}

/// Record metadata: the photon scale `N` of the forward model, the sampling
/// seed when the record was drawn, and an informational duration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountMeta {
    #[serde(rename = "N")]
    pub photons: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration: Option<f64>,
}

impl CountMeta {
    pub fn new(photons: f64) -> Self {
        Self {
            photons,
            seed: None,
            duration: None,
        }
    }
}

/// Measured or simulated photon counts indexed by measurement key.
#[derive(Debug, Clone, PartialEq)]
pub struct CountRecord {
    pub mode: CountMode,
    pub meta: CountMeta,
    entries: BTreeMap<MeasKey, f64>,
}

impl CountRecord {
    pub fn new(mode: CountMode, meta: CountMeta) -> Self {
        Self {
            mode,
            meta,
            entries: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, key: MeasKey, count: f64) {
        self.entries.insert(key, count);
    }

    pub fn get(&self, key: &MeasKey) -> Option<f64> {
        self.entries.get(key).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.entries.values().sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&MeasKey, f64)> {
        self.entries.iter().map(|(k, &v)| (k, v))
    }

    /// Semantic validation used after deserializing from untrusted files.
    pub fn validate(&self) -> Result<()> {
        if !self.meta.photons.is_finite() || self.meta.photons < 0.0 {
            return Err(Error::validation("meta.N", "must be a finite nonnegative number"));
        }
        for (idx, (key, &count)) in self.entries.iter().enumerate() {
            if !count.is_finite() || count < 0.0 {
                return Err(Error::validation(
                    format!("entries[{idx}].count"),
                    format!("count {count} for key {} must be finite and >= 0", key.describe()),
                ));
            }
            let mode_ok = matches!(
                (self.mode, key),
                (CountMode::Single, MeasKey::Single(_)) | (CountMode::Coincidence, MeasKey::Joint(_))
            );
            if !mode_ok {
                return Err(Error::validation(
                    format!("entries[{idx}].key"),
                    "key kind does not match the record mode",
                ));
            }
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct EntryJson {
    key: MeasKey,
    count: f64,
}

#[derive(Serialize, Deserialize)]
struct RecordJson {
    mode: CountMode,
    meta: CountMeta,
    entries: Vec<EntryJson>,
}

impl Serialize for CountRecord {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        RecordJson {
            mode: self.mode,
            meta: self.meta.clone(),
            entries: self
                .entries
                .iter()
                .map(|(k, &v)| EntryJson {
                    key: k.clone(),
                    count: v,
                })
                .collect(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for CountRecord {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let json = RecordJson::deserialize(deserializer)?;
        let mut entries = BTreeMap::new();
        for e in json.entries {
            entries.insert(e.key, e.count);
        }
        Ok(Self {
            mode: json.mode,
            meta: json.meta,
            entries,
        })
    }
}

/// Expected counts `N·Tr(E ρ)` for every element, clamped at zero against
/// negative float residue.
pub fn expected_counts<T: Scalar>(
    rho: &DensityOperator<T>,
    elements: &[PovmElement<T>],
    photons: f64,
) -> Result<CountRecord> {
    let mut record = CountRecord::new(CountMode::Single, CountMeta::new(photons));
    for e in elements {
        if e.op.rows() != rho.dim() {
            return Err(Error::shape(format!(
                "element {} dim {} does not match state dim {}",
                e.key().describe(),
                e.op.rows(),
                rho.dim()
            )));
        }
        let p = e.op.trace_product_re(rho.matrix()).to_f64().unwrap();
        record.insert(e.key(), (photons * p).max(0.0));
    }
    Ok(record)
}

/// Expected coincidence counts `N·Tr((E_s ⊗ E_i) ρ)` for every pairing of a
/// signal element with an idler element.
pub fn expected_coincidences<T: Scalar>(
    rho_joint: &DensityOperator<T>,
    signal: &[PovmElement<T>],
    idler: &[PovmElement<T>],
    photons: f64,
) -> Result<CountRecord> {
    let joint = crate::measurement::joint_elements(signal, idler);
    expected_counts_joint(rho_joint, &joint, photons)
}

/// Expected counts over prebuilt joint elements (avoids re-tensoring when the
/// caller already holds them).
pub fn expected_counts_joint<T: Scalar>(
    rho_joint: &DensityOperator<T>,
    joint: &[MeasElement<T>],
    photons: f64,
) -> Result<CountRecord> {
    let mut record = CountRecord::new(CountMode::Coincidence, CountMeta::new(photons));
    for e in joint {
        if e.op.rows() != rho_joint.dim() {
            return Err(Error::shape(format!(
                "joint element dim {} does not match state dim {}",
                e.op.rows(),
                rho_joint.dim()
            )));
        }
        let p = e.op.trace_product_re(rho_joint.matrix()).to_f64().unwrap();
        record.insert(e.key.clone(), (photons * p).max(0.0));
    }
    Ok(record)
}

fn poisson_draw(rng: &mut ChaCha8Rng, mean: f64) -> f64 {
    if mean <= 0.0 {
        return 0.0;
    }
    let dist = Poisson::new(mean).expect("positive finite mean");
    dist.sample(rng).round()
}

/// Independent Poisson draw per entry, reproducible for a given seed.
///
/// Each entry uses its own generator seeded from the record seed and a stable
/// hash of the key, so sampling is insensitive to entry order and safe to
/// parallelize.
pub fn sample_counts(expected: &CountRecord, seed: u64) -> CountRecord {
    let mut meta = expected.meta.clone();
    meta.seed = Some(seed);
    let mut out = CountRecord::new(expected.mode, meta);
    for (key, mean) in expected.iter() {
        let mut rng = ChaCha8Rng::seed_from_u64(key.stable_hash(seed));
        out.insert(key.clone(), poisson_draw(&mut rng, mean));
    }
    out
}

/// Single counts per detection slot for one detector channel during the
/// single-pulse calibration run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationHistogram {
    /// Detector channel, 1..4: odd channels are the D1 chain, even are D2;
    /// 1/2 belong to the signal analyzer and 3/4 to the idler analyzer.
    pub channel: u8,
    pub counts: Vec<f64>,
}

fn channel_pair(side: Side) -> (u8, u8) {
    match side {
        Side::Signal => (1, 2),
        Side::Idler => (3, 4),
    }
}

/// Noiseless single-pulse histograms for one analyzer: a photon in slot 0 does
/// not interfere, so each slot count is proportional to the product of the
/// chosen-arm transmittances, normalized to `photons` per channel.
///
/// The D1-chain histogram has `2^K` slots (one per delay subset); the D2
/// histogram spans `2^(K-1) + 1` slots with peaks at 0 and `2^(K-1)`.
pub fn expected_calibration<T: Scalar>(
    eta: &TransmittanceSet<T>,
    side: Side,
    photons: f64,
) -> Result<Vec<CalibrationHistogram>> {
    eta.validate()?;
    let spec = CascadeSpec::new(4)?;
    let (c1, c2) = channel_pair(side);

    let num_stages = spec.num_stages();
    let mut d1 = vec![0.0f64; 1 << num_stages];
    for subset in 0..d1.len() {
        let mut w = 1.0f64;
        let mut slot = 0usize;
        for (i, &delay) in spec.stage_delays().iter().enumerate() {
            // Bit i of the subset selects the long arm of stage i.
            if (subset >> i) & 1 == 1 {
                let (ex, _) = eta.stage_etas(delay);
                w *= ex.to_f64().unwrap();
                slot += delay;
            }
        }
        d1[slot] += w;
    }
    let d1_total: f64 = d1.iter().sum();
    for c in &mut d1 {
        *c *= photons / d1_total;
    }

    let largest = spec.stage_delays()[0];
    let (_, ey) = eta.stage_etas(largest);
    let ey = ey.to_f64().unwrap();
    let mut d2 = vec![0.0f64; largest + 1];
    d2[0] = photons / (1.0 + ey);
    d2[largest] = photons * ey / (1.0 + ey);

    Ok(vec![
        CalibrationHistogram {
            channel: c1,
            counts: d1,
        },
        CalibrationHistogram {
            channel: c2,
            counts: d2,
        },
    ])
}

/// Poisson-sampled single-pulse histograms, seeded per channel and slot.
pub fn simulate_calibration<T: Scalar>(
    eta: &TransmittanceSet<T>,
    side: Side,
    photons: f64,
    seed: u64,
) -> Result<Vec<CalibrationHistogram>> {
    let mut histos = expected_calibration(eta, side, photons)?;
    for h in &mut histos {
        for (slot, c) in h.counts.iter_mut().enumerate() {
            let per_slot = seed
                .wrapping_mul(0x9e3779b97f4a7c15)
                .wrapping_add((h.channel as u64) << 32)
                .wrapping_add(slot as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(per_slot);
            *c = poisson_draw(&mut rng, *c);
        }
    }
    Ok(histos)
}

/// Ratio estimators for the relative transmittances of one analyzer from its
/// pair of calibration histograms.
///
/// From the D1-chain histogram, the transmittance of the stage with delay
/// `2^(i-1)` is the ratio of the counts in slots whose delay subset includes
/// that stage to those whose subset does not; for the two-stage cascade these
/// are `(S_2+S_3)/(S_0+S_1)` and `(S_1+S_3)/(S_0+S_2)`. The D2 histogram
/// gives the y-port transmittance of the largest-delay stage as the delayed
/// over the undelayed peak. The terminated-port and detector-ratio entries
/// are not measured by this procedure and are returned at their ideal value 1.
pub fn estimate_transmittances(histograms: &[CalibrationHistogram]) -> Result<TransmittanceSet<f64>> {
    let d1 = histograms
        .iter()
        .find(|h| h.channel % 2 == 1)
        .ok_or_else(|| Error::Calibration("missing D1-chain histogram (odd channel)".into()))?;
    let d2 = histograms
        .iter()
        .find(|h| h.channel % 2 == 0)
        .ok_or_else(|| Error::Calibration("missing D2 histogram (even channel)".into()))?;

    let slots = d1.counts.len();
    if !slots.is_power_of_two() || slots < 2 {
        return Err(Error::Calibration(format!(
            "D1-chain histogram must cover a power-of-two slot count >= 2, got {slots}"
        )));
    }
    let num_stages = slots.trailing_zeros() as usize;
    if num_stages > 2 {
        return Err(Error::Calibration(
            "transmittance estimation covers cascades of at most two stages".into(),
        ));
    }

    let mut set = TransmittanceSet::<f64>::ideal();
    for stage in 0..num_stages {
        // Stage with delay 2^stage corresponds to bit `stage` of the slot index.
        let (mut with, mut without) = (0.0f64, 0.0f64);
        for (slot, &c) in d1.counts.iter().enumerate() {
            if (slot >> stage) & 1 == 1 {
                with += c;
            } else {
                without += c;
            }
        }
        if without <= 0.0 {
            return Err(Error::Calibration(format!(
                "zero denominator estimating the delay-{} stage transmittance",
                1 << stage
            )));
        }
        let ratio = with / without;
        match 1 << stage {
            1 => set.eta_1x = ratio,
            2 => set.eta_2x = ratio,
            _ => unreachable!(),
        }
    }

    let largest = 1usize << (num_stages.max(1) - 1);
    let short = *d2.counts.first().ok_or_else(|| {
        Error::Calibration("D2 histogram is empty".into())
    })?;
    let long = d2.counts.get(largest).copied().unwrap_or(0.0);
    if short <= 0.0 {
        return Err(Error::Calibration(
            "zero denominator estimating the D2-port transmittance".into(),
        ));
    }
    let ratio = long / short;
    match largest {
        1 => set.eta_1y = ratio,
        2 => set.eta_2y = ratio,
        _ => unreachable!(),
    }
    Ok(set)
}

/// Detector-path transmittance ratio from total single-count rates.
///
/// The raw D1/D2 rate ratio is corrected by the ideal analyzer's acceptances
/// (the summed traces of the ideal POVM elements per detector), so an ideal
/// analyzer with matched detectors yields exactly 1.
pub fn estimate_detector_ratio(d1_rate: f64, d2_rate: f64, spec: &CascadeSpec) -> Result<f64> {
    if !(d1_rate > 0.0) || !(d2_rate > 0.0) {
        return Err(Error::Calibration(
            "detector rates must be positive to estimate the detector ratio".into(),
        ));
    }
    let setting = PhaseSetting::new(vec![0.0; spec.num_stages()]);
    let ideal = TransmittanceSet::<f64>::ideal();
    let elements = crate::mzi::povm_elements(spec, &setting, &ideal);
    let (mut acc_d1, mut acc_d2) = (0.0f64, 0.0f64);
    for e in &elements {
        match e.detector {
            crate::measurement::Detector::D1 => acc_d1 += e.op.trace().re,
            crate::measurement::Detector::D2 => acc_d2 += e.op.trace().re,
        }
    }
    Ok((d1_rate / d2_rate) * (acc_d2 / acc_d1))
}
