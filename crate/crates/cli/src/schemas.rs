//! JSON file formats shared by the subcommands: operator sets, measurement
//! classes, transmittance sets, and calibration histograms. Every file the
//! tool writes carries a top-level `schema_version` field.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use qst_core::counts::CalibrationHistogram;
use qst_core::dedup::MeasurementClass;
use qst_core::density::MatrixJson;
use qst_core::error::{Error, Result};
use qst_core::matrix::ComplexMatrix;
use qst_core::measurement::{
    DetSlot, Detector, JointKey, MeasElement, MeasKey, PhaseSetting, PovmElement, SingleKey,
};
use qst_core::SCHEMA_VERSION;

/// One single-qudit POVM element on the wire:
/// `{detector, slot, theta, re, im}` with row-major nested arrays.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SingleElementJson {
    pub detector: Detector,
    pub slot: usize,
    pub theta: PhaseSetting,
    pub re: Vec<Vec<f64>>,
    pub im: Vec<Vec<f64>>,
}

/// One joint two-qudit element (tensor-product operator, signal first).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JointElementJson {
    pub signal: DetSlot,
    pub idler: DetSlot,
    pub theta_signal: PhaseSetting,
    pub theta_idler: PhaseSetting,
    pub re: Vec<Vec<f64>>,
    pub im: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ElementJson {
    Single(SingleElementJson),
    Joint(JointElementJson),
}

impl ElementJson {
    pub fn from_element(e: &MeasElement<f64>) -> Self {
        let (re, im) = e.op.to_re_im();
        match &e.key {
            MeasKey::Single(k) => ElementJson::Single(SingleElementJson {
                detector: k.detector,
                slot: k.slot,
                theta: k.setting.clone(),
                re,
                im,
            }),
            MeasKey::Joint(k) => ElementJson::Joint(JointElementJson {
                signal: k.signal,
                idler: k.idler,
                theta_signal: k.setting_signal.clone(),
                theta_idler: k.setting_idler.clone(),
                re,
                im,
            }),
        }
    }

    pub fn to_element(&self) -> Result<MeasElement<f64>> {
        let (key, re, im) = match self {
            ElementJson::Single(e) => (
                MeasKey::Single(SingleKey {
                    detector: e.detector,
                    slot: e.slot,
                    setting: e.theta.clone(),
                }),
                &e.re,
                &e.im,
            ),
            ElementJson::Joint(e) => (
                MeasKey::Joint(JointKey {
                    signal: e.signal,
                    idler: e.idler,
                    setting_signal: e.theta_signal.clone(),
                    setting_idler: e.theta_idler.clone(),
                }),
                &e.re,
                &e.im,
            ),
        };
        Ok(MeasElement {
            key,
            op: ComplexMatrix::from_re_im(re, im)?,
        })
    }

    /// Reinterprets a single element as a POVM element (needed to build joint
    /// sets from per-side files).
    pub fn to_povm_element(&self) -> Result<PovmElement<f64>> {
        match self {
            ElementJson::Single(e) => Ok(PovmElement {
                detector: e.detector,
                slot: e.slot,
                setting: e.theta.clone(),
                op: ComplexMatrix::from_re_im(&e.re, &e.im)?,
            }),
            ElementJson::Joint(_) => Err(Error::Validation {
                path: "elements".into(),
                message: "expected single-qudit elements, found joint elements".into(),
            }),
        }
    }
}

/// Operator file: the full POVM element set for a given dimension.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OperatorsFile {
    #[serde(default)]
    pub schema_version: Option<String>,
    pub dim: usize,
    pub elements: Vec<ElementJson>,
}

/// One measurement class on the wire: `{id, members, trace, op}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassJson {
    pub id: usize,
    pub members: Vec<MeasKey>,
    pub trace: f64,
    pub op: MatrixJson,
}

impl ClassJson {
    pub fn from_class(c: &MeasurementClass<f64>) -> Self {
        Self {
            id: c.id,
            members: c.members.clone(),
            trace: c.trace(),
            op: MatrixJson::from_matrix(&c.aggregated_op),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassesFile {
    #[serde(default)]
    pub schema_version: Option<String>,
    pub dim: usize,
    pub classes: Vec<ClassJson>,
}

/// Calibration histogram file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HistogramsFile {
    #[serde(default)]
    pub schema_version: Option<String>,
    pub histograms: Vec<CalibrationHistogram>,
}

/// Attaches the schema version to any serializable payload and renders it as
/// pretty JSON (keys sorted, so identical payloads give identical bytes).
pub fn to_versioned_json<T: Serialize>(payload: &T) -> Result<String> {
    let mut value = serde_json::to_value(payload)?;
    match &mut value {
        Value::Object(map) => {
            map.insert("schema_version".into(), Value::String(SCHEMA_VERSION.into()));
        }
        _ => {
            return Err(Error::Validation {
                path: "output".into(),
                message: "top-level output must be a JSON object".into(),
            })
        }
    }
    let mut text = serde_json::to_string_pretty(&value)?;
    text.push('\n');
    Ok(text)
}
