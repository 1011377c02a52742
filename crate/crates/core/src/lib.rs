//! Quantum state tomography for time-bin qudits measured through cascaded
//! delay Mach-Zehnder interferometers.
//!
//! The crate builds the measurement model of such a cascade (one delay
//! interferometer per bit of the dimension, phases switched between 0 and
//! π/2), simulates photon-count data with Poisson statistics, reconstructs
//! density operators by linear inversion or maximum-likelihood estimation
//! over a triangular-factor parametrization, and evaluates reconstructions
//! with standard figures of merit (fidelity, trace distance, entropies).
//!
//! All numerical modules are generic over the floating-point scalar via
//! [`scalar::Scalar`]; `f64` aliases for the main types live at the crate
//! root. Count records, calibration data, and pipeline configuration are
//! plain `f64` data structures with stable JSON encodings.

pub mod counts;
pub mod dedup;
pub mod density;
pub mod error;
pub mod gellmann;
pub mod linalg;
pub mod matrix;
pub mod measurement;
pub mod metrics;
pub mod mzi;
pub mod optim;
pub mod pipeline;
pub mod reconstruct;
pub mod scalar;
pub mod states;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Version tag embedded in every JSON file the tools write.
pub const SCHEMA_VERSION: &str = "1";

pub type ComplexMatrix64 = matrix::ComplexMatrix<f64>;
pub type DensityOperator64 = density::DensityOperator<f64>;
pub type PureState64 = states::PureState<f64>;
pub type GellMannBasis64 = gellmann::GellMannBasis<f64>;
pub type DesignMatrix64 = gellmann::DesignMatrix<f64>;
pub type TransmittanceSet64 = mzi::TransmittanceSet<f64>;
pub type PovmElement64 = measurement::PovmElement<f64>;
pub type MeasElement64 = measurement::MeasElement<f64>;
pub type MeasurementClass64 = dedup::MeasurementClass<f64>;
pub type TriangularFactor64 = reconstruct::TriangularFactor<f64>;
pub type ReconstructionResult64 = reconstruct::ReconstructionResult<f64>;
pub type MeritReport64 = metrics::MeritReport<f64>;
