//! End-to-end tomography driver: build the measurement model, simulate (or
//! ingest) counts, deduplicate, reconstruct, and evaluate — once per trial,
//! with deterministic per-trial seeds and a mean/std summary across trials.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::counts::{expected_counts_joint, sample_counts, CountRecord};
use crate::dedup::{aggregate_counts, build_classes, MeasurementClass, CLASS_TOL};
use crate::density::DensityOperator;
use crate::error::{Error, Result};
use crate::measurement::{joint_elements, MeasElement, PhaseSetting};
use crate::metrics::{fidelity, merit_report, MeritReport, MeritTarget};
use crate::mzi::{povm_elements, CascadeSpec, TransmittanceSet};
use crate::reconstruct::{linear_inversion, mle_reconstruct, Method, MleConfig, ReconstructionResult};
use crate::states::{depolarized, mes_state};

/// Parses an angle token: a float in radians or a simple multiple of pi
/// (`pi`, `pi/2`, `3pi/2`, `-pi/4`, ...).
pub fn parse_angle(token: &str) -> Result<f64> {
    let t = token.trim();
    if let Ok(v) = t.parse::<f64>() {
        return Ok(v);
    }
    let lower = t.to_ascii_lowercase();
    if let Some(pos) = lower.find("pi") {
        let (pre, post) = (&lower[..pos], &lower[pos + 2..]);
        let mult: f64 = match pre {
            "" | "+" => 1.0,
            "-" => -1.0,
            _ => pre
                .parse()
                .map_err(|_| Error::validation("angle", format!("bad multiplier in {t:?}")))?,
        };
        let div: f64 = match post {
            "" => 1.0,
            _ => post
                .strip_prefix('/')
                .and_then(|d| d.parse().ok())
                .ok_or_else(|| Error::validation("angle", format!("bad divisor in {t:?}")))?,
        };
        if div == 0.0 {
            return Err(Error::validation("angle", "division by zero"));
        }
        return Ok(mult * std::f64::consts::PI / div);
    }
    Err(Error::validation("angle", format!("cannot parse {t:?}")))
}

/// Parses a settings list: the word `canonical`, or semicolon-separated
/// settings of comma-separated angles (largest-delay stage first).
pub fn parse_settings(text: &str, num_stages: usize) -> Result<Vec<PhaseSetting>> {
    if text.trim().eq_ignore_ascii_case("canonical") {
        return Ok(PhaseSetting::canonical_set(num_stages));
    }
    let mut out = Vec::new();
    for (i, group) in text.split(';').enumerate() {
        let thetas = group
            .split(',')
            .map(parse_angle)
            .collect::<Result<Vec<_>>>()?;
        if thetas.len() != num_stages {
            return Err(Error::validation(
                format!("settings[{i}]"),
                format!("expected {num_stages} angles, got {}", thetas.len()),
            ));
        }
        out.push(PhaseSetting::new(thetas));
    }
    if out.is_empty() {
        return Err(Error::validation("settings", "no settings given"));
    }
    Ok(out)
}

/// Which state the pipeline simulates: a built-in family or a density
/// operator loaded from a file.
#[derive(Debug, Clone, PartialEq)]
pub enum StateSpec {
    /// `mes:<d>:<phi>` — maximally entangled two-qudit state.
    Mes { dim: usize, phi: f64 },
    /// `mix:<p>` or `mix:<d>:<p>` — depolarized entangled state (default d = 4).
    Mix { dim: usize, p: f64 },
    /// Path to a density-operator JSON file.
    File(String),
}

impl StateSpec {
    /// Local qudit dimension of the built-in families, if known without I/O.
    pub fn local_dim(&self) -> Option<usize> {
        match self {
            StateSpec::Mes { dim, .. } | StateSpec::Mix { dim, .. } => Some(*dim),
            StateSpec::File(_) => None,
        }
    }

    /// Materializes the two-qudit state for local dimension `d`.
    pub fn realize(&self, d: usize) -> Result<DensityOperator<f64>> {
        match self {
            StateSpec::Mes { dim, phi } => {
                if *dim != d {
                    return Err(Error::shape(format!(
                        "state is for local dim {dim} but the cascade has dim {d}"
                    )));
                }
                Ok(mes_state::<f64>(*dim, *phi)?.density())
            }
            StateSpec::Mix { dim, p } => {
                if *dim != d {
                    return Err(Error::shape(format!(
                        "state is for local dim {dim} but the cascade has dim {d}"
                    )));
                }
                depolarized(&mes_state::<f64>(*dim, 0.0)?.density(), *p)
            }
            StateSpec::File(path) => {
                let text = std::fs::read_to_string(path)?;
                let rho: DensityOperator<f64> = serde_json::from_str(&text)?;
                if rho.dim() != d * d {
                    return Err(Error::shape(format!(
                        "state file has dim {}, expected {} for local dim {d}",
                        rho.dim(),
                        d * d
                    )));
                }
                Ok(rho)
            }
        }
    }
}

impl FromStr for StateSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        match parts.as_slice() {
            ["mes", d, phi] => Ok(StateSpec::Mes {
                dim: d
                    .parse()
                    .map_err(|_| Error::validation("state", format!("bad dimension in {s:?}")))?,
                phi: parse_angle(phi)?,
            }),
            ["mix", p] => Ok(StateSpec::Mix {
                dim: 4,
                p: p
                    .parse()
                    .map_err(|_| Error::validation("state", format!("bad probability in {s:?}")))?,
            }),
            ["mix", d, p] => Ok(StateSpec::Mix {
                dim: d
                    .parse()
                    .map_err(|_| Error::validation("state", format!("bad dimension in {s:?}")))?,
                p: p
                    .parse()
                    .map_err(|_| Error::validation("state", format!("bad probability in {s:?}")))?,
            }),
            _ => Ok(StateSpec::File(s.to_string())),
        }
    }
}

impl fmt::Display for StateSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StateSpec::Mes { dim, phi } => write!(f, "mes:{dim}:{phi}"),
            StateSpec::Mix { dim, p } => write!(f, "mix:{dim}:{p}"),
            StateSpec::File(path) => write!(f, "{path}"),
        }
    }
}

impl Serialize for StateSpec {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for StateSpec {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let s = String::deserialize(deserializer)?;
        StateSpec::from_str(&s).map_err(D::Error::custom)
    }
}

fn default_trials() -> usize {
    1
}

/// Full pipeline configuration. Empty settings lists mean the canonical set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub dim: usize,
    pub state: StateSpec,
    #[serde(default = "TransmittanceSet::ideal")]
    pub eta_signal: TransmittanceSet<f64>,
    #[serde(default = "TransmittanceSet::ideal")]
    pub eta_idler: TransmittanceSet<f64>,
    #[serde(default)]
    pub settings_signal: Vec<PhaseSetting>,
    #[serde(default)]
    pub settings_idler: Vec<PhaseSetting>,
    /// Photon pairs per joint measurement setting.
    pub photons: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_trials")]
    pub trials: usize,
    /// Use exact expected counts instead of Poisson samples.
    #[serde(default)]
    pub noiseless: bool,
    #[serde(default = "default_method")]
    pub method: Method,
    /// Worker threads for trials; 0 uses the global default. Accepted from
    /// config files but never echoed into reports: results are identical for
    /// any worker count.
    #[serde(default, skip_serializing)]
    pub jobs: usize,
}

fn default_method() -> Method {
    Method::Mle
}

/// Deterministic seed for one trial, derived from the base seed.
pub fn derive_trial_seed(base: u64, trial: usize) -> u64 {
    let mut h = 0xcbf29ce484222325u64 ^ base.wrapping_mul(0x9e3779b97f4a7c15);
    for b in (trial as u64).to_le_bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Outcome of one trial: reconstruction diagnostics plus figures of merit.
/// Metrics are absent when the estimate is unphysical (possible for the
/// linear method only).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialReport {
    pub trial: usize,
    pub seed: Option<u64>,
    pub total_counts: f64,
    #[serde(rename = "N_hat")]
    pub n_hat: f64,
    pub likelihood: f64,
    pub iterations: usize,
    pub converged: bool,
    pub psd: bool,
    pub min_eigenvalue: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fidelity_truth: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub merit: Option<MeritReport<f64>>,
}

/// A trial that failed, with the pipeline stage that failed it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialFailure {
    pub trial: usize,
    pub stage: String,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SummaryStat {
    pub mean: f64,
    pub std: f64,
}

impl SummaryStat {
    fn over(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Some(Self { mean, std })
    }
}

/// Mean ± sample standard deviation of each metric across physical trials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineSummary {
    pub trials_total: usize,
    pub trials_ok: usize,
    pub all_converged: bool,
    pub all_physical: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fidelity_truth: Option<SummaryStat>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fidelity: Option<SummaryStat>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trace_distance: Option<SummaryStat>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub linear_entropy: Option<SummaryStat>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub von_neumann_entropy: Option<SummaryStat>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub conditional_entropy_signal: Option<SummaryStat>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub conditional_entropy_idler: Option<SummaryStat>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_hat: Option<SummaryStat>,
}

/// Full pipeline output: per-trial reports (with reconstructed states),
/// failures, and the cross-trial summary.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineReport {
    pub config: PipelineConfig,
    pub trials: Vec<TrialReport>,
    /// Reconstructed states, aligned with `trials`.
    pub states: Vec<ReconstructionResult<f64>>,
    pub failures: Vec<TrialFailure>,
    pub summary: PipelineSummary,
}

struct TrialOutcome {
    report: TrialReport,
    state: ReconstructionResult<f64>,
}

fn run_trial(
    trial: usize,
    config: &PipelineConfig,
    expected: &CountRecord,
    classes: &[MeasurementClass<f64>],
    truth: &DensityOperator<f64>,
) -> std::result::Result<TrialOutcome, TrialFailure> {
    let fail = |stage: &str, e: Error| TrialFailure {
        trial,
        stage: stage.to_string(),
        message: e.to_string(),
    };

    let (record, seed) = if config.noiseless {
        (expected.clone(), None)
    } else {
        let seed = derive_trial_seed(config.seed, trial);
        (sample_counts(expected, seed), Some(seed))
    };
    let n_m = aggregate_counts(classes, &record).map_err(|e| fail("aggregate", e))?;

    let result = match config.method {
        Method::Mle => mle_reconstruct(&n_m, classes, None, &MleConfig::default()),
        Method::Linear => crate::gellmann::GellMannBasis::new(classes[0].aggregated_op.rows())
            .and_then(|b| linear_inversion(&n_m, classes, &b)),
    }
    .map_err(|e| fail("reconstruct", e))?;

    let (fidelity_truth, merit) = if result.psd {
        let rho = result.density().map_err(|e| fail("reconstruct", e))?;
        let f = fidelity(&rho, truth).map_err(|e| fail("metrics", e))?;
        let m = merit_report(&rho, &MeritTarget::MesAuto).map_err(|e| fail("metrics", e))?;
        (Some(f), Some(m))
    } else {
        (None, None)
    };

    Ok(TrialOutcome {
        report: TrialReport {
            trial,
            seed,
            total_counts: record.total(),
            n_hat: result.n_hat,
            likelihood: result.likelihood,
            iterations: result.iterations,
            converged: result.converged,
            psd: result.psd,
            min_eigenvalue: result.min_eigenvalue,
            fidelity_truth,
            merit,
        },
        state: result,
    })
}

/// Runs the full pipeline. Trials run in parallel (bounded by `config.jobs`)
/// with deterministic per-trial seeds, so the report is identical for
/// identical configurations regardless of thread count.
pub fn run_pipeline(config: &PipelineConfig) -> Result<PipelineReport> {
    if config.dim < 2 {
        return Err(Error::domain("pipeline dimension must be >= 2"));
    }
    if config.trials == 0 {
        return Err(Error::domain("pipeline needs at least one trial"));
    }
    if !(config.photons > 0.0) {
        return Err(Error::domain("photons per setting must be positive"));
    }
    config.eta_signal.validate()?;
    config.eta_idler.validate()?;

    let spec = CascadeSpec::new(config.dim)?;
    let canonical = PhaseSetting::canonical_set(spec.num_stages());
    let settings_signal = if config.settings_signal.is_empty() {
        canonical.clone()
    } else {
        config.settings_signal.clone()
    };
    let settings_idler = if config.settings_idler.is_empty() {
        canonical
    } else {
        config.settings_idler.clone()
    };

    let mut signal_elements = Vec::new();
    for s in &settings_signal {
        signal_elements.extend(povm_elements::<f64>(&spec, s, &config.eta_signal));
    }
    let mut idler_elements = Vec::new();
    for s in &settings_idler {
        idler_elements.extend(povm_elements::<f64>(&spec, s, &config.eta_idler));
    }
    let joint: Vec<MeasElement<f64>> = joint_elements(&signal_elements, &idler_elements);
    let classes = build_classes(&joint, CLASS_TOL)?.classes;

    let truth = config.state.realize(config.dim)?;
    let expected = expected_counts_joint(&truth, &joint, config.photons)?;

    // Rank-check the measurement set once up front: a deficient set would
    // fail (linear) or silently under-constrain (MLE) every trial.
    let joint_dim = config.dim * config.dim;
    let basis = crate::gellmann::GellMannBasis::<f64>::new(joint_dim)?;
    let ops: Vec<_> = classes.iter().map(|c| c.aggregated_op.clone()).collect();
    let design = crate::gellmann::design_matrix(&ops, &basis)?;

    let outcomes = if design.rank < joint_dim * joint_dim {
        let err = Error::Underdetermined {
            rank: design.rank,
            needed: joint_dim * joint_dim,
        };
        (0..config.trials)
            .map(|trial| {
                Err(TrialFailure {
                    trial,
                    stage: "reconstruct".to_string(),
                    message: err.to_string(),
                })
            })
            .collect()
    } else {
        let run_all = || -> Vec<std::result::Result<TrialOutcome, TrialFailure>> {
            (0..config.trials)
                .into_par_iter()
                .map(|t| run_trial(t, config, &expected, &classes, &truth))
                .collect()
        };
        if config.jobs > 0 {
            rayon::ThreadPoolBuilder::new()
                .num_threads(config.jobs)
                .build()
                .map_err(|e| Error::Domain(format!("cannot build worker pool: {e}")))?
                .install(run_all)
        } else {
            run_all()
        }
    };

    let mut trials = Vec::new();
    let mut states = Vec::new();
    let mut failures = Vec::new();
    for outcome in outcomes {
        match outcome {
            Ok(o) => {
                trials.push(o.report);
                states.push(o.state);
            }
            Err(f) => failures.push(f),
        }
    }

    let collect = |f: &dyn Fn(&TrialReport) -> Option<f64>| -> Vec<f64> {
        trials.iter().filter_map(f).collect()
    };
    let summary = PipelineSummary {
        trials_total: config.trials,
        trials_ok: trials.len(),
        all_converged: !trials.is_empty() && trials.iter().all(|t| t.converged),
        all_physical: !trials.is_empty() && trials.iter().all(|t| t.psd),
        fidelity_truth: SummaryStat::over(&collect(&|t| t.fidelity_truth)),
        fidelity: SummaryStat::over(&collect(&|t| t.merit.as_ref().map(|m| m.fidelity))),
        trace_distance: SummaryStat::over(&collect(&|t| t.merit.as_ref().map(|m| m.trace_distance))),
        linear_entropy: SummaryStat::over(&collect(&|t| t.merit.as_ref().map(|m| m.linear_entropy))),
        von_neumann_entropy: SummaryStat::over(
            &collect(&|t| t.merit.as_ref().map(|m| m.von_neumann_entropy)),
        ),
        conditional_entropy_signal: SummaryStat::over(
            &collect(&|t| t.merit.as_ref().map(|m| m.conditional_entropy_signal)),
        ),
        conditional_entropy_idler: SummaryStat::over(
            &collect(&|t| t.merit.as_ref().map(|m| m.conditional_entropy_idler)),
        ),
        n_hat: SummaryStat::over(&collect(&|t| Some(t.n_hat))),
    };

    Ok(PipelineReport {
        config: config.clone(),
        trials,
        states,
        failures,
        summary,
    })
}

/// Loads and validates a count record from a JSON file.
pub fn ingest_counts(path: &Path) -> Result<CountRecord> {
    let text = std::fs::read_to_string(path)?;
    let record: CountRecord = serde_json::from_str(&text)?;
    record.validate()?;
    Ok(record)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> PipelineConfig {
        PipelineConfig {
            dim: 2,
            state: StateSpec::Mes { dim: 2, phi: 0.0 },
            eta_signal: TransmittanceSet::ideal(),
            eta_idler: TransmittanceSet::ideal(),
            settings_signal: Vec::new(),
            settings_idler: Vec::new(),
            photons: 2e4,
            seed: 7,
            trials: 2,
            noiseless: false,
            method: Method::Mle,
            jobs: 1,
        }
    }

    #[test]
    fn angle_and_settings_parsing() {
        assert_eq!(parse_angle("0").unwrap(), 0.0);
        assert!((parse_angle("pi/2").unwrap() - std::f64::consts::FRAC_PI_2).abs() < 1e-15);
        assert!((parse_angle("3pi/2").unwrap() - 3.0 * std::f64::consts::FRAC_PI_2).abs() < 1e-15);
        assert!((parse_angle("-pi").unwrap() + std::f64::consts::PI).abs() < 1e-15);
        assert!((parse_angle("1.25").unwrap() - 1.25).abs() < 1e-15);
        assert!(parse_angle("nonsense").is_err());

        let s = parse_settings("canonical", 2).unwrap();
        assert_eq!(s.len(), 4);
        let s = parse_settings("0,0;pi/2,0", 2).unwrap();
        assert_eq!(s.len(), 2);
        assert!(parse_settings("0;0,0", 2).is_err());
    }

    #[test]
    fn state_spec_round_trip() {
        for text in ["mes:4:0", "mix:4:0.96", "some/file.json"] {
            let spec = StateSpec::from_str(text).unwrap();
            let json = serde_json::to_string(&spec).unwrap();
            let back: StateSpec = serde_json::from_str(&json).unwrap();
            assert_eq!(spec, back);
        }
        assert_eq!(
            StateSpec::from_str("mix:0.9").unwrap(),
            StateSpec::Mix { dim: 4, p: 0.9 }
        );
    }

    #[test]
    fn pipeline_is_deterministic_across_thread_counts() {
        let mut config = small_config();
        let a = run_pipeline(&config).unwrap();
        config.jobs = 2;
        let b = run_pipeline(&config).unwrap();
        let (ja, jb) = (
            serde_json::to_string(&a.trials).unwrap(),
            serde_json::to_string(&b.trials).unwrap(),
        );
        assert_eq!(ja, jb);
        assert_eq!(a.failures.len(), 0);
        assert!(a.summary.all_physical);
    }

    #[test]
    fn identical_seeds_give_identical_trials() {
        let mut config = small_config();
        config.trials = 2;
        // Trials differ from each other...
        let report = run_pipeline(&config).unwrap();
        assert_ne!(report.trials[0].total_counts, report.trials[1].total_counts);
        // ...but the same config reruns identically.
        let again = run_pipeline(&config).unwrap();
        assert_eq!(
            serde_json::to_string(&report.trials).unwrap(),
            serde_json::to_string(&again.trials).unwrap()
        );
    }

    #[test]
    fn noiseless_small_pipeline_reconstructs_exactly() {
        let mut config = small_config();
        config.noiseless = true;
        config.trials = 1;
        let report = run_pipeline(&config).unwrap();
        assert_eq!(report.trials.len(), 1);
        let f = report.trials[0].fidelity_truth.unwrap();
        assert!(1.0 - f < 1e-4, "infidelity {} too large", 1.0 - f);
        assert!(report.trials[0].merit.is_some());
    }

    #[test]
    fn noiseless_two_qudit_pipeline_reconstructs_pure_builtins() {
        let config = PipelineConfig {
            dim: 4,
            state: StateSpec::Mes { dim: 4, phi: 0.7 },
            eta_signal: TransmittanceSet::ideal(),
            eta_idler: TransmittanceSet::ideal(),
            settings_signal: Vec::new(),
            settings_idler: Vec::new(),
            photons: 25_000.0,
            seed: 0,
            trials: 1,
            noiseless: true,
            method: Method::Mle,
            jobs: 1,
        };
        let report = run_pipeline(&config).unwrap();
        let f = report.trials[0].fidelity_truth.unwrap();
        assert!(1.0 - f <= 1e-4, "infidelity {}", 1.0 - f);
    }

    #[test]
    fn underdetermined_settings_abort_trials_with_stage() {
        let mut config = small_config();
        // A single setting cannot determine the two-qudit state.
        config.settings_signal = vec![PhaseSetting::new(vec![0.0])];
        config.settings_idler = vec![PhaseSetting::new(vec![0.0])];
        let report = run_pipeline(&config).unwrap();
        assert!(report.trials.is_empty());
        assert_eq!(report.failures.len(), config.trials);
        assert_eq!(report.failures[0].stage, "reconstruct");
    }

    #[test]
    fn ingest_rejects_bad_records() {
        let dir = std::env::temp_dir().join(format!("qst-ingest-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bad.json");
        std::fs::write(&path, "{\"mode\": \"single\"").unwrap();
        assert!(matches!(ingest_counts(&path), Err(Error::Json(_))));

        std::fs::write(
            &path,
            r#"{"mode":"single","meta":{"N":10.0},"entries":[{"key":{"detector":"D1","slot":0,"theta":[0.0]},"count":-3.0}]}"#,
        )
        .unwrap();
        assert!(matches!(ingest_counts(&path), Err(Error::Validation { .. })));

        std::fs::write(
            &path,
            r#"{"mode":"single","meta":{"N":10.0},"entries":[{"key":{"detector":"D1","slot":0,"theta":[0.0]},"count":3.0}]}"#,
        )
        .unwrap();
        let record = ingest_counts(&path).unwrap();
        assert_eq!(record.len(), 1);
        std::fs::remove_dir_all(&dir).ok();
    }
}
