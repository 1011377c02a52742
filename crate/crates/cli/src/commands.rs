//! Implementations of the six subcommands.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use qst_core::counts::{
    estimate_detector_ratio, estimate_transmittances, expected_calibration, expected_counts,
    expected_counts_joint, sample_counts, simulate_calibration,
};
use qst_core::dedup::{aggregate_counts, build_classes, MeasurementClass, CLASS_TOL};
use qst_core::density::DensityOperator;
use qst_core::error::{Error, Result};
use qst_core::gellmann::GellMannBasis;
use qst_core::linalg::{eig_hermitian, factor_rtr};
use qst_core::measurement::{joint_elements, MeasElement, PovmElement};
use qst_core::metrics::{cglmp_critical_table, merit_report, MeritReport, MeritTarget};
use qst_core::mzi::{povm_elements, CascadeSpec, TransmittanceSet};
use qst_core::pipeline::{
    ingest_counts, parse_settings, run_pipeline, PipelineConfig, StateSpec,
};
use qst_core::reconstruct::{
    linear_inversion, mle_reconstruct, Method, MleConfig, ReconstructionResult, TriangularFactor,
};
use qst_core::states::Side;

use crate::schemas::{
    to_versioned_json, ClassJson, ClassesFile, ElementJson, HistogramsFile, OperatorsFile,
};

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn write_output(out: Option<&PathBuf>, text: &str) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, text)?,
        None => {
            std::io::stdout().write_all(text.as_bytes())?;
        }
    }
    Ok(())
}

/// Transmittance files are either the bare object or wrapped as `{"eta": {...}}`
/// (the calibrate command's output).
pub fn read_eta(path: &Path) -> Result<TransmittanceSet<f64>> {
    #[derive(Deserialize)]
    struct Wrapped {
        eta: TransmittanceSet<f64>,
    }
    let text = std::fs::read_to_string(path)?;
    if let Ok(set) = serde_json::from_str::<TransmittanceSet<f64>>(&text) {
        set.validate()?;
        return Ok(set);
    }
    let wrapped: Wrapped = serde_json::from_str(&text)?;
    wrapped.eta.validate()?;
    Ok(wrapped.eta)
}

fn side_elements(
    dim: usize,
    settings: &str,
    eta: &TransmittanceSet<f64>,
) -> Result<Vec<PovmElement<f64>>> {
    let spec = CascadeSpec::new(dim)?;
    let set = parse_settings(settings, spec.num_stages())?;
    let mut out = Vec::new();
    for s in &set {
        out.extend(povm_elements::<f64>(&spec, s, eta));
    }
    Ok(out)
}

// ── operators ────────────────────────────────────────────────────────────

pub struct OperatorsCmd {
    pub dim: usize,
    pub settings: String,
    pub eta: Option<PathBuf>,
    pub joint: bool,
    pub eta_signal: Option<PathBuf>,
    pub eta_idler: Option<PathBuf>,
    pub dedup: bool,
    pub out: Option<PathBuf>,
}

pub fn cmd_operators(args: &OperatorsCmd) -> Result<()> {
    let load = |p: &Option<PathBuf>| -> Result<TransmittanceSet<f64>> {
        match p {
            Some(path) => read_eta(path),
            None => Ok(TransmittanceSet::ideal()),
        }
    };

    let elements: Vec<MeasElement<f64>> = if args.joint {
        let signal = side_elements(args.dim, &args.settings, &load(&args.eta_signal)?)?;
        let idler = side_elements(args.dim, &args.settings, &load(&args.eta_idler)?)?;
        joint_elements(&signal, &idler)
    } else {
        side_elements(args.dim, &args.settings, &load(&args.eta)?)?
            .into_iter()
            .map(MeasElement::from)
            .collect()
    };

    let text = if args.dedup {
        let partition = build_classes(&elements, CLASS_TOL)?;
        for (key, trace) in &partition.dropped {
            eprintln!("warning: dropped unnormalizable element {} (trace {trace:e})", key.describe());
        }
        let file = ClassesFile {
            schema_version: None,
            dim: args.dim,
            classes: partition.classes.iter().map(ClassJson::from_class).collect(),
        };
        to_versioned_json(&file)?
    } else {
        let file = OperatorsFile {
            schema_version: None,
            dim: args.dim,
            elements: elements.iter().map(ElementJson::from_element).collect(),
        };
        to_versioned_json(&file)?
    };
    write_output(args.out.as_ref(), &text)
}

// ── simulate ─────────────────────────────────────────────────────────────

pub struct SimulateCmd {
    pub state: String,
    pub photons: f64,
    pub settings: String,
    pub settings_idler: Option<String>,
    pub eta: Option<PathBuf>,
    pub eta_signal: Option<PathBuf>,
    pub eta_idler: Option<PathBuf>,
    pub seed: u64,
    pub expected: bool,
    pub coincidence: bool,
    pub duration: Option<f64>,
    pub out: Option<PathBuf>,
}

pub fn cmd_simulate(args: &SimulateCmd) -> Result<()> {
    if !(args.photons > 0.0) {
        return Err(Error::Validation {
            path: "--photons".into(),
            message: "must be positive".into(),
        });
    }
    let spec: StateSpec = args.state.parse()?;
    let load = |p: &Option<PathBuf>| -> Result<TransmittanceSet<f64>> {
        match p {
            Some(path) => read_eta(path),
            None => Ok(TransmittanceSet::ideal()),
        }
    };

    let mut record = if args.coincidence {
        let local_dim = match spec.local_dim() {
            Some(d) => d,
            None => {
                // A file state: infer the local dimension from the joint one.
                let rho: DensityOperator<f64> = read_json(Path::new(&args.state))?;
                (0..=rho.dim())
                    .find(|&k| k * k == rho.dim())
                    .ok_or_else(|| Error::Shape(format!(
                        "state file dim {} is not a two-qudit dimension",
                        rho.dim()
                    )))?
            }
        };
        let truth = spec.realize(local_dim)?;
        let signal = side_elements(local_dim, &args.settings, &load(&args.eta_signal)?)?;
        let idler_settings = args.settings_idler.as_deref().unwrap_or(&args.settings);
        let idler = side_elements(local_dim, idler_settings, &load(&args.eta_idler)?)?;
        let joint = joint_elements(&signal, &idler);
        expected_counts_joint(&truth, &joint, args.photons)?
    } else {
        let rho: DensityOperator<f64> = match &spec {
            StateSpec::File(path) => read_json(Path::new(path))?,
            _ => {
                return Err(Error::Validation {
                    path: "--state".into(),
                    message: "built-in states are two-qudit; pass --coincidence or a state file".into(),
                })
            }
        };
        let elements = side_elements(rho.dim(), &args.settings, &load(&args.eta)?)?;
        expected_counts(&rho, &elements, args.photons)?
    };

    record.meta.duration = args.duration;
    let record = if args.expected {
        record
    } else {
        sample_counts(&record, args.seed)
    };
    write_output(args.out.as_ref(), &to_versioned_json(&record)?)
}

// ── calibrate ────────────────────────────────────────────────────────────

pub struct CalibrateCmd {
    pub histograms: Option<PathBuf>,
    pub truth: Option<PathBuf>,
    pub photons: f64,
    pub seed: u64,
    pub side: Side,
    pub expected: bool,
    pub rates: Option<String>,
    pub dim: usize,
    pub out: Option<PathBuf>,
}

#[derive(Serialize)]
struct CalibrateOutput {
    eta: TransmittanceSet<f64>,
    histograms: Vec<qst_core::counts::CalibrationHistogram>,
}

pub fn cmd_calibrate(args: &CalibrateCmd) -> Result<()> {
    let histograms = match (&args.histograms, &args.truth) {
        (Some(path), None) => read_json::<HistogramsFile>(path)?.histograms,
        (None, Some(path)) => {
            let truth = read_eta(path)?;
            if args.expected {
                expected_calibration(&truth, args.side, args.photons)?
            } else {
                simulate_calibration(&truth, args.side, args.photons, args.seed)?
            }
        }
        _ => {
            return Err(Error::Validation {
                path: "calibrate".into(),
                message: "pass exactly one of --histograms FILE or --truth FILE".into(),
            })
        }
    };

    let mut eta = estimate_transmittances(&histograms)?;
    if let Some(rates) = &args.rates {
        let parts: Vec<&str> = rates.split(',').collect();
        let [d1, d2] = parts.as_slice() else {
            return Err(Error::Validation {
                path: "--rates".into(),
                message: "expected two comma-separated rates (D1,D2)".into(),
            });
        };
        let parse = |s: &str| -> Result<f64> {
            s.trim().parse().map_err(|_| Error::Validation {
                path: "--rates".into(),
                message: format!("cannot parse rate {s:?}"),
            })
        };
        let spec = CascadeSpec::new(args.dim)?;
        eta.eta_d1 = estimate_detector_ratio(parse(d1)?, parse(d2)?, &spec)?;
    }

    let output = CalibrateOutput {
        eta,
        histograms,
    };
    write_output(args.out.as_ref(), &to_versioned_json(&output)?)
}

// ── reconstruct ──────────────────────────────────────────────────────────

pub struct ReconstructCmd {
    pub counts: PathBuf,
    pub operators: PathBuf,
    pub operators_idler: Option<PathBuf>,
    pub method: Method,
    pub init: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

fn factor_from_density(
    rho: &DensityOperator<f64>,
    n_scale: f64,
    clamp: f64,
) -> Result<TriangularFactor<f64>> {
    let eig = eig_hermitian(rho.matrix())?;
    let clamped = eig.apply_to_spectrum(|l| l.max(clamp));
    let tr = clamped.trace().re;
    let r = factor_rtr(&clamped.scale(n_scale.max(1.0) / tr))?;
    TriangularFactor::from_matrix(&r)
}

pub fn cmd_reconstruct(args: &ReconstructCmd) -> Result<()> {
    let record = ingest_counts(&args.counts)?;

    let elements: Vec<MeasElement<f64>> = match record.mode {
        qst_core::counts::CountMode::Single => {
            let file: OperatorsFile = read_json(&args.operators)?;
            file.elements
                .iter()
                .map(|e| e.to_element())
                .collect::<Result<_>>()?
        }
        qst_core::counts::CountMode::Coincidence => {
            let signal_file: OperatorsFile = read_json(&args.operators)?;
            let idler_path = args.operators_idler.as_ref().ok_or_else(|| Error::Validation {
                path: "--operators-idler".into(),
                message: "coincidence counts need the idler-side operator file".into(),
            })?;
            let idler_file: OperatorsFile = read_json(idler_path)?;
            let signal = signal_file
                .elements
                .iter()
                .map(|e| e.to_povm_element())
                .collect::<Result<Vec<_>>>()?;
            let idler = idler_file
                .elements
                .iter()
                .map(|e| e.to_povm_element())
                .collect::<Result<Vec<_>>>()?;
            joint_elements(&signal, &idler)
        }
    };

    let classes: Vec<MeasurementClass<f64>> = build_classes(&elements, CLASS_TOL)?.classes;
    let n_m = aggregate_counts(&classes, &record)?;
    let dim = classes
        .first()
        .map(|c| c.aggregated_op.rows())
        .ok_or_else(|| Error::Domain("operator file holds no usable elements".into()))?;

    let result: ReconstructionResult<f64> = match args.method {
        Method::Linear => {
            let basis = GellMannBasis::new(dim)?;
            linear_inversion(&n_m, &classes, &basis)?
        }
        Method::Mle => {
            let init = match &args.init {
                Some(path) => {
                    let rho: DensityOperator<f64> = read_json(path)?;
                    if rho.dim() != dim {
                        return Err(Error::Shape(format!(
                            "initial state dim {} does not match operator dim {dim}",
                            rho.dim()
                        )));
                    }
                    let total: f64 = n_m.iter().sum();
                    let trace_sum: f64 = classes.iter().map(|c| c.trace()).sum();
                    Some(factor_from_density(&rho, total * dim as f64 / trace_sum, 1e-6)?)
                }
                None => None,
            };
            mle_reconstruct(&n_m, &classes, init.as_ref(), &MleConfig::default())?
        }
    };

    if !result.converged {
        eprintln!(
            "warning: optimization stopped without meeting its convergence criteria after {} iterations",
            result.iterations
        );
    }
    write_output(args.out.as_ref(), &to_versioned_json(&result)?)
}

// ── metrics ──────────────────────────────────────────────────────────────

pub struct MetricsCmd {
    pub rho: PathBuf,
    pub target: String,
    pub critical: Option<f64>,
    pub out: Option<PathBuf>,
}

#[derive(Serialize)]
struct MetricsOutput {
    merit: MeritReport<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    critical: Option<MeritReport<f64>>,
}

fn parse_target(text: &str, local_dim: usize) -> Result<MeritTarget<f64>> {
    let parts: Vec<&str> = text.split(':').collect();
    match parts.as_slice() {
        ["auto"] => Ok(MeritTarget::MesAuto),
        ["mes", d, rest] => {
            let d: usize = d.parse().map_err(|_| Error::Validation {
                path: "--target".into(),
                message: format!("bad dimension in {text:?}"),
            })?;
            if d != local_dim {
                return Err(Error::Shape(format!(
                    "target local dim {d} does not match the state's local dim {local_dim}"
                )));
            }
            if rest.eq_ignore_ascii_case("auto") {
                Ok(MeritTarget::MesAuto)
            } else {
                Ok(MeritTarget::Mes {
                    phi: qst_core::pipeline::parse_angle(rest)?,
                })
            }
        }
        _ => {
            let rho: DensityOperator<f64> = read_json(Path::new(text))?;
            Ok(MeritTarget::State(rho))
        }
    }
}

fn render_table(merit: &MeritReport<f64>, critical: Option<&MeritReport<f64>>) -> String {
    let mut rows: Vec<(String, f64, Option<String>)> = vec![
        (
            "Fidelity".into(),
            merit.fidelity,
            critical.map(|c| format!("> {:.3}", c.fidelity)),
        ),
        (
            "Trace distance".into(),
            merit.trace_distance,
            critical.map(|c| format!("< {:.3}", c.trace_distance)),
        ),
        (
            "Linear entropy".into(),
            merit.linear_entropy,
            critical.map(|c| format!("< {:.3}", c.linear_entropy)),
        ),
        (
            "Von Neumann entropy".into(),
            merit.von_neumann_entropy,
            critical.map(|c| format!("< {:.3}", c.von_neumann_entropy)),
        ),
        (
            "Conditional entropy (signal)".into(),
            merit.conditional_entropy_signal,
            critical.map(|c| format!("< {:.3}", c.conditional_entropy_signal)),
        ),
        (
            "Conditional entropy (idler)".into(),
            merit.conditional_entropy_idler,
            critical.map(|c| format!("< {:.3}", c.conditional_entropy_idler)),
        ),
    ];
    if let Some(phi) = merit.best_phi {
        rows.push(("Best target phase".into(), phi, None));
    }

    let mut text = String::new();
    text.push_str(&format!(
        "{:<30} {:>10}{}\n",
        "Quantity",
        "Value",
        if critical.is_some() { "   Critical" } else { "" }
    ));
    for (name, value, crit) in rows {
        text.push_str(&format!(
            "{name:<30} {value:>10.4}{}\n",
            crit.map(|c| format!("   {c}")).unwrap_or_default()
        ));
    }
    text
}

pub fn cmd_metrics(args: &MetricsCmd) -> Result<()> {
    let rho: DensityOperator<f64> = read_json(&args.rho)?;
    let local_dim = (0..=rho.dim())
        .find(|&k| k * k == rho.dim())
        .ok_or_else(|| Error::Shape(format!("state dim {} is not a two-qudit dimension", rho.dim())))?;

    let target = parse_target(&args.target, local_dim)?;
    let merit = merit_report(&rho, &target)?;
    let critical = match args.critical {
        Some(p) => Some(cglmp_critical_table::<f64>(p, local_dim)?),
        None => None,
    };

    let output = MetricsOutput {
        merit: merit.clone(),
        critical: critical.clone(),
    };
    let json = to_versioned_json(&output)?;
    let table = render_table(&merit, critical.as_ref());

    match &args.out {
        Some(path) => {
            std::fs::write(path, json)?;
            print!("{table}");
        }
        None => {
            print!("{json}");
            eprint!("{table}");
        }
    }
    Ok(())
}

// ── pipeline ─────────────────────────────────────────────────────────────

pub struct PipelineCmd {
    pub config: Option<PathBuf>,
    pub dim: Option<usize>,
    pub state: Option<String>,
    pub photons: Option<f64>,
    pub eta_signal: Option<PathBuf>,
    pub eta_idler: Option<PathBuf>,
    pub settings_signal: Option<String>,
    pub settings_idler: Option<String>,
    pub trials: Option<usize>,
    pub seed: Option<u64>,
    pub noiseless: bool,
    pub method: Option<Method>,
    pub jobs: Option<usize>,
    pub out: Option<PathBuf>,
}

/// Exit status the caller should use: 0, or 3 when any trial failed numerically.
pub fn cmd_pipeline(args: &PipelineCmd) -> Result<u8> {
    let mut config: PipelineConfig = match &args.config {
        Some(path) => read_json(path)?,
        None => {
            let dim = args.dim.ok_or_else(|| Error::Validation {
                path: "--dim".into(),
                message: "required without --config".into(),
            })?;
            let state = args.state.as_ref().ok_or_else(|| Error::Validation {
                path: "--state".into(),
                message: "required without --config".into(),
            })?;
            let photons = args.photons.ok_or_else(|| Error::Validation {
                path: "--photons".into(),
                message: "required without --config".into(),
            })?;
            PipelineConfig {
                dim,
                state: state.parse()?,
                eta_signal: TransmittanceSet::ideal(),
                eta_idler: TransmittanceSet::ideal(),
                settings_signal: Vec::new(),
                settings_idler: Vec::new(),
                photons,
                seed: 0,
                trials: 1,
                noiseless: false,
                method: Method::Mle,
                jobs: 0,
            }
        }
    };

    if let Some(path) = &args.eta_signal {
        config.eta_signal = read_eta(path)?;
    }
    if let Some(path) = &args.eta_idler {
        config.eta_idler = read_eta(path)?;
    }
    let stages = CascadeSpec::new(config.dim.max(2))?.num_stages();
    if let Some(s) = &args.settings_signal {
        config.settings_signal = parse_settings(s, stages)?;
    }
    if let Some(s) = &args.settings_idler {
        config.settings_idler = parse_settings(s, stages)?;
    }
    if let Some(t) = args.trials {
        config.trials = t;
    }
    if let Some(s) = args.seed {
        config.seed = s;
    }
    if args.noiseless {
        config.noiseless = true;
    }
    if let Some(m) = args.method {
        config.method = m;
    }
    config.jobs = args
        .jobs
        .or_else(|| std::env::var("QST_JOBS").ok().and_then(|v| v.parse().ok()))
        .unwrap_or(config.jobs);

    let report = run_pipeline(&config)?;

    eprintln!(
        "pipeline: {}/{} trials ok, converged: {}, physical: {}",
        report.summary.trials_ok,
        report.summary.trials_total,
        report.summary.all_converged,
        report.summary.all_physical
    );
    if let Some(f) = &report.summary.fidelity_truth {
        eprintln!("  fidelity to truth: {:.5} +/- {:.5}", f.mean, f.std);
    }
    if let Some(f) = &report.summary.fidelity {
        eprintln!("  fidelity to best entangled target: {:.5} +/- {:.5}", f.mean, f.std);
    }
    for failure in &report.failures {
        eprintln!(
            "  trial {} failed at stage {}: {}",
            failure.trial, failure.stage, failure.message
        );
    }

    write_output(args.out.as_ref(), &to_versioned_json(&report)?)?;
    Ok(if report.failures.is_empty() { 0 } else { 3 })
}
