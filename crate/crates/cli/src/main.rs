//! `qst` — tomography toolkit for time-bin qudits analyzed by cascaded delay
//! interferometers: build measurement operators, simulate photon counts,
//! calibrate transmittances, reconstruct density operators, and evaluate them.
//!
//! Exit codes: 0 success, 2 validation/input error, 3 numerical failure.

mod commands;
mod schemas;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use qst_core::error::Error;
use qst_core::reconstruct::Method;
use qst_core::states::Side;

use commands::*;

#[derive(Parser)]
#[command(
    name = "qst",
    version = concat!(env!("CARGO_PKG_VERSION"), " (schema 1)"),
    about = "Quantum state tomography for time-bin qudits",
    disable_help_subcommand = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Mle,
    Linear,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Mle => Method::Mle,
            MethodArg::Linear => Method::Linear,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SideArg {
    Signal,
    Idler,
}

impl From<SideArg> for Side {
    fn from(s: SideArg) -> Self {
        match s {
            SideArg::Signal => Side::Signal,
            SideArg::Idler => Side::Idler,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Emit the POVM element set (or its deduplicated classes) as JSON.
    Operators {
        /// Qudit dimension.
        #[arg(long, default_value_t = 4)]
        dim: usize,
        /// Phase settings: `canonical`, or `t;t;...` with comma-separated
        /// angles per setting (largest-delay stage first).
        #[arg(long, default_value = "canonical")]
        settings: String,
        /// Transmittance file for the single-qudit set (default ideal).
        #[arg(long)]
        eta: Option<PathBuf>,
        /// Build the joint two-qudit element set.
        #[arg(long)]
        joint: bool,
        /// Signal-side transmittance file (with --joint).
        #[arg(long)]
        eta_signal: Option<PathBuf>,
        /// Idler-side transmittance file (with --joint).
        #[arg(long)]
        eta_idler: Option<PathBuf>,
        /// Emit measurement classes instead of raw elements.
        #[arg(long)]
        dedup: bool,
        /// Output file (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Simulate expected or Poisson-sampled photon counts for a state.
    Simulate {
        /// State: `mes:<d>:<phi>`, `mix:[<d>:]<p>`, or a density-operator JSON file.
        #[arg(long)]
        state: String,
        /// Photon (pair) number per measurement setting.
        #[arg(long)]
        photons: f64,
        /// Phase settings (see `operators --settings`).
        #[arg(long, default_value = "canonical")]
        settings: String,
        /// Idler-side settings when they differ from --settings.
        #[arg(long)]
        settings_idler: Option<String>,
        /// Transmittance file for single-qudit simulation.
        #[arg(long)]
        eta: Option<PathBuf>,
        #[arg(long)]
        eta_signal: Option<PathBuf>,
        #[arg(long)]
        eta_idler: Option<PathBuf>,
        /// Sampling seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Emit exact expected counts instead of Poisson samples.
        #[arg(long)]
        expected: bool,
        /// Simulate two-qudit coincidence counts.
        #[arg(long)]
        coincidence: bool,
        /// Informational measurement duration per setting, seconds.
        #[arg(long)]
        duration: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Estimate relative transmittances from single-pulse histograms.
    Calibrate {
        /// Measured histograms file: `{"histograms": [{channel, counts}]}`.
        #[arg(long)]
        histograms: Option<PathBuf>,
        /// Ground-truth transmittance file: simulate the histograms instead.
        #[arg(long)]
        truth: Option<PathBuf>,
        /// Expected photons per channel when simulating.
        #[arg(long, default_value_t = 1e6)]
        photons: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Which analyzer the simulated channels belong to.
        #[arg(long, value_enum, default_value = "signal")]
        side: SideArg,
        /// Simulate noiseless histograms.
        #[arg(long)]
        expected: bool,
        /// D1,D2 single-count rates for the detector-ratio estimate.
        #[arg(long)]
        rates: Option<String>,
        #[arg(long, default_value_t = 4)]
        dim: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Reconstruct a density operator from a count record.
    Reconstruct {
        /// Count record JSON file.
        #[arg(long)]
        counts: PathBuf,
        /// Operator file (the signal side for coincidence counts).
        #[arg(long)]
        operators: PathBuf,
        /// Idler-side operator file for coincidence counts.
        #[arg(long)]
        operators_idler: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "mle")]
        method: MethodArg,
        /// Density-operator JSON file seeding the likelihood search.
        #[arg(long)]
        init: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Figures of merit of a reconstructed two-qudit state.
    Metrics {
        /// Density-operator JSON file.
        #[arg(long)]
        rho: PathBuf,
        /// Target: `auto`, `mes:<d>:auto`, `mes:<d>:<phi>`, or a state file.
        #[arg(long, default_value = "auto")]
        target: String,
        /// Also print the critical values at this mixing probability.
        #[arg(long)]
        critical: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Full closed-loop run: operators, simulation, deduplication,
    /// reconstruction, and metrics across trials.
    Pipeline {
        /// Pipeline configuration JSON (flags below override it).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        dim: Option<usize>,
        #[arg(long)]
        state: Option<String>,
        /// Photon pairs per joint measurement setting.
        #[arg(long)]
        photons: Option<f64>,
        #[arg(long)]
        eta_signal: Option<PathBuf>,
        #[arg(long)]
        eta_idler: Option<PathBuf>,
        #[arg(long)]
        settings_signal: Option<String>,
        #[arg(long)]
        settings_idler: Option<String>,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Use exact expected counts (no Poisson noise).
        #[arg(long)]
        noiseless: bool,
        #[arg(long, value_enum)]
        method: Option<MethodArg>,
        /// Worker threads for trials (default: QST_JOBS or all cores).
        #[arg(long)]
        jobs: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn exit_code_for(e: &Error) -> u8 {
    match e {
        Error::NotPsd { .. } | Error::Underdetermined { .. } => 3,
        _ => 2,
    }
}

fn run(cli: Cli) -> Result<u8, Error> {
    match cli.command {
        Command::Operators {
            dim,
            settings,
            eta,
            joint,
            eta_signal,
            eta_idler,
            dedup,
            out,
        } => {
            cmd_operators(&OperatorsCmd {
                dim,
                settings,
                eta,
                joint,
                eta_signal,
                eta_idler,
                dedup,
                out,
            })?;
            Ok(0)
        }
        Command::Simulate {
            state,
            photons,
            settings,
            settings_idler,
            eta,
            eta_signal,
            eta_idler,
            seed,
            expected,
            coincidence,
            duration,
            out,
        } => {
            cmd_simulate(&SimulateCmd {
                state,
                photons,
                settings,
                settings_idler,
                eta,
                eta_signal,
                eta_idler,
                seed,
                expected,
                coincidence,
                duration,
                out,
            })?;
            Ok(0)
        }
        Command::Calibrate {
            histograms,
            truth,
            photons,
            seed,
            side,
            expected,
            rates,
            dim,
            out,
        } => {
            cmd_calibrate(&CalibrateCmd {
                histograms,
                truth,
                photons,
                seed,
                side: side.into(),
                expected,
                rates,
                dim,
                out,
            })?;
            Ok(0)
        }
        Command::Reconstruct {
            counts,
            operators,
            operators_idler,
            method,
            init,
            out,
        } => {
            cmd_reconstruct(&ReconstructCmd {
                counts,
                operators,
                operators_idler,
                method: method.into(),
                init,
                out,
            })?;
            Ok(0)
        }
        Command::Metrics {
            rho,
            target,
            critical,
            out,
        } => {
            cmd_metrics(&MetricsCmd {
                rho,
                target,
                critical,
                out,
            })?;
            Ok(0)
        }
        Command::Pipeline {
            config,
            dim,
            state,
            photons,
            eta_signal,
            eta_idler,
            settings_signal,
            settings_idler,
            trials,
            seed,
            noiseless,
            method,
            jobs,
            out,
        } => cmd_pipeline(&PipelineCmd {
            config,
            dim,
            state,
            photons,
            eta_signal,
            eta_idler,
            settings_signal,
            settings_idler,
            trials,
            seed,
            noiseless,
            method: method.map(Into::into),
            jobs,
            out,
        }),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
