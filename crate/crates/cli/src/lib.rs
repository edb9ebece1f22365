//! Command-line driver: experiment files in, traces, reports and plots out.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

pub mod config;
pub mod inspect;
pub mod run;
pub mod sweep;
pub mod trace;
pub mod tune;

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_DOMAIN: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;
pub const EXIT_INFEASIBLE: i32 = 5;

/// Environment variable capping the worker count of `sweep`.
pub const THREADS_ENV: &str = "NONHOLO_ES_THREADS";

#[derive(Debug, Clone, Serialize)]
pub struct ErrorEntry {
    pub kind: String,
    pub message: String,
}

/// A failure with its process exit code; printed as JSON on stderr.
#[derive(Debug, Clone, Serialize)]
pub struct CliError {
    pub code: i32,
    pub errors: Vec<ErrorEntry>,
}

impl CliError {
    fn one(code: i32, kind: &str, message: String) -> Self {
        Self {
            code,
            errors: vec![ErrorEntry {
                kind: kind.into(),
                message,
            }],
        }
    }

    pub fn validation(messages: Vec<String>) -> Self {
        Self {
            code: EXIT_VALIDATION,
            errors: messages
                .into_iter()
                .map(|message| ErrorEntry {
                    kind: "validation".into(),
                    message,
                })
                .collect(),
        }
    }

    pub fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        Self::one(1, "io", format!("{}: {e}", path.display()))
    }

    pub fn parse(path: &Path, e: impl std::fmt::Display) -> Self {
        Self::one(EXIT_VALIDATION, "parse", format!("{}: {e}", path.display()))
    }

    pub fn internal(e: impl std::fmt::Display) -> Self {
        Self::one(1, "internal", e.to_string())
    }

    pub fn to_json(&self) -> String {
        serde_json::json!({ "status": "error", "exit_code": self.code, "errors": self.errors }).to_string()
    }
}

/// Exit code for a library error.
pub fn exit_code(e: &nonholo_es::Error) -> i32 {
    use nonholo_es::Error::*;
    match e {
        InvalidConfig(_)
        | IndexOutOfRange { .. }
        | UnknownPair(_)
        | UnknownPreset(_)
        | PairDomain { .. }
        | HypothesisViolation(_) => EXIT_VALIDATION,
        // Singular before the run starts is a bad selection, during it a breakdown.
        RankDeficient { time: None, .. } => EXIT_VALIDATION,
        OutsideDomain { .. } => EXIT_DOMAIN,
        RankDeficient { .. } | NumericalBlowup { .. } | StepCollapse { .. } | StepUnderflow { .. } => {
            EXIT_NUMERICAL
        }
        QuadratureNonConvergence(_) => EXIT_NUMERICAL,
        InfeasibleBudget { .. } => EXIT_INFEASIBLE,
    }
}

pub fn error_kind(e: &nonholo_es::Error) -> &'static str {
    use nonholo_es::Error::*;
    match e {
        OutsideDomain { .. } => "outside_domain",
        StepUnderflow { .. } => "step_underflow",
        RankDeficient { .. } => "rank_deficient",
        InvalidConfig(_) => "invalid_config",
        IndexOutOfRange { .. } => "index_out_of_range",
        PairDomain { .. } => "pair_domain",
        UnknownPair(_) => "unknown_pair",
        UnknownPreset(_) => "unknown_preset",
        NumericalBlowup { .. } => "numerical_blowup",
        StepCollapse { .. } => "step_collapse",
        QuadratureNonConvergence(_) => "quadrature_non_convergence",
        HypothesisViolation(_) => "hypothesis_violation",
        InfeasibleBudget { .. } => "infeasible_budget",
    }
}

impl From<nonholo_es::Error> for CliError {
    fn from(e: nonholo_es::Error) -> Self {
        Self::one(exit_code(&e), error_kind(&e), e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "nonholo-es", version, about = "Extremum seeking for nonholonomic systems")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct Source {
    /// Experiment file (TOML, or JSON including a previous report.json).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Built-in experiment; keys in --config override it.
    #[arg(long)]
    pub preset: Option<String>,
    /// Directory for every output file.
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate one experiment and write trace.csv, report.json and optionally an SVG.
    Run {
        #[command(flatten)]
        src: Source,
        /// Also write plot.svg (unless the experiment names its own plot file).
        #[arg(long)]
        plot: bool,
    },
    /// Run a grid of experiments and write summary.csv.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
        /// Worker threads; NONHOLO_ES_THREADS caps it.
        #[arg(long)]
        parallelism: Option<usize>,
    },
    /// Rank condition and frame constant over a box around x0.
    CheckSystem {
        #[command(flatten)]
        src: Source,
        /// Half width of the checked box.
        #[arg(long, default_value_t = 2.0)]
        half_width: f64,
        #[arg(long, default_value_t = 1000)]
        samples: usize,
    },
    /// Constants of the plant, pair and cost on a working set.
    EstimateConstants {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        preset: Option<String>,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Admissible (mu, gamma1, eps) for a design budget.
    Tune {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        preset: Option<String>,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Power laws of the one-interval stabilizer remainder and the one-period seeker defect.
    VerifyExpansion {
        #[command(flatten)]
        src: Source,
    },
    /// Render an SVG from a trace CSV.
    Plot {
        #[arg(long)]
        trace: PathBuf,
        /// `plain` or `envelope`.
        #[arg(long, default_value = "plain")]
        style: String,
        /// Minimizer for the envelope panel (defaults to the origin).
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        x_star: Option<Vec<f64>>,
        #[arg(long, default_value = "plot.svg")]
        out: PathBuf,
    },
}

/// What a command produced: a JSON summary for stdout and the exit code.
pub struct Outcome {
    pub summary: serde_json::Value,
    pub code: i32,
}

pub fn dispatch(cli: Cli) -> Result<Outcome, CliError> {
    match cli.command {
        Command::Run { src, plot } => run::command(&src, plot),
        Command::Sweep {
            config,
            out_dir,
            parallelism,
        } => sweep::command(&config, &out_dir, parallelism),
        Command::CheckSystem {
            src,
            half_width,
            samples,
        } => inspect::check_system(&src, half_width, samples),
        Command::EstimateConstants { config, preset, out_dir } => {
            tune::estimate_command(&config, preset.as_deref(), &out_dir)
        }
        Command::Tune { config, preset, out_dir } => tune::tune_command(&config, preset.as_deref(), &out_dir),
        Command::VerifyExpansion { src } => inspect::verify_expansion(&src),
        Command::Plot {
            trace,
            style,
            x_star,
            out,
        } => trace::plot_command(&trace, &style, x_star, &out),
    }
}

/// Parses `args`, runs, prints, and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_VALIDATION } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(out) => {
            use std::io::Write;
            // a closed pipe downstream is not our failure
            let _ = writeln!(
                std::io::stdout(),
                "{}",
                serde_json::to_string_pretty(&out.summary).unwrap_or_default()
            );
            out.code
        }
        Err(e) => {
            eprintln!("{}", e.to_json());
            e.code
        }
    }
}

pub(crate) fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

pub(crate) fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        ensure_dir(parent)?;
    }
    std::fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut s = serde_json::to_string_pretty(value).map_err(CliError::internal)?;
    s.push('\n');
    write_file(path, &s)
}
