//! Command-line front end: exact simulation, closed-form moments, transform
//! evaluation, figure-data export, and the Monte Carlo validation suite.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};

use hawkes_queue::model::{ModelKind, ModelParams};
use hawkes_queue::moments::{self, MomentConvention};
use hawkes_queue::sim::{self, McReport};
use hawkes_queue::transform::{zeta_for_model, SignVariant, TransformQuery, ZetaConvention};
use hawkes_queue::validate::{
    conventions_markdown, reference_constant_arrival, reference_full, reference_memoryless,
    reference_mm, run_suite, Suite, ValidationSummary,
};
use hawkes_queue::{numfmt, Error, Result};

/// Default RNG seed for every command, so that runs are reproducible unless
/// the user asks for a different stream.
const DEFAULT_SEED: u64 = 1729;

const EXIT_CODES: &str = "Exit codes:\n  \
    0  success\n  \
    1  invalid input (flags, parameters, JSON) or I/O failure\n  \
    2  numerical failure (integrator breakdown, runaway simulation)\n  \
    3  validation suite reported failures";

#[derive(Parser)]
#[command(
    name = "hawkes-queue",
    version,
    about = "Infinite-server queues with self-exciting arrivals and state-dependent services",
    after_help = EXIT_CODES,
    after_long_help = EXIT_CODES
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one sample path and write its event log as CSV
    /// (columns: time,kind,n,lambda,mu)
    Simulate {
        #[command(flatten)]
        model: ModelArgs,
        /// Simulation horizon
        #[arg(long, default_value_t = 5.0)]
        horizon: f64,
        /// RNG seed
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
        /// Output file (stdout when omitted)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate the closed-form transient moments on a time grid as CSV
    /// (columns: t,mean_lambda,var_lambda,mean_M,var_M), or Monte Carlo
    /// estimates of the same quantities as JSON when --mc-paths is set
    Moments {
        #[command(flatten)]
        model: ModelArgs,
        /// Time grid: "start:end:count" or comma-separated values
        #[arg(long, default_value = "0:5:50")]
        t_grid: String,
        /// Jump-moment convention used by the variance formulas
        #[arg(long, value_enum, default_value_t)]
        convention: ConventionArg,
        /// When positive, estimate the moments by simulation with this many
        /// paths and emit a JSON report instead of the closed-form CSV
        #[arg(long, default_value_t = 0)]
        mc_paths: usize,
        /// RNG seed (used only with --mc-paths)
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
        /// Output file (stdout when omitted)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate the joint transform on the product grid of the t, z, u, v
    /// lists as CSV (columns: t,z,u,v,zeta)
    Transform {
        #[command(flatten)]
        model: ModelArgs,
        /// Time grid: "start:end:count" or comma-separated values
        #[arg(long, default_value = "0:5:50")]
        t_grid: String,
        /// Population-count arguments z in [0,1], comma-separated
        #[arg(long, default_value = "1")]
        z: String,
        /// Arrival-intensity arguments u >= 0, comma-separated
        #[arg(long, default_value = "0")]
        u: String,
        /// Service-intensity arguments v >= 0, comma-separated
        #[arg(long, default_value = "0")]
        v: String,
        /// Which end of the u-characteristic supplies the prefactor
        #[arg(long, value_enum, default_value_t)]
        prefactor: PrefactorArg,
        /// Sign of the unit shift in the constant-arrival engine
        #[arg(long, value_enum, default_value_t)]
        sign: SignArg,
        /// Output file (stdout when omitted)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the Monte Carlo cross-validation suite and write its JSON report
    Validate {
        /// Which section to run
        #[arg(long, value_enum, default_value_t = SuiteArg::All)]
        suite: SuiteArg,
        /// Monte Carlo paths per comparison
        #[arg(long, default_value_t = 100_000)]
        paths: usize,
        /// RNG seed for the whole suite
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
        /// Output file for the JSON report (stdout when omitted)
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also render the convention verdicts as Markdown to this path
        #[arg(long)]
        conventions_out: Option<PathBuf>,
    },
    /// Export t-vs-zeta CSV curves for a preset over t in [0,5]
    /// (columns: t,z,u,v,zeta; curves: z in {0.25,0.5,0.75} at u=v=0, the
    /// u-marginal (z=1,u=1,v=0), and where the engine supports a service
    /// argument the v-marginal (z=1,u=0,v=1))
    Figure {
        /// Preset parameter set
        #[arg(value_enum)]
        preset: PresetArg,
        /// Output file (stdout when omitted)
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Model selection shared by the evaluation commands: a named preset or an
/// inline/on-disk JSON parameter document, plus an optional regime tag that
/// must agree with the resolved parameters.
#[derive(Args)]
struct ModelArgs {
    /// Preset parameter set
    #[arg(long, value_enum)]
    preset: Option<PresetArg>,
    /// Regime tag; must match the preset or parameter document
    #[arg(long, value_enum)]
    model: Option<ModelArg>,
    /// Parameter document: inline JSON (starts with '{') or a file path
    #[arg(long)]
    params: Option<String>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PresetArg {
    /// Self-exciting arrivals and services, all rates 2, exponential jumps
    Fig1,
    /// Constant-rate arrivals, self-exciting services
    Fig2,
    /// Self-exciting arrivals, memoryless services
    Fig3,
    /// Fully memoryless system
    MmBase,
}

impl PresetArg {
    fn params(self) -> ModelParams {
        match self {
            PresetArg::Fig1 => reference_full(),
            PresetArg::Fig2 => reference_constant_arrival(),
            PresetArg::Fig3 => reference_memoryless(),
            PresetArg::MmBase => reference_mm(),
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModelArg {
    /// Self-exciting arrivals, state-dependent self-exciting services
    Hsd,
    /// Constant-rate arrivals, state-dependent self-exciting services
    Msd,
    /// Self-exciting arrivals, memoryless services
    Hm,
    /// Constant-rate arrivals, memoryless services
    Mm,
}

impl ModelArg {
    fn matches(self, kind: ModelKind) -> bool {
        matches!(
            (self, kind),
            (ModelArg::Hsd, ModelKind::HawkesSdHawkes)
                | (ModelArg::Msd, ModelKind::MSdHawkes { .. })
                | (ModelArg::Hm, ModelKind::HawkesM)
                | (ModelArg::Mm, ModelKind::Mm)
        )
    }

    fn name(self) -> &'static str {
        match self {
            ModelArg::Hsd => "hsd",
            ModelArg::Msd => "msd",
            ModelArg::Hm => "hm",
            ModelArg::Mm => "mm",
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum, Default)]
enum ConventionArg {
    /// Variance formulas use the raw second moment E[B^2]
    #[default]
    RawSecondMoment,
    /// Variance formulas use the squared mean (E[B])^2
    SquaredMean,
}

impl From<ConventionArg> for MomentConvention {
    fn from(c: ConventionArg) -> Self {
        match c {
            ConventionArg::RawSecondMoment => MomentConvention::RawMoments,
            ConventionArg::SquaredMean => MomentConvention::AsWritten,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum, Default)]
enum PrefactorArg {
    /// Prefactor uses the u-characteristic's terminal value
    #[default]
    AtEnd,
    /// Prefactor uses the u-characteristic's initial value
    AtStart,
}

impl From<PrefactorArg> for ZetaConvention {
    fn from(c: PrefactorArg) -> Self {
        match c {
            PrefactorArg::AtEnd => ZetaConvention::PrefactorAtT,
            PrefactorArg::AtStart => ZetaConvention::PrefactorAtZero,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum, Default)]
enum SignArg {
    /// Completion-flow integrand carries a -1 shift
    #[default]
    MinusOne,
    /// Completion-flow integrand carries a +1 shift
    PlusOne,
}

impl From<SignArg> for SignVariant {
    fn from(s: SignArg) -> Self {
        match s {
            SignArg::MinusOne => SignVariant::MinusOne,
            SignArg::PlusOne => SignVariant::PlusOne,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SuiteArg {
    Moments,
    Transform,
    Dynkin,
    Reductions,
    Conventions,
    All,
}

impl From<SuiteArg> for Suite {
    fn from(s: SuiteArg) -> Self {
        match s {
            SuiteArg::Moments => Suite::Moments,
            SuiteArg::Transform => Suite::Transform,
            SuiteArg::Dynkin => Suite::Dynkin,
            SuiteArg::Reductions => Suite::Reductions,
            SuiteArg::Conventions => Suite::Conventions,
            SuiteArg::All => Suite::All,
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let informational =
                matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion);
            let _ = e.print();
            return if informational {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            };
        }
    };
    match dispatch(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(classify(&e))
        }
    }
}

/// Maps library errors onto the documented exit codes.
fn classify(e: &Error) -> u8 {
    match e {
        Error::InvalidParameter { .. } | Error::Malformed(_) | Error::Output(_) => 1,
        Error::Explosion { .. } | Error::StepUnderflow { .. } | Error::RangeViolation { .. } => 2,
    }
}

fn dispatch(command: Command) -> Result<u8> {
    match command {
        Command::Simulate {
            model,
            horizon,
            seed,
            out,
        } => {
            let params = model.resolve()?;
            let traj = sim::simulate_path(
                &params.arrival,
                &params.service,
                params.kind,
                horizon,
                seed,
            )?;
            with_output(out.as_deref(), |w| traj.write_csv(w))?;
            Ok(0)
        }
        Command::Moments {
            model,
            t_grid,
            convention,
            mc_paths,
            seed,
            out,
        } => {
            let params = model.resolve()?;
            let grid = parse_grid(&t_grid, "t-grid")?;
            if mc_paths == 0 {
                let reports =
                    moments::moments_on_grid(&params.arrival, &grid, convention.into())?;
                with_output(out.as_deref(), |w| moments::write_moments_csv(&reports, w))?;
            } else {
                let mc = sim::mc_moments(&params, &grid, mc_paths, seed)?;
                let report = McMomentsJson {
                    mean_lambda: McReport::from_estimates(&mc.t, &mc.mean_lambda),
                    var_lambda: McReport::from_estimates(&mc.t, &mc.var_lambda),
                    mean_m: McReport::from_estimates(&mc.t, &mc.mean_m),
                    var_m: McReport::from_estimates(&mc.t, &mc.var_m),
                    mean_n: McReport::from_estimates(&mc.t, &mc.mean_n),
                };
                with_output(out.as_deref(), |w| write_json(w, &report))?;
            }
            Ok(0)
        }
        Command::Transform {
            model,
            t_grid,
            z,
            u,
            v,
            prefactor,
            sign,
            out,
        } => {
            let params = model.resolve()?;
            let ts = parse_grid(&t_grid, "t-grid")?;
            let zs = parse_grid(&z, "z")?;
            let us = parse_grid(&u, "u")?;
            let vs = parse_grid(&v, "v")?;
            let mut rows = Vec::new();
            for &t in &ts {
                for &z in &zs {
                    for &u in &us {
                        for &v in &vs {
                            let q = TransformQuery::new(t, z, u, v)?;
                            let zeta =
                                zeta_for_model(&params, &q, prefactor.into(), sign.into())?;
                            rows.push([t, z, u, v, zeta]);
                        }
                    }
                }
            }
            with_output(out.as_deref(), |w| write_zeta_csv(w, &rows))?;
            Ok(0)
        }
        Command::Validate {
            suite,
            paths,
            seed,
            out,
            conventions_out,
        } => {
            let summary = run_suite(suite.into(), paths, seed)?;
            recap(&summary);
            with_output(out.as_deref(), |w| write_json(w, &summary))?;
            if let Some(path) = conventions_out {
                fs::write(&path, conventions_markdown(&summary))
                    .map_err(|e| Error::Output(format!("{}: {e}", path.display())))?;
            }
            Ok(if summary.pass { 0 } else { 3 })
        }
        Command::Figure { preset, out } => {
            let params = preset.params();
            let mut curves: Vec<(f64, f64, f64)> =
                vec![(0.25, 0.0, 0.0), (0.5, 0.0, 0.0), (0.75, 0.0, 0.0), (1.0, 1.0, 0.0)];
            // The memoryless-service engine takes no service argument.
            if params.kind != ModelKind::HawkesM {
                curves.push((1.0, 0.0, 1.0));
            }
            let ts: Vec<f64> = (0..=50).map(|i| i as f64 * 0.1).collect();
            let mut rows = Vec::new();
            let mut first_failure: Option<Error> = None;
            for &(z, u, v) in &curves {
                for &t in &ts {
                    let q = TransformQuery::new(t, z, u, v)?;
                    let zeta = match zeta_for_model(
                        &params,
                        &q,
                        ZetaConvention::default(),
                        SignVariant::default(),
                    ) {
                        Ok(x) => x,
                        Err(e) => {
                            // Keep the remaining rows; the exit code still
                            // reports the numerical failure.
                            if first_failure.is_none() {
                                first_failure = Some(e);
                            }
                            f64::NAN
                        }
                    };
                    rows.push([t, z, u, v, zeta]);
                }
            }
            with_output(out.as_deref(), |w| write_zeta_csv(w, &rows))?;
            match first_failure {
                None => Ok(0),
                Some(e) => {
                    eprintln!("warning: some curve points failed to evaluate: {e}");
                    Ok(2)
                }
            }
        }
    }
}

impl ModelArgs {
    fn resolve(&self) -> Result<ModelParams> {
        let params = match (self.preset, self.params.as_deref()) {
            (Some(_), Some(_)) => {
                return Err(Error::invalid(
                    "params",
                    "give either --preset or --params, not both",
                ))
            }
            (None, None) => {
                return Err(Error::invalid(
                    "params",
                    "model parameters required: give --preset or --params",
                ))
            }
            (Some(preset), None) => preset.params(),
            (None, Some(doc)) => {
                let text = if doc.trim_start().starts_with('{') {
                    doc.to_string()
                } else {
                    fs::read_to_string(doc)
                        .map_err(|e| Error::Malformed(format!("params file {doc}: {e}")))?
                };
                serde_json::from_str::<ModelParams>(&text)
                    .map_err(|e| Error::Malformed(format!("params: {e}")))?
            }
        };
        if let Some(model) = self.model {
            if !model.matches(params.kind) {
                return Err(Error::invalid(
                    "model",
                    format!(
                        "--model {} does not match the configured parameters' regime",
                        model.name()
                    ),
                ));
            }
        }
        Ok(params)
    }
}

/// Parses "start:end:count" (inclusive, evenly spaced) or a comma-separated
/// value list.
fn parse_grid(spec: &str, name: &str) -> Result<Vec<f64>> {
    let bad = |detail: &str| {
        Error::Malformed(format!(
            "{name} \"{spec}\": {detail} (expected start:end:count or v1,v2,...)"
        ))
    };
    let parse_num = |s: &str| -> Result<f64> {
        let x: f64 = s.trim().parse().map_err(|_| bad("not a number"))?;
        if !x.is_finite() {
            return Err(bad("values must be finite"));
        }
        Ok(x)
    };
    if spec.contains(':') {
        let parts: Vec<&str> = spec.split(':').collect();
        if parts.len() != 3 {
            return Err(bad("wrong number of ':' parts"));
        }
        let start = parse_num(parts[0])?;
        let end = parse_num(parts[1])?;
        let count: usize = parts[2]
            .trim()
            .parse()
            .map_err(|_| bad("count must be a positive integer"))?;
        if count == 0 {
            return Err(bad("count must be at least 1"));
        }
        if end < start {
            return Err(bad("end must not be below start"));
        }
        if count == 1 {
            return Ok(vec![start]);
        }
        let step = (end - start) / (count - 1) as f64;
        Ok((0..count).map(|i| start + step * i as f64).collect())
    } else {
        let values: Vec<f64> = spec
            .split(',')
            .map(parse_num)
            .collect::<Result<Vec<f64>>>()?;
        if values.is_empty() {
            return Err(bad("need at least one value"));
        }
        Ok(values)
    }
}

fn with_output(path: Option<&Path>, f: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    match path {
        Some(p) => {
            let mut file = fs::File::create(p)
                .map_err(|e| Error::Output(format!("{}: {e}", p.display())))?;
            f(&mut file)?;
            file.flush()
                .map_err(|e| Error::Output(format!("{}: {e}", p.display())))
        }
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            f(&mut lock)?;
            lock.flush().map_err(|e| Error::Output(e.to_string()))
        }
    }
}

fn write_json<T: serde::Serialize>(w: &mut dyn Write, value: &T) -> Result<()> {
    let text =
        serde_json::to_string_pretty(value).map_err(|e| Error::Output(e.to_string()))?;
    writeln!(w, "{text}").map_err(|e| Error::Output(e.to_string()))
}

fn write_zeta_csv(w: &mut dyn Write, rows: &[[f64; 5]]) -> Result<()> {
    let mut csv = csv::Writer::from_writer(w);
    let io_err = |e: csv::Error| Error::Output(e.to_string());
    csv.write_record(["t", "z", "u", "v", "zeta"]).map_err(io_err)?;
    for row in rows {
        csv.write_record(row.iter().map(|&x| numfmt::format_sig(x, 12)))
            .map_err(io_err)?;
    }
    csv.flush().map_err(|e| Error::Output(e.to_string()))
}

#[derive(serde::Serialize)]
struct McMomentsJson {
    mean_lambda: McReport,
    var_lambda: McReport,
    mean_m: McReport,
    var_m: McReport,
    mean_n: McReport,
}

/// One line per report and verdict on stderr, so a suite run is readable
/// even when the JSON goes to stdout.
fn recap(summary: &ValidationSummary) {
    for r in &summary.reports {
        eprintln!(
            "[{}] {} ({} points, max |z| = {:.2})",
            if r.pass { "PASS" } else { "FAIL" },
            r.quantity,
            r.points.len(),
            r.max_abs_z()
        );
    }
    for v in &summary.verdicts {
        eprintln!("[{:?}] winner: {}", v.question, v.winner);
    }
    eprintln!(
        "suite {}: {}",
        summary.suite,
        if summary.pass { "PASS" } else { "FAIL" }
    );
}
