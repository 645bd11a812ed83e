//! `premia`: risk-premia estimation, calibration and Monte Carlo experiments.

mod inputs;
mod report;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use premia_core::inference::specification_test;
use premia_core::simulation::{calibrate, metrics_to_csv, run_experiment, CalibrationSummary, Estimator, ExperimentConfig};
use premia_core::{
    four_split_estimate, newey_west, two_pass_estimate, ErrorKind, FourSplitOptions, PremiaError, SplitLayout,
    TwoPassOptions,
};

use inputs::DataArgs;
use report::{Report, SpecReport, SpecRow};

#[derive(Debug, Parser)]
#[command(name = "premia", version, about = "Risk premia with the two-pass and four-split estimators")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Estimate risk premia and report them next to average factor returns
    Estimate(EstimateArgs),
    /// Fit the simulation design to a return panel and write it as JSON
    Calibrate(CalibrateArgs),
    /// Run a Monte Carlo experiment described by a TOML file
    Simulate(SimulateArgs),
    /// Test whether premia equal average factor returns
    SpecTest(EstimateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MethodArg {
    TwoPass,
    FourSplit,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum LayoutArg {
    Contiguous,
    Interleaved,
}

#[derive(Debug, clap::Args)]
struct Output {
    /// Output file (standard output when omitted)
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Debug, clap::Args)]
struct EstimateArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_enum, default_value_t = MethodArg::Both)]
    method: MethodArg,
    /// Number of missing-factor proxies in the four-split regressions
    #[arg(long, default_value_t = 1)]
    kv: usize,
    #[arg(long, default_value_t = 4)]
    nw_lags: usize,
    /// CSV file holding the k_v x k_F selection matrix A
    #[arg(long)]
    a_matrix: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = LayoutArg::Contiguous)]
    layout: LayoutArg,
    /// Add a zero-beta rate to the two-pass cross-sectional regression
    #[arg(long)]
    intercept: bool,
    /// Apply the Shanken correction to two-pass standard errors
    #[arg(long)]
    shanken: bool,
    #[command(flatten)]
    output: Output,
}

#[derive(Debug, clap::Args)]
struct CalibrateArgs {
    /// Write the built-in calibration instead of fitting one
    #[arg(long)]
    reference: bool,
    #[arg(long, required_unless_present = "reference")]
    returns: Option<PathBuf>,
    /// Three observed factors (an `RF` column is used as the risk-free rate)
    #[arg(long, required_unless_present = "reference")]
    factors: Option<PathBuf>,
    #[arg(long)]
    riskfree: Option<PathBuf>,
    #[arg(long, required_unless_present = "reference")]
    momentum: Option<PathBuf>,
    #[arg(long)]
    start: Option<i64>,
    #[arg(long)]
    end: Option<i64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, clap::Args)]
struct SimulateArgs {
    /// Experiment description (TOML)
    #[arg(long)]
    config: PathBuf,
    /// Overrides the seed in the config file
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (results do not depend on this)
    #[arg(long)]
    threads: Option<usize>,
    #[command(flatten)]
    output: Output,
}

#[derive(Debug)]
enum CliError {
    Core(PremiaError),
    Usage(String),
}

impl From<PremiaError> for CliError {
    fn from(e: PremiaError) -> Self {
        CliError::Core(e)
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 4,
            CliError::Core(e) => match e.kind() {
                ErrorKind::Internal => 1,
                ErrorKind::Io | ErrorKind::Data => 2,
                ErrorKind::Identification => 3,
                ErrorKind::Config => 4,
            },
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(4) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Estimate(a) => cmd_estimate(&a),
        Command::SpecTest(a) => cmd_spec_test(&a),
        Command::Calibrate(a) => cmd_calibrate(&a),
        Command::Simulate(a) => cmd_simulate(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("premia: error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn write_output(path: Option<&Path>, text: &str) -> Result<(), CliError> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|source| {
            CliError::Core(PremiaError::Io {
                path: p.to_path_buf(),
                source,
            })
        }),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())
                .and_then(|_| out.flush())
                .map_err(|source| {
                    CliError::Core(PremiaError::Io {
                        path: PathBuf::from("<stdout>"),
                        source,
                    })
                })
        }
    }
}

fn four_split_options(args: &EstimateArgs) -> Result<FourSplitOptions, CliError> {
    let a = args.a_matrix.as_deref().map(inputs::read_matrix).transpose()?;
    if let Some(a) = &a {
        if a.nrows() != args.kv {
            return Err(CliError::Usage(format!(
                "--a-matrix has {} rows but --kv is {}",
                a.nrows(),
                args.kv
            )));
        }
    }
    Ok(FourSplitOptions {
        k_v: args.kv,
        a,
        layout: match args.layout {
            LayoutArg::Contiguous => SplitLayout::Contiguous,
            LayoutArg::Interleaved => SplitLayout::Interleaved,
        },
    })
}

struct Fitted {
    report: Report,
    specs: Vec<(String, SpecRow)>,
}

fn fit(args: &EstimateArgs) -> Result<Fitted, CliError> {
    let fs_opts = four_split_options(args)?;
    let data = inputs::load(&args.data)?;
    let (returns, factors) = (&data.returns, &data.factors);
    let lrv = newey_west(factors, args.nw_lags)?;
    let means = factors.means();
    let mut report = Report::new(factors.names().to_vec(), returns.n_assets(), factors.periods(), args.nw_lags);
    report.push_average(&means, &lrv);
    let mut specs = Vec::new();
    if matches!(args.method, MethodArg::TwoPass | MethodArg::Both) {
        let opts = TwoPassOptions {
            intercept: args.intercept,
            shanken: args.shanken,
        };
        let est = two_pass_estimate(returns, factors, &lrv, opts)?;
        let spec = specification_test(&est, &means)?;
        report.push_estimate(&est, Some(&spec));
        specs.push((est.method.to_string(), SpecRow::from(&spec)));
    }
    if matches!(args.method, MethodArg::FourSplit | MethodArg::Both) {
        let est = four_split_estimate(returns, factors, &lrv, &fs_opts)?.estimate;
        let spec = specification_test(&est, &means)?;
        report.push_estimate(&est, Some(&spec));
        specs.push((est.method.to_string(), SpecRow::from(&spec)));
    }
    Ok(Fitted { report, specs })
}

fn cmd_estimate(args: &EstimateArgs) -> Result<(), CliError> {
    let f = fit(args)?;
    let text = match args.output.format {
        Format::Csv => f.report.to_csv(),
        Format::Json => f.report.to_json(),
    };
    write_output(args.output.out.as_deref(), &text)
}

fn cmd_spec_test(args: &EstimateArgs) -> Result<(), CliError> {
    let f = fit(args)?;
    let r = SpecReport {
        factors: f.report.factors,
        tests: f.specs,
    };
    let text = match args.output.format {
        Format::Csv => r.to_csv(),
        Format::Json => r.to_json(),
    };
    write_output(args.output.out.as_deref(), &text)
}

fn cmd_calibrate(args: &CalibrateArgs) -> Result<(), CliError> {
    let summary = if args.reference {
        CalibrationSummary::reference()
    } else {
        let data = DataArgs {
            returns: args.returns.clone().expect("required by clap"),
            factors: args.factors.clone().expect("required by clap"),
            riskfree: args.riskfree.clone(),
            momentum: args.momentum.clone(),
            start: args.start,
            end: args.end,
            block: 0,
        };
        let inputs = inputs::load(&data)?;
        let k = inputs.factors.n_factors();
        if k != 4 {
            return Err(CliError::Usage(format!(
                "calibration needs three observed factors plus momentum, got {} factors in total",
                k
            )));
        }
        let ff = inputs.factors.select_factors(&[0, 1, 2])?;
        let mom = inputs.factors.values().column(3).into_owned();
        calibrate(&inputs.returns, &ff, &mom)?
    };
    let text = serde_json::to_string_pretty(&summary).map_err(|e| CliError::Core(PremiaError::Contract(e.to_string())))?;
    write_output(args.out.as_deref(), &(text + "\n"))
}

fn cmd_simulate(args: &SimulateArgs) -> Result<(), CliError> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if args.threads == Some(0) {
        return Err(CliError::Usage("--threads must be at least 1".into()));
    }
    let calibration = cfg.calibration_summary(args.config.parent())?;
    let grid = cfg.grid(&calibration);
    let boxed = cfg.estimators();
    let estimators: Vec<&dyn Estimator> = boxed.iter().map(|b| b.as_ref()).collect();
    let metrics = run_experiment(&grid, &estimators, cfg.spec(args.threads))?;
    let text = match args.output.format {
        Format::Csv => metrics_to_csv(&metrics),
        Format::Json => {
            serde_json::to_string_pretty(&metrics).map_err(|e| CliError::Core(PremiaError::Contract(e.to_string())))? + "\n"
        }
    };
    write_output(args.output.out.as_deref(), &text)
}
