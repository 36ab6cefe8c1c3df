use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use localrhat::chains::{load_chains, ChainSet, Layout};
use localrhat::counterexamples::{detection_rates, laplace_uniform_pair, solve_counterexample, DetectionSummary, GpdPair};
use localrhat::diagnostics::{diagnose, rhat_curve_with_ess, DiagnoseConfig, Grid, Verdict};
use localrhat::multivariate::{bounds_csv, two_step_diagnosis, CopulaCalibration, DirectionSet, MvConfig, MvGrid};
use localrhat::population::{population_local_r, PopulationModel};
use localrhat::simulate::{example, simulate, ExampleOptions};
use localrhat::thresholds::{
    mv_thresholds, r_lim, table_csv, threshold_table, CACHED_TABLE, DEFAULT_REPS, DEFAULT_TARGET_ESS, TABLE_ALPHAS,
    TABLE_CHAINS, TABLE_SEED,
};

const EXIT_NOT_CONVERGED: u8 = 2;

#[derive(Parser)]
#[command(name = "localrhat", version, about = "Localized R-hat convergence diagnostics for MCMC output")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Diagnose a chains file; exits 0 when converged, 2 when not.
    Diagnose(DiagnoseArgs),
    /// R-hat(x) curve as CSV.
    Curve(CurveArgs),
    /// Threshold tables.
    Threshold(ThresholdArgs),
    /// Replications of a built-in example as long CSV.
    Simulate(SimulateArgs),
    /// Solve a GPD counterexample pair and measure detection rates.
    Counterexample(CounterexampleArgs),
    /// Two-step multivariate diagnosis, or copula bound tables.
    Mvdiag(MvdiagArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum LayoutArg {
    Wide,
    Long,
}

impl From<LayoutArg> for Layout {
    fn from(l: LayoutArg) -> Self {
        match l {
            LayoutArg::Wide => Layout::Wide,
            LayoutArg::Long => Layout::Long,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Clone, Copy, ValueEnum)]
enum CalibrationArg {
    Bonferroni,
    Direct,
}

impl From<CalibrationArg> for CopulaCalibration {
    fn from(c: CalibrationArg) -> Self {
        match c {
            CalibrationArg::Bonferroni => CopulaCalibration::Bonferroni,
            CalibrationArg::Direct => CopulaCalibration::Direct,
        }
    }
}

#[derive(Args)]
struct Input {
    /// CSV file of draws.
    input: PathBuf,
    /// File layout; guessed from the header when omitted.
    #[arg(long, value_enum)]
    layout: Option<LayoutArg>,
}

#[derive(Args)]
struct Output {
    /// Write here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DiagnoseArgs {
    #[command(flatten)]
    input: Input,
    #[command(flatten)]
    output: Output,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Fixed R-hat-infinity cutoff; for d > 1 it is used for both stages.
    #[arg(long)]
    threshold: Option<f64>,
    /// Null replications; 0 uses the cached table (univariate only).
    #[arg(long, default_value_t = DEFAULT_REPS)]
    reps: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Evaluate every k-th pooled order statistic.
    #[arg(long, default_value_t = 1)]
    stride: usize,
    #[arg(long, value_enum, default_value_t = CalibrationArg::Bonferroni)]
    calibration: CalibrationArg,
}

#[derive(Args)]
struct CurveArgs {
    #[command(flatten)]
    input: Input,
    #[command(flatten)]
    output: Output,
    #[arg(long, default_value_t = 1)]
    stride: usize,
    /// Population model JSON; adds a column with the population R(x).
    #[arg(long)]
    model: Option<PathBuf>,
}

#[derive(Args)]
struct ThresholdArgs {
    #[command(flatten)]
    output: Output,
    /// Numbers of chains (comma separated).
    #[arg(long, value_delimiter = ',')]
    m: Option<Vec<usize>>,
    /// Levels (comma separated).
    #[arg(long, value_delimiter = ',')]
    alpha: Option<Vec<f64>>,
    #[arg(long, default_value_t = DEFAULT_TARGET_ESS)]
    ess: f64,
    /// Dimension; d > 1 gives margin and copula cutoffs.
    #[arg(long, default_value_t = 1)]
    d: usize,
    #[arg(long, default_value_t = DEFAULT_REPS)]
    reps: usize,
    #[arg(long, default_value_t = TABLE_SEED)]
    seed: u64,
    /// Simulate instead of reading the cached table.
    #[arg(long)]
    recompute: bool,
    /// Asymptotic chi-square cutoffs instead of Monte Carlo quantiles.
    #[arg(long)]
    asymptotic: bool,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    output: Output,
    /// Example number, 1 to 6.
    #[arg(long)]
    example: u8,
    #[arg(long, default_value_t = 500)]
    reps: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    m: Option<usize>,
    /// Iterations per chain.
    #[arg(long)]
    n: Option<usize>,
    /// Dimension for example 5.
    #[arg(long)]
    d: Option<usize>,
}

#[derive(Args)]
struct CounterexampleArgs {
    #[command(flatten)]
    output: Output,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    xi1: f64,
    #[arg(long, default_value_t = -1.0, allow_hyphen_values = true)]
    xi2: f64,
    #[arg(long, default_value_t = 1.0)]
    sigma1: f64,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    mu1: f64,
    /// Use the Laplace/uniform pair instead of solving for a GPD pair.
    #[arg(long)]
    laplace: bool,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
    /// Replications for detection rates; 0 skips them.
    #[arg(long, default_value_t = 500)]
    reps: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
}

#[derive(Args)]
struct MvdiagArgs {
    /// CSV file of draws in long layout.
    input: Option<PathBuf>,
    #[command(flatten)]
    output: Output,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Fixed cutoff for both stages.
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_REPS)]
    reps: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Order statistics per coordinate; default fills a 10^6-point grid.
    #[arg(long)]
    points: Option<usize>,
    /// Use all 2^d directions instead of 2^(d-1).
    #[arg(long)]
    all_directions: bool,
    #[arg(long, value_enum, default_value_t = CalibrationArg::Bonferroni)]
    calibration: CalibrationArg,
    /// Emit the copula bound table for dimensions 2..=d instead.
    #[arg(long)]
    bounds: bool,
    #[arg(long, default_value_t = 6)]
    d: usize,
}

fn emit(output: &Output, text: &str) -> Result<()> {
    match &output.out {
        Some(path) => fs::write(path, text).with_context(|| format!("writing {}", path.display())),
        None => {
            let mut stdout = io::stdout().lock();
            stdout.write_all(text.as_bytes())?;
            stdout.flush()?;
            Ok(())
        }
    }
}

fn to_json<T: Serialize>(value: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(value)? + "\n")
}

fn guess_layout(path: &Path) -> Result<Layout> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let header = text.lines().next().unwrap_or_default();
    let first = header.split(',').next().unwrap_or_default().trim().trim_matches('"');
    Ok(if first == "chain" { Layout::Long } else { Layout::Wide })
}

fn read_input(input: &Input) -> Result<ChainSet> {
    let layout = match input.layout {
        Some(l) => l.into(),
        None => guess_layout(&input.input)?,
    };
    Ok(load_chains(&input.input, layout)?)
}

fn exit_for(verdict: Verdict) -> u8 {
    match verdict {
        Verdict::Converged => 0,
        Verdict::NotConverged => EXIT_NOT_CONVERGED,
    }
}

fn mv_config(
    alpha: f64,
    threshold: Option<f64>,
    reps: usize,
    seed: u64,
    points: Option<usize>,
    all: bool,
    calibration: CalibrationArg,
) -> MvConfig {
    MvConfig {
        alpha,
        thresholds: threshold.map(|t| localrhat::thresholds::MvThresholds { margin: t, copula: t }),
        reps,
        seed,
        grid: MvGrid {
            per_coordinate: points,
            ..MvGrid::default()
        },
        directions: if all { DirectionSet::Full } else { DirectionSet::Canonical },
        calibration: calibration.into(),
        ..MvConfig::default()
    }
}

fn cmd_diagnose(args: &DiagnoseArgs) -> Result<u8> {
    let cs = read_input(&args.input)?;
    if cs.dim() > 1 {
        let config = mv_config(args.alpha, args.threshold, args.reps, args.seed, None, false, args.calibration);
        let report = two_step_diagnosis(&cs, &config)?;
        emit(&args.output, &to_json(&report)?)?;
        return Ok(exit_for(report.verdict));
    }
    let config = DiagnoseConfig {
        alpha: args.alpha,
        threshold: args.threshold,
        grid: Grid::from_stride(args.stride),
        mc_reps: args.reps,
        seed: args.seed,
    };
    let report = diagnose(&cs, &config)?;
    emit(&args.output, &to_json(&report)?)?;
    Ok(exit_for(report.verdict))
}

fn cmd_curve(args: &CurveArgs) -> Result<u8> {
    let cs = read_input(&args.input)?;
    if cs.dim() != 1 {
        bail!("curve needs univariate draws, got d = {}", cs.dim());
    }
    let curve = rhat_curve_with_ess(&cs, &Grid::from_stride(args.stride))?;
    let text = match &args.model {
        None => curve.to_csv(),
        Some(path) => {
            let json = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let model: PopulationModel = serde_json::from_str(&json).context("parsing population model")?;
            model.validate()?;
            if model.m() != cs.num_chains() {
                bail!("model has {} chains, data has {}", model.m(), cs.num_chains());
            }
            let mut out = String::new();
            for (k, line) in curve.to_csv().lines().enumerate() {
                out.push_str(line);
                if k == 0 {
                    out.push_str(",r\n");
                } else {
                    out.push_str(&format!(",{}\n", population_local_r(&model, curve.points[k - 1].x)));
                }
            }
            out
        }
    };
    emit(&args.output, &text)?;
    Ok(0)
}

fn cmd_threshold(args: &ThresholdArgs) -> Result<u8> {
    let chains = args.m.clone().unwrap_or_else(|| TABLE_CHAINS.to_vec());
    let alphas = args.alpha.clone().unwrap_or_else(|| TABLE_ALPHAS.to_vec());
    if chains.is_empty() || alphas.is_empty() {
        bail!("need at least one m and one alpha");
    }
    if args.asymptotic {
        let rows = chains
            .iter()
            .map(|&m| alphas.iter().map(|&a| r_lim(m, a, args.ess)).collect())
            .collect::<localrhat::Result<Vec<Vec<f64>>>>()?;
        emit(&args.output, &table_csv(&chains, &alphas, &rows))?;
        return Ok(0);
    }
    if args.d > 1 {
        let mut out = String::from("d,m,alpha,margin,copula\n");
        for &m in &chains {
            for &a in &alphas {
                let t = mv_thresholds(m, args.d, a, args.ess, args.reps, args.seed)?;
                out.push_str(&format!("{},{m},{a},{:.6},{:.6}\n", args.d, t.margin, t.copula));
            }
        }
        emit(&args.output, &out)?;
        return Ok(0);
    }
    let cached = !args.recompute
        && args.ess == DEFAULT_TARGET_ESS
        && args.reps == DEFAULT_REPS
        && args.seed == TABLE_SEED
        && chains.iter().all(|m| TABLE_CHAINS.contains(m))
        && alphas.iter().all(|a| TABLE_ALPHAS.contains(a));
    let rows = if cached {
        chains
            .iter()
            .map(|m| {
                let i = TABLE_CHAINS.iter().position(|c| c == m).unwrap_or_default();
                alphas
                    .iter()
                    .map(|a| CACHED_TABLE[i][TABLE_ALPHAS.iter().position(|b| b == a).unwrap_or_default()])
                    .collect()
            })
            .collect()
    } else {
        threshold_table(&chains, &alphas, args.ess, args.reps, args.seed)?
    };
    emit(&args.output, &table_csv(&chains, &alphas, &rows))?;
    Ok(0)
}

fn cmd_simulate(args: &SimulateArgs) -> Result<u8> {
    let opts = ExampleOptions {
        m: args.m,
        n: args.n,
        d: args.d,
    };
    let scenario = example(args.example, opts)?;
    let result = simulate(&scenario, args.reps, args.seed)?;
    emit(&args.output, &result.to_csv())?;
    Ok(0)
}

#[derive(Serialize)]
#[serde(untagged)]
enum Pair {
    Gpd(GpdPair),
    Fixed {
        spec1: localrhat::DistributionSpec,
        spec2: localrhat::DistributionSpec,
    },
}

#[derive(Serialize)]
struct CounterexampleOutput {
    pair: Pair,
    detection: Option<DetectionSummary>,
}

fn cmd_counterexample(args: &CounterexampleArgs) -> Result<u8> {
    let (pair, spec1, spec2, m, n) = if args.laplace {
        let (a, b) = laplace_uniform_pair();
        (Pair::Fixed { spec1: a, spec2: b }, a, b, args.m.unwrap_or(2), args.n.unwrap_or(500))
    } else {
        let p = solve_counterexample(args.xi1, args.xi2, args.sigma1, args.mu1)?;
        (Pair::Gpd(p), p.spec1, p.spec2, args.m.unwrap_or(4), args.n.unwrap_or(200))
    };
    let detection = if args.reps > 0 {
        Some(detection_rates(spec1, spec2, m, n, args.reps, args.seed)?)
    } else {
        None
    };
    let text = match args.format {
        Format::Json => to_json(&CounterexampleOutput { pair, detection })?,
        Format::Csv => match detection {
            Some(d) => d.to_csv(),
            None => bail!("csv output needs --reps > 0"),
        },
    };
    emit(&args.output, &text)?;
    Ok(0)
}

fn cmd_mvdiag(args: &MvdiagArgs) -> Result<u8> {
    if args.bounds {
        if args.d < 2 {
            bail!("bounds need d >= 2");
        }
        let ds: Vec<usize> = (2..=args.d).collect();
        emit(&args.output, &bounds_csv(&ds)?)?;
        return Ok(0);
    }
    let Some(path) = &args.input else {
        bail!("mvdiag needs an input file unless --bounds is given");
    };
    let cs = load_chains(path, guess_layout(path)?)?;
    let config = mv_config(
        args.alpha,
        args.threshold,
        args.reps,
        args.seed,
        args.points,
        args.all_directions,
        args.calibration,
    );
    let report = two_step_diagnosis(&cs, &config)?;
    emit(&args.output, &to_json(&report)?)?;
    Ok(exit_for(report.verdict))
}

fn configure_threads() -> Result<()> {
    if let Ok(value) = std::env::var("RHAT_THREADS") {
        let threads: usize = value
            .trim()
            .parse()
            .with_context(|| format!("RHAT_THREADS must be a positive integer, got {value:?}"))?;
        if threads == 0 {
            bail!("RHAT_THREADS must be positive");
        }
        rayon::ThreadPoolBuilder::new().num_threads(threads).build_global()?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<u8> {
    configure_threads()?;
    match &cli.command {
        Command::Diagnose(a) => cmd_diagnose(a),
        Command::Curve(a) => cmd_curve(a),
        Command::Threshold(a) => cmd_threshold(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Counterexample(a) => cmd_counterexample(a),
        Command::Mvdiag(a) => cmd_mvdiag(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // usage errors share the data-error code
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
