use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use copeq::runner::{
    paired_sample_test, two_sample_test, Method, ModeSelection, OrderRule, TestConfig, TestReport,
};
use copeq_cli::error::{CliError, CliResult};
use copeq_cli::input::read_sample_csv;
use copeq_cli::study::{emit_csv, emit_text, run_study, version_string, StudyConfig};
use log::info;

#[derive(Parser)]
#[command(name = "copeq", about = "Two-sample tests for equality of copulas")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Test whether two samples share a copula.
    Test(TestArgs),
    /// Test whether the two halves of a paired sample share a copula.
    Paired(PairedArgs),
    /// Run a Monte Carlo level/power study from a TOML configuration.
    Simulate(SimulateArgs),
    /// Print the version.
    Version,
}

#[derive(Clone, Copy, ValueEnum)]
enum ReportFormat {
    Json,
    Kv,
}

#[derive(Args)]
struct CommonTestArgs {
    /// Comma-separated subset of multiplier,subsample.
    #[arg(long, default_value = "multiplier,subsample", value_delimiter = ',')]
    methods: Vec<String>,
    /// bernstein, empirical or both.
    #[arg(long, default_value = "both")]
    mode: String,
    /// Bernstein orders: `auto` or `M1,M2`.
    #[arg(long, default_value = "auto")]
    m: String,
    /// Replicate count.
    #[arg(long = "H", default_value_t = 200)]
    h: usize,
    /// Grid points per axis.
    #[arg(long, default_value_t = 20)]
    grid: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Nominal level used for the decisions printed to stderr.
    #[arg(long, default_value_t = 0.05)]
    level: f64,
    #[arg(long, value_enum, default_value = "json")]
    format: ReportFormat,
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TestArgs {
    #[arg(long)]
    x: Option<PathBuf>,
    #[arg(long)]
    y: Option<PathBuf>,
    /// A paired sample with 2d columns, as an alternative to --x/--y.
    #[arg(long)]
    paired: Option<PathBuf>,
    #[arg(long)]
    dim: Option<usize>,
    #[command(flatten)]
    common: CommonTestArgs,
}

#[derive(Args)]
struct PairedArgs {
    #[arg(long)]
    z: PathBuf,
    /// Dimension of each half; defaults to half the column count.
    #[arg(long)]
    dim: Option<usize>,
    #[command(flatten)]
    common: CommonTestArgs,
}

#[derive(Args)]
struct SimulateArgs {
    config: PathBuf,
    /// Output directory (overrides `output` in the configuration).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; COPEQ_THREADS takes precedence.
    #[arg(long)]
    threads: Option<usize>,
    /// 100 repetitions and H = 100.
    #[arg(long)]
    fast: bool,
}

fn test_config(a: &CommonTestArgs) -> CliResult<TestConfig> {
    let methods = a
        .methods
        .iter()
        .map(|m| match m.trim() {
            "multiplier" => Ok(Method::Multiplier),
            "subsample" => Ok(Method::Subsample),
            other => Err(CliError::Config(format!("unknown method '{other}'"))),
        })
        .collect::<CliResult<Vec<_>>>()?;
    let mode = match a.mode.as_str() {
        "bernstein" => ModeSelection::Bernstein,
        "empirical" => ModeSelection::Empirical,
        "both" => ModeSelection::Both,
        other => return Err(CliError::Config(format!("unknown mode '{other}'"))),
    };
    let orders = if a.m == "auto" {
        OrderRule::Auto
    } else {
        let parts: Vec<usize> = a
            .m
            .split(',')
            .map(|p| p.trim().parse())
            .collect::<Result<_, _>>()
            .map_err(|_| CliError::Config(format!("--m expects 'auto' or 'M1,M2', got '{}'", a.m)))?;
        match parts[..] {
            [m1, m2] => OrderRule::Explicit { m1, m2 },
            _ => return Err(CliError::Config(format!("--m expects two orders, got '{}'", a.m))),
        }
    };
    if !(a.level > 0.0 && a.level < 1.0) {
        return Err(CliError::Config(format!("--level must lie in (0, 1), got {}", a.level)));
    }
    Ok(TestConfig {
        mode,
        orders,
        methods,
        replicates: a.h,
        grid_points: a.grid,
        seed: a.seed,
        ..TestConfig::default()
    })
}

fn write_report(report: &TestReport, a: &CommonTestArgs) -> CliResult<()> {
    let text = match a.format {
        ReportFormat::Json => report.to_json() + "\n",
        ReportFormat::Kv => report.to_key_value(),
    };
    match &a.out {
        Some(path) => std::fs::write(path, text)?,
        None => print!("{text}"),
    }
    for e in &report.entries {
        let verdict = if e.p_value <= a.level { "reject" } else { "keep" };
        eprintln!("{} {} {}: p = {:.4} ({verdict} at {})", e.mode, e.method, e.statistic, e.p_value, a.level);
    }
    info!("test finished in {:.3} s", report.wall_time.as_secs_f64());
    Ok(())
}

fn run_paired(path: &Path, dim: Option<usize>, common: &CommonTestArgs) -> CliResult<()> {
    let z = read_sample_csv(path)?;
    let d = dim.unwrap_or(z.dim() / 2);
    if z.dim() != 2 * d {
        return Err(CliError::Input(format!(
            "{}: a paired sample of dimension {d} needs {} columns, found {}",
            path.display(),
            2 * d,
            z.dim()
        )));
    }
    let report = paired_sample_test(&z, d, &test_config(common)?)?;
    write_report(&report, common)
}

fn run_test(args: &TestArgs) -> CliResult<()> {
    if let Some(path) = &args.paired {
        return run_paired(path, args.dim, &args.common);
    }
    let (Some(xp), Some(yp)) = (&args.x, &args.y) else {
        return Err(CliError::Config("test needs --x and --y, or --paired".into()));
    };
    let cfg = test_config(&args.common)?;
    let x = read_sample_csv(xp)?;
    let y = read_sample_csv(yp)?;
    if x.dim() != y.dim() {
        return Err(CliError::Input(format!(
            "{} has {} columns but {} has {}",
            xp.display(),
            x.dim(),
            yp.display(),
            y.dim()
        )));
    }
    let report = two_sample_test(&x, &y, &cfg)?;
    write_report(&report, &args.common)
}

fn thread_count(flag: Option<usize>) -> CliResult<Option<usize>> {
    match std::env::var("COPEQ_THREADS") {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| CliError::Config(format!("COPEQ_THREADS must be a positive integer, got '{v}'"))),
        Err(_) => Ok(flag),
    }
}

fn run_simulate(args: &SimulateArgs) -> CliResult<()> {
    let text = std::fs::read_to_string(&args.config)
        .map_err(|e| CliError::Input(format!("{}: cannot read file: {e}", args.config.display())))?;
    let mut cfg = StudyConfig::from_toml(&text)?;
    if args.fast {
        cfg.apply_fast();
    }
    let out_dir = args.out.clone().or_else(|| cfg.output.clone()).unwrap_or_else(|| PathBuf::from("."));
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(t) = thread_count(args.threads)? {
        pool = pool.num_threads(t);
    }
    let pool = pool.build().map_err(|e| CliError::Config(format!("cannot start worker pool: {e}")))?;
    let outcome = pool.install(|| run_study(&cfg))?;
    std::fs::create_dir_all(&out_dir)?;
    std::fs::write(out_dir.join("study.csv"), emit_csv(&outcome.rows))?;
    let table = emit_text(&outcome.rows);
    std::fs::write(out_dir.join("study.txt"), &table)?;
    let manifest = serde_json::to_string_pretty(&outcome.manifest).expect("manifest serializes") + "\n";
    std::fs::write(out_dir.join("manifest.json"), manifest)?;
    print!("{table}");
    info!(
        "{} tests in {:.1} s on {} threads",
        outcome.manifest.tests_executed, outcome.manifest.wall_seconds, outcome.manifest.threads
    );
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Test(a) => run_test(a),
        Command::Paired(a) => run_paired(&a.z, a.dim, &a.common),
        Command::Simulate(a) => run_simulate(a),
        Command::Version => {
            println!("copeq {}", version_string());
            Ok(())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
