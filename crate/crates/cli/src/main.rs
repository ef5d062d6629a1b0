//! `tva`: run treatment variant aggregation on experimental data, sweep the
//! penalty, bootstrap, simulate, and diagnose designs.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use tva_core::dataset::{ingest, DatasetSchema};
use tva_core::pipeline::{self, PipelineConfig, CONFIG_VERSION};
use tva_core::precondition::{
    irrepresentability_csv, irrepresentability_table, singular_value_checks, IrrepresentabilityCell, SingularValueCheck,
};
use tva_core::selection::sweep_csv;
use tva_core::sim::{run_study, SimulationConfig};
use tva_core::{ErrorClass, Result, TvaError};

#[derive(Parser)]
#[command(name = "tva", version, about = "Treatment variant aggregation for factorial experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Select, pool, estimate and report the winner's-curse-adjusted best policy.
    Run(DataArgs),
    /// Repeat the analysis over a grid of LASSO penalties.
    Sweep(DataArgs),
    /// Rerun the analysis on bootstrap resamples.
    Bootstrap(BootstrapArgs),
    /// Monte Carlo study of TVA against direct OLS.
    Simulate(SimArgs),
    /// Irrepresentability norms and conditioning of the marginal design, for a
    /// dataset or, without `--data`, over a grid of symmetric designs.
    Diagnose(DiagnoseArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Args)]
struct Common {
    /// Directory for output files (created if missing).
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
    /// Seed for every randomized step.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
}

#[derive(Args)]
struct DataArgs {
    /// JSON file with `schema` and `pipeline` sections.
    #[arg(long)]
    config: PathBuf,
    /// CSV data with a header row.
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct BootstrapArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Number of bootstrap replicates (overrides the config).
    #[arg(long)]
    replicates: Option<usize>,
    /// Resample units from the whole sample instead of within policy cells.
    #[arg(long)]
    unstratified: bool,
}

#[derive(Args)]
struct SimArgs {
    /// JSON simulation config; defaults apply to missing fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct DiagnoseArgs {
    #[arg(long, requires = "data")]
    config: Option<PathBuf>,
    #[arg(long, requires = "config")]
    data: Option<PathBuf>,
    /// Dosage counts R for the design grid.
    #[arg(long, value_delimiter = ',', default_value = "3,4,5")]
    levels: Vec<usize>,
    /// Arm counts M for the design grid.
    #[arg(long, value_delimiter = ',', default_value = "2,3,4")]
    arms: Vec<usize>,
    /// Units per simulated design in the grid.
    #[arg(long, default_value_t = 10_000)]
    n: usize,
    #[command(flatten)]
    common: Common,
}

#[derive(Serialize)]
struct GridDiagnostics {
    irrepresentability: Vec<IrrepresentabilityCell>,
    singular_values: Vec<SingularValueCheck>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunConfig {
    #[serde(default = "default_version")]
    version: u32,
    schema: DatasetSchema,
    #[serde(default)]
    pipeline: PipelineConfig,
}

fn default_version() -> u32 {
    CONFIG_VERSION
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| TvaError::Io(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| TvaError::Validation(format!("{}: {e}", path.display())))
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| TvaError::Io(format!("{}: {e}", dir.display())))?;
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| TvaError::Io(format!("{}: {e}", path.display())))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn to_json<T: Serialize>(v: &T) -> Result<String> {
    serde_json::to_string_pretty(v).map(|s| s + "\n").map_err(|e| TvaError::Numerical(e.to_string()))
}

fn load(args: &DataArgs) -> Result<(tva_core::Dataset, PipelineConfig)> {
    let cfg: RunConfig = read_json(&args.config)?;
    if cfg.version != CONFIG_VERSION {
        return Err(TvaError::Validation(format!(
            "config version {} is not supported (expected {CONFIG_VERSION})",
            cfg.version
        )));
    }
    let data = ingest(&args.data, &cfg.schema)?;
    let mut pipeline = cfg.pipeline;
    if let Some(seed) = args.common.seed {
        pipeline.projection.seed = seed;
        if let Some(b) = pipeline.bootstrap.as_mut() {
            b.seed = seed;
        }
    }
    Ok((data, pipeline))
}

fn run(args: DataArgs) -> Result<()> {
    let (data, config) = load(&args)?;
    let report = pipeline::run_pipeline(&data, &config)?;
    let out = &args.common.out_dir;
    match args.common.format {
        Format::Json => write(out, "report.json", &to_json(&report)?)?,
        Format::Csv => {
            write(out, "support.csv", &report.support_csv())?;
            write(out, "estimates.csv", &report.estimates_csv())?;
            write(out, "best_policy.csv", &report.best_policy_csv())?;
        }
    }
    let b = &report.best_policy;
    match (&b.label, &b.hybrid) {
        (Some(label), Some(h)) => println!(
            "best pool {label}: naive {:.4}, adjusted {:.4}, hybrid CI [{:.4}, {:.4}]",
            h.naive, h.adjusted_point, h.hybrid_ci.0, h.hybrid_ci.1
        ),
        _ => println!("no effective policy: every policy was pruned to control"),
    }
    Ok(())
}

fn sweep(args: DataArgs) -> Result<()> {
    let (data, config) = load(&args)?;
    let grid = config.sweep.clone().unwrap_or_default().grid;
    let points = pipeline::lambda_sweep(&data, &config, &grid)?;
    match args.common.format {
        Format::Json => write(&args.common.out_dir, "sweep.json", &to_json(&points)?),
        Format::Csv => write(&args.common.out_dir, "sweep.csv", &sweep_csv(&points, data.design.policy_count())),
    }
}

fn bootstrap(args: BootstrapArgs) -> Result<()> {
    let (data, config) = load(&args.data)?;
    let defaults = config.bootstrap.clone().unwrap_or_default();
    let replicates = args.replicates.unwrap_or(defaults.replicates);
    let stratify = defaults.stratify && !args.unstratified;
    let seed = args.data.common.seed.unwrap_or(defaults.seed);
    let report = pipeline::bootstrap_stability(&data, &config, replicates, stratify, seed)?;
    let out = &args.data.common.out_dir;
    match args.data.common.format {
        Format::Json => write(out, "bootstrap.json", &to_json(&report)?)?,
        Format::Csv => {
            let mut s = String::from("best_label,minimum_dosage_policy,count\n");
            for b in &report.best_policies {
                let p = b.minimum_dosage_policy.as_ref().map_or(String::new(), |p| p.to_string());
                s.push_str(&format!("\"{}\",\"{p}\",{}\n", b.label, b.count));
            }
            write(out, "bootstrap_best.csv", &s)?;
        }
    }
    println!(
        "support stability {:.3}, best-policy stability {:.3} over {} replicates ({} failed)",
        report.support_stability,
        report.best_policy_stability,
        report.replicates,
        report.failures.len()
    );
    Ok(())
}

fn simulate(args: SimArgs) -> Result<()> {
    let mut config: SimulationConfig = match &args.config {
        Some(p) => read_json(p)?,
        None => SimulationConfig::default(),
    };
    if let Some(seed) = args.common.seed {
        config.seed = seed;
    }
    let report = run_study(&config)?;
    let out = &args.common.out_dir;
    match args.common.format {
        Format::Json => write(out, "study.json", &to_json(&report)?)?,
        Format::Csv => {
            write(out, "study.csv", &report.to_csv())?;
            write(out, "summary.json", &to_json(&report.summary)?)?;
        }
    }
    if !report.failures.is_empty() {
        println!("{} replication(s) failed; see the report", report.failures.len());
    }
    Ok(())
}

fn diagnose(args: DiagnoseArgs) -> Result<()> {
    let (Some(config), Some(data)) = (args.config, args.data) else {
        return diagnose_grid(&args.levels, &args.arms, args.n, &args.common);
    };
    let args = DataArgs { config, data, common: args.common };
    let (data, _) = load(&args)?;
    let d = pipeline::diagnose(&data)?;
    match args.common.format {
        Format::Json => write(&args.common.out_dir, "diagnostics.json", &to_json(&d)?)?,
        Format::Csv => {
            let mut s = String::from("policy,standardized,unstandardized\n");
            for r in &d.irrepresentability {
                s.push_str(&format!("\"{}\",{},{}\n", r.policy, r.standardized, r.unstandardized));
            }
            write(&args.common.out_dir, "irrepresentability.csv", &s)?;
        }
    }
    println!("minimum singular value of X/sqrt(n): {:.6}", d.min_singular_value);
    if let Some(l) = d.min_singular_value_limit {
        println!("uniform-assignment limit: {l:.6}");
    }
    Ok(())
}

fn diagnose_grid(levels: &[usize], arms: &[usize], n: usize, common: &Common) -> Result<()> {
    let irrepresentability = irrepresentability_table(levels, arms, n, common.seed.unwrap_or(0))?;
    let singular_values = singular_value_checks(levels, arms)?;
    match common.format {
        Format::Json => {
            let d = GridDiagnostics { irrepresentability, singular_values };
            write(&common.out_dir, "design_diagnostics.json", &to_json(&d)?)?;
        }
        Format::Csv => {
            write(&common.out_dir, "irrepresentability_table.csv", &irrepresentability_csv(&irrepresentability))?;
            let mut s = String::from("R,M,closed_form,numeric,abs_error\n");
            for c in &singular_values {
                s.push_str(&format!("{},{},{},{},{}\n", c.levels, c.arms, c.closed_form, c.numeric, c.abs_error));
            }
            write(&common.out_dir, "singular_values.csv", &s)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => run(a),
        Command::Sweep(a) => sweep(a),
        Command::Bootstrap(a) => bootstrap(a),
        Command::Simulate(a) => simulate(a),
        Command::Diagnose(a) => diagnose(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e.class() {
                ErrorClass::Validation => ExitCode::from(2),
                ErrorClass::Numerical => ExitCode::from(3),
            }
        }
    }
}
