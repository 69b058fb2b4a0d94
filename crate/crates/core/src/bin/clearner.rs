use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use clearner::datagen::{gen_heavy_tail, gen_kang_schafer, load_csv, HeavyTailConfig, KsConfig};
use clearner::estimators::{
    crossfit, Diagnostics, NuisanceSpec, OutcomeClass, PropensityClass, Recipe, RieszSpec, SplitMode,
};
use clearner::harness::{
    heavy_tail_diagnostic, heavy_tail_meta, metrics_markdown, read_raw_csv, render_report, report_from_raw, run_monte_carlo,
    ExperimentConfig, GbrtGrid, HeavyTailStudy, ReportFormat,
};
use clearner::{Error, Result};

/// Overrides every output directory.
const OUTPUT_ENV: &str = "CLEARNER_OUTPUT_DIR";

#[derive(Parser)]
#[command(name = "clearner", version, about = "Constrained-learning debiased estimation and Monte-Carlo benchmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Dgp {
    KangSchafer,
    HeavyTail,
}

#[derive(Clone, Copy, ValueEnum)]
enum Propensity {
    Logistic,
    L1,
    Known,
}

#[derive(Clone, Copy, ValueEnum)]
enum Outcome {
    Linear,
    Gbrt,
}

#[derive(Clone, Copy, ValueEnum)]
enum Estimand {
    /// Mean of the treated-arm potential outcome.
    Mmo,
    Ate,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Markdown,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset as CSV.
    Simulate {
        #[arg(long, value_enum, default_value = "kang-schafer")]
        dgp: Dgp,
        #[arg(long, default_value_t = 200)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Overlap scaling of the Kang-Schafer propensity.
        #[arg(long, default_value_t = 1.0)]
        c: f64,
        /// Emit the latent normals instead of the nonlinear covariates.
        #[arg(long)]
        well_specified: bool,
        #[arg(long)]
        flipped: bool,
        #[arg(long)]
        full_overlap: bool,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Run recipes on one dataset and print one JSON line per recipe.
    Estimate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "aipw,clearner_linear")]
        recipes: Vec<String>,
        #[arg(long)]
        truncation: Option<f64>,
        #[arg(long, value_enum, default_value = "logistic")]
        propensity: Propensity,
        /// Per-row L1 weight for `--propensity l1`.
        #[arg(long, default_value_t = 1e-4)]
        l1: f64,
        #[arg(long, value_enum, default_value = "linear")]
        outcome: Outcome,
        #[arg(long)]
        intercept: bool,
        #[arg(long, value_enum, default_value = "mmo")]
        estimand: Estimand,
        /// Number of cross-fitting folds; omit for a single split.
        #[arg(long)]
        folds: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run a Monte-Carlo experiment from a TOML config and render its tables.
    Benchmark {
        config: PathBuf,
        /// Search the full 36-point boosting grid with 2000-tree caps.
        #[arg(long)]
        full_grid: bool,
        /// Replace the configured replication count.
        #[arg(long)]
        replications: Option<usize>,
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Heavy-tail error quantiles, running variances and the tail ratio.
    Heavytail {
        #[arg(long, default_value_t = 500)]
        n: usize,
        #[arg(long, default_value_t = 5000)]
        replications: usize,
        #[arg(long, default_value_t = 0)]
        seed_base: u64,
        /// Also repeat the study this many times and report growth fractions.
        #[arg(long)]
        meta: Option<usize>,
    },
    /// Re-render metrics from a raw per-replication CSV.
    Report {
        raw: PathBuf,
        #[arg(long)]
        name: Option<String>,
        #[arg(long, value_enum, value_delimiter = ',', default_value = "csv,markdown")]
        format: Vec<Format>,
        #[arg(long, default_value_t = 100.0)]
        extreme_threshold: f64,
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
}

fn output_dir(flag: Option<PathBuf>, configured: Option<&Path>) -> PathBuf {
    if let Ok(dir) = std::env::var(OUTPUT_ENV) {
        return PathBuf::from(dir);
    }
    flag.or_else(|| configured.map(Path::to_path_buf)).unwrap_or_else(|| PathBuf::from("results"))
}

#[derive(Serialize)]
struct EstimateLine<'a> {
    recipe: &'a str,
    psi_hat: f64,
    variance: f64,
    ci_low: f64,
    ci_high: f64,
    diagnostics: &'a Diagnostics,
}

#[derive(Serialize)]
struct ErrorLine<'a> {
    recipe: &'a str,
    error: String,
}

fn json<T: Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("plain data serializes")
}

fn run(cli: Cli) -> Result<()> {
    let mut stdout = std::io::stdout().lock();
    match cli.command {
        Command::Simulate {
            dgp,
            n,
            seed,
            c,
            well_specified,
            flipped,
            full_overlap,
            out,
        } => {
            let ds = match dgp {
                Dgp::KangSchafer => gen_kang_schafer(&KsConfig {
                    n,
                    c,
                    misspecified: !well_specified,
                    flipped,
                    seed,
                })?,
                Dgp::HeavyTail => gen_heavy_tail(&HeavyTailConfig { n, seed, full_overlap })?,
            };
            ds.write_csv(&out)?;
            writeln!(stdout, "{} rows, sha256 {}", ds.n(), ds.fingerprint())?;
        }
        Command::Estimate {
            data,
            recipes,
            truncation,
            propensity,
            l1,
            outcome,
            intercept,
            estimand,
            folds,
            seed,
        } => {
            let recipes: Vec<Recipe> = recipes.iter().map(|r| r.parse()).collect::<Result<_>>()?;
            let ds = load_csv(&data)?;
            let spec = NuisanceSpec {
                outcome: match outcome {
                    Outcome::Linear => OutcomeClass::Linear,
                    Outcome::Gbrt => OutcomeClass::Gbrt,
                },
                propensity: match propensity {
                    Propensity::Logistic => PropensityClass::Logistic,
                    Propensity::L1 => PropensityClass::LogisticL1 { l1 },
                    Propensity::Known => PropensityClass::Known,
                },
                intercept,
                truncation,
                gbrt_grid: GbrtGrid::desk().expand(),
                ..NuisanceSpec::default()
            };
            let riesz = match estimand {
                Estimand::Mmo => RieszSpec::MeanMissingOutcome,
                Estimand::Ate => RieszSpec::FullAte,
            };
            let split = match folds {
                Some(k) => SplitMode::CrossFit { k },
                None => SplitMode::Single,
            };
            let plan = split.plan(ds.n(), seed)?;
            for recipe in recipes {
                match crossfit(&ds, plan.as_ref(), recipe, &spec, &riesz, seed) {
                    Ok(e) => writeln!(
                        stdout,
                        "{}",
                        json(&EstimateLine {
                            recipe: recipe.id(),
                            psi_hat: e.psi_hat,
                            variance: e.variance,
                            ci_low: e.ci_low,
                            ci_high: e.ci_high,
                            diagnostics: &e.diagnostics,
                        })
                    )?,
                    Err(Error::Config(m)) => return Err(Error::Config(m)),
                    Err(err) => writeln!(
                        stdout,
                        "{}",
                        json(&ErrorLine {
                            recipe: recipe.id(),
                            error: err.to_string(),
                        })
                    )?,
                }
            }
        }
        Command::Benchmark {
            config,
            full_grid,
            replications,
            output_dir: flag,
        } => {
            let mut cfg = ExperimentConfig::from_path(&config)?;
            if full_grid {
                cfg.gbrt = GbrtGrid::paper();
            }
            if let Some(r) = replications {
                cfg.replications = r;
            }
            let report = run_monte_carlo(&cfg)?;
            let dir = output_dir(flag, cfg.output_dir.as_deref());
            let files = render_report(&report, &cfg.formats, &dir)?;
            write!(stdout, "{}", metrics_markdown(&report.summaries))?;
            for f in files {
                writeln!(stdout, "wrote {}", f.display())?;
            }
        }
        Command::Heavytail {
            n,
            replications,
            seed_base,
            meta,
        } => {
            let study = HeavyTailStudy {
                n,
                replications,
                seed_base,
                checkpoints: [500, 1000, 2000, 5000].into_iter().filter(|&c| c <= replications).collect(),
                ..HeavyTailStudy::default()
            };
            let report = heavy_tail_diagnostic(&study)?;
            writeln!(stdout, "{}", serde_json::to_string_pretty(&report).expect("plain data serializes"))?;
            if let Some(m) = meta {
                let meta = heavy_tail_meta(&study, m)?;
                writeln!(stdout, "{}", serde_json::to_string_pretty(&meta).expect("plain data serializes"))?;
            }
        }
        Command::Report {
            raw,
            name,
            format,
            extreme_threshold,
            output_dir: flag,
        } => {
            let records = read_raw_csv(&raw)?;
            let name = name.unwrap_or_else(|| {
                raw.file_stem()
                    .and_then(|s| s.to_str())
                    .map(|s| s.trim_end_matches("_raw").to_string())
                    .unwrap_or_else(|| "report".into())
            });
            let report = report_from_raw(&name, records, extreme_threshold);
            let formats: Vec<ReportFormat> = format
                .into_iter()
                .map(|f| match f {
                    Format::Csv => ReportFormat::Csv,
                    Format::Markdown => ReportFormat::Markdown,
                })
                .collect();
            let files = render_report(&report, &formats, &output_dir(flag, None))?;
            write!(stdout, "{}", metrics_markdown(&report.summaries))?;
            for f in files {
                writeln!(stdout, "wrote {}", f.display())?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ Error::Config(_)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(3)
        }
    }
}
