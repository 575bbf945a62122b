use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use log::error;

use trussmodal_cli::artifacts::{read_json, read_manifest};
use trussmodal_cli::checks::{self, Check};
use trussmodal_cli::pipeline::{self, AblationSummary, BaselineMethod, MethodResult};
use trussmodal_cli::{report, Ablation, CliError, Result, RunConfig, Stage, Workspace};

#[derive(Parser)]
#[command(name = "trussmodal", version, about = "Population-scale modal identification of trusses from sparse output-only measurements")]
struct Cli {
    /// TOML run configuration; missing keys fall back to the preset.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Base recipe: `full` (100 trusses) or `desk` (10 trusses).
    #[arg(long, global = true, default_value = "full")]
    preset: String,
    /// Run directory; overrides the configured one.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Global seed; overrides the configured one.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    Full,
    NoGnn,
    SetLstm,
    NoIndependence,
}

impl From<VariantArg> for Ablation {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Full => Ablation::Full,
            VariantArg::NoGnn => Ablation::NoGnn,
            VariantArg::SetLstm => Ablation::SetLstm,
            VariantArg::NoIndependence => Ablation::NoIndependence,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Efdd,
    Ssi,
    Both,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the truss population.
    GenPopulation,
    /// Simulate ambient-excited responses and reference modes.
    Simulate,
    /// Filter, subsample sensors, propagate features and write the dataset.
    Sense,
    /// Train a model variant.
    Train {
        #[arg(long, value_enum, default_value = "full")]
        variant: VariantArg,
    },
    /// Decompose every structure with a trained model.
    Decompose {
        #[arg(long, value_enum, default_value = "full")]
        variant: VariantArg,
    },
    /// Identify modal parameters from a decomposition and grade them.
    Identify {
        #[arg(long, value_enum, default_value = "full")]
        variant: VariantArg,
    },
    /// Classical output-only identification on the measured channels.
    Baseline {
        #[arg(long, value_enum, default_value = "both")]
        method: MethodArg,
    },
    /// Train and grade the configured ablation variants.
    Ablate,
    /// Render tables and figures.
    Report {
        /// Also evaluate the pass/fail checks; exit code 4 when any fails.
        #[arg(long)]
        check: bool,
    },
    /// Print a manifest, dataset summary or identification table.
    Inspect {
        /// Stage directory, dataset file or identification JSON.
        path: PathBuf,
    },
    /// Run the configured stages in order.
    Run {
        /// Comma-separated stages; defaults to the configured list.
        #[arg(long, value_delimiter = ',')]
        stages: Vec<String>,
        /// Evaluate the pass/fail checks at the end.
        #[arg(long)]
        check: bool,
    },
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let base = RunConfig::preset(&cli.preset)?;
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path, &base)?,
        None => base,
    };
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run_checks(ws: &Workspace) -> Result<()> {
    let main: MethodResult = read_json(&ws.identification(Ablation::Full), Stage::Identify)?;
    let mut results: Vec<Check> = checks::quality(&main.summary);
    let baselines: Vec<MethodResult> =
        ["efdd", "ssi"].iter().map(|m| ws.baseline(m)).filter(|p| p.exists()).map(|p| read_json(&p, Stage::Baseline)).collect::<Result<_>>()?;
    if !baselines.is_empty() {
        results.push(checks::method_ordering(&main, &baselines));
    }
    if ws.ablation_summary().exists() {
        let a: AblationSummary = read_json(&ws.ablation_summary(), Stage::Ablate)?;
        results.extend(checks::ablation_ordering(&a));
    }
    for c in &results {
        println!("{c}");
    }
    let failed = results.iter().filter(|c| !c.passed).count();
    if failed > 0 {
        return Err(CliError::Acceptance(format!("{failed} of {} checks failed", results.len())));
    }
    Ok(())
}

fn inspect(path: &Path) -> Result<()> {
    if path.is_dir() {
        let m = read_manifest(path)?;
        println!("stage {} (manifest v{}), seed {}, config {}", m.stage, m.manifest_version, m.seed, m.config_digest);
        for (kind, files) in [("input", &m.inputs), ("output", &m.outputs)] {
            for f in files {
                println!("  {kind:<6} {}  {}", f.sha256.as_deref().unwrap_or("(volatile)"), f.path);
            }
        }
        return Ok(());
    }
    if path.extension().is_some_and(|e| e == "tmg") {
        let m = trussmodal_core::graphdata::read_manifest(path)?;
        println!("dataset schema v{}, population seed {}", m.schema_version, m.population_seed);
        println!("  {} train / {} validation / {} test", m.counts.train, m.counts.validation, m.counts.test);
        println!("  {} steps at dt {} s, decimation {}, keep {}", m.simulation.n_steps, m.simulation.dt_s, m.sensing.decimation, m.sensing.keep_fraction);
        return Ok(());
    }
    let r: MethodResult = read_json(path, Stage::Identify)?;
    println!("method {}: {} structures, {} failed", r.method, r.structures.len(), r.failed.len());
    print!("{}", r.report.format_table());
    Ok(())
}

fn execute(cli: Cli) -> Result<()> {
    if let Command::Inspect { path } = &cli.command {
        return inspect(path);
    }
    let cfg = load_config(&cli)?;
    let ws = Workspace::new(&cfg.out_dir);
    match cli.command {
        Command::GenPopulation => pipeline::run_stage(&cfg, &ws, Stage::GenPopulation),
        Command::Simulate => pipeline::run_stage(&cfg, &ws, Stage::Simulate),
        Command::Sense => pipeline::run_stage(&cfg, &ws, Stage::Sense),
        Command::Train { variant } => {
            let s = pipeline::train(&cfg, &ws, variant.into(), pipeline::log_progress(Ablation::from(variant).name(), 100))?;
            println!("{} epochs, final train loss {:.5e}", s.epochs, s.final_train_loss);
            Ok(())
        }
        Command::Decompose { variant } => pipeline::decompose(&cfg, &ws, variant.into()).map(|_| ()),
        Command::Identify { variant } => {
            let r = pipeline::identify(&cfg, &ws, variant.into())?;
            print!("{}", r.report.format_table());
            Ok(())
        }
        Command::Baseline { method } => {
            let methods: &[BaselineMethod] = match method {
                MethodArg::Efdd => &[BaselineMethod::Efdd],
                MethodArg::Ssi => &[BaselineMethod::Ssi],
                MethodArg::Both => &BaselineMethod::ALL,
            };
            for r in pipeline::baseline(&cfg, &ws, methods)? {
                println!("[{}]", r.method);
                print!("{}", r.report.format_table());
            }
            Ok(())
        }
        Command::Ablate => {
            print!("{}", pipeline::ablate(&cfg, &ws)?.csv());
            Ok(())
        }
        Command::Report { check } => {
            report::render_report(&cfg, &ws)?;
            println!("report written to {}", ws.report_dir().display());
            if check {
                run_checks(&ws)
            } else {
                Ok(())
            }
        }
        Command::Run { stages, check } => {
            let mut cfg = cfg;
            if !stages.is_empty() {
                cfg.stages = stages.iter().map(|s| s.parse()).collect::<Result<_>>()?;
            }
            let ws = pipeline::run_pipeline(&cfg)?;
            if check {
                run_checks(&ws)
            } else {
                Ok(())
            }
        }
        Command::Inspect { .. } => unreachable!("handled above"),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
