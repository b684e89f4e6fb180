//! `sacfl` command-line runner: `run`, `compare` and `diagnose-layers`.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use sacfl_core::orchestrator::{run_layer_diagnostic, run_simulation, Method};

mod error;
mod load;
mod output;

pub use error::{CliError, Result, EXIT_CALIBRATION, EXIT_CONFIG, EXIT_FAILURE, EXIT_NUMERICAL, EXIT_OK};
pub use load::{config_hash, load_config, LoadedConfig, RunManifest};
pub use output::{comparison_csv, curves_csv, fmt_f64, layers_csv, metrics_csv, timings_csv};

/// Environment variable capping the worker threads used inside a round.
pub const THREADS_ENV: &str = "SACFL_THREADS";

#[derive(Debug, Parser)]
#[command(name = "sacfl", version, about = "Federated continual-learning simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Experiment config (JSON) or a manifest.json from an earlier run.
    #[arg(long)]
    pub config: PathBuf,
    /// Master seed; overrides the config's `seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory, created if missing.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Dot-path override, e.g. `--set training.local_epochs=2`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one experiment.
    Run(Common),
    /// Run several methods on the same stream and seed.
    Compare {
        #[command(flatten)]
        common: Common,
        /// Comma-separated methods.
        #[arg(long, value_delimiter = ',', default_value = "sacfl,fedavg,fedprox")]
        methods: Vec<String>,
    },
    /// Per-layer parameter change of a single client across task boundaries.
    DiagnoseLayers(Common),
}

/// Parses `args` (including the program name) and executes the command.
/// Returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match execute(&cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn thread_cap() -> Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(CliError::Threads(v)),
        },
    }
}

pub fn execute(command: &Command) -> Result<()> {
    match thread_cap()? {
        None => dispatch(command),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::Pool(e.to_string()))?
            .install(|| dispatch(command)),
    }
}

fn dispatch(command: &Command) -> Result<()> {
    match command {
        Command::Run(c) => cmd_run(c),
        Command::Compare { common, methods } => cmd_compare(common, methods),
        Command::DiagnoseLayers(c) => cmd_diagnose_layers(c),
    }
}

fn prepare(common: &Common, command: &str, methods: &[String]) -> Result<LoadedConfig> {
    let loaded = load_config(&common.config, &common.overrides, common.seed)?;
    output::create_dir(&common.out)?;
    output::write_json(&common.out.join("manifest.json"), &loaded.manifest(command, &common.out, methods))?;
    Ok(loaded)
}

pub fn cmd_run(common: &Common) -> Result<()> {
    let loaded = prepare(common, "run", &[])?;
    let out = run_simulation(&loaded.config)?;
    output::write_run(&common.out, loaded.config.seed, &out)?;
    println!(
        "{}: final average historical accuracy {:.4} over {} rounds",
        out.method.name(),
        out.final_accuracy.average,
        out.metrics.len()
    );
    Ok(())
}

fn parse_methods(common: &Common, names: &[String]) -> Result<Vec<Method>> {
    let invalid = |message: String| CliError::InvalidConfig { path: common.config.clone(), message };
    if names.is_empty() {
        return Err(invalid("no methods given".into()));
    }
    names.iter().map(|n| Method::parse(n.trim()).map_err(|e| invalid(e.to_string()))).collect()
}

pub fn cmd_compare(common: &Common, names: &[String]) -> Result<()> {
    let methods = parse_methods(common, names)?;
    let canonical: Vec<String> = methods.iter().map(|m| m.name().to_string()).collect();
    let loaded = prepare(common, "compare", &canonical)?;
    let mut runs = Vec::with_capacity(methods.len());
    for &m in &methods {
        let mut cfg = loaded.config.clone();
        cfg.method = m;
        cfg.validate()?;
        log::info!("running {}", m.name());
        let out = run_simulation(&cfg)?;
        let dir = common.out.join(m.name());
        output::create_dir(&dir)?;
        output::write_run(&dir, cfg.seed, &out)?;
        println!("{}: {:.4}", m.name(), out.final_accuracy.average);
        runs.push(out);
    }
    output::write_file(&common.out.join("comparison.csv"), &comparison_csv(&runs))?;
    output::write_file(&common.out.join("curves.csv"), &curves_csv(&runs))
}

pub fn cmd_diagnose_layers(common: &Common) -> Result<()> {
    let loaded = prepare(common, "diagnose-layers", &[])?;
    let diag = run_layer_diagnostic(&loaded.config)?;
    output::write_file(&common.out.join("layers.csv"), &layers_csv(&diag))?;
    output::write_json(&common.out.join("diagnostic.json"), &diag)?;
    println!("{}", diagnostic_verdict(&diag));
    Ok(())
}

/// One-line verdict for the final-layer observation.
pub fn diagnostic_verdict(diag: &sacfl_core::orchestrator::LayerDiagnostic) -> String {
    let status = if diag.degenerate {
        "DEGENERATE"
    } else if diag.final_layer_max_at_boundaries {
        "PASS"
    } else {
        "FAIL"
    };
    format!(
        "final layer largest change at boundary rounds {:?}: {status} (max layers {:?}, cumulative max {})",
        diag.boundary_rounds,
        diag.max_layer_at_boundaries,
        if diag.final_layer_max_cumulative { "final layer" } else { "earlier layer" }
    )
}
