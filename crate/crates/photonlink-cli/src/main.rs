//! Command-line front end for the photon-link simulation library.
//!
//! `photonlink run <config|recipe>` executes one scenario described by a
//! TOML document and writes CSV/JSON artifacts to an output directory.
//! `photonlink recipes` lists the embedded configurations; `photonlink
//! validate` checks a document without running it.

mod config;
mod output;
mod recipes;
mod scenarios;

use std::fmt;
use std::fs;
use std::path::Path;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

/// Failure classes, each with its own exit code so scripts can tell a bad
/// config (2) from a failed simulation (3) or reconstruction (4).
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Io(String),
    Simulation(String),
    Reconstruction(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
            CliError::Simulation(_) => 3,
            CliError::Reconstruction(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "{m}"),
            CliError::Io(m) => write!(f, "{m}"),
            CliError::Simulation(m) => write!(f, "simulation failed: {m}"),
            CliError::Reconstruction(m) => write!(f, "reconstruction failed: {m}"),
        }
    }
}

#[derive(Parser)]
#[command(
    name = "photonlink",
    version,
    about = "Simulate shaped microwave-photon transfer between two nodes"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario from a TOML config file or an embedded recipe name.
    Run {
        /// Path to a config file, or the name of an embedded recipe.
        source: String,
        /// Override a config value by dotted path, e.g. --set transfer.photons=2
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        /// Size of the worker thread pool (defaults to the CPU count).
        #[arg(long)]
        workers: Option<usize>,
    },
    /// List the embedded recipes, or print one with --show.
    Recipes {
        /// Print the full TOML of this recipe instead of the listing.
        #[arg(long, value_name = "NAME")]
        show: Option<String>,
    },
    /// Parse and validate a config without running it.
    Validate {
        /// Path to a config file, or the name of an embedded recipe.
        source: String,
        /// Override a config value by dotted path before validating.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
}

/// A source is a file path when one exists; otherwise an embedded recipe
/// name. Returns the TOML text and a short stem used to name the default
/// output directory.
fn resolve_source(source: &str) -> Result<(String, String), CliError> {
    let path = Path::new(source);
    if path.exists() {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let stem = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "run".into());
        return Ok((text, stem));
    }
    if let Some(recipe) = recipes::find(source) {
        return Ok((recipe.toml.to_string(), recipe.name.to_string()));
    }
    Err(CliError::Config(format!(
        "'{source}' is neither a readable file nor an embedded recipe \
         (run `photonlink recipes` for the list)"
    )))
}

fn cmd_run(source: &str, set: &[String], workers: Option<usize>) -> Result<(), CliError> {
    if let Some(n) = workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            log::warn!("worker pool already initialized: {e}");
        }
    }
    let (text, stem) = resolve_source(source)?;
    let cfg = config::parse_config(&text, set)?;
    let dir = cfg
        .output_dir
        .clone()
        .unwrap_or_else(|| format!("photonlink-out/{stem}"));
    let out = output::RunOutput::new(Path::new(&dir));
    let dir = scenarios::run_scenario(&cfg, out)?;

    // Echo the headline numbers so a terminal run is useful on its own.
    let summary_path = dir.join("summary.json");
    let summary: serde_json::Value = serde_json::from_str(
        &fs::read_to_string(&summary_path)
            .map_err(|e| CliError::Io(format!("cannot re-read summary: {e}")))?,
    )
    .map_err(|e| CliError::Io(format!("summary is not valid JSON: {e}")))?;
    println!("scenario: {}", cfg.scenario.name());
    if let Some(results) = summary["results"].as_object() {
        for (k, v) in results {
            println!("  {k}: {v}");
        }
    }
    println!("artifacts: {}", dir.display());
    Ok(())
}

fn cmd_recipes(show: Option<&str>) -> Result<(), CliError> {
    match show {
        Some(name) => {
            let recipe = recipes::find(name)
                .ok_or_else(|| CliError::Config(format!("no embedded recipe named '{name}'")))?;
            print!("{}", recipe.toml);
        }
        None => {
            let mut sorted: Vec<_> = recipes::RECIPES.iter().collect();
            sorted.sort_by_key(|r| r.name);
            let width = sorted.iter().map(|r| r.name.len()).max().unwrap_or(0);
            for r in sorted {
                println!("{:width$}  {}", r.name, r.description);
            }
        }
    }
    Ok(())
}

fn cmd_validate(source: &str, set: &[String]) -> Result<(), CliError> {
    let (text, _) = resolve_source(source)?;
    let cfg = config::parse_config(&text, set)?;
    println!("ok: {} scenario", cfg.scenario.name());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run {
            source,
            set,
            workers,
        } => cmd_run(source, set, *workers),
        Command::Recipes { show } => cmd_recipes(show.as_deref()),
        Command::Validate { source, set } => cmd_validate(source, set),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
