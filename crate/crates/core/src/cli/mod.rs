//! Command-line front end: `run`, `fit` and `validate`.

pub mod config;
pub mod scenarios;
pub mod schema;

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use crate::benchmarking::{clifford_fidelity, fit_gaussian_decay, fit_rb, read_decay_csv};
use crate::error::{Error, Result};
use config::{hex_digest, ResolvedConfig};
use scenarios::{run_scenario, scenario_modules, validate_scenario, Outputs};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "mobile-spin", version, about = "Conveyor-mode spin-qubit simulations and analysis")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a scenario and write its outputs plus manifest.json.
    Run {
        scenario: String,
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit a decay CSV and print the result as JSON.
    Fit {
        kind: FitKind,
        #[arg(long = "in")]
        input: PathBuf,
    },
    /// Parse and check a config without running anything.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FitKind {
    /// Columns: length, mean, stderr, n_sequences, n_shots.
    Rb,
    /// Columns: t, y. Fits `A exp(-(t/T2)^2) sin(2 pi f t + phi) + C`.
    Decay,
}

pub fn exit_code(e: &Error) -> i32 {
    if e.is_validation() || matches!(e, Error::Io(_)) {
        EXIT_VALIDATION
    } else {
        EXIT_NUMERICAL
    }
}

/// Parse `args` (including the program name) and execute. Returns the
/// process exit code; errors are reported on stderr.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_VALIDATION } else { EXIT_OK };
        }
    };
    match execute(&cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn execute(cmd: &Command) -> Result<()> {
    match cmd {
        Command::Run { scenario, config, seed, out } => run(scenario, config, *seed, out),
        Command::Fit { kind, input } => {
            let v = fit(*kind, input)?;
            println!("{}", serde_json::to_string_pretty(&v)?);
            Ok(())
        }
        Command::Validate { config } => {
            let cfg = ResolvedConfig::load(config)?;
            let name =
                cfg.scenario()?.ok_or_else(|| Error::Config("config has no top-level scenario = \"...\"".into()))?;
            validate_scenario(&name, &cfg)?;
            println!("{name}: ok (config sha256 {})", cfg.sha256());
            Ok(())
        }
    }
}

pub fn run(scenario: &str, config: &Path, seed: u64, out_dir: &Path) -> Result<()> {
    let cfg = ResolvedConfig::load(config)?;
    if let Some(named) = cfg.scenario()? {
        if named != scenario {
            return Err(Error::Config(format!("config is for scenario '{named}', not '{scenario}'")));
        }
    }
    validate_scenario(scenario, &cfg)?;
    std::fs::create_dir_all(out_dir)?;
    let mut out = Outputs::new(out_dir);
    run_scenario(scenario, &cfg, seed, &mut out)?;

    let mut files = Vec::new();
    for f in &out.files {
        let bytes = std::fs::read(out_dir.join(f))?;
        files.push(json!({ "name": f, "sha256": hex_digest(&bytes), "bytes": bytes.len() }));
    }
    let manifest = json!({
        "tool": "mobile-spin",
        "version": env!("CARGO_PKG_VERSION"),
        "scenario": scenario,
        "seed": seed,
        "config_sha256": cfg.sha256(),
        "modules": scenario_modules(scenario)
            .iter()
            .map(|m| (m.to_string(), json!(env!("CARGO_PKG_VERSION"))))
            .collect::<serde_json::Map<_, _>>(),
        "config": serde_json::to_value(&cfg.table)?,
        "files": files,
    });
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    std::fs::write(out_dir.join("manifest.json"), text)?;
    schema::validate_outputs(scenario, out_dir)
}

pub fn fit(kind: FitKind, input: &Path) -> Result<serde_json::Value> {
    match kind {
        FitKind::Rb => {
            let pts = read_decay_csv(std::fs::File::open(input)?)?;
            let f = fit_rb(&pts)?;
            Ok(json!({
                "a": f.a, "b": f.b, "p": f.p, "p_std": f.p_std, "chi2": f.chi2,
                "degenerate": f.degenerate, "clifford_fidelity": clifford_fidelity(f.p),
            }))
        }
        FitKind::Decay => {
            #[derive(serde::Deserialize)]
            struct Row {
                t: f64,
                y: f64,
            }
            let mut rdr = csv::Reader::from_path(input)?;
            let (mut t, mut y) = (Vec::new(), Vec::new());
            for r in rdr.deserialize::<Row>() {
                let r = r?;
                t.push(r.t);
                y.push(r.y);
            }
            let f = fit_gaussian_decay(&t, &y)?;
            Ok(serde_json::to_value(f)?)
        }
    }
}
