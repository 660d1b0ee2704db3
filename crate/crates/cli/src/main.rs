use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use linresp_cli::config::ExperimentConfig;
use linresp_cli::selftest::{self, Level, Tamper};
use linresp_cli::{export, runner, spectrum};

#[derive(Parser)]
#[command(name = "linresp", version, about = "Linear response on magnetic tight-binding tori")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the conductivity sweep described by a TOML config.
    Run {
        config: PathBuf,
        /// Overrides `output.directory`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check the library invariants on small models.
    Selftest {
        /// Also run the slower dynamical and ensemble checks.
        #[arg(long)]
        full: bool,
        #[arg(long, value_enum, hide = true)]
        tamper: Option<Tamper>,
    },
    /// Eigenvalues and density of states of the configured model.
    Spectrum {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Spectrum against rational flux `p/q`, `q <= butterfly.q_max`.
    Butterfly {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load(path: &PathBuf) -> Result<ExperimentConfig, String> {
    ExperimentConfig::load(path).map_err(|e| format!("config error: {e}"))
}

fn run(command: Command) -> Result<bool, String> {
    match command {
        Command::Run { config, out } => {
            let config = load(&config)?;
            let dir = out.unwrap_or_else(|| config.output.directory.clone());
            let report = runner::run_experiment(&config);
            let written = export::export(&report, &dir, &config.output.formats).map_err(|e| e.to_string())?;
            let failed = report.rows.iter().filter(|r| r.error.is_some()).count();
            for a in &report.route_agreement {
                println!(
                    "{} {}/{}: max difference {:.3e} over {} entries",
                    if a.pass { "agree" } else { "DISAGREE" },
                    a.a.name(),
                    a.b.name(),
                    a.max_difference,
                    a.comparisons
                );
            }
            println!("{} rows, {failed} failed", report.rows.len());
            for p in written {
                println!("wrote {}", p.display());
            }
            Ok(failed == 0)
        }
        Command::Selftest { full, tamper } => {
            let level = if full { Level::Full } else { Level::Quick };
            let results = selftest::run(level, tamper);
            for r in &results {
                println!("{} {} ({:.2}s): {}", if r.pass { "PASS" } else { "FAIL" }, r.name, r.secs, r.detail);
            }
            let failed: Vec<_> = results.iter().filter(|r| !r.pass).map(|r| r.name.as_str()).collect();
            if failed.is_empty() {
                println!("{} checks passed", results.len());
            } else {
                println!("failed: {}", failed.join(", "));
            }
            Ok(failed.is_empty())
        }
        Command::Spectrum { config, out } => {
            let config = load(&config)?;
            let dir = out.unwrap_or_else(|| config.output.directory.clone());
            for p in spectrum::spectrum(&config, &dir).map_err(|e| e.to_string())? {
                println!("wrote {}", p.display());
            }
            Ok(true)
        }
        Command::Butterfly { config, out } => {
            let config = load(&config)?;
            let dir = out.unwrap_or_else(|| config.output.directory.clone());
            let p = spectrum::butterfly(&config, &dir).map_err(|e| e.to_string())?;
            println!("wrote {}", p.display());
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse().command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(2)
        }
    }
}
