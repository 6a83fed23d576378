use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use antiflipper::cli::{cmd_compare, cmd_run, format_table, summary_line, RunManifest};
use antiflipper::config::parse_override;
use antiflipper::defense::compute_overhead_estimate;
use antiflipper::metrics::EmitOptions;
use antiflipper::Error;

#[derive(Parser)]
#[command(name = "antiflipper", version, about = "Federated label-flipping defense simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Override a config key, e.g. `--set sgd.learning_rate=0.1`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    /// Output directory.
    #[arg(long, env = "ANTIFLIPPER_OUT", default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write its metrics.
    Run {
        config: PathBuf,
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        no_csv: bool,
        #[arg(long)]
        no_json: bool,
        #[arg(long)]
        no_summary: bool,
    },
    /// Run several configs under a shared seed and print a comparison table.
    Compare {
        #[arg(required = true)]
        configs: Vec<PathBuf>,
        #[command(flatten)]
        common: Common,
        /// Seed shared by every run; defaults to the first config's.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Print the relative client-side cost of local evaluation.
    EstimateOverhead {
        #[arg(long)]
        epochs: usize,
        #[arg(long)]
        eval_fraction: f64,
    },
}

fn exit_code(err: &Error) -> ExitCode {
    if err.is_config() {
        ExitCode::from(2)
    } else {
        ExitCode::from(3)
    }
}

fn parse_overrides(raw: &[String]) -> Result<Vec<(String, toml::Value)>, Error> {
    raw.iter().map(|s| parse_override(s)).collect()
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Run {
            config,
            common,
            no_csv,
            no_json,
            no_summary,
        } => {
            let manifest = RunManifest {
                config_path: config,
                out_dir: common.out,
                overrides: parse_overrides(&common.overrides)?,
                emit: EmitOptions {
                    csv: !no_csv,
                    json: !no_json,
                    summary: !no_summary,
                },
            };
            let outcome = cmd_run(&manifest)?;
            println!("{}", summary_line(&outcome));
            println!("wrote {}", manifest.out_dir.display());
        }
        Command::Compare {
            configs,
            common,
            seed,
        } => {
            let overrides = parse_overrides(&common.overrides)?;
            let rows = cmd_compare(&configs, &overrides, seed, &common.out)?;
            print!("{}", format_table(&rows));
            println!("wrote {}", common.out.join("compare.csv").display());
        }
        Command::EstimateOverhead {
            epochs,
            eval_fraction,
        } => {
            let overhead = compute_overhead_estimate(epochs, eval_fraction)
                .map_err(|e| Error::Config {
                    key: "estimate-overhead".into(),
                    message: e.to_string(),
                })?;
            println!("{overhead} ({:.2}%)", overhead * 100.0);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            exit_code(&err)
        }
    }
}
