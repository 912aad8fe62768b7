use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(
    name = "gcsim",
    version,
    about = "Transient simulation of a controllable series reactor"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the scenarios or sweep selected in a config file.
    Simulate {
        config: PathBuf,
        /// Output directory, overriding `output.dir`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write every channel over the whole run.
        #[arg(long)]
        full_waveforms: bool,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    // usage errors share the config exit code; clap's own code 2 would read as nonconvergence
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(gcsim_cli::exit::CONFIG as u8)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match cli.command {
        Command::Simulate {
            config,
            out,
            full_waveforms,
        } => match gcsim_cli::simulate(&config, out.as_deref(), full_waveforms) {
            Ok(report) => {
                for path in &report.written {
                    println!("{}", path.display());
                }
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("gcsim: {e}");
                ExitCode::from(e.exit_code() as u8)
            }
        },
    }
}
