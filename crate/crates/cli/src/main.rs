use clap::Parser;
use std::process::ExitCode;

fn main() -> ExitCode {
    let cli = toon3d_cli::commands::Cli::parse();
    match toon3d_cli::commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
