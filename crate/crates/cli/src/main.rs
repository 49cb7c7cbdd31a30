use std::process::ExitCode;

use clap::Parser;
use smoothrig_cli::{run, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut stdout = std::io::stdout().lock();
    let mut stderr = std::io::stderr();
    match run(cli, &mut stdout, &mut stderr) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let label = if e.exit_code() == 3 { "warning" } else { "error" };
            eprintln!("{label}: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
