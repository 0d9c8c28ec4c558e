use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let cli = match idclean::Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match idclean::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("idclean: error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
