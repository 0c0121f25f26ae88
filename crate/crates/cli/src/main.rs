use clap::Parser;

use selfcol_cli::app::{execute, exit_code, Cli};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            std::process::exit(if e.use_stderr() { 1 } else { 0 });
        }
    };
    if let Err(e) = execute(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(exit_code(&e));
    }
}
