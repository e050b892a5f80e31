mod args;
mod commands;
mod error;
mod input;
mod report;

use clap::Parser;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = args::Cli::parse();
    if let Err(e) = commands::run(cli.command) {
        eprintln!("semfx: {e}");
        std::process::exit(e.exit_code());
    }
}
