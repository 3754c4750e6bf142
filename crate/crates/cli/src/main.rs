use clap::Parser;
use relay_scope_cli::commands::{execute, exit_code, Cli};

fn main() {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        2 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Err(e) = execute(&cli) {
        eprintln!("error: {e}");
        std::process::exit(exit_code(&e));
    }
}
