use clap::Parser;
use tracing_subscriber::EnvFilter;

use samurai::cli::Cli;

fn main() {
    let filter = EnvFilter::try_from_env("SAMURAI_LOG").unwrap_or_else(|_| EnvFilter::new("warn"));
    tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .init();

    let cli = Cli::parse();
    if let Err(err) = samurai::cli::run(cli) {
        eprintln!("error: {err}");
        std::process::exit(err.exit_code());
    }
}
