use clap::Parser;
use ocp_fbde::cli::{execute, Cli, EXIT_PASS};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let outcome = execute(Cli::parse());
    if outcome.code == EXIT_PASS {
        println!("{}", outcome.message);
    } else {
        eprintln!("{}", outcome.message);
    }
    std::process::exit(outcome.code);
}
