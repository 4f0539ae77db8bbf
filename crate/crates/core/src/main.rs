use clap::Parser;
use session_intent::cli::{run, Cli};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error[{}]: {}", e.code(), e.to_string().replace('\n', " "));
        std::process::exit(1);
    }
}
