use clap::Parser;
use orbit_census::cli::{run, Cli};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("ORBIT_CENSUS_LOG", "info")).init();
    let cli = Cli::parse();
    std::process::exit(run(&cli));
}
