mod args;
mod commands;

use clap::Parser;

use crate::args::Cli;
use crate::commands::Ctx;

fn main() {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).parse_env("MOPREF_LOG").init();
    if let Some(j) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(j.max(1)).build_global() {
            log::warn!("could not size the worker pool: {e}");
        }
    }
    let ctx = Ctx { seed: cli.seed, jobs: cli.jobs, json: cli.json };
    if let Err(e) = commands::run(&ctx, &cli.command) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
