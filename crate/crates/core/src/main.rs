use std::process::ExitCode;

use clap::Parser;

use bestnet::cli::{self, Cli};

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();

    if let Ok(v) = std::env::var("BESTNET_THREADS") {
        match v.parse::<usize>() {
            Ok(n) if n > 0 => {
                if let Err(e) = rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build_global()
                {
                    log::warn!("could not size thread pool: {e}");
                }
            }
            _ => log::warn!("ignoring BESTNET_THREADS={v}"),
        }
    }

    let argv: Vec<String> = std::env::args().skip(1).collect();
    let parsed = Cli::parse();
    let recorded = cli::strip_out_dir(&argv);
    match cli::run(parsed, recorded) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
