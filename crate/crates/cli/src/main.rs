use std::process::ExitCode;

use clap::Parser;

use contourlab::exec::init_threads_from_env;
use contourlab_cli::{run, Cli};

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = init_threads_from_env() {
        log::info!("using {n} threads");
    }
    match run(&cli) {
        Ok(files) => {
            for f in files {
                println!("{}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            if e.exit_code() == 2 {
                eprintln!("usage: contourlab <critical|sweep|monodromy|melnikov|simulate3d|verify> --spec <file> [--out <dir>] [--seed <n>] [--tol-* <v>]");
            }
            ExitCode::from(e.exit_code())
        }
    }
}
