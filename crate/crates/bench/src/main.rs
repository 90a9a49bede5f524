use std::process::ExitCode;

use clap::Parser;

use pathcas_bench::{emit, run_experiment, ExperimentConfig};

const EXIT_VALIDATION: u8 = 2;
const EXIT_CONFIG: u8 = 3;

fn main() -> ExitCode {
    let cfg = match ExperimentConfig::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            // --help / --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    match run_experiment(&cfg) {
        Ok(report) => {
            print!("{}", emit(&report, cfg.format));
            if report.ok {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_VALIDATION)
            }
        }
        Err(e) => {
            eprintln!("bench: {e}");
            ExitCode::from(EXIT_CONFIG)
        }
    }
}
