//! `freqsel` command-line driver.

mod cmd;

use std::process::ExitCode;

use clap::Parser;

use cmd::{Cli, Outcome};

/// Exit status for validation and configuration errors.
const EXIT_INVALID: u8 = 1;
/// Exit status for filesystem errors.
const EXIT_IO: u8 = 2;
/// Exit status when the self-check suite reports a failure.
const EXIT_CHECK: u8 = 3;

fn exit_code(err: &anyhow::Error) -> u8 {
    let io = err.chain().any(|e| {
        e.downcast_ref::<freqsel::Error>().is_some_and(freqsel::Error::is_io)
            || e.downcast_ref::<std::io::Error>().is_some()
    });
    if io {
        EXIT_IO
    } else {
        EXIT_INVALID
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_INVALID)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match cmd::run(cli) {
        Ok(Outcome::Success) => ExitCode::SUCCESS,
        Ok(Outcome::CheckFailed) => ExitCode::from(EXIT_CHECK),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
