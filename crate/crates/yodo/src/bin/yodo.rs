use std::process::ExitCode;

use clap::Parser;
use yodo::cli::{expand_config, Cli, Command};
use yodo::commands;
use yodo::error::EXIT_USAGE;

fn main() -> ExitCode {
    let args = match expand_config(std::env::args_os().collect()) {
        Ok(a) => a,
        Err(msg) => {
            eprintln!("error: {msg}");
            return ExitCode::from(EXIT_USAGE as u8);
        }
    };
    let cli = Cli::parse_from(args);
    let result = match &cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::TrainYodo(a) => commands::train_yodo(a),
        Command::TrainFixed(a) => commands::train_fixed_cmd(a),
        Command::Sweep(a) => commands::sweep(a),
        Command::Compare(a) => commands::compare(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
