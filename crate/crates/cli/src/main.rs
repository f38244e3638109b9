use std::process::ExitCode;

use clap::Parser;

mod args;
mod commands;

use args::{Cli, Command};

/// A command failure and the exit code it maps to.
#[derive(Debug)]
pub enum Failure {
    /// Bad flags, unreadable inputs, or invalid configuration: exit 2.
    Usage(String),
    /// Anything that goes wrong once work has started: exit 1.
    Runtime(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Runtime(_) => 1,
        }
    }
}

pub type CmdResult<T = ()> = Result<T, Failure>;

/// Tags a library error as a usage or runtime failure.
pub trait Classify<T> {
    fn usage(self, context: &str) -> CmdResult<T>;
    fn runtime(self, context: &str) -> CmdResult<T>;
}

impl<T, E: std::fmt::Display> Classify<T> for Result<T, E> {
    fn usage(self, context: &str) -> CmdResult<T> {
        self.map_err(|e| Failure::Usage(format!("{context}: {e}")))
    }
    fn runtime(self, context: &str) -> CmdResult<T> {
        self.map_err(|e| Failure::Runtime(format!("{context}: {e}")))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Train(a) => commands::train(a),
        Command::Generate(a) => commands::generate(a),
        Command::Edit(a) => commands::edit(a),
        Command::Classify(a) => commands::classify(a),
        Command::Sweep(a) => commands::sweep(a),
        Command::EditServer(a) => commands::edit_server(a),
        Command::Analyze(a) => commands::analyze(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (Failure::Usage(msg) | Failure::Runtime(msg)) = &f;
            eprintln!("error: {msg}");
            ExitCode::from(f.code())
        }
    }
}
