//! `vtrim`: compress visual tokens, model prefill cost, generate synthetic
//! inputs, and time the compressor.
//!
//! Exit codes: 0 success, 1 usage error, 2 I/O or file-format error,
//! 3 config or ratio error. Failures also print one JSON line on stderr:
//! `{"error": <code>, "exit": <n>, "message": <text>}`.

mod analyze;
mod commands;
mod config;

use std::fmt;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use vtrim_core::ErrorClass;

#[derive(Debug, Parser)]
#[command(
    name = "vtrim",
    version,
    about = "Training-free visual token compression"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Compress an LFT token file and write the provenance index map.
    Compress(commands::CompressArgs),
    /// Roofline prefill cost before/after reduction, or over a ratio sweep.
    Analyze(analyze::AnalyzeArgs),
    /// Generate synthetic visual and text token files.
    Gen(commands::GenArgs),
    /// Time the compressor over repeated runs.
    Bench(commands::BenchArgs),
}

/// Invalid flag combination, detected before any I/O.
#[derive(Debug)]
pub struct Usage(String);

impl Usage {
    pub fn new(msg: impl Into<String>) -> Self {
        Self(msg.into())
    }
}

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn classify(err: &anyhow::Error) -> (u8, &'static str) {
    if err.downcast_ref::<Usage>().is_some() {
        return (1, "usage");
    }
    if let Some(e) = err.downcast_ref::<vtrim_core::Error>() {
        let code = match e.class() {
            ErrorClass::Usage => 1,
            ErrorClass::Io => 2,
            ErrorClass::Config => 3,
        };
        return (code, e.code());
    }
    if err.downcast_ref::<std::io::Error>().is_some() {
        return (2, "io-failure");
    }
    (2, "error")
}

fn report(code: u8, kind: &str, message: &str) {
    let line = serde_json::json!({ "error": kind, "exit": code, "message": message });
    eprintln!("{line}");
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            report(1, "usage", e.kind().as_str().unwrap_or("invalid arguments"));
            return ExitCode::from(1);
        }
    };
    let result = match &cli.command {
        Command::Compress(a) => commands::compress(a),
        Command::Analyze(a) => analyze::run(a),
        Command::Gen(a) => commands::gen(a),
        Command::Bench(a) => commands::bench(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let (code, kind) = classify(&err);
            eprintln!("error: {err:#}");
            report(code, kind, &format!("{err:#}"));
            ExitCode::from(code)
        }
    }
}
