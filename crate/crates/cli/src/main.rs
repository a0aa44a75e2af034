//! `mtb`: extinction vectors, backbone laws, Laplace curves and Monte Carlo
//! simulation for multitype continuous-state branching processes.
//!
//! Exit codes: 0 success, 1 a check or computation failed, 2 bad input.
//! `MTB_THREADS` caps the number of worker threads.

mod commands;
mod io;
mod verify;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::*;
use verify::VerifyArgs;

#[derive(Parser)]
#[command(name = "mtb", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Perron–Frobenius data and criticality of the mean matrix.
    Classify(MechArgs),
    /// Extinction vector w.
    Extinction(ExtinctionArgs),
    /// Conditioned mechanism ψ† = ψ(· + w) as mechanism JSON.
    Condition(MechArgs),
    /// Backbone branch rates, offspring tables and event mixture.
    Backbone(BackboneArgs),
    /// CSV of v_t(θ), V†_t f or (V†_t f, U_t h) on the RK4 grid.
    LaplaceCurve(LaplaceArgs),
    /// Total-mass paths (CSV) and a summary JSON on stdout.
    SimulateMcb(McbArgs),
    /// One backbone forest (JSON) and a summary JSON on stdout.
    SimulateBackbone(SimBackboneArgs),
    /// Dressed-process total-mass paths (CSV) and a summary JSON on stdout.
    SimulateDressed(DressedArgs),
    /// Run every check and emit a JSON-lines report.
    Verify(VerifyArgs),
}

fn configure_threads() -> anyhow::Result<()> {
    if let Ok(raw) = std::env::var("MTB_THREADS") {
        let n: usize = raw.parse().ok().filter(|n| *n > 0).ok_or_else(|| {
            io::input_error(format!(
                "MTB_THREADS must be a positive integer, got {raw:?}"
            ))
        })?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()?;
    }
    Ok(())
}

fn run(cli: &Cli) -> anyhow::Result<bool> {
    configure_threads()?;
    match &cli.command {
        Command::Classify(a) => classify(a),
        Command::Extinction(a) => extinction(a),
        Command::Condition(a) => condition_cmd(a),
        Command::Backbone(a) => backbone(a),
        Command::LaplaceCurve(a) => laplace_curve(a),
        Command::SimulateMcb(a) => simulate_mcb(a),
        Command::SimulateBackbone(a) => simulate_backbone_cmd(a),
        Command::SimulateDressed(a) => simulate_dressed_cmd(a),
        Command::Verify(a) => verify::verify(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            // library errors already embed their source in the message
            let mut msg = e.to_string();
            for cause in e.chain().skip(1) {
                let text = cause.to_string();
                if !msg.contains(&text) {
                    msg = format!("{msg}: {text}");
                }
            }
            eprintln!("error: {msg}");
            ExitCode::from(if io::is_input_error(&e) { 2 } else { 1 })
        }
    }
}
