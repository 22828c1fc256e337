use clap::{Parser, Subcommand};

use lanetopo_cli::{
    cmd_connected, cmd_eval, cmd_fitdemo, cmd_gradcheck, cmd_predict, cmd_synth, ConnectedArgs, EvalArgs, FitdemoArgs,
    GradcheckArgs, PredictArgs, SynthArgs,
};

/// Lane and lane-topology toolkit: synthetic scenes, connected-lane
/// construction, topology prediction, evaluation and self-checks.
#[derive(Debug, Parser)]
#[command(name = "lanetopo", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate synthetic scenes with ground-truth topology.
    Synth(SynthArgs),
    /// Build ground-truth connected lanes for a scene.
    Connected(ConnectedArgs),
    /// Run the topology decoder on a scene.
    Predict(PredictArgs),
    /// Score predictions against ground truth.
    Eval(EvalArgs),
    /// Compare analytic and numeric gradients.
    Gradcheck(GradcheckArgs),
    /// Fit the topology head on a small scene.
    Fitdemo(FitdemoArgs),
}

fn main() {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Connected(a) => cmd_connected(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
        Command::Fitdemo(a) => cmd_fitdemo(a),
    };
    for m in &outcome.messages {
        if outcome.code == 0 {
            println!("{m}");
        } else {
            eprintln!("{m}");
        }
    }
    std::process::exit(outcome.code);
}
