use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod settings;

use settings::UnitSelection;

/// Single-unit selectivity measures for stored network activations.
#[derive(Parser, Debug)]
#[command(name = "selectivity", version)]
struct Cli {
    /// key = value file; flags override its entries.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Input {
    /// Activation file (SELA binary or unit,image,value CSV).
    #[arg(long)]
    activations: Option<PathBuf>,
    /// binary or csv; guessed from the extension when omitted.
    #[arg(long)]
    format: Option<String>,
    /// image_id,class_id[,class_name]
    #[arg(long)]
    labels: Option<PathBuf>,
    /// image_id,predicted_class_id; restricts analysis to correct images.
    #[arg(long)]
    predictions: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Compute every measure for the selected units.
    Analyze {
        #[command(flatten)]
        input: Input,
        /// all, list:ID,ID,... or random:N
        #[arg(long)]
        units: Option<UnitSelection>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        threads: Option<usize>,
        /// Top-k window for precision.
        #[arg(long)]
        k: Option<usize>,
        /// Top-k window for the distinct-class count (defaults to k).
        #[arg(long)]
        classes_k: Option<usize>,
        #[arg(long)]
        precision_target: Option<f64>,
        /// expected or deterministic
        #[arg(long)]
        tie_mode: Option<String>,
        /// Class for the mean/proportion statistics.
        #[arg(long)]
        target_class: Option<u32>,
        /// CSV with unit_id and iou columns, e.g. dissect output.
        #[arg(long)]
        iou: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Draw one unit's jitterplot as SVG.
    Jitter {
        #[command(flatten)]
        input: Input,
        #[arg(long)]
        unit: Option<usize>,
        /// CLASS[:MARKER], repeatable.
        #[arg(long = "highlight")]
        highlight: Vec<String>,
        /// maxinf or NAME=VALUE, repeatable.
        #[arg(long = "annotate")]
        annotate: Vec<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score units against concept masks.
    Dissect {
        /// Per-unit activation maps (SELA version 2).
        #[arg(long)]
        maps: Option<PathBuf>,
        /// Per-concept masks (SELA version 2).
        #[arg(long)]
        masks: Option<PathBuf>,
        /// concept_id,name
        #[arg(long)]
        concepts: Option<PathBuf>,
        #[arg(long)]
        top_fraction: Option<f64>,
        #[arg(long)]
        units: Option<UnitSelection>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a synthetic dataset.
    #[command(allow_negative_numbers = true)]
    Synth {
        /// single_active, grandmother, uniform_offset, random, random_exponential
        scenario: Option<String>,
        #[arg(long)]
        classes: Option<usize>,
        #[arg(long)]
        per_class: Option<usize>,
        #[arg(long = "n-units")]
        n_units: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        delta: Option<f64>,
        #[arg(long)]
        baseline: Option<f64>,
        /// Derive the baseline from the CCMAS this offset should produce.
        #[arg(long)]
        target_ccmas: Option<f64>,
        #[arg(long)]
        noise: Option<f64>,
        #[arg(long)]
        active_value: Option<f64>,
        #[arg(long)]
        on_value: Option<f64>,
        #[arg(long)]
        zero_fraction: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Layer summary of a metrics table.
    Summarize {
        #[arg(long)]
        metrics: Option<PathBuf>,
        /// Comma-separated measure names; all by default.
        #[arg(long)]
        measures: Option<String>,
        /// Also list the top units by this measure.
        #[arg(long)]
        rank: Option<String>,
        #[arg(long)]
        top: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Pearson correlations between measures of a metrics table.
    Correlate {
        #[arg(long)]
        metrics: Option<PathBuf>,
        /// Comma-separated X:Y pairs; all pairs of the default set otherwise.
        #[arg(long)]
        pairs: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
