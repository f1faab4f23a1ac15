mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Debug, Parser, Serialize)]
#[command(name = "wavetree", version, about = "Waveform identification with a Z-squared decision tree")]
struct Cli {
    /// Master seed for synthesis, splitting and training.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Directory for every file the subcommand writes.
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
    /// Worker threads; defaults to available parallelism.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(tag = "subcommand", rename_all = "lowercase")]
enum Command {
    /// Generate a dataset over the SNR x class grid.
    Synth(SynthArgs),
    /// Fit a tree on the training split of a dataset.
    Train(TrainArgs),
    /// Evaluate a model on the test split (or all) of a dataset.
    Eval(EvalArgs),
    /// Print class labels for raw IQ or feature rows.
    Predict(PredictArgs),
    /// Measure tree-walk and end-to-end latency.
    Bench(BenchArgs),
    /// Emit the model as a C99 header plus test vectors.
    Export(ExportArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
enum ChannelArg {
    Awgn,
    Tdlc,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
enum StoreArg {
    Iq,
    Features,
    Both,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
enum CriterionArg {
    Ztest,
    Gini,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
enum ExportFormat {
    C99,
}

#[derive(Debug, Args, Serialize)]
struct SynthArgs {
    #[arg(long, value_enum, default_value = "awgn")]
    channel: ChannelArg,
    /// Comma-separated SNRs in dB.
    #[arg(long, value_delimiter = ',', default_values_t = [10.0, 20.0, 30.0])]
    snr_list: Vec<f64>,
    #[arg(long, default_value_t = 200)]
    segments: usize,
    /// 0 to 30 dB in 2 dB steps with 960 segments per class and SNR.
    #[arg(long, conflicts_with_all = ["snr_list", "segments"])]
    full_grid: bool,
    #[arg(long, value_delimiter = ',', default_values_t = [30.0, 90.0, 150.0, 210.0])]
    speeds: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = [300.0, 600.0])]
    delay_spreads: Vec<f64>,
    #[arg(long, value_enum, default_value = "both")]
    store: StoreArg,
    /// Dataset file name inside --out-dir.
    #[arg(long, default_value = "dataset.wvds")]
    output: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct SplitArgs {
    /// Fraction of each (class, SNR) stratum used for training.
    #[arg(long, default_value_t = 0.8)]
    split_ratio: f64,
}

#[derive(Debug, Args, Serialize)]
struct TrainArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[command(flatten)]
    split: SplitArgs,
    #[arg(long, default_value_t = 5)]
    k_folds: usize,
    #[arg(long, default_value_t = 3)]
    repeats: usize,
    #[arg(long, default_value_t = 20)]
    n_min: usize,
    #[arg(long, default_value_t = 3.84)]
    tau_sig: f64,
    #[arg(long, default_value_t = 256)]
    max_thresholds: usize,
    #[arg(long, value_enum, default_value = "ztest")]
    criterion: CriterionArg,
    /// Model file name inside --out-dir.
    #[arg(long, default_value = "model.ztree")]
    output: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    #[command(flatten)]
    split: SplitArgs,
    /// Evaluate every record instead of the test split.
    #[arg(long)]
    all: bool,
    /// Class pair whose confusion rates are tracked against SNR.
    #[arg(long, value_delimiter = ',', num_args = 2, default_values_t = ["OTFS".to_string(), "LoRa".to_string()])]
    pair: Vec<String>,
}

#[derive(Debug, Args, Serialize)]
#[group(required = true, multiple = false)]
struct PredictInput {
    /// Raw little-endian f32 interleaved I/Q, 1024 complex samples per segment.
    #[arg(long)]
    iq_file: Option<PathBuf>,
    /// Raw little-endian f32 feature rows, 80 per row.
    #[arg(long)]
    features_file: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    input: PredictInput,
}

#[derive(Debug, Args, Serialize)]
struct BenchArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    /// Tree walks to time.
    #[arg(long, default_value_t = 100_000)]
    reps: usize,
    /// Extraction plus walk passes to time; needs IQ in the dataset.
    #[arg(long, default_value_t = 2_000)]
    e2e_reps: usize,
}

#[derive(Debug, Args, Serialize)]
struct ExportArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, value_enum, default_value = "c99")]
    format: ExportFormat,
    /// Header file name inside --out-dir.
    #[arg(long, default_value = "wavetree_model.h")]
    output: PathBuf,
    /// Number of reference test vectors to dump; 0 skips the dump.
    #[arg(long, default_value_t = 10_000)]
    test_vectors: usize,
    /// Dataset whose feature rows seed the random test vectors.
    #[arg(long)]
    dataset: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments");
            let first = first.trim_start_matches("error: ");
            eprintln!("error: kind=usage message={:?}", first);
            return ExitCode::from(2);
        }
    };
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: kind={} message={:?}", e.kind, e.message);
            ExitCode::from(e.code)
        }
    }
}
