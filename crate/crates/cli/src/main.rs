//! `hvdpo` command-line front end.
//!
//! Exit codes: 0 success, 1 usage error, 2 runtime failure.

mod commands;
mod runconfig;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hvdpo::data::ToyKind;

#[derive(Parser, Debug)]
#[command(name = "hvdpo", version, about = "Preference-optimized video diffusion at desk scale")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate synthetic toy videos and an index.
    GenToy(GenToy),
    /// Attach scores from a CSV file to a dataset index.
    Score(Score),
    /// Build preference pairs from a scored dataset.
    Pair(Pair),
    /// Stage A: denoising training from scratch.
    TrainA(TrainA),
    /// Stage B: LoRA preference fine-tuning against a frozen reference.
    TrainB(TrainB),
    /// DDIM-invert a video to a latent.
    Invert(Invert),
    /// Sample a video from a first frame or a latent.
    Sample(Sample),
    /// Temporal consistency report (SSIM and MSE of consecutive frames).
    Eval(Eval),
    /// Finite-difference check of every primitive and the pair loss.
    Gradcheck(Gradcheck),
    /// Print checkpoint metadata.
    ShowCheckpoint(ShowCheckpoint),
}

#[derive(Args, Debug)]
pub struct Geometry {
    #[arg(long, default_value_t = 8)]
    pub frames: usize,
    #[arg(long, default_value_t = 4)]
    pub channels: usize,
    #[arg(long, default_value_t = 16)]
    pub height: usize,
    #[arg(long, default_value_t = 16)]
    pub width: usize,
}

#[derive(Args, Debug)]
pub struct GenToy {
    #[arg(long)]
    pub kind: ToyKind,
    #[arg(long)]
    pub count: usize,
    /// 1.0 is clean, 0.0 adds full-strength noise.
    #[arg(long)]
    pub quality: f64,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value_t = 0)]
    pub condition: usize,
    #[command(flatten)]
    pub geometry: Geometry,
    /// Output dataset directory; an existing index is extended.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct Score {
    #[arg(long)]
    pub data: PathBuf,
    /// CSV of `id,score` rows.
    #[arg(long)]
    pub scores: PathBuf,
    /// Directory for the updated index.tsv.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct Pair {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub count: usize,
    #[arg(long)]
    pub seed: u64,
    /// Output pairs.tsv.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrainFlags {
    /// Run file of `key = value` lines; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Any configuration key, as key=value. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Output checkpoint path.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TrainA {
    #[command(flatten)]
    pub train: TrainFlags,
    /// Seed of the initial weights; defaults to the run seed.
    #[arg(long)]
    pub init_seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct TrainB {
    #[command(flatten)]
    pub train: TrainFlags,
    /// Stage-A checkpoint used as base and frozen reference.
    #[arg(long = "ref")]
    pub reference: Option<PathBuf>,
    #[arg(long)]
    pub pairs: Option<PathBuf>,
    #[arg(long)]
    pub beta: Option<f64>,
}

#[derive(Args, Debug)]
pub struct Invert {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub video: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub condition: usize,
    #[arg(long, default_value_t = 100)]
    pub steps: usize,
    /// Fixed-point passes per inversion step.
    #[arg(long, default_value_t = 1)]
    pub refine: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct Sample {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Video whose frame 0 is kept as the clean first frame.
    #[arg(long, conflicts_with = "latent", required_unless_present = "latent")]
    pub first_frame: Option<PathBuf>,
    /// Latent from `invert` to sample from deterministically.
    #[arg(long)]
    pub latent: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub condition: usize,
    #[arg(long, default_value_t = 100)]
    pub steps: usize,
    #[arg(long, required_unless_present = "latent")]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct Eval {
    /// Dataset directory with index.tsv.
    #[arg(long, required_unless_present = "video")]
    pub data: Option<PathBuf>,
    /// Individual video files, scored under condition 0 with the file stem as id.
    #[arg(long, conflicts_with = "data")]
    pub video: Vec<PathBuf>,
    /// Checkpoint the videos came from, recorded by digest.
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    /// Output directory for report.json and report.tsv.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct Gradcheck {
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value_t = 20)]
    pub instances: usize,
    /// Optional TSV of every check.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ShowCheckpoint {
    #[arg(long)]
    pub ckpt: PathBuf,
}

/// Bad invocation detected after argument parsing.
#[derive(Debug)]
pub struct Usage(pub String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("HVDPO_LOG", "warn"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::GenToy(a) => commands::gen_toy(a),
        Command::Score(a) => commands::score(a),
        Command::Pair(a) => commands::pair(a),
        Command::TrainA(a) => commands::train_a(a),
        Command::TrainB(a) => commands::train_b(a),
        Command::Invert(a) => commands::invert(a),
        Command::Sample(a) => commands::sample(a),
        Command::Eval(a) => commands::eval(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
        Command::ShowCheckpoint(a) => commands::show_checkpoint(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => match e.downcast_ref::<Usage>() {
            Some(u) => {
                eprintln!("error: {u}");
                eprintln!("run `hvdpo help` for usage");
                ExitCode::from(1)
            }
            None => {
                eprintln!("error: {e:#}");
                ExitCode::from(2)
            }
        },
    }
}
