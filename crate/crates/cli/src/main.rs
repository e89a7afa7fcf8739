use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

mod commands;

#[derive(Parser)]
#[command(name = "bedfit", version, about = "Physics-constrained in-bed body fitting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the synthetic doll body model with a pose prior.
    SynthModel(SynthModelArgs),
    /// Generate a ground-truth motion, its keypoint track and a noisy init.
    SynthScenario(SynthScenarioArgs),
    /// Two-stage sliding-window fit of a keypoint track.
    Fit(FitArgs),
    /// Score the segment detectors against the winding-number oracle.
    DetectBench(DetectBenchArgs),
    /// Compare a fitted sequence with ground truth.
    Eval(EvalArgs),
    /// Finite-difference check of the model and objective gradients.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
pub struct SynthModelArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1500)]
    pub vertices: usize,
    /// Accepted for uniformity; the doll is fully determined by its spec.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args)]
pub struct SynthScenarioArgs {
    /// full, lifted or forearm-torso.
    #[arg(long, default_value = "full")]
    pub kind: String,
    #[arg(long, default_value_t = 192)]
    pub frames: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 30.0)]
    pub fps: f64,
    /// Keypoint noise standard deviation, pixels.
    #[arg(long, default_value_t = 2.0)]
    pub pixel_noise: f64,
    /// Initialization pose noise, radians.
    #[arg(long, default_value_t = 0.1)]
    pub theta_noise: f64,
    /// Initialization translation noise, meters.
    #[arg(long, default_value_t = 0.05)]
    pub trans_noise: f64,
    #[arg(long, default_value_t = 1500)]
    pub vertices: usize,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Args)]
pub struct FitArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub keypoints: PathBuf,
    #[arg(long)]
    pub camera: PathBuf,
    #[arg(long)]
    pub init: PathBuf,
    /// Weight profile JSON; the built-in tuned profile when absent.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// Fit configuration JSON; defaults when absent.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub loss_trace: Option<PathBuf>,
    /// Overrides the seed stored in the configuration.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args)]
pub struct DetectBenchArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, default_value_t = 500)]
    pub poses: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Omit wall-clock timings so the report is reproducible.
    #[arg(long)]
    pub no_timing: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long)]
    pub keypoints: Option<PathBuf>,
    /// Needed with --keypoints; the default top-view camera otherwise.
    #[arg(long)]
    pub camera: Option<PathBuf>,
    /// Profile whose stage-two gravity settings define stationary joints.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    #[arg(long)]
    pub fps: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct GradcheckArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Comma-separated term names or "all".
    #[arg(long, default_value = "all")]
    pub terms: String,
    #[arg(long, default_value_t = 1e-5)]
    pub eps: f64,
    #[arg(long, default_value_t = 10)]
    pub states: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub weights: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn fail(kind: &str, message: String) -> ExitCode {
    eprintln!("{}", json!({ "error": kind, "message": message }));
    ExitCode::FAILURE
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                e.exit();
            }
            let code = fail("usage", e.render().to_string().trim().to_string());
            return code;
        }
    };
    if let Err(e) = commands::configure_threads() {
        return fail(e.kind(), e.to_string());
    }
    let result = match cli.command {
        Command::SynthModel(a) => commands::synth_model(&a),
        Command::SynthScenario(a) => commands::synth_scenario(&a),
        Command::Fit(a) => commands::fit(&a),
        Command::DetectBench(a) => commands::detect_bench(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Gradcheck(a) => commands::gradcheck(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(e.kind(), e.to_string()),
    }
}
