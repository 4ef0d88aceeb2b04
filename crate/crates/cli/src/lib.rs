//! Batch command-line tools around `gaze_core`.
//!
//! Exit codes: 0 on success, 1 when a verification fails, 2 for usage and
//! I/O errors.

pub mod commands;
pub mod config;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use config::Config;

#[derive(Debug, Parser)]
#[command(name = "gazetool", version, about = "Calibration, preprocessing and replay tools for RGB-D gaze estimation")]
pub struct Cli {
    /// JSON configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve the camera-to-screen extrinsics from mirrored board observations.
    CalibrateExtrinsics(CalibrateExtrinsicsArgs),
    /// Fit the per-subject bias from a replay CSV.
    CalibrateSubject(CalibrateSubjectArgs),
    /// Depth equalization, mask and eye-region reports; optional augmented copy.
    DepthPrep(DepthPrepArgs),
    /// Compare analytic and finite-difference gradients.
    GradCheck(GradCheckArgs),
    /// Train a small model on a planted linear mapping.
    FitToy(FitToyArgs),
    /// Write a randomly initialized replay model.
    InitModel(InitModelArgs),
    /// Run the gaze pipeline over every sample of a subject file.
    Replay(ReplayArgs),
    /// Summarize a replay CSV.
    Eval(EvalArgs),
    /// Generate on-screen targets for one collection phase.
    Protocol(ProtocolArgs),
    /// Print the subject split and fold tables as JSON.
    Splits,
    /// Write a synthetic subject file.
    Synth(SynthArgs),
    /// Normalize one face from its five landmarks.
    Normalize(NormalizeArgs),
    /// Write stored patches of a subject file as PNG images.
    ExportPatches(ExportPatchesArgs),
}

#[derive(Debug, Args)]
pub struct CalibrateExtrinsicsArgs {
    /// Observation JSON (intrinsics, board, monitor, images).
    pub observations: PathBuf,
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CalibrateSubjectArgs {
    /// Replay CSV holding raw predictions and labels.
    pub replay: PathBuf,
    #[arg(long, default_value = "subject")]
    pub subject: String,
    /// Only use samples of this phase (1, 2 or 3).
    #[arg(long)]
    pub phase: Option<u8>,
    /// Fit offsets only, scales fixed at zero.
    #[arg(long)]
    pub offset_only: bool,
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DepthPrepArgs {
    pub input: PathBuf,
    /// JSON report destination (default stdout).
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Write a copy with randomly removed depth rectangles.
    #[arg(long)]
    pub augment: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum ModelVariant {
    PreLn,
    PostLn,
    B2t,
    Mlp,
}

/// Model dimensions; unset values come from the config's `hyper` section.
#[derive(Debug, Args)]
pub struct ModelShape {
    #[arg(long, value_enum)]
    pub variant: Option<ModelVariant>,
    #[arg(long)]
    pub d_model: Option<usize>,
    #[arg(long)]
    pub d_ff: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    /// Token count including the class token.
    #[arg(long)]
    pub tokens: Option<usize>,
}

impl ModelShape {
    /// Hyperparameters and whether the MLP replaces the transformer.
    pub fn resolve(&self, base: &gaze_core::fusion::HyperParams) -> (gaze_core::fusion::HyperParams, bool) {
        use gaze_core::fusion::EncoderVariant;
        let mut hp = *base;
        hp.d_model = self.d_model.unwrap_or(hp.d_model);
        hp.d_ff = self.d_ff.unwrap_or(hp.d_ff);
        hp.n_heads = self.heads.unwrap_or(hp.n_heads);
        hp.n_layers = self.layers.unwrap_or(hp.n_layers);
        hp.n_tokens = self.tokens.unwrap_or(hp.n_tokens);
        let mlp = match self.variant {
            Some(ModelVariant::PreLn) => {
                hp.variant = EncoderVariant::PreLN;
                false
            }
            Some(ModelVariant::PostLn) => {
                hp.variant = EncoderVariant::PostLN;
                false
            }
            Some(ModelVariant::B2t) => {
                hp.variant = EncoderVariant::B2T;
                false
            }
            Some(ModelVariant::Mlp) => true,
            None => false,
        };
        (hp, mlp)
    }
}

#[derive(Debug, Args)]
pub struct GradCheckArgs {
    #[command(flatten)]
    pub shape: ModelShape,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 3)]
    pub batch: usize,
    #[arg(long, default_value_t = 1e-5)]
    pub eps: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
}

#[derive(Debug, Args)]
pub struct FitToyArgs {
    #[command(flatten)]
    pub shape: ModelShape,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 200)]
    pub epochs: usize,
    #[arg(long, default_value_t = 3e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.99)]
    pub lr_decay: f64,
    #[arg(long, default_value_t = 8)]
    pub batch: usize,
    #[arg(long, default_value_t = 64)]
    pub samples: usize,
    /// Size of the planted coefficients.
    #[arg(long, default_value_t = 0.5)]
    pub scale: f64,
    /// Exit with 1 unless the final MSE is below this.
    #[arg(long)]
    pub require_mse: Option<f64>,
    /// Parameter file to write.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Per-epoch loss CSV.
    #[arg(long)]
    pub loss_csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InitModelArgs {
    #[command(flatten)]
    pub shape: ModelShape,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    pub input: PathBuf,
    /// Parameter file written by `init-model` or a training run.
    #[arg(long, conflicts_with = "stub")]
    pub model: Option<PathBuf>,
    /// Use the stored labels instead of a model.
    #[arg(long)]
    pub stub: bool,
    #[arg(long, default_value_t = 0.0)]
    pub noise_deg: f64,
    #[arg(long, default_value_t = 0.0)]
    pub offset_pitch_deg: f64,
    #[arg(long, default_value_t = 0.0)]
    pub offset_yaw_deg: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// kalman, avg3 or none; overrides the config.
    #[arg(long)]
    pub filter: Option<gaze_core::filtering::FilterKind>,
    /// Bias JSON from `calibrate-subject`.
    #[arg(long)]
    pub bias: Option<PathBuf>,
    #[arg(long, default_value_t = 1.0 / 30.0)]
    pub frame_dt: f64,
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    pub input: PathBuf,
    #[arg(long, short)]
    pub out: Option<PathBuf>,
    /// Mean distance error per screen cell, as a CSV grid.
    #[arg(long)]
    pub heatmap: Option<PathBuf>,
    /// Heatmap cells as COLSxROWS.
    #[arg(long, default_value = "8x6")]
    pub bins: String,
    /// Screen size in pixels as WxH; defaults to the largest true point.
    #[arg(long)]
    pub extent: Option<String>,
}

#[derive(Debug, Args)]
pub struct MonitorArgs {
    #[arg(long, default_value_t = 3840.0)]
    pub width_px: f64,
    #[arg(long, default_value_t = 2160.0)]
    pub height_px: f64,
    #[arg(long, default_value_t = 597.0)]
    pub width_mm: f64,
    #[arg(long, default_value_t = 336.0)]
    pub height_mm: f64,
}

#[derive(Debug, Args)]
pub struct ProtocolArgs {
    #[arg(long)]
    pub phase: u8,
    #[command(flatten)]
    pub monitor: MonitorArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, short)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 500)]
    pub samples: usize,
    #[arg(long, default_value_t = 1)]
    pub sessions: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 32)]
    pub face_size: usize,
    #[arg(long, default_value_t = 8)]
    pub eye_size: usize,
}

#[derive(Debug, Args)]
pub struct NormalizeArgs {
    /// JSON with `intrinsics`, five `landmarks` and an optional `image` path.
    pub input: PathBuf,
    #[arg(long, short)]
    pub out: Option<PathBuf>,
    /// Write the warped face patch here (needs `image`).
    #[arg(long)]
    pub patch: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExportPatchesArgs {
    pub input: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Sample indices, e.g. `0,5,9`; all samples when omitted.
    #[arg(long, value_delimiter = ',')]
    pub samples: Vec<usize>,
}

/// A check the command performed did not pass (exit code 1). Every other
/// error is a usage or I/O problem (exit code 2).
#[derive(Debug, thiserror::Error)]
#[error("verification failed: {0}")]
pub struct VerificationFailed(pub String);

pub fn execute(cli: &Cli) -> anyhow::Result<()> {
    let cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    use commands::*;
    match &cli.command {
        Command::CalibrateExtrinsics(a) => calibrate_extrinsics(a),
        Command::CalibrateSubject(a) => calibrate_subject(a),
        Command::DepthPrep(a) => depth_prep(a, &cfg),
        Command::GradCheck(a) => grad_check(a, &cfg),
        Command::FitToy(a) => fit_toy(a, &cfg),
        Command::InitModel(a) => init_model(a, &cfg),
        Command::Replay(a) => replay(a, &cfg),
        Command::Eval(a) => eval(a),
        Command::Protocol(a) => protocol(a),
        Command::Splits => splits(),
        Command::Synth(a) => synth(a),
        Command::Normalize(a) => normalize(a, &cfg),
        Command::ExportPatches(a) => export_patches(a),
    }
}

pub fn exit_code(result: &anyhow::Result<()>) -> i32 {
    match result {
        Ok(()) => 0,
        Err(e) if e.downcast_ref::<VerificationFailed>().is_some() => 1,
        Err(_) => 2,
    }
}

/// Runs the command and reports failures on stderr; returns the exit code.
pub fn run(cli: &Cli) -> i32 {
    let result = execute(cli);
    if let Err(e) = &result {
        eprintln!("error: {e:#}");
    }
    exit_code(&result)
}
