use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(
    name = "meshsplat",
    version,
    about = "Mesh-rigged Gaussian splat avatars: fit, render and edit"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic head dataset with ground truth.
    Synth(SynthArgs),
    /// Fit a splat scene to a dataset (modeling stage).
    Fit(FitArgs),
    /// Pose and render a scene at selected (t, p) views.
    Render(RenderArgs),
    /// Edit a fitted scene from a text prompt (editing stage).
    Edit(EditArgs),
    /// Compute PSNR/SSIM over view sets.
    Eval(EvalArgs),
    /// Check analytic gradients against central finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Output directory for the dataset tree.
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 8)]
    pub cameras: usize,
    #[arg(long, default_value_t = 10)]
    pub frames: usize,
    #[arg(long, default_value_t = 64)]
    pub width: usize,
    #[arg(long, default_value_t = 64)]
    pub height: usize,
    /// Icosphere subdivisions of the head mesh.
    #[arg(long, default_value_t = 2)]
    pub subdivisions: usize,
    #[arg(long, default_value_t = 0.15)]
    pub jaw_amplitude: f64,
    #[arg(long, default_value_t = 3.5)]
    pub camera_distance: f64,
    /// Focal length in pixels.
    #[arg(long, default_value_t = 80.0)]
    pub focal: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct FitArgs {
    /// Dataset manifest, or the directory holding manifest.json.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
    /// Start from this splat file instead of the mesh-seeded initialization.
    #[arg(long)]
    pub init: Option<PathBuf>,
    /// Iteration budget; 0 saves the initial scene unchanged.
    #[arg(long, default_value_t = 5000)]
    pub iters: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.9)]
    pub lambda_rgb: f64,
    #[arg(long, default_value_t = 0.5)]
    pub lambda_track: f64,
    #[arg(long, default_value_t = 0.8)]
    pub lambda_rec: f64,
    #[arg(long, default_value_t = 2048)]
    pub densify_interval: usize,
    #[arg(long, default_value_t = 1)]
    pub views_per_step: usize,
    /// Checkpoint cadence in iterations (0: only at the end).
    #[arg(long, default_value_t = 1000)]
    pub checkpoint_every: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct RenderArgs {
    #[arg(long)]
    pub scene: PathBuf,
    /// Dataset manifest (or its directory) providing meshes and cameras.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
    /// Frame indices; all frames when omitted.
    #[arg(long = "t", value_delimiter = ',')]
    pub times: Vec<usize>,
    /// Camera indices; all cameras when omitted.
    #[arg(long = "p", value_delimiter = ',')]
    pub poses: Vec<usize>,
    /// Also write the rendered label map as a grayscale PNG.
    #[arg(long)]
    pub labels: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct EditArgs {
    #[arg(long)]
    pub scene: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
    #[arg(long)]
    pub prompt: String,
    #[arg(long, default_value_t = 1000)]
    pub iters: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.7)]
    pub lambda_rgb: f64,
    /// Edit grid frames; all frames when omitted.
    #[arg(long = "t", value_delimiter = ',')]
    pub times: Vec<usize>,
    /// Edit grid cameras; all cameras when omitted.
    #[arg(long = "p", value_delimiter = ',')]
    pub poses: Vec<usize>,
    /// Only edit-selected splats receive updates.
    #[arg(long)]
    pub freeze_unselected: bool,
    /// Use the deterministic local editor.
    #[arg(long, conflicts_with = "editor_url")]
    pub mock_editor: bool,
    /// Editing service base URL (falls back to EDITOR_URL).
    #[arg(long)]
    pub editor_url: Option<String>,
    /// Use the deterministic local prompt refiner.
    #[arg(long, conflicts_with = "refiner_url")]
    pub mock_refiner: bool,
    /// Prompt refiner base URL (falls back to REFINER_URL).
    #[arg(long)]
    pub refiner_url: Option<String>,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    /// Directory of reference PNGs, compared by file name with --candidate.
    #[arg(long, requires = "candidate", conflicts_with_all = ["scene", "data"])]
    pub reference: Option<PathBuf>,
    #[arg(long)]
    pub candidate: Option<PathBuf>,
    /// Scene to render against the dataset images.
    #[arg(long, requires = "data")]
    pub scene: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// With --scene: evaluate every camera, not only the held-out ones.
    #[arg(long)]
    pub all_views: bool,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 100)]
    pub cases: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 20)]
    pub splats: usize,
    /// Image side in pixels.
    #[arg(long, default_value_t = 24)]
    pub size: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub step: f64,
    #[arg(long, default_value_t = 1)]
    pub stride: usize,
    /// Exit with status 1 when the max relative error reaches this.
    #[arg(long, default_value_t = 1e-3)]
    pub tolerance: f64,
    /// Directory for report.json and the resolved config.
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
}
