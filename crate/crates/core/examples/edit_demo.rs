//! Fits the seed-7 synthetic scene, recolors the hair with the mock services
//! and reports per-node edit metrics.
//! Usage: `cargo run --release --example edit_demo [fit iterations] [edit iterations]`.

use std::time::Instant;

use meshsplat::dataset::{generate_synthetic_scene, initial_fit_scene, load_dataset, SynthConfig};
use meshsplat::imaging::hue_distance;
use meshsplat::optim::{fit_modeling_stage, ModelingConfig};
use meshsplat::pipeline::{grid_nodes, node_reports, run_edit, EditScene, PipelineConfig};
use meshsplat::services::{default_labels, MockEditor, MockRefiner};

fn main() -> meshsplat::Result<()> {
    let mut args = std::env::args()
        .skip(1)
        .map(|s| s.parse::<usize>().expect("iteration count"));
    let fit_iterations = args.next().unwrap_or(5000);
    let edit_iterations = args.next().unwrap_or(1000);
    let dir = tempfile::tempdir().expect("temp dir");
    let synth = generate_synthetic_scene(7, &SynthConfig::default(), dir.path())?;
    let data = load_dataset(&synth.manifest_path)?;
    let train = data.training_set(&data.manifest.held_out)?;
    let mut config = ModelingConfig {
        iterations: fit_iterations,
        seed: 7,
        ..ModelingConfig::default()
    };
    config.densify.scene_extent = data.scene_extent();
    let fitted = fit_modeling_stage(&initial_fit_scene(&train)?, &train, &config, None)?.scene;

    let times: Vec<usize> = (0..data.frame_count()).collect();
    let poses: Vec<usize> = (0..data.camera_count()).collect();
    let mut pc = PipelineConfig::new(grid_nodes(&times, &poses));
    pc.edit.iterations = edit_iterations;
    pc.edit.seed = 7;
    let input = EditScene {
        scene: &fitted,
        meshes: &data.meshes,
        cameras: &data.cameras,
    };
    let start = Instant::now();
    let run = run_edit(
        "recolor the hair blue",
        &default_labels(),
        &MockRefiner,
        &MockEditor,
        input,
        &pc,
        None,
    )?;
    println!(
        "edit stage {:.1}s, {} selected splats",
        start.elapsed().as_secs_f64(),
        run.selection.weights.len()
    );
    let edited = EditScene {
        scene: &run.outcome.scene,
        ..input
    };
    let reports = node_reports(&run, edited)?;
    let min_psnr = reports
        .iter()
        .map(|r| r.outside_psnr)
        .fold(f64::INFINITY, f64::min);
    let mean_psnr = reports.iter().map(|r| r.outside_psnr).sum::<f64>() / reports.len() as f64;
    let max_hue = reports
        .iter()
        .filter_map(|r| r.inside_hue.map(|h| hue_distance(h, 240.0)))
        .fold(0.0, f64::max);
    println!("outside-mask PSNR min {min_psnr:.2} dB mean {mean_psnr:.2} dB, max hue error {max_hue:.2} deg");
    Ok(())
}
