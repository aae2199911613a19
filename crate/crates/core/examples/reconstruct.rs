//! Generates the seed-7 synthetic dataset, fits it and reports held-out
//! metrics. Usage: `cargo run --release --example reconstruct [iterations]`.

use std::time::Instant;

use meshsplat::dataset::{
    compute_metrics, generate_synthetic_scene, initial_fit_scene, load_dataset, SynthConfig,
};
use meshsplat::optim::{fit_modeling_stage, ModelingConfig};
use meshsplat::render::render;
use meshsplat::rig::pose_splats;

fn main() -> meshsplat::Result<()> {
    let iterations = std::env::args()
        .nth(1)
        .map_or(5000, |s| s.parse().expect("iteration count"));
    let dir = tempfile::tempdir().expect("temp dir");
    let synth = generate_synthetic_scene(7, &SynthConfig::default(), dir.path())?;
    let data = load_dataset(&synth.manifest_path)?;
    let held_out = data.manifest.held_out.clone();
    let train = data.training_set(&held_out)?;
    let init = initial_fit_scene(&train)?;
    let mut config = ModelingConfig {
        iterations,
        seed: 7,
        ..ModelingConfig::default()
    };
    config.densify.scene_extent = data.scene_extent();
    let start = Instant::now();
    let out = fit_modeling_stage(&init, &train, &config, None)?;
    let elapsed = start.elapsed();
    let (mut psnr, mut ssim) = (0.0, 0.0);
    for t in 0..data.frame_count() {
        let posed = pose_splats(&out.scene, &data.meshes[t])?;
        let m = compute_metrics(
            &data.image(t, held_out[0])?,
            &render(&posed, &data.cameras[held_out[0]]).image,
        )?;
        psnr += m.psnr / data.frame_count() as f64;
        ssim += m.ssim / data.frame_count() as f64;
    }
    let posed = pose_splats(&out.scene, &data.meshes[0])?;
    let m = compute_metrics(&data.image(0, 0)?, &render(&posed, &data.cameras[0]).image)?;
    println!(
        "training view (0, 0): PSNR {:.2} SSIM {:.4}",
        m.psnr, m.ssim
    );
    for row in out.log.iter().step_by((iterations / 10).max(1)) {
        println!(
            "it {:5} total {:.5} rgb {:.5} lr {:.2e} splats {}",
            row.iteration, row.total, row.rgb, row.lr, row.splats
        );
    }
    println!(
        "splats {} held-out PSNR {psnr:.2} dB SSIM {ssim:.4} in {:.1}s",
        out.scene.len(),
        elapsed.as_secs_f64()
    );
    Ok(())
}
