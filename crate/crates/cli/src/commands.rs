use std::path::{Path, PathBuf};
use std::sync::atomic::AtomicBool;
use std::sync::Arc;

use meshsplat::dataset::{
    evaluate_pair, generate_synthetic_scene, initial_fit_scene, load_dataset, load_image,
    load_scene, save_image, save_label_map, save_scene, write_metrics_csv, Dataset, MetricsRow,
    SynthConfig, MANIFEST_FILE,
};
use meshsplat::maskmap::NodeKey;
use meshsplat::optim::{
    fit_modeling_stage, random_suite, weight_header, write_log, GradcheckOptions, LossWeights,
};
use meshsplat::optim::{ModelingConfig, RandomCaseConfig};
use meshsplat::pipeline::{grid_nodes, node_reports, run_edit, EditScene, PipelineConfig};
use meshsplat::rig::pose_splats;
use meshsplat::services::{default_labels, ImageEditor, MockEditor, MockRefiner, PromptRefiner};
use meshsplat::services::{RemoteConfig, RemoteEditor, RemoteRefiner};
use meshsplat::{render, Error, Image};
use serde::Serialize;

use crate::args::{EditArgs, EvalArgs, FitArgs, GradcheckArgs, RenderArgs, SynthArgs};
use crate::sheet::contact_sheet;
use crate::CliError;

pub const RESOLVED_CONFIG: &str = "resolved_config.json";

type Result<T> = std::result::Result<T, CliError>;

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    Ok(())
}

/// Echoes the command line arguments and the core configuration they
/// resolve to. Output paths are left out so that two runs into different
/// directories produce identical files.
fn write_resolved<A: Serialize, C: Serialize>(
    dir: &Path,
    command: &str,
    args: &A,
    resolved: &C,
) -> Result<()> {
    let value = serde_json::json!({
        "command": command,
        "args": args,
        "resolved": resolved,
    });
    let path = dir.join(RESOLVED_CONFIG);
    let text = serde_json::to_string_pretty(&value).map_err(Error::from)?;
    std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(())
}

fn open_dataset(path: &Path) -> Result<Dataset> {
    let manifest = if path.is_dir() {
        path.join(MANIFEST_FILE)
    } else {
        path.to_path_buf()
    };
    Ok(load_dataset(&manifest)?)
}

/// Resolves a `--t`/`--p` list against `count`, defaulting to everything.
fn select(name: &str, requested: &[usize], count: usize) -> Result<Vec<usize>> {
    if requested.is_empty() {
        return Ok((0..count).collect());
    }
    if let Some(bad) = requested.iter().find(|&&i| i >= count) {
        return Err(Error::Config(format!(
            "{name} index {bad} is out of range (dataset has {count})"
        ))
        .into());
    }
    Ok(requested.to_vec())
}

pub fn synth(args: &SynthArgs) -> Result<()> {
    let config = SynthConfig {
        n_cameras: args.cameras,
        n_frames: args.frames,
        width: args.width,
        height: args.height,
        subdivisions: args.subdivisions,
        jaw_amplitude: args.jaw_amplitude,
        camera_distance: args.camera_distance,
        focal: args.focal,
    };
    config.validate()?;
    create_dir(&args.out)?;
    let out = generate_synthetic_scene(args.seed, &config, &args.out)?;
    write_resolved(&args.out, "synth", args, &config)?;
    println!(
        "wrote {} cameras x {} frames, {} ground-truth splats to {}",
        out.cameras.len(),
        out.meshes.len(),
        out.ground_truth.len(),
        args.out.display()
    );
    Ok(())
}

fn node_name(t: usize, p: usize) -> String {
    format!("t{t:03}_p{p:02}")
}

/// Renders `scene` at every held-out (or every) camera and compares with
/// the dataset images.
fn dataset_metrics(
    data: &Dataset,
    scene: &[meshsplat::GaussianSplat],
    all_views: bool,
) -> Result<Vec<MetricsRow>> {
    let cams: Vec<usize> = if all_views || data.manifest.held_out.is_empty() {
        (0..data.camera_count()).collect()
    } else {
        data.manifest.held_out.clone()
    };
    let mut rows = Vec::new();
    for t in 0..data.frame_count() {
        let posed = pose_splats(scene, &data.meshes[t])?;
        for &p in &cams {
            let rendered = render(&posed, &data.cameras[p]).image;
            rows.push(evaluate_pair(
                node_name(t, p),
                &data.image(t, p)?,
                &rendered,
                None,
            )?);
        }
    }
    Ok(rows)
}

fn mean(rows: &[MetricsRow]) -> (f64, f64) {
    let n = rows.len().max(1) as f64;
    (
        rows.iter().map(|r| r.psnr).sum::<f64>() / n,
        rows.iter().map(|r| r.ssim).sum::<f64>() / n,
    )
}

pub fn fit(args: &FitArgs, cancel: &Arc<AtomicBool>) -> Result<()> {
    let data = open_dataset(&args.data)?;
    let held_out = data.manifest.held_out.clone();
    let train = data.training_set(&held_out)?;
    let weights = LossWeights {
        lambda_rgb: args.lambda_rgb,
        lambda_track: args.lambda_track,
        lambda_rec: args.lambda_rec,
        ..LossWeights::modeling()
    };
    weights.validate()?;
    if args.densify_interval == 0 || args.views_per_step == 0 {
        return Err(
            Error::Config("densify interval and views per step must be positive".into()).into(),
        );
    }
    let mut config = ModelingConfig {
        iterations: args.iters,
        weights,
        densify_interval: args.densify_interval,
        views_per_step: args.views_per_step,
        seed: args.seed,
        checkpoint_every: args.checkpoint_every,
        ..ModelingConfig::default()
    };
    config.densify.scene_extent = data.scene_extent();
    create_dir(&args.out)?;
    write_resolved(&args.out, "fit", args, &config)?;
    config.out_dir = Some(args.out.clone());

    let init = match &args.init {
        Some(path) => load_scene(path)?,
        None => initial_fit_scene(&train)?,
    };
    let final_path = args.out.join("final.splat");
    let scene = if args.iters == 0 {
        write_log(
            &args.out.join("train_log.csv"),
            &weight_header(&config.weights),
            &[],
        )?;
        init
    } else {
        let outcome = fit_modeling_stage(&init, &train, &config, Some(cancel))?;
        if outcome.interrupted {
            return Err(CliError::Interrupted(args.out.clone()));
        }
        outcome.scene
    };
    save_scene(&final_path, &scene)?;

    let rows = dataset_metrics(&data, &scene, false)?;
    write_metrics_csv(&args.out.join("heldout_metrics.csv"), &rows)?;
    let (psnr, ssim) = mean(&rows);
    println!(
        "{} splats -> {}; held-out PSNR {psnr:.2} dB, SSIM {ssim:.4}",
        scene.len(),
        final_path.display()
    );
    Ok(())
}

pub fn render_views(args: &RenderArgs) -> Result<()> {
    let scene = load_scene(&args.scene)?;
    let data = open_dataset(&args.data)?;
    let times = select("frame", &args.times, data.frame_count())?;
    let poses = select("camera", &args.poses, data.camera_count())?;
    create_dir(&args.out)?;
    write_resolved(
        &args.out,
        "render",
        args,
        &serde_json::json!({ "t": times, "p": poses }),
    )?;
    for &t in &times {
        let posed = pose_splats(&scene, &data.meshes[t])?;
        for &p in &poses {
            let out = render(&posed, &data.cameras[p]);
            save_image(
                &args.out.join(format!("render_{}.png", node_name(t, p))),
                &out.image,
            )?;
            if args.labels {
                save_label_map(
                    &args.out.join(format!("labels_{}.png", node_name(t, p))),
                    &out.labels,
                )?;
            }
        }
    }
    println!(
        "rendered {} views to {}",
        times.len() * poses.len(),
        args.out.display()
    );
    Ok(())
}

fn remote(url: Option<&String>, var: &str) -> Option<RemoteConfig> {
    match url {
        Some(u) => {
            let mut cfg = RemoteConfig::new(u.clone());
            cfg.token = std::env::var("SERVICE_TOKEN")
                .ok()
                .filter(|t| !t.is_empty());
            Some(cfg)
        }
        None => RemoteConfig::from_env(var),
    }
}

#[derive(Serialize)]
struct ResolvedEdit<'a> {
    nodes: &'a [NodeKey],
    editor: String,
    refiner: String,
    edit: &'a meshsplat::optim::EditConfig,
}

pub fn edit(args: &EditArgs, cancel: &Arc<AtomicBool>) -> Result<()> {
    let scene = load_scene(&args.scene)?;
    let data = open_dataset(&args.data)?;
    let times = select("frame", &args.times, data.frame_count())?;
    let poses = select("camera", &args.poses, data.camera_count())?;

    let cache = args.out.join("service_cache");
    let (editor, editor_name): (Box<dyn ImageEditor>, String) = if args.mock_editor {
        (Box::new(MockEditor), "mock".into())
    } else if let Some(mut cfg) = remote(args.editor_url.as_ref(), "EDITOR_URL") {
        cfg.cache_dir = Some(cache.clone());
        let name = cfg.base_url.clone();
        (Box::new(RemoteEditor { config: cfg }), name)
    } else {
        return Err(Error::Config(
            "no image editor: pass --mock-editor or --editor-url, or set EDITOR_URL".into(),
        )
        .into());
    };
    // A mock editor implies the mock refiner unless a refiner is configured.
    let refiner_remote = if args.mock_refiner {
        None
    } else {
        remote(args.refiner_url.as_ref(), "REFINER_URL")
    };
    let (refiner, refiner_name): (Box<dyn PromptRefiner>, String) = if let Some(mut cfg) =
        refiner_remote
    {
        cfg.cache_dir = Some(cache);
        let name = cfg.base_url.clone();
        (Box::new(RemoteRefiner { config: cfg }), name)
    } else if args.mock_refiner || args.mock_editor {
        (Box::new(MockRefiner), "mock".into())
    } else {
        return Err(Error::Config(
            "no prompt refiner: pass --mock-refiner or --refiner-url, or set REFINER_URL".into(),
        )
        .into());
    };

    let mut pc = PipelineConfig::new(grid_nodes(&times, &poses));
    pc.seed = args.seed;
    pc.edit.iterations = args.iters;
    pc.edit.seed = args.seed;
    pc.edit.freeze_unselected = args.freeze_unselected;
    pc.edit.weights.lambda_rgb = args.lambda_rgb;
    pc.edit.weights.validate()?;
    create_dir(&args.out)?;
    let resolved = ResolvedEdit {
        nodes: &pc.nodes,
        editor: editor_name,
        refiner: refiner_name,
        edit: &pc.edit,
    };
    write_resolved(&args.out, "edit", args, &resolved)?;
    pc.edit.out_dir = Some(args.out.clone());

    let input = EditScene {
        scene: &scene,
        meshes: &data.meshes,
        cameras: &data.cameras,
    };
    let run = run_edit(
        &args.prompt,
        &default_labels(),
        refiner.as_ref(),
        editor.as_ref(),
        input,
        &pc,
        Some(cancel),
    )?;
    if run.outcome.interrupted {
        return Err(CliError::Interrupted(args.out.clone()));
    }
    for ins in &run.plan.instructions {
        log::info!("instruction: {}", ins.text());
    }
    let edited = EditScene {
        scene: &run.outcome.scene,
        ..input
    };
    let after: Vec<Image> = pc
        .nodes
        .iter()
        .map(|&n| edited.render_node(n))
        .collect::<meshsplat::Result<_>>()?;
    let before: Vec<Image> = pc.nodes.iter().map(|n| run.before[n].clone()).collect();
    save_image(
        &args.out.join("contact_sheet.png"),
        &contact_sheet(&pc.nodes, &before, &after),
    )?;

    let reports = node_reports(&run, edited)?;
    let path = args.out.join("edit_report.csv");
    let mut text = String::from("t,p,outside_psnr,inside_hue\n");
    for r in &reports {
        let hue = r
            .inside_hue
            .map_or_else(|| "absent".to_string(), |h| h.to_string());
        text.push_str(&format!(
            "{},{},{},{hue}\n",
            r.node.t, r.node.p, r.outside_psnr
        ));
    }
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    let min_psnr = reports
        .iter()
        .map(|r| r.outside_psnr)
        .fold(f64::INFINITY, f64::min);
    println!(
        "edited {} splats over {} nodes -> {}; min outside-mask PSNR {min_psnr:.2} dB",
        run.selection.weights.len(),
        pc.nodes.len(),
        args.out.join("edited.splat").display()
    );
    Ok(())
}

fn png_names(dir: &Path) -> Result<Vec<String>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut names = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if name.ends_with(".png") {
            names.push(name);
        }
    }
    names.sort();
    Ok(names)
}

pub fn eval(args: &EvalArgs) -> Result<()> {
    let rows = match (&args.reference, &args.candidate, &args.scene, &args.data) {
        (Some(reference), Some(candidate), None, None) => {
            let names = png_names(reference)?;
            if names.is_empty() {
                return Err(
                    Error::Config(format!("no PNG files in {}", reference.display())).into(),
                );
            }
            let mut rows = Vec::new();
            for name in names {
                let other: PathBuf = candidate.join(&name);
                if !other.is_file() {
                    return Err(Error::Config(format!(
                        "{} has no counterpart {}",
                        name,
                        other.display()
                    ))
                    .into());
                }
                rows.push(evaluate_pair(
                    name.trim_end_matches(".png"),
                    &load_image(&reference.join(&name))?,
                    &load_image(&other)?,
                    None,
                )?);
            }
            rows
        }
        (None, None, Some(scene), Some(data)) => {
            dataset_metrics(&open_dataset(data)?, &load_scene(scene)?, args.all_views)?
        }
        _ => {
            return Err(Error::Config(
                "eval needs either --reference and --candidate, or --scene and --data".into(),
            )
            .into())
        }
    };
    create_dir(&args.out)?;
    write_resolved(
        &args.out,
        "eval",
        args,
        &serde_json::json!({ "perceptual": "absent" }),
    )?;
    write_metrics_csv(&args.out.join("metrics.csv"), &rows)?;
    let (psnr, ssim) = mean(&rows);
    println!(
        "{} views: mean PSNR {psnr:.2} dB, SSIM {ssim:.4}",
        rows.len()
    );
    Ok(())
}

pub fn gradcheck(args: &GradcheckArgs) -> Result<()> {
    if args.cases == 0
        || args.splats == 0
        || args.size == 0
        || args.stride == 0
        || !(args.step > 0.0)
    {
        return Err(
            Error::Config("cases, splats, size, stride and step must be positive".into()).into(),
        );
    }
    let case = RandomCaseConfig {
        n_splats: args.splats,
        size: args.size,
    };
    let opts = GradcheckOptions {
        step: args.step,
        stride: args.stride,
    };
    let start = std::time::Instant::now();
    let report = random_suite(args.cases, args.seed, &case, &opts)?;
    let elapsed = start.elapsed().as_secs_f64();
    if let Some(dir) = &args.out {
        create_dir(dir)?;
        write_resolved(
            dir,
            "gradcheck",
            args,
            &serde_json::json!({ "case": case, "options": opts }),
        )?;
        let path = dir.join("report.json");
        let text = serde_json::to_string_pretty(&report).map_err(Error::from)?;
        std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
    }
    println!(
        "{} cases: max relative error {:.3e} over {} coordinates ({} skipped at non-smooth points) in {elapsed:.1}s",
        args.cases, report.max_rel_error, report.checked, report.skipped_nonsmooth
    );
    if report.max_rel_error >= args.tolerance {
        return Err(CliError::Check(format!(
            "max relative error {:.3e} exceeds {:.1e} (worst: {:?})",
            report.max_rel_error, args.tolerance, report.worst
        )));
    }
    Ok(())
}
