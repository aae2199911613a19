//! The modeling and editing training loops.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamState, Schedule};
use super::backward::{evaluate, Objective, View};
use super::discriminator::{Discriminator, DEFAULT_PATCH};
use super::losses::LossWeights;
use crate::dataset::{save_adam, save_scene};
use crate::error::{Error, Result};
use crate::imaging::{Image, LabelMap, Mask};
use crate::maskmap::SplatSelection;
use crate::render::{render_with, Camera, RenderOptions};
use crate::rig::{
    assign_labels_multi, densify_and_prune, pose_splats, DensifyStats, DensifyThresholds,
    LabelView, MeshFrame, DENSIFY_INTERVAL,
};
use crate::splat::{pack_params, unpack_params, GaussianSplat, ParamVector};

/// One training image with its frame `t`, camera `p` and optional segmenter
/// labels.
#[derive(Debug, Clone)]
pub struct TrainView {
    pub t: usize,
    pub p: usize,
    pub image: Image,
    pub labels: Option<LabelMap>,
}

/// Cameras, per-frame meshes and the supervised views drawn from them.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub cameras: Vec<Camera>,
    pub meshes: Vec<MeshFrame>,
    pub views: Vec<TrainView>,
}

impl TrainingSet {
    pub fn validate(&self) -> Result<()> {
        if self.views.is_empty() {
            return Err(Error::Config("training set has no views".into()));
        }
        for v in &self.views {
            let cam = self.cameras.get(v.p).ok_or_else(|| {
                Error::Config(format!(
                    "view references camera {} of {}",
                    v.p,
                    self.cameras.len()
                ))
            })?;
            if !self.meshes.is_empty() && v.t >= self.meshes.len() {
                return Err(Error::Config(format!(
                    "view references frame {} of {}",
                    v.t,
                    self.meshes.len()
                )));
            }
            if v.image.width != cam.width || v.image.height != cam.height {
                return Err(Error::DimensionMismatch(format!(
                    "image for (t={}, p={}) is {}x{}, camera is {}x{}",
                    v.t, v.p, v.image.width, v.image.height, cam.width, cam.height
                )));
            }
        }
        Ok(())
    }
}

/// One row of a training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub iteration: usize,
    pub rgb: f64,
    pub tracking: f64,
    pub offset: f64,
    pub cross_entropy: f64,
    pub anchor: f64,
    pub adversarial: f64,
    pub discriminator: f64,
    pub total: f64,
    pub lr: f64,
    pub splats: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelingConfig {
    pub iterations: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    pub weights: LossWeights,
    pub densify_interval: usize,
    pub densify: DensifyThresholds,
    /// Views averaged into each optimizer step.
    pub views_per_step: usize,
    pub seed: u64,
    /// Write a checkpoint every this many iterations (0: only at the end).
    pub checkpoint_every: usize,
    /// Where checkpoints and the log go; nothing is written when unset.
    pub out_dir: Option<PathBuf>,
}

impl Default for ModelingConfig {
    fn default() -> Self {
        Self {
            iterations: 5000,
            lr_start: 1e-3,
            lr_end: 1e-5,
            weights: LossWeights::modeling(),
            densify_interval: DENSIFY_INTERVAL,
            densify: DensifyThresholds::default(),
            views_per_step: 1,
            seed: 0,
            checkpoint_every: 1000,
            out_dir: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ModelingOutcome {
    pub scene: Vec<GaussianSplat>,
    pub adam: AdamState,
    pub log: Vec<LogRow>,
    /// Iterations at which densification ran.
    pub densify_events: Vec<usize>,
    /// Training stopped early on request.
    pub interrupted: bool,
}

/// Cycles through views in a fresh seeded shuffle each epoch.
struct ViewSampler {
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl ViewSampler {
    fn new(n: usize, seed: u64) -> Self {
        Self {
            order: (0..n).collect(),
            pos: n,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    fn next(&mut self) -> usize {
        if self.pos >= self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
        }
        self.pos += 1;
        self.order[self.pos - 1]
    }
}

pub const CHECKPOINT_SCENE: &str = "checkpoint.splat";
pub const CHECKPOINT_ADAM: &str = "checkpoint.adam";

fn write_checkpoint(dir: &Path, scene: &[GaussianSplat], adam: &AdamState) -> Result<()> {
    save_scene(&dir.join(CHECKPOINT_SCENE), scene)?;
    save_adam(&dir.join(CHECKPOINT_ADAM), adam)
}

/// Writes a training log as CSV, preceded by `# key=value` comment lines.
pub fn write_log(path: &Path, header: &[(String, String)], rows: &[LogRow]) -> Result<()> {
    let mut buf = Vec::new();
    for (k, v) in header {
        buf.extend_from_slice(format!("# {k}={v}\n").as_bytes());
    }
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        for r in rows {
            w.serialize(r)
                .map_err(|e| Error::parse("training log", e.to_string()))?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Reads a log written by [`write_log`]: header pairs and rows.
pub fn read_log(path: &Path) -> Result<(Vec<(String, String)>, Vec<LogRow>)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut header = Vec::new();
    let mut body = String::new();
    for line in text.lines() {
        match line.strip_prefix("# ") {
            Some(kv) => {
                let (k, v) = kv.split_once('=').unwrap_or((kv, ""));
                header.push((k.to_string(), v.to_string()));
            }
            None => {
                body.push_str(line);
                body.push('\n');
            }
        }
    }
    let mut rows = Vec::new();
    for r in csv::Reader::from_reader(body.as_bytes()).deserialize() {
        rows.push(r.map_err(|e| Error::parse("training log", e.to_string()))?);
    }
    Ok((header, rows))
}

pub fn weight_header(weights: &LossWeights) -> Vec<(String, String)> {
    vec![
        ("lambda_rgb".into(), weights.lambda_rgb.to_string()),
        ("lambda_track".into(), weights.lambda_track.to_string()),
        ("lambda_rec".into(), weights.lambda_rec.to_string()),
        (
            "lambda_anchor_position".into(),
            weights.anchor.position.to_string(),
        ),
        (
            "lambda_anchor_transform".into(),
            weights.anchor.transform.to_string(),
        ),
        (
            "lambda_anchor_color".into(),
            weights.anchor.color.to_string(),
        ),
        (
            "lambda_edit".into(),
            format!(
                "{},{},{}",
                weights.edit[0], weights.edit[1], weights.edit[2]
            ),
        ),
    ]
}

fn project(
    params: &ParamVector,
    template: &[GaussianSplat],
) -> Result<(ParamVector, Vec<GaussianSplat>)> {
    let scene = unpack_params(params, template)?.scene;
    Ok((pack_params(&scene), scene))
}

/// Labels every splat by majority vote over the segmenter maps of all
/// labeled views. Returns the scene unchanged when no view has labels.
fn vote_labels(scene: &[GaussianSplat], data: &TrainingSet) -> Result<Vec<GaussianSplat>> {
    let views: Vec<(Vec<GaussianSplat>, &TrainView)> = data
        .views
        .iter()
        .filter(|v| v.labels.is_some())
        .map(|v| {
            let posed = match data.meshes.get(v.t) {
                Some(m) => pose_splats(scene, m),
                None => Ok(scene.to_vec()),
            };
            posed.map(|p| (p, v))
        })
        .collect::<Result<_>>()?;
    if views.is_empty() {
        return Ok(scene.to_vec());
    }
    let label_views: Vec<LabelView<'_>> = views
        .iter()
        .map(|(posed, v)| LabelView {
            posed,
            camera: &data.cameras[v.p],
            labels: v.labels.as_ref().expect("filtered"),
        })
        .collect();
    assign_labels_multi(scene, &label_views)
}

/// Fits the scene to the training views: posing per sampled frame,
/// rendering, the reconstruction loss, analytic gradients and Adam, with
/// densify-and-prune every `densify_interval` iterations. The returned scene
/// carries labels voted from the segmenter maps; unlabeled
/// initial splats are voted before the first step as well.
///
/// A non-finite loss aborts with an error; checkpoints already written stay
/// in place. Setting `cancel` stops after the current iteration and writes a
/// checkpoint.
pub fn fit_modeling_stage(
    initial: &[GaussianSplat],
    data: &TrainingSet,
    config: &ModelingConfig,
    cancel: Option<&Arc<AtomicBool>>,
) -> Result<ModelingOutcome> {
    data.validate()?;
    config.weights.validate()?;
    let schedule = Schedule {
        lr_start: config.lr_start,
        lr_end: config.lr_end,
        iterations: config.iterations,
    };
    // The cross-entropy term needs labeled splats from the first step.
    let mut template = if initial.iter().any(|s| s.label == 0) {
        vote_labels(initial, data)?
    } else {
        initial.to_vec()
    };
    let mut params = pack_params(&template);
    let mut adam = AdamState::new(params.len(), schedule);
    let mut stats = DensifyStats::new(template.len());
    let mut sampler = ViewSampler::new(data.views.len(), config.seed);
    let mut densify_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_de75);
    let objective = Objective::reconstruction(&config.weights);
    let mut log = Vec::with_capacity(config.iterations);
    let mut densify_events = Vec::new();
    let mut interrupted = false;
    if let Some(dir) = &config.out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_checkpoint(dir, &template, &adam)?;
    }

    for it in 0..config.iterations {
        if cancel.is_some_and(|c| c.load(Ordering::SeqCst)) {
            interrupted = true;
            break;
        }
        if it > 0 && config.densify_interval > 0 && it % config.densify_interval == 0 {
            let scene = unpack_params(&params, &template)?.scene;
            let posed = match data.meshes.first() {
                Some(m) => pose_splats(&scene, m)?,
                None => scene,
            };
            let outcome = densify_and_prune(&posed, &mut stats, &config.densify, &mut densify_rng);
            adam.remap(&outcome.origin);
            template = outcome.scene;
            params = pack_params(&template);
            densify_events.push(it);
            log::debug!(
                "densify at {it}: +{} clones, {} splits, -{} pruned, {} splats",
                outcome.cloned,
                outcome.split,
                outcome.pruned,
                template.len()
            );
        }
        let batch: Vec<View<'_>> = (0..config.views_per_step.clamp(1, data.views.len()))
            .map(|_| {
                let v = &data.views[sampler.next()];
                View {
                    camera: &data.cameras[v.p],
                    mesh: data.meshes.get(v.t),
                    target: &v.image,
                    labels: v.labels.as_ref(),
                    patches: &[],
                }
            })
            .collect();
        let eval = evaluate(&params, &template, &batch, &objective, true)?;
        for (s, (g, n)) in eval.screen_grad.iter().enumerate() {
            if *n > 0 {
                stats.observe(s, *g / *n as f64, eval.radius[s]);
            }
        }
        let lr = adam.current_lr();
        let grad = eval.grad.expect("gradient requested");
        adam_step(&mut params.values, &grad.values, &mut adam)?;
        let (p, scene) = project(&params, &template)?;
        params = p;
        template = scene;
        log.push(LogRow {
            iteration: it,
            rgb: eval.parts.rgb,
            tracking: eval.parts.tracking,
            offset: eval.parts.offset,
            cross_entropy: eval.parts.cross_entropy,
            anchor: 0.0,
            adversarial: 0.0,
            discriminator: 0.0,
            total: eval.parts.total,
            lr,
            splats: template.len(),
        });
        if let Some(dir) = &config.out_dir {
            if config.checkpoint_every > 0 && (it + 1) % config.checkpoint_every == 0 {
                write_checkpoint(dir, &template, &adam)?;
            }
        }
    }

    template = vote_labels(&template, data)?;
    if let Some(dir) = &config.out_dir {
        write_checkpoint(dir, &template, &adam)?;
        write_log(
            &dir.join("train_log.csv"),
            &weight_header(&config.weights),
            &log,
        )?;
    }
    Ok(ModelingOutcome {
        scene: template,
        adam,
        log,
        densify_events,
        interrupted,
    })
}

/// Edited target image for one `(t, p)` node and the region it edits.
#[derive(Debug, Clone, PartialEq)]
pub struct EditTarget {
    pub t: usize,
    pub p: usize,
    pub image: Image,
    pub region: Mask,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EditConfig {
    pub iterations: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    pub weights: LossWeights,
    pub patch_size: usize,
    pub patches_per_view: usize,
    pub disc_lr: f64,
    /// Discriminator updates per scene update.
    pub disc_steps: usize,
    pub seed: u64,
    /// Only edit-selected splats receive updates.
    pub freeze_unselected: bool,
    pub out_dir: Option<PathBuf>,
}

impl Default for EditConfig {
    fn default() -> Self {
        Self {
            iterations: 1000,
            lr_start: 1e-2,
            lr_end: 1e-3,
            weights: LossWeights::editing(),
            patch_size: DEFAULT_PATCH,
            patches_per_view: 2,
            disc_lr: 1e-4,
            disc_steps: 1,
            seed: 0,
            freeze_unselected: false,
            out_dir: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EditOutcome {
    pub scene: Vec<GaussianSplat>,
    pub log: Vec<LogRow>,
    pub discriminator: Discriminator,
    pub interrupted: bool,
}

/// Top-left corners of patches centered on random region pixels.
fn sample_patches(
    region: &Mask,
    size: usize,
    count: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<(usize, usize)> {
    if region.width < size || region.height < size {
        return Vec::new();
    }
    let inside: Vec<usize> = (0..region.bits.len()).filter(|i| region.bits[*i]).collect();
    if inside.is_empty() {
        return Vec::new();
    }
    (0..count)
        .map(|_| {
            let i = inside[rng.random_range(0..inside.len())];
            let (x, y) = (i % region.width, i / region.width);
            let x0 = x.saturating_sub(size / 2).min(region.width - size);
            let y0 = y.saturating_sub(size / 2).min(region.height - size);
            (x0, y0)
        })
        .collect()
}

/// Fine-tunes an edited scene against per-node edited targets.
///
/// Each iteration takes one discriminator step on the hinge loss (real:
/// target patches, fake: rendered patches at the same places inside the
/// edit region) and one scene step on the normalized edit loss, anchored to
/// the pre-edit scene.
pub fn fit_editing_stage(
    scene: &[GaussianSplat],
    meshes: &[MeshFrame],
    cameras: &[Camera],
    selection: &SplatSelection,
    targets: &[EditTarget],
    config: &EditConfig,
    cancel: Option<&Arc<AtomicBool>>,
) -> Result<EditOutcome> {
    if selection.is_empty() {
        return Err(Error::NoTarget("edit selection is empty".into()));
    }
    if targets.is_empty() {
        return Err(Error::Config("no edit targets".into()));
    }
    config.weights.validate()?;
    for t in targets {
        let cam = cameras
            .get(t.p)
            .ok_or_else(|| Error::Config(format!("edit target references camera {}", t.p)))?;
        if !meshes.is_empty() && t.t >= meshes.len() {
            return Err(Error::Config(format!(
                "edit target references frame {}",
                t.t
            )));
        }
        if (t.image.width, t.image.height) != (cam.width, cam.height)
            || (t.region.width, t.region.height) != (cam.width, cam.height)
        {
            return Err(Error::DimensionMismatch(format!(
                "edit target (t={}, p={})",
                t.t, t.p
            )));
        }
    }
    let reference = scene.to_vec();
    let free = selection.flags(scene.len());
    let mut template = scene.to_vec();
    let mut params = pack_params(&template);
    let mut adam = AdamState::new(
        params.len(),
        Schedule {
            lr_start: config.lr_start,
            lr_end: config.lr_end,
            iterations: config.iterations,
        },
    );
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut disc = Discriminator::new(config.patch_size, &mut rng);
    let mut disc_adam = AdamState::new(disc.params.len(), Schedule::constant(config.disc_lr));
    let mut sampler = ViewSampler::new(targets.len(), config.seed.wrapping_add(1));
    let opts = RenderOptions::default();
    let mut log = Vec::with_capacity(config.iterations);
    let mut interrupted = false;

    for it in 0..config.iterations {
        if cancel.is_some_and(|c| c.load(Ordering::SeqCst)) {
            interrupted = true;
            break;
        }
        let target = &targets[sampler.next()];
        let mesh = meshes.get(target.t);
        let camera = &cameras[target.p];
        let patches = sample_patches(
            &target.region,
            config.patch_size,
            config.patches_per_view,
            &mut rng,
        );

        let mut d_loss = 0.0;
        if !patches.is_empty() {
            let posed = match mesh {
                Some(m) => pose_splats(&template, m)?,
                None => template.clone(),
            };
            let rendered = render_with(&posed, camera, &opts).image;
            let real: Vec<Vec<f64>> = patches
                .iter()
                .map(|&(x, y)| target.image.patch(x, y, config.patch_size))
                .collect();
            let fake: Vec<Vec<f64>> = patches
                .iter()
                .map(|&(x, y)| rendered.patch(x, y, config.patch_size))
                .collect();
            for _ in 0..config.disc_steps {
                let (loss, grad) = disc.hinge_step_grad(&real, &fake)?;
                d_loss = loss;
                adam_step(&mut disc.params, &grad, &mut disc_adam)?;
            }
        }

        let view = View {
            camera,
            mesh,
            target: &target.image,
            labels: None,
            patches: &patches,
        };
        let objective = Objective::edit(&config.weights, &reference, &free, Some(&disc));
        let eval = evaluate(&params, &template, &[view], &objective, true)?;
        let mut grad = eval.grad.expect("gradient requested");
        if config.freeze_unselected {
            for (s, is_free) in free.iter().enumerate() {
                if !is_free {
                    grad.splat_mut(s).iter_mut().for_each(|g| *g = 0.0);
                }
            }
        }
        let lr = adam.current_lr();
        adam_step(&mut params.values, &grad.values, &mut adam)?;
        let (p, s) = project(&params, &template)?;
        params = p;
        template = s;
        log.push(LogRow {
            iteration: it,
            rgb: eval.parts.rgb,
            tracking: 0.0,
            offset: 0.0,
            cross_entropy: 0.0,
            anchor: eval.parts.anchor,
            adversarial: eval.parts.adversarial,
            discriminator: d_loss,
            total: eval.parts.total,
            lr,
            splats: template.len(),
        });
    }
    if let Some(dir) = &config.out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        save_scene(&dir.join("edited.splat"), &template)?;
        write_log(
            &dir.join("edit_log.csv"),
            &weight_header(&config.weights),
            &log,
        )?;
    }
    Ok(EditOutcome {
        scene: template,
        log,
        discriminator: disc,
        interrupted,
    })
}
