//! Loss evaluation with analytic reverse-mode gradients.
//!
//! The chain runs image loss → pixel colors and contribution weights →
//! per-contributor alpha → Gaussian falloff → screen mean and conic →
//! world position and covariance → rotation matrix and scales → posing →
//! raw optimizer parameters (quaternion normalization, log-scale, opacity
//! logit).

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use nalgebra::{Matrix2, Vector2};
use rayon::prelude::*;

use super::discriminator::Discriminator;
use super::losses::{
    anchor_props, label_cross_entropy, offset_drift, rgb_loss_grad, GradientProxy, LossWeights,
    Perceptual, FREE_SET_FACTOR,
};
use crate::error::{Error, Result};
use crate::imaging::{Image, LabelMap};
use crate::render::{
    covariance_vjp, projection_vjp, rasterize, Camera, RenderOptions, RenderOutput, Trace,
    WorldGrad, WorldSplat,
};
use crate::rig::{pose_world, MeshFrame, PoseLink};
use crate::splat::{
    normalize_vjp, rotation_matrix_vjp, unpack_params, GaussianSplat, Label, ParamVector, Vec3,
    PARAMS_PER_SPLAT, SLOT_COLOR, SLOT_OPACITY, SLOT_POS, SLOT_ROT, SLOT_SCALE,
};

static DEFAULT_PROXY: GradientProxy = GradientProxy {
    levels: 3,
    eps: 1e-3,
    delta: 0.0,
};

/// One supervised view.
#[derive(Clone, Copy)]
pub struct View<'a> {
    pub camera: &'a Camera,
    /// Mesh of the view's frame; required when the scene has rigged splats.
    pub mesh: Option<&'a MeshFrame>,
    pub target: &'a Image,
    /// Segmenter labels for the tracking cross-entropy.
    pub labels: Option<&'a LabelMap>,
    /// Top-left corners of adversarial patches (edit objective only).
    pub patches: &'a [(usize, usize)],
}

#[derive(Clone, Copy)]
pub enum Mode<'a> {
    /// `λ_rec·L_rgb + (1−λ_rec)·L_tracking`.
    Reconstruction,
    /// Normalized `λ₁·L_rgb + λ₂·L_gs + λ₃·L_G`.
    Edit {
        reference: &'a [GaussianSplat],
        /// Edit-selected splats, anchored with a reduced weight.
        free: &'a [bool],
        discriminator: Option<&'a Discriminator>,
    },
}

#[derive(Clone, Copy)]
pub struct Objective<'a> {
    pub weights: &'a LossWeights,
    pub mode: Mode<'a>,
    pub perceptual: &'a dyn Perceptual,
}

impl<'a> Objective<'a> {
    pub fn reconstruction(weights: &'a LossWeights) -> Self {
        Self {
            weights,
            mode: Mode::Reconstruction,
            perceptual: &DEFAULT_PROXY,
        }
    }

    pub fn edit(
        weights: &'a LossWeights,
        reference: &'a [GaussianSplat],
        free: &'a [bool],
        discriminator: Option<&'a Discriminator>,
    ) -> Self {
        Self {
            weights,
            mode: Mode::Edit {
                reference,
                free,
                discriminator,
            },
            perceptual: &DEFAULT_PROXY,
        }
    }
}

/// Individual loss terms, averaged over views where per-view.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossParts {
    pub rgb: f64,
    pub tracking: f64,
    pub offset: f64,
    pub cross_entropy: f64,
    pub anchor: f64,
    pub adversarial: f64,
    pub total: f64,
}

pub struct Evaluation {
    pub parts: LossParts,
    pub grad: Option<ParamVector>,
    /// Per splat, the summed norm of the loss gradient on its screen-space
    /// mean over the views where it was visible, and the visible-view count.
    pub screen_grad: Vec<(f64, u32)>,
    /// Largest screen radius (3σ, pixels) per splat over the views.
    pub radius: Vec<f64>,
    /// Hash of everything that decides which smooth piece of the loss is
    /// active: contributor lists, alpha clamps, color clamps and the sign
    /// patterns of non-smooth loss terms.
    pub regime: u64,
    /// Renders of the views, in order.
    pub renders: Vec<RenderOutput>,
}

struct ViewResult {
    rgb: f64,
    ce: f64,
    adversarial: f64,
    /// Gradient on world parameters per splat (empty when not requested).
    world_grad: Vec<WorldGrad>,
    links: Vec<PoseLink>,
    world: Vec<WorldSplat>,
    screen: Vec<Option<f64>>,
    radius: Vec<f64>,
    regime: u64,
    render: RenderOutput,
}

/// Evaluates `objective` at `params` (unpacked onto `template`) and, when
/// `want_grad`, its gradient with respect to every packed parameter.
pub fn evaluate(
    params: &ParamVector,
    template: &[GaussianSplat],
    views: &[View<'_>],
    objective: &Objective<'_>,
    want_grad: bool,
) -> Result<Evaluation> {
    objective.weights.validate()?;
    let unpacked = unpack_params(params, template)?;
    let scene = &unpacked.scene;
    let n_views = views.len().max(1) as f64;
    let w = objective.weights;

    // Per-view coefficients of the image-space terms.
    let (c_rgb, c_ce, c_adv) = match objective.mode {
        Mode::Reconstruction => (
            w.lambda_rec / n_views,
            (1.0 - w.lambda_rec) * (1.0 - w.lambda_track) / n_views,
            0.0,
        ),
        Mode::Edit { .. } => {
            let sum: f64 = w.edit.iter().sum();
            (w.edit[0] / sum / n_views, 0.0, w.edit[2] / sum / n_views)
        }
    };
    let discriminator = match objective.mode {
        Mode::Edit { discriminator, .. } => discriminator,
        Mode::Reconstruction => None,
    };

    let results: Vec<Result<ViewResult>> = views
        .par_iter()
        .map(|view| {
            evaluate_view(
                scene,
                view,
                objective,
                discriminator,
                (c_rgb, c_ce, c_adv),
                want_grad,
            )
        })
        .collect();
    let mut per_view = Vec::with_capacity(results.len());
    for r in results {
        per_view.push(r?);
    }

    let mut parts = LossParts::default();
    let mut hasher = DefaultHasher::new();
    for (i, c) in params.values.chunks(PARAMS_PER_SPLAT).enumerate() {
        for k in 0..3 {
            let v = c[SLOT_COLOR + k];
            ((v < 0.0) as u8 + 2 * (v > 1.0) as u8, i, k).hash(&mut hasher);
        }
    }
    for v in &per_view {
        parts.rgb += v.rgb / n_views;
        parts.cross_entropy += v.ce / n_views;
        parts.adversarial += v.adversarial / n_views;
        v.regime.hash(&mut hasher);
    }

    let mut grad = want_grad.then(|| ParamVector::zeros(scene.len()));
    let mut screen_grad = vec![(0.0, 0u32); scene.len()];
    let mut radius = vec![0.0f64; scene.len()];
    for v in &per_view {
        for (s, g) in v.screen.iter().enumerate() {
            if let Some(g) = g {
                screen_grad[s].0 += g;
                screen_grad[s].1 += 1;
            }
            radius[s] = radius[s].max(v.radius[s]);
        }
        if let Some(grad) = grad.as_mut() {
            chain_to_params(params, scene, v, grad);
        }
    }

    match objective.mode {
        Mode::Reconstruction => {
            parts.offset = offset_drift(scene);
            parts.tracking =
                w.lambda_track * parts.offset + (1.0 - w.lambda_track) * parts.cross_entropy;
            parts.total = w.lambda_rec * parts.rgb + (1.0 - w.lambda_rec) * parts.tracking;
            if let Some(grad) = grad.as_mut() {
                let coeff = (1.0 - w.lambda_rec) * w.lambda_track;
                add_offset_grad(scene, coeff, grad);
            }
        }
        Mode::Edit {
            reference, free, ..
        } => {
            let sum: f64 = w.edit.iter().sum();
            parts.anchor = anchor_with_grad(
                params,
                scene,
                reference,
                free,
                w,
                w.edit[1] / sum,
                grad.as_mut(),
            )?;
            parts.total =
                (w.edit[0] * parts.rgb + w.edit[1] * parts.anchor + w.edit[2] * parts.adversarial)
                    / sum;
        }
    }

    if let Some(grad) = &grad {
        if let Some(pos) = grad.values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                splat: pos / PARAMS_PER_SPLAT,
                what: format!(
                    "gradient of {}",
                    crate::splat::PARAM_LAYOUT[pos % PARAMS_PER_SPLAT]
                ),
            });
        }
    }
    if !parts.total.is_finite() {
        return Err(Error::NonFinite {
            splat: 0,
            what: "loss value".into(),
        });
    }
    Ok(Evaluation {
        parts,
        grad,
        screen_grad,
        radius,
        regime: hasher.finish(),
        renders: per_view.into_iter().map(|v| v.render).collect(),
    })
}

/// Analytic gradient of `objective` with respect to every packed parameter.
pub fn backward(
    params: &ParamVector,
    template: &[GaussianSplat],
    views: &[View<'_>],
    objective: &Objective<'_>,
) -> Result<ParamVector> {
    Ok(evaluate(params, template, views, objective, true)?
        .grad
        .expect("gradient requested"))
}

fn evaluate_view(
    scene: &[GaussianSplat],
    view: &View<'_>,
    objective: &Objective<'_>,
    discriminator: Option<&Discriminator>,
    (c_rgb, c_ce, c_adv): (f64, f64, f64),
    want_grad: bool,
) -> Result<ViewResult> {
    let (world, links) = pose_world(scene, view.mesh)?;
    let opts = RenderOptions {
        record_floor: 0.0,
        ..Default::default()
    };
    let (render, trace) = rasterize(&world, view.camera, &opts, true);
    let trace = trace.expect("trace requested");
    let w = objective.weights;
    let mut hasher = DefaultHasher::new();
    hash_trace(&trace, &mut hasher);

    let (rgb, mut d_image) = rgb_loss_grad(
        view.target,
        &render.image,
        w.lambda_rgb,
        objective.perceptual,
    )?;
    if w.lambda_rgb < 1.0 {
        objective
            .perceptual
            .regime(&render.image, view.target)
            .hash(&mut hasher);
    }
    for g in d_image.iter_mut() {
        for v in g.iter_mut() {
            *v *= c_rgb;
        }
    }

    // Label cross-entropy over soft per-pixel label weights.
    let mut d_weight: Vec<Vec<f64>> = Vec::new();
    let mut ce = 0.0;
    if let Some(labels) = view.labels {
        render
            .image
            .check_same_size(labels, "segmenter labels vs camera")?;
        let pixels: Vec<Vec<(Label, f64)>> = trace
            .pixels
            .iter()
            .map(|entries| {
                entries
                    .iter()
                    .map(|e| {
                        let s = trace.projections[e.proj as usize].splat.index;
                        (world[s].label, e.alpha * e.t_before)
                    })
                    .collect()
            })
            .collect();
        let (value, n) = label_cross_entropy(pixels.iter().map(|p| p.as_slice()), labels);
        ce = value;
        if want_grad && n > 0 && c_ce > 0.0 {
            let scale = c_ce / n as f64;
            d_weight = pixels
                .iter()
                .zip(&labels.labels)
                .map(|(px, &y)| {
                    let total: f64 = px.iter().map(|c| c.1).sum();
                    if y == 0 || total <= 0.0 {
                        return Vec::new();
                    }
                    let hit: f64 = px.iter().filter(|c| c.0 == y).map(|c| c.1).sum();
                    let (inv_hit, inv_total) = (
                        1.0 / (hit + super::losses::CE_SMOOTHING),
                        1.0 / (total + super::losses::CE_SMOOTHING),
                    );
                    px.iter()
                        .map(|c| scale * (inv_total - if c.0 == y { inv_hit } else { 0.0 }))
                        .collect()
                })
                .collect();
        }
    }

    let mut adversarial = 0.0;
    if let Some(disc) = discriminator {
        let size = disc.patch;
        let n = view.patches.len().max(1) as f64;
        let mut scratch = vec![0.0; disc.params.len()];
        for &(x0, y0) in view.patches {
            if x0 + size > render.image.width || y0 + size > render.image.height {
                return Err(Error::DimensionMismatch(format!(
                    "patch at ({x0}, {y0}) leaves the image"
                )));
            }
            let patch = render.image.patch(x0, y0, size);
            disc.regime(&patch)?.hash(&mut hasher);
            let fwd = disc.forward(&patch)?;
            adversarial -= fwd.score / n;
            if want_grad && c_adv > 0.0 {
                let d_in = disc.backward(&fwd, -c_adv / n, &mut scratch);
                for yy in 0..size {
                    for xx in 0..size {
                        let idx = (y0 + yy) * render.image.width + x0 + xx;
                        for k in 0..3 {
                            d_image[idx][k] += d_in[(yy * size + xx) * 3 + k];
                        }
                    }
                }
            }
        }
    }

    let mut screen = vec![None; scene.len()];
    let mut radius = vec![0.0; scene.len()];
    for p in &trace.projections {
        let r = 3.0 * p.splat.cov2d[(0, 0)].max(p.splat.cov2d[(1, 1)]).sqrt();
        radius[p.splat.index] = r;
    }
    let world_grad = if want_grad {
        let (wg, screen_norms) = render_backward(&trace, &world, view.camera, &d_image, &d_weight);
        for (p, n) in trace.projections.iter().zip(screen_norms) {
            screen[p.splat.index] = Some(n);
        }
        wg
    } else {
        Vec::new()
    };
    Ok(ViewResult {
        rgb,
        ce,
        adversarial,
        world_grad,
        links,
        world,
        screen,
        radius,
        regime: hasher.finish(),
        render,
    })
}

fn hash_trace(trace: &Trace, hasher: &mut DefaultHasher) {
    for p in &trace.projections {
        p.splat.index.hash(hasher);
    }
    for entries in &trace.pixels {
        entries.len().hash(hasher);
        for e in entries {
            (trace.projections[e.proj as usize].splat.index, e.clamped).hash(hasher);
        }
    }
}

/// Per-pixel gradients on colors (`d_image`) and on contribution weights
/// (`d_weight`, parallel to the trace entries; may be empty) pulled back to
/// world parameters. Also returns, per projection, the norm of the gradient
/// on its screen-space mean.
fn render_backward(
    trace: &Trace,
    world: &[WorldSplat],
    cam: &Camera,
    d_image: &[[f64; 3]],
    d_weight: &[Vec<f64>],
) -> (Vec<WorldGrad>, Vec<f64>) {
    let n_proj = trace.projections.len();
    let width = cam.width;
    const BAND: usize = 8;

    #[derive(Clone)]
    struct Acc {
        mean: Vec<Vector2<f64>>,
        conic: Vec<Matrix2<f64>>,
        opacity: Vec<f64>,
        color: Vec<Vec3>,
    }
    let band_acc = |band: usize| -> Acc {
        let mut acc = Acc {
            mean: vec![Vector2::zeros(); n_proj],
            conic: vec![Matrix2::zeros(); n_proj],
            opacity: vec![0.0; n_proj],
            color: vec![Vec3::zeros(); n_proj],
        };
        let y_end = ((band + 1) * BAND).min(cam.height);
        for y in band * BAND..y_end {
            for x in 0..width {
                let idx = y * width + x;
                let entries = &trace.pixels[idx];
                if entries.is_empty() {
                    continue;
                }
                let dc = d_image[idx];
                let dw = d_weight.get(idx).filter(|v| !v.is_empty());
                let pix = Vector2::new(x as f64, y as f64);
                // Running Σ_{k>i} G_k w_k.
                let mut behind = 0.0;
                for (i, e) in entries.iter().enumerate().rev() {
                    let pi = e.proj as usize;
                    let proj = &trace.projections[pi];
                    let ws = &world[proj.splat.index];
                    let weight = e.alpha * e.t_before;
                    let g = dc[0] * ws.color.x
                        + dc[1] * ws.color.y
                        + dc[2] * ws.color.z
                        + dw.map_or(0.0, |v| v[i]);
                    acc.color[pi] += Vec3::new(dc[0], dc[1], dc[2]) * weight;
                    let d_alpha = e.t_before * g - behind / (1.0 - e.alpha);
                    behind += g * weight;
                    if e.clamped {
                        continue;
                    }
                    acc.opacity[pi] += d_alpha * e.falloff;
                    let dm = -0.5 * e.falloff * ws.opacity * d_alpha;
                    let d = pix - proj.splat.mean2d;
                    let a = &proj.conic;
                    acc.mean[pi] -= (a + a.transpose()) * d * dm;
                    acc.conic[pi] += d * d.transpose() * dm;
                }
            }
        }
        acc
    };
    let bands = cam.height.div_ceil(BAND);
    let accs: Vec<Acc> = (0..bands).into_par_iter().map(band_acc).collect();
    let mut total = Acc {
        mean: vec![Vector2::zeros(); n_proj],
        conic: vec![Matrix2::zeros(); n_proj],
        opacity: vec![0.0; n_proj],
        color: vec![Vec3::zeros(); n_proj],
    };
    for a in accs {
        for i in 0..n_proj {
            total.mean[i] += a.mean[i];
            total.conic[i] += a.conic[i];
            total.opacity[i] += a.opacity[i];
            total.color[i] += a.color[i];
        }
    }

    let mut out = vec![WorldGrad::default(); world.len()];
    let mut screen = Vec::with_capacity(n_proj);
    for (pi, proj) in trace.projections.iter().enumerate() {
        let s = proj.splat.index;
        let (d_mu, d_sigma) = projection_vjp(proj, cam, &total.mean[pi], &total.conic[pi]);
        let (d_rot, d_scale) = covariance_vjp(&world[s].rot, &world[s].scale, &d_sigma);
        let g = &mut out[s];
        g.mu += d_mu;
        g.rot += d_rot;
        g.scale += d_scale;
        g.opacity += total.opacity[pi];
        g.color += total.color[pi];
        screen.push(total.mean[pi].norm());
    }
    (out, screen)
}

/// Adds one view's world-parameter gradients to the packed gradient.
fn chain_to_params(
    params: &ParamVector,
    scene: &[GaussianSplat],
    view: &ViewResult,
    grad: &mut ParamVector,
) {
    for (s, g) in view.world_grad.iter().enumerate() {
        let raw = params.splat(s);
        let raw_q = [
            raw[SLOT_ROT],
            raw[SLOT_ROT + 1],
            raw[SLOT_ROT + 2],
            raw[SLOT_ROT + 3],
        ];
        let ws = &view.world[s];
        let (d_pos, d_unit_q) = match view.links[s] {
            PoseLink::Free => (g.mu, rotation_matrix_vjp(&scene[s].rotation, &g.rot)),
            PoseLink::Rigged {
                tri_rotation,
                tri_scale,
                local_rotation,
            } => (
                tri_rotation.transpose() * g.mu * tri_scale,
                rotation_matrix_vjp(&local_rotation, &(tri_rotation.transpose() * g.rot)),
            ),
        };
        let d_raw_q = normalize_vjp(&raw_q, &d_unit_q);
        let opacity = scene[s].opacity;
        let out = grad.splat_mut(s);
        for k in 0..3 {
            out[SLOT_POS + k] += d_pos[k];
            out[SLOT_SCALE + k] += ws.scale[k] * g.scale[k];
            let c = raw[SLOT_COLOR + k];
            if (0.0..=1.0).contains(&c) {
                out[SLOT_COLOR + k] += g.color[k];
            }
        }
        for k in 0..4 {
            out[SLOT_ROT + k] += d_raw_q[k];
        }
        out[SLOT_OPACITY] += opacity * (1.0 - opacity) * g.opacity;
    }
}

fn add_offset_grad(scene: &[GaussianSplat], coeff: f64, grad: &mut ParamVector) {
    let n = scene.iter().filter(|s| s.is_rigged()).count();
    if n == 0 || coeff == 0.0 {
        return;
    }
    for (i, s) in scene.iter().enumerate() {
        if let (Some(b), false) = (&s.binding, s.decoupled) {
            let d = (b.offset - b.rest_offset) * (2.0 * coeff / n as f64);
            let out = grad.splat_mut(i);
            for k in 0..3 {
                out[SLOT_POS + k] += d[k];
            }
        }
    }
}

/// Anchor loss value; when `grad` is given, adds `coeff ·` its gradient.
fn anchor_with_grad(
    params: &ParamVector,
    scene: &[GaussianSplat],
    reference: &[GaussianSplat],
    free: &[bool],
    weights: &LossWeights,
    coeff: f64,
    mut grad: Option<&mut ParamVector>,
) -> Result<f64> {
    let value = super::losses::gs_anchor_loss(scene, reference, &weights.anchor, free)?;
    let Some(grad) = grad.as_deref_mut() else {
        return Ok(value);
    };
    let a = &weights.anchor;
    for (i, (s, r)) in scene.iter().zip(reference).enumerate() {
        let f = coeff * if free[i] { FREE_SET_FACTOR } else { 1.0 };
        let (p, q, sc, c) = anchor_props(s);
        let (pr, qr, scr, cr) = anchor_props(r);
        let raw = params.splat(i);
        let raw_q = [
            raw[SLOT_ROT],
            raw[SLOT_ROT + 1],
            raw[SLOT_ROT + 2],
            raw[SLOT_ROT + 3],
        ];
        let d_unit: [f64; 4] = std::array::from_fn(|k| 2.0 * f * a.transform * (q[k] - qr[k]));
        let d_q = normalize_vjp(&raw_q, &d_unit);
        let out = grad.splat_mut(i);
        for k in 0..3 {
            out[SLOT_POS + k] += 2.0 * f * a.position * (p[k] - pr[k]);
            out[SLOT_SCALE + k] += 2.0 * f * a.transform * (sc[k] - scr[k]) * sc[k];
            if (0.0..=1.0).contains(&raw[SLOT_COLOR + k]) {
                out[SLOT_COLOR + k] += 2.0 * f * a.color * (c[k] - cr[k]);
            }
        }
        for k in 0..4 {
            out[SLOT_ROT + k] += d_q[k];
        }
    }
    Ok(value)
}
