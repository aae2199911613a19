//! Loss terms and their weights.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{Image, LabelMap};
use crate::render::RenderOutput;
use crate::splat::{GaussianSplat, Label, Vec3};

/// Smoothing added to both sides of the label likelihood ratio so pixels
/// covered only by faint splats stay finite.
pub const CE_SMOOTHING: f64 = 1e-3;

/// Weight multiplier applied to edit-selected splats in the anchor loss.
pub const FREE_SET_FACTOR: f64 = 0.01;

/// Per-property weights of the anchor loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnchorWeights {
    pub position: f64,
    /// Rotation (unit quaternion) and scale together.
    pub transform: f64,
    pub color: f64,
}

impl Default for AnchorWeights {
    fn default() -> Self {
        Self {
            position: 1.0,
            transform: 1.0,
            color: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    /// MSE share of the color loss; the rest goes to the perceptual term.
    pub lambda_rgb: f64,
    /// Offset-regularizer share of the tracking loss; the rest is label
    /// cross-entropy.
    pub lambda_track: f64,
    /// Color share of the reconstruction loss.
    pub lambda_rec: f64,
    pub anchor: AnchorWeights,
    /// Weights of color, anchor and adversarial terms in the edit loss.
    pub edit: [f64; 3],
}

impl LossWeights {
    /// Modeling-stage defaults (`lambda_rgb = 0.9`).
    pub fn modeling() -> Self {
        Self {
            lambda_rgb: 0.9,
            lambda_track: 0.5,
            lambda_rec: 0.8,
            anchor: AnchorWeights::default(),
            edit: [1.0, 1.0, 0.1],
        }
    }

    /// Editing-stage defaults (`lambda_rgb = 0.7`). The anchor is a sum over
    /// splats while the color loss is a per-pixel mean, so the anchor weights
    /// are small; geometry is held tighter than color.
    pub fn editing() -> Self {
        Self {
            lambda_rgb: 0.7,
            anchor: AnchorWeights {
                position: 1e-2,
                transform: 1e-2,
                color: 1e-4,
            },
            ..Self::modeling()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_rgb", self.lambda_rgb),
            ("lambda_track", self.lambda_track),
            ("lambda_rec", self.lambda_rec),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} = {v} is outside [0, 1]")));
            }
        }
        let a = &self.anchor;
        if [a.position, a.transform, a.color]
            .iter()
            .any(|v| !(*v >= 0.0 && v.is_finite()))
        {
            return Err(Error::Config(
                "anchor weights must be finite and non-negative".into(),
            ));
        }
        check_edit_triple(&self.edit)
    }
}

impl Default for LossWeights {
    fn default() -> Self {
        Self::modeling()
    }
}

fn check_edit_triple(l: &[f64; 3]) -> Result<()> {
    if l.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
        return Err(Error::Config(format!(
            "edit weights {l:?} must be finite and non-negative"
        )));
    }
    if l.iter().sum::<f64>() <= 0.0 {
        return Err(Error::Config("edit weights are all zero".into()));
    }
    Ok(())
}

/// A differentiable image similarity term. Implementations return the loss
/// and, when asked, its gradient with respect to `rendered`.
pub trait Perceptual: Send + Sync {
    fn eval(
        &self,
        rendered: &Image,
        target: &Image,
        want_grad: bool,
    ) -> (f64, Option<Vec<[f64; 3]>>);

    /// Signs of the internal absolute differences, for detecting points where
    /// the loss is not differentiable. Empty when the metric is smooth.
    fn regime(&self, _rendered: &Image, _target: &Image) -> Vec<i8> {
        Vec::new()
    }
}

/// Mean absolute difference of per-channel gradient magnitudes over a small
/// image pyramid (2×2 average pooling between levels).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradientProxy {
    pub levels: usize,
    /// Magnitudes are `sqrt(gx² + gy² + eps²)`, smooth at zero.
    pub eps: f64,
    /// With `delta > 0` the absolute difference becomes the smooth
    /// `sqrt(d² + delta²) − delta`. The default 0 is the plain `|d|`.
    pub delta: f64,
}

impl Default for GradientProxy {
    fn default() -> Self {
        Self {
            levels: 3,
            eps: 1e-3,
            delta: 0.0,
        }
    }
}

#[derive(Clone)]
struct Plane {
    w: usize,
    h: usize,
    v: Vec<f64>,
}

impl Plane {
    fn channel(img: &Image, k: usize) -> Self {
        Self {
            w: img.width,
            h: img.height,
            v: img.data.iter().map(|p| p[k]).collect(),
        }
    }

    fn pool(&self) -> Self {
        let (w, h) = (self.w / 2, self.h / 2);
        let mut v = vec![0.0; w * h];
        for y in 0..h {
            for x in 0..w {
                let at = |dx: usize, dy: usize| self.v[(2 * y + dy) * self.w + 2 * x + dx];
                v[y * w + x] = 0.25 * (at(0, 0) + at(1, 0) + at(0, 1) + at(1, 1));
            }
        }
        Self { w, h, v }
    }

    fn unpool(&self, coarse: &[f64], out: &mut [f64]) {
        let cw = self.w / 2;
        for y in 0..self.h / 2 {
            for x in 0..cw {
                let g = 0.25 * coarse[y * cw + x];
                for (dx, dy) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
                    out[(2 * y + dy) * self.w + 2 * x + dx] += g;
                }
            }
        }
    }

    /// Forward differences, zero on the last column/row.
    fn diffs(&self, x: usize, y: usize) -> (f64, f64) {
        let here = self.v[y * self.w + x];
        let gx = if x + 1 < self.w {
            self.v[y * self.w + x + 1] - here
        } else {
            0.0
        };
        let gy = if y + 1 < self.h {
            self.v[(y + 1) * self.w + x] - here
        } else {
            0.0
        };
        (gx, gy)
    }
}

impl GradientProxy {
    fn pyramid(&self, img: &Image) -> Vec<[Plane; 3]> {
        let mut levels = vec![[
            Plane::channel(img, 0),
            Plane::channel(img, 1),
            Plane::channel(img, 2),
        ]];
        while levels.len() < self.levels.max(1) {
            let last = levels.last().expect("non-empty");
            if last[0].w < 4 || last[0].h < 4 {
                break;
            }
            levels.push([last[0].pool(), last[1].pool(), last[2].pool()]);
        }
        levels
    }

    fn magnitude(&self, gx: f64, gy: f64) -> f64 {
        (gx * gx + gy * gy + self.eps * self.eps).sqrt()
    }

    fn smooth_abs(&self, d: f64) -> f64 {
        (d * d + self.delta * self.delta).sqrt() - self.delta
    }
}

impl Perceptual for GradientProxy {
    fn regime(&self, rendered: &Image, target: &Image) -> Vec<i8> {
        if self.delta > 0.0 {
            return Vec::new();
        }
        let (pa, pb) = (self.pyramid(rendered), self.pyramid(target));
        let mut signs = Vec::new();
        for (la, lb) in pa.iter().zip(&pb) {
            for k in 0..3 {
                for y in 0..la[k].h {
                    for x in 0..la[k].w {
                        let (ax, ay) = la[k].diffs(x, y);
                        let (bx, by) = lb[k].diffs(x, y);
                        let d = self.magnitude(ax, ay) - self.magnitude(bx, by);
                        signs.push(if d > 0.0 {
                            1
                        } else if d < 0.0 {
                            -1
                        } else {
                            0
                        });
                    }
                }
            }
        }
        signs
    }

    fn eval(
        &self,
        rendered: &Image,
        target: &Image,
        want_grad: bool,
    ) -> (f64, Option<Vec<[f64; 3]>>) {
        let pa = self.pyramid(rendered);
        let pb = self.pyramid(target);
        let n_levels = pa.len() as f64;
        let mut total = 0.0;
        // Gradient per level and channel, propagated coarse to fine at the end.
        let mut grads: Vec<[Vec<f64>; 3]> = Vec::new();
        for (la, lb) in pa.iter().zip(&pb) {
            let (w, h) = (la[0].w, la[0].h);
            let n = (w * h * 3) as f64;
            let mut level_sum = 0.0;
            let mut g_level: [Vec<f64>; 3] = Default::default();
            for k in 0..3 {
                let mut g = if want_grad {
                    vec![0.0; w * h]
                } else {
                    Vec::new()
                };
                for y in 0..h {
                    for x in 0..w {
                        let (ax, ay) = la[k].diffs(x, y);
                        let (bx, by) = lb[k].diffs(x, y);
                        let ma = self.magnitude(ax, ay);
                        let diff = ma - self.magnitude(bx, by);
                        level_sum += self.smooth_abs(diff);
                        if want_grad && diff != 0.0 {
                            let s = diff
                                / (diff * diff + self.delta * self.delta).sqrt()
                                / (n * n_levels);
                            let (dx, dy) = (s * ax / ma, s * ay / ma);
                            let i = y * w + x;
                            if x + 1 < w {
                                g[i + 1] += dx;
                                g[i] -= dx;
                            }
                            if y + 1 < h {
                                g[i + w] += dy;
                                g[i] -= dy;
                            }
                        }
                    }
                }
                g_level[k] = g;
            }
            total += level_sum / n;
            grads.push(g_level);
        }
        let value = total / n_levels;
        if !want_grad {
            return (value, None);
        }
        for l in (1..grads.len()).rev() {
            let coarse = std::mem::take(&mut grads[l]);
            for k in 0..3 {
                pa[l - 1][k].unpool(&coarse[k], &mut grads[l - 1][k]);
            }
        }
        let fine = &grads[0];
        let out = (0..rendered.data.len())
            .map(|i| [fine[0][i], fine[1][i], fine[2][i]])
            .collect();
        (value, Some(out))
    }
}

pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    a.check_same_size(b, "mse")?;
    if a.data.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(p, q)| (0..3).map(|k| (p[k] - q[k]).powi(2)).sum::<f64>())
        .sum();
    Ok(sum / (a.data.len() * 3) as f64)
}

/// `λ·MSE + (1−λ)·perceptual` with the default gradient proxy.
pub fn rgb_loss(image: &Image, rendered: &Image, lambda: f64) -> Result<f64> {
    rgb_loss_with(image, rendered, lambda, &GradientProxy::default())
}

pub fn rgb_loss_with(
    image: &Image,
    rendered: &Image,
    lambda: f64,
    perceptual: &dyn Perceptual,
) -> Result<f64> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidParameter(format!(
            "lambda {lambda} outside [0, 1]"
        )));
    }
    let m = mse(image, rendered)?;
    let p = if lambda < 1.0 {
        perceptual.eval(rendered, image, false).0
    } else {
        0.0
    };
    Ok(lambda * m + (1.0 - lambda) * p)
}

/// Color loss of `rendered` against `target` and its gradient with respect
/// to `rendered`.
pub(crate) fn rgb_loss_grad(
    target: &Image,
    rendered: &Image,
    lambda: f64,
    perceptual: &dyn Perceptual,
) -> Result<(f64, Vec<[f64; 3]>)> {
    let m = mse(target, rendered)?;
    let n = (rendered.data.len() * 3).max(1) as f64;
    let mut grad: Vec<[f64; 3]> = rendered
        .data
        .iter()
        .zip(&target.data)
        .map(|(r, t)| [0, 1, 2].map(|k| lambda * 2.0 * (r[k] - t[k]) / n))
        .collect();
    let mut value = lambda * m;
    if lambda < 1.0 {
        let (p, pg) = perceptual.eval(rendered, target, true);
        value += (1.0 - lambda) * p;
        for (g, q) in grad.iter_mut().zip(pg.expect("gradient requested")) {
            for k in 0..3 {
                g[k] += (1.0 - lambda) * q[k];
            }
        }
    }
    Ok((value, grad))
}

/// Mean squared local-offset drift `‖δ − δ̄‖²` over rigged splats.
pub fn offset_drift(scene: &[GaussianSplat]) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for s in scene {
        if let (Some(b), false) = (&s.binding, s.decoupled) {
            sum += (b.offset - b.rest_offset).norm_squared();
            n += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Per-pixel label cross-entropy over labeled pixels. Each pixel's soft
/// prediction is the share of contribution weight from splats carrying the
/// target label, smoothed by [`CE_SMOOTHING`]. Pixels with target label 0 or
/// no coverage are skipped. Returns the mean and the number of pixels used.
pub(crate) fn label_cross_entropy<'a, I>(pixels: I, targets: &LabelMap) -> (f64, usize)
where
    I: Iterator<Item = &'a [(Label, f64)]>,
{
    let mut sum = 0.0;
    let mut n = 0;
    for (contribs, &y) in pixels.zip(&targets.labels) {
        if y == 0 {
            continue;
        }
        let total: f64 = contribs.iter().map(|c| c.1).sum();
        if total <= 0.0 {
            continue;
        }
        let hit: f64 = contribs.iter().filter(|c| c.0 == y).map(|c| c.1).sum();
        sum -= ((hit + CE_SMOOTHING) / (total + CE_SMOOTHING)).ln();
        n += 1;
    }
    (if n == 0 { 0.0 } else { sum / n as f64 }, n)
}

/// `λ·offset drift + (1−λ)·label cross-entropy`, with the soft label
/// prediction taken from `rendered`'s contribution records. Render with a
/// record floor of 0 to include every contributor.
pub fn tracking_loss(
    scene: &[GaussianSplat],
    rendered: &RenderOutput,
    segmenter_mask: &LabelMap,
    lambda: f64,
) -> Result<f64> {
    rendered
        .image
        .check_same_size(segmenter_mask, "tracking loss")?;
    let mut pixels: Vec<Vec<(Label, f64)>> = Vec::with_capacity(rendered.records.len());
    for recs in &rendered.records {
        let mut px = Vec::with_capacity(recs.len());
        for r in recs {
            let s = scene.get(r.splat).ok_or_else(|| {
                Error::Misaligned(format!("record names splat {} of {}", r.splat, scene.len()))
            })?;
            px.push((s.label, r.weight));
        }
        pixels.push(px);
    }
    let (ce, _) = label_cross_entropy(pixels.iter().map(|v| v.as_slice()), segmenter_mask);
    Ok(lambda * offset_drift(scene) + (1.0 - lambda) * ce)
}

/// Anchored quantities of one splat: position, unit quaternion, linear scale
/// and color. Rigged splats use their triangle-local values.
pub(crate) fn anchor_props(s: &GaussianSplat) -> (Vec3, [f64; 4], Vec3, Vec3) {
    let (pos, q, scale) = match (&s.binding, s.decoupled) {
        (Some(b), false) => (b.offset, b.local_rotation.normalize(), b.local_scale),
        _ => (s.mu, s.rotation.normalize(), s.scale),
    };
    (pos, [q.w, q.i, q.j, q.k], scale, s.color)
}

/// `Σⱼ wⱼ Σᵢ λᵢ ‖propᵢ(j) − propᵢ_ref(j)‖²` with `wⱼ = 0.01` for splats in
/// `free` and 1 otherwise.
pub fn gs_anchor_loss(
    scene: &[GaussianSplat],
    reference: &[GaussianSplat],
    weights: &AnchorWeights,
    free: &[bool],
) -> Result<f64> {
    if scene.len() != reference.len() || free.len() != scene.len() {
        return Err(Error::Misaligned(format!(
            "scene has {} splats, reference {}, free set {}",
            scene.len(),
            reference.len(),
            free.len()
        )));
    }
    let mut total = 0.0;
    for ((s, r), is_free) in scene.iter().zip(reference).zip(free) {
        if s.is_rigged() != r.is_rigged() {
            return Err(Error::Misaligned("rigging differs from reference".into()));
        }
        let (p, q, sc, c) = anchor_props(s);
        let (pr, qr, scr, cr) = anchor_props(r);
        let dq: f64 = q.iter().zip(&qr).map(|(a, b)| (a - b).powi(2)).sum();
        let term = weights.position * (p - pr).norm_squared()
            + weights.transform * (dq + (sc - scr).norm_squared())
            + weights.color * (c - cr).norm_squared();
        total += if *is_free { FREE_SET_FACTOR } else { 1.0 } * term;
    }
    Ok(total)
}

/// `mean(max(0, 1 − D(x))) + mean(max(0, 1 + D(G(z))))`.
pub fn hinge_d_loss(real: &[f64], fake: &[f64]) -> f64 {
    mean(real.iter().map(|d| (1.0 - d).max(0.0))) + mean(fake.iter().map(|d| (1.0 + d).max(0.0)))
}

/// `−mean(D(G(z)))`.
pub fn hinge_g_loss(fake: &[f64]) -> f64 {
    -mean(fake.iter().copied())
}

fn mean(it: impl ExactSizeIterator<Item = f64>) -> f64 {
    let n = it.len();
    if n == 0 {
        0.0
    } else {
        it.sum::<f64>() / n as f64
    }
}

/// `λ·L_rgb + (1−λ)·L_track`.
pub fn total_rec_loss(rgb: f64, tracking: f64, lambda: f64) -> f64 {
    lambda * rgb + (1.0 - lambda) * tracking
}

/// `(λ₁L_rgb + λ₂L_gs + λ₃L_G) / (λ₁ + λ₂ + λ₃)`.
pub fn total_edit_loss(rgb: f64, gs: f64, adversarial: f64, weights: &[f64; 3]) -> Result<f64> {
    check_edit_triple(weights)?;
    let sum: f64 = weights.iter().sum();
    Ok((weights[0] * rgb + weights[1] * gs + weights[2] * adversarial) / sum)
}
