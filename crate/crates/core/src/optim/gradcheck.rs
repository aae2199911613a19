//! Central finite-difference verification of [`backward`](super::backward).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::backward::{evaluate, Objective, View};
use super::discriminator::Discriminator;
use super::losses::LossWeights;
use crate::error::Result;
use crate::imaging::{Image, LabelMap};
use crate::render::Camera;
use crate::rig::{bind_splats, MeshFrame};
use crate::splat::{
    pack_params, GaussianSplat, ParamClass, ParamVector, Quat, Vec3, PARAMS_PER_SPLAT,
};

/// Absolute floor in the relative-error denominator, so coordinates whose
/// true derivative is numerically zero are judged on absolute error.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradcheckOptions {
    pub step: f64,
    /// Check every `stride`-th coordinate (1 = all).
    pub stride: usize,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-4,
            stride: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoordinateCheck {
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub checked: usize,
    /// Coordinates whose ±step stencil crossed a non-smooth point of the loss
    /// (a splat entering or leaving a pixel's 3σ ellipse, a depth-order swap,
    /// an alpha clamp, ...). Central differences are meaningless there.
    pub skipped_nonsmooth: usize,
    pub max_rel_error: f64,
    pub worst: Option<CoordinateCheck>,
    /// Max relative error per parameter class, in [`ParamClass::ALL`] order.
    pub per_class: [f64; 5],
    pub checked_per_class: [usize; 5],
}

impl GradcheckReport {
    pub fn merge(&mut self, other: &GradcheckReport) {
        self.checked += other.checked;
        self.skipped_nonsmooth += other.skipped_nonsmooth;
        if other.max_rel_error > self.max_rel_error || self.worst.is_none() {
            if other.worst.is_some() {
                self.worst = other.worst;
            }
        }
        self.max_rel_error = self.max_rel_error.max(other.max_rel_error);
        for k in 0..5 {
            self.per_class[k] = self.per_class[k].max(other.per_class[k]);
            self.checked_per_class[k] += other.checked_per_class[k];
        }
    }
}

pub fn relative_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(REL_FLOOR)
}

/// Compares the analytic gradient with central differences coordinate by
/// coordinate, skipping stencils that straddle a non-smooth point.
pub fn gradcheck(
    params: &ParamVector,
    template: &[GaussianSplat],
    views: &[View<'_>],
    objective: &Objective<'_>,
    opts: &GradcheckOptions,
) -> Result<GradcheckReport> {
    let base = evaluate(params, template, views, objective, true)?;
    let analytic = base.grad.expect("gradient requested");
    let mut report = GradcheckReport::default();
    let mut probe = params.clone();
    for i in (0..params.len()).step_by(opts.stride.max(1)) {
        let orig = params.values[i];
        probe.values[i] = orig + opts.step;
        let up = evaluate(&probe, template, views, objective, false)?;
        probe.values[i] = orig - opts.step;
        let down = evaluate(&probe, template, views, objective, false)?;
        probe.values[i] = orig;
        if up.regime != base.regime || down.regime != base.regime {
            report.skipped_nonsmooth += 1;
            continue;
        }
        let numeric = (up.parts.total - down.parts.total) / (2.0 * opts.step);
        let a = analytic.values[i];
        let rel = relative_error(a, numeric);
        let class = ParamClass::of_slot(i % PARAMS_PER_SPLAT) as usize;
        report.checked += 1;
        report.checked_per_class[class] += 1;
        report.per_class[class] = report.per_class[class].max(rel);
        if rel > report.max_rel_error || report.worst.is_none() {
            report.max_rel_error = report.max_rel_error.max(rel);
            report.worst = Some(CoordinateCheck {
                index: i,
                analytic: a,
                numeric,
                rel_error: rel,
            });
        }
    }
    Ok(report)
}

/// Random configuration for [`random_case`]: `n_splats` splats in a box in
/// front of a `size × size` camera, every other one bound to a tilted
/// two-triangle mesh, checked against a noise target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RandomCaseConfig {
    pub n_splats: usize,
    pub size: usize,
}

impl Default for RandomCaseConfig {
    fn default() -> Self {
        Self {
            n_splats: 20,
            size: 24,
        }
    }
}

fn random_scene(n: usize, mesh: &MeshFrame, rng: &mut ChaCha8Rng) -> Result<Vec<GaussianSplat>> {
    let free: Vec<GaussianSplat> = (0..n)
        .map(|_| {
            let mu = Vec3::from_fn(|_, _| rng.random_range(-1.0..1.0));
            let scale = Vec3::from_fn(|_, _| rng.random_range(0.08..0.35));
            let color = Vec3::from_fn(|_, _| rng.random_range(0.1..0.9));
            let q = Quat::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            GaussianSplat::new(mu, scale, rng.random_range(0.2..0.9), color)
                .with_rotation(q.normalize())
                .with_label(rng.random_range(1..4))
        })
        .collect();
    let bound = bind_splats(&free, mesh)?;
    Ok(free
        .into_iter()
        .zip(bound)
        .enumerate()
        .map(|(i, (f, b))| if i % 2 == 0 { b } else { f })
        .collect())
}

/// Gradient check of one random scene. Even seeds use the reconstruction
/// objective with label targets; odd seeds the edit objective with anchors,
/// a free set and a random discriminator on two patches.
pub fn random_case(
    seed: u64,
    config: &RandomCaseConfig,
    opts: &GradcheckOptions,
) -> Result<GradcheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let size = config.size;
    let camera = Camera::look_at(
        Vec3::new(0.0, 0.0, -4.0),
        Vec3::zeros(),
        Vec3::y(),
        1.2 * size as f64,
        size,
        size,
        0,
    )?;
    let mesh = MeshFrame::new(
        vec![
            Vec3::new(-1.2, -1.2, 0.3),
            Vec3::new(1.2, -1.2, 0.0),
            Vec3::new(1.2, 1.2, -0.3),
            Vec3::new(-1.2, 1.2, 0.1),
        ],
        vec![[0, 1, 2], [0, 2, 3]],
        0,
    )?;
    let reference = random_scene(config.n_splats, &mesh, &mut rng)?;
    let mut target = Image::new(size, size);
    for px in target.data.iter_mut() {
        *px = [rng.random(), rng.random(), rng.random()];
    }
    if seed % 2 == 0 {
        let mut labels = LabelMap::new(size, size);
        for l in labels.labels.iter_mut() {
            *l = rng.random_range(0..4);
        }
        let weights = LossWeights::modeling();
        let views = [View {
            camera: &camera,
            mesh: Some(&mesh),
            target: &target,
            labels: Some(&labels),
            patches: &[],
        }];
        return gradcheck(
            &pack_params(&reference),
            &reference,
            &views,
            &Objective::reconstruction(&weights),
            opts,
        );
    }
    let mut scene = reference.clone();
    for s in scene.iter_mut() {
        s.color = s
            .color
            .map(|c| (c + rng.random_range(-0.05..0.05)).clamp(0.05, 0.95));
        s.mu += Vec3::from_fn(|_, _| rng.random_range(-0.02..0.02));
    }
    let free: Vec<bool> = (0..scene.len()).map(|_| rng.random_bool(0.3)).collect();
    let patch = (size / 3).max(2);
    let mut disc = Discriminator::new(patch, &mut rng);
    for p in disc.params.iter_mut() {
        *p = rng.random_range(-0.3..0.3);
    }
    let patches: Vec<(usize, usize)> = (0..2)
        .map(|_| {
            (
                rng.random_range(0..=size - patch),
                rng.random_range(0..=size - patch),
            )
        })
        .collect();
    let weights = LossWeights::editing();
    let views = [View {
        camera: &camera,
        mesh: Some(&mesh),
        target: &target,
        labels: None,
        patches: &patches,
    }];
    let objective = Objective::edit(&weights, &reference, &free, Some(&disc));
    gradcheck(&pack_params(&scene), &scene, &views, &objective, opts)
}

/// Runs [`random_case`] for seeds `seed..seed + cases` and merges the
/// reports in seed order.
pub fn random_suite(
    cases: usize,
    seed: u64,
    config: &RandomCaseConfig,
    opts: &GradcheckOptions,
) -> Result<GradcheckReport> {
    let reports: Vec<Result<GradcheckReport>> = (0..cases as u64)
        .into_par_iter()
        .map(|k| random_case(seed.wrapping_add(k), config, opts))
        .collect();
    let mut total = GradcheckReport::default();
    for r in reports {
        total.merge(&r?);
    }
    Ok(total)
}
