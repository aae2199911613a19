//! Adaptive density control: clone small high-gradient splats, split large
//! ones, prune transparent ones. Children inherit label and binding.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::splat::{rotation_matrix, GaussianSplat, Vec3};

/// Default densification cadence in iterations.
pub const DENSIFY_INTERVAL: usize = 2048;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensifyThresholds {
    /// Mean screen-space positional gradient above which a splat densifies.
    pub grad_threshold: f64,
    /// Splats below this opacity are pruned.
    pub min_opacity: f64,
    /// Largest world scale component, as a fraction of the scene extent,
    /// separating clone (below) from split (above).
    pub split_fraction: f64,
    pub scene_extent: f64,
    /// Child scales are divided by this on split.
    pub split_shrink: f64,
    pub max_splats: usize,
}

impl Default for DensifyThresholds {
    fn default() -> Self {
        Self {
            grad_threshold: 2e-4,
            min_opacity: 0.005,
            split_fraction: 0.01,
            scene_extent: 1.0,
            split_shrink: 1.6,
            max_splats: 500,
        }
    }
}

/// Running per-splat statistics between densification steps.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DensifyStats {
    pub grad_accum: Vec<f64>,
    pub grad_count: Vec<u32>,
    pub max_radius: Vec<f64>,
    pub iteration: usize,
}

impl DensifyStats {
    pub fn new(splats: usize) -> Self {
        Self {
            grad_accum: vec![0.0; splats],
            grad_count: vec![0; splats],
            max_radius: vec![0.0; splats],
            iteration: 0,
        }
    }

    /// Records one view's screen-space positional gradient norm for a
    /// visible splat.
    pub fn observe(&mut self, splat: usize, grad_norm: f64, radius: f64) {
        self.grad_accum[splat] += grad_norm;
        self.grad_count[splat] += 1;
        self.max_radius[splat] = self.max_radius[splat].max(radius);
    }

    pub fn mean_grad(&self, splat: usize) -> f64 {
        match self.grad_count[splat] {
            0 => 0.0,
            n => self.grad_accum[splat] / n as f64,
        }
    }

    pub fn reset(&mut self, splats: usize) {
        let iteration = self.iteration;
        *self = Self::new(splats);
        self.iteration = iteration;
    }
}

/// Where each splat of a densified scene came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SplatOrigin {
    /// Kept from the input scene at this index.
    Kept(usize),
    /// Newly created from this input splat.
    Child(usize),
}

#[derive(Debug, Clone)]
pub struct DensifyOutcome {
    pub scene: Vec<GaussianSplat>,
    pub origin: Vec<SplatOrigin>,
    pub cloned: usize,
    pub split: usize,
    pub pruned: usize,
}

/// One densify-and-prune pass. World fields of rigged splats must be current
/// (posed). Statistics are reset for the new scene.
pub fn densify_and_prune<R: Rng + ?Sized>(
    scene: &[GaussianSplat],
    stats: &mut DensifyStats,
    thresholds: &DensifyThresholds,
    rng: &mut R,
) -> DensifyOutcome {
    let mut keep: Vec<bool> = scene
        .iter()
        .map(|s| s.opacity >= thresholds.min_opacity)
        .collect();
    // Enforce the cap on the surviving set by dropping the faintest splats.
    let mut survivors: Vec<usize> = (0..scene.len()).filter(|i| keep[*i]).collect();
    if survivors.len() > thresholds.max_splats {
        survivors.sort_by(|a, b| {
            scene[*b]
                .opacity
                .total_cmp(&scene[*a].opacity)
                .then(a.cmp(b))
        });
        for &i in &survivors[thresholds.max_splats..] {
            keep[i] = false;
        }
    }
    let pruned = keep.iter().filter(|k| !**k).count();
    let mut count = scene.len() - pruned;

    let mut candidates: Vec<usize> = (0..scene.len())
        .filter(|i| keep[*i] && stats.mean_grad(*i) > thresholds.grad_threshold)
        .collect();
    candidates.sort_by(|a, b| {
        stats
            .mean_grad(*b)
            .total_cmp(&stats.mean_grad(*a))
            .then(a.cmp(b))
    });
    let size_limit = thresholds.split_fraction * thresholds.scene_extent;
    // 0 = untouched, 1 = clone, 2 = split
    let mut action = vec![0u8; scene.len()];
    for i in candidates {
        let is_large = scene[i].scale.max() > size_limit;
        // A clone adds one splat; a split replaces one with two.
        if count + 1 > thresholds.max_splats {
            break;
        }
        count += 1;
        action[i] = if is_large { 2 } else { 1 };
    }

    let mut out = Vec::with_capacity(count);
    let mut origin = Vec::with_capacity(count);
    let (mut cloned, mut split) = (0, 0);
    for (i, splat) in scene.iter().enumerate() {
        if !keep[i] {
            continue;
        }
        match action[i] {
            1 => {
                cloned += 1;
                out.push(splat.clone());
                origin.push(SplatOrigin::Kept(i));
                out.push(fresh_child(splat.clone()));
                origin.push(SplatOrigin::Child(i));
            }
            2 => {
                split += 1;
                for _ in 0..2 {
                    out.push(split_child(splat, thresholds.split_shrink, rng));
                    origin.push(SplatOrigin::Child(i));
                }
            }
            _ => {
                out.push(splat.clone());
                origin.push(SplatOrigin::Kept(i));
            }
        }
    }
    stats.reset(out.len());
    DensifyOutcome {
        scene: out,
        origin,
        cloned,
        split,
        pruned,
    }
}

fn fresh_child(mut child: GaussianSplat) -> GaussianSplat {
    if let Some(b) = child.binding.as_mut() {
        b.rest_offset = b.offset;
    }
    child
}

fn split_child<R: Rng + ?Sized>(parent: &GaussianSplat, shrink: f64, rng: &mut R) -> GaussianSplat {
    let z = Vec3::new(
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
    );
    let mut child = parent.clone();
    child.mu = parent.mu + rotation_matrix(&parent.rotation) * parent.scale.component_mul(&z);
    child.scale = parent.scale / shrink;
    if let (Some(b), false) = (child.binding.as_mut(), parent.decoupled) {
        b.offset += rotation_matrix(&b.local_rotation) * b.local_scale.component_mul(&z);
        b.rest_offset = b.offset;
        b.local_scale /= shrink;
    }
    child
}
