//! Edit-region mapping over time and camera pose.
//!
//! Masks observed at a rectangular lattice of `(time, pose)` nodes are stored
//! as `{0, 1}` floats. A query at any `(t, p)` bilinearly interpolates the
//! four surrounding node masks per pixel and thresholds the result (`≥ θ`).
//! The pose coordinate is the camera's position in the rig ordering.
//!
//! [`select_splats`] then collects every splat that contributes weight to the
//! mapped region in any sampled frame and view.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::Mask;
use crate::render::{render_with, Camera, RenderOptions};
use crate::splat::GaussianSplat;

pub const DEFAULT_THRESHOLD: f64 = 0.5;
pub const DEFAULT_MIN_WEIGHT: f64 = 1e-3;

/// Binary mask tagged with the `(t, p)` it belongs to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemanticMask {
    pub mask: Mask,
    pub t: f64,
    pub p: f64,
}

/// One input node of a [`MaskGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct MaskNode {
    pub t: f64,
    pub p: f64,
    pub mask: Mask,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskGrid {
    times: Vec<f64>,
    poses: Vec<f64>,
    width: usize,
    height: usize,
    /// Node values, indexed `[ti * poses.len() + pj][pixel]`.
    values: Vec<Vec<f64>>,
}

/// Outcome of [`warp_mask`].
#[derive(Debug, Clone, PartialEq)]
pub struct Warped {
    pub mask: SemanticMask,
    /// The query lay outside the node range and was clamped onto it.
    pub clamped: bool,
}

/// Builds the lattice from a complete set of nodes.
pub fn build_mask_grid(nodes: &[MaskNode]) -> Result<MaskGrid> {
    let first = nodes.first().ok_or(Error::EmptyGrid)?;
    let (width, height) = (first.mask.width, first.mask.height);
    let mut times: Vec<f64> = nodes.iter().map(|n| n.t).collect();
    let mut poses: Vec<f64> = nodes.iter().map(|n| n.p).collect();
    for v in times.iter().chain(&poses) {
        if !v.is_finite() {
            return Err(Error::InvalidParameter("non-finite grid coordinate".into()));
        }
    }
    times.sort_by(f64::total_cmp);
    times.dedup();
    poses.sort_by(f64::total_cmp);
    poses.dedup();

    let mut slots: Vec<Option<Vec<f64>>> = vec![None; times.len() * poses.len()];
    for node in nodes {
        if node.mask.width != width || node.mask.height != height {
            return Err(Error::DimensionMismatch(format!(
                "node (t={}, p={}) is {}x{}, expected {width}x{height}",
                node.t, node.p, node.mask.width, node.mask.height
            )));
        }
        let ti = times
            .iter()
            .position(|t| *t == node.t)
            .expect("time present");
        let pj = poses
            .iter()
            .position(|p| *p == node.p)
            .expect("pose present");
        let slot = &mut slots[ti * poses.len() + pj];
        if slot.is_some() {
            return Err(Error::InvalidParameter(format!(
                "duplicate grid node (t={}, p={})",
                node.t, node.p
            )));
        }
        *slot = Some(
            node.mask
                .bits
                .iter()
                .map(|b| if *b { 1.0 } else { 0.0 })
                .collect(),
        );
    }
    let mut values = Vec::with_capacity(slots.len());
    for (k, slot) in slots.into_iter().enumerate() {
        match slot {
            Some(v) => values.push(v),
            None => {
                return Err(Error::IncompleteGrid {
                    t: times[k / poses.len()],
                    p: poses[k % poses.len()],
                })
            }
        }
    }
    Ok(MaskGrid {
        times,
        poses,
        width,
        height,
        values,
    })
}

/// Cell index and fractional position of `x` on a sorted axis.
fn locate(axis: &[f64], x: f64) -> (usize, f64, bool) {
    let (lo, hi) = (axis[0], axis[axis.len() - 1]);
    let clamped = x < lo || x > hi;
    let x = x.clamp(lo, hi);
    if axis.len() == 1 {
        return (0, 0.0, clamped);
    }
    let cell = axis
        .partition_point(|v| *v <= x)
        .saturating_sub(1)
        .min(axis.len() - 2);
    let u = (x - axis[cell]) / (axis[cell + 1] - axis[cell]);
    (cell, u, clamped)
}

impl MaskGrid {
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn poses(&self) -> &[f64] {
        &self.poses
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Stored `{0, 1}` values of the node at lattice position `(ti, pj)`.
    pub fn node(&self, ti: usize, pj: usize) -> &[f64] {
        &self.values[ti * self.poses.len() + pj]
    }

    /// Bilinear per-pixel values at `(t, p)` and whether the query was clamped.
    pub fn interpolate(&self, t: f64, p: f64) -> Result<(Vec<f64>, bool)> {
        if self.values.is_empty() {
            return Err(Error::EmptyGrid);
        }
        let (ti, u, ct) = locate(&self.times, t);
        let (pj, v, cp) = locate(&self.poses, p);
        let ti1 = (ti + 1).min(self.times.len() - 1);
        let pj1 = (pj + 1).min(self.poses.len() - 1);
        let (m00, m10) = (self.node(ti, pj), self.node(ti1, pj));
        let (m01, m11) = (self.node(ti, pj1), self.node(ti1, pj1));
        let (w00, w10, w01, w11) = ((1.0 - u) * (1.0 - v), u * (1.0 - v), (1.0 - u) * v, u * v);
        let out = (0..self.width * self.height)
            // The clamp only removes round-off: the weights sum to 1 up to an ulp.
            .map(|k| (w00 * m00[k] + w10 * m10[k] + w01 * m01[k] + w11 * m11[k]).clamp(0.0, 1.0))
            .collect();
        Ok((out, ct || cp))
    }
}

/// Mask at `(t, p)`: bilinear interpolation over the surrounding nodes, then
/// `value ≥ threshold`. Queries outside the node range are clamped and
/// flagged.
pub fn warp_mask(grid: &MaskGrid, t: f64, p: f64, threshold: f64) -> Result<Warped> {
    let (values, clamped) = grid.interpolate(t, p)?;
    Ok(Warped {
        mask: SemanticMask {
            mask: Mask {
                width: grid.width,
                height: grid.height,
                bits: values.iter().map(|v| *v >= threshold).collect(),
            },
            t,
            p,
        },
        clamped,
    })
}

/// Splats contributing to an edit region, with their accumulated weight.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SplatSelection {
    pub weights: BTreeMap<usize, f64>,
}

impl SplatSelection {
    pub fn contains(&self, splat: usize) -> bool {
        self.weights.contains_key(&splat)
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.weights.keys().copied()
    }

    /// Membership flags for a scene of `n` splats.
    pub fn flags(&self, n: usize) -> Vec<bool> {
        let mut out = vec![false; n];
        for i in self.indices() {
            if i < n {
                out[i] = true;
            }
        }
        out
    }
}

/// A sampled `(t, p)` for [`select_splats`]: the scene posed at frame `t`, the
/// camera for pose `p`, and the region to accumulate over.
pub struct SelectionSample<'a> {
    pub posed: &'a [GaussianSplat],
    pub camera: &'a Camera,
    pub region: &'a Mask,
}

/// Accumulates each splat's contribution weight over region pixels across the
/// samples and keeps splats whose total exceeds `w_min`. All contributors are
/// counted, with no record floor.
pub fn accumulate_selection(samples: &[SelectionSample<'_>], w_min: f64) -> Result<SplatSelection> {
    let opts = RenderOptions {
        record_floor: 0.0,
        ..Default::default()
    };
    let mut weights: BTreeMap<usize, f64> = BTreeMap::new();
    for sample in samples {
        let out = render_with(sample.posed, sample.camera, &opts);
        out.image
            .check_same_size(sample.region, "selection region vs camera")?;
        for (pixel, recs) in out.records.iter().enumerate() {
            if sample.region.bits[pixel] {
                for r in recs {
                    *weights.entry(r.splat).or_default() += r.weight;
                }
            }
        }
    }
    weights.retain(|_, w| *w > w_min);
    Ok(SplatSelection { weights })
}

/// Node to sample during selection: frame index `t` and camera index `p`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeKey {
    pub t: usize,
    pub p: usize,
}

/// Renders `scenes[t]` through `cameras[p]` for every sampled node, warps the
/// grid to that node, and accumulates contributions inside it.
pub fn select_splats(
    scenes: &[Vec<GaussianSplat>],
    cameras: &[Camera],
    grid: &MaskGrid,
    nodes: &[NodeKey],
    threshold: f64,
    w_min: f64,
) -> Result<SplatSelection> {
    let mut regions = Vec::with_capacity(nodes.len());
    for node in nodes {
        let cam = cameras
            .get(node.p)
            .ok_or_else(|| Error::InvalidParameter(format!("no camera for pose {}", node.p)))?;
        if node.t >= scenes.len() {
            return Err(Error::InvalidParameter(format!(
                "no posed scene for frame {}",
                node.t
            )));
        }
        let warped = warp_mask(grid, node.t as f64, cam.pose_index as f64, threshold)?;
        regions.push(warped.mask.mask);
    }
    let samples: Vec<SelectionSample<'_>> = nodes
        .iter()
        .zip(&regions)
        .map(|(node, region)| SelectionSample {
            posed: &scenes[node.t],
            camera: &cameras[node.p],
            region,
        })
        .collect();
    accumulate_selection(&samples, w_min)
}
