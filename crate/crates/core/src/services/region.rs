//! Mapping plan instructions to node masks and splat selections.

use std::collections::BTreeMap;

use rayon::prelude::*;

use super::{Instruction, Qualifier, Target};
use crate::error::{Error, Result};
use crate::imaging::Mask;
use crate::maskmap::{
    build_mask_grid, select_splats, MaskGrid, MaskNode, NodeKey, SplatSelection,
    DEFAULT_MIN_WEIGHT, DEFAULT_THRESHOLD,
};
use crate::render::{render, Camera};
use crate::rig::{pose_splats, MeshFrame, LABEL_FACE};
use crate::splat::{GaussianSplat, Vec3};

/// Regions derived from label geometry rather than a label of their own.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NamedRegion {
    /// The lateral extremes of the face band.
    Ear,
}

impl NamedRegion {
    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "ear" | "ears" => Some(NamedRegion::Ear),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegionConfig {
    /// Subject-left direction in the rest pose. Left/right qualifiers keep
    /// the splats on that side of the plane through the mesh centroid.
    pub lateral_axis: Vec3,
    pub threshold: f64,
    pub min_weight: f64,
    /// Face splats whose |lateral| reaches this fraction of the face's
    /// lateral extent form the ear region.
    pub ear_fraction: f64,
}

impl Default for RegionConfig {
    fn default() -> Self {
        Self {
            lateral_axis: Vec3::x(),
            threshold: DEFAULT_THRESHOLD,
            min_weight: DEFAULT_MIN_WEIGHT,
            ear_fraction: 0.75,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RegionPlan {
    pub selection: SplatSelection,
    pub masks: BTreeMap<NodeKey, Mask>,
    pub grid: MaskGrid,
}

fn relabeled(scene: &[GaussianSplat], keep: &[bool]) -> Vec<GaussianSplat> {
    scene
        .iter()
        .zip(keep)
        .map(|(s, k)| {
            let mut s = s.clone();
            s.label = *k as u16;
            s
        })
        .collect()
}

/// Renders the instruction's target at every node, builds the mask grid
/// and selects every splat contributing inside it.
///
/// Label targets produce exactly `render_label_mask` masks. A qualifier
/// intersects them with the pixels owned by splats on that side of the
/// subject. `scene` is the canonical (bound) scene; `meshes[t]` poses it
/// for frame `t`, or it is used as is when `meshes` is empty.
pub fn plan_to_region(
    instruction: &Instruction,
    scene: &[GaussianSplat],
    meshes: &[MeshFrame],
    cameras: &[Camera],
    nodes: &[NodeKey],
    config: &RegionConfig,
) -> Result<RegionPlan> {
    if nodes.is_empty() {
        return Err(Error::EmptyGrid);
    }
    let max_t = nodes.iter().map(|n| n.t).max().unwrap_or(0);
    let pose = |t: usize| -> Result<Vec<GaussianSplat>> {
        match meshes.get(t) {
            Some(m) => pose_splats(scene, m),
            None if meshes.is_empty() => Ok(scene.to_vec()),
            None => Err(Error::InvalidParameter(format!("no mesh for frame {t}"))),
        }
    };
    let mut posed = vec![Vec::new(); max_t + 1];
    for t in nodes.iter().map(|n| n.t) {
        if posed[t].is_empty() {
            posed[t] = pose(t)?;
        }
    }
    let rest = pose(0)?;
    let center = match meshes.first() {
        Some(m) => m.centroid(),
        None => rest.iter().map(|s| s.mu).sum::<Vec3>() / rest.len().max(1) as f64,
    };
    let axis = config.lateral_axis.normalize();
    let lateral: Vec<f64> = rest.iter().map(|s| (s.mu - center).dot(&axis)).collect();

    let member: Vec<bool> = match &instruction.target {
        Target::Label(l) => scene.iter().map(|s| s.label == *l).collect(),
        Target::Region(name) => match NamedRegion::parse(name) {
            Some(NamedRegion::Ear) => {
                let extent = scene
                    .iter()
                    .zip(&lateral)
                    .filter(|(s, _)| s.label == LABEL_FACE)
                    .map(|(_, l)| l.abs())
                    .fold(0.0, f64::max);
                scene
                    .iter()
                    .zip(&lateral)
                    .map(|(s, l)| {
                        s.label == LABEL_FACE
                            && extent > 0.0
                            && l.abs() >= config.ear_fraction * extent
                    })
                    .collect()
            }
            None => return Err(Error::NoTarget(format!("unknown region {name:?}"))),
        },
    };
    if !member.contains(&true) {
        return Err(Error::NoTarget(format!(
            "no splat matches {}",
            instruction.text()
        )));
    }
    let side: Option<Vec<bool>> = instruction.qualifier.map(|q| {
        lateral
            .iter()
            .map(|l| match q {
                Qualifier::Left => *l > 0.0,
                Qualifier::Right => *l < 0.0,
            })
            .collect()
    });

    let masks: Vec<Mask> = nodes
        .par_iter()
        .map(|n| {
            let cam = cameras
                .get(n.p)
                .ok_or_else(|| Error::InvalidParameter(format!("no camera for pose {}", n.p)))?;
            let target = render(&relabeled(&posed[n.t], &member), cam)
                .labels
                .mask_of(1);
            Ok(match &side {
                Some(side) => {
                    target.intersect(&render(&relabeled(&posed[n.t], side), cam).labels.mask_of(1))
                }
                None => target,
            })
        })
        .collect::<Result<_>>()?;
    let grid_nodes: Vec<MaskNode> = nodes
        .iter()
        .zip(&masks)
        .map(|(n, m)| MaskNode {
            t: n.t as f64,
            p: cameras[n.p].pose_index as f64,
            mask: m.clone(),
        })
        .collect();
    let grid = build_mask_grid(&grid_nodes)?;
    let selection = select_splats(
        &posed,
        cameras,
        &grid,
        nodes,
        config.threshold,
        config.min_weight,
    )?;
    if selection.is_empty() {
        return Err(Error::NoTarget(format!(
            "{} covers no visible splat",
            instruction.text()
        )));
    }
    Ok(RegionPlan {
        selection,
        masks: nodes.iter().copied().zip(masks).collect(),
        grid,
    })
}
