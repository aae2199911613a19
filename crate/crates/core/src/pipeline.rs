//! The prompt-to-scene editing pipeline: refine the prompt, map each
//! instruction to node masks and a splat selection, edit every node image,
//! then fine-tune the scene against the edited images.

use std::collections::BTreeMap;
use std::sync::atomic::AtomicBool;
use std::sync::Arc;

use crate::dataset::masked_psnr;
use crate::error::{Error, Result};
use crate::imaging::{rgb_to_hsv, Image, Mask};
use crate::maskmap::{NodeKey, SplatSelection};
use crate::optim::{fit_editing_stage, EditConfig, EditOutcome, EditTarget};
use crate::render::{render, Camera};
use crate::rig::{pose_splats, MeshFrame};
use crate::services::{
    edit_nodes, plan_to_region, refine_prompt, EditPlan, EditRequest, ImageEditor, LabelInfo,
    PromptRefiner, RegionConfig, DEFAULT_CONCURRENCY,
};
use crate::splat::GaussianSplat;

/// The scene being edited and the rig it is seen through.
#[derive(Clone, Copy)]
pub struct EditScene<'a> {
    /// Canonical scene; bound splats are posed per frame on `meshes`.
    pub scene: &'a [GaussianSplat],
    pub meshes: &'a [MeshFrame],
    pub cameras: &'a [Camera],
}

impl EditScene<'_> {
    pub fn posed(&self, t: usize) -> Result<Vec<GaussianSplat>> {
        match self.meshes.get(t) {
            Some(m) => pose_splats(self.scene, m),
            None if self.meshes.is_empty() => Ok(self.scene.to_vec()),
            None => Err(Error::InvalidParameter(format!("no mesh for frame {t}"))),
        }
    }

    pub fn render_node(&self, node: NodeKey) -> Result<Image> {
        let cam = self
            .cameras
            .get(node.p)
            .ok_or_else(|| Error::InvalidParameter(format!("no camera {}", node.p)))?;
        Ok(render(&self.posed(node.t)?, cam).image)
    }
}

/// Every combination of `times` and `poses`.
pub fn grid_nodes(times: &[usize], poses: &[usize]) -> Vec<NodeKey> {
    times
        .iter()
        .flat_map(|&t| poses.iter().map(move |&p| NodeKey { t, p }))
        .collect()
}

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub nodes: Vec<NodeKey>,
    pub region: RegionConfig,
    pub edit: EditConfig,
    pub concurrency: usize,
    /// Base seed for editor requests; each node adds its index.
    pub seed: u64,
}

impl PipelineConfig {
    pub fn new(nodes: Vec<NodeKey>) -> Self {
        Self {
            nodes,
            region: RegionConfig::default(),
            edit: EditConfig::default(),
            concurrency: DEFAULT_CONCURRENCY,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EditRun {
    pub plan: EditPlan,
    /// Union over instructions.
    pub selection: SplatSelection,
    /// Per node, the union of the instructions' masks.
    pub masks: BTreeMap<NodeKey, Mask>,
    pub before: BTreeMap<NodeKey, Image>,
    pub targets: Vec<EditTarget>,
    pub outcome: EditOutcome,
}

/// Runs the whole pipeline. Instructions are applied in order: each edits
/// the images produced by the previous one.
pub fn run_edit(
    prompt: &str,
    labels: &[LabelInfo],
    refiner: &dyn PromptRefiner,
    editor: &dyn ImageEditor,
    input: EditScene<'_>,
    config: &PipelineConfig,
    cancel: Option<&Arc<AtomicBool>>,
) -> Result<EditRun> {
    let plan = refine_prompt(refiner, prompt, labels)?;
    let mut before = BTreeMap::new();
    for &node in &config.nodes {
        before.insert(node, input.render_node(node)?);
    }
    let mut current = before.clone();
    let mut masks: BTreeMap<NodeKey, Mask> = BTreeMap::new();
    let mut selection = SplatSelection::default();
    for ins in &plan.instructions {
        let region = plan_to_region(
            ins,
            input.scene,
            input.meshes,
            input.cameras,
            &config.nodes,
            &config.region,
        )?;
        for (i, w) in region.selection.weights {
            *selection.weights.entry(i).or_insert(0.0) += w;
        }
        let requests: Vec<(NodeKey, EditRequest)> = config
            .nodes
            .iter()
            .enumerate()
            .map(|(k, node)| {
                let req = EditRequest {
                    image: current[node].clone(),
                    mask: region.masks[node].clone(),
                    instruction: ins.text(),
                    seed: config.seed.wrapping_add(k as u64),
                };
                (*node, req)
            })
            .collect();
        for (node, resp) in edit_nodes(editor, &requests, config.concurrency)? {
            current.insert(node, resp.image);
        }
        for (node, m) in region.masks {
            let merged = match masks.get(&node) {
                Some(prev) => prev.union(&m),
                None => m,
            };
            masks.insert(node, merged);
        }
    }
    let targets: Vec<EditTarget> = config
        .nodes
        .iter()
        .map(|node| EditTarget {
            t: node.t,
            p: node.p,
            image: current[node].clone(),
            region: masks[node].clone(),
        })
        .collect();
    let outcome = fit_editing_stage(
        input.scene,
        input.meshes,
        input.cameras,
        &selection,
        &targets,
        &config.edit,
        cancel,
    )?;
    Ok(EditRun {
        plan,
        selection,
        masks,
        before,
        targets,
        outcome,
    })
}

/// Hue in degrees of the mean color under `mask`; `None` for an empty mask.
pub fn mean_hue(image: &Image, mask: &Mask) -> Option<f64> {
    let mut sum = [0.0; 3];
    let mut n = 0usize;
    for (px, &m) in image.data.iter().zip(&mask.bits) {
        if m {
            for c in 0..3 {
                sum[c] += px[c];
            }
            n += 1;
        }
    }
    (n > 0).then(|| rgb_to_hsv(sum.map(|v| v / n as f64)).0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeReport {
    pub node: NodeKey,
    /// Edited render vs the pre-edit render, outside the node mask.
    pub outside_psnr: f64,
    /// Hue of the edited render inside the mask.
    pub inside_hue: Option<f64>,
}

/// Renders `edited` at every node of `run` and compares with the pre-edit
/// renders.
pub fn node_reports(run: &EditRun, edited: EditScene<'_>) -> Result<Vec<NodeReport>> {
    run.before
        .iter()
        .map(|(&node, before)| {
            let mask = &run.masks[&node];
            let after = edited.render_node(node)?;
            let outside = mask.inverted();
            let outside_psnr = if outside.is_empty() {
                f64::INFINITY
            } else {
                masked_psnr(before, &after, &outside)?
            };
            Ok(NodeReport {
                node,
                outside_psnr,
                inside_hue: mean_hue(&after, mask),
            })
        })
        .collect()
}
