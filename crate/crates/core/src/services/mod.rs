//! Prompt refinement and conditional image editing.
//!
//! Both services sit behind traits. [`MockRefiner`] and [`MockEditor`] are
//! deterministic and local; [`RemoteRefiner`] and [`RemoteEditor`] speak
//! JSON over HTTP:
//!
//! ```text
//! POST {REFINER_URL}/refine  {"prompt": "...", "labels": [{"id": 1, "name": "hair"}, ...]}
//!   -> {"instructions": [Instruction, ...]}  or  {"refusal": "reason"}
//! POST {EDITOR_URL}/edit     {"image_b64": PNG, "mask_b64": PNG, "instruction": "...", "seed": 7}
//!   -> {"image_b64": PNG, "status": "ok"}
//! ```
//!
//! An `Instruction` serializes as
//! `{"action": "recolor", "target": {"label": 1}, "qualifier": null, "style": "blue"}`;
//! targets are either `{"label": id}` or `{"region": name}`.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{Image, Mask};
use crate::maskmap::NodeKey;
use crate::rig::{LABEL_FACE, LABEL_HAIR, LABEL_NECK};
use crate::splat::Label;

mod mock;
mod region;
mod remote;

pub use mock::{color_hue, MockEditor, MockRefiner};
pub use region::{plan_to_region, NamedRegion, RegionConfig, RegionPlan};
pub use remote::{decode_png, encode_png, RemoteConfig, RemoteEditor, RemoteRefiner};

/// Largest per-channel change a conforming editor may make outside the mask.
pub const OUTSIDE_TOLERANCE: f64 = 2.0 / 255.0;
pub const DEFAULT_CONCURRENCY: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Action {
    Restyle,
    Recolor,
    AddAccessory,
    Remove,
}

impl Action {
    pub fn name(&self) -> &'static str {
        match self {
            Action::Restyle => "restyle",
            Action::Recolor => "recolor",
            Action::AddAccessory => "add-accessory",
            Action::Remove => "remove",
        }
    }

    pub fn parse(s: &str) -> Option<Action> {
        [
            Action::Restyle,
            Action::Recolor,
            Action::AddAccessory,
            Action::Remove,
        ]
        .into_iter()
        .find(|a| a.name() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    Label(Label),
    /// A region derived from label geometry, e.g. `"ear"`.
    Region(String),
}

/// Side in the subject's own frame (the mirror of the viewer's).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Qualifier {
    Left,
    Right,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instruction {
    pub action: Action,
    pub target: Target,
    #[serde(default)]
    pub qualifier: Option<Qualifier>,
    #[serde(default)]
    pub style: String,
}

impl Instruction {
    /// Text sent to the editor: `action target [side]: style`.
    pub fn text(&self) -> String {
        let target = match &self.target {
            Target::Label(l) => format!("label {l}"),
            Target::Region(r) => r.clone(),
        };
        let side = match self.qualifier {
            Some(Qualifier::Left) => " left",
            Some(Qualifier::Right) => " right",
            None => "",
        };
        format!("{} {target}{side}: {}", self.action.name(), self.style)
    }
}

impl fmt::Display for Instruction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditPlan {
    pub instructions: Vec<Instruction>,
}

/// A semantic label the refiner may target.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelInfo {
    pub id: Label,
    pub name: String,
}

pub fn default_labels() -> Vec<LabelInfo> {
    [
        (LABEL_HAIR, "hair"),
        (LABEL_FACE, "face"),
        (LABEL_NECK, "neck"),
    ]
    .into_iter()
    .map(|(id, name)| LabelInfo {
        id,
        name: name.into(),
    })
    .collect()
}

impl EditPlan {
    /// Non-empty, and every target is a known label or a named region.
    pub fn validate(&self, labels: &[LabelInfo]) -> Result<()> {
        if self.instructions.is_empty() {
            return Err(Error::Refusal("plan has no instructions".into()));
        }
        for ins in &self.instructions {
            match &ins.target {
                Target::Label(l) if !labels.iter().any(|i| i.id == *l) => {
                    return Err(Error::Refusal(format!("label {l} is not available")));
                }
                Target::Region(r) if NamedRegion::parse(r).is_none() => {
                    return Err(Error::Refusal(format!("unknown region {r:?}")));
                }
                _ => {}
            }
        }
        Ok(())
    }
}

pub trait PromptRefiner: Send + Sync {
    fn refine(&self, prompt: &str, labels: &[LabelInfo]) -> Result<EditPlan>;
}

/// Refines `prompt` and checks the plan against `labels`.
pub fn refine_prompt(
    refiner: &dyn PromptRefiner,
    prompt: &str,
    labels: &[LabelInfo],
) -> Result<EditPlan> {
    if prompt.trim().is_empty() {
        return Err(Error::Refusal("empty prompt".into()));
    }
    let plan = refiner.refine(prompt, labels)?;
    plan.validate(labels)?;
    Ok(plan)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EditRequest {
    pub image: Image,
    pub mask: Mask,
    pub instruction: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EditResponse {
    pub image: Image,
    pub status: String,
}

pub trait ImageEditor: Send + Sync {
    fn edit(&self, req: &EditRequest) -> Result<EditResponse>;
}

/// Checks a response against the editor contract: same dimensions, and
/// outside-mask pixels within [`OUTSIDE_TOLERANCE`] of the source.
pub fn check_contract(req: &EditRequest, resp: &EditResponse) -> Result<()> {
    if resp.image.width != req.image.width || resp.image.height != req.image.height {
        return Err(Error::Contract(format!(
            "response is {}x{}, request was {}x{}",
            resp.image.width, resp.image.height, req.image.width, req.image.height
        )));
    }
    for (i, ((a, b), m)) in req
        .image
        .data
        .iter()
        .zip(&resp.image.data)
        .zip(&req.mask.bits)
        .enumerate()
    {
        if *m {
            continue;
        }
        let worst = (0..3).map(|c| (a[c] - b[c]).abs()).fold(0.0, f64::max);
        if worst > OUTSIDE_TOLERANCE + 1e-12 {
            return Err(Error::Contract(format!(
                "pixel ({}, {}) outside the mask changed by {:.4}",
                i % req.image.width,
                i / req.image.width,
                worst
            )));
        }
    }
    Ok(())
}

/// Sends one request after checking dimensions, and validates the reply.
pub fn edit_image(req: &EditRequest, editor: &dyn ImageEditor) -> Result<EditResponse> {
    if req.mask.width != req.image.width || req.mask.height != req.image.height {
        return Err(Error::DimensionMismatch(format!(
            "mask is {}x{}, image is {}x{}",
            req.mask.width, req.mask.height, req.image.width, req.image.height
        )));
    }
    let resp = editor.edit(req)?;
    check_contract(req, &resp)?;
    Ok(resp)
}

/// Edits every node with at most `limit` requests in flight. Results are
/// keyed by node; the first error wins.
pub fn edit_nodes(
    editor: &dyn ImageEditor,
    requests: &[(NodeKey, EditRequest)],
    limit: usize,
) -> Result<BTreeMap<NodeKey, EditResponse>> {
    let next = AtomicUsize::new(0);
    let results = Mutex::new(Vec::with_capacity(requests.len()));
    std::thread::scope(|scope| {
        for _ in 0..limit.max(1).min(requests.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some((key, req)) = requests.get(i) else {
                    break;
                };
                let r = edit_image(req, editor);
                let failed = r.is_err();
                results
                    .lock()
                    .expect("no poisoned workers")
                    .push((i, *key, r));
                if failed {
                    next.store(requests.len(), Ordering::Relaxed);
                }
            });
        }
    });
    let mut results = results.into_inner().expect("no poisoned workers");
    results.sort_by_key(|(i, _, _)| *i);
    results
        .into_iter()
        .map(|(_, k, r)| r.map(|resp| (k, resp)))
        .collect()
}
