//! Dataset manifests and lazy-loading datasets.
//!
//! A manifest is one JSON document. Paths are relative to the manifest's
//! directory. Camera `p` is the camera's index in `cameras`, which lists the
//! rig in circular order.
//!
//! ```json
//! {
//!   "version": 1,
//!   "scene_extent": 1.2,
//!   "held_out": [7],
//!   "cameras": [
//!     { "fx": 80, "fy": 80, "cx": 31.5, "cy": 31.5, "width": 64, "height": 64,
//!       "rotation": [[1,0,0],[0,1,0],[0,0,1]], "translation": [0,0,3.5] }
//!   ],
//!   "frames": [
//!     { "mesh": "meshes/frame_000.obj",
//!       "images": ["images/t000_p00.png"],
//!       "labels": ["labels/t000_p00.png"] }
//!   ]
//! }
//! ```
//!
//! `labels` is optional per frame, and individual entries may be `null`.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::formats::{load_image, load_label_map, load_obj};
use crate::error::{Error, Result};
use crate::imaging::{Image, LabelMap};
use crate::optim::{TrainView, TrainingSet};
use crate::render::Camera;
use crate::rig::MeshFrame;
use crate::splat::{Mat3, Vec3};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraSpec {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    /// World-to-camera rotation, row-major.
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
}

impl CameraSpec {
    pub fn from_camera(cam: &Camera) -> Self {
        let r = &cam.rotation;
        Self {
            fx: cam.fx,
            fy: cam.fy,
            cx: cam.cx,
            cy: cam.cy,
            width: cam.width,
            height: cam.height,
            rotation: [
                [r[(0, 0)], r[(0, 1)], r[(0, 2)]],
                [r[(1, 0)], r[(1, 1)], r[(1, 2)]],
                [r[(2, 0)], r[(2, 1)], r[(2, 2)]],
            ],
            translation: [cam.translation.x, cam.translation.y, cam.translation.z],
        }
    }

    pub fn to_camera(&self, pose_index: usize) -> Result<Camera> {
        let r = &self.rotation;
        let cam = Camera {
            fx: self.fx,
            fy: self.fy,
            cx: self.cx,
            cy: self.cy,
            rotation: Mat3::new(
                r[0][0], r[0][1], r[0][2], r[1][0], r[1][1], r[1][2], r[2][0], r[2][1], r[2][2],
            ),
            translation: Vec3::from(self.translation),
            width: self.width,
            height: self.height,
            pose_index,
        };
        cam.validate()?;
        Ok(cam)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameSpec {
    pub mesh: PathBuf,
    /// One image per camera, in camera order.
    pub images: Vec<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<Option<PathBuf>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub cameras: Vec<CameraSpec>,
    pub frames: Vec<FrameSpec>,
    #[serde(default)]
    pub scene_extent: Option<f64>,
    /// Camera indices reserved for evaluation.
    #[serde(default)]
    pub held_out: Vec<usize>,
}

impl DatasetManifest {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    /// Structural checks that need no file access.
    pub fn validate(&self) -> Result<()> {
        if self.version != MANIFEST_VERSION {
            return Err(Error::Version {
                found: self.version,
                expected: MANIFEST_VERSION,
            });
        }
        if self.cameras.is_empty() || self.frames.is_empty() {
            return Err(Error::Config(
                "manifest needs at least one camera and one frame".into(),
            ));
        }
        for (t, f) in self.frames.iter().enumerate() {
            if f.images.len() != self.cameras.len() {
                let p = f.images.len().min(self.cameras.len());
                return Err(Error::MissingCell {
                    t,
                    p,
                    path: PathBuf::from("<not listed>"),
                });
            }
            if let Some(l) = &f.labels {
                if l.len() != self.cameras.len() {
                    return Err(Error::Config(format!(
                        "frame {t} lists {} label maps for {} cameras",
                        l.len(),
                        self.cameras.len()
                    )));
                }
            }
        }
        if let Some(&p) = self.held_out.iter().find(|&&p| p >= self.cameras.len()) {
            return Err(Error::Config(format!("held-out camera {p} does not exist")));
        }
        Ok(())
    }
}

/// A validated dataset. Meshes and cameras are loaded eagerly; images and
/// label maps are read on demand.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: DatasetManifest,
    pub cameras: Vec<Camera>,
    pub meshes: Vec<MeshFrame>,
}

pub fn load_dataset(manifest_path: &Path) -> Result<Dataset> {
    let text = std::fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let manifest = DatasetManifest::from_json(&text)?;
    manifest.validate()?;
    let root = manifest_path
        .parent()
        .unwrap_or(Path::new("."))
        .to_path_buf();
    for (t, f) in manifest.frames.iter().enumerate() {
        for (p, img) in f.images.iter().enumerate() {
            let path = root.join(img);
            if !path.is_file() {
                return Err(Error::MissingCell { t, p, path });
            }
        }
        for (p, lbl) in f.labels.iter().flatten().enumerate() {
            if let Some(lbl) = lbl {
                let path = root.join(lbl);
                if !path.is_file() {
                    return Err(Error::MissingCell { t, p, path });
                }
            }
        }
    }
    let cameras = manifest
        .cameras
        .iter()
        .enumerate()
        .map(|(p, c)| c.to_camera(p))
        .collect::<Result<Vec<_>>>()?;
    let meshes = manifest
        .frames
        .par_iter()
        .enumerate()
        .map(|(t, f)| load_obj(&root.join(&f.mesh), t))
        .collect::<Result<Vec<_>>>()?;
    if let Some((t, _)) = meshes
        .iter()
        .enumerate()
        .find(|(_, m)| !m.same_topology(&meshes[0]))
    {
        return Err(Error::Topology(format!(
            "frame {t} does not share frame 0's triangle list"
        )));
    }
    Ok(Dataset {
        root,
        manifest,
        cameras,
        meshes,
    })
}

impl Dataset {
    pub fn frame_count(&self) -> usize {
        self.meshes.len()
    }

    pub fn camera_count(&self) -> usize {
        self.cameras.len()
    }

    fn check_cell(&self, t: usize, p: usize) -> Result<()> {
        if t >= self.frame_count() || p >= self.camera_count() {
            return Err(Error::InvalidParameter(format!(
                "(t={t}, p={p}) is outside the {}x{} grid",
                self.frame_count(),
                self.camera_count()
            )));
        }
        Ok(())
    }

    pub fn image_path(&self, t: usize, p: usize) -> Result<PathBuf> {
        self.check_cell(t, p)?;
        Ok(self.root.join(&self.manifest.frames[t].images[p]))
    }

    pub fn image(&self, t: usize, p: usize) -> Result<Image> {
        let img = load_image(&self.image_path(t, p)?)?;
        let cam = &self.cameras[p];
        if img.width != cam.width || img.height != cam.height {
            return Err(Error::DimensionMismatch(format!(
                "image (t={t}, p={p}) is {}x{}, camera is {}x{}",
                img.width, img.height, cam.width, cam.height
            )));
        }
        Ok(img)
    }

    pub fn labels(&self, t: usize, p: usize) -> Result<Option<LabelMap>> {
        self.check_cell(t, p)?;
        match self.manifest.frames[t]
            .labels
            .as_ref()
            .and_then(|l| l[p].as_ref())
        {
            Some(rel) => load_label_map(&self.root.join(rel)).map(Some),
            None => Ok(None),
        }
    }

    pub fn scene_extent(&self) -> f64 {
        self.manifest.scene_extent.unwrap_or_else(|| {
            let m = &self.meshes[0];
            let c = m.centroid();
            m.vertices
                .iter()
                .map(|v| (v - c).norm())
                .fold(0.0, f64::max)
        })
    }

    /// Cameras not listed as held out.
    pub fn training_cameras(&self) -> Vec<usize> {
        (0..self.camera_count())
            .filter(|p| !self.manifest.held_out.contains(p))
            .collect()
    }

    /// Loads every (t, p) view whose camera is not in `exclude`.
    pub fn training_set(&self, exclude: &[usize]) -> Result<TrainingSet> {
        let cells: Vec<(usize, usize)> = (0..self.frame_count())
            .flat_map(|t| (0..self.camera_count()).map(move |p| (t, p)))
            .filter(|(_, p)| !exclude.contains(p))
            .collect();
        let views = cells
            .par_iter()
            .map(|&(t, p)| {
                Ok(TrainView {
                    t,
                    p,
                    image: self.image(t, p)?,
                    labels: self.labels(t, p)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(TrainingSet {
            cameras: self.cameras.clone(),
            meshes: self.meshes.clone(),
            views,
        })
    }
}
