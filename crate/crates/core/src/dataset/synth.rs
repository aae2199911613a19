//! Deterministic synthetic avatar datasets.
//!
//! The subject is an icosphere head facing +z with +y up (subject-left is
//! +x). A Gaussian bulge on the lower front ("jaw") opens and closes over
//! the clip; frame 0 is always the rest shape. Ground-truth splats are bound
//! one per triangle and carry three horizontal semantic bands: hair on top,
//! face in the middle, neck below. Images and label maps are rendered by
//! [`crate::render`] itself.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::formats::{save_image, save_label_map, save_obj, save_scene};
use super::manifest::{CameraSpec, DatasetManifest, FrameSpec, MANIFEST_VERSION};
use crate::error::{Error, Result};
use crate::optim::TrainingSet;
use crate::render::{render, Camera};
use crate::rig::{bind_to, pose_splats, MeshFrame, LABEL_FACE, LABEL_HAIR, LABEL_NECK};
use crate::splat::{quat_from_matrix, GaussianSplat, Label, Quat, Vec3};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const GROUND_TRUTH_FILE: &str = "gt_scene.splat";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_cameras: usize,
    pub n_frames: usize,
    pub width: usize,
    pub height: usize,
    pub subdivisions: usize,
    /// Peak radial displacement of the jaw bulge.
    pub jaw_amplitude: f64,
    pub camera_distance: f64,
    pub focal: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_cameras: 8,
            n_frames: 10,
            width: 64,
            height: 64,
            subdivisions: 2,
            jaw_amplitude: 0.15,
            camera_distance: 3.5,
            focal: 80.0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_cameras == 0 || self.n_frames == 0 || self.width == 0 || self.height == 0 {
            return Err(Error::Config(
                "cameras, frames and resolution must be positive".into(),
            ));
        }
        if self.subdivisions > 5 {
            return Err(Error::Config("at most 5 icosphere subdivisions".into()));
        }
        if !(self.camera_distance > 1.5) || !(self.focal > 0.0) || !self.jaw_amplitude.is_finite() {
            return Err(Error::Config(
                "camera must sit outside the head with positive focal".into(),
            ));
        }
        Ok(())
    }
}

/// Unit icosphere with outward-facing triangles.
pub fn icosphere(subdivisions: usize) -> (Vec<Vec3>, Vec<[usize; 3]>) {
    let phi = (1.0 + 5f64.sqrt()) / 2.0;
    let mut verts: Vec<Vec3> = [
        (-1.0, phi, 0.0),
        (1.0, phi, 0.0),
        (-1.0, -phi, 0.0),
        (1.0, -phi, 0.0),
        (0.0, -1.0, phi),
        (0.0, 1.0, phi),
        (0.0, -1.0, -phi),
        (0.0, 1.0, -phi),
        (phi, 0.0, -1.0),
        (phi, 0.0, 1.0),
        (-phi, 0.0, -1.0),
        (-phi, 0.0, 1.0),
    ]
    .iter()
    .map(|&(x, y, z)| Vec3::new(x, y, z).normalize())
    .collect();
    let mut tris: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..subdivisions {
        let mut mid: HashMap<(usize, usize), usize> = HashMap::new();
        let mut midpoint = |a: usize, b: usize, verts: &mut Vec<Vec3>| {
            *mid.entry((a.min(b), a.max(b))).or_insert_with(|| {
                verts.push(((verts[a] + verts[b]) / 2.0).normalize());
                verts.len() - 1
            })
        };
        let mut next = Vec::with_capacity(tris.len() * 4);
        for [a, b, c] in tris {
            let ab = midpoint(a, b, &mut verts);
            let bc = midpoint(b, c, &mut verts);
            let ca = midpoint(c, a, &mut verts);
            next.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        tris = next;
    }
    for t in tris.iter_mut() {
        let [a, b, c] = t.map(|i| verts[i]);
        if (b - a).cross(&(c - a)).dot(&(a + b + c)) < 0.0 {
            t.swap(1, 2);
        }
    }
    (verts, tris)
}

const JAW_CENTER: [f64; 3] = [0.0, -0.55, 0.83];
const JAW_WIDTH: f64 = 0.35;

/// Mesh for frame `t`: the rest sphere pushed out radially around the jaw by
/// `amplitude · sin(2πt / n_frames)`.
pub fn deformed_mesh(
    rest: &[Vec3],
    tris: &[[usize; 3]],
    t: usize,
    n_frames: usize,
    amplitude: f64,
) -> Result<MeshFrame> {
    let phase = (2.0 * std::f64::consts::PI * t as f64 / n_frames.max(1) as f64).sin();
    let jaw = Vec3::from(JAW_CENTER);
    let verts = rest
        .iter()
        .map(|v| {
            let w = (-(v - jaw).norm_squared() / (2.0 * JAW_WIDTH * JAW_WIDTH)).exp();
            v + v * (amplitude * phase * w)
        })
        .collect();
    MeshFrame::new(verts, tris.to_vec(), t)
}

/// Camera `p` of `n` on a ring around +y, slightly above the head's center
/// and starting in front of the face. Consecutive indices are adjacent on
/// the ring.
pub fn rig_camera(p: usize, config: &SynthConfig) -> Result<Camera> {
    let theta = 2.0 * std::f64::consts::PI * p as f64 / config.n_cameras as f64;
    let d = config.camera_distance;
    let eye = Vec3::new(d * theta.sin(), 0.3, d * theta.cos());
    Camera::look_at(
        eye,
        Vec3::zeros(),
        Vec3::y(),
        config.focal,
        config.width,
        config.height,
        p,
    )
}

fn band_label(y: f64) -> Label {
    if y > 0.35 {
        LABEL_HAIR
    } else if y >= -0.35 {
        LABEL_FACE
    } else {
        LABEL_NECK
    }
}

fn base_color(center: &Vec3, label: Label) -> Vec3 {
    let eyes = [Vec3::new(0.33, 0.15, 0.93), Vec3::new(-0.33, 0.15, 0.93)];
    let mouth = Vec3::new(0.0, -0.3, 0.95);
    match label {
        LABEL_HAIR => Vec3::new(0.30, 0.18, 0.10),
        LABEL_NECK => Vec3::new(0.70, 0.50, 0.42),
        _ if eyes.iter().any(|e| (center - e).norm() < 0.16) => Vec3::new(0.15, 0.10, 0.10),
        _ if (center - mouth).norm() < 0.18 => Vec3::new(0.70, 0.28, 0.28),
        _ => Vec3::new(0.85, 0.65, 0.55),
    }
}

/// Ground-truth splats bound to the rest mesh, one per triangle.
pub fn ground_truth_scene(rest: &MeshFrame, rng: &mut impl Rng) -> Result<Vec<GaussianSplat>> {
    let frames = rest.frames()?;
    let mut scene = Vec::with_capacity(rest.triangles.len());
    for (tri, frame) in frames.iter().enumerate() {
        let (u, v): (f64, f64) = (rng.random(), rng.random());
        let (u, v) = if u + v > 1.0 {
            (1.0 - u, 1.0 - v)
        } else {
            (u, v)
        };
        // Keep the anchor away from the triangle's edges.
        let bary = [
            1.0 / 3.0 + 0.5 * (u - 1.0 / 3.0),
            1.0 / 3.0 + 0.5 * (v - 1.0 / 3.0),
            0.0,
        ];
        let bary = [bary[0], bary[1], 1.0 - bary[0] - bary[1]];
        let h = rng.random_range(-0.01..0.01);
        let mu = rest.point_at(tri, &bary) + frame.normal() * h;
        let half: f64 = rng.random_range(0.0..std::f64::consts::FRAC_PI_2);
        let spin = Quat::new(half.cos(), 0.0, 0.0, half.sin());
        let rotation = (quat_from_matrix(&frame.rotation) * spin).normalize();
        let scale = Vec3::new(
            0.12 * rng.random_range(0.8..1.2),
            0.12 * rng.random_range(0.8..1.2),
            0.03,
        );
        let center = rest.point_at(tri, &[1.0 / 3.0; 3]);
        let label = band_label(center.y);
        let jitter = Vec3::new(
            rng.random_range(-0.03..0.03),
            rng.random_range(-0.03..0.03),
            rng.random_range(-0.03..0.03),
        );
        let color = (base_color(&center, label) + jitter).map(|c| c.clamp(0.0, 1.0));
        let opacity = rng.random_range(0.9..0.99);
        let splat = GaussianSplat::new(mu, scale, opacity, color)
            .with_rotation(rotation)
            .with_label(label);
        scene.push(bind_to(&splat, rest, frame, tri, bary));
    }
    Ok(scene)
}

/// Everything a synthetic generation run produced.
#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub manifest_path: PathBuf,
    pub manifest: DatasetManifest,
    /// Bound to frame 0.
    pub ground_truth: Vec<GaussianSplat>,
    pub cameras: Vec<Camera>,
    pub meshes: Vec<MeshFrame>,
}

/// Writes a complete dataset under `out_dir`: meshes, images, label maps,
/// the manifest and the ground-truth scene. A pure function of
/// `(seed, config)`.
pub fn generate_synthetic_scene(
    seed: u64,
    config: &SynthConfig,
    out_dir: &Path,
) -> Result<SynthOutput> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (rest_verts, tris) = icosphere(config.subdivisions);
    let meshes = (0..config.n_frames)
        .map(|t| deformed_mesh(&rest_verts, &tris, t, config.n_frames, config.jaw_amplitude))
        .collect::<Result<Vec<_>>>()?;
    let cameras = (0..config.n_cameras)
        .map(|p| rig_camera(p, config))
        .collect::<Result<Vec<_>>>()?;
    let ground_truth = ground_truth_scene(&meshes[0], &mut rng)?;

    for dir in ["meshes", "images", "labels"] {
        let d = out_dir.join(dir);
        std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let mut frames = Vec::with_capacity(config.n_frames);
    for (t, mesh) in meshes.iter().enumerate() {
        let mesh_rel = PathBuf::from(format!("meshes/frame_{t:03}.obj"));
        save_obj(&out_dir.join(&mesh_rel), mesh)?;
        let posed = pose_splats(&ground_truth, mesh)?;
        let cells = cameras
            .par_iter()
            .map(|cam| {
                let p = cam.pose_index;
                let image_rel = PathBuf::from(format!("images/t{t:03}_p{p:02}.png"));
                let label_rel = PathBuf::from(format!("labels/t{t:03}_p{p:02}.png"));
                let out = render(&posed, cam);
                save_image(&out_dir.join(&image_rel), &out.image)?;
                save_label_map(&out_dir.join(&label_rel), &out.labels)?;
                Ok((image_rel, Some(label_rel)))
            })
            .collect::<Result<Vec<_>>>()?;
        let (images, labels): (Vec<_>, Vec<_>) = cells.into_iter().unzip();
        frames.push(FrameSpec {
            mesh: mesh_rel,
            images,
            labels: Some(labels),
        });
    }
    let manifest = DatasetManifest {
        version: MANIFEST_VERSION,
        cameras: cameras.iter().map(CameraSpec::from_camera).collect(),
        frames,
        scene_extent: Some(1.0 + config.jaw_amplitude.abs()),
        held_out: vec![config.n_cameras - 1],
    };
    let manifest_path = out_dir.join(MANIFEST_FILE);
    manifest.save(&manifest_path)?;
    save_scene(&out_dir.join(GROUND_TRUTH_FILE), &ground_truth)?;
    let cfg_path = out_dir.join("synth_config.json");
    let cfg = serde_json::json!({ "seed": seed, "config": config });
    std::fs::write(&cfg_path, serde_json::to_string_pretty(&cfg)?)
        .map_err(|e| Error::io(&cfg_path, e))?;
    Ok(SynthOutput {
        manifest_path,
        manifest,
        ground_truth,
        cameras,
        meshes,
    })
}

/// Starting scene for the modeling stage: one splat at each triangle's
/// barycenter of frame 0, flattened along the normal, with color sampled
/// from the frame-0 training view that faces the triangle most directly.
pub fn initial_fit_scene(data: &TrainingSet) -> Result<Vec<GaussianSplat>> {
    let mesh = data
        .meshes
        .first()
        .ok_or_else(|| Error::Config("training set has no meshes".into()))?;
    let frames = mesh.frames()?;
    let views: Vec<_> = data.views.iter().filter(|v| v.t == 0).collect();
    let views = if views.is_empty() {
        data.views.iter().collect()
    } else {
        views
    };
    let center_bary = [1.0 / 3.0; 3];
    Ok(frames
        .iter()
        .enumerate()
        .map(|(tri, frame)| {
            let center = mesh.point_at(tri, &center_bary);
            let normal = frame.normal();
            let mut best: Option<(f64, Vec3)> = None;
            for v in &views {
                let cam = &data.cameras[v.p];
                let facing = normal.dot(&(cam.center() - center).normalize());
                let pc = cam.world_to_camera(&center);
                if facing <= 0.0 || pc.z <= 0.0 || best.is_some_and(|(f, _)| f >= facing) {
                    continue;
                }
                let x = (cam.fx * pc.x / pc.z + cam.cx).round();
                let y = (cam.fy * pc.y / pc.z + cam.cy).round();
                if x < 0.0 || y < 0.0 || x >= cam.width as f64 || y >= cam.height as f64 {
                    continue;
                }
                let px = v.image.get(x as usize, y as usize);
                best = Some((facing, Vec3::new(px[0], px[1], px[2])));
            }
            let color = best.map_or(Vec3::repeat(0.5), |(_, c)| c);
            let splat =
                GaussianSplat::new(center, Vec3::new(0.5, 0.5, 0.15) * frame.scale, 0.8, color)
                    .with_rotation(quat_from_matrix(&frame.rotation));
            bind_to(&splat, mesh, frame, tri, center_bary)
        })
        .collect())
}
