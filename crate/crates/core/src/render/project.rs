//! Perspective projection of 3D Gaussians to screen-space ellipses, and its
//! reverse-mode derivative.

use nalgebra::{Matrix2, Matrix2x3, Vector2};

use super::Camera;
use crate::splat::{rotation_matrix, GaussianSplat, Label, Mat3, Vec3};

/// Splats closer than this (camera-space z) are culled.
pub const NEAR_PLANE: f64 = 0.01;

/// Screen-space low-pass floor added to every projected covariance (px²).
pub const LOW_PASS: f64 = 0.3;

/// Determinant below which a projected covariance is treated as degenerate.
pub const MIN_DET: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Splat2D {
    pub mean2d: Vector2<f64>,
    pub cov2d: Matrix2<f64>,
    pub depth: f64,
    /// Index of the source splat in the scene.
    pub index: usize,
}

/// World-space splat with its rotation already expanded to a matrix.
#[derive(Debug, Clone)]
pub(crate) struct WorldSplat {
    pub mu: Vec3,
    pub rot: Mat3,
    pub scale: Vec3,
    pub opacity: f64,
    pub color: Vec3,
    pub label: Label,
}

impl WorldSplat {
    pub fn from_splat(s: &GaussianSplat) -> Self {
        Self {
            mu: s.mu,
            rot: rotation_matrix(&s.rotation),
            scale: s.scale,
            opacity: s.opacity,
            color: s.color,
            label: s.label,
        }
    }

    pub fn sigma(&self) -> Mat3 {
        let s2 = Mat3::from_diagonal(&self.scale.component_mul(&self.scale));
        self.rot * s2 * self.rot.transpose()
    }
}

/// Everything the backward pass needs about one projected splat.
#[derive(Debug, Clone)]
pub(crate) struct Projection {
    pub splat: Splat2D,
    pub conic: Matrix2<f64>,
    pub cam_pos: Vec3,
    pub jw: Matrix2x3<f64>,
    pub sigma: Mat3,
}

fn jacobian(cam: &Camera, t: &Vec3) -> Matrix2x3<f64> {
    let iz = 1.0 / t.z;
    let iz2 = iz * iz;
    Matrix2x3::new(
        cam.fx * iz,
        0.0,
        -cam.fx * t.x * iz2,
        0.0,
        cam.fy * iz,
        -cam.fy * t.y * iz2,
    )
}

/// Projects one world splat. `None` when culled by the near plane.
pub(crate) fn project_world(ws: &WorldSplat, index: usize, cam: &Camera) -> Option<Projection> {
    let t = cam.world_to_camera(&ws.mu);
    if !(t.z > NEAR_PLANE) {
        return None;
    }
    let mean2d = Vector2::new(cam.fx * t.x / t.z + cam.cx, cam.fy * t.y / t.z + cam.cy);
    let jw = jacobian(cam, &t) * cam.rotation;
    let sigma = ws.sigma();
    let raw = jw * sigma * jw.transpose();
    let cov2d = (raw + raw.transpose()) * 0.5 + Matrix2::identity() * LOW_PASS;
    let det = cov2d.determinant();
    let conic = if det > MIN_DET && det.is_finite() {
        Matrix2::new(cov2d[(1, 1)], -cov2d[(0, 1)], -cov2d[(1, 0)], cov2d[(0, 0)]) / det
    } else {
        Matrix2::zeros()
    };
    Some(Projection {
        splat: Splat2D {
            mean2d,
            cov2d,
            depth: t.z,
            index,
        },
        conic,
        cam_pos: t,
        jw,
        sigma,
    })
}

/// Projects a splat into `cam`: mean, screen covariance
/// `J·W·Σ·Wᵀ·Jᵀ + 0.3·I` and depth. `None` at or behind the near plane.
pub fn project_splat(splat: &GaussianSplat, cam: &Camera) -> Option<Splat2D> {
    project_world(&WorldSplat::from_splat(splat), 0, cam).map(|p| p.splat)
}

/// Sorts screen splats front to back; equal depths keep source-index order.
pub fn depth_sort(splats: &[Splat2D]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..splats.len()).collect();
    order.sort_by(|&a, &b| {
        splats[a]
            .depth
            .total_cmp(&splats[b].depth)
            .then(splats[a].index.cmp(&splats[b].index))
    });
    order
}

/// Gradients of one splat's world parameters.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct WorldGrad {
    pub mu: Vec3,
    pub rot: Mat3,
    pub scale: Vec3,
    pub opacity: f64,
    pub color: Vec3,
}

/// Pulls screen-space gradients (on the 2D mean and on the conic, given as a
/// full 2×2 matrix) back to world position and 3D covariance.
pub(crate) fn projection_vjp(
    proj: &Projection,
    cam: &Camera,
    grad_mean2d: &Vector2<f64>,
    grad_conic: &Matrix2<f64>,
) -> (Vec3, Mat3) {
    let a = proj.conic;
    let grad_cov2d = -(a.transpose() * grad_conic * a.transpose());
    let m = proj.jw;
    let grad_sigma = m.transpose() * grad_cov2d * m;
    let grad_m = grad_cov2d * m * proj.sigma.transpose() + grad_cov2d.transpose() * m * proj.sigma;
    let grad_j = grad_m * cam.rotation.transpose();

    let t = proj.cam_pos;
    let iz = 1.0 / t.z;
    let iz2 = iz * iz;
    let iz3 = iz2 * iz;
    let (fx, fy) = (cam.fx, cam.fy);
    let mut grad_t = Vec3::zeros();
    // Mean: u = fx·x/z + cx, v = fy·y/z + cy.
    grad_t.x += grad_mean2d.x * fx * iz;
    grad_t.y += grad_mean2d.y * fy * iz;
    grad_t.z += -grad_mean2d.x * fx * t.x * iz2 - grad_mean2d.y * fy * t.y * iz2;
    // Jacobian entries.
    grad_t.z += grad_j[(0, 0)] * (-fx * iz2);
    grad_t.x += grad_j[(0, 2)] * (-fx * iz2);
    grad_t.z += grad_j[(0, 2)] * (2.0 * fx * t.x * iz3);
    grad_t.z += grad_j[(1, 1)] * (-fy * iz2);
    grad_t.y += grad_j[(1, 2)] * (-fy * iz2);
    grad_t.z += grad_j[(1, 2)] * (2.0 * fy * t.y * iz3);

    let grad_mu = cam.rotation.transpose() * grad_t;
    (grad_mu, grad_sigma)
}

/// Pulls `dL/dΣ` back to the rotation matrix and per-axis scales of
/// `Σ = R·diag(s)²·Rᵀ`.
pub(crate) fn covariance_vjp(rot: &Mat3, scale: &Vec3, grad_sigma: &Mat3) -> (Mat3, Vec3) {
    let s2 = Mat3::from_diagonal(&scale.component_mul(scale));
    let grad_rot = (grad_sigma + grad_sigma.transpose()) * rot * s2;
    let inner = rot.transpose() * grad_sigma * rot;
    let grad_scale = Vec3::new(
        2.0 * scale.x * inner[(0, 0)],
        2.0 * scale.y * inner[(1, 1)],
        2.0 * scale.z * inner[(2, 2)],
    );
    (grad_rot, grad_scale)
}
