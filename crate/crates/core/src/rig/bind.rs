//! Binding splats to mesh triangles and posing them on new mesh frames.
//!
//! A bound splat stores a triangle id, the barycentric coordinates of its
//! anchor point on that triangle, and a local offset `δ` expressed in the
//! triangle frame in units of the triangle scale `k = sqrt(area)`:
//!
//! ```text
//! μ_world = P(bary) + k · R_tri · δ
//! q_world = q_tri ⊗ q_local
//! s_world = k · s_local
//! ```
//!
//! so the splat follows rigid motion and uniform scaling of its triangle.

use serde::{Deserialize, Serialize};

use super::mesh::{closest_point_barycentric, MeshFrame, TriangleFrame};
use crate::error::{Error, Result};
use crate::render::WorldSplat;
use crate::splat::{quat_from_matrix, rotation_matrix, GaussianSplat, Mat3, Quat, Vec3};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeshBinding {
    pub triangle: usize,
    pub barycentric: [f64; 3],
    /// Signed distance from the anchor point along the triangle normal at
    /// bind time (scene units).
    pub normal_offset: f64,
    /// Current local offset `δ` (triangle-scale units, triangle frame).
    pub offset: Vec3,
    /// Local offset at bind time; the tracking loss measures drift from it.
    pub rest_offset: Vec3,
    pub local_rotation: Quat,
    /// Per-axis scale relative to the triangle scale.
    pub local_scale: Vec3,
}

impl MeshBinding {
    pub fn validate(&self) -> Result<()> {
        let sum: f64 = self.barycentric.iter().sum();
        if (sum - 1.0).abs() > 1e-9 || self.barycentric.iter().any(|b| *b < -1e-12) {
            return Err(Error::Binding(format!(
                "barycentric {:?} must be non-negative and sum to 1",
                self.barycentric
            )));
        }
        Ok(())
    }
}

/// Binds every splat to its nearest triangle of `mesh`.
///
/// Posing the result on the same frame reproduces the input scene.
pub fn bind_splats(scene: &[GaussianSplat], mesh: &MeshFrame) -> Result<Vec<GaussianSplat>> {
    if mesh.triangles.is_empty() {
        return Err(Error::EmptyMesh);
    }
    let frames = mesh.frames()?;
    let corners: Vec<[Vec3; 3]> = (0..mesh.triangles.len()).map(|i| mesh.corners(i)).collect();
    scene
        .iter()
        .map(|splat| {
            let mut best = (f64::INFINITY, 0usize, [1.0, 0.0, 0.0]);
            for (i, [a, b, c]) in corners.iter().enumerate() {
                let bary = closest_point_barycentric(&splat.mu, a, b, c);
                let p = a * bary[0] + b * bary[1] + c * bary[2];
                let dist = (splat.mu - p).norm_squared();
                if dist < best.0 {
                    best = (dist, i, bary);
                }
            }
            let (_, tri, bary) = best;
            Ok(bind_to(splat, mesh, &frames[tri], tri, bary))
        })
        .collect()
}

/// Binds one splat to a given triangle and anchor point.
pub fn bind_to(
    splat: &GaussianSplat,
    mesh: &MeshFrame,
    frame: &TriangleFrame,
    triangle: usize,
    barycentric: [f64; 3],
) -> GaussianSplat {
    let anchor = mesh.point_at(triangle, &barycentric);
    let rel = splat.mu - anchor;
    let offset = frame.rotation.transpose() * rel / frame.scale;
    let tri_q = quat_from_matrix(&frame.rotation);
    let mut out = splat.clone();
    out.binding = Some(MeshBinding {
        triangle,
        barycentric,
        normal_offset: rel.dot(&frame.normal()),
        offset,
        rest_offset: offset,
        local_rotation: (tri_q.conjugate() * splat.rotation).normalize(),
        local_scale: splat.scale / frame.scale,
    });
    out.decoupled = false;
    out
}

/// Per-splat quantities needed to differentiate through posing.
#[derive(Debug, Clone, Copy)]
pub(crate) enum PoseLink {
    Free,
    Rigged {
        tri_rotation: Mat3,
        tri_scale: f64,
        /// Unit local quaternion.
        local_rotation: Quat,
    },
}

/// World splats for rendering plus posing Jacobian data. `mesh` may be
/// omitted when no splat is rigged.
pub(crate) fn pose_world(
    scene: &[GaussianSplat],
    mesh: Option<&MeshFrame>,
) -> Result<(Vec<WorldSplat>, Vec<PoseLink>)> {
    let frames = match mesh {
        Some(m) => Some(m.frames()?),
        None => None,
    };
    let mut world = Vec::with_capacity(scene.len());
    let mut links = Vec::with_capacity(scene.len());
    for (i, splat) in scene.iter().enumerate() {
        match (&splat.binding, splat.decoupled) {
            (Some(b), false) => {
                let (mesh, frames) = match (mesh, &frames) {
                    (Some(m), Some(f)) => (m, f),
                    _ => {
                        return Err(Error::Binding(format!(
                            "splat {i} is rigged but no mesh was given"
                        )))
                    }
                };
                let frame = frames.get(b.triangle).ok_or_else(|| {
                    Error::Binding(format!(
                        "splat {i} references triangle {} but mesh has {}",
                        b.triangle,
                        frames.len()
                    ))
                })?;
                let local_q = b.local_rotation.normalize();
                let anchor = mesh.point_at(b.triangle, &b.barycentric);
                world.push(WorldSplat {
                    mu: anchor + frame.rotation * b.offset * frame.scale,
                    // Same quaternion composition as `pose_splats`, so both
                    // paths render bit-identically.
                    rot: rotation_matrix(
                        &(quat_from_matrix(&frame.rotation) * local_q).normalize(),
                    ),
                    scale: b.local_scale * frame.scale,
                    opacity: splat.opacity,
                    color: splat.color,
                    label: splat.label,
                });
                links.push(PoseLink::Rigged {
                    tri_rotation: frame.rotation,
                    tri_scale: frame.scale,
                    local_rotation: local_q,
                });
            }
            _ => {
                world.push(WorldSplat::from_splat(splat));
                links.push(PoseLink::Free);
            }
        }
    }
    Ok((world, links))
}

/// Poses bound splats on `mesh`; decoupled and unbound splats pass through.
/// Bindings, labels and colors are kept.
pub fn pose_splats(scene: &[GaussianSplat], mesh: &MeshFrame) -> Result<Vec<GaussianSplat>> {
    let frames = mesh.frames()?;
    scene
        .iter()
        .enumerate()
        .map(|(i, splat)| {
            let mut out = splat.clone();
            if let (Some(b), false) = (&splat.binding, splat.decoupled) {
                let frame = frames.get(b.triangle).ok_or_else(|| {
                    Error::Binding(format!(
                        "splat {i} references triangle {} but mesh has {}",
                        b.triangle,
                        frames.len()
                    ))
                })?;
                let tri_q = quat_from_matrix(&frame.rotation);
                out.mu = mesh.point_at(b.triangle, &b.barycentric)
                    + frame.rotation * b.offset * frame.scale;
                out.rotation = (tri_q * b.local_rotation.normalize()).normalize();
                out.scale = b.local_scale * frame.scale;
            }
            Ok(out)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn right_triangle() -> MeshFrame {
        MeshFrame::new(
            vec![
                Vec3::zeros(),
                Vec3::new(1.0, 0.0, 0.0),
                Vec3::new(0.0, 1.0, 0.0),
            ],
            vec![[0, 1, 2]],
            0,
        )
        .unwrap()
    }

    fn splat(mu: Vec3) -> GaussianSplat {
        GaussianSplat::new(mu, Vec3::new(0.1, 0.2, 0.05), 0.8, Vec3::new(0.3, 0.3, 0.3))
            .with_rotation(Quat::new(0.9, 0.1, 0.3, -0.2))
    }

    #[test]
    fn barycenter_binds_to_thirds() {
        let mesh = right_triangle();
        let c = Vec3::new(1.0 / 3.0, 1.0 / 3.0, 0.0);
        let bound = bind_splats(&[splat(c)], &mesh).unwrap();
        let b = bound[0].binding.as_ref().unwrap();
        for v in b.barycentric {
            assert_relative_eq!(v, 1.0 / 3.0, epsilon = 1e-12);
        }
        assert_relative_eq!(b.normal_offset, 0.0, epsilon = 1e-12);

        let above = bind_splats(&[splat(c + Vec3::new(0.0, 0.0, 0.1))], &mesh).unwrap();
        assert_relative_eq!(
            above[0].binding.as_ref().unwrap().normal_offset,
            0.1,
            epsilon = 1e-12
        );
    }

    #[test]
    fn empty_mesh_is_an_error() {
        let mesh = MeshFrame {
            vertices: vec![],
            triangles: vec![],
            t: 0,
        };
        assert!(matches!(bind_splats(&[], &mesh), Err(Error::EmptyMesh)));
    }

    #[test]
    fn bind_then_pose_reproduces() {
        let mesh = right_triangle();
        let scene = vec![
            splat(Vec3::new(0.2, 0.1, 0.3)),
            splat(Vec3::new(1.5, -0.4, -0.2)),
        ];
        let posed = pose_splats(&bind_splats(&scene, &mesh).unwrap(), &mesh).unwrap();
        for (a, b) in scene.iter().zip(&posed) {
            assert!((a.mu - b.mu).norm() < 1e-9);
            assert!((a.rotation - b.rotation).norm() < 1e-9);
            assert!((a.scale - b.scale).norm() < 1e-9);
        }
    }

    #[test]
    fn topology_mismatch_is_binding_error() {
        let mesh = right_triangle();
        let mut bound = bind_splats(&[splat(Vec3::zeros())], &mesh).unwrap();
        bound[0].binding.as_mut().unwrap().triangle = 5;
        assert!(matches!(pose_splats(&bound, &mesh), Err(Error::Binding(_))));
    }

    #[test]
    fn decoupled_splats_are_not_posed() {
        let mesh = right_triangle();
        let mut bound = bind_splats(&[splat(Vec3::new(0.2, 0.2, 0.0))], &mesh).unwrap();
        bound[0].decoupled = true;
        let moved = MeshFrame {
            vertices: mesh
                .vertices
                .iter()
                .map(|v| v + Vec3::new(5.0, 0.0, 0.0))
                .collect(),
            ..mesh.clone()
        };
        let posed = pose_splats(&bound, &moved).unwrap();
        assert_eq!(posed[0].mu, bound[0].mu);
    }
}
