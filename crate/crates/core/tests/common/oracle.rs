//! Brute-force reference renderer: every splat is tested against every
//! pixel, with no tiling, bounding boxes or shared projection code.

use meshsplat::render::Camera;
use meshsplat::splat::GaussianSplat;
use nalgebra::{Matrix2, Matrix2x3, Matrix3, UnitQuaternion, Vector2};

pub struct OracleOutput {
    pub image: Vec<[f64; 3]>,
    pub weight_sum: Vec<f64>,
    pub transmittance: Vec<f64>,
    pub labels: Vec<u16>,
}

struct Projected {
    mean: Vector2<f64>,
    inv: Matrix2<f64>,
    depth: f64,
    index: usize,
}

fn project(s: &GaussianSplat, index: usize, cam: &Camera) -> Option<Projected> {
    let t = cam.rotation * s.mu + cam.translation;
    if t.z <= 0.01 {
        return None;
    }
    let r = UnitQuaternion::from_quaternion(s.rotation)
        .to_rotation_matrix()
        .into_inner();
    let sigma = r * Matrix3::from_diagonal(&s.scale.component_mul(&s.scale)) * r.transpose();
    let j = Matrix2x3::new(
        cam.fx / t.z,
        0.0,
        -cam.fx * t.x / (t.z * t.z),
        0.0,
        cam.fy / t.z,
        -cam.fy * t.y / (t.z * t.z),
    );
    let m = j * cam.rotation;
    let cov = m * sigma * m.transpose() + Matrix2::identity() * 0.3;
    if cov.determinant() < 1e-12 {
        return None;
    }
    Some(Projected {
        mean: Vector2::new(cam.fx * t.x / t.z + cam.cx, cam.fy * t.y / t.z + cam.cy),
        inv: cov.try_inverse()?,
        depth: t.z,
        index,
    })
}

pub fn naive_render(scene: &[GaussianSplat], cam: &Camera) -> OracleOutput {
    let mut proj: Vec<Projected> = scene
        .iter()
        .enumerate()
        .filter_map(|(i, s)| project(s, i, cam))
        .collect();
    // Insertion sort by (depth, index), deliberately not the library's sort.
    for i in 1..proj.len() {
        let mut k = i;
        while k > 0 && (proj[k - 1].depth, proj[k - 1].index) > (proj[k].depth, proj[k].index) {
            proj.swap(k - 1, k);
            k -= 1;
        }
    }
    let n = cam.width * cam.height;
    let mut out = OracleOutput {
        image: vec![[0.0; 3]; n],
        weight_sum: vec![0.0; n],
        transmittance: vec![1.0; n],
        labels: vec![0; n],
    };
    for y in 0..cam.height {
        for x in 0..cam.width {
            let idx = y * cam.width + x;
            let mut t = 1.0;
            let mut best = 0.0;
            for p in &proj {
                let d = Vector2::new(x as f64, y as f64) - p.mean;
                let m = (d.transpose() * p.inv * d)[(0, 0)];
                if m > 9.0 {
                    continue;
                }
                let s = &scene[p.index];
                let alpha = (s.opacity * (-0.5 * m).exp()).min(0.999);
                let w = alpha * t;
                for c in 0..3 {
                    out.image[idx][c] += w * s.color[c];
                }
                out.weight_sum[idx] += w;
                if w > best {
                    best = w;
                    out.labels[idx] = s.label;
                }
                t *= 1.0 - alpha;
                if t < 1e-4 {
                    break;
                }
            }
            out.transmittance[idx] = t;
        }
    }
    out
}
