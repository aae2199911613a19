#![allow(dead_code)]

pub mod oracle;

use meshsplat::render::Camera;
use meshsplat::rig::{bind_splats, MeshFrame};
use meshsplat::splat::{GaussianSplat, Quat, Vec3};
use meshsplat::{Image, LabelMap};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn camera(size: usize) -> Camera {
    Camera::look_at(
        Vec3::new(0.0, 0.0, -4.0),
        Vec3::zeros(),
        Vec3::y(),
        1.2 * size as f64,
        size,
        size,
        0,
    )
    .unwrap()
}

pub fn random_quat(r: &mut impl Rng) -> Quat {
    Quat::new(
        r.random_range(-1.0..1.0),
        r.random_range(-1.0..1.0),
        r.random_range(-1.0..1.0),
        r.random_range(-1.0..1.0),
    )
    .normalize()
}

/// Unbound splats in a box in front of [`camera`], with colors and
/// opacities away from their clamps.
pub fn random_scene(n: usize, r: &mut impl Rng) -> Vec<GaussianSplat> {
    (0..n)
        .map(|_| {
            let mu = Vec3::new(
                r.random_range(-1.0..1.0),
                r.random_range(-1.0..1.0),
                r.random_range(-1.0..1.0),
            );
            let scale = Vec3::new(
                r.random_range(0.08..0.35),
                r.random_range(0.08..0.35),
                r.random_range(0.08..0.35),
            );
            let color = Vec3::new(
                r.random_range(0.1..0.9),
                r.random_range(0.1..0.9),
                r.random_range(0.1..0.9),
            );
            GaussianSplat::new(mu, scale, r.random_range(0.2..0.9), color)
                .with_rotation(random_quat(r))
                .with_label(r.random_range(1..4))
        })
        .collect()
}

/// Two triangles spanning the view, slightly tilted.
pub fn quad_mesh(t: usize, shift: Vec3) -> MeshFrame {
    MeshFrame::new(
        vec![
            Vec3::new(-1.2, -1.2, 0.3) + shift,
            Vec3::new(1.2, -1.2, 0.0) + shift,
            Vec3::new(1.2, 1.2, -0.3) + shift,
            Vec3::new(-1.2, 1.2, 0.1) + shift,
        ],
        vec![[0, 1, 2], [0, 2, 3]],
        t,
    )
    .unwrap()
}

/// A random scene whose even-indexed splats are bound to `mesh`.
pub fn mixed_scene(n: usize, mesh: &MeshFrame, r: &mut impl Rng) -> Vec<GaussianSplat> {
    let scene = random_scene(n, r);
    let bound = bind_splats(&scene, mesh).unwrap();
    scene
        .into_iter()
        .zip(bound)
        .enumerate()
        .map(|(i, (free, b))| if i % 2 == 0 { b } else { free })
        .collect()
}

pub fn noise_image(size: usize, r: &mut impl Rng) -> Image {
    let mut img = Image::new(size, size);
    for px in img.data.iter_mut() {
        *px = [r.random(), r.random(), r.random()];
    }
    img
}

pub fn random_labels(size: usize, r: &mut impl Rng) -> LabelMap {
    let mut l = LabelMap::new(size, size);
    for v in l.labels.iter_mut() {
        *v = r.random_range(0..4);
    }
    l
}

/// A complete random node set: 1-4 distinct times and poses, random masks.
pub fn random_grid_nodes(
    w: usize,
    h: usize,
    r: &mut impl Rng,
) -> Vec<meshsplat::maskmap::MaskNode> {
    let axis = |r: &mut dyn rand::RngCore| {
        let n = r.random_range(1..5);
        let mut v: Vec<f64> = Vec::with_capacity(n);
        let mut x = r.random_range(-2.0..2.0);
        for _ in 0..n {
            v.push(x);
            x += r.random_range(0.25..3.0);
        }
        v
    };
    let (times, poses) = (axis(r), axis(r));
    let mut nodes = Vec::new();
    for &t in &times {
        for &p in &poses {
            let mut mask = meshsplat::Mask::new(w, h);
            for b in mask.bits.iter_mut() {
                *b = r.random_bool(0.5);
            }
            nodes.push(meshsplat::maskmap::MaskNode { t, p, mask });
        }
    }
    nodes
}

/// Direct bilinear evaluation over the four nodes around `(t, p)`, written
/// as two nested lerps from the raw node list.
pub fn bilinear_oracle(nodes: &[meshsplat::maskmap::MaskNode], t: f64, p: f64) -> Vec<f64> {
    let mut times: Vec<f64> = nodes.iter().map(|n| n.t).collect();
    let mut poses: Vec<f64> = nodes.iter().map(|n| n.p).collect();
    times.sort_by(f64::total_cmp);
    times.dedup();
    poses.sort_by(f64::total_cmp);
    poses.dedup();
    let bracket = |axis: &[f64], x: f64| -> (f64, f64, f64) {
        let x = x.clamp(axis[0], axis[axis.len() - 1]);
        for w in axis.windows(2) {
            if x >= w[0] && x <= w[1] {
                return (w[0], w[1], (x - w[0]) / (w[1] - w[0]));
            }
        }
        (axis[0], axis[0], 0.0)
    };
    let (t0, t1, u) = bracket(&times, t);
    let (p0, p1, v) = bracket(&poses, p);
    let at = |tt: f64, pp: f64| &nodes.iter().find(|n| n.t == tt && n.p == pp).unwrap().mask;
    let lerp = |a: f64, b: f64, s: f64| a + (b - a) * s;
    let val = |m: &meshsplat::Mask, k: usize| if m.bits[k] { 1.0 } else { 0.0 };
    let (a, b, c, d) = (at(t0, p0), at(t1, p0), at(t0, p1), at(t1, p1));
    (0..a.bits.len())
        .map(|k| {
            lerp(
                lerp(val(a, k), val(b, k), u),
                lerp(val(c, k), val(d, k), u),
                v,
            )
        })
        .collect()
}
