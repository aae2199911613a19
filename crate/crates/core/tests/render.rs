mod common;

use common::oracle::naive_render;
use common::*;
use meshsplat::render::{
    composite_pixel, depth_sort, project_splat, render, render_label_mask, Camera, Splat2D,
};
use meshsplat::splat::{GaussianSplat, Vec3};
use nalgebra::{Matrix2, Vector2};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

#[test]
fn tiled_render_matches_naive_oracle() {
    let cam = camera(32);
    for seed in 0..20 {
        let scene = random_scene(50, &mut rng(seed));
        let out = render(&scene, &cam);
        let oracle = naive_render(&scene, &cam);
        for i in 0..out.image.data.len() {
            for c in 0..3 {
                let d = (out.image.data[i][c] - oracle.image[i][c]).abs();
                assert!(d <= 1e-6, "seed {seed} pixel {i} channel {c}: diff {d:e}");
            }
            assert!((out.weight_sum[i] - oracle.weight_sum[i]).abs() <= 1e-6);
            assert!((out.transmittance[i] - oracle.transmittance[i]).abs() <= 1e-6);
        }
        assert_eq!(out.labels.labels, oracle.labels, "seed {seed}");
    }
}

#[test]
fn three_half_alpha_layers() {
    let (c, w) = composite_pixel(&[([1.0; 3], 0.5), ([1.0; 3], 0.5), ([1.0; 3], 0.5)]);
    assert_eq!(c, [0.875; 3]);
    assert_eq!(w, vec![0.5, 0.25, 0.125]);
}

#[test]
fn on_axis_covariance_matches_closed_form() {
    let cam = Camera::look_at(
        Vec3::new(0.0, 0.0, -5.0),
        Vec3::zeros(),
        Vec3::y(),
        100.0,
        64,
        64,
        0,
    )
    .unwrap();
    let sigma = 0.2;
    let p = project_splat(
        &GaussianSplat::new(Vec3::zeros(), Vec3::repeat(sigma), 0.5, Vec3::zeros()),
        &cam,
    )
    .unwrap();
    assert!((p.mean2d - Vector2::new(cam.cx, cam.cy)).norm() < 1e-12);
    let expect = (100.0 * sigma / 5.0_f64).powi(2) + 0.3;
    assert!((p.cov2d - Matrix2::identity() * expect).abs().max() < 1e-9);
}

#[test]
fn depth_sort_matches_reference_sort() {
    let mut r = rng(3);
    let splats: Vec<Splat2D> = (0..1000)
        .map(|index| Splat2D {
            mean2d: Vector2::zeros(),
            cov2d: Matrix2::identity(),
            // Coarse depths so ties occur.
            depth: (r.random_range(1.0..50.0_f64) * 4.0).round() / 4.0,
            index,
        })
        .collect();
    let order = depth_sort(&splats);
    let mut reference: Vec<(u64, usize)> = splats
        .iter()
        .map(|s| (s.depth.to_bits(), s.index))
        .collect();
    reference.sort_unstable();
    let got: Vec<usize> = order.iter().map(|&i| splats[i].index).collect();
    let want: Vec<usize> = reference.iter().map(|r| r.1).collect();
    assert_eq!(got, want);
}

#[test]
fn label_mask_equals_max_weight_winner() {
    let cam = camera(24);
    let scene = random_scene(30, &mut rng(5));
    let opts = meshsplat::render::RenderOptions {
        record_floor: 0.0,
        ..Default::default()
    };
    let out = meshsplat::render::render_with(&scene, &cam, &opts);
    for label in 1..4 {
        let mask = render_label_mask(&scene, &cam, label);
        for (px, recs) in out.records.iter().enumerate() {
            let winner = recs
                .iter()
                .fold(None::<(f64, usize)>, |b, r| match b {
                    Some((w, _)) if w >= r.weight => b,
                    _ => Some((r.weight, r.splat)),
                })
                .map(|(_, i)| scene[i].label);
            assert_eq!(mask.bits[px], winner == Some(label));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn weight_sums_equal_one_minus_transmittance(seed in any::<u64>(), n in 1usize..40) {
        let out = render(&random_scene(n, &mut rng(seed)), &camera(20));
        for (s, t) in out.weight_sum.iter().zip(&out.transmittance) {
            prop_assert!(*s <= 1.0 + 1e-12);
            prop_assert!((s - (1.0 - t)).abs() <= 1e-9);
        }
    }

    #[test]
    fn compositing_ignores_scene_order(seed in any::<u64>(), n in 2usize..30) {
        let mut r = rng(seed);
        let scene = random_scene(n, &mut r);
        let mut shuffled = scene.clone();
        shuffled.shuffle(&mut r);
        let cam = camera(20);
        let (a, b) = (render(&scene, &cam), render(&shuffled, &cam));
        for (x, y) in a.image.data.iter().zip(&b.image.data) {
            for c in 0..3 {
                prop_assert!((x[c] - y[c]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn translation_equivariance(seed in any::<u64>(), dx in -2.0..2.0f64, dy in -2.0..2.0f64, dz in -2.0..2.0f64) {
        let scene = random_scene(15, &mut rng(seed));
        let offset = Vec3::new(dx, dy, dz);
        let moved: Vec<GaussianSplat> = scene
            .iter()
            .map(|s| GaussianSplat { mu: s.mu + offset, ..s.clone() })
            .collect();
        let cam = camera(20);
        let (a, b) = (render(&scene, &cam), render(&moved, &cam.translated(&offset)));
        for (x, y) in a.image.data.iter().zip(&b.image.data) {
            for c in 0..3 {
                prop_assert!((x[c] - y[c]).abs() < 1e-9);
            }
        }
    }
}
