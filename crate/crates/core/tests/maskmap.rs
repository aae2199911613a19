mod common;

use common::*;
use meshsplat::maskmap::{accumulate_selection, build_mask_grid, warp_mask, SelectionSample};
use meshsplat::render::{render_label_mask, render_with, RenderOptions};
use meshsplat::rig::pixel_winners;
use meshsplat::splat::{GaussianSplat, Vec3};
use meshsplat::Mask;
use proptest::prelude::*;
use rand::Rng;

#[test]
fn nodes_reproduce_exactly() {
    let mut r = rng(1);
    for _ in 0..100 {
        let nodes = random_grid_nodes(9, 7, &mut r);
        let grid = build_mask_grid(&nodes).unwrap();
        for n in &nodes {
            let w = warp_mask(&grid, n.t, n.p, r.random_range(0.01..1.0)).unwrap();
            assert_eq!(w.mask.mask, n.mask);
            assert!(!w.clamped);
        }
    }
}

#[test]
fn interior_values_match_bilinear_oracle() {
    let mut r = rng(2);
    for _ in 0..1000 {
        let nodes = random_grid_nodes(6, 5, &mut r);
        let grid = build_mask_grid(&nodes).unwrap();
        let (ts, ps) = (grid.times(), grid.poses());
        let t = r.random_range(ts[0]..=ts[ts.len() - 1]);
        let p = r.random_range(ps[0]..=ps[ps.len() - 1]);
        let (got, clamped) = grid.interpolate(t, p).unwrap();
        assert!(!clamped);
        for (a, b) in got.iter().zip(bilinear_oracle(&nodes, t, p)) {
            assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
        }
    }
}

#[test]
fn monotone_in_threshold_on_random_grids() {
    let mut r = rng(3);
    for _ in 0..1000 {
        let nodes = random_grid_nodes(8, 8, &mut r);
        let grid = build_mask_grid(&nodes).unwrap();
        let (ts, ps) = (grid.times(), grid.poses());
        let t = r.random_range(ts[0] - 0.5..=ts[ts.len() - 1] + 0.5);
        let p = r.random_range(ps[0] - 0.5..=ps[ps.len() - 1] + 0.5);
        let lo = r.random_range(0.0..1.0);
        let hi = r.random_range(lo..=1.0);
        let a = warp_mask(&grid, t, p, lo).unwrap().mask.mask;
        let b = warp_mask(&grid, t, p, hi).unwrap().mask.mask;
        assert!(b
            .bits
            .iter()
            .zip(&a.bits)
            .all(|(hi_bit, lo_bit)| !hi_bit || *lo_bit));
    }
}

#[test]
fn midpoint_of_full_and_empty_is_full_at_half() {
    let full = Mask::filled(4, 4, true);
    let empty = Mask::new(4, 4);
    let nodes = vec![
        meshsplat::maskmap::MaskNode {
            t: 0.0,
            p: 0.0,
            mask: full,
        },
        meshsplat::maskmap::MaskNode {
            t: 1.0,
            p: 0.0,
            mask: empty,
        },
    ];
    let grid = build_mask_grid(&nodes).unwrap();
    assert!(grid
        .interpolate(0.5, 0.0)
        .unwrap()
        .0
        .iter()
        .all(|v| *v == 0.5));
    assert!(warp_mask(&grid, 0.5, 0.0, 0.5)
        .unwrap()
        .mask
        .mask
        .bits
        .iter()
        .all(|b| *b));
}

#[test]
fn grid_nodes_equal_label_mask_renders() {
    let mut r = rng(4);
    let scene = random_scene(40, &mut r);
    let cams: Vec<_> = (0..3)
        .map(|p| {
            let a = p as f64 * 0.4;
            meshsplat::Camera::look_at(
                Vec3::new(4.0 * a.sin(), 0.0, -4.0 * a.cos()),
                Vec3::zeros(),
                Vec3::y(),
                24.0,
                20,
                20,
                p,
            )
            .unwrap()
        })
        .collect();
    let masks: Vec<Mask> = cams
        .iter()
        .map(|c| render_label_mask(&scene, c, 2))
        .collect();
    let nodes: Vec<_> = cams
        .iter()
        .zip(&masks)
        .map(|(c, m)| meshsplat::maskmap::MaskNode {
            t: 0.0,
            p: c.pose_index as f64,
            mask: m.clone(),
        })
        .collect();
    let grid = build_mask_grid(&nodes).unwrap();
    for (c, m) in cams.iter().zip(&masks) {
        assert_eq!(
            &warp_mask(&grid, 0.0, c.pose_index as f64, 0.5)
                .unwrap()
                .mask
                .mask,
            m
        );
    }
}

#[test]
fn opaque_centered_splat_weight_counts_covered_pixels() {
    let cam = camera(16);
    let splat = GaussianSplat::new(Vec3::zeros(), Vec3::repeat(0.3), 1.0, Vec3::repeat(0.5));
    let region = Mask::filled(16, 16, true);
    let sel = accumulate_selection(
        &[SelectionSample {
            posed: std::slice::from_ref(&splat),
            camera: &cam,
            region: &region,
        }],
        1e-3,
    )
    .unwrap();
    let opts = RenderOptions {
        record_floor: 0.0,
        ..Default::default()
    };
    let out = render_with(std::slice::from_ref(&splat), &cam, &opts);
    let expect: f64 = out.weight_sum.iter().sum();
    assert!((sel.weights[&0] - expect).abs() < 1e-9);
    // Near-opaque core: close to the count of covered pixels.
    let covered = out.weight_sum.iter().filter(|w| **w > 0.5).count() as f64;
    assert!((sel.weights[&0] - covered).abs() < 0.35 * covered);
}

#[test]
fn selection_covers_label_winners() {
    let mut r = rng(6);
    let scene = random_scene(40, &mut r);
    let cam = camera(24);
    let region = render_label_mask(&scene, &cam, 1);
    let sel = accumulate_selection(
        &[SelectionSample {
            posed: &scene,
            camera: &cam,
            region: &region,
        }],
        0.0,
    )
    .unwrap();
    let out = meshsplat::render(&scene, &cam);
    for (px, winner) in pixel_winners(&out).into_iter().enumerate() {
        if region.bits[px] {
            assert!(sel.contains(winner.unwrap()));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn interpolated_values_stay_within_corners(seed in any::<u64>(), s in 0.0..1.0f64, q in 0.0..1.0f64) {
        let mut r = rng(seed);
        let nodes = random_grid_nodes(5, 5, &mut r);
        let grid = build_mask_grid(&nodes).unwrap();
        let (ts, ps) = (grid.times(), grid.poses());
        let t = ts[0] + s * (ts[ts.len() - 1] - ts[0]);
        let p = ps[0] + q * (ps[ps.len() - 1] - ps[0]);
        for v in grid.interpolate(t, p).unwrap().0 {
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn selection_is_additive_over_nodes(seed in any::<u64>()) {
        let mut r = rng(seed);
        let scene = random_scene(25, &mut r);
        let cam = camera(16);
        let mut regions = [Mask::new(16, 16), Mask::new(16, 16)];
        for m in regions.iter_mut() {
            for b in m.bits.iter_mut() {
                *b = r.random_bool(0.3);
            }
        }
        let sample = |m: &Mask| accumulate_selection(&[SelectionSample { posed: &scene, camera: &cam, region: m }], 0.0).unwrap();
        let both = accumulate_selection(
            &[
                SelectionSample { posed: &scene, camera: &cam, region: &regions[0] },
                SelectionSample { posed: &scene, camera: &cam, region: &regions[1] },
            ],
            0.0,
        )
        .unwrap();
        let (a, b) = (sample(&regions[0]), sample(&regions[1]));
        let union: std::collections::BTreeSet<usize> = a.indices().chain(b.indices()).collect();
        prop_assert_eq!(both.indices().collect::<std::collections::BTreeSet<_>>(), union);
    }
}
