use meshsplat::dataset::{generate_synthetic_scene, SynthConfig, SynthOutput};
use meshsplat::imaging::hue_distance;
use meshsplat::pipeline::{
    grid_nodes, mean_hue, node_reports, run_edit, EditScene, PipelineConfig,
};
use meshsplat::render::render;
use meshsplat::rig::pose_splats;
use meshsplat::services::{default_labels, MockEditor, MockRefiner, OUTSIDE_TOLERANCE};
use meshsplat::Error;

fn synth(dir: &std::path::Path) -> SynthOutput {
    let config = SynthConfig {
        n_cameras: 4,
        n_frames: 2,
        width: 32,
        height: 32,
        subdivisions: 1,
        focal: 40.0,
        ..SynthConfig::default()
    };
    generate_synthetic_scene(11, &config, dir).unwrap()
}

fn pipeline_config(iterations: usize) -> PipelineConfig {
    let mut pc = PipelineConfig::new(grid_nodes(&[0, 1], &[0, 1, 2, 3]));
    pc.edit.iterations = iterations;
    pc.edit.seed = 4;
    pc
}

#[test]
fn recolor_moves_hue_inside_and_keeps_outside() {
    let dir = tempfile::tempdir().unwrap();
    let out = synth(dir.path());
    let input = EditScene {
        scene: &out.ground_truth,
        meshes: &out.meshes,
        cameras: &out.cameras,
    };
    let pc = pipeline_config(300);
    let run = run_edit(
        "recolor the hair blue",
        &default_labels(),
        &MockRefiner,
        &MockEditor,
        input,
        &pc,
        None,
    )
    .unwrap();
    assert_eq!(run.plan.instructions.len(), 1);
    assert!(!run.selection.is_empty());
    assert_eq!(run.targets.len(), 8);

    for target in &run.targets {
        let node = meshsplat::maskmap::NodeKey {
            t: target.t,
            p: target.p,
        };
        let posed = pose_splats(&out.ground_truth, &out.meshes[target.t]).unwrap();
        let before = &run.before[&node];
        assert_eq!(before, &render(&posed, &out.cameras[target.p]).image);
        for ((a, b), inside) in before
            .data
            .iter()
            .zip(&target.image.data)
            .zip(&run.masks[&node].bits)
        {
            if !inside {
                assert!((0..3).all(|k| (a[k] - b[k]).abs() <= OUTSIDE_TOLERANCE));
            }
        }
    }

    let edited = EditScene {
        scene: &run.outcome.scene,
        ..input
    };
    let reports = node_reports(&run, edited).unwrap();
    let mut improved = 0;
    let mut with_hair = 0;
    for r in &reports {
        let mask = &run.masks[&r.node];
        let Some(after) = r.inside_hue else { continue };
        with_hair += 1;
        let before = mean_hue(&run.before[&r.node], mask).unwrap();
        if hue_distance(after, 240.0) + 10.0 < hue_distance(before, 240.0) {
            improved += 1;
        }
        assert!(
            r.outside_psnr > 30.0,
            "node {:?}: {:.2} dB",
            r.node,
            r.outside_psnr
        );
    }
    assert!(with_hair >= 4);
    assert_eq!(improved, with_hair);
}

#[test]
fn edit_runs_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let out = synth(dir.path());
    let input = EditScene {
        scene: &out.ground_truth,
        meshes: &out.meshes,
        cameras: &out.cameras,
    };
    let pc = pipeline_config(20);
    let a = run_edit(
        "make the neck red",
        &default_labels(),
        &MockRefiner,
        &MockEditor,
        input,
        &pc,
        None,
    )
    .unwrap();
    let b = run_edit(
        "make the neck red",
        &default_labels(),
        &MockRefiner,
        &MockEditor,
        input,
        &pc,
        None,
    )
    .unwrap();
    assert_eq!(a.outcome.scene, b.outcome.scene);
    assert_eq!(a.targets, b.targets);
}

#[test]
fn refusals_surface_before_any_work() {
    let dir = tempfile::tempdir().unwrap();
    let out = synth(dir.path());
    let input = EditScene {
        scene: &out.ground_truth,
        meshes: &out.meshes,
        cameras: &out.cameras,
    };
    let pc = pipeline_config(5);
    for prompt in ["", "   ", "recolor the tail blue", "hello there"] {
        let err = run_edit(
            prompt,
            &default_labels(),
            &MockRefiner,
            &MockEditor,
            input,
            &pc,
            None,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Refusal(_)), "{prompt:?}: {err}");
    }
}
