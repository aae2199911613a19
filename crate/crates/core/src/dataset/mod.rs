//! Dataset manifests, synthetic generation, file formats and metrics.

mod formats;
mod manifest;
mod metrics;
mod synth;

pub use formats::{
    decode_adam, decode_obj, decode_scene, encode_adam, encode_obj, encode_scene, load_adam,
    load_image, load_label_map, load_mask, load_obj, load_scene, save_adam, save_image,
    save_label_map, save_mask, save_obj, save_scene, ADAM_MAGIC, ADAM_VERSION, SPLAT_LAYOUT,
    SPLAT_MAGIC, SPLAT_VERSION,
};
pub use manifest::{
    load_dataset, CameraSpec, Dataset, DatasetManifest, FrameSpec, MANIFEST_VERSION,
};
pub use metrics::{
    compute_metrics, evaluate_pair, gaussian_taps, masked_psnr, psnr, ssim, write_metrics_csv,
    Metrics, MetricsRow, PerceptualMetric, PSNR_CAP, SSIM_SIGMA, SSIM_WINDOW,
};
pub use synth::{
    deformed_mesh, generate_synthetic_scene, ground_truth_scene, icosphere, initial_fit_scene,
    rig_camera, SynthConfig, SynthOutput, GROUND_TRUTH_FILE, MANIFEST_FILE,
};
