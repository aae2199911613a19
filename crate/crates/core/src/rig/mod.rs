//! Mesh rigging of splats: triangle frames, binding, posing, adaptive
//! density control and semantic labeling.

mod bind;
mod densify;
mod labels;
mod mesh;

pub use bind::{bind_splats, bind_to, pose_splats, MeshBinding};
pub(crate) use bind::{pose_world, PoseLink};
pub use densify::{
    densify_and_prune, DensifyOutcome, DensifyStats, DensifyThresholds, SplatOrigin,
    DENSIFY_INTERVAL,
};
pub use labels::{
    assign_labels, assign_labels_multi, pixel_winners, BandSegmenter, LabelView, Segmenter,
    LABEL_FACE, LABEL_HAIR, LABEL_NECK,
};
pub use mesh::{
    closest_point_barycentric, triangle_frame, MeshFrame, TriangleFrame, MIN_TRIANGLE_AREA,
};
