//! Semantic labeling of splats from segmenter label maps.

use std::collections::BTreeMap;

use crate::error::Result;
use crate::imaging::{Image, LabelMap};
use crate::render::{render_with, Camera, RenderOptions, RenderOutput};
use crate::splat::{GaussianSplat, Label};

pub const LABEL_HAIR: Label = 1;
pub const LABEL_FACE: Label = 2;
pub const LABEL_NECK: Label = 3;

/// Produces a per-pixel semantic label map for an image.
pub trait Segmenter: Send + Sync {
    fn segment(&self, image: &Image) -> LabelMap;
}

/// Splits the foreground into three horizontal bands: upper (hair), middle
/// (face) and lower (neck). Background pixels get label 0.
#[derive(Debug, Clone, Copy)]
pub struct BandSegmenter {
    /// Pixels whose brightest channel is at or below this are background.
    pub background_level: f64,
}

impl Default for BandSegmenter {
    fn default() -> Self {
        Self {
            background_level: 0.02,
        }
    }
}

impl Segmenter for BandSegmenter {
    fn segment(&self, image: &Image) -> LabelMap {
        let mut out = LabelMap::new(image.width, image.height);
        let is_fg = |px: [f64; 3]| px.iter().cloned().fold(0.0, f64::max) > self.background_level;
        let rows: Vec<usize> = (0..image.height)
            .filter(|&y| (0..image.width).any(|x| is_fg(image.get(x, y))))
            .collect();
        let (Some(&top), Some(&bottom)) = (rows.first(), rows.last()) else {
            return out;
        };
        let span = (bottom - top + 1) as f64;
        for y in top..=bottom {
            let band = ((y - top) as f64 * 3.0 / span).floor() as Label + 1;
            for x in 0..image.width {
                if is_fg(image.get(x, y)) {
                    out.labels[y * image.width + x] = band.min(3);
                }
            }
        }
        out
    }
}

/// Index of the max-weight contributor per pixel, from records rendered with
/// no weight floor. Ties keep the front-most contributor.
pub fn pixel_winners(render: &RenderOutput) -> Vec<Option<usize>> {
    render
        .records
        .iter()
        .map(|recs| {
            let mut best: Option<(f64, usize)> = None;
            for r in recs {
                if best.is_none_or(|(w, _)| r.weight > w) {
                    best = Some((r.weight, r.splat));
                }
            }
            best.map(|(_, s)| s)
        })
        .collect()
}

/// One labeled observation: a posed scene, the camera and the segmenter's
/// label map for that view.
pub struct LabelView<'a> {
    pub posed: &'a [GaussianSplat],
    pub camera: &'a Camera,
    pub labels: &'a LabelMap,
}

/// Labels each splat by majority vote of the segmenter labels over the pixels
/// it wins (is the largest contributor of). Unseen splats get label 0.
pub fn assign_labels(
    scene: &[GaussianSplat],
    segmenter_mask: &LabelMap,
    cam: &Camera,
) -> Result<Vec<GaussianSplat>> {
    assign_labels_multi(
        scene,
        &[LabelView {
            posed: scene,
            camera: cam,
            labels: segmenter_mask,
        }],
    )
}

/// Multi-view variant of [`assign_labels`]: votes accumulate over all views.
/// Vote ties go to the smaller label id.
pub fn assign_labels_multi(
    scene: &[GaussianSplat],
    views: &[LabelView<'_>],
) -> Result<Vec<GaussianSplat>> {
    let mut votes: Vec<BTreeMap<Label, usize>> = vec![BTreeMap::new(); scene.len()];
    let opts = RenderOptions {
        record_floor: 0.0,
        ..Default::default()
    };
    for view in views {
        let render = render_with(view.posed, view.camera, &opts);
        render
            .image
            .check_same_size(view.labels, "segmenter mask vs camera")?;
        for (pixel, winner) in pixel_winners(&render).into_iter().enumerate() {
            if let Some(s) = winner {
                *votes[s].entry(view.labels.labels[pixel]).or_default() += 1;
            }
        }
    }
    Ok(scene
        .iter()
        .zip(votes)
        .map(|(splat, v)| {
            let mut out = splat.clone();
            out.label = v
                .iter()
                .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
                .map(|(l, _)| *l)
                .unwrap_or(0);
            out
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::splat::Vec3;

    fn cam() -> Camera {
        Camera::look_at(
            Vec3::new(0.0, 0.0, -5.0),
            Vec3::zeros(),
            Vec3::new(0.0, 1.0, 0.0),
            60.0,
            24,
            24,
            0,
        )
        .unwrap()
    }

    #[test]
    fn splat_inside_region_takes_its_label() {
        let s = GaussianSplat::new(
            Vec3::zeros(),
            Vec3::new(0.2, 0.2, 0.2),
            0.9,
            Vec3::new(1.0, 1.0, 1.0),
        );
        let mut map = LabelMap::new(24, 24);
        map.labels.iter_mut().for_each(|l| *l = 3);
        let out = assign_labels(&[s], &map, &cam()).unwrap();
        assert_eq!(out[0].label, 3);
    }

    #[test]
    fn invisible_splat_gets_zero() {
        let s = GaussianSplat::new(
            Vec3::new(0.0, 0.0, -9.0),
            Vec3::new(0.2, 0.2, 0.2),
            0.9,
            Vec3::new(1.0, 1.0, 1.0),
        )
        .with_label(2);
        let mut map = LabelMap::new(24, 24);
        map.labels.iter_mut().for_each(|l| *l = 3);
        assert_eq!(assign_labels(&[s], &map, &cam()).unwrap()[0].label, 0);
    }

    #[test]
    fn band_segmenter_thirds() {
        let mut img = Image::new(4, 9);
        for y in 0..9 {
            for x in 1..3 {
                img.set(x, y, [0.5, 0.5, 0.5]);
            }
        }
        let map = BandSegmenter::default().segment(&img);
        assert_eq!(map.get(1, 0), 1);
        assert_eq!(map.get(1, 4), 2);
        assert_eq!(map.get(2, 8), 3);
        assert_eq!(map.get(0, 4), 0);
    }
}
