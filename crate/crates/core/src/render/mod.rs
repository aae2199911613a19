//! Tile-based CPU rasterizer for Gaussian splats.
//!
//! Splats are projected, depth sorted, binned into 16×16 pixel tiles by the
//! bounding box of their 3σ screen ellipse, and composited front to back:
//!
//! ```text
//! C = Σᵢ cᵢ αᵢ ∏ⱼ<ᵢ (1 − αⱼ)
//! ```
//!
//! with `αᵢ = opacityᵢ · exp(−½ dᵀ Σ₂ᴰ⁻¹ d)` clamped to `[0, 0.999]`.
//! Besides color, every render produces a per-pixel label map (label of the
//! single largest contributor) and per-pixel contribution records.

mod camera;
mod project;

pub use camera::Camera;
pub(crate) use project::{
    covariance_vjp, project_world, projection_vjp, Projection, WorldGrad, WorldSplat,
};
pub use project::{depth_sort, project_splat, Splat2D, LOW_PASS, MIN_DET, NEAR_PLANE};

use nalgebra::Vector2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::imaging::{Image, LabelMap, Mask};
use crate::splat::{GaussianSplat, Label};

/// Compositing stops once transmittance drops below this.
pub const MIN_TRANSMITTANCE: f64 = 1e-4;
/// Upper clamp on per-pixel alpha.
pub const MAX_ALPHA: f64 = 0.999;
/// Squared Mahalanobis radius of the evaluated ellipse (3σ).
pub const CUTOFF_SQ: f64 = 9.0;
pub const TILE_SIZE: usize = 16;
/// Default floor on recorded contribution weights.
pub const RECORD_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RenderOptions {
    pub tile_size: usize,
    /// Contributions with weight below this are not recorded. Label winners
    /// and weight sums always use every contributor.
    pub record_floor: f64,
    pub parallel: bool,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            tile_size: TILE_SIZE,
            record_floor: RECORD_FLOOR,
            parallel: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Contribution {
    pub splat: usize,
    pub weight: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderDiagnostics {
    pub culled: usize,
    pub degenerate: usize,
}

#[derive(Debug, Clone)]
pub struct RenderOutput {
    pub image: Image,
    pub labels: LabelMap,
    /// Per pixel, the contributors with weight at or above the record floor,
    /// front to back.
    pub records: Vec<Vec<Contribution>>,
    /// Final transmittance per pixel.
    pub transmittance: Vec<f64>,
    /// Sum of all contribution weights per pixel (no floor).
    pub weight_sum: Vec<f64>,
    pub diagnostics: RenderDiagnostics,
}

impl RenderOutput {
    pub fn width(&self) -> usize {
        self.image.width
    }

    pub fn height(&self) -> usize {
        self.image.height
    }
}

/// Front-to-back composite of depth-ordered `(color, alpha)` pairs.
/// Returns the color and each contributor's weight `αᵢ·∏ⱼ<ᵢ(1−αⱼ)`; stops
/// early once transmittance falls below [`MIN_TRANSMITTANCE`].
pub fn composite_pixel(contribs: &[([f64; 3], f64)]) -> ([f64; 3], Vec<f64>) {
    let mut color = [0.0; 3];
    let mut weights = Vec::with_capacity(contribs.len());
    let mut t = 1.0;
    for (c, alpha) in contribs {
        let w = alpha * t;
        for k in 0..3 {
            color[k] += c[k] * w;
        }
        weights.push(w);
        t *= 1.0 - alpha;
        if t < MIN_TRANSMITTANCE {
            break;
        }
    }
    (color, weights)
}

/// One evaluated contributor of a pixel, kept for the backward pass.
#[derive(Debug, Clone, Copy)]
pub(crate) struct TraceEntry {
    /// Index into the projection list.
    pub proj: u32,
    pub alpha: f64,
    /// Transmittance in front of this contributor.
    pub t_before: f64,
    /// Unclamped Gaussian falloff `exp(−½ m)`.
    pub falloff: f64,
    pub clamped: bool,
}

/// Forward state retained for differentiation.
#[derive(Debug, Clone)]
pub(crate) struct Trace {
    pub projections: Vec<Projection>,
    pub pixels: Vec<Vec<TraceEntry>>,
}

struct PixelResult {
    color: [f64; 3],
    transmittance: f64,
    weight_sum: f64,
    label: Label,
    records: Vec<Contribution>,
    trace: Vec<TraceEntry>,
}

struct TileResult {
    pixels: Vec<(usize, PixelResult)>,
}

/// Shared rasterization core; `world` is indexed like the scene.
pub(crate) fn rasterize(
    world: &[WorldSplat],
    cam: &Camera,
    opts: &RenderOptions,
    want_trace: bool,
) -> (RenderOutput, Option<Trace>) {
    let (w, h) = (cam.width, cam.height);
    let mut diagnostics = RenderDiagnostics::default();
    let mut projections = Vec::with_capacity(world.len());
    for (i, ws) in world.iter().enumerate() {
        match project_world(ws, i, cam) {
            None => diagnostics.culled += 1,
            Some(p) => {
                let det = p.splat.cov2d.determinant();
                let finite = p.splat.mean2d.iter().all(|v| v.is_finite()) && det.is_finite();
                if !finite || det < MIN_DET {
                    diagnostics.degenerate += 1;
                } else {
                    projections.push(p);
                }
            }
        }
    }
    let splats2d: Vec<Splat2D> = projections.iter().map(|p| p.splat.clone()).collect();
    let order = depth_sort(&splats2d);

    let tile = opts.tile_size.max(1);
    let tiles_x = w.div_ceil(tile);
    let tiles_y = h.div_ceil(tile);
    let mut bins: Vec<Vec<u32>> = vec![Vec::new(); tiles_x * tiles_y];
    for &pi in &order {
        let p = &projections[pi].splat;
        let rx = (CUTOFF_SQ * p.cov2d[(0, 0)]).sqrt();
        let ry = (CUTOFF_SQ * p.cov2d[(1, 1)]).sqrt();
        let x_lo = (p.mean2d.x - rx).ceil().max(0.0);
        let x_hi = (p.mean2d.x + rx).floor().min(w as f64 - 1.0);
        let y_lo = (p.mean2d.y - ry).ceil().max(0.0);
        let y_hi = (p.mean2d.y + ry).floor().min(h as f64 - 1.0);
        if x_lo > x_hi || y_lo > y_hi {
            continue;
        }
        let (tx0, tx1) = (x_lo as usize / tile, x_hi as usize / tile);
        let (ty0, ty1) = (y_lo as usize / tile, y_hi as usize / tile);
        for ty in ty0..=ty1 {
            for tx in tx0..=tx1 {
                bins[ty * tiles_x + tx].push(pi as u32);
            }
        }
    }

    let shade_tile = |tile_id: usize| -> TileResult {
        let (tx, ty) = (tile_id % tiles_x, tile_id / tiles_x);
        let list = &bins[tile_id];
        let mut pixels = Vec::with_capacity(tile * tile);
        for y in ty * tile..((ty + 1) * tile).min(h) {
            for x in tx * tile..((tx + 1) * tile).min(w) {
                let px = shade_pixel(x, y, list, &projections, world, opts, want_trace);
                pixels.push((y * w + x, px));
            }
        }
        TileResult { pixels }
    };
    let tiles: Vec<TileResult> = if opts.parallel {
        (0..tiles_x * tiles_y)
            .into_par_iter()
            .map(shade_tile)
            .collect()
    } else {
        (0..tiles_x * tiles_y).map(shade_tile).collect()
    };

    let mut image = Image::new(w, h);
    let mut labels = LabelMap::new(w, h);
    let mut records = vec![Vec::new(); w * h];
    let mut transmittance = vec![1.0; w * h];
    let mut weight_sum = vec![0.0; w * h];
    let mut traces = if want_trace {
        vec![Vec::new(); w * h]
    } else {
        Vec::new()
    };
    for tile in tiles {
        for (idx, px) in tile.pixels {
            image.data[idx] = px.color;
            labels.labels[idx] = px.label;
            records[idx] = px.records;
            transmittance[idx] = px.transmittance;
            weight_sum[idx] = px.weight_sum;
            if want_trace {
                traces[idx] = px.trace;
            }
        }
    }
    let out = RenderOutput {
        image,
        labels,
        records,
        transmittance,
        weight_sum,
        diagnostics,
    };
    let trace = want_trace.then(|| Trace {
        projections,
        pixels: traces,
    });
    (out, trace)
}

fn shade_pixel(
    x: usize,
    y: usize,
    list: &[u32],
    projections: &[Projection],
    world: &[WorldSplat],
    opts: &RenderOptions,
    want_trace: bool,
) -> PixelResult {
    let pix = Vector2::new(x as f64, y as f64);
    let mut color = [0.0; 3];
    let mut t = 1.0;
    let mut weight_sum = 0.0;
    let mut best = (0.0, 0 as Label);
    let mut records = Vec::new();
    let mut trace = Vec::new();
    for &pi in list {
        let proj = &projections[pi as usize];
        let d = pix - proj.splat.mean2d;
        let a = &proj.conic;
        let m = a[(0, 0)] * d.x * d.x + (a[(0, 1)] + a[(1, 0)]) * d.x * d.y + a[(1, 1)] * d.y * d.y;
        if !(m <= CUTOFF_SQ) {
            continue;
        }
        let ws = &world[proj.splat.index];
        let falloff = (-0.5 * m).exp();
        let raw = ws.opacity * falloff;
        let clamped = raw > MAX_ALPHA;
        let alpha = raw.clamp(0.0, MAX_ALPHA);
        let weight = alpha * t;
        for k in 0..3 {
            color[k] += ws.color[k] * weight;
        }
        weight_sum += weight;
        if weight > best.0 {
            best = (weight, ws.label);
        }
        if weight >= opts.record_floor {
            records.push(Contribution {
                splat: proj.splat.index,
                weight,
            });
        }
        if want_trace {
            trace.push(TraceEntry {
                proj: pi,
                alpha,
                t_before: t,
                falloff,
                clamped,
            });
        }
        t *= 1.0 - alpha;
        if t < MIN_TRANSMITTANCE {
            break;
        }
    }
    PixelResult {
        color,
        transmittance: t,
        weight_sum,
        label: best.1,
        records,
        trace,
    }
}

/// Renders `scene` (world-space splats) into `cam` with default options.
pub fn render(scene: &[GaussianSplat], cam: &Camera) -> RenderOutput {
    render_with(scene, cam, &RenderOptions::default())
}

pub fn render_with(scene: &[GaussianSplat], cam: &Camera, opts: &RenderOptions) -> RenderOutput {
    let world: Vec<WorldSplat> = scene.iter().map(WorldSplat::from_splat).collect();
    rasterize(&world, cam, opts, false).0
}

/// Pixels whose label-map entry equals `target_label`.
pub fn render_label_mask(scene: &[GaussianSplat], cam: &Camera, target_label: Label) -> Mask {
    render(scene, cam).labels.mask_of(target_label)
}
