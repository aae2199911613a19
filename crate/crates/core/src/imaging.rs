//! Plain in-memory raster containers shared by every module.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::splat::Label;

/// Linear RGB image with channels in `[0, 1]`, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<[f64; 3]>,
}

impl Image {
    pub fn new(width: usize, height: usize) -> Self {
        Self::filled(width, height, [0.0; 3])
    }

    pub fn filled(width: usize, height: usize, value: [f64; 3]) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [f64; 3] {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: [f64; 3]) {
        self.data[y * self.width + x] = value;
    }

    pub fn same_size<T: Sized2>(&self, other: &T) -> bool {
        self.width == other.width() && self.height == other.height()
    }

    pub(crate) fn check_same_size<T: Sized2>(&self, other: &T, what: &str) -> Result<()> {
        if self.same_size(other) {
            Ok(())
        } else {
            Err(Error::DimensionMismatch(format!(
                "{what}: {}x{} vs {}x{}",
                self.width,
                self.height,
                other.width(),
                other.height()
            )))
        }
    }

    /// `round(255 · clamp(v, 0, 1))` per channel.
    pub fn to_rgb8(&self) -> Vec<u8> {
        self.data
            .iter()
            .flat_map(|px| px.iter().map(|v| quantize(*v)))
            .collect()
    }

    pub fn from_rgb8(width: usize, height: usize, bytes: &[u8]) -> Result<Self> {
        if bytes.len() != width * height * 3 {
            return Err(Error::DimensionMismatch(format!(
                "expected {} bytes for {width}x{height} RGB, got {}",
                width * height * 3,
                bytes.len()
            )));
        }
        let data = bytes
            .chunks_exact(3)
            .map(|c| {
                [
                    c[0] as f64 / 255.0,
                    c[1] as f64 / 255.0,
                    c[2] as f64 / 255.0,
                ]
            })
            .collect();
        Ok(Self {
            width,
            height,
            data,
        })
    }

    /// The image after a round trip through 8-bit storage.
    pub fn quantized(&self) -> Self {
        Self {
            width: self.width,
            height: self.height,
            data: self
                .data
                .iter()
                .map(|px| px.map(|v| quantize(v) as f64 / 255.0))
                .collect(),
        }
    }

    /// Copies a `size × size` patch whose top-left corner is `(x0, y0)`,
    /// flattened row-major with interleaved channels.
    pub fn patch(&self, x0: usize, y0: usize, size: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(size * size * 3);
        for y in y0..y0 + size {
            for x in x0..x0 + size {
                out.extend_from_slice(&self.get(x, y));
            }
        }
        out
    }
}

#[inline]
pub fn quantize(v: f64) -> u8 {
    (255.0 * v.clamp(0.0, 1.0)).round() as u8
}

/// Per-pixel semantic label ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelMap {
    pub width: usize,
    pub height: usize,
    pub labels: Vec<Label>,
}

impl LabelMap {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            labels: vec![0; width * height],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Label {
        self.labels[y * self.width + x]
    }

    /// Binary mask of pixels carrying `label`.
    pub fn mask_of(&self, label: Label) -> Mask {
        Mask {
            width: self.width,
            height: self.height,
            bits: self.labels.iter().map(|l| *l == label).collect(),
        }
    }
}

/// Binary pixel mask.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    pub bits: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize) -> Self {
        Self::filled(width, height, false)
    }

    pub fn filled(width: usize, height: usize, value: bool) -> Self {
        Self {
            width,
            height,
            bits: vec![value; width * height],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        self.bits[y * self.width + x] = value;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|b| *b)
    }

    pub fn union(&self, other: &Mask) -> Mask {
        Mask {
            width: self.width,
            height: self.height,
            bits: self
                .bits
                .iter()
                .zip(&other.bits)
                .map(|(a, b)| *a || *b)
                .collect(),
        }
    }

    pub fn intersect(&self, other: &Mask) -> Mask {
        Mask {
            width: self.width,
            height: self.height,
            bits: self
                .bits
                .iter()
                .zip(&other.bits)
                .map(|(a, b)| *a && *b)
                .collect(),
        }
    }

    pub fn inverted(&self) -> Mask {
        Mask {
            width: self.width,
            height: self.height,
            bits: self.bits.iter().map(|b| !b).collect(),
        }
    }

    /// Mean pixel coordinate of the set pixels.
    pub fn centroid(&self) -> Option<(f64, f64)> {
        let (mut sx, mut sy, mut n) = (0.0, 0.0, 0usize);
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) {
                    sx += x as f64;
                    sy += y as f64;
                    n += 1;
                }
            }
        }
        (n > 0).then(|| (sx / n as f64, sy / n as f64))
    }
}

pub trait Sized2 {
    fn width(&self) -> usize;
    fn height(&self) -> usize;
}

macro_rules! impl_sized2 {
    ($($t:ty),*) => {$(
        impl Sized2 for $t {
            fn width(&self) -> usize { self.width }
            fn height(&self) -> usize { self.height }
        }
    )*};
}

impl_sized2!(Image, LabelMap, Mask);

/// RGB → (hue in degrees `[0, 360)`, saturation, value).
pub fn rgb_to_hsv(rgb: [f64; 3]) -> (f64, f64, f64) {
    let [r, g, b] = rgb;
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let hue = if delta <= 0.0 {
        0.0
    } else if max == r {
        60.0 * ((g - b) / delta).rem_euclid(6.0)
    } else if max == g {
        60.0 * ((b - r) / delta + 2.0)
    } else {
        60.0 * ((r - g) / delta + 4.0)
    };
    let sat = if max <= 0.0 { 0.0 } else { delta / max };
    (hue.rem_euclid(360.0), sat, max)
}

pub fn hsv_to_rgb(hue: f64, sat: f64, value: f64) -> [f64; 3] {
    let h = hue.rem_euclid(360.0) / 60.0;
    let c = value * sat;
    let x = c * (1.0 - (h.rem_euclid(2.0) - 1.0).abs());
    let m = value - c;
    let (r, g, b) = match h as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    [r + m, g + m, b + m]
}

/// Smallest absolute angular difference in degrees.
pub fn hue_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(360.0);
    d.min(360.0 - d)
}
