//! Image quality metrics and CSV reports.

use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::imaging::{Image, Mask};

pub const PSNR_CAP: f64 = 99.0;
const MSE_FLOOR: f64 = 1e-10;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

/// A learned perceptual distance (e.g. LPIPS) supplied from outside.
pub trait PerceptualMetric: Send + Sync {
    fn name(&self) -> &str;
    fn distance(&self, a: &Image, b: &Image) -> Result<f64>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Metrics {
    pub psnr: f64,
    pub ssim: f64,
}

fn check_dims(a: &Image, b: &Image) -> Result<()> {
    if a.width != b.width || a.height != b.height {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    if a.data.is_empty() {
        return Err(Error::DimensionMismatch("empty image".into()));
    }
    Ok(())
}

fn psnr_from_mse(mse: f64) -> f64 {
    if mse < MSE_FLOOR {
        PSNR_CAP
    } else {
        (10.0 * (1.0 / mse).log10()).min(PSNR_CAP)
    }
}

pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    check_dims(a, b)?;
    let sum: f64 = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| (0..3).map(|c| (x[c] - y[c]).powi(2)).sum::<f64>())
        .sum();
    Ok(psnr_from_mse(sum / (3 * a.data.len()) as f64))
}

/// PSNR over the pixels where `mask` is set. Errors when the mask is empty.
pub fn masked_psnr(a: &Image, b: &Image, mask: &Mask) -> Result<f64> {
    check_dims(a, b)?;
    if mask.width != a.width || mask.height != a.height {
        return Err(Error::DimensionMismatch("mask does not match image".into()));
    }
    let (mut sum, mut n) = (0.0, 0usize);
    for ((x, y), m) in a.data.iter().zip(&b.data).zip(&mask.bits) {
        if *m {
            sum += (0..3).map(|c| (x[c] - y[c]).powi(2)).sum::<f64>();
            n += 3;
        }
    }
    if n == 0 {
        return Err(Error::InvalidParameter(
            "masked PSNR over an empty mask".into(),
        ));
    }
    Ok(psnr_from_mse(sum / n as f64))
}

/// Normalized 1D Gaussian taps; the 2D window is their outer product.
pub fn gaussian_taps(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let w: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|x| x / s).collect()
}

/// Valid-mode separable filtering of a `w × h` plane.
fn filter(plane: &[f64], w: usize, h: usize, taps: &[f64]) -> (Vec<f64>, usize, usize) {
    let k = taps.len();
    let (ow, oh) = (w - k + 1, h - k + 1);
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..k).map(|i| taps[i] * plane[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..k).map(|i| taps[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    (out, ow, oh)
}

/// Mean SSIM over all valid window positions, averaged over channels. The
/// window shrinks to the smaller image side for images under 11 pixels.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    check_dims(a, b)?;
    let (w, h) = (a.width, a.height);
    let taps = gaussian_taps(SSIM_WINDOW.min(w).min(h), SSIM_SIGMA);
    let mut total = 0.0;
    for c in 0..3 {
        let x: Vec<f64> = a.data.iter().map(|p| p[c]).collect();
        let y: Vec<f64> = b.data.iter().map(|p| p[c]).collect();
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
        let (mx, _, _) = filter(&x, w, h, &taps);
        let (my, _, _) = filter(&y, w, h, &taps);
        let (sxx, _, _) = filter(&xx, w, h, &taps);
        let (syy, _, _) = filter(&yy, w, h, &taps);
        let (sxy, _, _) = filter(&xy, w, h, &taps);
        let n = mx.len();
        let mut acc = 0.0;
        for i in 0..n {
            let (ux, uy) = (mx[i], my[i]);
            let vx = sxx[i] - ux * ux;
            let vy = syy[i] - uy * uy;
            let cov = sxy[i] - ux * uy;
            acc += ((2.0 * ux * uy + C1) * (2.0 * cov + C2))
                / ((ux * ux + uy * uy + C1) * (vx + vy + C2));
        }
        total += acc / n as f64;
    }
    Ok(total / 3.0)
}

pub fn compute_metrics(a: &Image, b: &Image) -> Result<Metrics> {
    Ok(Metrics {
        psnr: psnr(a, b)?,
        ssim: ssim(a, b)?,
    })
}

/// One line of an evaluation report.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub view: String,
    pub psnr: f64,
    pub ssim: f64,
    /// `None` when no perceptual metric is configured.
    pub lpips: Option<f64>,
}

pub fn evaluate_pair(
    view: impl Into<String>,
    reference: &Image,
    candidate: &Image,
    perceptual: Option<&dyn PerceptualMetric>,
) -> Result<MetricsRow> {
    let m = compute_metrics(reference, candidate)?;
    Ok(MetricsRow {
        view: view.into(),
        psnr: m.psnr,
        ssim: m.ssim,
        lpips: perceptual
            .map(|p| p.distance(reference, candidate))
            .transpose()?,
    })
}

/// Writes `view,psnr,ssim,lpips`; the lpips column reads `absent` when no
/// perceptual metric was configured.
pub fn write_metrics_csv(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(["view", "psnr", "ssim", "lpips"])
        .map_err(|e| csv_err(path, e))?;
    for r in rows {
        let lpips = r
            .lpips
            .map_or_else(|| "absent".to_string(), |v| v.to_string());
        w.write_record([
            r.view.clone(),
            r.psnr.to_string(),
            r.ssim.to_string(),
            lpips,
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::parse(path.display().to_string(), e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(w: usize, h: usize, k: f64) -> Image {
        let mut img = Image::new(w, h);
        for y in 0..h {
            for x in 0..w {
                img.set(
                    x,
                    y,
                    [(x as f64 * k).sin() * 0.5 + 0.5, y as f64 / h as f64, 0.3],
                );
            }
        }
        img
    }

    #[test]
    fn identical_images_hit_caps() {
        let a = ramp(20, 16, 0.3);
        let m = compute_metrics(&a, &a).unwrap();
        assert_eq!(m.psnr, 99.0);
        assert!((m.ssim - 1.0).abs() < 1e-12);
    }

    #[test]
    fn unit_mse_is_zero_db() {
        let a = Image::filled(8, 8, [0.0; 3]);
        let b = Image::filled(8, 8, [1.0; 3]);
        assert_eq!(psnr(&a, &b).unwrap(), 0.0);
    }

    #[test]
    fn small_images_use_shrunken_window() {
        let a = ramp(5, 7, 0.5);
        let b = ramp(5, 7, 0.6);
        let s = ssim(&a, &b).unwrap();
        assert!(s.is_finite() && s < 1.0);
    }

    #[test]
    fn mismatch_and_empty_mask_error() {
        let a = Image::new(4, 4);
        assert!(compute_metrics(&a, &Image::new(4, 5)).is_err());
        assert!(masked_psnr(&a, &a, &Mask::new(4, 4)).is_err());
    }
}
