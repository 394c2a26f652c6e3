//! Fidelity metrics on `[0, 1]` intensities and their report format.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::blur::gaussian_kernel;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 1e-4;
pub const SSIM_C2: f64 = 9e-4;

/// Peak signal-to-noise ratio; identical inputs have no finite value.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Psnr {
    Db(f64),
    Identical,
}

impl Psnr {
    pub fn db(self) -> Option<f64> {
        match self {
            Psnr::Db(v) => Some(v),
            Psnr::Identical => None,
        }
    }
}

impl fmt::Display for Psnr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Psnr::Db(v) => write!(f, "{v:.6}"),
            Psnr::Identical => f.write_str("identical"),
        }
    }
}

/// Neumaier-compensated sum, so that a mean of equal terms returns the term.
fn compensated_sum(values: impl Iterator<Item = f64>) -> f64 {
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for v in values {
        let t = sum + v;
        comp += if sum.abs() >= v.abs() { (sum - t) + v } else { (v - t) + sum };
        sum = t;
    }
    sum + comp
}

fn mse(y: &Tensor, y_hat: &Tensor) -> Result<f64> {
    y.expect_same_shape(y_hat)?;
    if y.is_empty() {
        return Err(Error::invalid("empty image"));
    }
    Ok(compensated_sum(y.data().iter().zip(y_hat.data()).map(|(a, b)| (a - b) * (a - b))) / y.len() as f64)
}

pub fn psnr(y: &Tensor, y_hat: &Tensor, peak: f64) -> Result<Psnr> {
    let m = mse(y, y_hat)?;
    Ok(if m == 0.0 { Psnr::Identical } else { Psnr::Db(10.0 * (peak * peak / m).log10()) })
}

pub fn mae(y: &Tensor, y_hat: &Tensor) -> Result<f64> {
    y.expect_same_shape(y_hat)?;
    if y.is_empty() {
        return Err(Error::invalid("empty image"));
    }
    Ok(compensated_sum(y.data().iter().zip(y_hat.data()).map(|(a, b)| (a - b).abs())) / y.len() as f64)
}

/// Gaussian-window SSIM (11×11, σ = 1.5) over the valid region, averaged
/// over channels.
pub fn ssim(y: &Tensor, y_hat: &Tensor) -> Result<f64> {
    y.expect_same_shape(y_hat)?;
    let (c, h, w) = y.dims3()?;
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::invalid(format!("SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {h}x{w}")));
    }
    let win = gaussian_kernel(SSIM_SIGMA, SSIM_WINDOW)?;
    let kw = win.weights().data();
    let (oh, ow) = (h - SSIM_WINDOW + 1, w - SSIM_WINDOW + 1);
    let mut total = 0.0;
    for ch in 0..c {
        let (a, b) = (y.plane(ch), y_hat.plane(ch));
        let mut sum = 0.0;
        for oy in 0..oh {
            for ox in 0..ow {
                let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for i in 0..SSIM_WINDOW {
                    let row = (oy + i) * w + ox;
                    for j in 0..SSIM_WINDOW {
                        let k = kw[i * SSIM_WINDOW + j];
                        let (va, vb) = (a[row + j], b[row + j]);
                        ma += k * va;
                        mb += k * vb;
                        saa += k * va * va;
                        sbb += k * vb * vb;
                        sab += k * va * vb;
                    }
                }
                let (va, vb, cov) = (saa - ma * ma, sbb - mb * mb, sab - ma * mb);
                sum += ((2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2))
                    / ((ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2));
            }
        }
        total += sum / (oh * ow) as f64;
    }
    Ok(total / c as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageMetrics {
    pub name: String,
    pub psnr: Psnr,
    pub ssim: f64,
    pub mae: f64,
}

impl ImageMetrics {
    pub fn compute(name: impl Into<String>, y: &Tensor, y_hat: &Tensor) -> Result<Self> {
        Ok(Self { name: name.into(), psnr: psnr(y, y_hat, 1.0)?, ssim: ssim(y, y_hat)?, mae: mae(y, y_hat)? })
    }
}

/// Means over a set of rows. PSNR is averaged over rows with a finite value;
/// `identical` counts the others.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanMetrics {
    pub psnr: Psnr,
    pub ssim: f64,
    pub mae: f64,
    pub count: usize,
    pub identical: usize,
}

impl MeanMetrics {
    pub fn of(rows: &[ImageMetrics]) -> Self {
        let n = rows.len().max(1) as f64;
        let finite: Vec<f64> = rows.iter().filter_map(|r| r.psnr.db()).collect();
        let psnr = if finite.is_empty() {
            Psnr::Identical
        } else {
            Psnr::Db(finite.iter().sum::<f64>() / finite.len() as f64)
        };
        Self {
            psnr,
            ssim: rows.iter().map(|r| r.ssim).sum::<f64>() / n,
            mae: rows.iter().map(|r| r.mae).sum::<f64>() / n,
            count: rows.len(),
            identical: rows.len() - finite.len(),
        }
    }
}

/// Per-image rows for a model's outputs, their means and the means of the
/// blurry inputs against the same targets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub intensity_range: String,
    pub rows: Vec<ImageMetrics>,
    pub mean: MeanMetrics,
    pub baseline_rows: Vec<ImageMetrics>,
    pub baseline: MeanMetrics,
    pub config: serde_json::Value,
}

impl MetricsReport {
    pub fn new(rows: Vec<ImageMetrics>, baseline_rows: Vec<ImageMetrics>, config: serde_json::Value) -> Self {
        Self {
            intensity_range: "[0,1]".into(),
            mean: MeanMetrics::of(&rows),
            baseline: MeanMetrics::of(&baseline_rows),
            rows,
            baseline_rows,
            config,
        }
    }

    /// Mean PSNR gain over the blurry input, if both are finite.
    pub fn psnr_gain(&self) -> Option<f64> {
        Some(self.mean.psnr.db()? - self.baseline.psnr.db()?)
    }

    /// One row per image, then `mean` and `blurry_mean` rows. The first line is a
    /// `#` comment stating the intensity range.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["name", "psnr_db", "ssim", "mae"])?;
        for r in &self.rows {
            w.write_record([r.name.clone(), r.psnr.to_string(), format!("{:.6}", r.ssim), format!("{:.6}", r.mae)])?;
        }
        for (label, m) in [("mean", &self.mean), ("blurry_mean", &self.baseline)] {
            w.write_record([label.to_string(), m.psnr.to_string(), format!("{:.6}", m.ssim), format!("{:.6}", m.mae)])?;
        }
        let body = String::from_utf8(w.into_inner().map_err(|e| Error::invalid(e.to_string()))?)
            .map_err(|e| Error::invalid(e.to_string()))?;
        Ok(format!("# metrics on {} intensities\n{body}", self.intensity_range))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Writes `metrics.csv` and `metrics.json` into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (file, body) in [("metrics.csv", self.to_csv()?), ("metrics.json", self.to_json()?)] {
            let path = dir.join(file);
            let mut f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
            f.write_all(body.as_bytes()).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}
