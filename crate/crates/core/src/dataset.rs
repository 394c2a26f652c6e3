//! Seeded synthetic blurry/sharp pairs and their on-disk layout.
//!
//! Directory layout: `NNNN_sharp.png`, `NNNN_blur.png` (8-bit RGB),
//! `NNNN_radius.fdkt` (raw tensor, `H × W`) and `manifest.json`.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::blur::{blur_varying, RadiusMap};
use crate::error::{Error, Result};
use crate::io::{read_fdkt, read_png, write_fdkt, write_png};
use crate::sampling::resize_bilinear;
use crate::tensor::Tensor;

/// Radius maps are snapped to this grid so the per-radius kernel cache stays small.
pub const RADIUS_QUANTUM: f64 = 1.0 / 32.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub count: usize,
    /// Square patch side in pixels.
    pub size: usize,
    pub radius_min: f64,
    pub radius_max: f64,
    pub noise_sigma: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self { seed: 0, count: 20, size: 96, radius_min: 1.0, radius_max: 4.0, noise_sigma: 0.002 }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.radius_min >= 0.0) || self.radius_min > self.radius_max {
            return Err(Error::invalid(format!(
                "invalid radius range [{}, {}]",
                self.radius_min, self.radius_max
            )));
        }
        if self.size < 8 {
            return Err(Error::invalid("patch size must be at least 8"));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::invalid("noise sigma must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SamplePair {
    pub sharp: Tensor,
    pub blurry: Tensor,
    pub radius: RadiusMap,
    pub noise_sigma: f64,
}

/// Independent per-sample seed (SplitMix64 finalizer over seed and index).
pub fn sample_seed(seed: u64, index: usize) -> u64 {
    let mut z = seed ^ (index as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn synth_dataset(cfg: &SynthConfig) -> Result<Vec<SamplePair>> {
    cfg.validate()?;
    (0..cfg.count).map(|i| synth_pair(cfg, i)).collect()
}

pub fn synth_pair(cfg: &SynthConfig, index: usize) -> Result<SamplePair> {
    let mut rng = ChaCha8Rng::seed_from_u64(sample_seed(cfg.seed, index));
    let sharp = sharp_image(&mut rng, cfg.size)?;
    let radius = radius_field(&mut rng, cfg.size, cfg.radius_min, cfg.radius_max)?;
    let mut blurry = blur_varying(&sharp, &radius)?;
    if cfg.noise_sigma > 0.0 {
        let noise = Normal::new(0.0, cfg.noise_sigma).map_err(|e| Error::invalid(e.to_string()))?;
        for v in blurry.data_mut() {
            *v += noise.sample(&mut rng);
        }
    }
    let blurry = blurry.clamp(0.0, 1.0);
    Ok(SamplePair { sharp, blurry, radius, noise_sigma: cfg.noise_sigma })
}

fn random_color(rng: &mut ChaCha8Rng) -> [f64; 3] {
    [rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>()]
}

/// Procedural sharp content: gradient background, filtered noise texture,
/// rectangles, ellipses and text-like strokes.
fn sharp_image(rng: &mut ChaCha8Rng, size: usize) -> Result<Tensor> {
    let n = size;
    let (c0, c1) = (random_color(rng), random_color(rng));
    let angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let (ca, sa) = (angle.cos(), angle.sin());
    let mut img = Tensor::zeros(&[3, n, n]);
    for y in 0..n {
        for x in 0..n {
            let t = (((x as f64 / n as f64 - 0.5) * ca + (y as f64 / n as f64 - 0.5) * sa) + 0.5).clamp(0.0, 1.0);
            for ch in 0..3 {
                img.plane_mut(ch)[y * n + x] = c0[ch] * (1.0 - t) + c1[ch] * t;
            }
        }
    }

    // low-frequency noise texture: a coarse random grid upsampled bilinearly
    let grid = rng.random_range(4..12usize);
    let coarse = Tensor::from_fn(&[3, grid, grid], |_| rng.random_range(-1.0..1.0));
    let texture = resize_bilinear(&coarse, n, n)?;
    let amp: f64 = rng.random_range(0.05..0.25);
    for (v, t) in img.data_mut().iter_mut().zip(texture.data()) {
        *v += amp * t;
    }

    for _ in 0..rng.random_range(3..8) {
        let color = random_color(rng);
        let (w, h) = (rng.random_range(n / 10..n / 2), rng.random_range(n / 10..n / 2));
        let (x0, y0) = (rng.random_range(0..n - w), rng.random_range(0..n - h));
        paint(&mut img, n, color, |x, y| x >= x0 && x < x0 + w && y >= y0 && y < y0 + h);
    }

    for _ in 0..rng.random_range(2..6) {
        let color = random_color(rng);
        let (cx, cy) = (rng.random_range(0.0..n as f64), rng.random_range(0.0..n as f64));
        let (rx, ry) = (rng.random_range(n as f64 / 20.0..n as f64 / 4.0), rng.random_range(n as f64 / 20.0..n as f64 / 4.0));
        let th: f64 = rng.random_range(0.0..std::f64::consts::PI);
        let (ct, st) = (th.cos(), th.sin());
        paint(&mut img, n, color, |x, y| {
            let (dx, dy) = (x as f64 - cx, y as f64 - cy);
            let u = (dx * ct + dy * st) / rx;
            let v = (-dx * st + dy * ct) / ry;
            u * u + v * v <= 1.0
        });
    }

    // text-like strokes: short bars along a few baselines
    for _ in 0..rng.random_range(1..4) {
        let color = if rng.random::<bool>() { [0.05; 3] } else { [0.95; 3] };
        let base_y = rng.random_range(n / 8..n - n / 8);
        let glyph_h = rng.random_range(4..(n / 6).max(5));
        let stroke = rng.random_range(1..3usize);
        let mut x = rng.random_range(0..n / 3);
        while x + 4 < n {
            let kind = rng.random_range(0..3);
            let width = rng.random_range(3..7usize);
            paint(&mut img, n, color, |px, py| {
                let inside_y = py + glyph_h >= base_y && py <= base_y;
                match kind {
                    0 => inside_y && px >= x && px < x + stroke,
                    1 => (py == base_y || py + glyph_h == base_y) && px >= x && px < x + width,
                    _ => {
                        inside_y && {
                            let t = (base_y - py) as f64 / glyph_h as f64;
                            let cxp = x as f64 + t * width as f64;
                            (px as f64 - cxp).abs() < stroke as f64 * 0.75
                        }
                    }
                }
            });
            x += width + rng.random_range(1..4usize);
            if rng.random::<f64>() < 0.15 {
                x += 6;
            }
        }
    }
    Ok(img.clamp(0.0, 1.0))
}

fn paint(img: &mut Tensor, n: usize, color: [f64; 3], inside: impl Fn(usize, usize) -> bool) {
    for y in 0..n {
        for x in 0..n {
            if inside(x, y) {
                for (ch, &c) in color.iter().enumerate() {
                    img.plane_mut(ch)[y * n + x] = c;
                }
            }
        }
    }
}

fn quantize(r: f64, lo: f64, hi: f64) -> f64 {
    ((r.clamp(lo, hi) / RADIUS_QUANTUM).round() * RADIUS_QUANTUM).clamp(lo, hi)
}

/// Region-wise constant or smoothly ramped radius field.
fn radius_field(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Result<RadiusMap> {
    let draw = |rng: &mut ChaCha8Rng| if hi > lo { rng.random_range(lo..=hi) } else { lo };
    let (r0, r1) = (draw(rng), draw(rng));
    let kind = rng.random_range(0..4);
    let seam = rng.random_range(n / 4..=3 * n / 4);
    let vertical = rng.random::<bool>();
    let angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let (cx, cy) = (rng.random_range(0.0..n as f64), rng.random_range(0.0..n as f64));
    let field = Tensor::from_fn(&[n, n], |i| {
        let (y, x) = (i / n, i % n);
        let r = match kind {
            0 => r0,
            1 => {
                let pos = if vertical { x } else { y };
                if pos < seam {
                    r0
                } else {
                    r1
                }
            }
            2 => {
                let t = ((x as f64 / n as f64 - 0.5) * angle.cos() + (y as f64 / n as f64 - 0.5) * angle.sin()) + 0.5;
                r0 + (r1 - r0) * t.clamp(0.0, 1.0)
            }
            _ => {
                let d = ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)).sqrt() / n as f64;
                r0 + (r1 - r0) * (d / 0.7).clamp(0.0, 1.0)
            }
        };
        quantize(r, lo, hi)
    });
    RadiusMap::new(field)
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    format: String,
    config: SynthConfig,
}

/// Generates the dataset and writes it to `dir` (created if missing).
pub fn write_dataset(dir: impl AsRef<Path>, cfg: &SynthConfig) -> Result<Vec<SamplePair>> {
    let dir = dir.as_ref();
    let pairs = synth_dataset(cfg)?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (i, p) in pairs.iter().enumerate() {
        write_png(dir.join(format!("{i:04}_sharp.png")), &p.sharp)?;
        write_png(dir.join(format!("{i:04}_blur.png")), &p.blurry)?;
        write_fdkt(dir.join(format!("{i:04}_radius.fdkt")), p.radius.as_tensor())?;
    }
    let manifest = Manifest { format: "fdikp-synth-1".into(), config: cfg.clone() };
    let path = dir.join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))?;
    Ok(pairs)
}

/// A pair as read back from disk (8-bit quantized images).
#[derive(Clone, Debug)]
pub struct LoadedPair {
    pub name: String,
    pub sharp: Tensor,
    pub blurry: Tensor,
}

pub fn read_manifest(dir: impl AsRef<Path>) -> Result<SynthConfig> {
    let path = dir.as_ref().join("manifest.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let m: Manifest = serde_json::from_str(&text)?;
    Ok(m.config)
}

/// Loads every `NNNN_sharp.png` / `NNNN_blur.png` pair in index order.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Vec<LoadedPair>> {
    let dir = dir.as_ref();
    let cfg = read_manifest(dir)?;
    (0..cfg.count)
        .map(|i| {
            Ok(LoadedPair {
                name: format!("{i:04}"),
                sharp: read_png(dir.join(format!("{i:04}_sharp.png")))?,
                blurry: read_png(dir.join(format!("{i:04}_blur.png")))?,
            })
        })
        .collect()
}

pub fn load_radius(dir: impl AsRef<Path>, index: usize) -> Result<RadiusMap> {
    let t = read_fdkt(dir.as_ref().join(format!("{index:04}_radius.fdkt")))?;
    RadiusMap::new(t.cast())
}
