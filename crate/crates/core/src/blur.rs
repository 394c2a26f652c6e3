//! Defocus point-spread functions and the degradation `x = y ⊗ k`.

use std::collections::HashMap;

use crate::conv::{conv2d_same, Boundary};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Subdivisions per pixel used when integrating disk coverage.
const COVERAGE_STEPS: usize = 256;

/// Nonnegative odd-sized kernel whose weights sum to one.
#[derive(Clone, Debug, PartialEq)]
pub struct BlurKernel {
    size: usize,
    weights: Tensor,
}

impl BlurKernel {
    /// Normalizes `weights` to unit sum. Rejects even sizes, negative or all-zero weights.
    pub fn from_weights(weights: Tensor) -> Result<Self> {
        let (c, h, w) = weights.dims3()?;
        if c != 1 || h != w || h % 2 == 0 {
            return Err(Error::invalid(format!("kernel must be square and odd, got {:?}", weights.shape())));
        }
        if weights.data().iter().any(|&v| v < 0.0 || !v.is_finite()) {
            return Err(Error::invalid("kernel weights must be finite and nonnegative"));
        }
        let s = weights.sum();
        if s <= 0.0 {
            return Err(Error::invalid("kernel weights sum to zero"));
        }
        let weights = weights.map(|v| v / s).reshape(&[h, w])?;
        Ok(Self { size: h, weights })
    }

    pub fn delta() -> Self {
        Self { size: 1, weights: Tensor::full(&[1, 1], 1.0) }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    /// Weights as a `size × size` tensor.
    pub fn weights(&self) -> &Tensor {
        &self.weights
    }

    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.weights.data()[row * self.size + col]
    }
}

/// Area of the unit pixel centred at `(cy, cx)` covered by a disk of `radius` at the origin.
fn pixel_coverage(cy: f64, cx: f64, radius: f64) -> f64 {
    let (y0, y1) = (cy - 0.5, cy + 0.5);
    let (x0, x1) = (cx - 0.5, cx + 0.5);
    if x0 >= radius || y0 >= radius {
        return 0.0;
    }
    let dx = (x1 - x0) / COVERAGE_STEPS as f64;
    let r2 = radius * radius;
    let mut area = 0.0;
    for s in 0..COVERAGE_STEPS {
        let x = x0 + (s as f64 + 0.5) * dx;
        let half = (r2 - x * x).max(0.0).sqrt();
        let len = (y1.min(half) - y0.max(-half)).max(0.0);
        area += len * dx;
    }
    area
}

/// Anti-aliased disk of the given radius (the circle of confusion), extent `2·⌈r⌉ + 1`.
pub fn disk_kernel(radius: f64) -> Result<BlurKernel> {
    if !(radius >= 0.0) || !radius.is_finite() {
        return Err(Error::invalid(format!("disk radius must be finite and >= 0, got {radius}")));
    }
    if radius == 0.0 {
        return Ok(BlurKernel::delta());
    }
    let half = radius.ceil() as usize;
    let size = 2 * half + 1;
    // coverage depends on |dy|, |dx| only, so the kernel is exactly centrosymmetric
    let mut quadrant = vec![0.0; (half + 1) * (half + 1)];
    for dy in 0..=half {
        for dx in 0..=half {
            quadrant[dy * (half + 1) + dx] = pixel_coverage(dy as f64, dx as f64, radius);
        }
    }
    let w = Tensor::from_fn(&[size, size], |i| {
        let dy = (i / size).abs_diff(half);
        let dx = (i % size).abs_diff(half);
        quadrant[dy * (half + 1) + dx]
    });
    BlurKernel::from_weights(w)
}

/// Sampled isotropic Gaussian, normalized to unit sum.
pub fn gaussian_kernel(sigma: f64, size: usize) -> Result<BlurKernel> {
    if !(sigma > 0.0) {
        return Err(Error::invalid(format!("sigma must be positive, got {sigma}")));
    }
    if size.is_multiple_of(2) {
        return Err(Error::invalid(format!("kernel size must be odd, got {size}")));
    }
    let half = (size / 2) as f64;
    let w = Tensor::from_fn(&[size, size], |i| {
        let dy = (i / size) as f64 - half;
        let dx = (i % size) as f64 - half;
        (-(dy * dy + dx * dx) / (2.0 * sigma * sigma)).exp()
    });
    BlurKernel::from_weights(w)
}

/// Uniform blur of every channel with one kernel.
pub fn blur_uniform(img: &Tensor, kernel: &BlurKernel, boundary: Boundary) -> Result<Tensor> {
    conv2d_same(img, kernel.weights(), boundary)
}

/// Per-pixel blur radius in pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct RadiusMap(Tensor);

impl RadiusMap {
    pub fn new(radii: Tensor) -> Result<Self> {
        let (c, h, w) = radii.dims3()?;
        if c != 1 {
            return Err(Error::shape("radius map must be a single plane"));
        }
        if radii.data().iter().any(|&r| !(r >= 0.0) || !r.is_finite()) {
            return Err(Error::invalid("radii must be finite and >= 0"));
        }
        Ok(Self(radii.reshape(&[h, w])?))
    }

    pub fn constant(h: usize, w: usize, radius: f64) -> Result<Self> {
        Self::new(Tensor::full(&[h, w], radius))
    }

    pub fn height(&self) -> usize {
        self.0.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.0.shape()[1]
    }

    pub fn as_tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn max_radius(&self) -> f64 {
        self.0.max_value()
    }
}

/// Spatially varying defocus: every output pixel gathers its neighbourhood with
/// the disk of its own radius. Kernel taps falling outside the image are dropped
/// and the remaining weights renormalized.
pub fn blur_varying(img: &Tensor, radius_map: &RadiusMap) -> Result<Tensor> {
    let (c, h, w) = img.dims3()?;
    if (h, w) != (radius_map.height(), radius_map.width()) {
        return Err(Error::shape(format!(
            "radius map {}x{} vs image {h}x{w}",
            radius_map.height(),
            radius_map.width()
        )));
    }
    let mut cache: HashMap<u64, BlurKernel> = HashMap::new();
    let radii = radius_map.as_tensor().data();
    let mut out = Tensor::zeros(&[c, h, w]);
    for y in 0..h {
        for x in 0..w {
            let r = radii[y * w + x];
            let k = match cache.get(&r.to_bits()) {
                Some(k) => k,
                None => cache.entry(r.to_bits()).or_insert(disk_kernel(r)?),
            };
            let half = (k.size() / 2) as isize;
            let (ylo, yhi) = ((y as isize - half).max(0), (y as isize + half).min(h as isize - 1));
            let (xlo, xhi) = ((x as isize - half).max(0), (x as isize + half).min(w as isize - 1));
            let mut norm = 0.0;
            for sy in ylo..=yhi {
                for sx in xlo..=xhi {
                    norm += k.at((sy - y as isize + half) as usize, (sx - x as isize + half) as usize);
                }
            }
            for ch in 0..c {
                let p = img.plane(ch);
                let mut acc = 0.0;
                for sy in ylo..=yhi {
                    let krow = (sy - y as isize + half) as usize;
                    for sx in xlo..=xhi {
                        acc += k.at(krow, (sx - x as isize + half) as usize) * p[sy as usize * w + sx as usize];
                    }
                }
                out.plane_mut(ch)[y * w + x] = acc / norm;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_radius_is_delta() {
        let k = disk_kernel(0.0).unwrap();
        assert_eq!(k.size(), 1);
        assert_eq!(k.at(0, 0), 1.0);
    }

    #[test]
    fn disk_extent_and_normalization() {
        for r in [0.3, 1.0, 1.5, 2.0, 3.7] {
            let k = disk_kernel(r).unwrap();
            assert_eq!(k.size(), 2 * r.ceil() as usize + 1);
            assert!((k.weights().sum() - 1.0).abs() < 1e-9);
            assert!(k.weights().data().iter().all(|&v| v >= 0.0));
            let n = k.size();
            for i in 0..n {
                for j in 0..n {
                    assert_eq!(k.at(i, j), k.at(n - 1 - i, n - 1 - j));
                }
            }
        }
    }

    #[test]
    fn negative_radius_rejected() {
        assert!(disk_kernel(-0.1).is_err());
        assert!(disk_kernel(f64::NAN).is_err());
    }

    #[test]
    fn gaussian_flat_limit_and_ratio() {
        let k = gaussian_kernel(1e6, 5).unwrap();
        assert!(k.weights().data().iter().all(|&v| (v - 1.0 / 25.0).abs() < 1e-6));
        let k = gaussian_kernel(1.0, 7).unwrap();
        let ratio = k.at(3, 3) / k.at(3, 0);
        assert!((ratio - 4.5f64.exp()).abs() / 4.5f64.exp() < 1e-12);
        assert!(gaussian_kernel(1.0, 4).is_err());
        assert!(gaussian_kernel(0.0, 5).is_err());
    }

    #[test]
    fn zero_radius_map_is_identity() {
        let img = Tensor::from_fn(&[3, 6, 7], |i| (i as f64 * 0.1).sin().abs());
        let out = blur_varying(&img, &RadiusMap::constant(6, 7, 0.0).unwrap()).unwrap();
        assert_eq!(out, img);
    }

    #[test]
    fn radius_map_shape_checked() {
        let img = Tensor::zeros(&[1, 4, 4]);
        assert!(blur_varying(&img, &RadiusMap::constant(4, 5, 1.0).unwrap()).is_err());
    }
}
