//! Raw-tensor files and 8-bit PNG images.
//!
//! Raw-tensor ("FDKT") layout, all integers little-endian:
//!
//! | bytes | content                          |
//! |-------|----------------------------------|
//! | 4     | magic `FDKT`                     |
//! | 1     | version (`1`)                    |
//! | 1     | rank `r`                         |
//! | 4·r   | extents, `u32` each              |
//! | 4·n   | values, `f32`, row-major         |

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use image::{ImageBuffer, Rgb};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

pub const FDKT_MAGIC: &[u8; 4] = b"FDKT";
pub const FDKT_VERSION: u8 = 1;

pub fn encode_fdkt<T: Real>(t: &Tensor<T>) -> Vec<u8> {
    let mut buf = Vec::with_capacity(6 + 4 * t.rank() + 4 * t.len());
    buf.extend_from_slice(FDKT_MAGIC);
    buf.push(FDKT_VERSION);
    buf.push(t.rank() as u8);
    for &e in t.shape() {
        buf.extend_from_slice(&(e as u32).to_le_bytes());
    }
    for v in t.data() {
        buf.extend_from_slice(&(v.f64() as f32).to_le_bytes());
    }
    buf
}

pub fn decode_fdkt(bytes: &[u8]) -> Result<Tensor<f32>> {
    let bad = |m: &str| Error::Format { what: "raw tensor", message: m.to_string() };
    let mut r = bytes;
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
    if &magic != FDKT_MAGIC {
        return Err(bad("bad magic"));
    }
    let mut head = [0u8; 2];
    r.read_exact(&mut head).map_err(|_| bad("truncated header"))?;
    if head[0] != FDKT_VERSION {
        return Err(bad(&format!("unsupported version {}", head[0])));
    }
    let rank = head[1] as usize;
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        shape.push(read_u32(&mut r).ok_or_else(|| bad("truncated extents"))? as usize);
    }
    let n: usize = shape.iter().product();
    if r.len() != 4 * n {
        return Err(bad(&format!("expected {} data bytes, found {}", 4 * n, r.len())));
    }
    let data = r.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
    Tensor::new(shape, data)
}

pub(crate) fn read_u32(r: &mut &[u8]) -> Option<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).ok()?;
    Some(u32::from_le_bytes(b))
}

pub fn write_fdkt<T: Real>(path: impl AsRef<Path>, t: &Tensor<T>) -> Result<()> {
    let path = path.as_ref();
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&encode_fdkt(t)).map_err(|e| Error::io(path, e))
}

pub fn read_fdkt(path: impl AsRef<Path>) -> Result<Tensor<f32>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_fdkt(&bytes)
}

/// Quantizes a `(3, H, W)` or single-plane tensor in `[0, 1]` to 8-bit RGB.
pub fn to_rgb8<T: Real>(img: &Tensor<T>) -> Result<ImageBuffer<Rgb<u8>, Vec<u8>>> {
    let (c, h, w) = img.dims3()?;
    if c != 1 && c != 3 {
        return Err(Error::shape(format!("PNG output needs 1 or 3 channels, got {c}")));
    }
    let q = |v: T| (v.f64().clamp(0.0, 1.0) * 255.0).round() as u8;
    Ok(ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
        let (x, y) = (x as usize, y as usize);
        if c == 1 {
            let v = q(img.at3(0, y, x));
            Rgb([v, v, v])
        } else {
            Rgb([q(img.at3(0, y, x)), q(img.at3(1, y, x)), q(img.at3(2, y, x))])
        }
    }))
}

pub fn write_png<T: Real>(path: impl AsRef<Path>, img: &Tensor<T>) -> Result<()> {
    let path = path.as_ref();
    to_rgb8(img)?
        .save_with_format(path, image::ImageFormat::Png)
        .map_err(|source| Error::Image { path: path.to_path_buf(), source })
}

/// Reads any PNG as a `(3, H, W)` tensor with values `k / 255`.
pub fn read_png(path: impl AsRef<Path>) -> Result<Tensor<f64>> {
    let path = path.as_ref();
    let img = image::open(path)
        .map_err(|source| Error::Image { path: path.to_path_buf(), source })?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut data = vec![0.0; 3 * h * w];
    for (x, y, px) in img.enumerate_pixels() {
        for ch in 0..3 {
            data[(ch * h + y as usize) * w + x as usize] = px[ch] as f64 / 255.0;
        }
    }
    Tensor::new(vec![3, h, w], data)
}

/// Maps a plane onto a blue-to-red heatmap after min/max normalization.
pub fn heatmap<T: Real>(plane: &Tensor<T>) -> Result<Tensor<f64>> {
    let (c, h, w) = plane.dims3()?;
    if c != 1 {
        return Err(Error::shape("heatmap needs a single plane"));
    }
    let (lo, hi) = (plane.min_value().f64(), plane.max_value().f64());
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut out = vec![0.0; 3 * h * w];
    for (i, v) in plane.data().iter().enumerate() {
        let t = (v.f64() - lo) / span;
        out[i] = t;
        out[h * w + i] = 1.0 - (2.0 * t - 1.0).abs();
        out[2 * h * w + i] = 1.0 - t;
    }
    Tensor::new(vec![3, h, w], out)
}
