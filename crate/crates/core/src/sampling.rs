//! Bilinear resampling with edge-clamped coordinates.
//!
//! Resizing uses the align-corners mapping `src = dst · (n_in − 1) / (n_out − 1)`,
//! so the first and last samples of every row and column are preserved.

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// One axis of a bilinear lookup: the two neighbours, the blend weight of the
/// upper neighbour, and whether the coordinate was inside `[0, n − 1]`.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Axis<T> {
    pub lo: usize,
    pub hi: usize,
    pub frac: T,
    pub inside: bool,
}

#[inline]
pub(crate) fn axis<T: Real>(coord: T, n: usize) -> Axis<T> {
    let max = T::c((n - 1) as f64);
    let inside = coord >= T::zero() && coord <= max;
    let c = coord.max(T::zero()).min(max);
    let lo = c.floor();
    let lo_i = lo.to_usize().unwrap_or(0).min(n - 1);
    let hi_i = (lo_i + 1).min(n - 1);
    Axis { lo: lo_i, hi: hi_i, frac: c - lo, inside }
}

/// Mirror index for reflect padding (`…2 1 0 1 2…`); repeats the single row when `n == 1`.
#[inline]
pub(crate) fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    (if m < n as isize { m } else { period - m }) as usize
}

/// Bilinear value of a row-major `h × w` plane at fractional `(y, x)`.
/// Coordinates outside the plane are clamped to the border.
pub fn sample_bilinear<T: Real>(plane: &[T], h: usize, w: usize, y: T, x: T) -> T {
    let ay = axis(y, h);
    let ax = axis(x, w);
    let one = T::one();
    let top = plane[ay.lo * w + ax.lo] * (one - ax.frac) + plane[ay.lo * w + ax.hi] * ax.frac;
    let bottom = plane[ay.hi * w + ax.lo] * (one - ax.frac) + plane[ay.hi * w + ax.hi] * ax.frac;
    top * (one - ay.frac) + bottom * ay.frac
}

fn source_coord(dst: usize, n_in: usize, n_out: usize) -> f64 {
    if n_out == 1 {
        (n_in - 1) as f64 / 2.0
    } else {
        dst as f64 * (n_in - 1) as f64 / (n_out - 1) as f64
    }
}

/// Resizes every channel of a `(C, H, W)` tensor to `(C, out_h, out_w)`.
pub fn resize_bilinear<T: Real>(img: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    let (c, h, w) = img.dims3()?;
    if h == 0 || w == 0 || out_h == 0 || out_w == 0 {
        return Err(Error::invalid("zero-extent resize"));
    }
    let ys: Vec<Axis<T>> = (0..out_h).map(|i| axis(T::c(source_coord(i, h, out_h)), h)).collect();
    let xs: Vec<Axis<T>> = (0..out_w).map(|j| axis(T::c(source_coord(j, w, out_w)), w)).collect();
    let one = T::one();
    let mut out = Vec::with_capacity(c * out_h * out_w);
    for ch in 0..c {
        let p = img.plane(ch);
        for ay in &ys {
            for ax in &xs {
                let top = p[ay.lo * w + ax.lo] * (one - ax.frac) + p[ay.lo * w + ax.hi] * ax.frac;
                let bot = p[ay.hi * w + ax.lo] * (one - ax.frac) + p[ay.hi * w + ax.hi] * ax.frac;
                out.push(top * (one - ay.frac) + bot * ay.frac);
            }
        }
    }
    Tensor::new(vec![c, out_h, out_w], out)
}

/// Adjoint of [`resize_bilinear`]: scatters an output-sized gradient back onto the input grid.
pub(crate) fn resize_bilinear_adjoint<T: Real>(
    grad: &[T],
    c: usize,
    h: usize,
    w: usize,
    out_h: usize,
    out_w: usize,
) -> Vec<T> {
    let ys: Vec<Axis<T>> = (0..out_h).map(|i| axis(T::c(source_coord(i, h, out_h)), h)).collect();
    let xs: Vec<Axis<T>> = (0..out_w).map(|j| axis(T::c(source_coord(j, w, out_w)), w)).collect();
    let one = T::one();
    let mut out = vec![T::zero(); c * h * w];
    for ch in 0..c {
        let g = &grad[ch * out_h * out_w..(ch + 1) * out_h * out_w];
        let dst = &mut out[ch * h * w..(ch + 1) * h * w];
        for (i, ay) in ys.iter().enumerate() {
            for (j, ax) in xs.iter().enumerate() {
                let v = g[i * out_w + j];
                let vt = v * (one - ay.frac);
                let vb = v * ay.frac;
                dst[ay.lo * w + ax.lo] += vt * (one - ax.frac);
                dst[ay.lo * w + ax.hi] += vt * ax.frac;
                dst[ay.hi * w + ax.lo] += vb * (one - ax.frac);
                dst[ay.hi * w + ax.hi] += vb * ax.frac;
            }
        }
    }
    out
}

/// Target extents of [`resize_half`]: odd extents are first reflect-padded by one.
pub fn half_extent(n: usize) -> usize {
    (n + n % 2) / 2
}

/// Halves both spatial extents. Odd extents gain one reflected row/column first.
pub fn resize_half<T: Real>(img: &Tensor<T>) -> Result<Tensor<T>> {
    let (c, h, w) = img.dims3()?;
    if h == 0 || w == 0 {
        return Err(Error::invalid("zero-extent image"));
    }
    let padded = if h % 2 == 1 || w % 2 == 1 { pad_to_even(img, c, h, w) } else { img.clone() };
    let (_, ph, pw) = padded.dims3()?;
    resize_bilinear(&padded, ph / 2, pw / 2)
}

fn pad_to_even<T: Real>(img: &Tensor<T>, c: usize, h: usize, w: usize) -> Tensor<T> {
    let (ph, pw) = (h + h % 2, w + w % 2);
    let mut out = Vec::with_capacity(c * ph * pw);
    for ch in 0..c {
        let p = img.plane(ch);
        for y in 0..ph {
            let sy = reflect_index(y as isize, h);
            for x in 0..pw {
                out.push(p[sy * w + reflect_index(x as isize, w)]);
            }
        }
    }
    Tensor::new(vec![c, ph, pw], out).expect("padded shape")
}

/// Doubles both spatial extents.
pub fn resize_double<T: Real>(img: &Tensor<T>) -> Result<Tensor<T>> {
    let (_, h, w) = img.dims3()?;
    if h == 0 || w == 0 {
        return Err(Error::invalid("zero-extent image"));
    }
    resize_bilinear(img, 2 * h, 2 * w)
}
