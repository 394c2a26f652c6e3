//! Forward and adjoint kernels behind the differentiable operators.

use crate::sampling::{axis, Axis};
use crate::tensor::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeometry {
    pub fn out_h(&self) -> usize {
        (self.h + 2 * self.pad - self.kh) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.w + 2 * self.pad - self.kw) / self.stride + 1
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }

    fn rows(&self) -> usize {
        self.cin * self.kh * self.kw
    }
}

/// Unfolds zero-padded patches into a `(cin·kh·kw) × (oh·ow)` matrix.
fn im2col<T: Real>(x: &[T], g: &ConvGeometry) -> Vec<T> {
    let (oh, ow) = (g.out_h(), g.out_w());
    let l = oh * ow;
    let mut cols = vec![T::zero(); g.rows() * l];
    for c in 0..g.cin {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * l..(row + 1) * l];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..ow {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[oy * ow + ox] = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im<T: Real>(cols: &[T], g: &ConvGeometry, dx: &mut [T]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let l = oh * ow;
    for c in 0..g.cin {
        let plane = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &cols[row * l..(row + 1) * l];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..ow {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] += src[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Cross-correlation `(cin, h, w) → (cout, oh, ow)` with zero padding.
pub fn conv2d_forward<T: Real>(x: &[T], weight: &[T], bias: Option<&[T]>, cout: usize, g: &ConvGeometry) -> Vec<T> {
    let l = g.out_h() * g.out_w();
    let k = g.rows();
    let mut out = vec![T::zero(); cout * l];
    if let Some(b) = bias {
        for (o, &bv) in b.iter().enumerate() {
            out[o * l..(o + 1) * l].iter_mut().for_each(|v| *v = bv);
        }
    }
    let beta = if bias.is_some() { T::one() } else { T::zero() };
    if g.is_pointwise() {
        T::gemm(cout, k, l, T::one(), weight, k as isize, 1, x, l as isize, 1, beta, &mut out, l as isize, 1);
    } else {
        let cols = im2col(x, g);
        T::gemm(cout, k, l, T::one(), weight, k as isize, 1, &cols, l as isize, 1, beta, &mut out, l as isize, 1);
    }
    out
}

/// Returns `(dx, dweight, dbias)` for [`conv2d_forward`].
pub fn conv2d_backward<T: Real>(
    x: &[T],
    weight: &[T],
    grad: &[T],
    cout: usize,
    g: &ConvGeometry,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let l = g.out_h() * g.out_w();
    let k = g.rows();
    let mut dw = vec![T::zero(); cout * k];
    let db: Vec<T> = (0..cout).map(|o| grad[o * l..(o + 1) * l].iter().copied().sum()).collect();
    let mut dx = vec![T::zero(); g.cin * g.h * g.w];
    if g.is_pointwise() {
        // dW = G · Xᵀ, dX = Wᵀ · G
        T::gemm(cout, l, k, T::one(), grad, l as isize, 1, x, 1, l as isize, T::zero(), &mut dw, k as isize, 1);
        T::gemm(k, cout, l, T::one(), weight, 1, k as isize, grad, l as isize, 1, T::zero(), &mut dx, l as isize, 1);
    } else {
        let cols = im2col(x, g);
        T::gemm(cout, l, k, T::one(), grad, l as isize, 1, &cols, 1, l as isize, T::zero(), &mut dw, k as isize, 1);
        let mut dcols = vec![T::zero(); k * l];
        T::gemm(k, cout, l, T::one(), weight, 1, k as isize, grad, l as isize, 1, T::zero(), &mut dcols, l as isize, 1);
        col2im(&dcols, g, &mut dx);
    }
    (dx, dw, db)
}

/// One bilinear lookup: four flat indices and weights, plus the partial
/// derivatives of the blend with respect to the row and column coordinate.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Lookup<T> {
    idx: [usize; 4],
    wt: [T; 4],
    ay: Axis<T>,
    ax: Axis<T>,
}

fn lookup<T: Real>(y: T, x: T, h: usize, w: usize) -> Lookup<T> {
    let ay = axis(y, h);
    let ax = axis(x, w);
    let one = T::one();
    Lookup {
        idx: [ay.lo * w + ax.lo, ay.lo * w + ax.hi, ay.hi * w + ax.lo, ay.hi * w + ax.hi],
        wt: [
            (one - ay.frac) * (one - ax.frac),
            (one - ay.frac) * ax.frac,
            ay.frac * (one - ax.frac),
            ay.frac * ax.frac,
        ],
        ay,
        ax,
    }
}

impl<T: Real> Lookup<T> {
    #[inline]
    fn value(&self, p: &[T]) -> T {
        self.wt[0] * p[self.idx[0]] + self.wt[1] * p[self.idx[1]] + self.wt[2] * p[self.idx[2]] + self.wt[3] * p[self.idx[3]]
    }

    /// (∂/∂y, ∂/∂x) of the sampled value; zero along an axis whose coordinate was clamped.
    #[inline]
    fn slopes(&self, p: &[T]) -> (T, T) {
        let one = T::one();
        let (v00, v01, v10, v11) = (p[self.idx[0]], p[self.idx[1]], p[self.idx[2]], p[self.idx[3]]);
        let dy = if self.ay.inside {
            (one - self.ax.frac) * (v10 - v00) + self.ax.frac * (v11 - v01)
        } else {
            T::zero()
        };
        let dx = if self.ax.inside {
            (one - self.ay.frac) * (v01 - v00) + self.ay.frac * (v11 - v10)
        } else {
            T::zero()
        };
        (dy, dx)
    }
}

/// Sampling pattern of position-adaptive convolution: for every pixel `p` and
/// grid offset `Δ` the lookup at `p + Δ·D(p)`.
pub struct PacGrid<T> {
    pub h: usize,
    pub w: usize,
    pub ksize: usize,
    lookups: Vec<Lookup<T>>,
}

impl<T: Real> PacGrid<T> {
    pub fn new(dmap: &[T], h: usize, w: usize, ksize: usize) -> Self {
        let r = (ksize / 2) as isize;
        let taps = ksize * ksize;
        let mut lookups = Vec::with_capacity(taps * h * w);
        for t in 0..taps {
            let di = T::c(((t / ksize) as isize - r) as f64);
            let dj = T::c(((t % ksize) as isize - r) as f64);
            for y in 0..h {
                for x in 0..w {
                    let d = dmap[y * w + x];
                    lookups.push(lookup(T::c(y as f64) + di * d, T::c(x as f64) + dj * d, h, w));
                }
            }
        }
        Self { h, w, ksize, lookups }
    }

    fn taps(&self) -> usize {
        self.ksize * self.ksize
    }

    /// `(taps, h·w)` matrix of samples of one plane.
    fn gather(&self, plane: &[T]) -> Vec<T> {
        self.lookups.iter().map(|l| l.value(plane)).collect()
    }
}

/// `out[n·C + c](p) = Σ_t k[n][t] · img[c](p + Δ_t·D(p))`.
pub fn pac_forward<T: Real>(img: &[T], c: usize, kernels: &[T], n: usize, grid: &PacGrid<T>) -> Vec<T> {
    let hw = grid.h * grid.w;
    let taps = grid.taps();
    let mut out = vec![T::zero(); n * c * hw];
    for ch in 0..c {
        let samples = grid.gather(&img[ch * hw..(ch + 1) * hw]);
        // rows n·C + ch for every n: stride C·hw between kernels
        T::gemm(
            n,
            taps,
            hw,
            T::one(),
            kernels,
            taps as isize,
            1,
            &samples,
            hw as isize,
            1,
            T::zero(),
            &mut out[ch * hw..],
            (c * hw) as isize,
            1,
        );
    }
    out
}

/// Returns `(dimg, dkernels, ddmap)` for [`pac_forward`].
pub fn pac_backward<T: Real>(
    img: &[T],
    c: usize,
    kernels: &[T],
    n: usize,
    grid: &PacGrid<T>,
    grad: &[T],
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let hw = grid.h * grid.w;
    let taps = grid.taps();
    let r = (grid.ksize / 2) as isize;
    let mut dimg = vec![T::zero(); c * hw];
    let mut dk = vec![T::zero(); n * taps];
    let mut dd = vec![T::zero(); hw];
    let mut dsamples = vec![T::zero(); taps * hw];
    for ch in 0..c {
        let plane = &img[ch * hw..(ch + 1) * hw];
        let samples = grid.gather(plane);
        let g = &grad[ch * hw..];
        // dK += G_ch (n×hw, row stride C·hw) · Sᵀ
        T::gemm(n, hw, taps, T::one(), g, (c * hw) as isize, 1, &samples, 1, hw as isize, T::one(), &mut dk, taps as isize, 1);
        // dS = Kᵀ · G_ch
        T::gemm(taps, n, hw, T::one(), kernels, 1, taps as isize, g, (c * hw) as isize, 1, T::zero(), &mut dsamples, hw as isize, 1);
        let dplane = &mut dimg[ch * hw..(ch + 1) * hw];
        for t in 0..taps {
            let di = T::c(((t / grid.ksize) as isize - r) as f64);
            let dj = T::c(((t % grid.ksize) as isize - r) as f64);
            for p in 0..hw {
                let l = &grid.lookups[t * hw + p];
                let gs = dsamples[t * hw + p];
                for q in 0..4 {
                    dplane[l.idx[q]] += gs * l.wt[q];
                }
                let (sy, sx) = l.slopes(plane);
                dd[p] += gs * (sy * di + sx * dj);
            }
        }
    }
    (dimg, dk, dd)
}

/// Per-window single-head attention on `(c, h, w)` maps with `h`, `w` divisible by `win`.
pub fn window_attention_forward<T: Real>(q: &[T], k: &[T], v: &[T], c: usize, h: usize, w: usize, win: usize) -> Vec<T> {
    let mut out = vec![T::zero(); c * h * w];
    let scale = T::one() / T::c(c as f64).sqrt();
    for_each_window(h, w, win, |pos| {
        let (qm, km, vm) = (tokens(q, c, h * w, pos), tokens(k, c, h * w, pos), tokens(v, c, h * w, pos));
        let p = attention_probs(&qm, &km, c, pos.len(), scale);
        let t = pos.len();
        let mut o = vec![T::zero(); t * c];
        T::gemm(t, t, c, T::one(), &p, t as isize, 1, &vm, c as isize, 1, T::zero(), &mut o, c as isize, 1);
        scatter_tokens(&o, &mut out, c, h * w, pos, false);
    });
    out
}

#[allow(clippy::too_many_arguments)]
pub fn window_attention_backward<T: Real>(
    q: &[T],
    k: &[T],
    v: &[T],
    grad: &[T],
    c: usize,
    h: usize,
    w: usize,
    win: usize,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let n = c * h * w;
    let (mut dq, mut dk, mut dv) = (vec![T::zero(); n], vec![T::zero(); n], vec![T::zero(); n]);
    let scale = T::one() / T::c(c as f64).sqrt();
    for_each_window(h, w, win, |pos| {
        let t = pos.len();
        let (qm, km, vm) = (tokens(q, c, h * w, pos), tokens(k, c, h * w, pos), tokens(v, c, h * w, pos));
        let gm = tokens(grad, c, h * w, pos);
        let p = attention_probs(&qm, &km, c, t, scale);
        // dV = Pᵀ G ; dP = G Vᵀ
        let mut dvm = vec![T::zero(); t * c];
        T::gemm(t, t, c, T::one(), &p, 1, t as isize, &gm, c as isize, 1, T::zero(), &mut dvm, c as isize, 1);
        let mut dp = vec![T::zero(); t * t];
        T::gemm(t, c, t, T::one(), &gm, c as isize, 1, &vm, 1, c as isize, T::zero(), &mut dp, t as isize, 1);
        // softmax adjoint, then the score scale
        for i in 0..t {
            let row = &mut dp[i * t..(i + 1) * t];
            let prow = &p[i * t..(i + 1) * t];
            let dot: T = row.iter().zip(prow).map(|(&a, &b)| a * b).sum();
            for j in 0..t {
                row[j] = prow[j] * (row[j] - dot) * scale;
            }
        }
        let mut dqm = vec![T::zero(); t * c];
        T::gemm(t, t, c, T::one(), &dp, t as isize, 1, &km, c as isize, 1, T::zero(), &mut dqm, c as isize, 1);
        let mut dkm = vec![T::zero(); t * c];
        T::gemm(t, t, c, T::one(), &dp, 1, t as isize, &qm, c as isize, 1, T::zero(), &mut dkm, c as isize, 1);
        scatter_tokens(&dqm, &mut dq, c, h * w, pos, true);
        scatter_tokens(&dkm, &mut dk, c, h * w, pos, true);
        scatter_tokens(&dvm, &mut dv, c, h * w, pos, true);
    });
    (dq, dk, dv)
}

fn for_each_window(h: usize, w: usize, win: usize, mut f: impl FnMut(&[usize])) {
    let mut pos = Vec::with_capacity(win * win);
    for wy in (0..h).step_by(win) {
        for wx in (0..w).step_by(win) {
            pos.clear();
            for y in wy..(wy + win).min(h) {
                for x in wx..(wx + win).min(w) {
                    pos.push(y * w + x);
                }
            }
            f(&pos);
        }
    }
}

/// Gathers `(tokens × c)` from a channel-major map.
fn tokens<T: Real>(x: &[T], c: usize, hw: usize, pos: &[usize]) -> Vec<T> {
    let mut m = Vec::with_capacity(pos.len() * c);
    for &p in pos {
        for ch in 0..c {
            m.push(x[ch * hw + p]);
        }
    }
    m
}

fn scatter_tokens<T: Real>(m: &[T], dst: &mut [T], c: usize, hw: usize, pos: &[usize], accumulate: bool) {
    for (i, &p) in pos.iter().enumerate() {
        for ch in 0..c {
            if accumulate {
                dst[ch * hw + p] += m[i * c + ch];
            } else {
                dst[ch * hw + p] = m[i * c + ch];
            }
        }
    }
}

fn attention_probs<T: Real>(qm: &[T], km: &[T], c: usize, t: usize, scale: T) -> Vec<T> {
    let mut s = vec![T::zero(); t * t];
    T::gemm(t, c, t, scale, qm, c as isize, 1, km, 1, c as isize, T::zero(), &mut s, t as isize, 1);
    for row in s.chunks_exact_mut(t) {
        softmax_in_place(row);
    }
    s
}

pub fn softmax_in_place<T: Real>(row: &mut [T]) {
    let m = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut total = T::zero();
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v = *v / total;
    }
}

/// Bin boundaries of adaptive average pooling (`floor(i·n/m)` to `ceil((i+1)·n/m)`).
pub fn adaptive_bins(n: usize, m: usize) -> Vec<(usize, usize)> {
    (0..m).map(|i| (i * n / m, ((i + 1) * n).div_ceil(m))).collect()
}

pub fn adaptive_pool_forward<T: Real>(x: &[T], c: usize, h: usize, w: usize, oh: usize, ow: usize) -> Vec<T> {
    let (ry, rx) = (adaptive_bins(h, oh), adaptive_bins(w, ow));
    let mut out = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        let p = &x[ch * h * w..(ch + 1) * h * w];
        for &(y0, y1) in &ry {
            for &(x0, x1) in &rx {
                let mut acc = T::zero();
                for y in y0..y1 {
                    for xx in x0..x1 {
                        acc += p[y * w + xx];
                    }
                }
                out.push(acc / T::c(((y1 - y0) * (x1 - x0)) as f64));
            }
        }
    }
    out
}

pub fn adaptive_pool_backward<T: Real>(grad: &[T], c: usize, h: usize, w: usize, oh: usize, ow: usize) -> Vec<T> {
    let (ry, rx) = (adaptive_bins(h, oh), adaptive_bins(w, ow));
    let mut dx = vec![T::zero(); c * h * w];
    for ch in 0..c {
        let d = &mut dx[ch * h * w..(ch + 1) * h * w];
        for (i, &(y0, y1)) in ry.iter().enumerate() {
            for (j, &(x0, x1)) in rx.iter().enumerate() {
                let g = grad[(ch * oh + i) * ow + j] / T::c(((y1 - y0) * (x1 - x0)) as f64);
                for y in y0..y1 {
                    for xx in x0..x1 {
                        d[y * w + xx] += g;
                    }
                }
            }
        }
    }
    dx
}

/// Mean over the in-bounds `(2r+1)²` neighbourhood of every pixel.
pub fn box_filter_forward<T: Real>(x: &[T], c: usize, h: usize, w: usize, r: usize) -> Vec<T> {
    let mut out = vec![T::zero(); c * h * w];
    for ch in 0..c {
        let p = &x[ch * h * w..(ch + 1) * h * w];
        for y in 0..h {
            let (y0, y1) = (y.saturating_sub(r), (y + r).min(h - 1));
            for xx in 0..w {
                let (x0, x1) = (xx.saturating_sub(r), (xx + r).min(w - 1));
                let mut acc = T::zero();
                for sy in y0..=y1 {
                    for sx in x0..=x1 {
                        acc += p[sy * w + sx];
                    }
                }
                out[ch * h * w + y * w + xx] = acc / T::c(((y1 - y0 + 1) * (x1 - x0 + 1)) as f64);
            }
        }
    }
    out
}

pub fn box_filter_backward<T: Real>(grad: &[T], c: usize, h: usize, w: usize, r: usize) -> Vec<T> {
    let mut dx = vec![T::zero(); c * h * w];
    for ch in 0..c {
        let d = &mut dx[ch * h * w..(ch + 1) * h * w];
        for y in 0..h {
            let (y0, y1) = (y.saturating_sub(r), (y + r).min(h - 1));
            for xx in 0..w {
                let (x0, x1) = (xx.saturating_sub(r), (xx + r).min(w - 1));
                let g = grad[ch * h * w + y * w + xx] / T::c(((y1 - y0 + 1) * (x1 - x0 + 1)) as f64);
                for sy in y0..=y1 {
                    for sx in x0..=x1 {
                        d[sy * w + sx] += g;
                    }
                }
            }
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adaptive_bins_cover_everything() {
        let bins = adaptive_bins(10, 3);
        assert_eq!(bins, vec![(0, 4), (3, 7), (6, 10)]);
        assert_eq!(adaptive_bins(4, 4), vec![(0, 1), (1, 2), (2, 3), (3, 4)]);
    }

    #[test]
    fn pointwise_conv_matches_general_path() {
        let g1 = ConvGeometry { cin: 3, h: 4, w: 5, kh: 1, kw: 1, stride: 1, pad: 0 };
        let x: Vec<f64> = (0..60).map(|i| (i as f64 * 0.3).sin()).collect();
        let wt: Vec<f64> = (0..6).map(|i| i as f64 - 2.5).collect();
        let fast = conv2d_forward(&x, &wt, None, 2, &g1);
        let cols = im2col(&x, &g1);
        let mut slow = vec![0.0; 40];
        for o in 0..2 {
            for l in 0..20 {
                slow[o * 20 + l] = (0..3).map(|c| wt[o * 3 + c] * cols[c * 20 + l]).sum();
            }
        }
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
