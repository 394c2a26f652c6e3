use crate::autodiff::kernels::{self, ConvGeometry, PacGrid};
use crate::autodiff::params::{ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::sampling::{reflect_index, resize_bilinear, resize_bilinear_adjoint};
use crate::spectral::{dft2_in_place, roll};
use crate::tensor::{Real, Tensor};
use num_complex::Complex;
use std::collections::HashMap;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Param { store: u64, id: ParamId },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Affine { x: Var, scale: f64 },
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Log1p(Var),
    Pow { x: Var, p: f64 },
    Abs(Var),
    Sum(Var),
    Mean(Var),
    Conv { x: Var, w: Var, b: Option<Var>, geom: ConvGeometry },
    Softmax { x: Var, group: usize },
    AdaptivePool { x: Var },
    GlobalPool(Var),
    Concat(Vec<Var>),
    Slice { x: Var, start: usize },
    Reshape(Var),
    Resize(Var),
    PadReflect { x: Var, top: usize, left: usize },
    Crop { x: Var, top: usize, left: usize },
    BoxFilter { x: Var, radius: usize },
    MeanChannels(Var),
    ScaleGroups { x: Var, w: Var },
    RenormSum { x: Var, group: usize },
    Fft2 { x: Var, inverse: bool },
    ComplexFromReal(Var),
    RealPart(Var),
    Modulus(Var),
    Angle { x: Var, snapped: Vec<bool> },
    Polar { amp: Var, phase: Var },
    ComplexToChannels(Var),
    ChannelsToComplex(Var),
    Shift { x: Var, dy: usize, dx: usize },
    Pac { img: Var, kernels: Var, dmap: Var },
    WindowAttention { q: Var, k: Var, v: Var, win: usize },
}

impl Op {
    fn tag(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Param { .. } => "param",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Affine { .. } => "affine",
            Op::Relu(_) => "relu",
            Op::Sigmoid(_) => "sigmoid",
            Op::Tanh(_) => "tanh",
            Op::Log1p(_) => "log1p",
            Op::Pow { .. } => "pow",
            Op::Abs(_) => "abs",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::Conv { .. } => "conv2d",
            Op::Softmax { .. } => "softmax",
            Op::AdaptivePool { .. } => "adaptive_avg_pool",
            Op::GlobalPool(_) => "global_avg_pool",
            Op::Concat(_) => "concat",
            Op::Slice { .. } => "slice",
            Op::Reshape(_) => "reshape",
            Op::Resize(_) => "resize",
            Op::PadReflect { .. } => "pad_reflect",
            Op::Crop { .. } => "crop",
            Op::BoxFilter { .. } => "box_filter",
            Op::MeanChannels(_) => "mean_channels",
            Op::ScaleGroups { .. } => "scale_groups",
            Op::RenormSum { .. } => "renorm_sum",
            Op::Fft2 { inverse: false, .. } => "fft2",
            Op::Fft2 { inverse: true, .. } => "ifft2",
            Op::ComplexFromReal(_) => "complex",
            Op::RealPart(_) => "real",
            Op::Modulus(_) => "modulus",
            Op::Angle { .. } => "angle",
            Op::Polar { .. } => "polar",
            Op::ComplexToChannels(_) => "complex_to_channels",
            Op::ChannelsToComplex(_) => "channels_to_complex",
            Op::Shift { .. } => "shift",
            Op::Pac { .. } => "pac",
            Op::WindowAttention { .. } => "window_attention",
        }
    }
}

struct Node<T> {
    op: Op,
    value: Tensor<T>,
}

/// Append-only record of a forward computation. Inputs always precede the
/// nodes that consume them, so reverse insertion order is a valid reverse
/// topological order.
pub struct Graph<T: Real> {
    nodes: Vec<Node<T>>,
    bound: HashMap<(u64, ParamId), Var>,
}

/// Per-node gradients produced by [`Graph::gradients`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }
}

fn complex_dims<T: Real>(t: &Tensor<T>) -> Result<(usize, usize, usize)> {
    match *t.shape() {
        [c, h, w, 2] => Ok((c, h, w)),
        _ => Err(Error::shape(format!("expected a (C, H, W, 2) complex tensor, got {:?}", t.shape()))),
    }
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), bound: HashMap::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn op_tag(&self, v: Var) -> &'static str {
        self.nodes[v.0].op.tag()
    }

    fn push(&mut self, op: Op, value: Tensor<T>) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    fn val(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// A constant input (no gradient is propagated past it).
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.push(Op::Leaf, value)
    }

    /// Binds a parameter; repeated calls for the same id return the same node.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        let key = (store.tag(), id);
        if let Some(&v) = self.bound.get(&key) {
            return v;
        }
        let v = self.push(Op::Param { store: key.0, id }, store.value(id).clone());
        self.bound.insert(key, v);
        v
    }

    fn same_shape(&self, a: Var, b: Var) -> Result<()> {
        self.val(a).expect_same_shape(self.val(b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b)?;
        let v = self.val(a).zip_map(self.val(b), |x, y| x + y)?;
        Ok(self.push(Op::Add(a, b), v))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b)?;
        let v = self.val(a).zip_map(self.val(b), |x, y| x - y)?;
        Ok(self.push(Op::Sub(a, b), v))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b)?;
        let v = self.val(a).zip_map(self.val(b), |x, y| x * y)?;
        Ok(self.push(Op::Mul(a, b), v))
    }

    /// `scale · x + offset`.
    pub fn affine(&mut self, x: Var, scale: f64, offset: f64) -> Var {
        let (s, o) = (T::c(scale), T::c(offset));
        let v = self.val(x).map(|a| a * s + o);
        self.push(Op::Affine { x, scale }, v)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let v = self.val(x).map(|a| a.max(T::zero()));
        self.push(Op::Relu(x), v)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let v = self.val(x).map(|a| T::one() / (T::one() + (-a).exp()));
        self.push(Op::Sigmoid(x), v)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let v = self.val(x).map(|a| a.tanh());
        self.push(Op::Tanh(x), v)
    }

    pub fn log1p(&mut self, x: Var) -> Var {
        let v = self.val(x).map(|a| a.ln_1p());
        self.push(Op::Log1p(x), v)
    }

    /// Elementwise power; integral exponents use repeated multiplication.
    pub fn pow(&mut self, x: Var, p: f64) -> Var {
        let v = if p.fract() == 0.0 {
            self.val(x).map(|a| a.powi(p as i32))
        } else {
            self.val(x).map(|a| a.powf(T::c(p)))
        };
        self.push(Op::Pow { x, p }, v)
    }

    pub fn abs(&mut self, x: Var) -> Var {
        let v = self.val(x).map(|a| a.abs());
        self.push(Op::Abs(x), v)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let v = Tensor::scalar(self.val(x).sum());
        self.push(Op::Sum(x), v)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = Tensor::scalar(self.val(x).mean());
        self.push(Op::Mean(x), v)
    }

    /// Zero-padded cross-correlation. `x: (Cin, H, W)`, `w: (Cout, Cin, kh, kw)`, `b: (Cout)`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let (cin, h, wd) = self.val(x).dims3()?;
        let (cout, wcin, kh, kw) = match *self.shape(w) {
            [a, b, c, d] => (a, b, c, d),
            ref s => return Err(Error::shape(format!("conv weight must be rank 4, got {s:?}"))),
        };
        if wcin != cin {
            return Err(Error::shape(format!("conv expects {wcin} input channels, got {cin}")));
        }
        if let Some(b) = b {
            if self.shape(b) != [cout] {
                return Err(Error::shape(format!("conv bias {:?} vs {cout} outputs", self.shape(b))));
            }
        }
        if stride == 0 || h + 2 * pad < kh || wd + 2 * pad < kw {
            return Err(Error::shape(format!("conv window {kh}x{kw} does not fit {h}x{wd} with pad {pad}")));
        }
        let geom = ConvGeometry { cin, h, w: wd, kh, kw, stride, pad };
        let out = kernels::conv2d_forward(
            self.val(x).data(),
            self.val(w).data(),
            b.map(|b| self.val(b).data()),
            cout,
            &geom,
        );
        let v = Tensor::new(vec![cout, geom.out_h(), geom.out_w()], out)?;
        Ok(self.push(Op::Conv { x, w, b, geom }, v))
    }

    /// Softmax over consecutive groups of `group` values of the flattened tensor.
    pub fn softmax(&mut self, x: Var, group: usize) -> Result<Var> {
        if group == 0 || !self.val(x).len().is_multiple_of(group) {
            return Err(Error::shape(format!("softmax group {group} does not divide {}", self.val(x).len())));
        }
        let mut v = self.val(x).clone();
        for row in v.data_mut().chunks_exact_mut(group) {
            kernels::softmax_in_place(row);
        }
        Ok(self.push(Op::Softmax { x, group }, v))
    }

    pub fn adaptive_avg_pool(&mut self, x: Var, oh: usize, ow: usize) -> Result<Var> {
        let (c, h, w) = self.val(x).dims3()?;
        if oh == 0 || ow == 0 || oh > h || ow > w {
            return Err(Error::shape(format!("cannot pool {h}x{w} to {oh}x{ow}")));
        }
        let out = kernels::adaptive_pool_forward(self.val(x).data(), c, h, w, oh, ow);
        let v = Tensor::new(vec![c, oh, ow], out)?;
        Ok(self.push(Op::AdaptivePool { x }, v))
    }

    /// `(C, H, W) → (C)`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let (c, _, _) = self.val(x).dims3()?;
        let t = self.val(x);
        let v = Tensor::new(vec![c], (0..c).map(|ch| {
            let p = t.plane(ch);
            p.iter().copied().sum::<T>() / T::c(p.len() as f64)
        }).collect())?;
        Ok(self.push(Op::GlobalPool(x), v))
    }

    /// Concatenation along the leading axis.
    pub fn concat(&mut self, xs: &[Var]) -> Result<Var> {
        let first = *xs.first().ok_or_else(|| Error::invalid("concat of nothing"))?;
        let rest = self.shape(first)[1..].to_vec();
        let mut lead = 0;
        let mut data = Vec::new();
        for &x in xs {
            let s = self.shape(x);
            if s.is_empty() || s[1..] != rest[..] {
                return Err(Error::shape(format!("concat {:?} with trailing dims {rest:?}", s)));
            }
            lead += s[0];
            data.extend_from_slice(self.val(x).data());
        }
        let mut shape = vec![lead];
        shape.extend(rest);
        let v = Tensor::new(shape, data)?;
        Ok(self.push(Op::Concat(xs.to_vec()), v))
    }

    /// `x[start..start+len]` along the leading axis.
    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.is_empty() || start + len > s[0] {
            return Err(Error::shape(format!("slice {start}..{} of {s:?}", start + len)));
        }
        let inner: usize = s[1..].iter().product();
        let data = self.val(x).data()[start * inner..(start + len) * inner].to_vec();
        let mut shape = s;
        shape[0] = len;
        let v = Tensor::new(shape, data)?;
        Ok(self.push(Op::Slice { x, start }, v))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let v = self.val(x).clone().reshape(shape)?;
        Ok(self.push(Op::Reshape(x), v))
    }

    /// Align-corners bilinear resize of `(C, H, W)`.
    pub fn resize(&mut self, x: Var, oh: usize, ow: usize) -> Result<Var> {
        let v = resize_bilinear(self.val(x), oh, ow)?;
        Ok(self.push(Op::Resize(x), v))
    }

    pub fn pad_reflect(&mut self, x: Var, top: usize, bottom: usize, left: usize, right: usize) -> Result<Var> {
        let (c, h, w) = self.val(x).dims3()?;
        let (oh, ow) = (h + top + bottom, w + left + right);
        let t = self.val(x);
        let mut out = Vec::with_capacity(c * oh * ow);
        for ch in 0..c {
            let p = t.plane(ch);
            for y in 0..oh {
                let sy = reflect_index(y as isize - top as isize, h);
                for xx in 0..ow {
                    out.push(p[sy * w + reflect_index(xx as isize - left as isize, w)]);
                }
            }
        }
        let v = Tensor::new(vec![c, oh, ow], out)?;
        Ok(self.push(Op::PadReflect { x, top, left }, v))
    }

    pub fn crop(&mut self, x: Var, top: usize, left: usize, oh: usize, ow: usize) -> Result<Var> {
        let (c, h, w) = self.val(x).dims3()?;
        if top + oh > h || left + ow > w {
            return Err(Error::shape(format!("crop {oh}x{ow}+{top}+{left} of {h}x{w}")));
        }
        let t = self.val(x);
        let mut out = Vec::with_capacity(c * oh * ow);
        for ch in 0..c {
            let p = t.plane(ch);
            for y in top..top + oh {
                out.extend_from_slice(&p[y * w + left..y * w + left + ow]);
            }
        }
        let v = Tensor::new(vec![c, oh, ow], out)?;
        Ok(self.push(Op::Crop { x, top, left }, v))
    }

    /// Mean over the clipped `(2r+1)²` window around each pixel.
    pub fn box_filter(&mut self, x: Var, radius: usize) -> Result<Var> {
        let (c, h, w) = self.val(x).dims3()?;
        let out = kernels::box_filter_forward(self.val(x).data(), c, h, w, radius);
        let v = Tensor::new(self.shape(x).to_vec(), out)?;
        Ok(self.push(Op::BoxFilter { x, radius }, v))
    }

    /// `(C, H, W) → (1, H, W)`.
    pub fn mean_channels(&mut self, x: Var) -> Result<Var> {
        let (c, h, w) = self.val(x).dims3()?;
        let t = self.val(x);
        let inv = T::one() / T::c(c as f64);
        let v = Tensor::from_fn(&[1, h, w], |i| (0..c).map(|ch| t.plane(ch)[i]).sum::<T>() * inv);
        Ok(self.push(Op::MeanChannels(x), v))
    }

    /// Multiplies slab `n` of `x` (leading axis) by `w[n]`.
    pub fn scale_groups(&mut self, x: Var, w: Var) -> Result<Var> {
        let n = self.shape(x).first().copied().unwrap_or(0);
        if self.shape(w) != [n] {
            return Err(Error::shape(format!("scale_groups weights {:?} vs {n} groups", self.shape(w))));
        }
        let inner = self.val(x).len() / n.max(1);
        let wv = self.val(w).data().to_vec();
        let mut v = self.val(x).clone();
        for (slab, &s) in v.data_mut().chunks_exact_mut(inner).zip(&wv) {
            slab.iter_mut().for_each(|a| *a *= s);
        }
        Ok(self.push(Op::ScaleGroups { x, w }, v))
    }

    /// Shifts each group of `group` values so the group sums to one.
    pub fn renorm_sum(&mut self, x: Var, group: usize) -> Result<Var> {
        if group == 0 || !self.val(x).len().is_multiple_of(group) {
            return Err(Error::shape("renorm_sum group does not divide tensor"));
        }
        let mut v = self.val(x).clone();
        let n = T::c(group as f64);
        for g in v.data_mut().chunks_exact_mut(group) {
            let shift = (T::one() - g.iter().copied().sum::<T>()) / n;
            g.iter_mut().for_each(|a| *a += shift);
        }
        Ok(self.push(Op::RenormSum { x, group }, v))
    }

    /// Per-channel 2-D DFT of a `(C, H, W, 2)` complex tensor; the inverse is normalized by `1/(H·W)`.
    pub fn fft2(&mut self, x: Var, inverse: bool) -> Result<Var> {
        let (c, h, w) = complex_dims(self.val(x))?;
        let data = dft_planes(self.val(x).data(), c, h, w, inverse, inverse);
        let v = Tensor::new(vec![c, h, w, 2], data)?;
        Ok(self.push(Op::Fft2 { x, inverse }, v))
    }

    /// `(C, H, W) → (C, H, W, 2)` with zero imaginary part.
    pub fn complex(&mut self, x: Var) -> Result<Var> {
        let (c, h, w) = self.val(x).dims3()?;
        let mut data = Vec::with_capacity(2 * c * h * w);
        for &a in self.val(x).data() {
            data.push(a);
            data.push(T::zero());
        }
        let v = Tensor::new(vec![c, h, w, 2], data)?;
        Ok(self.push(Op::ComplexFromReal(x), v))
    }

    pub fn real(&mut self, x: Var) -> Result<Var> {
        let (c, h, w) = complex_dims(self.val(x))?;
        let data = self.val(x).data().chunks_exact(2).map(|z| z[0]).collect();
        let v = Tensor::new(vec![c, h, w], data)?;
        Ok(self.push(Op::RealPart(x), v))
    }

    pub fn modulus(&mut self, x: Var) -> Result<Var> {
        let (c, h, w) = complex_dims(self.val(x))?;
        let data = self.val(x).data().chunks_exact(2).map(|z| z[0].hypot(z[1])).collect();
        let v = Tensor::new(vec![c, h, w], data)?;
        Ok(self.push(Op::Modulus(x), v))
    }

    /// Principal argument, zero at zero modulus. Imaginary parts at the level
    /// of transform round-off (relative to the largest bin of the plane) are
    /// treated as exactly zero so real-valued bins keep a stable phase.
    pub fn angle(&mut self, x: Var) -> Result<Var> {
        let (c, h, w) = complex_dims(self.val(x))?;
        let t = self.val(x).data();
        let hw = h * w;
        let tol_scale = T::epsilon() * T::c(64.0);
        let mut data = Vec::with_capacity(c * hw);
        let mut snapped = Vec::with_capacity(c * hw);
        for ch in 0..c {
            let plane = &t[2 * ch * hw..2 * (ch + 1) * hw];
            let peak = plane.chunks_exact(2).map(|z| z[0].hypot(z[1])).fold(T::zero(), T::max);
            let tol = tol_scale * peak;
            for z in plane.chunks_exact(2) {
                let snap = z[1].abs() <= tol;
                let im = if snap { T::zero() } else { z[1] };
                data.push(if z[0] == T::zero() && im == T::zero() { T::zero() } else { im.atan2(z[0]) });
                snapped.push(snap);
            }
        }
        let v = Tensor::new(vec![c, h, w], data)?;
        Ok(self.push(Op::Angle { x, snapped }, v))
    }

    /// `amp · e^{j·phase}` as a complex tensor.
    pub fn polar(&mut self, amp: Var, phase: Var) -> Result<Var> {
        self.same_shape(amp, phase)?;
        let (c, h, w) = self.val(amp).dims3()?;
        let mut data = Vec::with_capacity(2 * c * h * w);
        for (&a, &p) in self.val(amp).data().iter().zip(self.val(phase).data()) {
            data.push(a * p.cos());
            data.push(a * p.sin());
        }
        let v = Tensor::new(vec![c, h, w, 2], data)?;
        Ok(self.push(Op::Polar { amp, phase }, v))
    }

    /// `(C, H, W, 2) → (2C, H, W)`: real planes first, then imaginary planes.
    pub fn complex_to_channels(&mut self, x: Var) -> Result<Var> {
        let (c, h, w) = complex_dims(self.val(x))?;
        let t = self.val(x).data();
        let hw = h * w;
        let mut data = vec![T::zero(); 2 * c * hw];
        for ch in 0..c {
            for i in 0..hw {
                data[ch * hw + i] = t[2 * (ch * hw + i)];
                data[(c + ch) * hw + i] = t[2 * (ch * hw + i) + 1];
            }
        }
        let v = Tensor::new(vec![2 * c, h, w], data)?;
        Ok(self.push(Op::ComplexToChannels(x), v))
    }

    pub fn channels_to_complex(&mut self, x: Var) -> Result<Var> {
        let (c2, h, w) = self.val(x).dims3()?;
        if c2 % 2 != 0 {
            return Err(Error::shape("channels_to_complex needs an even channel count"));
        }
        let c = c2 / 2;
        let hw = h * w;
        let t = self.val(x).data();
        let mut data = vec![T::zero(); 2 * c * hw];
        for ch in 0..c {
            for i in 0..hw {
                data[2 * (ch * hw + i)] = t[ch * hw + i];
                data[2 * (ch * hw + i) + 1] = t[(c + ch) * hw + i];
            }
        }
        let v = Tensor::new(vec![c, h, w, 2], data)?;
        Ok(self.push(Op::ChannelsToComplex(x), v))
    }

    /// `fftshift` (or its inverse) over the two spatial axes of a real
    /// `(C, H, W)` or complex `(C, H, W, 2)` tensor.
    pub fn fftshift(&mut self, x: Var, inverse: bool) -> Result<Var> {
        let (h, w) = spatial_dims(self.shape(x))?;
        let (dy, dx) = if inverse { (h - h / 2, w - w / 2) } else { (h / 2, w / 2) };
        let v = shift_tensor(self.val(x), dy, dx)?;
        Ok(self.push(Op::Shift { x, dy, dx }, v))
    }

    /// Position-adaptive convolution: `img: (C, H, W)`, `kernels: (N, K, K)`,
    /// `dmap: (1, H, W)`; output `(N·C, H, W)` with plane `n·C + c`.
    pub fn pac(&mut self, img: Var, kernels_var: Var, dmap: Var) -> Result<Var> {
        let (c, h, w) = self.val(img).dims3()?;
        let (n, k, k2) = match *self.shape(kernels_var) {
            [n, k, k2] => (n, k, k2),
            ref s => return Err(Error::shape(format!("PAC kernels must be (N, K, K), got {s:?}"))),
        };
        if k != k2 || k % 2 == 0 {
            return Err(Error::invalid(format!("PAC kernel must be square and odd, got {k}x{k2}")));
        }
        if self.shape(dmap) != [1, h, w] {
            return Err(Error::shape(format!("dilation map {:?} vs image {h}x{w}", self.shape(dmap))));
        }
        let grid = PacGrid::new(self.val(dmap).data(), h, w, k);
        let out = kernels::pac_forward(self.val(img).data(), c, self.val(kernels_var).data(), n, &grid);
        let v = Tensor::new(vec![n * c, h, w], out)?;
        Ok(self.push(Op::Pac { img, kernels: kernels_var, dmap }, v))
    }

    /// Single-head self-attention inside non-overlapping `win × win` windows.
    /// `q`, `k`, `v` are `(C, H, W)` with `H`, `W` multiples of `win`.
    pub fn window_attention(&mut self, q: Var, k: Var, v: Var, win: usize) -> Result<Var> {
        self.same_shape(q, k)?;
        self.same_shape(q, v)?;
        let (c, h, w) = self.val(q).dims3()?;
        if win == 0 || h % win != 0 || w % win != 0 {
            return Err(Error::shape(format!("{h}x{w} is not tiled by {win}x{win} windows")));
        }
        let out = kernels::window_attention_forward(self.val(q).data(), self.val(k).data(), self.val(v).data(), c, h, w, win);
        let val = Tensor::new(vec![c, h, w], out)?;
        Ok(self.push(Op::WindowAttention { q, k, v, win }, val))
    }

    /// Reverse-mode accumulation from a scalar `loss`.
    pub fn gradients(&self, loss: Var) -> Result<Gradients<T>> {
        if self.val(loss).len() != 1 {
            return Err(Error::shape(format!("loss must be scalar, got {:?}", self.shape(loss))));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.shape(loss), T::one()));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.backprop(i, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    /// Runs [`Graph::gradients`] and adds the gradient of every parameter
    /// bound from `store` into it.
    pub fn backward(&self, loss: Var, store: &mut ParamStore<T>) -> Result<()> {
        let grads = self.gradients(loss)?;
        for (i, node) in self.nodes.iter().enumerate().take(loss.0 + 1) {
            if let (Op::Param { store: tag, id }, Some(g)) = (&node.op, &grads.grads[i]) {
                if *tag == store.tag() {
                    store.accumulate_grad(*id, g)?;
                }
            }
        }
        Ok(())
    }

    fn backprop(&self, i: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let node = &self.nodes[i];
        let out = &node.value;
        let gd = g.data();
        let mut acc = |v: Var, d: Vec<T>| accumulate(grads, v, self.shape(v), d);
        match &node.op {
            Op::Leaf | Op::Param { .. } => {}
            Op::Add(a, b) => {
                acc(*a, gd.to_vec());
                acc(*b, gd.to_vec());
            }
            Op::Sub(a, b) => {
                acc(*a, gd.to_vec());
                acc(*b, gd.iter().map(|&v| -v).collect());
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.val(*a).data(), self.val(*b).data());
                acc(*a, gd.iter().zip(bv).map(|(&g, &y)| g * y).collect());
                acc(*b, gd.iter().zip(av).map(|(&g, &x)| g * x).collect());
            }
            Op::Affine { x, scale } => {
                let s = T::c(*scale);
                acc(*x, gd.iter().map(|&g| g * s).collect());
            }
            Op::Relu(x) => {
                let xv = self.val(*x).data();
                acc(*x, gd.iter().zip(xv).map(|(&g, &a)| if a > T::zero() { g } else { T::zero() }).collect());
            }
            Op::Sigmoid(x) => {
                acc(*x, gd.iter().zip(out.data()).map(|(&g, &s)| g * s * (T::one() - s)).collect());
            }
            Op::Tanh(x) => {
                acc(*x, gd.iter().zip(out.data()).map(|(&g, &t)| g * (T::one() - t * t)).collect());
            }
            Op::Log1p(x) => {
                let xv = self.val(*x).data();
                acc(*x, gd.iter().zip(xv).map(|(&g, &a)| g / (T::one() + a)).collect());
            }
            Op::Pow { x, p } => {
                let xv = self.val(*x).data();
                let pt = T::c(*p);
                let d = if *p == 2.0 {
                    gd.iter().zip(xv).map(|(&g, &a)| g * pt * a).collect()
                } else {
                    gd.iter().zip(xv).map(|(&g, &a)| g * pt * a.powf(pt - T::one())).collect()
                };
                acc(*x, d);
            }
            Op::Abs(x) => {
                let xv = self.val(*x).data();
                acc(*x, gd.iter().zip(xv).map(|(&g, &a)| if a > T::zero() { g } else if a < T::zero() { -g } else { T::zero() }).collect());
            }
            Op::Sum(x) => {
                acc(*x, vec![gd[0]; self.val(*x).len()]);
            }
            Op::Mean(x) => {
                let n = self.val(*x).len();
                acc(*x, vec![gd[0] / T::c(n as f64); n]);
            }
            Op::Conv { x, w, b, geom } => {
                let cout = self.shape(*w)[0];
                let (dx, dw, db) = kernels::conv2d_backward(self.val(*x).data(), self.val(*w).data(), gd, cout, geom);
                acc(*x, dx);
                acc(*w, dw);
                if let Some(b) = b {
                    acc(*b, db);
                }
            }
            Op::Softmax { x, group } => {
                let mut d = Vec::with_capacity(gd.len());
                for (gg, yy) in gd.chunks_exact(*group).zip(out.data().chunks_exact(*group)) {
                    let dot: T = gg.iter().zip(yy).map(|(&a, &b)| a * b).sum();
                    d.extend(gg.iter().zip(yy).map(|(&a, &y)| y * (a - dot)));
                }
                acc(*x, d);
            }
            Op::AdaptivePool { x } => {
                let (c, h, w) = self.val(*x).dims3()?;
                let (_, oh, ow) = out.dims3()?;
                acc(*x, kernels::adaptive_pool_backward(gd, c, h, w, oh, ow));
            }
            Op::GlobalPool(x) => {
                let (c, h, w) = self.val(*x).dims3()?;
                let hw = h * w;
                let inv = T::one() / T::c(hw as f64);
                acc(*x, (0..c * hw).map(|i| gd[i / hw] * inv).collect());
            }
            Op::Concat(xs) => {
                let mut off = 0;
                for &x in xs {
                    let n = self.val(x).len();
                    acc(x, gd[off..off + n].to_vec());
                    off += n;
                }
            }
            Op::Slice { x, start } => {
                let xv = self.val(*x);
                let inner: usize = xv.shape()[1..].iter().product();
                let mut d = vec![T::zero(); xv.len()];
                d[start * inner..start * inner + gd.len()].copy_from_slice(gd);
                acc(*x, d);
            }
            Op::Reshape(x) => acc(*x, gd.to_vec()),
            Op::Resize(x) => {
                let (c, h, w) = self.val(*x).dims3()?;
                let (_, oh, ow) = out.dims3()?;
                acc(*x, resize_bilinear_adjoint(gd, c, h, w, oh, ow));
            }
            Op::PadReflect { x, top, left } => {
                let (c, h, w) = self.val(*x).dims3()?;
                let (_, oh, ow) = out.dims3()?;
                let mut d = vec![T::zero(); c * h * w];
                for ch in 0..c {
                    for y in 0..oh {
                        let sy = reflect_index(y as isize - *top as isize, h);
                        for xx in 0..ow {
                            let sx = reflect_index(xx as isize - *left as isize, w);
                            d[(ch * h + sy) * w + sx] += gd[(ch * oh + y) * ow + xx];
                        }
                    }
                }
                acc(*x, d);
            }
            Op::Crop { x, top, left } => {
                let (c, h, w) = self.val(*x).dims3()?;
                let (_, oh, ow) = out.dims3()?;
                let mut d = vec![T::zero(); c * h * w];
                for ch in 0..c {
                    for y in 0..oh {
                        let dst = (ch * h + top + y) * w + left;
                        d[dst..dst + ow].copy_from_slice(&gd[(ch * oh + y) * ow..(ch * oh + y + 1) * ow]);
                    }
                }
                acc(*x, d);
            }
            Op::BoxFilter { x, radius } => {
                let (c, h, w) = self.val(*x).dims3()?;
                acc(*x, kernels::box_filter_backward(gd, c, h, w, *radius));
            }
            Op::MeanChannels(x) => {
                let (c, h, w) = self.val(*x).dims3()?;
                let inv = T::one() / T::c(c as f64);
                acc(*x, (0..c * h * w).map(|i| gd[i % (h * w)] * inv).collect());
            }
            Op::ScaleGroups { x, w } => {
                let xv = self.val(*x).data();
                let wv = self.val(*w).data();
                let inner = xv.len() / wv.len().max(1);
                let mut dx = Vec::with_capacity(xv.len());
                let mut dw = Vec::with_capacity(wv.len());
                for ((gs, xs), &s) in gd.chunks_exact(inner).zip(xv.chunks_exact(inner)).zip(wv) {
                    dx.extend(gs.iter().map(|&a| a * s));
                    dw.push(gs.iter().zip(xs).map(|(&a, &b)| a * b).sum());
                }
                acc(*x, dx);
                acc(*w, dw);
            }
            Op::RenormSum { x, group } => {
                let mut d = Vec::with_capacity(gd.len());
                let n = T::c(*group as f64);
                for gs in gd.chunks_exact(*group) {
                    let m = gs.iter().copied().sum::<T>() / n;
                    d.extend(gs.iter().map(|&a| a - m));
                }
                acc(*x, d);
            }
            Op::Fft2 { x, inverse } => {
                let (c, h, w) = complex_dims(out)?;
                // adjoint of the unnormalized forward DFT is the unnormalized inverse, and vice versa
                let scale_by_hw = *inverse;
                let mut d = dft_planes(gd, c, h, w, !inverse, false);
                if scale_by_hw {
                    let inv = T::one() / T::c((h * w) as f64);
                    d.iter_mut().for_each(|v| *v *= inv);
                }
                acc(*x, d);
            }
            Op::ComplexFromReal(x) => acc(*x, gd.chunks_exact(2).map(|z| z[0]).collect()),
            Op::RealPart(x) => {
                let mut d = vec![T::zero(); 2 * gd.len()];
                for (i, &g) in gd.iter().enumerate() {
                    d[2 * i] = g;
                }
                acc(*x, d);
            }
            Op::Modulus(x) => {
                let xv = self.val(*x).data();
                let mut d = vec![T::zero(); xv.len()];
                for (i, (&g, &m)) in gd.iter().zip(out.data()).enumerate() {
                    if m > T::zero() {
                        d[2 * i] = g * xv[2 * i] / m;
                        d[2 * i + 1] = g * xv[2 * i + 1] / m;
                    }
                }
                acc(*x, d);
            }
            Op::Angle { x, snapped } => {
                let xv = self.val(*x).data();
                let mut d = vec![T::zero(); xv.len()];
                for (i, &g) in gd.iter().enumerate() {
                    let re = xv[2 * i];
                    let im = if snapped[i] { T::zero() } else { xv[2 * i + 1] };
                    let m2 = re * re + im * im;
                    if m2 > T::zero() {
                        d[2 * i] = -g * im / m2;
                        d[2 * i + 1] = g * re / m2;
                    }
                }
                acc(*x, d);
            }
            Op::Polar { amp, phase } => {
                let (av, pv) = (self.val(*amp).data(), self.val(*phase).data());
                let mut da = Vec::with_capacity(av.len());
                let mut dp = Vec::with_capacity(av.len());
                for i in 0..av.len() {
                    let (gr, gi) = (gd[2 * i], gd[2 * i + 1]);
                    let (s, c) = pv[i].sin_cos();
                    da.push(gr * c + gi * s);
                    dp.push(av[i] * (gi * c - gr * s));
                }
                acc(*amp, da);
                acc(*phase, dp);
            }
            Op::ComplexToChannels(x) => {
                let (c, h, w) = complex_dims(self.val(*x))?;
                let hw = h * w;
                let mut d = vec![T::zero(); 2 * c * hw];
                for ch in 0..c {
                    for i in 0..hw {
                        d[2 * (ch * hw + i)] = gd[ch * hw + i];
                        d[2 * (ch * hw + i) + 1] = gd[(c + ch) * hw + i];
                    }
                }
                acc(*x, d);
            }
            Op::ChannelsToComplex(x) => {
                let (c2, h, w) = self.val(*x).dims3()?;
                let (c, hw) = (c2 / 2, h * w);
                let mut d = vec![T::zero(); c2 * hw];
                for ch in 0..c {
                    for i in 0..hw {
                        d[ch * hw + i] = gd[2 * (ch * hw + i)];
                        d[(c + ch) * hw + i] = gd[2 * (ch * hw + i) + 1];
                    }
                }
                acc(*x, d);
            }
            Op::Shift { x, dy, dx } => {
                let (h, w) = spatial_dims(self.shape(*x))?;
                acc(*x, shift_tensor(g, h - dy, w - dx)?.into_data());
            }
            Op::Pac { img, kernels: kv, dmap } => {
                let (c, h, w) = self.val(*img).dims3()?;
                let n = self.shape(*kv)[0];
                let k = self.shape(*kv)[1];
                let grid = PacGrid::new(self.val(*dmap).data(), h, w, k);
                let (di, dk, dd) = kernels::pac_backward(self.val(*img).data(), c, self.val(*kv).data(), n, &grid, gd);
                acc(*img, di);
                acc(*kv, dk);
                acc(*dmap, dd);
            }
            Op::WindowAttention { q, k, v, win } => {
                let (c, h, w) = self.val(*q).dims3()?;
                let (dq, dk, dv) = kernels::window_attention_backward(
                    self.val(*q).data(),
                    self.val(*k).data(),
                    self.val(*v).data(),
                    gd,
                    c,
                    h,
                    w,
                    *win,
                );
                acc(*q, dq);
                acc(*k, dk);
                acc(*v, dv);
            }
        }
        Ok(())
    }
}

fn accumulate<T: Real>(grads: &mut [Option<Tensor<T>>], v: Var, shape: &[usize], d: Vec<T>) {
    match &mut grads[v.0] {
        Some(existing) => {
            for (a, b) in existing.data_mut().iter_mut().zip(d) {
                *a += b;
            }
        }
        slot @ None => {
            *slot = Some(Tensor::new(shape.to_vec(), d).expect("gradient shape"));
        }
    }
}

fn spatial_dims(shape: &[usize]) -> Result<(usize, usize)> {
    match *shape {
        [_, h, w] => Ok((h, w)),
        [_, h, w, 2] => Ok((h, w)),
        _ => Err(Error::shape(format!("no spatial axes in {shape:?}"))),
    }
}

fn shift_tensor<T: Real>(t: &Tensor<T>, dy: usize, dx: usize) -> Result<Tensor<T>> {
    let s = t.shape();
    let (h, w) = spatial_dims(s)?;
    let elem = if s.len() == 4 { 2 } else { 1 };
    let c = s[0];
    let mut out = Vec::with_capacity(t.len());
    for ch in 0..c {
        let plane = &t.data()[ch * h * w * elem..(ch + 1) * h * w * elem];
        if elem == 1 {
            out.extend(roll(plane, h, w, dy, dx));
        } else {
            let pairs: Vec<[T; 2]> = plane.chunks_exact(2).map(|z| [z[0], z[1]]).collect();
            for z in roll(&pairs, h, w, dy, dx) {
                out.extend_from_slice(&z);
            }
        }
    }
    Tensor::new(s.to_vec(), out)
}

/// DFT of each `(H, W)` complex plane of an interleaved buffer.
fn dft_planes<T: Real>(data: &[T], c: usize, h: usize, w: usize, inverse: bool, normalize: bool) -> Vec<T> {
    let hw = h * w;
    let mut out = Vec::with_capacity(data.len());
    let mut buf = vec![Complex::new(T::zero(), T::zero()); hw];
    let norm = if normalize { T::one() / T::c(hw as f64) } else { T::one() };
    for ch in 0..c {
        for (i, z) in buf.iter_mut().enumerate() {
            *z = Complex::new(data[2 * (ch * hw + i)], data[2 * (ch * hw + i) + 1]);
        }
        dft2_in_place(&mut buf, h, w, inverse);
        for z in &buf {
            out.push(z.re * norm);
            out.push(z.im * norm);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::gradcheck::{grad_check, GradCheckConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
        Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
    }

    /// Runs a gradient check with every listed tensor as a parameter.
    fn check(name: &str, inputs: Vec<Tensor<f64>>, f: impl Fn(&mut Graph<f64>, &[Var]) -> Result<Var>) {
        let mut store = ParamStore::new();
        let ids: Vec<ParamId> = inputs.into_iter().enumerate().map(|(i, t)| store.insert(format!("in{i}"), t).unwrap()).collect();
        let report = grad_check(
            name,
            |g: &mut Graph<f64>, s: &ParamStore<f64>| {
                let vars: Vec<Var> = ids.iter().map(|&id| g.param(s, id)).collect();
                f(g, &vars)
            },
            &store,
            &GradCheckConfig { samples: 200, ..GradCheckConfig::default() },
        )
        .unwrap();
        assert!(report.passed, "{report}");
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut store = ParamStore::new();
        let id = store.insert("x", Tensor::from_fn(&[2, 3], |i| i as f64)).unwrap();
        let mut g = Graph::new();
        let x = g.param(&store, id);
        let l = g.sum(x);
        g.backward(l, &mut store).unwrap();
        assert!(store.grad(id).data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn half_square_gradient_is_identity() {
        let mut store = ParamStore::new();
        let x0 = Tensor::from_fn(&[5], |i| i as f64 - 2.0);
        let id = store.insert("x", x0.clone()).unwrap();
        let mut g = Graph::new();
        let x = g.param(&store, id);
        let sq = g.mul(x, x).unwrap();
        let s = g.sum(sq);
        let l = g.affine(s, 0.5, 0.0);
        g.backward(l, &mut store).unwrap();
        assert_eq!(store.grad(id), &x0);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::zeros(&[2]));
        assert!(g.gradients(x).is_err());
    }

    #[test]
    fn elementwise_ops() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = rand_tensor(&mut rng, &[2, 3, 4]);
        let b = rand_tensor(&mut rng, &[2, 3, 4]);
        check("arith", vec![a.clone(), b.clone()], |g, v| {
            let s = g.add(v[0], v[1])?;
            let d = g.sub(s, v[1])?;
            let m = g.mul(d, v[1])?;
            let t = g.tanh(m);
            let sg = g.sigmoid(t);
            Ok(g.affine(sg, -1.5, 0.2))
        });
        let pos = a.map(|v| v.abs() + 0.1);
        check("log_pow_abs", vec![pos, b], |g, v| {
            let l = g.log1p(v[0]);
            let p = g.pow(v[0], 1.5);
            let q = g.pow(v[1], 2.0);
            let ab = g.abs(v[1]);
            let s = g.add(l, p)?;
            let s = g.add(s, q)?;
            g.add(s, ab)
        });
        let shifted = a.map(|v| if v.abs() < 0.05 { v + 0.2 } else { v });
        check("relu_mean", vec![shifted], |g, v| {
            let r = g.relu(v[0]);
            let m = g.mean(r);
            let s = g.sum(r);
            let m = g.reshape(m, &[1])?;
            let s = g.reshape(s, &[1])?;
            g.concat(&[m, s])
        });
    }

    #[test]
    fn conv_strided_and_padded() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = rand_tensor(&mut rng, &[3, 7, 6]);
        let w = rand_tensor(&mut rng, &[4, 3, 3, 3]);
        let b = rand_tensor(&mut rng, &[4]);
        check("conv_s1", vec![x.clone(), w.clone(), b.clone()], |g, v| g.conv2d(v[0], v[1], Some(v[2]), 1, 1));
        check("conv_s2", vec![x.clone(), w, b.clone()], |g, v| g.conv2d(v[0], v[1], Some(v[2]), 2, 1));
        let w1 = rand_tensor(&mut rng, &[4, 3, 1, 1]);
        check("conv_1x1", vec![x, w1, b], |g, v| g.conv2d(v[0], v[1], Some(v[2]), 1, 0));
    }

    #[test]
    fn pooling_softmax_and_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = rand_tensor(&mut rng, &[2, 9, 7]);
        check("adaptive_pool", vec![x.clone()], |g, v| g.adaptive_avg_pool(v[0], 4, 3));
        check("global_pool", vec![x.clone()], |g, v| g.global_avg_pool(v[0]));
        check("box", vec![x.clone()], |g, v| g.box_filter(v[0], 2));
        check("softmax", vec![x.clone()], |g, v| g.softmax(v[0], 21));
        check("mean_channels", vec![x.clone()], |g, v| g.mean_channels(v[0]));
        check("slice_resize", vec![x.clone()], |g, v| {
            let s = g.slice(v[0], 1, 1)?;
            g.resize(s, 5, 12)
        });
        check("pad_crop", vec![x.clone()], |g, v| {
            let p = g.pad_reflect(v[0], 3, 2, 1, 4)?;
            g.crop(p, 2, 1, 8, 9)
        });
        let w = rand_tensor(&mut rng, &[2]);
        check("scale_groups_renorm", vec![x, w], |g, v| {
            let s = g.scale_groups(v[0], v[1])?;
            g.renorm_sum(s, 9)
        });
    }

    #[test]
    fn renorm_sums_to_one() {
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::from_fn(&[3, 5], |i| i as f64 * 0.37));
        let y = g.renorm_sum(x, 5).unwrap();
        for row in g.value(y).data().chunks(5) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn spectral_ops() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = rand_tensor(&mut rng, &[2, 5, 6]);
        check("fft_real", vec![x.clone()], |g, v| {
            let c = g.complex(v[0])?;
            let f = g.fft2(c, false)?;
            let ch = g.complex_to_channels(f)?;
            let back = g.channels_to_complex(ch)?;
            let i = g.fft2(back, true)?;
            let i2 = g.fft2(f, true)?;
            let s = g.add(i, i2)?;
            g.real(s)
        });
        let amp = x.map(|v| v.abs() + 0.2);
        let phase = rand_tensor(&mut rng, &[2, 5, 6]);
        check("polar_modulus_angle", vec![amp, phase], |g, v| {
            let z = g.polar(v[0], v[1])?;
            let sh = g.fftshift(z, false)?;
            let m = g.modulus(sh)?;
            let a = g.angle(sh)?;
            let r = g.fftshift(m, true)?;
            g.concat(&[r, a])
        });
    }

    #[test]
    fn fft_round_trip_gradient_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x0 = rand_tensor(&mut rng, &[1, 6, 5]);
        let r = rand_tensor(&mut rng, &[1, 6, 5]);
        let mut store = ParamStore::new();
        let id = store.insert("x", x0).unwrap();
        let mut g = Graph::new();
        let x = g.param(&store, id);
        let c = g.complex(x).unwrap();
        let f = g.fft2(c, false).unwrap();
        let i = g.fft2(f, true).unwrap();
        let re = g.real(i).unwrap();
        let rv = g.input(r.clone());
        let p = g.mul(re, rv).unwrap();
        let l = g.sum(p);
        g.backward(l, &mut store).unwrap();
        assert!(store.grad(id).max_abs_diff(&r) < 1e-12);
    }

    #[test]
    fn angle_of_real_bins_is_stable() {
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::from_fn(&[1, 4, 4], |i| (i as f64 * 0.7).cos()));
        let c = g.complex(x).unwrap();
        let f = g.fft2(c, false).unwrap();
        let a = g.angle(f).unwrap();
        // DC and Nyquist bins of a real signal are real
        for &(y, xx) in &[(0, 0), (0, 2), (2, 0), (2, 2)] {
            let v = g.value(a).at3(0, y, xx);
            assert!(v == 0.0 || (v.abs() - std::f64::consts::PI).abs() < 1e-15);
        }
    }

    #[test]
    fn pac_gradients_including_dilation() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let img = rand_tensor(&mut rng, &[2, 7, 8]);
        let k = rand_tensor(&mut rng, &[3, 3, 3]);
        // keep sampling positions away from integer grid lines, where bilinear interpolation has kinks
        let d = Tensor::from_fn(&[1, 7, 8], |i| 1.13 + 0.37 * ((i * 7) % 5) as f64 / 5.0);
        check("pac", vec![img, k, d], |g, v| g.pac(v[0], v[1], v[2]));
    }

    #[test]
    fn window_attention_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let q = rand_tensor(&mut rng, &[3, 4, 8]);
        let k = rand_tensor(&mut rng, &[3, 4, 8]);
        let v = rand_tensor(&mut rng, &[3, 4, 8]);
        check("window_attention", vec![q, k, v], |g, x| g.window_attention(x[0], x[1], x[2], 4));
    }

    #[test]
    fn gradient_is_linear_in_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x0 = rand_tensor(&mut rng, &[1, 5, 5]);
        let w0 = rand_tensor(&mut rng, &[2, 1, 3, 3]);
        let grads = |a: f64, b: f64| {
            let mut store = ParamStore::new();
            let xi = store.insert("x", x0.clone()).unwrap();
            let wi = store.insert("w", w0.clone()).unwrap();
            let mut g = Graph::new();
            let x = g.param(&store, xi);
            let w = g.param(&store, wi);
            let y = g.conv2d(x, w, None, 1, 1).unwrap();
            let t = g.tanh(y);
            let l1 = g.mean(t);
            let sq = g.mul(y, y).unwrap();
            let l2 = g.sum(sq);
            let l1 = g.affine(l1, a, 0.0);
            let l2 = g.affine(l2, b, 0.0);
            let l = g.add(l1, l2).unwrap();
            g.backward(l, &mut store).unwrap();
            store.grad(wi).clone()
        };
        let (g1, g2, g12) = (grads(1.0, 0.0), grads(0.0, 1.0), grads(0.7, -1.3));
        let combo = g1.zip_map(&g2, |a, b| 0.7 * a - 1.3 * b).unwrap();
        assert!(combo.max_abs_diff(&g12) < 1e-9);
    }
}
