//! Frequency inverse-kernel prediction and position-adaptive convolution.
//!
//! From the amplitude `A` and phase `P` of the input's spectrum, two
//! predictors estimate `N` small spectra `K_A` and `K_P`; an attention on the
//! amplitude residual modulates the phase branch, and each inverse kernel is
//! reconstructed as `k* = F⁻¹(|K_A|·e^{jK_P′})`. The kernels are then applied
//! with a per-pixel dilation rate `D(p)` by bilinear gathering.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::kernels::{pac_forward, PacGrid};
use crate::autodiff::{Graph, ParamStore, Var};
use crate::blur::{disk_kernel, BlurKernel};
use crate::error::{Error, Result};
use crate::nn::Conv;
use crate::spectral::{fft2, fftshift, ifft2, to_polar, PolarSpectrum, Spectrum};
use crate::tensor::{Real, Tensor};

/// Spectral bins below this modulus count as zeros of an unregularized inverse.
pub const SINGULAR_BIN_TOL: f64 = 1e-12;

/// Radius of the box low-pass removed from the amplitude before attention (5×5 window).
const ATTENTION_BOX_RADIUS: usize = 2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FikpConfig {
    pub channels: usize,
    pub n_kernels: usize,
    pub kernel_size: usize,
    /// Hidden width of the predictors and of the dilation head.
    pub width: usize,
    pub d_min: f64,
    pub d_max: f64,
}

impl Default for FikpConfig {
    fn default() -> Self {
        Self { channels: 3, n_kernels: 5, kernel_size: 5, width: 8, d_min: 0.5, d_max: 8.0 }
    }
}

impl FikpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_kernels == 0 {
            return Err(Error::invalid("need at least one inverse kernel"));
        }
        if self.kernel_size.is_multiple_of(2) {
            return Err(Error::invalid(format!("kernel size must be odd, got {}", self.kernel_size)));
        }
        if self.channels == 0 || self.width == 0 {
            return Err(Error::invalid("channel counts must be positive"));
        }
        if !(0.0 < self.d_min && self.d_min < self.d_max && self.d_max.is_finite()) {
            return Err(Error::invalid(format!("dilation range ({}, {}) is not valid", self.d_min, self.d_max)));
        }
        Ok(())
    }

    /// Channels of the deconvolution features: `2·N·C`.
    pub fn feature_channels(&self) -> usize {
        2 * self.n_kernels * self.channels
    }
}

/// Ablation switches of the predictor.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FikpToggles {
    /// Apply kernels with unit dilation everywhere.
    pub disable_pac: bool,
    /// Replace predicted kernels with a fixed bank of Wiener inverses.
    pub disable_dikp: bool,
}

/// Conv → ReLU → adaptive pool, twice, then a conv to `N` maps of `K×K` and a
/// per-map softmax.
#[derive(Clone, Debug)]
pub struct Predictor {
    conv1: Conv,
    conv2: Conv,
    head: Conv,
}

impl Predictor {
    fn new<T: Real>(store: &mut ParamStore<T>, rng: &mut impl Rng, name: &str, cfg: &FikpConfig) -> Result<Self> {
        let w = cfg.width;
        Ok(Self {
            conv1: Conv::new(store, rng, &format!("{name}.conv1"), 1, w, 3, 1, 2f64.sqrt())?,
            conv2: Conv::new(store, rng, &format!("{name}.conv2"), w, w, 3, 1, 2f64.sqrt())?,
            head: Conv::new(store, rng, &format!("{name}.head"), w, cfg.n_kernels, 3, 1, 0.5)?,
        })
    }

    /// `(1, H, W)` plane to `(N, K, K)` maps whose bins sum to one per map.
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, plane: Var, k: usize) -> Result<Var> {
        let (_, h, w) = g.value(plane).dims3()?;
        if h < k || w < k {
            return Err(Error::shape(format!("spectrum plane {h}x{w} is smaller than the {k}x{k} kernel")));
        }
        let x = self.conv1.forward(g, store, plane)?;
        let x = g.relu(x);
        let x = g.adaptive_avg_pool(x, (h / 2).max(k), (w / 2).max(k))?;
        let x = self.conv2.forward(g, store, x)?;
        let x = g.relu(x);
        let x = g.adaptive_avg_pool(x, k, k)?;
        let x = self.head.forward(g, store, x)?;
        g.softmax(x, k * k)
    }
}

/// Amplitude residual → conv → global average pool → softmax over kernels.
#[derive(Clone, Debug)]
pub struct Attention {
    conv: Conv,
}

impl Attention {
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, amplitude: Var) -> Result<Var> {
        let low = g.box_filter(amplitude, ATTENTION_BOX_RADIUS)?;
        let residual = g.sub(amplitude, low)?;
        let x = self.conv.forward(g, store, residual)?;
        let x = g.global_avg_pool(x)?;
        let n = g.shape(x)[0];
        g.softmax(x, n)
    }
}

/// Conv → ReLU → conv → sigmoid, mapped affinely onto `(d_min, d_max)`.
#[derive(Clone, Debug)]
pub struct DilationHead {
    conv1: Conv,
    conv2: Conv,
}

impl DilationHead {
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, img: Var, cfg: &FikpConfig) -> Result<Var> {
        let x = self.conv1.forward(g, store, img)?;
        let x = g.relu(x);
        let x = self.conv2.forward(g, store, x)?;
        let s = g.sigmoid(x);
        Ok(g.affine(s, cfg.d_max - cfg.d_min, cfg.d_min))
    }
}

/// Nodes produced by one inverse-kernel prediction.
#[derive(Clone, Copy, Debug)]
pub struct DikpOutput {
    /// `(N, K, K)` spatial inverse kernels, each summing to one.
    pub kernels: Var,
    /// Amplitude used for reconstruction (centred layout).
    pub amplitude: Var,
    /// Attention-modulated phase `K_P′` (centred layout).
    pub phase: Var,
    /// `(N)` attention weights.
    pub attention: Var,
}

#[derive(Clone, Debug)]
pub struct FikpParams {
    pub cfg: FikpConfig,
    pub amplitude: Predictor,
    pub phase: Predictor,
    pub attention: Attention,
    pub dilation: DilationHead,
    pub refine: Conv,
}

impl FikpParams {
    pub fn new<T: Real>(store: &mut ParamStore<T>, rng: &mut impl Rng, cfg: FikpConfig) -> Result<Self> {
        cfg.validate()?;
        let amplitude = Predictor::new(store, rng, "fikp.amp", &cfg)?;
        let phase = Predictor::new(store, rng, "fikp.phase", &cfg)?;
        let attention = Attention { conv: Conv::new(store, rng, "fikp.attn", 1, cfg.n_kernels, 3, 1, 1.0)? };
        let dilation = DilationHead {
            conv1: Conv::new(store, rng, "fikp.dmap.conv1", cfg.channels, cfg.width, 3, 1, 2f64.sqrt())?,
            conv2: Conv::new(store, rng, "fikp.dmap.conv2", cfg.width, 1, 3, 1, 0.5)?,
        };
        let fc = cfg.feature_channels();
        let refine = Conv::new(store, rng, "fikp.refine", fc, fc, 3, 1, 0.1)?;
        // start the refinement near the identity so early features are the raw deconvolutions
        let w = store.value_mut(refine.weight).data_mut();
        for c in 0..fc {
            w[((c * fc + c) * 3 + 1) * 3 + 1] += T::one();
        }
        Ok(Self { cfg, amplitude, phase, attention, dilation, refine })
    }

    /// Spectrum planes fed to the predictors: centred `log(1 + A)` and centred
    /// principal phase of the channel mean.
    pub fn spectrum_planes<T: Real>(&self, g: &mut Graph<T>, img: Var) -> Result<(Var, Var)> {
        let luma = g.mean_channels(img)?;
        let z = g.complex(luma)?;
        let spec = g.fft2(z, false)?;
        let amp = g.modulus(spec)?;
        let amp = g.log1p(amp);
        let amp = g.fftshift(amp, false)?;
        let phase = g.angle(spec)?;
        let phase = g.fftshift(phase, false)?;
        Ok((amp, phase))
    }

    pub fn dikp<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, img: Var) -> Result<DikpOutput> {
        let k = self.cfg.kernel_size;
        let (amp_plane, phase_plane) = self.spectrum_planes(g, img)?;
        let ka = self.amplitude.forward(g, store, amp_plane, k)?;
        let kp = self.phase.forward(g, store, phase_plane, k)?;
        let attention = self.attention.forward(g, store, amp_plane)?;
        let kk = (k * k) as f64;
        let kp = g.affine(kp, 2.0 * PI * kk, -PI);
        let phase = g.scale_groups(kp, attention)?;
        let amplitude = g.affine(ka, kk, 0.0);
        let kernels = reconstruct_kernels(g, amplitude, phase)?;
        Ok(DikpOutput { kernels, amplitude, phase, attention })
    }

    pub fn dilated_map<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, img: Var) -> Result<Var> {
        self.dilation.forward(g, store, img, &self.cfg)
    }

    /// PAC features `(N·C, H, W)` of one input.
    pub fn deconvolve<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        img: Var,
        toggles: &FikpToggles,
        bank: Option<Var>,
    ) -> Result<Var> {
        let kernels = match (toggles.disable_dikp, bank) {
            (true, Some(b)) => b,
            (true, None) => {
                let b = analytic_bank(self.cfg.n_kernels, self.cfg.kernel_size)?;
                g.input(b.cast())
            }
            (false, _) => self.dikp(g, store, img)?.kernels,
        };
        let dmap = if toggles.disable_pac {
            let (_, h, w) = g.value(img).dims3()?;
            g.input(Tensor::full(&[1, h, w], T::one()))
        } else {
            self.dilated_map(g, store, img)?
        };
        g.pac(img, kernels, dmap)
    }

    /// Deconvolution features `F` of a stage: both inputs share the predictor,
    /// their PAC outputs are concatenated and refined by one convolution.
    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        img: Var,
        prev: Var,
        toggles: &FikpToggles,
    ) -> Result<Var> {
        if g.shape(img) != g.shape(prev) {
            return Err(Error::shape(format!("stage input {:?} vs previous output {:?}", g.shape(img), g.shape(prev))));
        }
        if g.value(img).dims3()?.0 != self.cfg.channels {
            return Err(Error::shape(format!("expected {} channels, got {:?}", self.cfg.channels, g.shape(img))));
        }
        let bank = if toggles.disable_dikp {
            Some(g.input(analytic_bank(self.cfg.n_kernels, self.cfg.kernel_size)?.cast()))
        } else {
            None
        };
        let a = self.deconvolve(g, store, img, toggles, bank)?;
        let b = self.deconvolve(g, store, prev, toggles, bank)?;
        let f = g.concat(&[a, b])?;
        self.refine.forward(g, store, f)
    }
}

/// `k = shift(real(F⁻¹(unshift(amp · e^{j·phase}))))`, then shifted to unit sum.
/// Inputs are `(N, K, K)` in centred spectral layout.
pub fn reconstruct_kernels<T: Real>(g: &mut Graph<T>, amplitude: Var, phase: Var) -> Result<Var> {
    let k = g.shape(amplitude).get(1).copied().unwrap_or(0);
    let z = g.polar(amplitude, phase)?;
    let z = g.fftshift(z, true)?;
    let spatial = g.fft2(z, true)?;
    let re = g.real(spatial)?;
    let centred = g.fftshift(re, false)?;
    g.renorm_sum(centred, k * k)
}

/// Evaluates the predictor of one branch on a plane in a fresh graph.
pub fn predictor_forward(plane: &Tensor<f64>, predictor: &Predictor, store: &ParamStore<f64>, k: usize) -> Result<Tensor<f64>> {
    let mut g = Graph::new();
    let p = g.input(plane.clone().reshape(&[1, plane.dims3()?.1, plane.dims3()?.2])?);
    let out = predictor.forward(&mut g, store, p, k)?;
    Ok(g.value(out).clone())
}

/// Evaluates the attention weights for an amplitude plane in a fresh graph.
pub fn attention_forward(amplitude: &Tensor<f64>, params: &FikpParams, store: &ParamStore<f64>) -> Result<Tensor<f64>> {
    let (_, h, w) = amplitude.dims3()?;
    let mut g = Graph::new();
    let a = g.input(amplitude.clone().reshape(&[1, h, w])?);
    let out = params.attention.forward(&mut g, store, a)?;
    Ok(g.value(out).clone())
}

/// Predicts the inverse kernels of an image.
pub fn dikp_predict(img: &Tensor<f64>, params: &FikpParams, store: &ParamStore<f64>) -> Result<KernelSet> {
    let mut g = Graph::new();
    let x = g.input(img.clone());
    let out = params.dikp(&mut g, store, x)?;
    KernelSet::new(g.value(out.kernels).clone(), g.value(out.amplitude).clone(), g.value(out.phase).clone())
}

pub fn dilated_map(img: &Tensor<f64>, params: &FikpParams, store: &ParamStore<f64>) -> Result<DilatedMap> {
    let mut g = Graph::new();
    let x = g.input(img.clone());
    let d = params.dilated_map(&mut g, store, x)?;
    DilatedMap::new(g.value(d).clone(), params.cfg.d_max)
}

/// `N` real inverse kernels with the amplitude and phase that produced them.
///
/// The construction record holds the polar spectrum of each realized kernel
/// (after the unit-sum shift), so `ifft2` of the record reproduces the kernel.
#[derive(Clone, Debug)]
pub struct KernelSet {
    kernels: Tensor<f64>,
    amplitude: Tensor<f64>,
    phase: Tensor<f64>,
    record: Vec<PolarSpectrum>,
}

impl KernelSet {
    pub fn new(kernels: Tensor<f64>, amplitude: Tensor<f64>, phase: Tensor<f64>) -> Result<Self> {
        let (n, k, k2) = kernels.dims3()?;
        if n == 0 || k != k2 || k % 2 == 0 {
            return Err(Error::invalid(format!("kernel set must be N x K x K with odd K, got {:?}", kernels.shape())));
        }
        kernels.expect_same_shape(&amplitude)?;
        kernels.expect_same_shape(&phase)?;
        let record = (0..n)
            .map(|i| Ok(to_polar(&fft2(&Tensor::new(vec![k, k], kernels.plane(i).to_vec())?)?)))
            .collect::<Result<_>>()?;
        Ok(Self { kernels, amplitude, phase, record })
    }

    pub fn count(&self) -> usize {
        self.kernels.shape()[0]
    }

    pub fn size(&self) -> usize {
        self.kernels.shape()[1]
    }

    /// All kernels as `(N, K, K)`.
    pub fn kernels(&self) -> &Tensor<f64> {
        &self.kernels
    }

    pub fn kernel(&self, i: usize) -> Tensor<f64> {
        let k = self.size();
        Tensor::new(vec![k, k], self.kernels.plane(i).to_vec()).expect("kernel plane")
    }

    /// Predicted amplitude `|K_A|` (centred layout).
    pub fn amplitude(&self) -> &Tensor<f64> {
        &self.amplitude
    }

    /// Modulated phase `K_P′` (centred layout).
    pub fn phase(&self) -> &Tensor<f64> {
        &self.phase
    }

    pub fn record(&self, i: usize) -> &PolarSpectrum {
        &self.record[i]
    }

    /// Kernel `i` recomputed from its construction record.
    pub fn reconstruct(&self, i: usize) -> Result<Tensor<f64>> {
        ifft2(&crate::spectral::from_polar(&self.record[i]))
    }
}

/// Per-pixel dilation rate, a single `(H, W)` plane in `(0, d_max]`.
#[derive(Clone, Debug, PartialEq)]
pub struct DilatedMap(Tensor<f64>);

impl DilatedMap {
    pub fn new(values: Tensor<f64>, d_max: f64) -> Result<Self> {
        let (c, h, w) = values.dims3()?;
        if c != 1 {
            return Err(Error::shape("dilated map must be a single plane"));
        }
        if values.data().iter().any(|&d| !(d > 0.0 && d <= d_max)) {
            return Err(Error::invalid(format!("dilation rates must lie in (0, {d_max}]")));
        }
        Ok(Self(values.reshape(&[h, w])?))
    }

    pub fn constant(h: usize, w: usize, d: f64) -> Result<Self> {
        Self::new(Tensor::full(&[h, w], d), d.max(f64::MIN_POSITIVE))
    }

    pub fn height(&self) -> usize {
        self.0.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.0.shape()[1]
    }

    pub fn as_tensor(&self) -> &Tensor<f64> {
        &self.0
    }
}

/// `F(p) = Σᵢ kᵢ · x(p + Δpᵢ·D(p))` over the `K×K` offset grid (correlation
/// orientation, bilinear sampling clamped at the border).
pub fn pac_apply(plane: &Tensor<f64>, kernel: &Tensor<f64>, d: &DilatedMap) -> Result<Tensor<f64>> {
    let (c, h, w) = plane.dims3()?;
    let (kc, k, k2) = kernel.dims3()?;
    if c != 1 || kc != 1 {
        return Err(Error::shape("pac_apply works on one plane and one kernel"));
    }
    if k != k2 || k % 2 == 0 {
        return Err(Error::invalid(format!("PAC kernel must be square and odd, got {k}x{k2}")));
    }
    if (d.height(), d.width()) != (h, w) {
        return Err(Error::shape(format!("dilated map {}x{} vs plane {h}x{w}", d.height(), d.width())));
    }
    let grid = PacGrid::new(d.as_tensor().data(), h, w, k);
    Tensor::new(vec![h, w], pac_forward(plane.data(), 1, kernel.data(), 1, &grid))
}

/// Regularized inverse response `K̄ / (|K|² + eps)` on a `pad × pad` grid,
/// spatially centred at `(pad/2, pad/2)`.
pub fn analytic_inverse_response(kernel: &BlurKernel, pad: usize, eps: f64) -> Result<Tensor<f64>> {
    if !(eps >= 0.0) || !eps.is_finite() {
        return Err(Error::invalid(format!("regularizer must be finite and >= 0, got {eps}")));
    }
    let ks = kernel.size();
    if pad < ks {
        return Err(Error::invalid(format!("pad {pad} is smaller than kernel size {ks}")));
    }
    let half = ks / 2;
    let mut embedded = Tensor::zeros(&[pad, pad]);
    for i in 0..ks {
        for j in 0..ks {
            let y = (i + pad - half) % pad;
            let x = (j + pad - half) % pad;
            embedded.data_mut()[y * pad + x] = kernel.at(i, j);
        }
    }
    let spec = fft2(&embedded)?;
    let mut inv = Vec::with_capacity(pad * pad);
    for (idx, &z) in spec.data().iter().enumerate() {
        let m2 = z.norm_sqr();
        if eps == 0.0 && m2.sqrt() <= SINGULAR_BIN_TOL {
            return Err(Error::SingularSpectrum { row: idx / pad, col: idx % pad });
        }
        inv.push(z.conj() / Complex64::new(m2 + eps, 0.0));
    }
    let response = ifft2(&Spectrum::new(pad, pad, inv)?)?;
    Tensor::new(vec![pad, pad], fftshift(response.data(), pad, pad))
}

/// [`analytic_inverse_response`] cropped to a centred `support × support` window.
pub fn analytic_inverse(kernel: &BlurKernel, pad: usize, eps: f64, support: usize) -> Result<Tensor<f64>> {
    if support.is_multiple_of(2) || support > pad {
        return Err(Error::invalid(format!("support {support} must be odd and at most pad {pad}")));
    }
    let full = analytic_inverse_response(kernel, pad, eps)?;
    let (c, r) = (pad / 2, support / 2);
    Ok(Tensor::from_fn(&[support, support], |i| {
        let (y, x) = (c + i / support - r, c + i % support - r);
        full.data()[y * pad + x]
    }))
}

/// Radii of the fixed kernel bank: evenly spaced over `[0, 4]` pixels.
pub fn bank_radii(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![0.0];
    }
    (0..n).map(|i| 4.0 * i as f64 / (n - 1) as f64).collect()
}

/// Wiener inverses of disks on the [`bank_radii`] ladder, cropped to `K×K`
/// and scaled to unit sum; used when kernel prediction is switched off.
pub fn analytic_bank(n: usize, k: usize) -> Result<Tensor<f64>> {
    let pad = (4 * k).max(32);
    let mut data = Vec::with_capacity(n * k * k);
    for r in bank_radii(n) {
        let inv = analytic_inverse(&disk_kernel(r)?, pad, 1e-2, k)?;
        let s = inv.sum();
        data.extend(inv.data().iter().map(|v| v / s));
    }
    Tensor::new(vec![n, k, k], data)
}
