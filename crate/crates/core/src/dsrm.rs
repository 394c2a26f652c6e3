//! Dual-domain scale-recurrent module: an encoder–decoder whose bottleneck
//! mixes window self-attention with a frequency-domain filter, followed by a
//! convolutional GRU that carries a hidden state across scales and emits the
//! coefficient maps used to fuse the deconvolution features.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, ParamStore, Var};
use crate::error::{Error, Result};
use crate::nn::{Conv, ResBlock};
use crate::tensor::{Real, Tensor};

/// Arrangement of the two bottleneck stages.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DdmVariant {
    /// Attention, then the frequency stage, in sequence.
    #[default]
    Full,
    SpatialOnly,
    FrequencyOnly,
    /// Both stages on the same input, blended by a learned sigmoid gate.
    DualBranch,
}

impl DdmVariant {
    pub const ALL: [DdmVariant; 4] = [Self::Full, Self::SpatialOnly, Self::FrequencyOnly, Self::DualBranch];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Full => "full",
            Self::SpatialOnly => "spatial_only",
            Self::FrequencyOnly => "frequency_only",
            Self::DualBranch => "dual_branch",
        }
    }
}

impl fmt::Display for DdmVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DdmVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown DDM variant {s:?} (full, spatial_only, frequency_only, dual_branch)")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DsrmConfig {
    pub in_channels: usize,
    pub widths: [usize; 3],
    pub window: usize,
    pub hidden: usize,
    /// Channels of the coefficient maps (the FIKP feature count).
    pub feature_channels: usize,
    pub variant: DdmVariant,
}

impl Default for DsrmConfig {
    fn default() -> Self {
        Self { in_channels: 3, widths: [16, 32, 64], window: 8, hidden: 16, feature_channels: 30, variant: DdmVariant::Full }
    }
}

/// Bottleneck block.
#[derive(Clone, Debug)]
pub struct Ddm {
    query: Conv,
    key: Conv,
    value: Conv,
    proj: Conv,
    freq1: Conv,
    freq2: Conv,
    local: ResBlock,
    gate: Option<Conv>,
    window: usize,
    variant: DdmVariant,
}

impl Ddm {
    fn new<T: Real>(store: &mut ParamStore<T>, rng: &mut impl Rng, c: usize, window: usize, variant: DdmVariant) -> Result<Self> {
        let gate = match variant {
            DdmVariant::DualBranch => Some(Conv::new(store, rng, "dsrm.ddm.gate", 2 * c, c, 1, 1, 0.1)?),
            _ => None,
        };
        Ok(Self {
            query: Conv::new(store, rng, "dsrm.ddm.q", c, c, 1, 1, 1.0)?,
            key: Conv::new(store, rng, "dsrm.ddm.k", c, c, 1, 1, 1.0)?,
            value: Conv::new(store, rng, "dsrm.ddm.v", c, c, 1, 1, 1.0)?,
            proj: Conv::new(store, rng, "dsrm.ddm.proj", c, c, 1, 1, 0.1)?,
            freq1: Conv::new(store, rng, "dsrm.ddm.freq1", 2 * c, 2 * c, 1, 1, 2f64.sqrt())?,
            freq2: Conv::new(store, rng, "dsrm.ddm.freq2", 2 * c, 2 * c, 1, 1, 0.1)?,
            local: ResBlock::new(store, rng, "dsrm.ddm.local", c)?,
            gate,
            window,
            variant,
        })
    }

    /// `x + proj(attention(q(x), k(x), v(x)))` over non-overlapping windows;
    /// extents that are not window multiples are reflect-padded, then cropped.
    pub fn spatial<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let (_, h, w) = g.value(x).dims3()?;
        let win = self.window;
        let (ph, pw) = (h.div_ceil(win) * win - h, w.div_ceil(win) * win - w);
        let xp = if ph + pw > 0 { g.pad_reflect(x, ph / 2, ph - ph / 2, pw / 2, pw - pw / 2)? } else { x };
        let q = self.query.forward(g, store, xp)?;
        let k = self.key.forward(g, store, xp)?;
        let v = self.value.forward(g, store, xp)?;
        let a = g.window_attention(q, k, v, win)?;
        let a = if ph + pw > 0 { g.crop(a, ph / 2, pw / 2, h, w)? } else { a };
        let a = self.proj.forward(g, store, a)?;
        g.add(x, a)
    }

    /// `real(F⁻¹(conv(relu(conv(F(x))))))` with the real and imaginary parts
    /// stacked as channels.
    pub fn frequency<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        spectral_filter(g, x, |g, s| {
            let s = self.freq1.forward(g, store, s)?;
            let s = g.relu(s);
            self.freq2.forward(g, store, s)
        })
    }

    /// Frequency stage: a ResBlock and the spectral filter in parallel, summed.
    fn frequency_stage<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let local = self.local.forward(g, store, x)?;
        let freq = self.frequency(g, store, x)?;
        g.add(local, freq)
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        match self.variant {
            DdmVariant::Full => {
                let s = self.spatial(g, store, x)?;
                self.frequency_stage(g, store, s)
            }
            DdmVariant::SpatialOnly => self.spatial(g, store, x),
            DdmVariant::FrequencyOnly => self.frequency_stage(g, store, x),
            DdmVariant::DualBranch => {
                let s = self.spatial(g, store, x)?;
                let f = self.frequency_stage(g, store, x)?;
                let both = g.concat(&[s, f])?;
                let gate = self.gate.as_ref().expect("dual-branch gate").forward(g, store, both)?;
                let gate = g.sigmoid(gate);
                let inv = g.affine(gate, -1.0, 1.0);
                let a = g.mul(gate, s)?;
                let b = g.mul(inv, f)?;
                g.add(a, b)
            }
        }
    }
}

/// Applies `filter` to the stacked real/imaginary channels of the per-channel
/// spectrum and returns the real part of the inverse transform.
pub fn spectral_filter<T: Real>(
    g: &mut Graph<T>,
    x: Var,
    filter: impl FnOnce(&mut Graph<T>, Var) -> Result<Var>,
) -> Result<Var> {
    let z = g.complex(x)?;
    let spec = g.fft2(z, false)?;
    let stacked = g.complex_to_channels(spec)?;
    let filtered = filter(g, stacked)?;
    let spec = g.channels_to_complex(filtered)?;
    let back = g.fft2(spec, true)?;
    g.real(back)
}

/// Convolutional GRU with a sigmoid coefficient head.
#[derive(Clone, Debug)]
pub struct Apu {
    update: Conv,
    reset: Conv,
    candidate: Conv,
    head: Conv,
    hidden: usize,
}

impl Apu {
    fn new<T: Real>(store: &mut ParamStore<T>, rng: &mut impl Rng, input: usize, cfg: &DsrmConfig) -> Result<Self> {
        let h = cfg.hidden;
        Ok(Self {
            update: Conv::new(store, rng, "dsrm.apu.update", input + h, h, 3, 1, 1.0)?,
            reset: Conv::new(store, rng, "dsrm.apu.reset", input + h, h, 3, 1, 1.0)?,
            candidate: Conv::new(store, rng, "dsrm.apu.candidate", input + h, h, 3, 1, 1.0)?,
            head: Conv::new(store, rng, "dsrm.apu.head", h, cfg.feature_channels, 3, 1, 0.5)?,
            hidden: h,
        })
    }

    pub fn hidden_channels(&self) -> usize {
        self.hidden
    }

    /// `z = σ(W_z[x, h])`, `r = σ(W_r[x, h])`, `ĥ = tanh(W_h[x, r⊙h])`,
    /// `h′ = (1 − z)⊙h + z⊙ĥ`, `C = σ(head(h′))`. Returns `(C, h′)`.
    pub fn step<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var, hidden: Var) -> Result<(Var, Var)> {
        let (_, h, w) = g.value(x).dims3()?;
        let (hc, hh, hw) = g.value(hidden).dims3()?;
        if (hc, hh, hw) != (self.hidden, h, w) {
            return Err(Error::shape(format!("hidden state {:?} vs features {:?}", g.shape(hidden), g.shape(x))));
        }
        let xh = g.concat(&[x, hidden])?;
        let z = self.update.forward(g, store, xh)?;
        let z = g.sigmoid(z);
        let r = self.reset.forward(g, store, xh)?;
        let r = g.sigmoid(r);
        let rh = g.mul(r, hidden)?;
        let xrh = g.concat(&[x, rh])?;
        let cand = self.candidate.forward(g, store, xrh)?;
        let cand = g.tanh(cand);
        let keep = g.affine(z, -1.0, 1.0);
        let a = g.mul(keep, hidden)?;
        let b = g.mul(z, cand)?;
        let h_next = g.add(a, b)?;
        let c = self.head.forward(g, store, h_next)?;
        let c = g.sigmoid(c);
        Ok((c, h_next))
    }
}

#[derive(Clone, Debug)]
pub struct DsrmParams {
    pub cfg: DsrmConfig,
    stem: Conv,
    enc1: ResBlock,
    down1: Conv,
    enc2: ResBlock,
    down2: Conv,
    enc3: ResBlock,
    pub ddm: Ddm,
    fuse2: Conv,
    dec2: ResBlock,
    fuse1: Conv,
    dec1: ResBlock,
    pub apu: Apu,
}

impl DsrmParams {
    pub fn new<T: Real>(store: &mut ParamStore<T>, rng: &mut impl Rng, cfg: DsrmConfig) -> Result<Self> {
        let [w0, w1, w2] = cfg.widths;
        if w0 == 0 || w1 == 0 || w2 == 0 || cfg.hidden == 0 || cfg.window == 0 || cfg.feature_channels == 0 {
            return Err(Error::invalid("DSRM widths, window and channel counts must be positive"));
        }
        let he = 2f64.sqrt();
        Ok(Self {
            stem: Conv::new(store, rng, "dsrm.stem", cfg.in_channels, w0, 3, 1, he)?,
            enc1: ResBlock::new(store, rng, "dsrm.enc1", w0)?,
            down1: Conv::new(store, rng, "dsrm.down1", w0, w1, 3, 2, he)?,
            enc2: ResBlock::new(store, rng, "dsrm.enc2", w1)?,
            down2: Conv::new(store, rng, "dsrm.down2", w1, w2, 3, 2, he)?,
            enc3: ResBlock::new(store, rng, "dsrm.enc3", w2)?,
            ddm: Ddm::new(store, rng, w2, cfg.window, cfg.variant)?,
            fuse2: Conv::new(store, rng, "dsrm.fuse2", w2 + w1, w1, 1, 1, 1.0)?,
            dec2: ResBlock::new(store, rng, "dsrm.dec2", w1)?,
            fuse1: Conv::new(store, rng, "dsrm.fuse1", w1 + w0, w0, 1, 1, 1.0)?,
            dec1: ResBlock::new(store, rng, "dsrm.dec1", w0)?,
            apu: Apu::new(store, rng, w0, &cfg)?,
            cfg,
        })
    }

    /// Zero hidden state for an `h × w` stage.
    pub fn zero_hidden<T: Real>(&self, h: usize, w: usize) -> Tensor<T> {
        Tensor::zeros(&[self.cfg.hidden, h, w])
    }

    /// Decoder features at full stage resolution.
    pub fn features<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, img: Var) -> Result<Var> {
        let x = self.stem.forward(g, store, img)?;
        let x = g.relu(x);
        let e1 = self.enc1.forward(g, store, x)?;
        let x = self.down1.forward(g, store, e1)?;
        let x = g.relu(x);
        let e2 = self.enc2.forward(g, store, x)?;
        let x = self.down2.forward(g, store, e2)?;
        let x = g.relu(x);
        let e3 = self.enc3.forward(g, store, x)?;
        let b = self.ddm.forward(g, store, e3)?;

        let (_, h2, w2) = g.value(e2).dims3()?;
        let up = g.resize(b, h2, w2)?;
        let cat = g.concat(&[up, e2])?;
        let x = self.fuse2.forward(g, store, cat)?;
        let d2 = self.dec2.forward(g, store, x)?;

        let (_, h1, w1) = g.value(e1).dims3()?;
        let up = g.resize(d2, h1, w1)?;
        let cat = g.concat(&[up, e1])?;
        let x = self.fuse1.forward(g, store, cat)?;
        self.dec1.forward(g, store, x)
    }

    /// Coefficient maps `(feature_channels, H, W)` and the next hidden state.
    /// `hidden` must already be at the stage resolution.
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, img: Var, hidden: Var) -> Result<(Var, Var)> {
        if g.value(img).dims3()?.0 != self.cfg.in_channels {
            return Err(Error::shape(format!("DSRM expects {} input channels, got {:?}", self.cfg.in_channels, g.shape(img))));
        }
        let f = self.features(g, store, img)?;
        self.apu.step(g, store, f, hidden)
    }
}
