//! Training configuration and its plain-text `key = value` form.

use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::model::ModelConfig;
use crate::dsrm::{DdmVariant, DsrmConfig};
use crate::error::{Error, Result};
use crate::fikp::{FikpConfig, FikpToggles};
use crate::loss::LossWeights;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub seed: u64,
    pub train_dir: Option<PathBuf>,
    pub val_dir: Option<PathBuf>,
    pub steps: usize,
    /// Crop side and batch size of the first phase.
    pub patch1: usize,
    pub batch1: usize,
    pub patch2: usize,
    pub batch2: usize,
    /// Fraction of `steps` spent in the first phase.
    pub phase1_frac: f64,
    pub lr: f64,
    /// Learning-rate milestones as fractions of `steps`.
    pub milestones: Vec<f64>,
    pub lr_gamma: f64,
    pub lambda: [f64; 3],
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub widths: [usize; 3],
    pub window: usize,
    pub hidden: usize,
    pub n_kernels: usize,
    pub kernel_size: usize,
    pub predictor_width: usize,
    pub d_min: f64,
    pub d_max: f64,
    pub disable_pac: bool,
    pub disable_dikp: bool,
    pub ddm_variant: DdmVariant,
    /// Kernel-size sweep mode: the kernel count must equal the kernel size.
    pub kernel_sweep: bool,
    /// Random horizontal/vertical flips of training crops.
    pub flip: bool,
    /// Validation every this many steps (0 disables periodic validation).
    pub val_every: usize,
    /// SWA snapshots start at this fraction of `steps`; 1 disables SWA.
    pub swa_start: f64,
    pub swa_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let loss = LossWeights::default();
        Self {
            seed: 0,
            train_dir: None,
            val_dir: None,
            steps: 2000,
            patch1: 64,
            batch1: 4,
            patch2: 96,
            batch2: 2,
            phase1_frac: 0.5,
            lr: 1e-4,
            milestones: vec![0.6, 0.85],
            lr_gamma: 0.5,
            lambda: loss.lambda,
            alpha: loss.alpha,
            beta: loss.beta,
            gamma: loss.gamma,
            widths: [16, 32, 64],
            window: 8,
            hidden: 16,
            n_kernels: 5,
            kernel_size: 5,
            predictor_width: 8,
            d_min: 0.5,
            d_max: 8.0,
            disable_pac: false,
            disable_dikp: false,
            ddm_variant: DdmVariant::Full,
            kernel_sweep: false,
            flip: true,
            val_every: 250,
            swa_start: 0.75,
            swa_every: 25,
        }
    }
}

fn parse_value<T: FromStr>(v: &str) -> std::result::Result<T, String>
where
    T::Err: Display,
{
    v.parse::<T>().map_err(|e| format!("{v:?}: {e}"))
}

fn parse_list<T: FromStr>(v: &str) -> std::result::Result<Vec<T>, String>
where
    T::Err: Display,
{
    if v.trim().is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|p| parse_value(p.trim())).collect()
}

fn parse_triple<T: FromStr + Copy>(v: &str) -> std::result::Result<[T; 3], String>
where
    T::Err: Display,
{
    let items = parse_list::<T>(v)?;
    <[T; 3]>::try_from(items.as_slice()).map_err(|_| format!("expected three comma-separated values, got {v:?}"))
}

fn join<T: Display>(items: &[T]) -> String {
    items.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

fn path_value(v: &str) -> Option<PathBuf> {
    (!v.is_empty()).then(|| PathBuf::from(v))
}

impl TrainConfig {
    pub const KEYS: [&'static str; 32] = [
        "seed", "train_dir", "val_dir", "steps", "patch1", "batch1", "patch2", "batch2", "phase1_frac", "lr",
        "milestones", "lr_gamma", "lambda", "alpha", "beta", "gamma", "widths", "window", "hidden", "n_kernels",
        "kernel_size", "predictor_width", "d_min", "d_max", "disable_pac", "disable_dikp", "ddm_variant",
        "kernel_sweep", "flip", "val_every", "swa_start", "swa_every",
    ];

    fn set(&mut self, key: &str, v: &str) -> std::result::Result<(), String> {
        match key {
            "seed" => self.seed = parse_value(v)?,
            "train_dir" => self.train_dir = path_value(v),
            "val_dir" => self.val_dir = path_value(v),
            "steps" => self.steps = parse_value(v)?,
            "patch1" => self.patch1 = parse_value(v)?,
            "batch1" => self.batch1 = parse_value(v)?,
            "patch2" => self.patch2 = parse_value(v)?,
            "batch2" => self.batch2 = parse_value(v)?,
            "phase1_frac" => self.phase1_frac = parse_value(v)?,
            "lr" => self.lr = parse_value(v)?,
            "milestones" => self.milestones = parse_list(v)?,
            "lr_gamma" => self.lr_gamma = parse_value(v)?,
            "lambda" => self.lambda = parse_triple(v)?,
            "alpha" => self.alpha = parse_value(v)?,
            "beta" => self.beta = parse_value(v)?,
            "gamma" => self.gamma = parse_value(v)?,
            "widths" => self.widths = parse_triple(v)?,
            "window" => self.window = parse_value(v)?,
            "hidden" => self.hidden = parse_value(v)?,
            "n_kernels" => self.n_kernels = parse_value(v)?,
            "kernel_size" => self.kernel_size = parse_value(v)?,
            "predictor_width" => self.predictor_width = parse_value(v)?,
            "d_min" => self.d_min = parse_value(v)?,
            "d_max" => self.d_max = parse_value(v)?,
            "disable_pac" => self.disable_pac = parse_value(v)?,
            "disable_dikp" => self.disable_dikp = parse_value(v)?,
            "ddm_variant" => self.ddm_variant = parse_value(v)?,
            "kernel_sweep" => self.kernel_sweep = parse_value(v)?,
            "flip" => self.flip = parse_value(v)?,
            "val_every" => self.val_every = parse_value(v)?,
            "swa_start" => self.swa_start = parse_value(v)?,
            "swa_every" => self.swa_every = parse_value(v)?,
            _ => return Err(format!("unknown key {key:?}")),
        }
        Ok(())
    }

    fn entries(&self) -> Vec<(&'static str, String)> {
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        vec![
            ("seed", self.seed.to_string()),
            ("train_dir", path(&self.train_dir)),
            ("val_dir", path(&self.val_dir)),
            ("steps", self.steps.to_string()),
            ("patch1", self.patch1.to_string()),
            ("batch1", self.batch1.to_string()),
            ("patch2", self.patch2.to_string()),
            ("batch2", self.batch2.to_string()),
            ("phase1_frac", self.phase1_frac.to_string()),
            ("lr", self.lr.to_string()),
            ("milestones", join(&self.milestones)),
            ("lr_gamma", self.lr_gamma.to_string()),
            ("lambda", join(&self.lambda)),
            ("alpha", self.alpha.to_string()),
            ("beta", self.beta.to_string()),
            ("gamma", self.gamma.to_string()),
            ("widths", join(&self.widths)),
            ("window", self.window.to_string()),
            ("hidden", self.hidden.to_string()),
            ("n_kernels", self.n_kernels.to_string()),
            ("kernel_size", self.kernel_size.to_string()),
            ("predictor_width", self.predictor_width.to_string()),
            ("d_min", self.d_min.to_string()),
            ("d_max", self.d_max.to_string()),
            ("disable_pac", self.disable_pac.to_string()),
            ("disable_dikp", self.disable_dikp.to_string()),
            ("ddm_variant", self.ddm_variant.to_string()),
            ("kernel_sweep", self.kernel_sweep.to_string()),
            ("flip", self.flip.to_string()),
            ("val_every", self.val_every.to_string()),
            ("swa_start", self.swa_start.to_string()),
            ("swa_every", self.swa_every.to_string()),
        ]
    }

    /// Applies `key = value` lines on top of the defaults. Blank lines and
    /// lines starting with `#` are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply(text)?;
        Ok(cfg)
    }

    /// Applies `key = value` lines on top of `self`.
    pub fn apply(&mut self, text: &str) -> Result<()> {
        let mut seen = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let (key, value) = trimmed
                .split_once('=')
                .ok_or_else(|| Error::Config { line, message: format!("expected `key = value`, got {trimmed:?}") })?;
            let key = key.trim();
            if seen.contains(&key) {
                return Err(Error::Config { line, message: format!("duplicate key {key:?}") });
            }
            self.set(key, value.trim()).map_err(|message| Error::Config { line, message })?;
            seen.push(key);
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::parse(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    /// Every key, one `key = value` line each.
    pub fn to_config_string(&self) -> String {
        self.entries().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.model_config().validate()?;
        self.loss_weights().validate()?;
        if self.kernel_sweep && self.n_kernels != self.kernel_size {
            return Err(Error::invalid(format!(
                "kernel sweep needs as many kernels as the kernel size (N = {}, K = {})",
                self.n_kernels, self.kernel_size
            )));
        }
        if self.steps == 0 || self.batch1 == 0 || self.batch2 == 0 {
            return Err(Error::invalid("steps and batch sizes must be positive"));
        }
        for p in [self.patch1, self.patch2] {
            if p < 16 || p % 4 != 0 {
                return Err(Error::invalid(format!("patch size {p} must be a multiple of 4 and at least 16")));
            }
            if p / 4 < self.kernel_size {
                return Err(Error::invalid(format!(
                    "patch size {p} leaves a {}px quarter-scale crop, smaller than the {} px kernel",
                    p / 4,
                    self.kernel_size
                )));
            }
        }
        if !(0.0..=1.0).contains(&self.phase1_frac) || !(0.0..=1.0).contains(&self.swa_start) {
            return Err(Error::invalid("phase1_frac and swa_start must lie in [0, 1]"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) || !(self.lr_gamma > 0.0) {
            return Err(Error::invalid("lr and lr_gamma must be positive"));
        }
        if self.milestones.iter().any(|m| !(0.0..=1.0).contains(m)) || self.milestones.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::invalid("milestones must be ascending fractions in [0, 1]"));
        }
        if self.swa_every == 0 {
            return Err(Error::invalid("swa_every must be positive"));
        }
        Ok(())
    }

    pub fn model_config(&self) -> ModelConfig {
        let fikp = FikpConfig {
            channels: 3,
            n_kernels: self.n_kernels,
            kernel_size: self.kernel_size,
            width: self.predictor_width,
            d_min: self.d_min,
            d_max: self.d_max,
        };
        let dsrm = DsrmConfig {
            in_channels: 3,
            widths: self.widths,
            window: self.window,
            hidden: self.hidden,
            feature_channels: fikp.feature_channels(),
            variant: self.ddm_variant,
        };
        let toggles = FikpToggles { disable_pac: self.disable_pac, disable_dikp: self.disable_dikp };
        ModelConfig { fikp, dsrm, toggles }
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights { lambda: self.lambda, alpha: self.alpha, beta: self.beta, gamma: self.gamma }
    }

    pub fn milestone_steps(&self) -> Vec<usize> {
        self.milestones.iter().map(|m| (m * self.steps as f64).round() as usize).collect()
    }

    pub fn phase1_steps(&self) -> usize {
        (self.phase1_frac * self.steps as f64).round() as usize
    }

    /// `(patch, batch)` in effect at `step`.
    pub fn phase_at(&self, step: usize) -> (usize, usize) {
        if step < self.phase1_steps() {
            (self.patch1, self.batch1)
        } else {
            (self.patch2, self.batch2)
        }
    }

    pub fn swa_start_step(&self) -> usize {
        (self.swa_start * self.steps as f64).round() as usize
    }
}
