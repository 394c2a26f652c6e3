//! Evaluation against sharp targets and ablation grids.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::model::FdikpModel;
use super::train::{train, Checkpoint};
use crate::autodiff::ParamStore;
use crate::dataset::LoadedPair;
use crate::dsrm::DdmVariant;
use crate::error::{Error, Result};
use crate::metrics::{psnr, ImageMetrics, MetricsReport};
use crate::tensor::Tensor;

/// Maps a blurry image to a restored one.
#[derive(Clone, Debug)]
pub enum Restorer {
    /// Returns the input unchanged.
    Identity,
    Model { model: FdikpModel, store: ParamStore<f32> },
}

impl Restorer {
    /// Uses the SWA average when the checkpoint has one.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        Ok(Self::Model { model: ckpt.model()?, store: ckpt.eval_store().clone() })
    }

    pub fn restore(&self, blurry: &Tensor<f64>) -> Result<Tensor<f64>> {
        match self {
            Self::Identity => Ok(blurry.clone()),
            Self::Model { model, store } => model.restore(store, blurry),
        }
    }
}

/// Mean PSNR (dB, peak 1) of `f(pair)` against the sharp images. Identical
/// pairs are skipped.
pub(crate) fn mean_psnr(pairs: &[LoadedPair], f: impl Fn(&LoadedPair) -> Result<Tensor<f64>>) -> Result<f64> {
    let mut values = Vec::with_capacity(pairs.len());
    for p in pairs {
        if let Some(db) = psnr(&p.sharp, &f(p)?, 1.0)?.db() {
            values.push(db);
        }
    }
    Ok(values.iter().sum::<f64>() / values.len().max(1) as f64)
}

/// Per-image metrics of the restorer's outputs and of the blurry inputs.
pub fn evaluate(pairs: &[LoadedPair], restorer: &Restorer, config: serde_json::Value) -> Result<MetricsReport> {
    if pairs.is_empty() {
        return Err(Error::invalid("evaluation set is empty"));
    }
    let mut rows = Vec::with_capacity(pairs.len());
    let mut baseline = Vec::with_capacity(pairs.len());
    for p in pairs {
        rows.push(ImageMetrics::compute(&p.name, &p.sharp, &restorer.restore(&p.blurry)?)?);
        baseline.push(ImageMetrics::compute(&p.name, &p.sharp, &p.blurry)?);
    }
    Ok(MetricsReport::new(rows, baseline, config))
}

/// Named ablation grids.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationGrid {
    /// full, disable_pac, disable_dikp.
    Components,
    /// One row per bottleneck variant.
    Ddm,
    /// K ∈ {3, 5, 7} with as many kernels as the kernel size.
    KernelSize,
}

impl AblationGrid {
    pub const ALL: [AblationGrid; 3] = [Self::Components, Self::Ddm, Self::KernelSize];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Components => "components",
            Self::Ddm => "ddm",
            Self::KernelSize => "kernel_size",
        }
    }
}

impl fmt::Display for AblationGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AblationGrid {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|g| g.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown ablation grid {s:?} (components, ddm, kernel_size)")))
    }
}

/// Named configurations of `grid`, all derived from `base` with its seed.
pub fn ablation_grid(base: &TrainConfig, grid: AblationGrid) -> Vec<(String, TrainConfig)> {
    match grid {
        AblationGrid::Components => vec![
            ("full".into(), TrainConfig { disable_pac: false, disable_dikp: false, ..base.clone() }),
            ("disable_pac".into(), TrainConfig { disable_pac: true, disable_dikp: false, ..base.clone() }),
            ("disable_dikp".into(), TrainConfig { disable_pac: false, disable_dikp: true, ..base.clone() }),
        ],
        AblationGrid::Ddm => DdmVariant::ALL
            .into_iter()
            .map(|v| (v.as_str().to_string(), TrainConfig { ddm_variant: v, ..base.clone() }))
            .collect(),
        AblationGrid::KernelSize => [3, 5, 7]
            .into_iter()
            .map(|k| {
                (format!("k{k}"), TrainConfig { kernel_size: k, n_kernels: k, kernel_sweep: true, ..base.clone() })
            })
            .collect(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub name: String,
    pub disable_pac: bool,
    pub disable_dikp: bool,
    pub ddm_variant: DdmVariant,
    pub n_kernels: usize,
    pub kernel_size: usize,
    pub psnr: f64,
    pub ssim: f64,
    pub mae: f64,
    pub blurry_psnr: f64,
}

impl AblationRow {
    pub fn gain(&self) -> f64 {
        self.psnr - self.blurry_psnr
    }
}

/// Trains and evaluates each configuration on the same data. With an output
/// directory, each row gets a subdirectory and `ablation.csv` is written.
pub fn ablate(
    rows: &[(String, TrainConfig)],
    train_set: &[LoadedPair],
    val_set: &[LoadedPair],
    out_dir: Option<&Path>,
) -> Result<Vec<AblationRow>> {
    let mut out = Vec::with_capacity(rows.len());
    for (name, cfg) in rows {
        let sub = out_dir.map(|d| d.join(name));
        let outcome = train(cfg, train_set, val_set, sub.as_deref())?;
        let report = evaluate(val_set, &Restorer::from_checkpoint(&outcome.checkpoint)?, serde_json::to_value(cfg)?)?;
        if let Some(dir) = &sub {
            report.write(dir)?;
        }
        out.push(AblationRow {
            name: name.clone(),
            disable_pac: cfg.disable_pac,
            disable_dikp: cfg.disable_dikp,
            ddm_variant: cfg.ddm_variant,
            n_kernels: cfg.n_kernels,
            kernel_size: cfg.kernel_size,
            psnr: report.mean.psnr.db().unwrap_or(f64::INFINITY),
            ssim: report.mean.ssim,
            mae: report.mean.mae,
            blurry_psnr: report.baseline.psnr.db().unwrap_or(f64::INFINITY),
        });
    }
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("ablation.csv");
        fs::write(&path, ablation_csv(&out)?).map_err(|e| Error::io(&path, e))?;
    }
    Ok(out)
}

/// One row per configuration plus its PSNR difference from the first row.
pub fn ablation_csv(rows: &[AblationRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "name", "disable_pac", "disable_dikp", "ddm_variant", "n_kernels", "kernel_size", "psnr_db", "ssim", "mae",
        "blurry_psnr_db", "gain_db", "delta_vs_first_db",
    ])?;
    let reference = rows.first().map(|r| r.psnr).unwrap_or(0.0);
    for r in rows {
        w.write_record([
            r.name.clone(),
            r.disable_pac.to_string(),
            r.disable_dikp.to_string(),
            r.ddm_variant.to_string(),
            r.n_kernels.to_string(),
            r.kernel_size.to_string(),
            format!("{:.6}", r.psnr),
            format!("{:.6}", r.ssim),
            format!("{:.6}", r.mae),
            format!("{:.6}", r.blurry_psnr),
            format!("{:.6}", r.gain()),
            format!("{:.6}", r.psnr - reference),
        ])?;
    }
    String::from_utf8(w.into_inner().map_err(|e| Error::invalid(e.to_string()))?).map_err(|e| Error::invalid(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{synth_dataset, SynthConfig};

    fn pairs(seed: u64, count: usize, size: usize) -> Vec<LoadedPair> {
        let cfg = SynthConfig { seed, count, size, ..SynthConfig::default() };
        synth_dataset(&cfg)
            .unwrap()
            .into_iter()
            .enumerate()
            .map(|(i, p)| LoadedPair { name: format!("{i:04}"), sharp: p.sharp, blurry: p.blurry })
            .collect()
    }

    fn tiny() -> TrainConfig {
        TrainConfig {
            steps: 2,
            patch1: 16,
            batch1: 1,
            patch2: 16,
            batch2: 1,
            widths: [4, 4, 4],
            window: 2,
            hidden: 2,
            n_kernels: 1,
            kernel_size: 3,
            predictor_width: 2,
            val_every: 0,
            swa_start: 1.0,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn identity_reproduces_baseline() {
        let set = pairs(1, 3, 16);
        let r = evaluate(&set, &Restorer::Identity, serde_json::Value::Null).unwrap();
        assert_eq!(r.rows, r.baseline_rows);
        assert_eq!(r.mean, r.baseline);
        assert_eq!(r.psnr_gain(), Some(0.0));
    }

    #[test]
    fn means_are_row_means() {
        let set = pairs(2, 4, 16);
        let ckpt = train(&tiny(), &set, &[], None).unwrap().checkpoint;
        let r = evaluate(&set, &Restorer::from_checkpoint(&ckpt).unwrap(), serde_json::Value::Null).unwrap();
        let n = r.rows.len() as f64;
        let p: f64 = r.rows.iter().map(|x| x.psnr.db().unwrap()).sum::<f64>() / n;
        let s: f64 = r.rows.iter().map(|x| x.ssim).sum::<f64>() / n;
        let m: f64 = r.rows.iter().map(|x| x.mae).sum::<f64>() / n;
        assert!((r.mean.psnr.db().unwrap() - p).abs() < 1e-9);
        assert!((r.mean.ssim - s).abs() < 1e-9);
        assert!((r.mean.mae - m).abs() < 1e-9);
        assert!(evaluate(&[], &Restorer::Identity, serde_json::Value::Null).is_err());
    }

    #[test]
    fn grids() {
        let base = TrainConfig::default();
        let names: Vec<String> = ablation_grid(&base, AblationGrid::Ddm).into_iter().map(|r| r.0).collect();
        assert_eq!(names, ["full", "spatial_only", "frequency_only", "dual_branch"]);
        for (_, cfg) in ablation_grid(&base, AblationGrid::KernelSize) {
            assert_eq!(cfg.n_kernels, cfg.kernel_size);
            cfg.validate().unwrap();
        }
        let comp = ablation_grid(&base, AblationGrid::Components);
        assert!(comp[1].1.disable_pac && !comp[1].1.disable_dikp);
        assert!(comp.iter().all(|(_, c)| c.seed == base.seed));
        assert_eq!("kernel_size".parse::<AblationGrid>().unwrap(), AblationGrid::KernelSize);
        assert!("everything".parse::<AblationGrid>().is_err());
    }

    #[test]
    fn single_row_matches_train_and_evaluate() {
        let (train_set, val_set) = (pairs(3, 2, 16), pairs(4, 2, 16));
        let cfg = tiny();
        let rows = ablate(&[("only".into(), cfg.clone())], &train_set, &val_set, None).unwrap();
        let ckpt = train(&cfg, &train_set, &val_set, None).unwrap().checkpoint;
        let r = evaluate(&val_set, &Restorer::from_checkpoint(&ckpt).unwrap(), serde_json::Value::Null).unwrap();
        assert_eq!(rows[0].psnr, r.mean.psnr.db().unwrap());
        assert_eq!(rows[0].ssim, r.mean.ssim);
        let again = ablate(&[("only".into(), cfg)], &train_set, &val_set, None).unwrap();
        assert_eq!(rows, again);
        let csv = ablation_csv(&rows).unwrap();
        assert!(csv.starts_with("name,disable_pac,"));
        assert_eq!(csv.lines().count(), 2);
    }
}
