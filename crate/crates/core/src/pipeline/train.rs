//! Training loop and checkpoints.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::eval::mean_psnr;
use super::model::FdikpModel;
use crate::autodiff::{adam_step, lr_schedule, AdamConfig, Graph, ParamStore, SwaAccumulator};
use crate::dataset::LoadedPair;
use crate::error::{Error, Result};
use crate::loss::{multiscale_loss_node, LossWeights};
use crate::sampling::resize_half;
use crate::tensor::Tensor;

/// Trained parameters with the configuration that built them.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub store: ParamStore<f32>,
    pub step: usize,
    pub config: TrainConfig,
    pub swa: Option<ParamStore<f32>>,
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    step: usize,
    has_swa: bool,
    config: TrainConfig,
}

fn swa_path(path: &Path) -> PathBuf {
    path.with_extension("swa.fdkc")
}

impl Checkpoint {
    pub fn model(&self) -> Result<FdikpModel> {
        FdikpModel::for_store(&self.store, self.config.model_config())
    }

    /// The SWA average when present, otherwise the final parameters.
    pub fn eval_store(&self) -> &ParamStore<f32> {
        self.swa.as_ref().unwrap_or(&self.store)
    }

    /// Writes `path` (FDKC), `path.json` with the configuration echo and,
    /// when present, the SWA average as `path.swa.fdkc`.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        self.store.save(path)?;
        if let Some(swa) = &self.swa {
            swa.save(swa_path(path))?;
        }
        let side = Sidecar { step: self.step, has_swa: self.swa.is_some(), config: self.config.clone() };
        let json = path.with_extension("json");
        fs::write(&json, serde_json::to_string_pretty(&side)?).map_err(|e| Error::io(&json, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let json = path.with_extension("json");
        let side: Sidecar = serde_json::from_str(&fs::read_to_string(&json).map_err(|e| Error::io(&json, e))?)?;
        let store = ParamStore::load(path)?;
        let swa = if side.has_swa { Some(ParamStore::load(swa_path(path))?) } else { None };
        let ckpt = Self { store, step: side.step, config: side.config, swa };
        ckpt.model()?;
        Ok(ckpt)
    }
}

/// One logged optimizer step; losses are batch means.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
    /// Per-scale terms ordered full, half, quarter.
    pub l2: [f64; 3],
    pub freq: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValLog {
    /// Number of optimizer steps taken before this validation.
    pub step: usize,
    pub psnr: f64,
    pub blurry_psnr: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: Vec<StepLog>,
    pub val: Vec<ValLog>,
}

/// Blurry and sharp crops of one batch element, in single precision.
#[derive(Clone, Debug, PartialEq)]
pub struct Crop {
    pub blurry: Tensor<f32>,
    pub sharp: Tensor<f32>,
}

/// Model and freshly initialized parameters for `cfg`.
pub fn init_model(cfg: &TrainConfig) -> Result<(FdikpModel, ParamStore<f32>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut store = ParamStore::new();
    let model = FdikpModel::new(&mut store, &mut rng, cfg.model_config())?;
    Ok((model, store))
}

/// Generator of crop positions, separate from initialization so that
/// configurations with different layouts see the same batches.
pub fn data_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    rng
}

fn crop(img: &Tensor<f64>, top: usize, left: usize, size: usize, flip_h: bool, flip_v: bool) -> Result<Tensor<f32>> {
    let (c, h, w) = img.dims3()?;
    if top + size > h || left + size > w {
        return Err(Error::invalid(format!("crop {size} at ({top}, {left}) exceeds {h}x{w}")));
    }
    Ok(Tensor::from_fn(&[c, size, size], |i| {
        let (ch, r) = (i / (size * size), i % (size * size));
        let (mut y, mut x) = (r / size, r % size);
        if flip_v {
            y = size - 1 - y;
        }
        if flip_h {
            x = size - 1 - x;
        }
        img.at3(ch, top + y, left + x) as f32
    }))
}

/// Draws the batch for `step`.
pub fn sample_batch(cfg: &TrainConfig, pairs: &[LoadedPair], rng: &mut ChaCha8Rng, step: usize) -> Result<Vec<Crop>> {
    let (patch, batch) = cfg.phase_at(step);
    (0..batch)
        .map(|_| {
            let p = &pairs[rng.random_range(0..pairs.len())];
            let (_, h, w) = p.sharp.dims3()?;
            if h < patch || w < patch {
                return Err(Error::invalid(format!("image {} is {h}x{w}, smaller than the {patch} px patch", p.name)));
            }
            let top = rng.random_range(0..=h - patch);
            let left = rng.random_range(0..=w - patch);
            let (fh, fv) = if cfg.flip { (rng.random_bool(0.5), rng.random_bool(0.5)) } else { (false, false) };
            Ok(Crop { blurry: crop(&p.blurry, top, left, patch, fh, fv)?, sharp: crop(&p.sharp, top, left, patch, fh, fv)? })
        })
        .collect()
}

/// Loss of one crop; with `backprop`, gradients are accumulated into `store`.
pub fn crop_loss(
    model: &FdikpModel,
    store: &mut ParamStore<f32>,
    item: &Crop,
    weights: &LossWeights,
    backprop: bool,
) -> Result<StepLog> {
    let mut g = Graph::<f32>::new();
    let x = g.input(item.blurry.clone());
    let out = model.forward(&mut g, store, x)?;
    let half = resize_half(&item.sharp)?;
    let quarter = resize_half(&half)?;
    let targets = [g.input(item.sharp.clone()), g.input(half), g.input(quarter)];
    let terms = multiscale_loss_node(&mut g, targets, out.outputs(), weights)?;
    let scalar = |v| g.value(v).data()[0] as f64;
    let row = StepLog {
        step: 0,
        lr: 0.0,
        loss: scalar(terms.total),
        l2: terms.l2.map(scalar),
        freq: terms.freq.map(scalar),
    };
    if backprop && row.loss.is_finite() {
        g.backward(terms.total, store)?;
    }
    Ok(row)
}

fn mean_rows(rows: &[StepLog], step: usize, lr: f64) -> StepLog {
    let n = rows.len() as f64;
    let avg = |f: &dyn Fn(&StepLog) -> f64| rows.iter().map(f).sum::<f64>() / n;
    StepLog {
        step,
        lr,
        loss: avg(&|r| r.loss),
        l2: [0, 1, 2].map(|s| avg(&|r| r.l2[s])),
        freq: [0, 1, 2].map(|s| avg(&|r| r.freq[s])),
    }
}

fn log_header(weights: &LossWeights) -> String {
    format!(
        "# lambda={},{},{} alpha={} beta={} gamma={}\nstep,lr,loss,l2_full,l2_half,l2_quarter,freq_full,freq_half,freq_quarter\n",
        weights.lambda[0], weights.lambda[1], weights.lambda[2], weights.alpha, weights.beta, weights.gamma
    )
}

fn log_line(r: &StepLog) -> String {
    format!(
        "{},{:e},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e}\n",
        r.step, r.lr, r.loss, r.l2[0], r.l2[1], r.l2[2], r.freq[0], r.freq[1], r.freq[2]
    )
}

struct Logs {
    dir: PathBuf,
    train: String,
    val: String,
}

impl Logs {
    fn flush(&self) -> Result<()> {
        for (name, body) in [("train_log.csv", &self.train), ("val_log.csv", &self.val)] {
            let path = self.dir.join(name);
            fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

pub fn train(cfg: &TrainConfig, train_set: &[LoadedPair], val_set: &[LoadedPair], out_dir: Option<&Path>) -> Result<TrainOutcome> {
    train_with_progress(cfg, train_set, val_set, out_dir, &mut |_| {})
}

/// Runs `cfg.steps` Adam steps on random crops of `train_set`. With an output
/// directory, writes `config.txt`, `train_log.csv`, `val_log.csv`,
/// `final.fdkc` and its sidecars. `progress` sees every step's log row.
pub fn train_with_progress(
    cfg: &TrainConfig,
    train_set: &[LoadedPair],
    val_set: &[LoadedPair],
    out_dir: Option<&Path>,
    progress: &mut dyn FnMut(&StepLog),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    let weights = cfg.loss_weights();
    let (model, mut store) = init_model(cfg)?;
    let mut rng = data_rng(cfg.seed);
    let milestones = cfg.milestone_steps();
    let adam = AdamConfig::default();
    let swa_start = cfg.swa_start_step();
    let mut swa = SwaAccumulator::new();

    let mut logs = match out_dir {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let path = dir.join("config.txt");
            fs::write(&path, cfg.to_config_string()).map_err(|e| Error::io(&path, e))?;
            Some(Logs { dir: dir.to_path_buf(), train: log_header(&weights), val: "step,psnr_db,blurry_psnr_db\n".into() })
        }
        None => None,
    };
    let blurry_psnr = if val_set.is_empty() { f64::NAN } else { mean_psnr(val_set, |p| Ok(p.blurry.clone()))? };

    let mut log = Vec::with_capacity(cfg.steps);
    let mut val = Vec::new();
    for step in 0..cfg.steps {
        let lr = lr_schedule(step, cfg.lr, &milestones, cfg.lr_gamma);
        let batch = sample_batch(cfg, train_set, &mut rng, step)?;
        store.zero_grads();
        let mut rows = Vec::with_capacity(batch.len());
        for item in &batch {
            let row = crop_loss(&model, &mut store, item, &weights, true)?;
            if !row.loss.is_finite() {
                if let Some(l) = &logs {
                    l.flush()?;
                }
                return Err(Error::NonFiniteLoss { step });
            }
            rows.push(row);
        }
        store.scale_grads(1.0 / batch.len() as f32);
        adam_step(&mut store, lr, adam);
        let row = mean_rows(&rows, step, lr);
        progress(&row);
        if let Some(l) = &mut logs {
            l.train.push_str(&log_line(&row));
        }
        log.push(row);

        let done = step + 1;
        if done > swa_start && cfg.swa_start < 1.0 && (done - swa_start).is_multiple_of(cfg.swa_every) {
            swa.add(&store)?;
        }
        let last = done == cfg.steps;
        if cfg.val_every > 0 && !val_set.is_empty() && (done % cfg.val_every == 0 || last) {
            let psnr = mean_psnr(val_set, |p| model.restore(&store, &p.blurry))?;
            if let Some(l) = &mut logs {
                l.val.push_str(&format!("{done},{psnr:.6},{blurry_psnr:.6}\n"));
                l.flush()?;
            }
            val.push(ValLog { step: done, psnr, blurry_psnr });
        }
    }

    let mut final_store = store;
    final_store.zero_grads();
    let checkpoint = Checkpoint { store: final_store, step: cfg.steps, config: cfg.clone(), swa: swa.average() };
    if let Some(l) = &logs {
        l.flush()?;
        checkpoint.save(l.dir.join("final.fdkc"))?;
    }
    Ok(TrainOutcome { checkpoint, log, val })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{synth_dataset, SynthConfig};

    pub(crate) fn tiny_cfg() -> TrainConfig {
        TrainConfig {
            steps: 4,
            patch1: 16,
            batch1: 2,
            patch2: 24,
            batch2: 1,
            widths: [4, 6, 8],
            window: 2,
            hidden: 4,
            n_kernels: 2,
            kernel_size: 3,
            predictor_width: 3,
            val_every: 2,
            swa_start: 0.5,
            swa_every: 1,
            lr: 1e-3,
            ..TrainConfig::default()
        }
    }

    pub(crate) fn tiny_pairs(seed: u64, count: usize) -> Vec<LoadedPair> {
        let cfg = SynthConfig { seed, count, size: 24, ..SynthConfig::default() };
        synth_dataset(&cfg)
            .unwrap()
            .into_iter()
            .enumerate()
            .map(|(i, p)| LoadedPair { name: format!("{i:04}"), sharp: p.sharp, blurry: p.blurry })
            .collect()
    }

    #[test]
    fn first_step_loss_reproducible_offline() {
        let cfg = tiny_cfg();
        let pairs = tiny_pairs(1, 3);
        let out = train(&cfg, &pairs, &[], None).unwrap();
        let (model, mut store) = init_model(&cfg).unwrap();
        let batch = sample_batch(&cfg, &pairs, &mut data_rng(cfg.seed), 0).unwrap();
        let rows: Vec<StepLog> =
            batch.iter().map(|c| crop_loss(&model, &mut store, c, &cfg.loss_weights(), false).unwrap()).collect();
        assert_eq!(mean_rows(&rows, 0, cfg.lr), out.log[0]);
    }

    #[test]
    fn deterministic_and_logged() {
        let cfg = tiny_cfg();
        let (train_set, val_set) = (tiny_pairs(2, 3), tiny_pairs(3, 2));
        let dir = tempfile::tempdir().unwrap();
        let a = train(&cfg, &train_set, &val_set, Some(dir.path())).unwrap();
        let b = train(&cfg, &train_set, &val_set, None).unwrap();
        assert_eq!(a.log, b.log);
        assert_eq!(a.checkpoint.store.encode(), b.checkpoint.store.encode());
        assert_eq!(a.val.iter().map(|v| v.step).collect::<Vec<_>>(), vec![2, 4]);
        assert!(a.checkpoint.swa.is_some());
        let log = fs::read_to_string(dir.path().join("train_log.csv")).unwrap();
        assert!(log.starts_with("# lambda=1,0.2,0.1 alpha=1 beta=0.2 gamma=0.2\nstep,lr,loss,"));
        assert_eq!(log.lines().count(), 2 + cfg.steps);
        let loaded = Checkpoint::load(dir.path().join("final.fdkc")).unwrap();
        assert_eq!(loaded.store.encode(), a.checkpoint.store.encode());
        assert_eq!(loaded.swa.unwrap().encode(), a.checkpoint.swa.unwrap().encode());
        assert_eq!(loaded.config, cfg);
        assert_eq!(TrainConfig::load(dir.path().join("config.txt")).unwrap(), cfg);
    }

    #[test]
    fn phases_switch_patch_size() {
        let cfg = tiny_cfg();
        let pairs = tiny_pairs(4, 2);
        let mut rng = data_rng(0);
        let first = sample_batch(&cfg, &pairs, &mut rng, 0).unwrap();
        let second = sample_batch(&cfg, &pairs, &mut rng, 3).unwrap();
        assert_eq!((first.len(), first[0].sharp.shape()), (2, &[3, 16, 16][..]));
        assert_eq!((second.len(), second[0].sharp.shape()), (1, &[3, 24, 24][..]));
    }

    #[test]
    fn non_finite_loss_aborts_with_step() {
        let cfg = tiny_cfg();
        let mut pairs = tiny_pairs(5, 2);
        for p in &mut pairs {
            p.blurry = p.blurry.map(|_| f64::NAN);
        }
        match train(&cfg, &pairs, &[], None).unwrap_err() {
            Error::NonFiniteLoss { step } => assert_eq!(step, 0),
            other => panic!("unexpected {other:?}"),
        }
    }
}
