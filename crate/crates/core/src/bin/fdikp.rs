use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fdikp::dataset::{load_dataset, write_dataset, SynthConfig};
use fdikp::io::{heatmap, read_png, write_fdkt, write_png};
use fdikp::pipeline::{ablate, ablation_grid, evaluate, gradcheck_suite, init_model, train_with_progress, AblationGrid, Checkpoint, Restorer, TrainConfig};
use fdikp::{fikp, Error, Result, Tensor};

#[derive(Parser)]
#[command(name = "fdikp", version, about = "Defocus deblurring with frequency-domain inverse kernel prediction")]
struct Cli {
    /// Plain-text `key = value` training configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Writes a synthetic sharp/blurry dataset to the output directory.
    Synth {
        #[arg(long, default_value_t = 20)]
        count: usize,
        #[arg(long, default_value_t = 96)]
        size: usize,
        #[arg(long, default_value_t = 1.0)]
        radius_min: f64,
        #[arg(long, default_value_t = 4.0)]
        radius_max: f64,
        #[arg(long, default_value_t = 0.002)]
        noise: f64,
    },
    /// Trains a model; writes logs and `final.fdkc`.
    Train {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Restores a single PNG.
    Deblur {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Writes PSNR/SSIM/MAE reports for a dataset directory.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Trains and evaluates every configuration of an ablation grid.
    Ablate {
        #[arg(long, default_value = "components")]
        grid: AblationGrid,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Dumps predicted inverse kernels, their spectra and the dilation map.
    KernelInspect {
        #[arg(long)]
        input: PathBuf,
        /// Uses freshly initialized parameters when omitted.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Finite-difference gradient checks of every module.
    Gradcheck,
}

#[derive(Args)]
struct DataArgs {
    #[arg(long)]
    train_dir: Option<PathBuf>,
    #[arg(long)]
    val_dir: Option<PathBuf>,
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct ModelArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Output equals input.
    #[arg(long)]
    identity: bool,
}

impl ModelArgs {
    fn restorer(&self) -> Result<Restorer> {
        match &self.checkpoint {
            Some(path) => Restorer::from_checkpoint(&Checkpoint::load(path)?),
            None => Ok(Restorer::Identity),
        }
    }
}

fn base_config(cli: &Cli) -> Result<TrainConfig> {
    let mut cfg = match &cli.config {
        Some(path) => TrainConfig::load(path)?,
        None => TrainConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn datasets(cfg: &mut TrainConfig, data: &DataArgs) -> Result<(Vec<fdikp::dataset::LoadedPair>, Vec<fdikp::dataset::LoadedPair>)> {
    if data.train_dir.is_some() {
        cfg.train_dir = data.train_dir.clone();
    }
    if data.val_dir.is_some() {
        cfg.val_dir = data.val_dir.clone();
    }
    let train_dir = cfg.train_dir.clone().ok_or_else(|| Error::InvalidArgument("no training directory (--train-dir or train_dir)".into()))?;
    let train = load_dataset(train_dir)?;
    let val = match &cfg.val_dir {
        Some(dir) => load_dataset(dir)?,
        None => Vec::new(),
    };
    Ok((train, val))
}

/// Nearest-neighbour enlargement so that tiny kernels stay visible.
fn enlarge(img: &Tensor<f64>, factor: usize) -> Result<Tensor<f64>> {
    let (c, h, w) = img.dims3()?;
    let (oh, ow) = (h * factor, w * factor);
    Ok(Tensor::from_fn(&[c, oh, ow], |i| {
        let (ch, r) = (i / (oh * ow), i % (oh * ow));
        img.at3(ch, r / ow / factor, r % ow / factor)
    }))
}

fn plane(t: &Tensor<f64>, i: usize) -> Result<Tensor<f64>> {
    let (_, h, w) = t.dims3()?;
    Tensor::new(vec![1, h, w], t.plane(i).to_vec())
}

fn kernel_inspect(cfg: &TrainConfig, input: &Path, checkpoint: Option<&Path>, out: &Path) -> Result<()> {
    let (model, store) = match checkpoint {
        Some(path) => {
            let ckpt = Checkpoint::load(path)?;
            (ckpt.model()?, ckpt.eval_store().clone())
        }
        None => init_model(cfg)?,
    };
    let store = store.cast::<f64>();
    let img = read_png(input)?;
    let kernels = fikp::dikp_predict(&img, &model.fikp, &store)?;
    let dmap = fikp::dilated_map(&img, &model.fikp, &store)?;
    std::fs::create_dir_all(out).map_err(|e| Error::Io { path: out.to_path_buf(), source: e })?;

    write_fdkt(out.join("kernels.fdkt"), kernels.kernels())?;
    write_fdkt(out.join("amplitude.fdkt"), kernels.amplitude())?;
    write_fdkt(out.join("phase.fdkt"), kernels.phase())?;
    write_fdkt(out.join("dilation.fdkt"), dmap.as_tensor())?;
    for i in 0..kernels.count() {
        for (name, t) in [("kernel", kernels.kernels()), ("amplitude", kernels.amplitude()), ("phase", kernels.phase())] {
            write_png(out.join(format!("{name}_{i}.png")), &enlarge(&heatmap(&plane(t, i)?)?, 16)?)?;
        }
        let k = kernels.kernel(i);
        let sum: f64 = k.data().iter().sum();
        println!("kernel {i}: sum {sum:.6}, centre {:.6}", k.data()[k.len() / 2]);
    }
    let d = dmap.as_tensor();
    write_png(out.join("dilation.png"), &heatmap(&d.clone().reshape(&[1, dmap.height(), dmap.width()])?)?)?;
    println!("dilation: min {:.4}, max {:.4}", d.min_value(), d.max_value());
    Ok(())
}

fn run(cli: &Cli) -> Result<bool> {
    let out = cli.out_dir.as_path();
    match &cli.command {
        Command::Synth { count, size, radius_min, radius_max, noise } => {
            let seed = base_config(cli)?.seed;
            let cfg = SynthConfig { seed, count: *count, size: *size, radius_min: *radius_min, radius_max: *radius_max, noise_sigma: *noise };
            write_dataset(out, &cfg)?;
            println!("wrote {count} pairs to {}", out.display());
        }
        Command::Train { data, steps } => {
            let mut cfg = base_config(cli)?;
            if let Some(s) = steps {
                cfg.steps = *s;
            }
            let (train, val) = datasets(&mut cfg, data)?;
            let every = (cfg.steps / 20).max(1);
            let outcome = train_with_progress(&cfg, &train, &val, Some(out), &mut |row| {
                if row.step % every == 0 {
                    println!("step {} lr {:e} loss {:.6}", row.step, row.lr, row.loss);
                }
            })?;
            if let Some(v) = outcome.val.last() {
                println!("validation psnr {:.3} dB (blurry {:.3} dB)", v.psnr, v.blurry_psnr);
            }
            println!("checkpoint {}", out.join("final.fdkc").display());
        }
        Command::Deblur { input, output, model } => {
            let img = read_png(input)?;
            write_png(output, &model.restorer()?.restore(&img)?)?;
        }
        Command::Eval { data, model } => {
            let pairs = load_dataset(data)?;
            let config = serde_json::json!({ "data": data, "checkpoint": model.checkpoint, "identity": model.identity });
            let report = evaluate(&pairs, &model.restorer()?, config)?;
            report.write(out)?;
            println!(
                "mean psnr {} dB ssim {:.6} mae {:.6}; blurry psnr {} dB",
                report.mean.psnr, report.mean.ssim, report.mean.mae, report.baseline.psnr
            );
        }
        Command::Ablate { grid, data, steps } => {
            let mut cfg = base_config(cli)?;
            if let Some(s) = steps {
                cfg.steps = *s;
            }
            let (train, val) = datasets(&mut cfg, data)?;
            let rows = ablate(&ablation_grid(&cfg, *grid), &train, &val, Some(out))?;
            for r in &rows {
                println!("{:<16} psnr {:.3} dB gain {:+.3} dB", r.name, r.psnr, r.gain());
            }
        }
        Command::KernelInspect { input, checkpoint } => {
            kernel_inspect(&base_config(cli)?, input, checkpoint.as_deref(), out)?;
        }
        Command::Gradcheck => {
            let reports = gradcheck_suite(cli.seed.unwrap_or(7))?;
            for r in &reports {
                println!("{r}");
            }
            return Ok(reports.iter().all(|r| r.passed));
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 2 } else { 1 })
        }
    }
}
