//! Desk-scale training run on a freshly synthesized set.
//!
//! cargo run --release --example train_desk -- [out_dir] [steps] [lr]

use std::path::PathBuf;
use std::time::Instant;

use fdikp::dataset::{load_dataset, write_dataset, SynthConfig};
use fdikp::pipeline::{evaluate, train_with_progress, Restorer, TrainConfig};

fn main() -> fdikp::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "target/train_desk".into()));
    let steps = args.next().and_then(|s| s.parse().ok()).unwrap_or(2000);
    // the library default of 1e-4 is too slow for a 2000-step run
    let lr = args.next().and_then(|s| s.parse().ok()).unwrap_or(2e-3);

    let train_dir = out.join("data/train");
    let val_dir = out.join("data/val");
    write_dataset(&train_dir, &SynthConfig { seed: 100, count: 200, ..SynthConfig::default() })?;
    write_dataset(&val_dir, &SynthConfig { seed: 200, count: 20, ..SynthConfig::default() })?;
    let train_set = load_dataset(&train_dir)?;
    let val_set = load_dataset(&val_dir)?;

    let cfg = TrainConfig { steps, lr, ..TrainConfig::default() };
    let start = Instant::now();
    let outcome = train_with_progress(&cfg, &train_set, &val_set, Some(&out.join("run")), &mut |row| {
        if row.step % 25 == 0 {
            println!("step {:5} loss {:.5} ({:.1}s)", row.step, row.loss, start.elapsed().as_secs_f64());
        }
    })?;
    for v in &outcome.val {
        println!("val step {:5} psnr {:.3} dB (blurry {:.3} dB)", v.step, v.psnr, v.blurry_psnr);
    }

    let report = evaluate(&val_set, &Restorer::from_checkpoint(&outcome.checkpoint)?, serde_json::json!({ "steps": steps }))?;
    report.write(out.join("run"))?;
    println!(
        "restored {:.3} dB, blurry {:.3} dB, gain {:+.3} dB in {:.1} min",
        report.mean.psnr,
        report.baseline.psnr,
        report.psnr_gain().unwrap_or(f64::NAN),
        start.elapsed().as_secs_f64() / 60.0
    );
    Ok(())
}
