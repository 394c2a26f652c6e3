//! PSNR, SSIM and MAE of blurry inputs against sharp targets, with the report
//! files that evaluation writes.
//!
//! cargo run --release --example metrics -- [out_dir]

use std::path::PathBuf;

use fdikp::dataset::{synth_dataset, LoadedPair, SynthConfig};
use fdikp::metrics::{mae, psnr, ssim};
use fdikp::pipeline::{evaluate, Restorer};

fn main() -> fdikp::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "target/metrics".into()));
    let pairs: Vec<LoadedPair> = synth_dataset(&SynthConfig { count: 5, size: 64, ..SynthConfig::default() })?
        .into_iter()
        .enumerate()
        .map(|(i, p)| LoadedPair { name: format!("{i:04}"), sharp: p.sharp, blurry: p.blurry })
        .collect();

    let p = &pairs[0];
    println!("psnr {} dB, ssim {:.6}, mae {:.6}", psnr(&p.sharp, &p.blurry, 1.0)?, ssim(&p.sharp, &p.blurry)?, mae(&p.sharp, &p.blurry)?);
    println!("self-similarity: psnr {}, ssim {:.12}", psnr(&p.sharp, &p.sharp, 1.0)?, ssim(&p.sharp, &p.sharp)?);

    let report = evaluate(&pairs, &Restorer::Identity, serde_json::json!({ "restorer": "identity" }))?;
    report.write(&out)?;
    print!("{}", report.to_csv()?);
    Ok(())
}
