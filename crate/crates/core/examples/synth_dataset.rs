//! Writes a seeded synthetic dataset and reads it back.
//!
//! cargo run --release --example synth_dataset -- [out_dir] [count]

use std::path::PathBuf;

use fdikp::dataset::{load_dataset, load_radius, write_dataset, SynthConfig};
use fdikp::metrics::ImageMetrics;

fn main() -> fdikp::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "target/synth_dataset".into()));
    let count = args.next().and_then(|s| s.parse().ok()).unwrap_or(8);
    let cfg = SynthConfig { seed: 7, count, ..SynthConfig::default() };
    write_dataset(&out, &cfg)?;
    for (i, pair) in load_dataset(&out)?.iter().enumerate() {
        let radius = load_radius(&out, i)?;
        let m = ImageMetrics::compute(&pair.name, &pair.sharp, &pair.blurry)?;
        println!("{}: max radius {:.2} px, blurry psnr {} dB, ssim {:.4}", pair.name, radius.max_radius(), m.psnr, m.ssim);
    }
    println!("wrote {count} pairs to {}", out.display());
    Ok(())
}
