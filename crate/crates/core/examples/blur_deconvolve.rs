//! Disk blur of a synthetic image and its regularized inverse.
//!
//! cargo run --release --example blur_deconvolve -- [out_dir]

use std::path::PathBuf;

use fdikp::blur::{blur_uniform, disk_kernel};
use fdikp::conv::{conv2d_same, Boundary};
use fdikp::dataset::{synth_pair, SynthConfig};
use fdikp::fikp::analytic_inverse;
use fdikp::io::write_png;
use fdikp::metrics::psnr;

fn main() -> fdikp::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "target/blur_deconvolve".into()));
    std::fs::create_dir_all(&out).map_err(|e| fdikp::Error::Io { path: out.clone(), source: e })?;
    let sharp = synth_pair(&SynthConfig { size: 128, ..SynthConfig::default() }, 0)?.sharp;
    let kernel = disk_kernel(3.0)?;
    let blurry = blur_uniform(&sharp, &kernel, Boundary::Reflect)?;
    println!("blurry: {} dB", psnr(&sharp, &blurry, 1.0)?);
    write_png(out.join("sharp.png"), &sharp)?;
    write_png(out.join("blurry.png"), &blurry)?;

    for (eps, support) in [(1e-1, 15), (1e-1, 63), (3e-2, 63), (1e-2, 63), (1e-2, 15)] {
        let inverse = analytic_inverse(&kernel, 64, eps, support)?;
        let restored = conv2d_same(&blurry, &inverse, Boundary::Reflect)?.clamp(0.0, 1.0);
        // a narrow crop of a weakly regularized inverse loses much of its mass
        println!("eps {eps:e}, support {support}: tap sum {:.3}, {} dB", inverse.sum(), psnr(&sharp, &restored, 1.0)?);
        write_png(out.join(format!("wiener_{eps:e}_{support}.png")), &restored)?;
    }
    Ok(())
}
