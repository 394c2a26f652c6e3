//! A short component ablation on a small synthetic set.
//!
//! cargo run --release --example ablation -- [components|ddm|kernel_size] [steps]

use fdikp::dataset::{synth_dataset, LoadedPair, SynthConfig};
use fdikp::pipeline::{ablate, ablation_csv, ablation_grid, AblationGrid, TrainConfig};

fn pairs(seed: u64, count: usize) -> fdikp::Result<Vec<LoadedPair>> {
    Ok(synth_dataset(&SynthConfig { seed, count, size: 48, ..SynthConfig::default() })?
        .into_iter()
        .enumerate()
        .map(|(i, p)| LoadedPair { name: format!("{i:04}"), sharp: p.sharp, blurry: p.blurry })
        .collect())
}

fn main() -> fdikp::Result<()> {
    let mut args = std::env::args().skip(1);
    let grid: AblationGrid = args.next().map(|s| s.parse()).transpose()?.unwrap_or(AblationGrid::Components);
    let steps = args.next().and_then(|s| s.parse().ok()).unwrap_or(20);
    let base = TrainConfig {
        steps,
        patch1: 32,
        batch1: 2,
        patch2: 48,
        batch2: 1,
        widths: [8, 8, 16],
        window: 4,
        hidden: 8,
        val_every: 0,
        ..TrainConfig::default()
    };
    let rows = ablate(&ablation_grid(&base, grid), &pairs(1, 12)?, &pairs(2, 4)?, None)?;
    print!("{}", ablation_csv(&rows)?);
    Ok(())
}
