//! Coefficient maps and hidden state from each DSRM bottleneck variant.

use fdikp::autodiff::{Graph, ParamStore};
use fdikp::dataset::{synth_pair, SynthConfig};
use fdikp::dsrm::{DdmVariant, DsrmConfig, DsrmParams};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> fdikp::Result<()> {
    let blurry = synth_pair(&SynthConfig { size: 32, ..SynthConfig::default() }, 1)?.blurry;
    for variant in DdmVariant::ALL {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut store = ParamStore::<f64>::new();
        let params = DsrmParams::new(&mut store, &mut rng, DsrmConfig { variant, ..DsrmConfig::default() })?;
        let mut g = Graph::new();
        let x = g.input(blurry.clone());
        let h0 = g.input(params.zero_hidden(32, 32));
        let (coeffs, hidden) = params.forward(&mut g, &store, x, h0)?;
        let c = g.value(coeffs);
        let h = g.value(hidden);
        println!(
            "{variant:<15} coeffs {:?} mean {:+.4}; hidden {:?} mean {:+.4}; {} parameters",
            c.shape(),
            c.mean(),
            h.shape(),
            h.mean(),
            store.ids().map(|id| store.value(id).len()).sum::<usize>()
        );
    }
    Ok(())
}
