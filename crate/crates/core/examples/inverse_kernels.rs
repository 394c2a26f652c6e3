//! Inverse kernels and dilation map predicted by a freshly initialized FIKP,
//! then applied with position-adaptive convolution.

use fdikp::autodiff::ParamStore;
use fdikp::dataset::{synth_pair, SynthConfig};
use fdikp::fikp::{dikp_predict, dilated_map, pac_apply, DilatedMap, FikpConfig, FikpParams};
use fdikp::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> fdikp::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut store = ParamStore::<f64>::new();
    let params = FikpParams::new(&mut store, &mut rng, FikpConfig::default())?;
    let blurry = synth_pair(&SynthConfig { size: 48, ..SynthConfig::default() }, 0)?.blurry;

    let kernels = dikp_predict(&blurry, &params, &store)?;
    for i in 0..kernels.count() {
        let k = kernels.kernel(i);
        let back = kernels.reconstruct(i)?;
        println!(
            "kernel {i}: sum {:.6}, centre {:+.4}, record round trip {:.2e}",
            k.sum(),
            k.data()[k.len() / 2],
            back.max_abs_diff(&k)
        );
    }

    let dmap = dilated_map(&blurry, &params, &store)?;
    let d = dmap.as_tensor();
    println!("dilation map in [{:.3}, {:.3}], mean {:.3}", d.min_value(), d.max_value(), d.mean());

    let (_, h, w) = blurry.dims3()?;
    let red = Tensor::new(vec![h, w], blurry.plane(0).to_vec())?;
    let k0 = kernels.kernel(0);
    for (label, map) in [("learned", dmap.clone()), ("unit", DilatedMap::constant(h, w, 1.0)?), ("double", DilatedMap::constant(h, w, 2.0)?)] {
        let f = pac_apply(&red, &k0, &map)?;
        println!("PAC with {label} dilation: mean {:.5}, range [{:.4}, {:.4}]", f.mean(), f.min_value(), f.max_value());
    }
    Ok(())
}
