//! Finite-difference checks of every learnable module, in double precision.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::model::{FdikpModel, ModelConfig};
use crate::autodiff::{grad_check, GradCheckConfig, GradReport, Graph, ParamStore};
use crate::dsrm::{DdmVariant, DsrmConfig, DsrmParams};
use crate::error::Result;
use crate::fikp::{FikpConfig, FikpParams, FikpToggles};
use crate::loss::{multiscale_loss_node, LossWeights};
use crate::tensor::Tensor;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

/// Zero-initialized biases over inputs that a ReLU has zeroed put
/// pre-activations exactly on the kink, where no finite difference agrees with
/// any subgradient. Checks therefore run at a nearby generic point.
fn jitter_biases(store: &mut ParamStore<f64>, rng: &mut ChaCha8Rng) {
    let ids: Vec<_> = store.ids().filter(|&id| store.name(id).ends_with(".b")).collect();
    for id in ids {
        for v in store.value_mut(id).data_mut() {
            *v += rng.random_range(-0.05..0.05);
        }
    }
}

fn fikp_checks(seed: u64, cfg: &GradCheckConfig, out: &mut Vec<GradReport>) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let params = FikpParams::new(&mut store, &mut rng, FikpConfig { width: 4, ..FikpConfig::default() })?;
    jitter_biases(&mut store, &mut rng);
    let img = rand_tensor(&mut rng, &[3, 8, 8], 0.0, 1.0);
    let prev = rand_tensor(&mut rng, &[3, 8, 8], 0.0, 1.0);
    let variants = [
        ("fikp", FikpToggles::default()),
        ("fikp_disable_pac", FikpToggles { disable_pac: true, disable_dikp: false }),
        ("fikp_disable_dikp", FikpToggles { disable_pac: false, disable_dikp: true }),
    ];
    for (name, toggles) in variants {
        out.push(grad_check(
            name,
            |g: &mut Graph<f64>, s: &ParamStore<f64>| {
                let a = g.input(img.clone());
                let b = g.input(prev.clone());
                params.forward(g, s, a, b, &toggles)
            },
            &store,
            cfg,
        )?);
    }
    // kernels with respect to the image, through both spectrum branches
    let mut inputs = ParamStore::new();
    let id = inputs.insert("image", img.clone())?;
    out.push(grad_check(
        "dikp_image",
        |g: &mut Graph<f64>, s: &ParamStore<f64>| {
            let x = g.param(s, id);
            Ok(params.dikp(g, &store, x)?.kernels)
        },
        &inputs,
        cfg,
    )?);
    Ok(())
}

fn dsrm_checks(seed: u64, cfg: &GradCheckConfig, out: &mut Vec<GradReport>) -> Result<()> {
    for variant in DdmVariant::ALL {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let dcfg = DsrmConfig { widths: [4, 6, 8], window: 4, hidden: 4, feature_channels: 6, variant, ..DsrmConfig::default() };
        let params = DsrmParams::new(&mut store, &mut rng, dcfg)?;
        jitter_biases(&mut store, &mut rng);
        let img = rand_tensor(&mut rng, &[3, 16, 16], 0.0, 1.0);
        let hidden = rand_tensor(&mut rng, &[4, 16, 16], -1.0, 1.0);
        out.push(grad_check(
            &format!("dsrm_{variant}"),
            |g: &mut Graph<f64>, s: &ParamStore<f64>| {
                let x = g.input(img.clone());
                let h = g.input(hidden.clone());
                let (c, h2) = params.forward(g, s, x, h)?;
                g.concat(&[c, h2])
            },
            &store,
            &GradCheckConfig { samples: cfg.samples.max(96), ..cfg.clone() },
        )?);
    }
    Ok(())
}

fn loss_check(seed: u64, cfg: &GradCheckConfig, out: &mut Vec<GradReport>) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shapes = [[3, 16, 16], [3, 8, 8], [3, 4, 4]];
    let targets = shapes.map(|s| rand_tensor(&mut rng, &s, 0.0, 1.0));
    let mut store = ParamStore::new();
    let mut ids = Vec::new();
    for (i, s) in shapes.iter().enumerate() {
        ids.push(store.insert(format!("output{i}"), rand_tensor(&mut rng, s, 0.0, 1.0))?);
    }
    let weights = LossWeights::default();
    out.push(grad_check(
        "multiscale_loss",
        |g: &mut Graph<f64>, s: &ParamStore<f64>| {
            let t = [g.input(targets[0].clone()), g.input(targets[1].clone()), g.input(targets[2].clone())];
            let o = [g.param(s, ids[0]), g.param(s, ids[1]), g.param(s, ids[2])];
            Ok(multiscale_loss_node(g, t, o, &weights)?.total)
        },
        &store,
        &GradCheckConfig { samples: cfg.samples.max(128), ..cfg.clone() },
    )?);
    Ok(())
}

fn model_check(seed: u64, cfg: &GradCheckConfig, out: &mut Vec<GradReport>) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let model = FdikpModel::new(&mut store, &mut rng, ModelConfig::toy())?;
    jitter_biases(&mut store, &mut rng);
    let img = rand_tensor(&mut rng, &[3, 16, 16], 0.0, 1.0);
    out.push(grad_check(
        "fdikp_forward",
        |g: &mut Graph<f64>, s: &ParamStore<f64>| {
            let x = g.input(img.clone());
            let [y, y2, y4] = model.forward(g, s, x)?.outputs();
            let parts = [g.reshape(y, &[768])?, g.reshape(y2, &[192])?, g.reshape(y4, &[48])?];
            g.concat(&parts)
        },
        &store,
        &GradCheckConfig { samples: cfg.samples.max(96), ..cfg.clone() },
    )?);
    Ok(())
}

/// Runs the FIKP (three toggle settings plus the image gradient), DSRM (all
/// bottleneck variants), loss and end-to-end 16×16 checks.
pub fn gradcheck_suite(seed: u64) -> Result<Vec<GradReport>> {
    let cfg = GradCheckConfig { seed, ..GradCheckConfig::default() };
    let mut out = Vec::new();
    fikp_checks(seed, &cfg, &mut out)?;
    dsrm_checks(seed, &cfg, &mut out)?;
    loss_check(seed, &cfg, &mut out)?;
    model_check(seed, &cfg, &mut out)?;
    Ok(out)
}
