//! Three-stage scale-recurrent forward pass.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, ParamStore, Var};
use crate::dsrm::{DsrmConfig, DsrmParams};
use crate::error::{Error, Result};
use crate::fikp::{FikpConfig, FikpParams, FikpToggles};
use crate::nn::Conv;
use crate::sampling::resize_half;
use crate::tensor::{Real, Tensor};

/// Everything that fixes the parameter layout and the forward pass.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[derive(Default)]
pub struct ModelConfig {
    pub fikp: FikpConfig,
    pub dsrm: DsrmConfig,
    pub toggles: FikpToggles,
}


impl ModelConfig {
    /// Small layout for finite-difference checks on 16×16 inputs.
    pub fn toy() -> Self {
        let fikp = FikpConfig { n_kernels: 2, kernel_size: 3, width: 3, ..FikpConfig::default() };
        let dsrm = DsrmConfig {
            widths: [4, 4, 6],
            window: 2,
            hidden: 3,
            feature_channels: fikp.feature_channels(),
            ..DsrmConfig::default()
        };
        Self { fikp, dsrm, toggles: FikpToggles::default() }
    }

    pub fn validate(&self) -> Result<()> {
        self.fikp.validate()?;
        if self.dsrm.in_channels != self.fikp.channels {
            return Err(Error::invalid("DSRM and FIKP disagree on the image channel count"));
        }
        if self.dsrm.feature_channels != self.fikp.feature_channels() {
            return Err(Error::invalid(format!(
                "DSRM must emit {} coefficient maps, configured for {}",
                self.fikp.feature_channels(),
                self.dsrm.feature_channels
            )));
        }
        Ok(())
    }
}

/// Nodes produced by one stage.
#[derive(Clone, Copy, Debug)]
pub struct StageOutput {
    /// Restored image at the stage scale, unclipped.
    pub y: Var,
    pub coeffs: Var,
    pub features: Var,
    pub hidden: Var,
}

/// Stages ordered coarse to fine: quarter, half, full.
#[derive(Clone, Copy, Debug)]
pub struct FdikpOutput {
    pub stages: [StageOutput; 3],
}

impl FdikpOutput {
    /// Outputs ordered full, half, quarter (the loss-weight order).
    pub fn outputs(&self) -> [Var; 3] {
        [self.stages[2].y, self.stages[1].y, self.stages[0].y]
    }
}

#[derive(Clone, Debug)]
pub struct FdikpModel {
    pub cfg: ModelConfig,
    pub fikp: FikpParams,
    pub dsrm: DsrmParams,
    pub fusion: Conv,
}

impl FdikpModel {
    pub fn new<T: Real>(store: &mut ParamStore<T>, rng: &mut impl Rng, cfg: ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let fikp = FikpParams::new(store, rng, cfg.fikp.clone())?;
        let dsrm = DsrmParams::new(store, rng, cfg.dsrm.clone())?;
        let fusion = Conv::new(store, rng, "fusion", cfg.fikp.feature_channels(), cfg.fikp.channels, 1, 1, 0.1)?;
        Ok(Self { cfg, fikp, dsrm, fusion })
    }

    /// Rebuilds the layout for `cfg` and checks it against a loaded store.
    pub fn for_store<T: Real>(store: &ParamStore<T>, cfg: ModelConfig) -> Result<Self> {
        let mut fresh = ParamStore::<T>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let model = Self::new(&mut fresh, &mut rng, cfg)?;
        if !fresh.same_schema(store) {
            return Err(Error::invalid("checkpoint parameters do not match the model configuration"));
        }
        Ok(model)
    }

    /// `x` is `(C, H, W)`; every stage sees the blurry input resampled to its
    /// scale, the previous stage's output and the resized hidden state.
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<FdikpOutput> {
        let full = g.value(x).clone();
        let (c, h, w) = full.dims3()?;
        if c != self.cfg.fikp.channels {
            return Err(Error::shape(format!("expected {} channels, got {:?}", self.cfg.fikp.channels, full.shape())));
        }
        if h < 4 || w < 4 {
            return Err(Error::invalid(format!("image {h}x{w} is too small for three scales")));
        }
        let half = resize_half(&full)?;
        let quarter = resize_half(&half)?;
        let inputs = [g.input(quarter), g.input(half), x];

        let mut stages = Vec::with_capacity(3);
        let mut prev: Option<(Var, Var)> = None;
        for xs in inputs {
            let (_, sh, sw) = g.value(xs).dims3()?;
            let (prev_y, hidden) = match prev {
                None => (xs, g.input(self.dsrm.zero_hidden(sh, sw))),
                Some((y, hid)) => (g.resize(y, sh, sw)?, g.resize(hid, sh, sw)?),
            };
            let features = self.fikp.forward(g, store, xs, prev_y, &self.cfg.toggles)?;
            let (coeffs, hidden) = self.dsrm.forward(g, store, xs, hidden)?;
            let weighted = g.mul(coeffs, features)?;
            let fused = self.fusion.forward(g, store, weighted)?;
            let y = g.add(fused, xs)?;
            stages.push(StageOutput { y, coeffs, features, hidden });
            prev = Some((y, hidden));
        }
        Ok(FdikpOutput { stages: [stages[0], stages[1], stages[2]] })
    }

    /// Full-resolution restoration clipped to `[0, 1]`, computed in precision `T`.
    pub fn restore<T: Real>(&self, store: &ParamStore<T>, blurry: &Tensor<f64>) -> Result<Tensor<f64>> {
        let mut g = Graph::<T>::new();
        let x = g.input(blurry.cast());
        let out = self.forward(&mut g, store, x)?;
        Ok(g.value(out.stages[2].y).cast::<f64>().clamp(0.0, 1.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{grad_check, GradCheckConfig};

    fn toy_cfg() -> ModelConfig {
        ModelConfig::toy()
    }

    fn rand_img(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Tensor<f64> {
        Tensor::from_fn(&[3, h, w], |_| rng.random_range(0.0..1.0))
    }

    #[test]
    fn output_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::<f64>::new();
        let model = FdikpModel::new(&mut store, &mut rng, toy_cfg()).unwrap();
        let mut g = Graph::new();
        let x = g.input(rand_img(&mut rng, 16, 20));
        let out = model.forward(&mut g, &store, x).unwrap();
        let [y, y2, y4] = out.outputs();
        assert_eq!(g.shape(y), &[3, 16, 20]);
        assert_eq!(g.shape(y2), &[3, 8, 10]);
        assert_eq!(g.shape(y4), &[3, 4, 5]);
        assert_eq!(g.shape(out.stages[2].coeffs), &[12, 16, 20]);
    }

    #[test]
    fn deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::<f64>::new();
        let model = FdikpModel::new(&mut store, &mut rng, toy_cfg()).unwrap();
        let x = rand_img(&mut rng, 16, 16);
        let a = model.restore(&store, &x).unwrap();
        let b = model.restore(&store, &x).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_parameters_give_the_residual_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::<f64>::new();
        let model = FdikpModel::new(&mut store, &mut rng, toy_cfg()).unwrap();
        store.zero_values();
        let x0 = rand_img(&mut rng, 16, 16);
        let mut g = Graph::new();
        let x = g.input(x0.clone());
        let out = model.forward(&mut g, &store, x).unwrap();
        let half = resize_half(&x0).unwrap();
        let quarter = resize_half(&half).unwrap();
        assert_eq!(g.value(out.stages[2].y), &x0);
        assert_eq!(g.value(out.stages[1].y), &half);
        assert_eq!(g.value(out.stages[0].y), &quarter);
    }

    #[test]
    fn layout_mismatch_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::<f64>::new();
        FdikpModel::new(&mut store, &mut rng, toy_cfg()).unwrap();
        assert!(FdikpModel::for_store(&store, toy_cfg()).is_ok());
        let mut other = toy_cfg();
        other.fikp.width = 4;
        assert!(FdikpModel::for_store(&store, other).is_err());
        let mut bad = toy_cfg();
        bad.dsrm.feature_channels = 5;
        assert!(FdikpModel::new(&mut ParamStore::<f64>::new(), &mut rng, bad).is_err());
    }

    #[test]
    fn end_to_end_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut store = ParamStore::<f64>::new();
        let model = FdikpModel::new(&mut store, &mut rng, toy_cfg()).unwrap();
        let x0 = rand_img(&mut rng, 16, 16);
        let report = grad_check(
            "fdikp_forward",
            |g: &mut Graph<f64>, s: &ParamStore<f64>| {
                let x = g.input(x0.clone());
                let out = model.forward(g, s, x)?;
                let [y, y2, y4] = out.outputs();
                let a = g.mean(y2);
                let b = g.mean(y4);
                let t = g.add(a, b)?;
                let m = g.sum(y);
                let m = g.affine(m, 1.0 / 256.0, 0.0);
                g.add(t, m)
            },
            &store,
            &GradCheckConfig { samples: 96, ..GradCheckConfig::default() },
        )
        .unwrap();
        assert!(report.passed, "{report}");
    }
}
