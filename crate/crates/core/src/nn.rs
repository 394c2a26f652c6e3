//! Layer building blocks over the differentiation graph.

use rand::Rng;

use crate::autodiff::{init_normal, Graph, ParamId, ParamStore, Var};
use crate::error::Result;
use crate::tensor::{Real, Tensor};

/// 2-D convolution layer with "same" zero padding for stride 1.
#[derive(Clone, Debug)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl Conv {
    /// He-normal weights scaled by `gain`, zero bias.
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        rng: &mut impl Rng,
        name: &str,
        cin: usize,
        cout: usize,
        ksize: usize,
        stride: usize,
        gain: f64,
    ) -> Result<Self> {
        let fan_in = cin * ksize * ksize;
        let weight = store.insert(format!("{name}.w"), init_normal(rng, &[cout, cin, ksize, ksize], fan_in, gain))?;
        let bias = store.insert(format!("{name}.b"), Tensor::zeros(&[cout]))?;
        Ok(Self { weight, bias, stride, pad: ksize / 2 })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        g.conv2d(x, w, Some(b), self.stride, self.pad)
    }
}

/// `x + conv₂(relu(conv₁(x)))`.
#[derive(Clone, Debug)]
pub struct ResBlock {
    pub conv1: Conv,
    pub conv2: Conv,
}

impl ResBlock {
    pub fn new<T: Real>(store: &mut ParamStore<T>, rng: &mut impl Rng, name: &str, channels: usize) -> Result<Self> {
        Ok(Self {
            conv1: Conv::new(store, rng, &format!("{name}.conv1"), channels, channels, 3, 1, 2f64.sqrt())?,
            conv2: Conv::new(store, rng, &format!("{name}.conv2"), channels, channels, 3, 1, 0.1)?,
        })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let h = self.conv1.forward(g, store, x)?;
        let h = g.relu(h);
        let h = self.conv2.forward(g, store, h)?;
        g.add(x, h)
    }
}
