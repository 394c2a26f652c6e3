use crate::autodiff::params::ParamStore;
use crate::error::{Error, Result};
use crate::tensor::Real;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// One bias-corrected Adam update from the gradients held in `store`.
/// The step counter inside the store is advanced and used as `t`.
pub fn adam_step<T: Real>(store: &mut ParamStore<T>, lr: f64, cfg: AdamConfig) {
    let (values, grads, first, second, step) = store.moments_mut();
    *step += 1;
    let t = *step as i32;
    let (b1, b2) = (T::c(cfg.beta1), T::c(cfg.beta2));
    let c1 = T::one() / (T::one() - b1.powi(t));
    let c2 = T::one() / (T::one() - b2.powi(t));
    let (lr, eps) = (T::c(lr), T::c(cfg.eps));
    for i in 0..values.len() {
        let g = grads[i].data();
        let m = first[i].data_mut();
        let v = second[i].data_mut();
        let w = values[i].data_mut();
        for j in 0..w.len() {
            m[j] = b1 * m[j] + (T::one() - b1) * g[j];
            v[j] = b2 * v[j] + (T::one() - b2) * g[j] * g[j];
            let mhat = m[j] * c1;
            let vhat = v[j] * c2;
            w[j] -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
}

/// Step decay: `lr0 · gamma^k` where `k` counts milestones `≤ step`.
pub fn lr_schedule(step: usize, lr0: f64, milestones: &[usize], gamma: f64) -> f64 {
    let passed = milestones.iter().filter(|&&m| step >= m).count();
    lr0 * gamma.powi(passed as i32)
}

/// Elementwise mean of parameter snapshots; optimizer moments are reset.
///
/// Computed as `w₀ + Σ(wᵢ − w₀)/n`, so identical snapshots average to
/// themselves bitwise and opposite pairs cancel exactly.
pub fn swa_average<T: Real>(snapshots: &[&ParamStore<T>]) -> Result<ParamStore<T>> {
    let (first, rest) = snapshots.split_first().ok_or_else(|| Error::invalid("no checkpoints to average"))?;
    if rest.iter().any(|s| !first.same_schema(s)) {
        return Err(Error::invalid("checkpoints have different parameter schemas"));
    }
    let mut out = (*first).clone();
    out.reset_moments();
    out.zero_grads();
    let n = T::c(snapshots.len() as f64);
    for id in first.ids() {
        let anchor = first.value(id).data();
        for (j, a) in out.value_mut(id).data_mut().iter_mut().enumerate() {
            let d: T = rest.iter().map(|s| s.value(id).data()[j] - anchor[j]).sum();
            *a = anchor[j] + d / n;
        }
    }
    Ok(out)
}

/// Running form of [`swa_average`] that does not keep the snapshots.
#[derive(Clone, Debug, Default)]
pub struct SwaAccumulator {
    anchor: Option<ParamStore<f64>>,
    diffs: Option<ParamStore<f64>>,
    count: usize,
}

impl SwaAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn add<T: Real>(&mut self, store: &ParamStore<T>) -> Result<()> {
        let wide = store.cast::<f64>();
        match (&self.anchor, &mut self.diffs) {
            (Some(anchor), Some(diffs)) => {
                if !anchor.same_schema(&wide) {
                    return Err(Error::invalid("SWA snapshot schema changed"));
                }
                for id in wide.ids() {
                    let base = anchor.value(id).data();
                    for ((d, &w), &b) in diffs.value_mut(id).data_mut().iter_mut().zip(wide.value(id).data()).zip(base) {
                        *d += w - b;
                    }
                }
            }
            _ => {
                let mut zeros = wide.clone();
                zeros.zero_values();
                self.anchor = Some(wide);
                self.diffs = Some(zeros);
            }
        }
        self.count += 1;
        Ok(())
    }

    pub fn average<T: Real>(&self) -> Option<ParamStore<T>> {
        let (anchor, diffs) = (self.anchor.as_ref()?, self.diffs.as_ref()?);
        let n = self.count as f64;
        let mut out = anchor.cast::<T>();
        for id in anchor.ids() {
            let (a, d) = (anchor.value(id).data(), diffs.value(id).data());
            for (j, o) in out.value_mut(id).data_mut().iter_mut().enumerate() {
                *o = T::c(a[j] + d[j] / n);
            }
        }
        out.reset_moments();
        out.zero_grads();
        Some(out)
    }
}
