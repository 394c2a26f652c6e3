//! Central finite-difference verification of reverse-mode gradients.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autodiff::graph::{Graph, Var};
use crate::autodiff::params::{ParamId, ParamStore};
use crate::error::Result;
use crate::tensor::Tensor;

/// Builds the module output on a fresh graph from the given parameters.
pub trait Forward: Fn(&mut Graph<f64>, &ParamStore<f64>) -> Result<Var> {}
impl<F: Fn(&mut Graph<f64>, &ParamStore<f64>) -> Result<Var>> Forward for F {}

#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    /// Minimum number of scalars perturbed (all of them if fewer exist).
    pub samples: usize,
    pub step: f64,
    /// Steps tried for entries that fail at `step`. Smaller steps stop
    /// straddling a nearby rectifier kink; larger ones lift tiny gradients above the
    /// rounding noise of the difference quotient.
    pub retry_steps: Vec<f64>,
    pub tol: f64,
    /// Denominator floor of the relative error.
    pub floor: f64,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self { samples: 64, step: 1e-4, retry_steps: vec![1e-5, 1e-6, 1e-7, 1e-8, 1e-3, 1e-2], tol: 1e-3, floor: 1e-7, seed: 0 }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Mismatch {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradReport {
    pub name: String,
    pub checked: usize,
    pub retried: usize,
    pub max_rel_err: f64,
    pub worst: Option<Mismatch>,
    pub tol: f64,
    pub passed: bool,
}

impl std::fmt::Display for GradReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{:<24} {} checked={:<4} max_rel_err={:.3e} tol={:.0e}",
            self.name,
            if self.passed { "PASS" } else { "FAIL" },
            self.checked,
            self.max_rel_err,
            self.tol
        )?;
        if let (false, Some(w)) = (self.passed, &self.worst) {
            write!(f, " worst={}[{}] analytic={:.6e} numeric={:.6e}", w.param, w.index, w.analytic, w.numeric)?;
        }
        Ok(())
    }
}

pub fn rel_err(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

/// Compares backward-pass gradients of `sum(out ⊙ R)` (fixed random `R`)
/// against central differences on a random subset of parameter scalars that
/// touches every parameter tensor at least once.
pub fn grad_check(name: &str, forward: impl Forward, params: &ParamStore<f64>, cfg: &GradCheckConfig) -> Result<GradReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = params.clone();

    let mut g = Graph::new();
    let out = forward(&mut g, &params)?;
    let weights = Tensor::from_fn(g.shape(out), |_| rng.random_range(-1.0..1.0));
    let r = g.input(weights.clone());
    let prod = g.mul(out, r)?;
    let loss = g.sum(prod);
    params.zero_grads();
    g.backward(loss, &mut params)?;
    let analytic = params.clone();

    let eval = |p: &ParamStore<f64>| -> Result<f64> {
        let mut g = Graph::new();
        let out = forward(&mut g, p)?;
        Ok(g.value(out).data().iter().zip(weights.data()).map(|(a, b)| a * b).sum())
    };

    let picks = choose_scalars(&params, cfg.samples, &mut rng);
    let mut report = GradReport {
        name: name.to_string(),
        checked: picks.len(),
        retried: 0,
        max_rel_err: 0.0,
        worst: None,
        tol: cfg.tol,
        passed: true,
    };
    for (id, j) in picks {
        let a = analytic.grad(id).data()[j];
        let mut best: Option<(f64, f64)> = None;
        for (attempt, &h) in std::iter::once(&cfg.step).chain(&cfg.retry_steps).enumerate() {
            let orig = params.value(id).data()[j];
            params.value_mut(id).data_mut()[j] = orig + h;
            let fp = eval(&params)?;
            params.value_mut(id).data_mut()[j] = orig - h;
            let fm = eval(&params)?;
            params.value_mut(id).data_mut()[j] = orig;
            let n = (fp - fm) / (2.0 * h);
            let e = rel_err(a, n, cfg.floor);
            if best.is_none_or(|(be, _)| e < be) {
                best = Some((e, n));
            }
            if attempt == 1 {
                report.retried += 1;
            }
            if e <= cfg.tol {
                break;
            }
        }
        let (e, n) = best.expect("at least one step");
        if e > report.max_rel_err || report.worst.is_none() {
            report.max_rel_err = report.max_rel_err.max(e);
            report.worst = Some(Mismatch { param: params.name(id).to_string(), index: j, analytic: a, numeric: n });
        }
    }
    report.passed = report.max_rel_err <= cfg.tol;
    Ok(report)
}

fn choose_scalars(params: &ParamStore<f64>, samples: usize, rng: &mut impl Rng) -> Vec<(ParamId, usize)> {
    let all: Vec<(ParamId, usize)> = params.ids().flat_map(|id| (0..params.value(id).len()).map(move |j| (id, j))).collect();
    if all.len() <= samples {
        return all;
    }
    let mut picks: Vec<(ParamId, usize)> = params
        .ids()
        .filter(|&id| !params.value(id).is_empty())
        .map(|id| (id, rng.random_range(0..params.value(id).len())))
        .collect();
    for i in sample(rng, all.len(), all.len()) {
        if picks.len() >= samples {
            break;
        }
        if !picks.contains(&all[i]) {
            picks.push(all[i]);
        }
    }
    picks
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn elementwise_and_composite_pass() {
        let mut p = ParamStore::new();
        let id = p.insert("x", Tensor::from_fn(&[8], |i| i as f64 * 0.3 - 1.0)).unwrap();
        let good = grad_check(
            "tanh",
            |g: &mut Graph<f64>, s: &ParamStore<f64>| {
                let x = g.param(s, id);
                Ok(g.tanh(x))
            },
            &p,
            &GradCheckConfig::default(),
        )
        .unwrap();
        assert!(good.passed, "{good}");
        assert_eq!(good.checked, 8);

        let composite = grad_check(
            "composite",
            |g: &mut Graph<f64>, s: &ParamStore<f64>| {
                let x = g.param(s, id);
                let y = g.affine(x, 2.0, 0.0);
                let x2 = g.mul(x, x)?;
                g.add(y, x2)
            },
            &p,
            &GradCheckConfig::default(),
        )
        .unwrap();
        assert!(composite.passed, "{composite}");
    }

    #[test]
    fn relative_error_uses_floor() {
        assert_eq!(rel_err(1.0, 1.0, 1e-7), 0.0);
        assert!((rel_err(2.0, 1.0, 1e-7) - 0.5).abs() < 1e-15);
        assert!((rel_err(1e-12, 0.0, 1e-7) - 1e-5).abs() < 1e-18);
    }

    #[test]
    fn subset_touches_every_tensor() {
        let mut p = ParamStore::new();
        for k in 0..5 {
            p.insert(format!("p{k}"), Tensor::zeros(&[40])).unwrap();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let picks = choose_scalars(&p, 64, &mut rng);
        assert!(picks.len() >= 64);
        for id in p.ids() {
            assert!(picks.iter().any(|&(i, _)| i == id));
        }
    }
}
