//! Training objective: multi-scale sum of pixel and frequency losses.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::spectral::fft2;
use crate::tensor::{Real, Tensor};

/// Weights of the objective. Scale weights are ordered full, half, quarter.
/// `beta` (perceptual term) is carried for completeness and never used.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda: [f64; 3],
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { lambda: [1.0, 0.2, 0.1], alpha: 1.0, beta: 0.2, gamma: 0.2 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = self.lambda.iter().chain([&self.alpha, &self.beta, &self.gamma]);
        if all.clone().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::invalid("loss weights must be finite and >= 0"));
        }
        Ok(())
    }
}

pub fn l2_loss(y: &Tensor, y_hat: &Tensor) -> Result<f64> {
    y.expect_same_shape(y_hat)?;
    Ok(y.data().iter().zip(y_hat.data()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / y.len() as f64)
}

/// Mean absolute difference of the real and imaginary parts of the
/// per-channel 2-D spectra.
pub fn freq_loss(y: &Tensor, y_hat: &Tensor) -> Result<f64> {
    y.expect_same_shape(y_hat)?;
    let (c, h, w) = y.dims3()?;
    let diff = y.zip_map(y_hat, |a, b| a - b)?;
    let mut total = 0.0;
    for ch in 0..c {
        let spec = fft2(&Tensor::new(vec![h, w], diff.plane(ch).to_vec())?)?;
        total += spec.data().iter().map(|z| z.re.abs() + z.im.abs()).sum::<f64>();
    }
    Ok(total / (2 * c * h * w) as f64)
}

/// `α·l2 + γ·freq`.
pub fn single_scale_loss(y: &Tensor, y_hat: &Tensor, w: &LossWeights) -> Result<f64> {
    Ok(w.alpha * l2_loss(y, y_hat)? + w.gamma * freq_loss(y, y_hat)?)
}

/// `Σₛ λₛ·(α·l2 + γ·freq)` over (full, half, quarter).
pub fn multiscale_loss(targets: [&Tensor; 3], outputs: [&Tensor; 3], w: &LossWeights) -> Result<f64> {
    let mut total = 0.0;
    for s in 0..3 {
        total += w.lambda[s] * single_scale_loss(targets[s], outputs[s], w)?;
    }
    Ok(total)
}

/// Loss nodes of one multi-scale evaluation.
#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub total: Var,
    pub l2: [Var; 3],
    pub freq: [Var; 3],
}

pub fn l2_loss_node<T: Real>(g: &mut Graph<T>, y: Var, y_hat: Var) -> Result<Var> {
    let d = g.sub(y_hat, y)?;
    let sq = g.pow(d, 2.0);
    Ok(g.mean(sq))
}

pub fn freq_loss_node<T: Real>(g: &mut Graph<T>, y: Var, y_hat: Var) -> Result<Var> {
    let d = g.sub(y_hat, y)?;
    let z = g.complex(d)?;
    let spec = g.fft2(z, false)?;
    let a = g.abs(spec);
    Ok(g.mean(a))
}

pub fn multiscale_loss_node<T: Real>(g: &mut Graph<T>, targets: [Var; 3], outputs: [Var; 3], w: &LossWeights) -> Result<LossTerms> {
    let mut l2 = [targets[0]; 3];
    let mut freq = [targets[0]; 3];
    let mut total: Option<Var> = None;
    for s in 0..3 {
        l2[s] = l2_loss_node(g, targets[s], outputs[s])?;
        freq[s] = freq_loss_node(g, targets[s], outputs[s])?;
        let a = g.affine(l2[s], w.lambda[s] * w.alpha, 0.0);
        let b = g.affine(freq[s], w.lambda[s] * w.gamma, 0.0);
        let term = g.add(a, b)?;
        total = Some(match total {
            None => term,
            Some(t) => g.add(t, term)?,
        });
    }
    Ok(LossTerms { total: total.expect("three scales"), l2, freq })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{grad_check, GradCheckConfig, ParamStore};
    use crate::sampling::resize_half;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_img(seed: u64, shape: &[usize]) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(shape, |_| rng.random_range(0.0..1.0))
    }

    #[test]
    fn l2_identities() {
        let y = rand_img(1, &[3, 8, 8]);
        assert_eq!(l2_loss(&y, &y).unwrap(), 0.0);
        let off = y.map(|v| v + 0.1);
        assert!((l2_loss(&y, &off).unwrap() - 0.01).abs() < 1e-12);
        assert!(l2_loss(&y, &rand_img(2, &[3, 8, 7])).is_err());
    }

    #[test]
    fn l2_matches_double_loop() {
        let (y, z) = (rand_img(3, &[2, 5, 7]), rand_img(4, &[2, 5, 7]));
        let mut acc = 0.0;
        for c in 0..2 {
            for i in 0..5 {
                for j in 0..7 {
                    let d = y.at3(c, i, j) - z.at3(c, i, j);
                    acc += d * d;
                }
            }
        }
        assert!((l2_loss(&y, &z).unwrap() - acc / 70.0).abs() < 1e-12);
    }

    #[test]
    fn freq_loss_properties() {
        let y = rand_img(5, &[3, 8, 8]);
        let z = rand_img(6, &[3, 8, 8]);
        assert_eq!(freq_loss(&y, &y).unwrap(), 0.0);
        let a = freq_loss(&y, &z).unwrap();
        let b = freq_loss(&y.map(|v| 2.0 * v), &z.map(|v| 2.0 * v)).unwrap();
        assert!((b - 2.0 * a).abs() < 1e-9);
    }

    #[test]
    fn freq_loss_of_circular_shift_matches_dft() {
        let y = rand_img(7, &[1, 6, 6]);
        let shifted = Tensor::from_fn(&[1, 6, 6], |i| y.data()[(i / 6) * 6 + (i % 6 + 5) % 6]);
        let got = freq_loss(&y, &shifted).unwrap();
        let mut acc = 0.0;
        for u in 0..6 {
            for v in 0..6 {
                let (mut re, mut im) = (0.0, 0.0);
                for i in 0..6 {
                    for j in 0..6 {
                        let d = y.at3(0, i, j) - shifted.at3(0, i, j);
                        let ang = -2.0 * std::f64::consts::PI * ((u * i) as f64 / 6.0 + (v * j) as f64 / 6.0);
                        re += d * ang.cos();
                        im += d * ang.sin();
                    }
                }
                acc += re.abs() + im.abs();
            }
        }
        assert!(got > 0.0);
        assert!((got - acc / 72.0).abs() < 1e-12);
    }

    #[test]
    fn multiscale_composition() {
        let y = rand_img(8, &[3, 16, 16]);
        let y2 = resize_half(&y).unwrap();
        let y4 = resize_half(&y2).unwrap();
        let o = [rand_img(9, &[3, 16, 16]), rand_img(10, &[3, 8, 8]), rand_img(11, &[3, 4, 4])];
        let w = LossWeights::default();
        assert_eq!(multiscale_loss([&y, &y2, &y4], [&y, &y2, &y4], &w).unwrap(), 0.0);
        let total = multiscale_loss([&y, &y2, &y4], [&o[0], &o[1], &o[2]], &w).unwrap();
        let hand = single_scale_loss(&y, &o[0], &w).unwrap()
            + 0.2 * single_scale_loss(&y2, &o[1], &w).unwrap()
            + 0.1 * single_scale_loss(&y4, &o[2], &w).unwrap();
        assert!((total - hand).abs() < 1e-12);
        let only_full = LossWeights { lambda: [1.0, 0.0, 0.0], ..w.clone() };
        assert_eq!(
            multiscale_loss([&y, &y2, &y4], [&o[0], &o[1], &o[2]], &only_full).unwrap(),
            single_scale_loss(&y, &o[0], &w).unwrap()
        );
    }

    #[test]
    fn graph_loss_matches_standalone() {
        let t = [rand_img(12, &[3, 8, 8]), rand_img(13, &[3, 4, 4]), rand_img(14, &[3, 2, 2])];
        let o = [rand_img(15, &[3, 8, 8]), rand_img(16, &[3, 4, 4]), rand_img(17, &[3, 2, 2])];
        let w = LossWeights::default();
        let mut g = Graph::new();
        let tv = [g.input(t[0].clone()), g.input(t[1].clone()), g.input(t[2].clone())];
        let ov = [g.input(o[0].clone()), g.input(o[1].clone()), g.input(o[2].clone())];
        let terms = multiscale_loss_node(&mut g, tv, ov, &w).unwrap();
        let expect = multiscale_loss([&t[0], &t[1], &t[2]], [&o[0], &o[1], &o[2]], &w).unwrap();
        assert!((g.value(terms.total).data()[0] - expect).abs() < 1e-12);
    }

    #[test]
    fn multiscale_gradients() {
        let t = [rand_img(18, &[3, 8, 8]), rand_img(19, &[3, 4, 4]), rand_img(20, &[3, 2, 2])];
        let mut store = ParamStore::new();
        let ids = [
            store.insert("o0", rand_img(21, &[3, 8, 8])).unwrap(),
            store.insert("o1", rand_img(22, &[3, 4, 4])).unwrap(),
            store.insert("o2", rand_img(23, &[3, 2, 2])).unwrap(),
        ];
        let w = LossWeights::default();
        let report = grad_check(
            "multiscale_loss",
            |g: &mut Graph<f64>, s: &ParamStore<f64>| {
                let tv = [g.input(t[0].clone()), g.input(t[1].clone()), g.input(t[2].clone())];
                let ov = [g.param(s, ids[0]), g.param(s, ids[1]), g.param(s, ids[2])];
                Ok(multiscale_loss_node(g, tv, ov, &w)?.total)
            },
            &store,
            &GradCheckConfig { samples: 128, ..GradCheckConfig::default() },
        )
        .unwrap();
        assert!(report.passed, "{report}");
    }
}
