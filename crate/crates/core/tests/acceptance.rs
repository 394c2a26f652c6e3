//! Acceptance suite: one PASS/FAIL line per criterion A1–A9.
//!
//! `cargo test --release --test acceptance -- A1 A4` runs a subset. The exit
//! status is nonzero only when a criterion cannot be evaluated, or when
//! `FDIKP_ACCEPTANCE_STRICT=1` and some criterion fails. `FDIKP_WRITE_GOLDEN=1`
//! (re)writes the pinned A9 metrics from the current run.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use fdikp::autodiff::ParamStore;
use fdikp::blur::{blur_uniform, gaussian_kernel, BlurKernel};
use fdikp::conv::{conv2d_same, Boundary};
use fdikp::dataset::{load_dataset, write_dataset, LoadedPair, SynthConfig};
use fdikp::fikp::{analytic_inverse, analytic_inverse_response, pac_apply, DilatedMap};
use fdikp::metrics::{psnr, ssim, MetricsReport, Psnr};
use fdikp::pipeline::{ablate, ablation_csv, ablation_grid, evaluate, gradcheck_suite, train, AblationGrid, Checkpoint, Restorer, TrainConfig};
use fdikp::spectral::{fft2, ifft2, ifftshift, Spectrum};
use fdikp::Tensor;

type Outcome = Result<(bool, String), String>;

fn rand_plane(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Tensor {
    Tensor::from_fn(&[1, h, w], |_| rng.random_range(0.0..1.0))
}

fn naive_dft(plane: &[f64], h: usize, w: usize) -> Vec<Complex64> {
    let mut out = vec![Complex64::new(0.0, 0.0); h * w];
    for u in 0..h {
        for v in 0..w {
            let mut acc = Complex64::new(0.0, 0.0);
            for y in 0..h {
                for x in 0..w {
                    let t = -2.0 * PI * (((u * y) % h) as f64 / h as f64 + ((v * x) % w) as f64 / w as f64);
                    acc += plane[y * w + x] * Complex64::new(t.cos(), t.sin());
                }
            }
            out[u * w + v] = acc;
        }
    }
    out
}

fn embed(kernel: &[f64], ks: usize, h: usize, w: usize) -> Tensor {
    let half = ks / 2;
    let mut out = Tensor::zeros(&[1, h, w]);
    for i in 0..ks {
        for j in 0..ks {
            out.data_mut()[((i + h - half) % h) * w + (j + w - half) % w] = kernel[i * ks + j];
        }
    }
    out
}

fn a1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let n = 32;
    let (mut dft_err, mut trip_err, mut parseval_err) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..20 {
        let plane = rand_plane(&mut rng, n, n);
        let fast = fft2(&plane).map_err(|e| e.to_string())?;
        let slow = naive_dft(plane.data(), n, n);
        let scale = slow.iter().map(|z| z.norm()).fold(0.0, f64::max);
        for (a, b) in fast.data().iter().zip(&slow) {
            dft_err = dft_err.max((a - b).norm() / scale);
        }
        let back = ifft2(&fast).map_err(|e| e.to_string())?;
        trip_err = trip_err.max(back.data().iter().zip(plane.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
        let spatial: f64 = plane.data().iter().map(|v| v * v).sum();
        let spectral = fast.data().iter().map(|z| z.norm_sqr()).sum::<f64>() / (n * n) as f64;
        parseval_err = parseval_err.max((spatial - spectral).abs() / spatial);
    }
    let pass = dft_err <= 1e-9 && trip_err <= 1e-10 && parseval_err <= 1e-8;
    Ok((pass, format!("dft rel {dft_err:.2e} (≤1e-9), round trip {trip_err:.2e} (≤1e-10), Parseval rel {parseval_err:.2e} (≤1e-8)")))
}

fn a2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let n = 64;
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let img = rand_plane(&mut rng, n, n);
        let kernel = Tensor::from_fn(&[1, 5, 5], |_| rng.random_range(-1.0..1.0));
        let spatial = conv2d_same(&img, &kernel, Boundary::Periodic).map_err(|e| e.to_string())?;
        let a = fft2(&img).map_err(|e| e.to_string())?;
        let k = fft2(&embed(kernel.data(), 5, n, n)).map_err(|e| e.to_string())?;
        let product = a.data().iter().zip(k.data()).map(|(x, y)| x * y).collect();
        let spectral = ifft2(&Spectrum::new(n, n, product).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
        worst = worst.max(spatial.data().iter().zip(spectral.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max));
    }
    Ok((worst <= 1e-9, format!("periodic conv vs FFT product max {worst:.2e} (≤1e-9)")))
}

fn a3() -> Outcome {
    let n = 64;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let img = rand_plane(&mut rng, n, n);
    let kernel = gaussian_kernel(1.0, 9).map_err(|e| e.to_string())?;
    let blurred = blur_uniform(&img, &kernel, Boundary::Periodic).map_err(|e| e.to_string())?;
    let response = analytic_inverse_response(&kernel, n, 1e-8).map_err(|e| e.to_string())?;
    let r = fft2(&Tensor::new(vec![1, n, n], ifftshift(response.data(), n, n)).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let b = fft2(&blurred).map_err(|e| e.to_string())?;
    let product = b.data().iter().zip(r.data()).map(|(x, y)| x * y).collect();
    let restored = ifft2(&Spectrum::new(n, n, product).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let restored = restored.reshape(&[1, n, n]).map_err(|e| e.to_string())?;
    let db = psnr(&img, &restored, 1.0).map_err(|e| e.to_string())?.db().unwrap_or(f64::INFINITY);

    let delta = analytic_inverse(&BlurKernel::delta(), 16, 0.0, 5).map_err(|e| e.to_string())?;
    let exact = delta.data().iter().enumerate().all(|(i, &v)| v == if i == 12 { 1.0 } else { 0.0 });
    Ok((db >= 60.0 && exact, format!("Gaussian round trip {db:.2} dB (≥60), δ inverse exact: {exact}")))
}

/// Bilinear sample with coordinates clamped into the plane.
fn bilinear(plane: &[f64], h: usize, w: usize, y: f64, x: f64) -> f64 {
    let y = y.clamp(0.0, (h - 1) as f64);
    let x = x.clamp(0.0, (w - 1) as f64);
    let (y0, x0) = (y.floor() as usize, x.floor() as usize);
    let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
    let (fy, fx) = (y - y0 as f64, x - x0 as f64);
    let at = |r: usize, c: usize| plane[r * w + c];
    (at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx) * (1.0 - fy) + (at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx) * fy
}

fn a4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (h, w, k) = (24, 28, 5);
    let r = (k / 2) as isize;
    let plane = Tensor::from_fn(&[h, w], |_| rng.random_range(0.0..1.0));
    let kernel = Tensor::from_fn(&[k, k], |_| rng.random_range(-1.0..1.0));
    let p = plane.data();
    let kd = kernel.data();
    let run = |d: f64| pac_apply(&plane, &kernel, &DilatedMap::constant(h, w, d).unwrap()).map_err(|e| e.to_string());

    let (one, two, frac) = (run(1.0)?, run(2.0)?, run(1.5)?);
    let (mut e1, mut e2, mut e3) = (0.0f64, 0.0f64, 0.0f64);
    for y in 0..h as isize {
        for x in 0..w as isize {
            let idx = y as usize * w + x as usize;
            let (mut direct, mut atrous, mut gather) = (0.0, 0.0, 0.0);
            let interior = y >= 2 * r && y < h as isize - 2 * r && x >= 2 * r && x < w as isize - 2 * r;
            for i in -r..=r {
                for j in -r..=r {
                    let kv = kd[((i + r) * k as isize + j + r) as usize];
                    let sy = (y + i).clamp(0, h as isize - 1) as usize;
                    let sx = (x + j).clamp(0, w as isize - 1) as usize;
                    direct += kv * p[sy * w + sx];
                    if interior {
                        atrous += kv * p[(y + 2 * i) as usize * w + (x + 2 * j) as usize];
                    }
                    gather += kv * bilinear(p, h, w, y as f64 + 1.5 * i as f64, x as f64 + 1.5 * j as f64);
                }
            }
            e1 = e1.max((one.data()[idx] - direct).abs());
            if interior {
                e2 = e2.max((two.data()[idx] - atrous).abs());
            }
            e3 = e3.max((frac.data()[idx] - gather).abs());
        }
    }
    let pass = e1 <= 1e-12 && e2 <= 1e-12 && e3 <= 1e-10;
    Ok((pass, format!("D≡1 vs correlation {e1:.2e} (≤1e-12), D≡2 vs atrous {e2:.2e} (≤1e-12), D≡1.5 vs gather {e3:.2e} (≤1e-10)")))
}

struct Desk {
    _dir: tempfile::TempDir,
    train: Vec<LoadedPair>,
    val: Vec<LoadedPair>,
    golden: Vec<LoadedPair>,
    golden_dirs: [PathBuf; 2],
}

fn desk_data() -> Result<Desk, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let base = SynthConfig::default();
    let sets = [("train", 100, 200), ("val", 200, 20), ("golden_a", 300, 5), ("golden_b", 300, 5)];
    for (name, seed, count) in sets {
        write_dataset(dir.path().join(name), &SynthConfig { seed, count, ..base.clone() }).map_err(|e| e.to_string())?;
    }
    let load = |name: &str| load_dataset(dir.path().join(name)).map_err(|e| e.to_string());
    Ok(Desk {
        train: load("train")?,
        val: load("val")?,
        golden: load("golden_a")?,
        golden_dirs: [dir.path().join("golden_a"), dir.path().join("golden_b")],
        _dir: dir,
    })
}

/// Default tiny model (N = 5, K = 5, widths 16/32/64) on the desk schedule.
/// 1e-4 barely moves in 2000 steps, so the desk run uses a larger step size.
fn a5_config() -> TrainConfig {
    TrainConfig { seed: 0, steps: 2000, lr: 2e-3, ..TrainConfig::default() }
}

/// 20-step moving average of the loss over the first 200 steps: later windows
/// should sit below earlier ones.
fn early_trend(log: &[f64]) -> (f64, f64) {
    let window = |s: usize| log[s..s + 20].iter().sum::<f64>() / 20.0;
    let n = log.len().min(200);
    if n < 40 {
        return (f64::NAN, f64::NAN);
    }
    (window(0), window(n - 20))
}

fn a5(desk: &Desk, checkpoint: &mut Option<Checkpoint>) -> Outcome {
    let start = Instant::now();
    let cfg = a5_config();
    let outcome = train(&cfg, &desk.train, &desk.val, None).map_err(|e| e.to_string())?;
    let minutes = start.elapsed().as_secs_f64() / 60.0;
    let report = evaluate(&desk.val, &Restorer::from_checkpoint(&outcome.checkpoint).map_err(|e| e.to_string())?, serde_json::Value::Null)
        .map_err(|e| e.to_string())?;
    let gain = report.psnr_gain().unwrap_or(f64::NAN);
    let losses: Vec<f64> = outcome.log.iter().map(|r| r.loss).collect();
    let (first, last) = early_trend(&losses);
    let trace = outcome.val.iter().fold(String::new(), |mut s, v| {
        let _ = write!(s, " {}:{:+.2}", v.step, v.psnr - v.blurry_psnr);
        s
    });
    *checkpoint = Some(outcome.checkpoint);
    Ok((
        gain >= 1.0 && minutes <= 60.0,
        format!(
            "gain {gain:+.3} dB (≥+1.0; restored {}, blurry {}) in {minutes:.1} min (≤60); first-200 loss MA {first:.4} → {last:.4}; val gain by step{trace}",
            report.mean.psnr, report.baseline.psnr
        ),
    ))
}

fn a6() -> Outcome {
    let reports = gradcheck_suite(7).map_err(|e| e.to_string())?;
    let worst = reports.iter().map(|r| r.max_rel_err).fold(0.0, f64::max);
    let failed: Vec<_> = reports.iter().filter(|r| !r.passed).map(|r| r.name.clone()).collect();
    Ok((failed.is_empty(), format!("{} checks, worst rel err {worst:.2e} (≤1e-3), failed {failed:?}", reports.len())))
}

fn small_cfg() -> TrainConfig {
    TrainConfig {
        steps: 30,
        patch1: 32,
        batch1: 2,
        patch2: 48,
        batch2: 1,
        widths: [8, 8, 16],
        window: 4,
        hidden: 8,
        val_every: 0,
        ..TrainConfig::default()
    }
}

fn a7(desk: &Desk) -> Outcome {
    let train_set = &desk.train[..24];
    let val_set = &desk.val[..6];
    let mut notes = Vec::new();
    let mut pass = true;
    for grid in [AblationGrid::Components, AblationGrid::Ddm] {
        let rows = ablation_grid(&small_cfg(), grid);
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let first = ablate(&rows, train_set, val_set, Some(dir.path())).map_err(|e| e.to_string())?;
        let again = ablate(&rows, train_set, val_set, None).map_err(|e| e.to_string())?;
        let csv = ablation_csv(&first).map_err(|e| e.to_string())?;
        let same = csv == ablation_csv(&again).map_err(|e| e.to_string())?;
        let written = fs::read_to_string(dir.path().join("ablation.csv")).map_err(|e| e.to_string())? == csv;
        pass &= same && written && first.len() == rows.len();
        let deltas = first.iter().fold(String::new(), |mut s, r| {
            let _ = write!(s, " {}:{:+.3}", r.name, r.psnr - first[0].psnr);
            s
        });
        notes.push(format!("{grid} rows {} deterministic {same} csv {written}, Δ vs full (dB){deltas}", first.len()));
    }
    Ok((pass, notes.join("; ")))
}

fn a8() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let y = Tensor::from_fn(&[3, 32, 32], |_| rng.random_range(0.2..0.8));
    let p = psnr(&Tensor::zeros(&[3, 32, 32]), &Tensor::full(&[3, 32, 32], 0.1), 1.0).map_err(|e| e.to_string())?;
    let p_db = p.db().unwrap_or(f64::INFINITY);
    let s_self = ssim(&y, &y).map_err(|e| e.to_string())?;
    let zeros = Tensor::zeros(&[1, 32, 32]);
    let ones = Tensor::full(&[1, 32, 32], 1.0);
    let s_const = ssim(&zeros, &ones).map_err(|e| e.to_string())?;
    let closed = 1e-4 / (1.0 + 1e-4);
    let pass = p_db == 20.0 && (s_self - 1.0).abs() <= 1e-9 && (s_const - closed).abs() <= 1e-8;
    Ok((
        pass,
        format!(
            "PSNR uniform 0.1 error {p_db:?} dB (exactly 20), SSIM(x,x) {s_self:.12}, SSIM(0,1) {s_const:.6e} vs {closed:.6e}"
        ),
    ))
}

fn golden_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/a5_metrics.txt")
}

fn golden_lines(report: &MetricsReport) -> String {
    let bits = |p: Psnr| p.db().map_or("identical".to_string(), |d| format!("{:016x}", d.to_bits()));
    let mut out = String::from("# name psnr_bits ssim_bits mae_bits\n");
    for r in &report.rows {
        let _ = writeln!(out, "{} {} {:016x} {:016x}", r.name, bits(r.psnr), r.ssim.to_bits(), r.mae.to_bits());
    }
    out
}

fn tree_bytes(dir: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    let mut entries: Vec<_> = fs::read_dir(dir).map_err(|e| e.to_string())?.map(|e| e.map(|e| e.path())).collect::<Result<_, _>>().map_err(|e| e.to_string())?;
    entries.sort();
    entries
        .into_iter()
        .map(|p| Ok((p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).map_err(|e| e.to_string())?)))
        .collect()
}

fn a9(desk: &Desk, checkpoint: Option<&Checkpoint>) -> Outcome {
    let synth_same = tree_bytes(&desk.golden_dirs[0])? == tree_bytes(&desk.golden_dirs[1])?;

    let cfg = TrainConfig { steps: 6, ..small_cfg() };
    let a = train(&cfg, &desk.train[..8], &desk.val[..2], None).map_err(|e| e.to_string())?;
    let b = train(&cfg, &desk.train[..8], &desk.val[..2], None).map_err(|e| e.to_string())?;
    let bits = |s: &ParamStore<f32>| s.ids().flat_map(|id| s.value(id).data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()).collect::<Vec<_>>();
    let train_same = bits(&a.checkpoint.store) == bits(&b.checkpoint.store) && a.log == b.log;

    let restorer = Restorer::from_checkpoint(&a.checkpoint).map_err(|e| e.to_string())?;
    let e1 = evaluate(&desk.golden, &restorer, serde_json::Value::Null).map_err(|e| e.to_string())?;
    let e2 = evaluate(&desk.golden, &restorer, serde_json::Value::Null).map_err(|e| e.to_string())?;
    let eval_same = e1.to_csv().map_err(|e| e.to_string())? == e2.to_csv().map_err(|e| e.to_string())?;

    let golden = match checkpoint {
        None => "no A5 checkpoint in this run (run A5 with A9)".to_string(),
        Some(ckpt) => {
            let restorer = Restorer::from_checkpoint(ckpt).map_err(|e| e.to_string())?;
            let lines = golden_lines(&evaluate(&desk.golden, &restorer, serde_json::Value::Null).map_err(|e| e.to_string())?);
            let path = golden_path();
            if std::env::var("FDIKP_WRITE_GOLDEN").is_ok_and(|v| v == "1") {
                fs::create_dir_all(path.parent().unwrap()).map_err(|e| e.to_string())?;
                fs::write(&path, &lines).map_err(|e| e.to_string())?;
            }
            match fs::read_to_string(&path) {
                Ok(pinned) if pinned == lines => "golden metrics reproduced bitwise".to_string(),
                Ok(_) => "golden metrics differ from the pinned file".to_string(),
                Err(_) => format!("no pinned file at {}", path.display()),
            }
        }
    };
    let golden_ok = golden == "golden metrics reproduced bitwise";
    Ok((
        synth_same && train_same && eval_same && golden_ok,
        format!("synth identical {synth_same}, train identical {train_same}, evaluate identical {eval_same}; {golden}"),
    ))
}

fn main() {
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let wanted = |id: &str| filters.is_empty() || filters.iter().any(|f| f == id);
    let strict = std::env::var("FDIKP_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");

    let needs_data = ["A5", "A7", "A9"].iter().any(|id| wanted(id));
    let desk = if needs_data {
        match desk_data() {
            Ok(d) => Some(d),
            Err(e) => {
                println!("acceptance: could not synthesize the desk dataset: {e}");
                std::process::exit(1);
            }
        }
    } else {
        None
    };
    let mut checkpoint = None;

    let mut failures = 0;
    let mut errors = 0;
    let criteria = [
        ("A1", "spectral core", 10.0),
        ("A2", "convolution theorem", 10.0),
        ("A3", "exact deconvolution", 5.0),
        ("A4", "PAC reductions", 10.0),
        ("A5", "desk-scale training gate", f64::INFINITY),
        ("A6", "gradient suite", 900.0),
        ("A7", "ablation harness", f64::INFINITY),
        ("A8", "metric identities", f64::INFINITY),
        ("A9", "determinism", f64::INFINITY),
    ];
    for (id, title, limit) in criteria {
        if !wanted(id) {
            continue;
        }
        let start = Instant::now();
        let result = match id {
            "A1" => a1(),
            "A2" => a2(),
            "A3" => a3(),
            "A4" => a4(),
            "A5" => a5(desk.as_ref().unwrap(), &mut checkpoint),
            "A6" => a6(),
            "A7" => a7(desk.as_ref().unwrap()),
            "A8" => a8(),
            _ => a9(desk.as_ref().unwrap(), checkpoint.as_ref()),
        };
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok((pass, detail)) => {
                let pass = pass && secs < limit;
                if !pass {
                    failures += 1;
                }
                let bound = if limit.is_finite() { format!(", limit {limit:.0} s") } else { String::new() };
                println!("{id} {} {title}: {detail} [{secs:.1} s{bound}]", if pass { "PASS" } else { "FAIL" });
            }
            Err(e) => {
                errors += 1;
                println!("{id} FAIL {title}: error: {e} [{secs:.1} s]");
            }
        }
    }
    if errors > 0 || (strict && failures > 0) {
        std::process::exit(1);
    }
}
