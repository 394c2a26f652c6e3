use proptest::prelude::*;

use fdikp::blur::disk_kernel;
use fdikp::conv::{conv2d_same, Boundary};
use fdikp::dsrm::DdmVariant;
use fdikp::metrics::{mae, psnr, ssim};
use fdikp::pipeline::TrainConfig;
use fdikp::sampling::{resize_bilinear, resize_half};
use fdikp::spectral::{fft2, from_polar, ifft2, to_polar};
use fdikp::Tensor;

fn image(c: usize, h: usize, w: usize) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(0.0..1.0f64, c * h * w).prop_map(move |v| Tensor::new(vec![c, h, w], v).unwrap())
}

fn pair(c: usize, h: usize, w: usize) -> impl Strategy<Value = (Tensor, Tensor)> {
    (image(c, h, w), image(c, h, w))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn ssim_is_bounded_and_symmetric((a, b) in pair(3, 16, 16)) {
        let s = ssim(&a, &b).unwrap();
        prop_assert!((-1.0..=1.0 + 1e-12).contains(&s));
        prop_assert!((s - ssim(&b, &a).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn mae_is_a_metric((a, b) in pair(1, 8, 8), c in image(1, 8, 8)) {
        let ab = mae(&a, &b).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert!((ab - mae(&b, &a).unwrap()).abs() < 1e-15);
        prop_assert!(ab <= mae(&a, &c).unwrap() + mae(&c, &b).unwrap() + 1e-12);
    }

    #[test]
    fn psnr_falls_as_error_grows(a in image(1, 8, 8), noise in image(1, 8, 8), s in 0.01..0.5f64) {
        let err = |k: f64| a.zip_map(&noise, |x, n| x + k * (n - 0.5)).unwrap();
        let small = psnr(&a, &err(s), 1.0).unwrap().db();
        let large = psnr(&a, &err(2.0 * s), 1.0).unwrap().db();
        if let (Some(small), Some(large)) = (small, large) {
            // doubling every error lowers PSNR by 20·log10(2) dB
            prop_assert!((small - large - 20.0 * 2f64.log10()).abs() < 1e-6);
        }
    }

    #[test]
    fn fft_round_trips(plane in image(1, 12, 10)) {
        let spec = fft2(&plane).unwrap();
        let back = ifft2(&spec).unwrap().reshape(&[1, 12, 10]).unwrap();
        prop_assert!(back.max_abs_diff(&plane) < 1e-12);
        let polar = ifft2(&from_polar(&to_polar(&spec))).unwrap().reshape(&[1, 12, 10]).unwrap();
        prop_assert!(polar.max_abs_diff(&plane) < 1e-12);
    }

    #[test]
    fn convolution_is_linear((a, b) in pair(1, 10, 10), wa in -2.0..2.0f64, radius in 0.5..3.0f64) {
        let k = disk_kernel(radius).unwrap();
        let mix = a.zip_map(&b, |x, y| wa * x + y).unwrap();
        for boundary in [Boundary::Reflect, Boundary::Periodic, Boundary::Clamp] {
            let lhs = conv2d_same(&mix, k.weights(), boundary).unwrap();
            let ca = conv2d_same(&a, k.weights(), boundary).unwrap();
            let cb = conv2d_same(&b, k.weights(), boundary).unwrap();
            let rhs = ca.zip_map(&cb, |x, y| wa * x + y).unwrap();
            prop_assert!(lhs.max_abs_diff(&rhs) < 1e-12);
        }
    }

    #[test]
    fn disk_blur_keeps_constants(v in 0.0..1.0f64, radius in 0.0..4.0f64) {
        let k = disk_kernel(radius).unwrap();
        let flat = Tensor::full(&[1, 9, 9], v);
        let out = conv2d_same(&flat, k.weights(), Boundary::Reflect).unwrap();
        prop_assert!(out.max_abs_diff(&flat) < 1e-12);
    }

    #[test]
    fn resampling_keeps_range(img in image(2, 12, 8)) {
        for out in [resize_half(&img).unwrap(), resize_bilinear(&img, 7, 5).unwrap()] {
            prop_assert!(out.min_value() >= img.min_value() - 1e-12);
            prop_assert!(out.max_value() <= img.max_value() + 1e-12);
        }
    }

    #[test]
    fn config_round_trip_is_a_fixed_point(
        seed in any::<u64>(),
        steps in 1usize..5000,
        lr in 1e-6..1e-2f64,
        lambda in prop::array::uniform3(0.0..2.0f64),
        gamma in 0.0..1.0f64,
        k in prop::sample::select(vec![3usize, 5, 7]),
        variant in prop::sample::select(DdmVariant::ALL.to_vec()),
        disable_pac in any::<bool>(),
        milestones in prop::collection::vec(0.0..1.0f64, 0..4),
        train_dir in prop::option::of("[a-z]{1,8}(/[a-z0-9_]{1,6}){0,2}"),
    ) {
        let mut milestones = milestones;
        milestones.sort_by(f64::total_cmp);
        let cfg = TrainConfig {
            seed,
            steps,
            lr,
            lambda,
            gamma,
            n_kernels: k,
            kernel_size: k,
            kernel_sweep: true,
            ddm_variant: variant,
            disable_pac,
            milestones,
            train_dir: train_dir.map(Into::into),
            ..TrainConfig::default()
        };
        let text = cfg.to_config_string();
        let parsed = TrainConfig::parse(&text).unwrap();
        prop_assert_eq!(&parsed, &cfg);
        prop_assert_eq!(parsed.to_config_string(), text);
    }
}
