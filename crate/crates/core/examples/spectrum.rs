//! 2-D FFT basics: Parseval, polar round trip and the convolution theorem.

use fdikp::blur::disk_kernel;
use fdikp::conv::{conv2d_same, Boundary};
use fdikp::spectral::{fft2, from_polar, ifft2, to_polar, Spectrum};
use fdikp::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> fdikp::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let n = 32;
    let plane = Tensor::from_fn(&[1, n, n], |_| rng.random_range(0.0..1.0));

    let spec = fft2(&plane)?;
    let energy: f64 = plane.data().iter().map(|v| v * v).sum();
    let spectral: f64 = spec.data().iter().map(|z| z.norm_sqr()).sum::<f64>() / (n * n) as f64;
    println!("Parseval: spatial {energy:.9}, spectral {spectral:.9}");

    let back = ifft2(&from_polar(&to_polar(&spec)))?;
    println!("polar round trip max error {:.3e}", back.reshape(&[1, n, n])?.max_abs_diff(&plane));

    // periodic spatial convolution against a spectral product
    let kernel = disk_kernel(2.0)?;
    let spatial = conv2d_same(&plane, kernel.weights(), Boundary::Periodic)?;
    let (ks, half) = (kernel.size(), kernel.size() / 2);
    let mut embedded = Tensor::zeros(&[1, n, n]);
    for i in 0..ks {
        for j in 0..ks {
            embedded.data_mut()[((i + n - half) % n) * n + (j + n - half) % n] = kernel.at(i, j);
        }
    }
    let k = fft2(&embedded)?;
    let product: Vec<_> = spec.data().iter().zip(k.data()).map(|(a, b)| a * b).collect();
    let via_fft = ifft2(&Spectrum::new(n, n, product)?)?.reshape(&[1, n, n])?;
    println!("convolution theorem max error {:.3e}", via_fft.max_abs_diff(&spatial));
    Ok(())
}
