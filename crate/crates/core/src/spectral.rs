//! Two-dimensional discrete Fourier transforms and polar spectrum decomposition.
//!
//! Convention: the forward transform is unnormalized and the inverse carries
//! the `1/(H·W)` factor, so `ifft2(fft2(x)) == x`. Extents need not be powers
//! of two.

use std::any::{Any, TypeId};
use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::Arc;

use num_complex::Complex;
use rustfft::{Fft, FftDirection, FftPlanner};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

pub type Complex64 = Complex<f64>;

/// Imaginary residue tolerated by [`ifft2`] before a spectrum is declared non-Hermitian.
pub const IMAG_RESIDUE_TOL: f64 = 1e-9;

thread_local! {
    static PLANNERS: RefCell<HashMap<TypeId, Box<dyn Any>>> = RefCell::new(HashMap::new());
}

fn plan<T: Real>(len: usize, direction: FftDirection) -> Arc<dyn Fft<T>> {
    PLANNERS.with(|cell| {
        let mut map = cell.borrow_mut();
        let entry = map
            .entry(TypeId::of::<T>())
            .or_insert_with(|| Box::new(FftPlanner::<T>::new()));
        let planner = entry.downcast_mut::<FftPlanner<T>>().expect("planner type");
        planner.plan_fft(len, direction)
    })
}

/// In-place unnormalized 2-D DFT of a row-major `h × w` complex plane.
/// `inverse` flips the exponent sign but does not scale.
pub fn dft2_in_place<T: Real>(data: &mut [Complex<T>], h: usize, w: usize, inverse: bool) {
    debug_assert_eq!(data.len(), h * w);
    let dir = if inverse { FftDirection::Inverse } else { FftDirection::Forward };
    if w > 1 {
        let row_fft = plan::<T>(w, dir);
        let mut scratch = vec![Complex::new(T::zero(), T::zero()); row_fft.get_inplace_scratch_len()];
        for row in data.chunks_exact_mut(w) {
            row_fft.process_with_scratch(row, &mut scratch);
        }
    }
    if h > 1 {
        let col_fft = plan::<T>(h, dir);
        let mut scratch = vec![Complex::new(T::zero(), T::zero()); col_fft.get_inplace_scratch_len()];
        let mut col = vec![Complex::new(T::zero(), T::zero()); h];
        for x in 0..w {
            for y in 0..h {
                col[y] = data[y * w + x];
            }
            col_fft.process_with_scratch(&mut col, &mut scratch);
            for y in 0..h {
                data[y * w + x] = col[y];
            }
        }
    }
}

/// Moves the zero-frequency bin of an `h × w` plane to `(h/2, w/2)`.
pub fn fftshift<T: Copy>(plane: &[T], h: usize, w: usize) -> Vec<T> {
    roll(plane, h, w, h / 2, w / 2)
}

/// Inverse of [`fftshift`]; differs from it for odd extents.
pub fn ifftshift<T: Copy>(plane: &[T], h: usize, w: usize) -> Vec<T> {
    roll(plane, h, w, h - h / 2, w - w / 2)
}

/// Circular shift: output `(y, x)` takes input `(y - dy, x - dx)` modulo the extents.
pub(crate) fn roll<T: Copy>(plane: &[T], h: usize, w: usize, dy: usize, dx: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        let sy = (y + h - dy % h) % h;
        for x in 0..w {
            let sx = (x + w - dx % w) % w;
            out.push(plane[sy * w + sx]);
        }
    }
    out
}

/// Complex frequency plane of one channel.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum {
    height: usize,
    width: usize,
    data: Vec<Complex64>,
}

impl Spectrum {
    pub fn new(height: usize, width: usize, data: Vec<Complex64>) -> Result<Self> {
        if height * width != data.len() || data.is_empty() {
            return Err(Error::shape(format!(
                "spectrum {height}x{width} cannot hold {} bins",
                data.len()
            )));
        }
        Ok(Self { height, width, data })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self { height, width, data: vec![Complex64::new(0.0, 0.0); height * width] }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn at(&self, row: usize, col: usize) -> Complex64 {
        self.data[row * self.width + col]
    }
}

/// Amplitude/phase decomposition of a [`Spectrum`].
#[derive(Clone, Debug, PartialEq)]
pub struct PolarSpectrum {
    pub height: usize,
    pub width: usize,
    /// Modulus per bin, nonnegative.
    pub amplitude: Vec<f64>,
    /// Principal argument per bin in `[-π, π]`; zero where the amplitude is zero.
    pub phase: Vec<f64>,
}

fn plane_dims(plane: &Tensor) -> Result<(usize, usize)> {
    let (c, h, w) = plane.dims3()?;
    if c != 1 {
        return Err(Error::shape(format!("expected a single plane, got {c} channels")));
    }
    if h == 0 || w == 0 {
        return Err(Error::invalid("empty plane"));
    }
    Ok((h, w))
}

/// Forward, unnormalized 2-D DFT of a real plane.
pub fn fft2(plane: &Tensor) -> Result<Spectrum> {
    let (h, w) = plane_dims(plane)?;
    let mut data: Vec<Complex64> = plane.data().iter().map(|&v| Complex64::new(v, 0.0)).collect();
    dft2_in_place(&mut data, h, w, false);
    Ok(Spectrum { height: h, width: w, data })
}

/// Normalized inverse 2-D DFT of a spectrum that is expected to be real in space.
pub fn ifft2(spec: &Spectrum) -> Result<Tensor> {
    let data = ifft2_complex(spec);
    let scale = data.iter().map(|z| z.re.abs()).fold(1.0, f64::max);
    let residue = data.iter().map(|z| z.im.abs()).fold(0.0, f64::max);
    if residue > IMAG_RESIDUE_TOL * scale {
        return Err(Error::NonHermitian { residue });
    }
    Tensor::new(vec![spec.height, spec.width], data.iter().map(|z| z.re).collect())
}

/// Normalized inverse 2-D DFT keeping the imaginary part.
pub fn ifft2_complex(spec: &Spectrum) -> Vec<Complex64> {
    let mut data = spec.data.clone();
    dft2_in_place(&mut data, spec.height, spec.width, true);
    let norm = 1.0 / (spec.height * spec.width) as f64;
    for z in &mut data {
        *z *= norm;
    }
    data
}

pub fn to_polar(spec: &Spectrum) -> PolarSpectrum {
    let amplitude = spec.data.iter().map(|z| z.norm()).collect();
    let phase = spec
        .data
        .iter()
        .map(|z| if z.re == 0.0 && z.im == 0.0 { 0.0 } else { z.im.atan2(z.re) })
        .collect();
    PolarSpectrum { height: spec.height, width: spec.width, amplitude, phase }
}

pub fn from_polar(polar: &PolarSpectrum) -> Spectrum {
    let data = polar
        .amplitude
        .iter()
        .zip(&polar.phase)
        .map(|(&a, &p)| Complex64::from_polar(a, p))
        .collect();
    Spectrum { height: polar.height, width: polar.width, data }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_plane(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Tensor {
        Tensor::new(vec![h, w], (0..h * w).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn delta_has_flat_unit_spectrum() {
        let mut data = vec![0.0; 64];
        data[0] = 1.0;
        let s = fft2(&Tensor::new(vec![8, 8], data).unwrap()).unwrap();
        let p = to_polar(&s);
        assert!(p.amplitude.iter().all(|&a| (a - 1.0).abs() < 1e-12));
        assert!(p.phase.iter().all(|&ph| ph.abs() < 1e-12));
    }

    #[test]
    fn constant_has_only_dc() {
        let s = fft2(&Tensor::full(&[8, 8], 0.3)).unwrap();
        assert!((s.at(0, 0).re - 64.0 * 0.3).abs() < 1e-12);
        for (i, z) in s.data().iter().enumerate().skip(1) {
            assert!(z.norm() < 1e-12, "bin {i} = {z}");
        }
    }

    #[test]
    fn rejects_empty_plane() {
        let empty = Tensor::<f64>::zeros(&[0, 4]);
        assert!(fft2(&empty).is_err());
    }

    #[test]
    fn zero_spectrum_inverts_to_zero() {
        let z = ifft2(&Spectrum::zeros(6, 5)).unwrap();
        assert!(z.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn non_hermitian_spectrum_is_rejected() {
        let mut s = Spectrum::zeros(4, 4);
        s.data_mut()[1] = Complex64::new(1.0, 0.0);
        assert!(matches!(ifft2(&s), Err(Error::NonHermitian { .. })));
    }

    #[test]
    fn pythagorean_polar() {
        let s = Spectrum::new(1, 1, vec![Complex64::new(3.0, 4.0)]).unwrap();
        let p = to_polar(&s);
        assert_eq!(p.amplitude[0], 5.0);
        assert_eq!(p.phase[0], 4f64.atan2(3.0));
    }

    #[test]
    fn zero_amplitude_has_zero_phase() {
        let p = to_polar(&Spectrum::zeros(2, 3));
        assert!(p.phase.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn shift_pair_is_inverse_for_odd_sizes() {
        let v: Vec<usize> = (0..35).collect();
        let back = ifftshift(&fftshift(&v, 5, 7), 5, 7);
        assert_eq!(back, v);
        // the DC bin lands at the center
        let s = fftshift(&v, 5, 7);
        assert_eq!(s[2 * 7 + 3], 0);
    }

    #[test]
    fn non_power_of_two_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for &(h, w) in &[(7, 13), (1, 9), (12, 1), (30, 17)] {
            let x = random_plane(&mut rng, h, w);
            let y = ifft2(&fft2(&x).unwrap()).unwrap();
            assert!(x.max_abs_diff(&y) < 1e-12);
        }
    }
}
