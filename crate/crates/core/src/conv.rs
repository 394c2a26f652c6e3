//! "Same"-size spatial convolution with a selectable boundary rule.

use std::str::FromStr;

use crate::error::{Error, Result};
use crate::sampling::reflect_index;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Boundary {
    /// Mirror without repeating the edge sample.
    #[default]
    Reflect,
    /// Wrap around; diagonalized exactly by the DFT.
    Periodic,
    /// Repeat the edge sample.
    Clamp,
}

impl Boundary {
    #[inline]
    pub fn index(self, i: isize, n: usize) -> usize {
        match self {
            Boundary::Reflect => reflect_index(i, n),
            Boundary::Periodic => i.rem_euclid(n as isize) as usize,
            Boundary::Clamp => i.clamp(0, n as isize - 1) as usize,
        }
    }
}

impl FromStr for Boundary {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reflect" => Ok(Boundary::Reflect),
            "periodic" => Ok(Boundary::Periodic),
            "clamp" => Ok(Boundary::Clamp),
            other => Err(Error::invalid(format!("unknown boundary '{other}'"))),
        }
    }
}

/// True convolution (kernel flipped) of every channel of `img` with a 2-D
/// kernel, output the same size as the input.
pub fn conv2d_same(img: &Tensor, kernel: &Tensor, boundary: Boundary) -> Result<Tensor> {
    let (c, h, w) = img.dims3()?;
    let (kc, kh, kw) = kernel.dims3()?;
    if kc != 1 {
        return Err(Error::shape("kernel must be a single plane"));
    }
    if kh % 2 == 0 || kw % 2 == 0 {
        return Err(Error::invalid(format!("kernel extents must be odd, got {kh}x{kw}")));
    }
    if h == 0 || w == 0 {
        return Err(Error::invalid("empty image"));
    }
    let (ry, rx) = ((kh / 2) as isize, (kw / 2) as isize);
    let k = kernel.data();
    let rows: Vec<Vec<usize>> = (0..h)
        .map(|y| (-ry..=ry).map(|d| boundary.index(y as isize - d, h)).collect())
        .collect();
    let cols: Vec<Vec<usize>> = (0..w)
        .map(|x| (-rx..=rx).map(|d| boundary.index(x as isize - d, w)).collect())
        .collect();
    let mut out = Vec::with_capacity(c * h * w);
    for ch in 0..c {
        let p = img.plane(ch);
        for row_idx in &rows {
            for col_idx in &cols {
                let mut acc = 0.0;
                for (i, &sy) in row_idx.iter().enumerate() {
                    let krow = &k[i * kw..(i + 1) * kw];
                    let prow = &p[sy * w..(sy + 1) * w];
                    for (j, &sx) in col_idx.iter().enumerate() {
                        acc += krow[j] * prow[sx];
                    }
                }
                out.push(acc);
            }
        }
    }
    Tensor::new(img.shape().to_vec(), out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn delta_kernel_is_identity() {
        let img = Tensor::from_fn(&[2, 6, 5], |i| (i as f64 * 0.37).sin());
        let mut d = Tensor::zeros(&[3, 3]);
        d.data_mut()[4] = 1.0;
        for b in [Boundary::Reflect, Boundary::Periodic, Boundary::Clamp] {
            assert_eq!(conv2d_same(&img, &d, b).unwrap(), img);
        }
    }

    #[test]
    fn normalized_kernel_keeps_constants() {
        let img = Tensor::full(&[1, 7, 9], 0.42);
        let k = Tensor::from_fn(&[5, 5], |i| (i + 1) as f64 / 325.0);
        for b in [Boundary::Reflect, Boundary::Periodic, Boundary::Clamp] {
            let out = conv2d_same(&img, &k, b).unwrap();
            assert!(out.data().iter().all(|&v| (v - 0.42).abs() < 1e-14));
        }
    }

    #[test]
    fn kernel_is_flipped() {
        // a single bright pixel convolved with an asymmetric kernel reproduces the kernel
        let mut img = Tensor::zeros(&[1, 5, 5]);
        img.data_mut()[12] = 1.0;
        let k = Tensor::from_fn(&[3, 3], |i| i as f64);
        let out = conv2d_same(&img, &k, Boundary::Periodic).unwrap();
        for dy in 0..3 {
            for dx in 0..3 {
                assert_eq!(out.at3(0, 1 + dy, 1 + dx), k.data()[dy * 3 + dx]);
            }
        }
    }

    #[test]
    fn even_kernel_rejected() {
        let img = Tensor::zeros(&[1, 4, 4]);
        assert!(conv2d_same(&img, &Tensor::zeros(&[2, 3]), Boundary::Reflect).is_err());
    }

    #[test]
    fn boundary_parses() {
        assert_eq!("periodic".parse::<Boundary>().unwrap(), Boundary::Periodic);
        assert!("wrap".parse::<Boundary>().is_err());
    }
}
