//! Power-of-two FFT plans backed by `rustfft`.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};

/// A reusable plan for one power-of-two transform length.
#[derive(Clone)]
pub struct Fft {
    len: usize,
    forward: Arc<dyn rustfft::Fft<f64>>,
    inverse: Arc<dyn rustfft::Fft<f64>>,
}

impl std::fmt::Debug for Fft {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Fft").field("len", &self.len).finish()
    }
}

impl Fft {
    pub fn new(len: usize) -> Result<Self> {
        if len == 0 || !len.is_power_of_two() {
            return Err(Error::Input(format!(
                "FFT length must be a power of two, got {len}"
            )));
        }
        let mut planner = FftPlanner::new();
        Ok(Fft {
            len,
            forward: planner.plan_fft_forward(len),
            inverse: planner.plan_fft_inverse(len),
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// In-place forward DFT, `X[k] = sum_n x[n] e^{-j 2 pi k n / N}` (unscaled).
    pub fn forward(&self, buf: &mut [Complex64]) {
        assert_eq!(buf.len(), self.len, "buffer length does not match FFT plan");
        self.forward.process(buf);
    }

    /// In-place inverse DFT including the `1/N` scale.
    pub fn inverse(&self, buf: &mut [Complex64]) {
        assert_eq!(buf.len(), self.len, "buffer length does not match FFT plan");
        self.inverse.process(buf);
        let scale = 1.0 / self.len as f64;
        for v in buf.iter_mut() {
            *v *= scale;
        }
    }
}

/// One-shot forward transform. Fails on non-power-of-two lengths.
pub fn fft_radix2(x: &[Complex64]) -> Result<Vec<Complex64>> {
    let plan = Fft::new(x.len())?;
    let mut out = x.to_vec();
    plan.forward(&mut out);
    Ok(out)
}

/// One-shot inverse transform (scaled by `1/N`).
pub fn ifft_radix2(x: &[Complex64]) -> Result<Vec<Complex64>> {
    let plan = Fft::new(x.len())?;
    let mut out = x.to_vec();
    plan.inverse(&mut out);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn direct_dft(x: &[Complex64]) -> Vec<Complex64> {
        let n = x.len();
        (0..n)
            .map(|k| {
                x.iter()
                    .enumerate()
                    .map(|(i, &v)| {
                        let ang = -2.0 * std::f64::consts::PI * ((k * i) % n) as f64 / n as f64;
                        v * Complex64::from_polar(1.0, ang)
                    })
                    .sum()
            })
            .collect()
    }

    #[test]
    fn impulse_gives_flat_spectrum() {
        let mut x = vec![Complex64::new(0.0, 0.0); 16];
        x[0] = Complex64::new(1.0, 0.0);
        for v in fft_radix2(&x).unwrap() {
            assert!((v - Complex64::new(1.0, 0.0)).norm() < 1e-15);
        }
    }

    #[test]
    fn tone_lands_in_one_bin() {
        let n = 64;
        let x: Vec<_> = (0..n)
            .map(|i| Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI * 5.0 * i as f64 / n as f64))
            .collect();
        let spec = fft_radix2(&x).unwrap();
        for (k, v) in spec.iter().enumerate() {
            if k == 5 {
                assert!((v.norm() - n as f64).abs() < 1e-9);
            } else {
                assert!(v.norm() < 1e-9, "bin {k} = {v}");
            }
        }
    }

    #[test]
    fn matches_direct_dft_at_64() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x: Vec<_> = (0..64)
            .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        let fast = fft_radix2(&x).unwrap();
        let slow = direct_dft(&x);
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).norm() < 1e-9);
        }
    }

    #[test]
    fn round_trip_1024() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Vec<_> = (0..1024)
            .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        let back = ifft_radix2(&fft_radix2(&x).unwrap()).unwrap();
        let err: f64 = x.iter().zip(&back).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt();
        let norm: f64 = x.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        assert!(err / norm < 1e-9);
    }

    #[test]
    fn rejects_non_power_of_two() {
        assert!(Fft::new(12).is_err());
        assert!(Fft::new(0).is_err());
    }

    #[test]
    fn length_one_is_identity() {
        let x = vec![Complex64::new(2.0, -1.0)];
        assert_eq!(fft_radix2(&x).unwrap(), x);
    }
}
