//! Prototype filters and spreading code used by the synthesizers.

use std::f64::consts::PI;

/// PHYDYAS prototype filter, overlap factor `k` (4 supported), `m` subcarriers.
pub fn phydyas(m: usize, overlap: usize) -> Vec<f64> {
    // Frequency-domain coefficients for K = 4.
    const H: [f64; 4] = [1.0, 0.971_959_83, std::f64::consts::FRAC_1_SQRT_2, 0.235_146_95];
    assert_eq!(overlap, 4, "only overlap factor 4 is tabulated");
    let len = m * overlap;
    (0..len)
        .map(|t| {
            let mut v = H[0];
            for (k, &h) in H.iter().enumerate().skip(1) {
                let sign = if k % 2 == 1 { -1.0 } else { 1.0 };
                v += 2.0 * sign * h * (2.0 * PI * k as f64 * (t + 1) as f64 / len as f64).cos();
            }
            v
        })
        .collect()
}

/// Dolph-Chebyshev window of length `len` with `atten_db` sidelobe attenuation, peak 1.
pub fn chebyshev_window(len: usize, atten_db: f64) -> Vec<f64> {
    let order = (len - 1) as f64;
    let beta = ((10f64.powf(atten_db.abs() / 20.0)).acosh() / order).cosh();
    // Chebyshev polynomial samples on the DFT grid.
    let p: Vec<f64> = (0..len)
        .map(|k| {
            let x = beta * (PI * k as f64 / len as f64).cos();
            if x > 1.0 {
                (order * x.acosh()).cosh()
            } else if x < -1.0 {
                let sign = if len % 2 == 1 { 1.0 } else { -1.0 };
                sign * (order * (-x).acosh()).cosh()
            } else {
                (order * x.acos()).cos()
            }
        })
        .collect();
    let dft_re = |phase_shift: bool, n: usize| -> f64 {
        (0..len)
            .map(|k| {
                let mut ang = -2.0 * PI * (k * n) as f64 / len as f64;
                if phase_shift {
                    ang += PI * k as f64 / len as f64;
                }
                p[k] * ang.cos()
            })
            .sum()
    };
    let mut w: Vec<f64> = if len % 2 == 1 {
        let half = len.div_ceil(2);
        let spec: Vec<f64> = (0..half).map(|n| dft_re(false, n)).collect();
        spec[1..].iter().rev().chain(spec.iter()).copied().collect()
    } else {
        let half = len / 2 + 1;
        let spec: Vec<f64> = (0..half).map(|n| dft_re(true, n)).collect();
        spec[1..].iter().rev().chain(spec[1..].iter()).copied().collect()
    };
    let peak = w.iter().copied().fold(f64::MIN, f64::max);
    for v in &mut w {
        *v /= peak;
    }
    w
}

/// Square-root raised-cosine impulse response sampled at integer offsets
/// `-span/2 ..= span/2` with one sample per symbol.
pub fn srrc(rolloff: f64, span: usize) -> Vec<f64> {
    let half = (span / 2) as i64;
    (-half..=half)
        .map(|i| {
            let t = i as f64;
            if i == 0 {
                1.0 - rolloff + 4.0 * rolloff / PI
            } else if (4.0 * rolloff * t).abs() == 1.0 {
                let a = PI / (4.0 * rolloff);
                rolloff / 2f64.sqrt() * ((1.0 + 2.0 / PI) * a.sin() + (1.0 - 2.0 / PI) * a.cos())
            } else {
                ((PI * t * (1.0 - rolloff)).sin()
                    + 4.0 * rolloff * t * (PI * t * (1.0 + rolloff)).cos())
                    / (PI * t * (1.0 - (4.0 * rolloff * t).powi(2)))
            }
        })
        .collect()
}

/// Unit-area Gaussian pulse for GFSK frequency shaping.
pub fn gaussian(bt: f64, samples_per_symbol: usize, span_symbols: usize) -> Vec<f64> {
    let sigma = (2f64.ln()).sqrt() / (2.0 * PI * bt) * samples_per_symbol as f64;
    let half = (span_symbols * samples_per_symbol / 2) as i64;
    let mut taps: Vec<f64> = (-half..=half)
        .map(|i| (-(i as f64).powi(2) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = taps.iter().sum();
    for t in &mut taps {
        *t /= sum;
    }
    taps
}

/// Length-16 DSSS spreading code: the 15-chip m-sequence of x^4 + x^3 + 1
/// (seed 0001, bit 0 -> +1, bit 1 -> -1) followed by one +1 balancing chip.
pub const SPREADING_CODE: [f64; 16] = [
    -1.0, 1.0, 1.0, 1.0, -1.0, 1.0, 1.0, -1.0, -1.0, 1.0, -1.0, 1.0, -1.0, -1.0, -1.0, 1.0,
];
