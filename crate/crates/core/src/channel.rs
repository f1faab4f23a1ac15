//! AWGN at calibrated SNR and the TDL-C tapped-delay-line fading channel.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::waveform::{normalize_power, ChannelTag, IqSegment};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
pub const DEFAULT_CARRIER_HZ: f64 = 4e9;
/// 256 x 30 kHz subcarrier spacing.
pub const DEFAULT_SAMPLE_RATE_HZ: f64 = 7.68e6;
pub const DEFAULT_SPEEDS_KMH: [f64; 4] = [30.0, 90.0, 150.0, 210.0];
pub const DEFAULT_DELAY_SPREADS_NS: [f64; 2] = [300.0, 600.0];
pub const SINUSOIDS_PER_TAP: usize = 16;

/// TDL-C power-delay profile, 3GPP TR 38.901 Table 7.7.2-3:
/// (normalized delay, power in dB).
#[allow(clippy::approx_constant)]
pub const TDLC_PROFILE: [(f64, f64); 24] = [
    (0.0, -4.4),
    (0.2099, -1.2),
    (0.2219, -3.5),
    (0.2329, -5.2),
    (0.2176, -2.5),
    (0.6366, 0.0),
    (0.6448, -2.2),
    (0.6560, -3.9),
    (0.6584, -7.4),
    (0.7935, -7.1),
    (0.8213, -10.7),
    (0.9336, -11.1),
    (1.2285, -5.1),
    (1.3083, -6.8),
    (2.1704, -8.7),
    (2.7105, -13.2),
    (4.2589, -13.9),
    (4.6003, -13.9),
    (5.4902, -15.8),
    (5.6077, -17.1),
    (6.3065, -16.0),
    (6.6374, -15.7),
    (7.0427, -21.6),
    (8.6523, -22.8),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelKind {
    Awgn,
    Tdlc,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelSpec {
    pub kind: ChannelKind,
    pub snr_db: f64,
    pub delay_spread_ns: f64,
    pub speed_kmh: f64,
    pub carrier_hz: f64,
    pub sample_rate_hz: f64,
    pub seed: u64,
}

impl ChannelSpec {
    pub fn awgn(snr_db: f64, seed: u64) -> Self {
        ChannelSpec {
            kind: ChannelKind::Awgn,
            snr_db,
            delay_spread_ns: DEFAULT_DELAY_SPREADS_NS[0],
            speed_kmh: 0.0,
            carrier_hz: DEFAULT_CARRIER_HZ,
            sample_rate_hz: DEFAULT_SAMPLE_RATE_HZ,
            seed,
        }
    }

    pub fn tdlc(snr_db: f64, delay_spread_ns: f64, speed_kmh: f64, seed: u64) -> Self {
        ChannelSpec {
            kind: ChannelKind::Tdlc,
            snr_db,
            delay_spread_ns,
            speed_kmh,
            carrier_hz: DEFAULT_CARRIER_HZ,
            sample_rate_hz: DEFAULT_SAMPLE_RATE_HZ,
            seed,
        }
    }

    #[allow(clippy::neg_cmp_op_on_partial_ord)] // NaN must fail too
    pub fn validate(&self) -> Result<()> {
        if !self.snr_db.is_finite() {
            return Err(Error::Input("snr_db must be finite".into()));
        }
        if !(self.delay_spread_ns > 0.0) {
            return Err(Error::Input("delay_spread_ns must be positive".into()));
        }
        if !(self.speed_kmh >= 0.0) {
            return Err(Error::Input("speed_kmh must be non-negative".into()));
        }
        if !(self.sample_rate_hz > 0.0) || !(self.carrier_hz > 0.0) {
            return Err(Error::Input("sample and carrier rates must be positive".into()));
        }
        Ok(())
    }

    /// Maximum Doppler shift `v * f_c / c` in Hz.
    pub fn doppler_hz(&self) -> f64 {
        self.speed_kmh / 3.6 * self.carrier_hz / SPEED_OF_LIGHT
    }
}

/// One instantiated TDL-C channel over a segment.
#[derive(Debug, Clone, PartialEq)]
pub struct TdlcRealization {
    /// Sorted, distinct sample delays.
    pub tap_delays_samples: Vec<usize>,
    /// Linear tap powers, summing to one.
    pub tap_powers_linear: Vec<f64>,
    /// `gains[l][n]`: complex gain of tap `l` at sample `n` (already scaled by the tap amplitude).
    pub gains: Vec<Vec<Complex64>>,
}

impl TdlcRealization {
    pub fn len(&self) -> usize {
        self.gains.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Static channel from explicit taps; used for tests and deterministic setups.
    pub fn from_static_taps(taps: &[(usize, Complex64)], len: usize) -> Self {
        TdlcRealization {
            tap_delays_samples: taps.iter().map(|t| t.0).collect(),
            tap_powers_linear: taps.iter().map(|t| t.1.norm_sqr()).collect(),
            gains: taps.iter().map(|t| vec![t.1; len]).collect(),
        }
    }
}

/// Add circularly-symmetric complex Gaussian noise at `snr_db` relative to
/// the measured input power.
#[allow(clippy::neg_cmp_op_on_partial_ord)]
pub fn apply_awgn(seg: &IqSegment, snr_db: f64, seed: u64) -> Result<IqSegment> {
    if !snr_db.is_finite() {
        return Err(Error::Input(format!("snr_db must be finite, got {snr_db}")));
    }
    let ps = seg.mean_power();
    if !(ps > 0.0) {
        return Err(Error::Numeric("cannot calibrate noise against a zero-power segment".into()));
    }
    let sigma2 = ps / 10f64.powf(snr_db / 10.0);
    let sd = (sigma2 / 2.0).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = seg
        .samples
        .iter()
        .map(|&s| {
            let i: f64 = rng.sample(StandardNormal);
            let q: f64 = rng.sample(StandardNormal);
            s + Complex64::new(i * sd, q * sd)
        })
        .collect();
    Ok(IqSegment {
        samples,
        snr_db: Some(snr_db),
        channel_tag: if seg.channel_tag == ChannelTag::Tdlc {
            ChannelTag::Tdlc
        } else {
            ChannelTag::Awgn
        },
        ..seg.clone()
    })
}

/// Instantiate TDL-C taps and their Rayleigh gain trajectories over `len` samples.
pub fn make_tdlc(spec: &ChannelSpec, len: usize) -> Result<TdlcRealization> {
    if spec.kind != ChannelKind::Tdlc {
        return Err(Error::Usage("make_tdlc requires a tdlc channel spec".into()));
    }
    spec.validate()?;
    let scale = spec.delay_spread_ns * 1e-9 * spec.sample_rate_hz;
    let mut merged: Vec<(usize, f64)> = Vec::new();
    for &(norm_delay, power_db) in &TDLC_PROFILE {
        let d = (norm_delay * scale).round() as usize;
        let p = 10f64.powf(power_db / 10.0);
        match merged.iter_mut().find(|(delay, _)| *delay == d) {
            Some(entry) => entry.1 += p,
            None => merged.push((d, p)),
        }
    }
    merged.sort_by_key(|&(d, _)| d);
    let total: f64 = merged.iter().map(|&(_, p)| p).sum();
    let tap_delays_samples: Vec<usize> = merged.iter().map(|&(d, _)| d).collect();
    let tap_powers_linear: Vec<f64> = merged.iter().map(|&(_, p)| p / total).collect();

    let fd = spec.doppler_hz();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let norm = (SINUSOIDS_PER_TAP as f64).sqrt().recip();
    let gains = tap_powers_linear
        .iter()
        .map(|&power| {
            let theta: f64 = rng.random_range(-PI..PI);
            let paths: Vec<(f64, f64)> = (0..SINUSOIDS_PER_TAP)
                .map(|i| {
                    let alpha = (2.0 * PI * i as f64 + theta) / SINUSOIDS_PER_TAP as f64;
                    let phi: f64 = rng.random_range(-PI..PI);
                    (2.0 * PI * fd * alpha.cos() / spec.sample_rate_hz, phi)
                })
                .collect();
            let amp = power.sqrt() * norm;
            (0..len)
                .map(|n| {
                    paths
                        .iter()
                        .map(|&(w, phi)| Complex64::from_polar(amp, w * n as f64 + phi))
                        .sum()
                })
                .collect()
        })
        .collect();
    Ok(TdlcRealization {
        tap_delays_samples,
        tap_powers_linear,
        gains,
    })
}

/// `y[n] = sum_l g_l[n] s[n - d_l]` with zero history and no renormalization.
pub fn tdl_filter(samples: &[Complex64], chan: &TdlcRealization) -> Result<Vec<Complex64>> {
    if chan.len() != samples.len() {
        return Err(Error::Input(format!(
            "channel realization covers {} samples but segment has {}",
            chan.len(),
            samples.len()
        )));
    }
    let mut out = vec![Complex64::new(0.0, 0.0); samples.len()];
    for (&d, g) in chan.tap_delays_samples.iter().zip(&chan.gains) {
        for n in d..samples.len() {
            out[n] += g[n] * samples[n - d];
        }
    }
    Ok(out)
}

/// Pass a segment through the channel and renormalize to unit mean power.
pub fn apply_tdlc(seg: &IqSegment, chan: &TdlcRealization) -> Result<IqSegment> {
    let mut samples = tdl_filter(&seg.samples, chan)?;
    normalize_power(&mut samples);
    Ok(IqSegment {
        samples,
        channel_tag: ChannelTag::Tdlc,
        ..seg.clone()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::waveform::{synth_segment, ModulationScheme, WaveformClass};

    fn seg_from(samples: Vec<Complex64>) -> IqSegment {
        IqSegment {
            samples,
            waveform: WaveformClass::Ofdm,
            modulation: ModulationScheme::Qpsk,
            snr_db: None,
            channel_tag: ChannelTag::None,
            seed: 0,
        }
    }

    #[test]
    fn huge_snr_leaves_signal_untouched() {
        let seg = synth_segment(WaveformClass::Ofdm, ModulationScheme::Qpsk, 1).unwrap();
        let noisy = apply_awgn(&seg, 300.0, 5).unwrap();
        for (a, b) in seg.samples.iter().zip(&noisy.samples) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn zero_power_is_a_numeric_error() {
        let seg = seg_from(vec![Complex64::new(0.0, 0.0); 1024]);
        assert!(matches!(apply_awgn(&seg, 10.0, 0), Err(Error::Numeric(_))));
    }

    #[test]
    fn awgn_is_seed_deterministic() {
        let seg = synth_segment(WaveformClass::Dsss, ModulationScheme::Psk8, 1).unwrap();
        assert_eq!(apply_awgn(&seg, 5.0, 9).unwrap(), apply_awgn(&seg, 5.0, 9).unwrap());
    }

    #[test]
    fn realized_snr_is_calibrated_for_scaled_input() {
        // Monte-Carlo over 10^4 noise seeds on a segment with power 4.
        let mut seg = synth_segment(WaveformClass::Gfsk, ModulationScheme::Qpsk, 1).unwrap();
        for v in &mut seg.samples {
            *v *= 2.0;
        }
        let ps = seg.mean_power();
        let mut pw = 0.0;
        for s in 0..10_000u64 {
            let noisy = apply_awgn(&seg, 10.0, s).unwrap();
            pw += noisy
                .samples
                .iter()
                .zip(&seg.samples)
                .map(|(a, b)| (a - b).norm_sqr())
                .sum::<f64>()
                / 1024.0;
        }
        pw /= 10_000.0;
        let snr = 10.0 * (ps / pw).log10();
        assert!((snr - 10.0).abs() < 0.1, "{snr}");
    }

    #[test]
    fn zero_db_doubles_mean_power() {
        let seg = synth_segment(WaveformClass::Ofdm, ModulationScheme::Qam256, 2).unwrap();
        let mean: f64 = (0..10_000u64)
            .map(|s| apply_awgn(&seg, 0.0, s).unwrap().mean_power())
            .sum::<f64>()
            / 10_000.0;
        assert!((mean - 2.0).abs() < 0.1, "{mean}");
    }

    #[test]
    fn zero_speed_freezes_gains() {
        let spec = ChannelSpec::tdlc(10.0, 300.0, 0.0, 4);
        let r = make_tdlc(&spec, 1024).unwrap();
        for g in &r.gains {
            let m0 = g[0].norm();
            assert!(g.iter().all(|v| (v.norm() - m0).abs() < 1e-12));
        }
    }

    #[test]
    fn max_delay_follows_profile_scaling() {
        let spec = ChannelSpec::tdlc(10.0, 300.0, 30.0, 4);
        let r = make_tdlc(&spec, 1024).unwrap();
        // 8.6523 * 300 ns * 7.68 MHz = 19.935 -> 20 samples.
        assert_eq!(*r.tap_delays_samples.last().unwrap(), 20);
        let spec = ChannelSpec::tdlc(10.0, 600.0, 30.0, 4);
        let r = make_tdlc(&spec, 1024).unwrap();
        assert_eq!(*r.tap_delays_samples.last().unwrap(), 40);
    }

    #[test]
    fn tap_powers_sum_to_one_and_delays_sorted() {
        for ds in DEFAULT_DELAY_SPREADS_NS {
            for v in DEFAULT_SPEEDS_KMH {
                let r = make_tdlc(&ChannelSpec::tdlc(0.0, ds, v, 17), 1024).unwrap();
                let sum: f64 = r.tap_powers_linear.iter().sum();
                assert!((sum - 1.0).abs() < 1e-9);
                assert!(r.tap_delays_samples.windows(2).all(|w| w[0] < w[1]));
            }
        }
    }

    #[test]
    fn awgn_spec_is_rejected_by_make_tdlc() {
        let spec = ChannelSpec::awgn(10.0, 0);
        assert!(matches!(make_tdlc(&spec, 1024), Err(Error::Usage(_))));
    }

    #[test]
    fn identity_channel() {
        let seg = synth_segment(WaveformClass::LoRa, ModulationScheme::Qpsk, 2).unwrap();
        let chan = TdlcRealization::from_static_taps(&[(0, Complex64::new(1.0, 0.0))], 1024);
        let out = apply_tdlc(&seg, &chan).unwrap();
        for (a, b) in seg.samples.iter().zip(&out.samples) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn pure_delay_moves_impulse() {
        let mut x = vec![Complex64::new(0.0, 0.0); 1024];
        x[0] = Complex64::new(1.0, 0.0);
        let chan = TdlcRealization::from_static_taps(&[(5, Complex64::new(1.0, 0.0))], 1024);
        let y = tdl_filter(&x, &chan).unwrap();
        for (n, v) in y.iter().enumerate() {
            let want = if n == 5 { 1.0 } else { 0.0 };
            assert!((v.re - want).abs() < 1e-15 && v.im.abs() < 1e-15);
        }
    }

    #[test]
    fn two_ray_comb_matches_analytic_response() {
        let a = Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
        let chan = TdlcRealization::from_static_taps(&[(0, a), (8, a)], 1024);
        for f in [0.01, 0.0625, 0.1, 0.37] {
            let x: Vec<Complex64> = (0..1024)
                .map(|n| Complex64::from_polar(1.0, 2.0 * PI * f * n as f64))
                .collect();
            let y = tdl_filter(&x, &chan).unwrap();
            let analytic = (Complex64::new(1.0, 0.0) + Complex64::from_polar(1.0, -2.0 * PI * f * 8.0)).norm()
                / 2f64.sqrt();
            for v in &y[8..] {
                assert!((v.norm() - analytic).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn filter_is_linear_before_renormalization() {
        let seg = synth_segment(WaveformClass::Fbmc, ModulationScheme::Qam32, 2).unwrap();
        let chan = make_tdlc(&ChannelSpec::tdlc(0.0, 600.0, 210.0, 8), 1024).unwrap();
        let scale = Complex64::new(-1.5, 0.75);
        let scaled: Vec<_> = seg.samples.iter().map(|&v| v * scale).collect();
        let y1 = tdl_filter(&scaled, &chan).unwrap();
        let y2 = tdl_filter(&seg.samples, &chan).unwrap();
        for (a, b) in y1.iter().zip(&y2) {
            assert!((a - b * scale).norm() < 1e-12);
        }
    }

    #[test]
    fn tdlc_output_has_unit_power() {
        let seg = synth_segment(WaveformClass::Ufmc, ModulationScheme::Qam256, 2).unwrap();
        let chan = make_tdlc(&ChannelSpec::tdlc(0.0, 300.0, 90.0, 3), 1024).unwrap();
        let out = apply_tdlc(&seg, &chan).unwrap();
        assert!((out.mean_power() - 1.0).abs() < 1e-6);
        assert_eq!(out.channel_tag, ChannelTag::Tdlc);
    }

    #[test]
    fn length_mismatch_is_rejected() {
        let seg = synth_segment(WaveformClass::Ufmc, ModulationScheme::Qam256, 2).unwrap();
        let chan = TdlcRealization::from_static_taps(&[(0, Complex64::new(1.0, 0.0))], 512);
        assert!(apply_tdlc(&seg, &chan).is_err());
    }
}
