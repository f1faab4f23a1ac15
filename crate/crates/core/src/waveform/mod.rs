//! Noise-free complex baseband synthesis for the ten waveform classes.
//!
//! Every synthesizer produces exactly [`SEGMENT_LEN`] samples scaled to unit
//! mean power. Parameters live in [`WAVEFORM_PARAMS`]; they are chosen so the
//! time-domain signatures the feature extractor looks for (cyclic-prefix
//! periodicity at lag 32, chirp slope, spreading period, envelope class and
//! spectral occupancy) are present.

mod constellation;
mod pulses;

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft::Fft;

pub use constellation::{constellation, map_symbols};
pub use pulses::{chebyshev_window, phydyas, srrc, SPREADING_CODE};

/// Samples per segment.
pub const SEGMENT_LEN: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[repr(u8)]
pub enum WaveformClass {
    Ofdm = 0,
    Otfs = 1,
    Oddm = 2,
    Fbmc = 3,
    Ufmc = 4,
    Dsss = 5,
    LoRa = 6,
    NbIot = 7,
    Gfsk = 8,
    Mfsk = 9,
}

impl WaveformClass {
    pub const ALL: [WaveformClass; 10] = [
        WaveformClass::Ofdm,
        WaveformClass::Otfs,
        WaveformClass::Oddm,
        WaveformClass::Fbmc,
        WaveformClass::Ufmc,
        WaveformClass::Dsss,
        WaveformClass::LoRa,
        WaveformClass::NbIot,
        WaveformClass::Gfsk,
        WaveformClass::Mfsk,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            WaveformClass::Ofdm => "OFDM",
            WaveformClass::Otfs => "OTFS",
            WaveformClass::Oddm => "ODDM",
            WaveformClass::Fbmc => "FBMC",
            WaveformClass::Ufmc => "UFMC",
            WaveformClass::Dsss => "DSSS",
            WaveformClass::LoRa => "LoRa",
            WaveformClass::NbIot => "NB-IoT",
            WaveformClass::Gfsk => "GFSK",
            WaveformClass::Mfsk => "MFSK",
        }
    }

    /// Payload schemes this waveform may carry.
    pub fn legal_modulations(self) -> &'static [ModulationScheme] {
        match self {
            WaveformClass::Gfsk | WaveformClass::Mfsk => &ModulationScheme::ALL[..2],
            _ => &ModulationScheme::ALL,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[repr(u8)]
pub enum ModulationScheme {
    Qpsk = 0,
    Psk8 = 1,
    Qam32 = 2,
    Apsk64 = 3,
    Qam256 = 4,
    Qam4096 = 5,
}

impl ModulationScheme {
    pub const ALL: [ModulationScheme; 6] = [
        ModulationScheme::Qpsk,
        ModulationScheme::Psk8,
        ModulationScheme::Qam32,
        ModulationScheme::Apsk64,
        ModulationScheme::Qam256,
        ModulationScheme::Qam4096,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    pub fn bits_per_symbol(self) -> usize {
        match self {
            ModulationScheme::Qpsk => 2,
            ModulationScheme::Psk8 => 3,
            ModulationScheme::Qam32 => 5,
            ModulationScheme::Apsk64 => 6,
            ModulationScheme::Qam256 => 8,
            ModulationScheme::Qam4096 => 12,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ModulationScheme::Qpsk => "QPSK",
            ModulationScheme::Psk8 => "8PSK",
            ModulationScheme::Qam32 => "32QAM",
            ModulationScheme::Apsk64 => "64APSK",
            ModulationScheme::Qam256 => "256QAM",
            ModulationScheme::Qam4096 => "4096QAM",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum ChannelTag {
    None = 0,
    Awgn = 1,
    Tdlc = 2,
}

impl ChannelTag {
    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(ChannelTag::None),
            1 => Some(ChannelTag::Awgn),
            2 => Some(ChannelTag::Tdlc),
            _ => None,
        }
    }
}

/// A baseband segment with its provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct IqSegment {
    pub samples: Vec<Complex64>,
    pub waveform: WaveformClass,
    pub modulation: ModulationScheme,
    /// `None` for a clean (noise-free) segment.
    pub snr_db: Option<f64>,
    pub channel_tag: ChannelTag,
    pub seed: u64,
}

impl IqSegment {
    pub fn mean_power(&self) -> f64 {
        mean_power(&self.samples)
    }
}

pub(crate) fn mean_power(x: &[Complex64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    x.iter().map(|v| v.norm_sqr()).sum::<f64>() / x.len() as f64
}

/// The fixed per-waveform parameterization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WaveformParams {
    pub ofdm_fft: usize,
    pub ofdm_cp: usize,
    /// Delay bins (M) of the OTFS/ODDM grid.
    pub dd_delay_bins: usize,
    /// Doppler bins (N) of the OTFS/ODDM grid.
    pub dd_doppler_bins: usize,
    pub oddm_rolloff: f64,
    pub oddm_span: usize,
    pub fbmc_subcarriers: usize,
    pub fbmc_overlap: usize,
    pub ufmc_subcarriers: usize,
    pub ufmc_subbands: usize,
    pub ufmc_filter_len: usize,
    pub ufmc_sidelobe_db: f64,
    pub dsss_code_len: usize,
    pub lora_sf: u32,
    pub lora_chirps: usize,
    pub nbiot_fft: usize,
    pub nbiot_active: usize,
    pub nbiot_cp: usize,
    pub nbiot_symbols: usize,
    pub gfsk_bt: f64,
    pub gfsk_index: f64,
    pub fsk_samples_per_symbol: usize,
}

pub const WAVEFORM_PARAMS: WaveformParams = WaveformParams {
    ofdm_fft: 32,
    ofdm_cp: 8,
    dd_delay_bins: 32,
    dd_doppler_bins: 32,
    oddm_rolloff: 0.25,
    oddm_span: 4,
    fbmc_subcarriers: 32,
    fbmc_overlap: 4,
    ufmc_subcarriers: 32,
    ufmc_subbands: 4,
    ufmc_filter_len: 16,
    ufmc_sidelobe_db: 40.0,
    dsss_code_len: 16,
    lora_sf: 7,
    lora_chirps: 8,
    nbiot_fft: 256,
    nbiot_active: 12,
    nbiot_cp: 16,
    nbiot_symbols: 4,
    gfsk_bt: 0.5,
    gfsk_index: 0.5,
    fsk_samples_per_symbol: 32,
};

/// Synthesize one clean, unit-power segment.
pub fn synth_segment(
    waveform: WaveformClass,
    modulation: ModulationScheme,
    seed: u64,
) -> Result<IqSegment> {
    if !waveform.legal_modulations().contains(&modulation) {
        return Err(Error::IllegalPairing {
            waveform: waveform.name(),
            modulation: modulation.name(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = &WAVEFORM_PARAMS;
    let mut samples = match waveform {
        WaveformClass::Ofdm => ofdm(&mut rng, modulation, p),
        WaveformClass::Otfs => otfs(&mut rng, modulation, p),
        WaveformClass::Oddm => oddm(&mut rng, modulation, p),
        WaveformClass::Fbmc => fbmc(&mut rng, modulation, p),
        WaveformClass::Ufmc => ufmc(&mut rng, modulation, p),
        WaveformClass::Dsss => dsss(&mut rng, modulation),
        WaveformClass::LoRa => lora(&mut rng, p),
        WaveformClass::NbIot => nbiot(&mut rng, modulation, p),
        WaveformClass::Gfsk => gfsk(&mut rng, modulation, p),
        WaveformClass::Mfsk => mfsk(&mut rng, modulation, p),
    };
    debug_assert_eq!(samples.len(), SEGMENT_LEN);
    normalize_power(&mut samples);
    Ok(IqSegment {
        samples,
        waveform,
        modulation,
        snr_db: None,
        channel_tag: ChannelTag::None,
        seed,
    })
}

pub(crate) fn normalize_power(x: &mut [Complex64]) {
    let p = mean_power(x);
    if p > 0.0 {
        let s = p.sqrt().recip();
        for v in x.iter_mut() {
            *v *= s;
        }
    }
}

fn random_bits(rng: &mut ChaCha8Rng, count: usize) -> Vec<u8> {
    (0..count).map(|_| rng.random::<bool>() as u8).collect()
}

fn random_symbols(rng: &mut ChaCha8Rng, scheme: ModulationScheme, count: usize) -> Vec<Complex64> {
    let bits = random_bits(rng, count * scheme.bits_per_symbol());
    map_symbols(&bits, scheme).expect("bit count is a multiple of the symbol width")
}

/// Draws an integer in `0..2^width` from `width` payload bits.
fn random_index(rng: &mut ChaCha8Rng, width: u32) -> usize {
    random_bits(rng, width as usize)
        .iter()
        .fold(0usize, |acc, &b| (acc << 1) | b as usize)
}

fn plan(len: usize) -> Fft {
    Fft::new(len).expect("power-of-two transform length")
}

fn ofdm(rng: &mut ChaCha8Rng, m: ModulationScheme, p: &WaveformParams) -> Vec<Complex64> {
    let fft = plan(p.ofdm_fft);
    let mut out = Vec::with_capacity(SEGMENT_LEN + p.ofdm_fft + p.ofdm_cp);
    while out.len() < SEGMENT_LEN {
        let mut sym = random_symbols(rng, m, p.ofdm_fft);
        fft.inverse(&mut sym);
        out.extend_from_slice(&sym[p.ofdm_fft - p.ofdm_cp..]);
        out.extend_from_slice(&sym);
    }
    out.truncate(SEGMENT_LEN);
    out
}

/// ISFFT of a Doppler x delay grid followed by a rectangular-pulse
/// Heisenberg transform. `grid[k * delay_bins + l]` holds Doppler bin `k`,
/// delay bin `l`.
fn delay_doppler_to_time(grid: &[Complex64], doppler_bins: usize, delay_bins: usize) -> Vec<Complex64> {
    let doppler_fft = plan(doppler_bins);
    let delay_fft = plan(delay_bins);
    // tf[n * delay_bins + m]: time slot n, subcarrier m.
    let mut tf = vec![Complex64::new(0.0, 0.0); doppler_bins * delay_bins];
    let mut column = vec![Complex64::new(0.0, 0.0); doppler_bins];
    for l in 0..delay_bins {
        for k in 0..doppler_bins {
            column[k] = grid[k * delay_bins + l];
        }
        doppler_fft.inverse(&mut column);
        for n in 0..doppler_bins {
            tf[n * delay_bins + l] = column[n];
        }
    }
    for row in tf.chunks_exact_mut(delay_bins) {
        // Forward DFT over delay gives the subcarrier values; the Heisenberg
        // transform then takes the inverse DFT per time slot.
        delay_fft.forward(row);
        delay_fft.inverse(row);
    }
    tf
}

fn otfs(rng: &mut ChaCha8Rng, m: ModulationScheme, p: &WaveformParams) -> Vec<Complex64> {
    let grid = random_symbols(rng, m, p.dd_delay_bins * p.dd_doppler_bins);
    delay_doppler_to_time(&grid, p.dd_doppler_bins, p.dd_delay_bins)
}

fn oddm(rng: &mut ChaCha8Rng, m: ModulationScheme, p: &WaveformParams) -> Vec<Complex64> {
    let raw = otfs(rng, m, p);
    let taps = srrc(p.oddm_rolloff, p.oddm_span);
    let half = taps.len() / 2;
    (0..raw.len())
        .map(|n| {
            taps.iter()
                .enumerate()
                .filter_map(|(i, &h)| {
                    let src = n as isize + half as isize - i as isize;
                    (src >= 0 && (src as usize) < raw.len()).then(|| raw[src as usize] * h)
                })
                .sum()
        })
        .collect()
}

fn fbmc(rng: &mut ChaCha8Rng, m: ModulationScheme, p: &WaveformParams) -> Vec<Complex64> {
    let sc = p.fbmc_subcarriers;
    let hop = sc / 2;
    let proto = phydyas(sc, p.fbmc_overlap);
    let half_symbols = 80;
    let total = (half_symbols - 1) * hop + proto.len();
    let fft = plan(sc);
    let mut stream = vec![Complex64::new(0.0, 0.0); total];
    let mut buf = vec![Complex64::new(0.0, 0.0); sc];
    for pair in 0..half_symbols / 2 {
        let syms = random_symbols(rng, m, sc);
        for part in 0..2 {
            let mi = 2 * pair + part;
            for (k, slot) in buf.iter_mut().enumerate() {
                let real = if part == 0 { syms[k].re } else { syms[k].im };
                // OQAM phase j^(k + m).
                let phase = match (k + mi) % 4 {
                    0 => Complex64::new(1.0, 0.0),
                    1 => Complex64::new(0.0, 1.0),
                    2 => Complex64::new(-1.0, 0.0),
                    _ => Complex64::new(0.0, -1.0),
                };
                *slot = phase * real;
            }
            fft.inverse(&mut buf);
            let start = mi * hop;
            for (t, &h) in proto.iter().enumerate() {
                stream[start + t] += buf[t % sc] * h;
            }
        }
    }
    let offset = (total - SEGMENT_LEN) / 2;
    stream[offset..offset + SEGMENT_LEN].to_vec()
}

fn ufmc(rng: &mut ChaCha8Rng, m: ModulationScheme, p: &WaveformParams) -> Vec<Complex64> {
    let sc = p.ufmc_subcarriers;
    let band = sc / p.ufmc_subbands;
    let flen = p.ufmc_filter_len;
    let window = chebyshev_window(flen, p.ufmc_sidelobe_db);
    let filters: Vec<Vec<Complex64>> = (0..p.ufmc_subbands)
        .map(|b| {
            let centre = (b * band) as f64 + (band as f64 - 1.0) / 2.0;
            window
                .iter()
                .enumerate()
                .map(|(n, &w)| Complex64::from_polar(w, 2.0 * PI * centre * n as f64 / sc as f64))
                .collect()
        })
        .collect();
    let fft = plan(sc);
    let sym_len = sc + flen - 1;
    let mut out = Vec::with_capacity(SEGMENT_LEN + sym_len);
    let mut buf = vec![Complex64::new(0.0, 0.0); sc];
    while out.len() < SEGMENT_LEN {
        let data = random_symbols(rng, m, sc);
        let mut symbol = vec![Complex64::new(0.0, 0.0); sym_len];
        for (b, filt) in filters.iter().enumerate() {
            buf.fill(Complex64::new(0.0, 0.0));
            buf[b * band..(b + 1) * band].copy_from_slice(&data[b * band..(b + 1) * band]);
            fft.inverse(&mut buf);
            for (i, &x) in buf.iter().enumerate() {
                for (j, &h) in filt.iter().enumerate() {
                    symbol[i + j] += x * h;
                }
            }
        }
        out.extend_from_slice(&symbol);
    }
    out.truncate(SEGMENT_LEN);
    out
}

fn dsss(rng: &mut ChaCha8Rng, m: ModulationScheme) -> Vec<Complex64> {
    let n_sym = SEGMENT_LEN / SPREADING_CODE.len();
    random_symbols(rng, m, n_sym)
        .into_iter()
        .flat_map(|s| SPREADING_CODE.iter().map(move |&c| s * c))
        .collect()
}

/// Base up-chirp cyclically shifted by `symbol`, critically sampled
/// (bandwidth equals the sample rate).
pub(crate) fn lora_chirp(symbol: usize, sf: u32) -> Vec<Complex64> {
    let len = 1usize << sf;
    let l = len as f64;
    (0..len)
        .map(|n| {
            let n = n as f64;
            let cycles = n * n / (2.0 * l) + (symbol as f64 / l - 0.5) * n;
            Complex64::from_polar(1.0, 2.0 * PI * cycles.rem_euclid(1.0))
        })
        .collect()
}

fn lora(rng: &mut ChaCha8Rng, p: &WaveformParams) -> Vec<Complex64> {
    (0..p.lora_chirps)
        .flat_map(|_| lora_chirp(random_index(rng, p.lora_sf), p.lora_sf))
        .collect()
}

fn nbiot(rng: &mut ChaCha8Rng, m: ModulationScheme, p: &WaveformParams) -> Vec<Complex64> {
    let fft = plan(p.nbiot_fft);
    let half = (p.nbiot_active / 2) as isize;
    let mut out = Vec::with_capacity(p.nbiot_symbols * (p.nbiot_fft + p.nbiot_cp));
    for _ in 0..p.nbiot_symbols {
        let data = random_symbols(rng, m, p.nbiot_active);
        let mut bins = vec![Complex64::new(0.0, 0.0); p.nbiot_fft];
        for (i, &d) in data.iter().enumerate() {
            let k = (i as isize - half).rem_euclid(p.nbiot_fft as isize) as usize;
            bins[k] = d;
        }
        fft.inverse(&mut bins);
        out.extend_from_slice(&bins[p.nbiot_fft - p.nbiot_cp..]);
        out.extend_from_slice(&bins);
    }
    // Four symbols with CP span 1088 samples; keep the first 1024.
    out.resize(SEGMENT_LEN, Complex64::new(0.0, 0.0));
    out
}

fn fsk_alphabet(m: ModulationScheme) -> u32 {
    match m {
        ModulationScheme::Qpsk => 2,
        _ => 3,
    }
}

fn phase_integrate(rng: &mut ChaCha8Rng, freq: &[f64]) -> Vec<Complex64> {
    let mut phase = rng.random_range(0.0..2.0 * PI);
    freq.iter()
        .map(|&f| {
            let v = Complex64::from_polar(1.0, phase);
            phase = (phase + 2.0 * PI * f).rem_euclid(2.0 * PI);
            v
        })
        .collect()
}

fn gfsk(rng: &mut ChaCha8Rng, m: ModulationScheme, p: &WaveformParams) -> Vec<Complex64> {
    let width = fsk_alphabet(m);
    let levels = 1usize << width;
    let sps = p.fsk_samples_per_symbol;
    let pulse = pulses::gaussian(p.gfsk_bt, sps, 3);
    let half = pulse.len() / 2;
    // One extra symbol on each side so the filter sees a full history.
    let n_sym = SEGMENT_LEN / sps + 2;
    let raw: Vec<f64> = (0..n_sym)
        .flat_map(|_| {
            let level = 2.0 * random_index(rng, width) as f64 - (levels as f64 - 1.0);
            let f = level * p.gfsk_index / (2.0 * sps as f64);
            std::iter::repeat_n(f, sps)
        })
        .collect();
    let shaped: Vec<f64> = (sps..sps + SEGMENT_LEN)
        .map(|n| {
            pulse
                .iter()
                .enumerate()
                .map(|(i, &h)| {
                    let src = (n + half).checked_sub(i).filter(|&s| s < raw.len());
                    src.map_or(0.0, |s| raw[s] * h)
                })
                .sum()
        })
        .collect();
    phase_integrate(rng, &shaped)
}

fn mfsk(rng: &mut ChaCha8Rng, m: ModulationScheme, p: &WaveformParams) -> Vec<Complex64> {
    let width = fsk_alphabet(m);
    let levels = 1usize << width;
    let sps = p.fsk_samples_per_symbol;
    let freq: Vec<f64> = (0..SEGMENT_LEN / sps)
        .flat_map(|_| {
            let tone = random_index(rng, width) as f64 - (levels as f64 - 1.0) / 2.0;
            std::iter::repeat_n(tone / sps as f64, sps)
        })
        .collect();
    phase_integrate(rng, &freq)
}
