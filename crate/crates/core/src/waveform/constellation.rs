//! Bit-to-symbol mapping for the six payload modulation schemes.
//!
//! Square QAM (QPSK, 256QAM, 4096QAM) and 8PSK use Gray labelling. 32QAM is
//! the usual 6x6 cross layout enumerated row by row; 64APSK uses four rings
//! of 4, 12, 20 and 28 points. Every table is scaled to unit mean energy.

use std::f64::consts::PI;
use std::sync::OnceLock;

use num_complex::Complex64;

use super::ModulationScheme;
use crate::error::{Error, Result};

const APSK64_RINGS: [(usize, f64); 4] = [(4, 1.0), (12, 2.4), (20, 4.3), (28, 7.0)];

fn gray_decode(mut g: usize) -> usize {
    let mut shift = 1;
    while (g >> shift) > 0 {
        g ^= g >> shift;
        shift <<= 1;
    }
    g
}

fn square_qam(bits_per_axis: u32) -> Vec<Complex64> {
    let levels = 1usize << bits_per_axis;
    let mask = levels - 1;
    let amp = |g: usize| ((levels - 1) as f64) - 2.0 * gray_decode(g) as f64;
    (0..levels * levels)
        .map(|idx| Complex64::new(amp(idx >> bits_per_axis), amp(idx & mask)))
        .collect()
}

fn psk8() -> Vec<Complex64> {
    (0..8)
        .map(|g| Complex64::from_polar(1.0, 2.0 * PI * gray_decode(g) as f64 / 8.0))
        .collect()
}

fn cross_qam32() -> Vec<Complex64> {
    let mut pts = Vec::with_capacity(32);
    for row in 0..6 {
        for col in 0..6 {
            let corner = (row == 0 || row == 5) && (col == 0 || col == 5);
            if !corner {
                pts.push(Complex64::new(2.0 * col as f64 - 5.0, 5.0 - 2.0 * row as f64));
            }
        }
    }
    pts
}

fn apsk64() -> Vec<Complex64> {
    let mut pts = Vec::with_capacity(64);
    for (count, radius) in APSK64_RINGS {
        for j in 0..count {
            let phase = 2.0 * PI * j as f64 / count as f64 + PI / count as f64;
            pts.push(Complex64::from_polar(radius, phase));
        }
    }
    pts
}

fn normalized(mut pts: Vec<Complex64>) -> Vec<Complex64> {
    let energy = pts.iter().map(|p| p.norm_sqr()).sum::<f64>() / pts.len() as f64;
    let scale = energy.sqrt().recip();
    for p in &mut pts {
        *p *= scale;
    }
    pts
}

/// Full constellation for `scheme`, indexed by the integer value of its bit label (MSB first).
pub fn constellation(scheme: ModulationScheme) -> &'static [Complex64] {
    static TABLES: [OnceLock<Vec<Complex64>>; 6] = [
        OnceLock::new(),
        OnceLock::new(),
        OnceLock::new(),
        OnceLock::new(),
        OnceLock::new(),
        OnceLock::new(),
    ];
    TABLES[scheme.code() as usize].get_or_init(|| {
        normalized(match scheme {
            ModulationScheme::Qpsk => square_qam(1),
            ModulationScheme::Psk8 => psk8(),
            ModulationScheme::Qam32 => cross_qam32(),
            ModulationScheme::Apsk64 => apsk64(),
            ModulationScheme::Qam256 => square_qam(4),
            ModulationScheme::Qam4096 => square_qam(6),
        })
    })
}

/// Map a bit sequence (one bit per byte, MSB first per symbol) to unit-energy symbols.
pub fn map_symbols(bits: &[u8], scheme: ModulationScheme) -> Result<Vec<Complex64>> {
    let bps = scheme.bits_per_symbol();
    if bits.len() % bps != 0 {
        return Err(Error::Input(format!(
            "{} bits cannot be grouped into {}-bit {} symbols",
            bits.len(),
            bps,
            scheme.name()
        )));
    }
    if let Some(bad) = bits.iter().find(|&&b| b > 1) {
        return Err(Error::Input(format!("bit value {bad} is not 0 or 1")));
    }
    let table = constellation(scheme);
    Ok(bits
        .chunks_exact(bps)
        .map(|chunk| table[chunk.iter().fold(0usize, |acc, &b| (acc << 1) | b as usize)])
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_1_SQRT_2;

    #[test]
    fn qpsk_zero_bits_is_first_quadrant_corner() {
        let s = map_symbols(&[0, 0], ModulationScheme::Qpsk).unwrap();
        assert!((s[0] - Complex64::new(FRAC_1_SQRT_2, FRAC_1_SQRT_2)).norm() < 1e-15);
    }

    #[test]
    fn psk8_zero_bits_is_unity() {
        let s = map_symbols(&[0, 0, 0], ModulationScheme::Psk8).unwrap();
        assert!((s[0] - Complex64::new(1.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn qam4096_enumeration_is_distinct_and_unit_energy() {
        let mut bits = Vec::with_capacity(4096 * 12);
        for v in 0..4096u32 {
            for b in (0..12).rev() {
                bits.push(((v >> b) & 1) as u8);
            }
        }
        let syms = map_symbols(&bits, ModulationScheme::Qam4096).unwrap();
        assert_eq!(syms.len(), 4096);
        let mean = syms.iter().map(|s| s.norm_sqr()).sum::<f64>() / 4096.0;
        assert!((mean - 1.0).abs() < 1e-9);
        let mut keys: Vec<(i64, i64)> = syms
            .iter()
            .map(|s| ((s.re * 1e9).round() as i64, (s.im * 1e9).round() as i64))
            .collect();
        keys.sort_unstable();
        keys.dedup();
        assert_eq!(keys.len(), 4096);
    }

    #[test]
    fn every_table_has_unit_energy_and_right_size() {
        for scheme in ModulationScheme::ALL {
            let t = constellation(scheme);
            assert_eq!(t.len(), 1 << scheme.bits_per_symbol());
            let mean = t.iter().map(|s| s.norm_sqr()).sum::<f64>() / t.len() as f64;
            assert!((mean - 1.0).abs() < 1e-12, "{scheme:?}");
        }
    }

    #[test]
    fn gray_neighbours_differ_by_one_bit() {
        // Adjacent PSK phases must carry labels at Hamming distance 1.
        let t = constellation(ModulationScheme::Psk8);
        let mut by_phase: Vec<(f64, usize)> = t
            .iter()
            .enumerate()
            .map(|(label, p)| (p.arg().rem_euclid(2.0 * PI), label))
            .collect();
        by_phase.sort_by(|a, b| a.0.total_cmp(&b.0));
        for w in 0..8 {
            let a = by_phase[w].1;
            let b = by_phase[(w + 1) % 8].1;
            assert_eq!((a ^ b).count_ones(), 1);
        }
    }

    #[test]
    fn indivisible_bit_count_is_rejected() {
        let err = map_symbols(&[0, 1, 0], ModulationScheme::Qpsk).unwrap_err();
        assert!(matches!(err, Error::Input(_)));
    }
}
