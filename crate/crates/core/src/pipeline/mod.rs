//! Dataset generation over the waveform × modulation × SNR × channel grid,
//! persistence, stratified splitting, evaluation and latency measurement.

mod bench;
mod dataset;
mod eval;
mod split;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{
    apply_awgn, apply_tdlc, make_tdlc, ChannelSpec, DEFAULT_DELAY_SPREADS_NS, DEFAULT_SPEEDS_KMH,
};
use crate::error::{Error, Result};
use crate::features::{extract_features, FeatureVector, FEATURE_DIM};
use crate::waveform::{
    synth_segment, ChannelTag, ModulationScheme, WaveformClass, SEGMENT_LEN,
};

pub use bench::{benchmark_latency, LatencyConfig, LatencyReport, LatencyStats};
pub use dataset::{
    decode_dataset, encode_dataset, read_dataset, write_dataset, DATASET_MAGIC,
    DATASET_VERSION, FLAG_FEATURES, FLAG_IQ,
};
pub use eval::{
    confusion_vs_snr, evaluate, evaluate_predictions, pair_confusion_by_snr, top_confusion_pairs,
    EvalReport, PairRate, SnrAccuracy,
};
pub use split::{stratified_split, Split};

/// How the channel stage of every record is drawn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ChannelFamily {
    Awgn,
    /// Each record draws one speed and one delay spread uniformly from the grid.
    Tdlc {
        speeds_kmh: Vec<f64>,
        delay_spreads_ns: Vec<f64>,
    },
}

impl ChannelFamily {
    pub fn tdlc_default() -> Self {
        ChannelFamily::Tdlc {
            speeds_kmh: DEFAULT_SPEEDS_KMH.to_vec(),
            delay_spreads_ns: DEFAULT_DELAY_SPREADS_NS.to_vec(),
        }
    }

    pub fn tag(&self) -> ChannelTag {
        match self {
            ChannelFamily::Awgn => ChannelTag::Awgn,
            ChannelFamily::Tdlc { .. } => ChannelTag::Tdlc,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub snr_list_db: Vec<f64>,
    pub segments_per_class_per_snr: usize,
    pub channel: ChannelFamily,
    pub split_ratio: f64,
    pub seed: u64,
    pub store_iq: bool,
    pub store_features: bool,
}

impl DatasetSpec {
    /// 10, 20 and 30 dB with 200 segments per class at each.
    pub fn desk(channel: ChannelFamily, seed: u64) -> Self {
        DatasetSpec {
            snr_list_db: vec![10.0, 20.0, 30.0],
            segments_per_class_per_snr: 200,
            channel,
            split_ratio: 0.8,
            seed,
            store_iq: false,
            store_features: true,
        }
    }

    /// 0 to 30 dB in 2 dB steps with 960 segments per class at each.
    pub fn full_grid(channel: ChannelFamily, seed: u64) -> Self {
        DatasetSpec {
            snr_list_db: (0..=15).map(|i| 2.0 * i as f64).collect(),
            segments_per_class_per_snr: 960,
            ..DatasetSpec::desk(channel, seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.snr_list_db.is_empty() || self.snr_list_db.iter().any(|s| !s.is_finite()) {
            return Err(Error::Usage("SNR list must be non-empty and finite".into()));
        }
        if self.segments_per_class_per_snr == 0 {
            return Err(Error::Usage("segments per class per SNR must be at least 1".into()));
        }
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return Err(Error::Usage(format!(
                "split ratio {} outside (0, 1)",
                self.split_ratio
            )));
        }
        if !self.store_iq && !self.store_features {
            return Err(Error::Usage("dataset must store IQ, features or both".into()));
        }
        if let ChannelFamily::Tdlc {
            speeds_kmh,
            delay_spreads_ns,
        } = &self.channel
        {
            if speeds_kmh.is_empty() || delay_spreads_ns.is_empty() {
                return Err(Error::Usage("TDL-C grid needs at least one speed and one delay spread".into()));
            }
            for &ds in delay_spreads_ns {
                ChannelSpec::tdlc(0.0, ds, speeds_kmh[0], 0).validate()?;
            }
            for &v in speeds_kmh {
                ChannelSpec::tdlc(0.0, delay_spreads_ns[0], v, 0).validate()?;
            }
        }
        if self.record_count() > u32::MAX as usize {
            return Err(Error::Usage("dataset exceeds 2^32 records".into()));
        }
        Ok(())
    }

    pub fn record_count(&self) -> usize {
        self.snr_list_db.len() * WaveformClass::ALL.len() * self.segments_per_class_per_snr
    }

    pub fn flags(&self) -> u8 {
        (self.store_iq as u8 * FLAG_IQ) | (self.store_features as u8 * FLAG_FEATURES)
    }

    /// Grid cell of record `index`: records run SNR-major, then class, then
    /// segment within the cell.
    pub fn cell(&self, index: usize) -> (f64, WaveformClass, ModulationScheme) {
        let per_snr = WaveformClass::ALL.len() * self.segments_per_class_per_snr;
        let snr = self.snr_list_db[index / per_snr];
        let within = index % per_snr;
        let class = WaveformClass::ALL[within / self.segments_per_class_per_snr];
        let seg = within % self.segments_per_class_per_snr;
        let legal = class.legal_modulations();
        (snr, class, legal[seg % legal.len()])
    }

    pub fn record_seed(&self, index: usize) -> u64 {
        self.seed ^ index as u64
    }

    /// Speed and delay spread drawn for record `index`; zeros under AWGN.
    pub fn tdlc_params(&self, index: usize) -> (f64, f64) {
        match &self.channel {
            ChannelFamily::Awgn => (0.0, 0.0),
            ChannelFamily::Tdlc {
                speeds_kmh,
                delay_spreads_ns,
            } => {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.record_seed(index), 1));
                let v = speeds_kmh[rng.random_range(0..speeds_kmh.len())];
                let ds = delay_spreads_ns[rng.random_range(0..delay_spreads_ns.len())];
                (v, ds)
            }
        }
    }
}

/// SplitMix64 finalizer over `seed + stream`, used to fan one record seed
/// out into independent synthesis, channel and noise streams.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed.wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1330_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecordMeta {
    pub label: WaveformClass,
    pub modulation: ModulationScheme,
    pub snr_db: f32,
    pub channel_tag: ChannelTag,
    pub speed_kmh: f32,
    pub delay_spread_ns: f32,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub meta: RecordMeta,
    /// Interleaved I/Q, `2 * SEGMENT_LEN` values.
    pub iq: Option<Vec<f32>>,
    pub features: Option<[f32; FEATURE_DIM]>,
}

impl Record {
    pub fn samples(&self) -> Option<Vec<Complex64>> {
        self.iq.as_ref().map(|v| iq_from_f32(v))
    }
}

pub fn iq_from_f32(interleaved: &[f32]) -> Vec<Complex64> {
    interleaved
        .chunks_exact(2)
        .map(|p| Complex64::new(p[0] as f64, p[1] as f64))
        .collect()
}

pub fn iq_to_f32(samples: &[Complex64]) -> Vec<f32> {
    samples.iter().flat_map(|s| [s.re as f32, s.im as f32]).collect()
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub flags: u8,
    pub records: Vec<Record>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn labels(&self) -> Vec<u8> {
        self.records.iter().map(|r| r.meta.label.code()).collect()
    }

    pub fn snrs(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.meta.snr_db as f64).collect()
    }

    pub fn metas(&self) -> Vec<RecordMeta> {
        self.records.iter().map(|r| r.meta).collect()
    }

    /// Stored features, or features extracted from stored IQ when the
    /// dataset carries IQ only.
    pub fn feature_rows(&self) -> Result<Vec<FeatureVector>> {
        self.records
            .par_iter()
            .enumerate()
            .map(|(i, r)| match (&r.features, &r.iq) {
                (Some(f), _) => Ok(FeatureVector::from_f32(f)),
                (None, Some(iq)) => extract_features(&iq_from_f32(iq)),
                (None, None) => Err(Error::Input(format!("record {i} has neither IQ nor features"))),
            })
            .collect()
    }

    pub fn subset(&self, ids: &[usize]) -> Dataset {
        Dataset {
            flags: self.flags,
            records: ids.iter().map(|&i| self.records[i].clone()).collect(),
        }
    }
}

/// Synthesize, impair and optionally featurize record `index` of `spec`.
pub fn generate_record(spec: &DatasetSpec, index: usize) -> Result<Record> {
    let (snr, class, modulation) = spec.cell(index);
    let seed = spec.record_seed(index);
    let mut seg = synth_segment(class, modulation, derive_seed(seed, 0))?;
    let (speed, ds) = spec.tdlc_params(index);
    if let ChannelFamily::Tdlc { .. } = spec.channel {
        let chan = make_tdlc(&ChannelSpec::tdlc(snr, ds, speed, derive_seed(seed, 2)), SEGMENT_LEN)?;
        seg = apply_tdlc(&seg, &chan)?;
    }
    let seg = apply_awgn(&seg, snr, derive_seed(seed, 3))?;
    let iq = iq_to_f32(&seg.samples);
    let features = if spec.store_features {
        Some(extract_features(&iq_from_f32(&iq))?.to_f32())
    } else {
        None
    };
    Ok(Record {
        meta: RecordMeta {
            label: class,
            modulation,
            snr_db: snr as f32,
            channel_tag: spec.channel.tag(),
            speed_kmh: speed as f32,
            delay_spread_ns: ds as f32,
            seed,
        },
        iq: spec.store_iq.then_some(iq),
        features,
    })
}

/// Generate every record of the grid in parallel. Output is independent of
/// the thread count.
pub fn generate_dataset(spec: &DatasetSpec) -> Result<Dataset> {
    spec.validate()?;
    let records = (0..spec.record_count())
        .into_par_iter()
        .map(|i| generate_record(spec, i))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        flags: spec.flags(),
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(channel: ChannelFamily) -> DatasetSpec {
        DatasetSpec {
            snr_list_db: vec![5.0, 15.0],
            segments_per_class_per_snr: 10,
            store_iq: true,
            ..DatasetSpec::desk(channel, 42)
        }
    }

    #[test]
    fn counts_are_class_balanced() {
        let ds = generate_dataset(&small(ChannelFamily::Awgn)).unwrap();
        assert_eq!(ds.len(), 200);
        let mut per = [0usize; 10];
        for r in &ds.records {
            per[r.meta.label.code() as usize] += 1;
            assert!(r.meta.label.legal_modulations().contains(&r.meta.modulation));
        }
        assert_eq!(per, [20; 10]);
    }

    #[test]
    fn parallel_matches_single_thread() {
        let spec = small(ChannelFamily::tdlc_default());
        let par = generate_dataset(&spec).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let ser = pool.install(|| generate_dataset(&spec)).unwrap();
        assert_eq!(encode_dataset(&par), encode_dataset(&ser));
    }

    #[test]
    fn stored_features_match_reextraction() {
        let ds = generate_dataset(&small(ChannelFamily::Awgn)).unwrap();
        for r in ds.records.iter().take(20) {
            let again = extract_features(&r.samples().unwrap()).unwrap().to_f32();
            assert_eq!(r.features.unwrap(), again);
        }
    }

    #[test]
    fn tdlc_grid_draw_is_uniform() {
        let spec = DatasetSpec {
            segments_per_class_per_snr: 1000,
            snr_list_db: vec![10.0],
            ..DatasetSpec::desk(ChannelFamily::tdlc_default(), 9)
        };
        let mut counts = [[0f64; 2]; 4];
        for i in 0..spec.record_count() {
            let (v, ds) = spec.tdlc_params(i);
            let vi = DEFAULT_SPEEDS_KMH.iter().position(|&x| x == v).unwrap();
            let di = DEFAULT_DELAY_SPREADS_NS.iter().position(|&x| x == ds).unwrap();
            counts[vi][di] += 1.0;
        }
        let expected = spec.record_count() as f64 / 8.0;
        let chi2: f64 = counts
            .iter()
            .flatten()
            .map(|&c| (c - expected).powi(2) / expected)
            .sum();
        // chi-square with 7 degrees of freedom, 0.1% upper tail
        assert!(chi2 < 24.32, "chi2 {chi2}");
    }

    #[test]
    fn tdlc_records_carry_grid_metadata() {
        let ds = generate_dataset(&small(ChannelFamily::tdlc_default())).unwrap();
        for r in &ds.records {
            assert_eq!(r.meta.channel_tag, ChannelTag::Tdlc);
            assert!(DEFAULT_SPEEDS_KMH.contains(&(r.meta.speed_kmh as f64)));
            assert!(DEFAULT_DELAY_SPREADS_NS.contains(&(r.meta.delay_spread_ns as f64)));
        }
    }

    #[test]
    fn spec_validation() {
        let mut s = small(ChannelFamily::Awgn);
        s.split_ratio = 1.0;
        assert!(s.validate().is_err());
        let mut s = small(ChannelFamily::Awgn);
        s.segments_per_class_per_snr = 0;
        assert!(s.validate().is_err());
        let mut s = small(ChannelFamily::Awgn);
        s.store_iq = false;
        s.store_features = false;
        assert!(s.validate().is_err());
    }

    #[test]
    fn derived_streams_differ() {
        let a: Vec<u64> = (0..4).map(|s| derive_seed(7, s)).collect();
        for i in 0..4 {
            for j in 0..i {
                assert_ne!(a[i], a[j]);
            }
        }
    }
}
