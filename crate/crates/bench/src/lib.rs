//! Shared fixture for the criterion benchmarks under `benches/`.

use wavetree_core::pipeline::generate_dataset;
use wavetree_core::ztree::fit;
use wavetree_core::{
    ChannelFamily, DatasetSpec, FeatureVector, Normalizer, Result, TrainConfig, ZTreeModel,
};
use num_complex::Complex64;

pub struct Fixture {
    pub model: ZTreeModel,
    pub norm: Normalizer,
    pub rows: Vec<FeatureVector>,
    pub segments: Vec<Vec<Complex64>>,
}

/// AWGN dataset at 10/20/30 dB with `segments` per class and SNR, plus a
/// tree trained on all of it.
pub fn fixture(segments: usize, seed: u64) -> Result<Fixture> {
    let spec = DatasetSpec {
        segments_per_class_per_snr: segments,
        store_iq: true,
        ..DatasetSpec::desk(ChannelFamily::Awgn, seed)
    };
    let ds = generate_dataset(&spec)?;
    let rows = ds.feature_rows()?;
    let (model, norm) = fit(&rows, &ds.labels(), &TrainConfig { seed, ..TrainConfig::default() })?;
    let segments = ds.records.iter().filter_map(|r| r.samples()).collect();
    Ok(Fixture { model, norm, rows, segments })
}
