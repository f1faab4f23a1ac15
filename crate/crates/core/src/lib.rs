//! Physical-layer waveform identification: synthesis of ten waveform
//! families, AWGN and TDL-C channels, an 80-dimensional handcrafted feature
//! vector and a compact decision tree that classifies it.

pub mod channel;
pub mod error;
pub mod features;
pub mod export;
pub mod fft;
pub mod pipeline;
pub mod waveform;
pub mod ztree;

pub use channel::{ChannelKind, ChannelSpec};
pub use error::{Error, Result};
pub use features::{extract_features, FeatureVector, FEATURE_DIM};
pub use pipeline::{ChannelFamily, Dataset, DatasetSpec, EvalReport, Record, RecordMeta};
pub use waveform::{
    synth_segment, ChannelTag, IqSegment, ModulationScheme, WaveformClass, SEGMENT_LEN,
};
pub use ztree::{Criterion, Normalizer, TrainConfig, TreeNode, ZTreeModel};
