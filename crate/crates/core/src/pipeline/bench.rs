use std::hint::black_box;
use std::time::Instant;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{extract_features, FeatureVector, FEATURE_DIM};
use crate::ztree::{predict, predict_f32, Normalizer, ZTreeModel};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyConfig {
    /// Tree walks to time.
    pub walk_repetitions: usize,
    /// Walks per timer read; per-walk latency is the batch time divided by this.
    pub walk_batch: usize,
    /// Feature extraction plus walk passes to time, one timer read each.
    pub end_to_end_repetitions: usize,
    pub warmup: usize,
}

impl Default for LatencyConfig {
    fn default() -> Self {
        LatencyConfig {
            walk_repetitions: 100_000,
            walk_batch: 100,
            end_to_end_repetitions: 2_000,
            warmup: 200,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub samples: usize,
    pub median_us: f64,
    pub p99_us: f64,
    pub mean_us: f64,
    pub min_us: f64,
}

impl LatencyStats {
    fn from_us(mut v: Vec<f64>) -> Self {
        v.sort_by(f64::total_cmp);
        let n = v.len();
        let q = |p: f64| v[((p * (n - 1) as f64).round() as usize).min(n - 1)];
        LatencyStats {
            samples: n,
            median_us: q(0.5),
            p99_us: q(0.99),
            mean_us: v.iter().sum::<f64>() / n as f64,
            min_us: v[0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub walk: LatencyStats,
    pub walk_repetitions: usize,
    pub end_to_end: Option<LatencyStats>,
    pub node_count: usize,
    pub depth: usize,
}

/// Time tree walks over `rows` and, when `segments` is non-empty, feature
/// extraction plus walk over `segments`, both cycling through their inputs.
pub fn benchmark_latency(
    model: &ZTreeModel,
    norm: &Normalizer,
    rows: &[FeatureVector],
    segments: &[Vec<Complex64>],
    config: &LatencyConfig,
) -> Result<LatencyReport> {
    if config.walk_repetitions == 0 || config.walk_batch == 0 {
        return Err(Error::Usage("latency benchmark needs at least one repetition".into()));
    }
    if !segments.is_empty() && config.end_to_end_repetitions == 0 {
        return Err(Error::Usage("end-to-end benchmark needs at least one repetition".into()));
    }
    if rows.is_empty() {
        return Err(Error::Input("latency benchmark needs at least one feature vector".into()));
    }
    let inputs: Vec<[f32; FEATURE_DIM]> = rows.iter().map(FeatureVector::to_f32).collect();
    let mut cursor = 0usize;
    let mut next = || {
        let x = &inputs[cursor];
        cursor = if cursor + 1 == inputs.len() { 0 } else { cursor + 1 };
        x
    };
    for _ in 0..config.warmup {
        black_box(predict_f32(model, norm, black_box(next())));
    }
    let batches = config.walk_repetitions.div_ceil(config.walk_batch);
    let mut walk = Vec::with_capacity(batches);
    for _ in 0..batches {
        let t = Instant::now();
        for _ in 0..config.walk_batch {
            black_box(predict_f32(model, norm, black_box(next())));
        }
        walk.push(t.elapsed().as_secs_f64() * 1e6 / config.walk_batch as f64);
    }

    let end_to_end = if segments.is_empty() {
        None
    } else {
        let run = |seg: &[Complex64]| -> Result<u16> {
            let f = extract_features(black_box(seg))?;
            Ok(predict(model, norm, &f))
        };
        for i in 0..config.warmup.min(config.end_to_end_repetitions) {
            black_box(run(&segments[i % segments.len()])?);
        }
        let mut times = Vec::with_capacity(config.end_to_end_repetitions);
        for i in 0..config.end_to_end_repetitions {
            let seg = &segments[i % segments.len()];
            let t = Instant::now();
            black_box(run(seg)?);
            times.push(t.elapsed().as_secs_f64() * 1e6);
        }
        Some(LatencyStats::from_us(times))
    };

    Ok(LatencyReport {
        walk: LatencyStats::from_us(walk),
        walk_repetitions: batches * config.walk_batch,
        end_to_end,
        node_count: model.node_count(),
        depth: model.depth(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_repetitions_is_an_error() {
        let m = ZTreeModel::single_leaf(0);
        let n = Normalizer::identity();
        let rows = vec![FeatureVector([0.0; FEATURE_DIM])];
        let cfg = LatencyConfig {
            walk_repetitions: 0,
            ..LatencyConfig::default()
        };
        assert!(benchmark_latency(&m, &n, &rows, &[], &cfg).is_err());
    }

    #[test]
    fn reports_are_populated() {
        let m = ZTreeModel::single_leaf(4);
        let n = Normalizer::identity();
        let rows = vec![FeatureVector([0.5; FEATURE_DIM]); 3];
        let segs = vec![vec![Complex64::new(1.0, 0.0); 1024]];
        let cfg = LatencyConfig {
            walk_repetitions: 1000,
            walk_batch: 10,
            end_to_end_repetitions: 5,
            warmup: 2,
        };
        let r = benchmark_latency(&m, &n, &rows, &segs, &cfg).unwrap();
        assert_eq!(r.walk.samples, 100);
        assert_eq!(r.end_to_end.unwrap().samples, 5);
        assert!(r.walk.median_us <= r.walk.p99_us);
    }
}
