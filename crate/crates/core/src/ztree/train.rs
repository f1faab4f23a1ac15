use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{
    default_class_names, Criterion, Normalizer, TrainConfig, TreeNode, ZTreeModel, GINI_MAX_DEPTH,
};
use crate::error::{Error, Result};
use crate::features::{FeatureVector, FEATURE_DIM};
use crate::pipeline::derive_seed;

/// Floor on the pooled variance `p(1-p)`.
pub const Z2_EPS: f64 = 1e-12;

/// Squared pooled two-proportion z statistic of a binary split.
pub fn z2_score(k_left: u64, n_left: u64, k_right: u64, n_right: u64) -> Result<f64> {
    if n_left == 0 || n_right == 0 || k_left > n_left || k_right > n_right {
        return Err(Error::Input(format!(
            "invalid split counts k_L={k_left} n_L={n_left} k_R={k_right} n_R={n_right}"
        )));
    }
    Ok(z2_unchecked(k_left, n_left, k_right, n_right))
}

#[inline]
fn z2_unchecked(k_left: u64, n_left: u64, k_right: u64, n_right: u64) -> f64 {
    let (nl, nr) = (n_left as f64, n_right as f64);
    let pl = k_left as f64 / nl;
    let pr = k_right as f64 / nr;
    let pooled = (k_left + k_right) as f64 / (nl + nr);
    let var = (pooled * (1.0 - pooled)).max(Z2_EPS);
    let d = pl - pr;
    d * d / (var * (1.0 / nl + 1.0 / nr))
}

/// Midpoints between adjacent distinct sorted values, thinned to at most
/// `max_thresholds` quantile-spaced entries.
///
/// A midpoint that rounds down onto the lower value is replaced by the upper
/// value so that `v < t` still separates the pair.
pub fn candidate_thresholds(sorted: &[f32], max_thresholds: usize) -> Vec<f32> {
    let mut mids = Vec::new();
    for w in sorted.windows(2) {
        let (a, b) = (w[0], w[1]);
        if a < b {
            let m = a + (b - a) * 0.5;
            mids.push(if m > a { m } else { b });
        }
    }
    if mids.len() <= max_thresholds || max_thresholds < 2 {
        return mids;
    }
    let last = (mids.len() - 1) as f64;
    let step = last / (max_thresholds - 1) as f64;
    (0..max_thresholds)
        .map(|i| mids[((i as f64) * step).round() as usize])
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitChoice {
    pub feature: usize,
    pub threshold: f32,
    /// Generalization Z-squared for `ztest`, impurity decrease for `gini`.
    pub score: f64,
}

fn class_counts(labels: &[u8], samples: &[usize], classes: usize) -> Vec<u64> {
    let mut counts = vec![0u64; classes];
    for &i in samples {
        counts[labels[i] as usize] += 1;
    }
    counts
}

fn majority(counts: &[u64]) -> usize {
    let mut best = 0;
    for (c, &n) in counts.iter().enumerate() {
        if n > counts[best] {
            best = c;
        }
    }
    best
}

/// Fold assignment per repeat: `folds[r][j]` is the fold of `samples[j]`.
fn fold_layout(n: usize, k: usize, repeats: usize, seed: u64) -> Vec<Vec<u16>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..repeats)
        .map(|_| {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng);
            let mut fold = vec![0u16; n];
            for (pos, &j) in order.iter().enumerate() {
                fold[j] = (pos % k) as u16;
            }
            fold
        })
        .collect()
}

struct SortedColumn {
    values: Vec<f32>,
    /// Sample positions (indices into the node's sample list) in value order.
    order: Vec<usize>,
}

fn sort_column(column: &[f32], samples: &[usize]) -> SortedColumn {
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.sort_by(|&a, &b| column[samples[a]].total_cmp(&column[samples[b]]));
    SortedColumn {
        values: order.iter().map(|&j| column[samples[j]]).collect(),
        order,
    }
}

/// In-sample best threshold on one feature, honouring `n_min` on both sides.
fn best_in_sample(
    sorted: &SortedColumn,
    positive: &[bool],
    config: &TrainConfig,
) -> Option<(f32, f64)> {
    let n = sorted.values.len();
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0u64);
    for &j in &sorted.order {
        prefix.push(prefix.last().unwrap() + positive[j] as u64);
    }
    let total_pos = prefix[n];
    let n_min = config.n_min;
    let mut best: Option<(f32, f64)> = None;
    for t in candidate_thresholds(&sorted.values, config.max_thresholds) {
        let nl = sorted.values.partition_point(|&v| v < t);
        let nr = n - nl;
        if nl < n_min || nr < n_min {
            continue;
        }
        let kl = prefix[nl];
        let s = z2_unchecked(kl, nl as u64, total_pos - kl, nr as u64);
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((t, s));
        }
    }
    best
}

/// Mean held-out-fold Z-squared of a fixed split.
fn generalization_score(
    column: &[f32],
    samples: &[usize],
    positive: &[bool],
    threshold: f32,
    folds: &[Vec<u16>],
    k: usize,
) -> f64 {
    let mut total = 0.0;
    for layout in folds {
        // [n_left, k_left, n_right, k_right] per fold
        let mut counts = vec![[0u64; 4]; k];
        for (j, &i) in samples.iter().enumerate() {
            let c = &mut counts[layout[j] as usize];
            let side = if column[i] < threshold { 0 } else { 2 };
            c[side] += 1;
            c[side + 1] += positive[j] as u64;
        }
        for c in &counts {
            if c[0] > 0 && c[2] > 0 {
                total += z2_unchecked(c[1], c[0], c[3], c[2]);
            }
        }
    }
    total / (folds.len() * k) as f64
}

fn better(a: &SplitChoice, b: &SplitChoice) -> bool {
    // Higher score wins; ties go to the lower feature, then lower threshold.
    a.score > b.score
        || (a.score == b.score
            && (a.feature < b.feature || (a.feature == b.feature && a.threshold < b.threshold)))
}

fn reduce_best(candidates: impl Iterator<Item = SplitChoice>) -> Option<SplitChoice> {
    candidates.fold(None, |acc, c| match acc {
        Some(a) if !better(&c, &a) => Some(a),
        _ => Some(c),
    })
}

/// Choose the Z-squared split of a node treating `pos_class` as positive.
///
/// `columns[f][i]` holds the normalized value of feature `f` for sample `i`;
/// `samples` lists the node's members. Returns `None` when no candidate
/// satisfies `n_min` or the best generalization score does not exceed
/// `tau_sig`.
pub fn best_split(
    columns: &[Vec<f32>],
    labels: &[u8],
    samples: &[usize],
    pos_class: u8,
    config: &TrainConfig,
    fold_seed: u64,
) -> Option<SplitChoice> {
    let n = samples.len();
    if n < 2 * config.n_min {
        return None;
    }
    let positive: Vec<bool> = samples.iter().map(|&i| labels[i] == pos_class).collect();
    let n_pos = positive.iter().filter(|&&p| p).count();
    if n_pos == 0 || n_pos == n {
        return None;
    }
    let folds = fold_layout(n, config.k_folds, config.repeats, fold_seed);
    let per_feature: Vec<Option<SplitChoice>> = columns
        .par_iter()
        .enumerate()
        .map(|(feature, column)| {
            let sorted = sort_column(column, samples);
            let (threshold, _) = best_in_sample(&sorted, &positive, config)?;
            let score =
                generalization_score(column, samples, &positive, threshold, &folds, config.k_folds);
            Some(SplitChoice {
                feature,
                threshold,
                score,
            })
        })
        .collect();
    reduce_best(per_feature.into_iter().flatten()).filter(|s| s.score > config.tau_sig)
}

fn gini(counts: &[u64], n: u64) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let n = n as f64;
    1.0 - counts.iter().map(|&c| (c as f64 / n).powi(2)).sum::<f64>()
}

const GINI_MIN_DECREASE: f64 = 1e-12;

fn best_gini_split(
    columns: &[Vec<f32>],
    labels: &[u8],
    samples: &[usize],
    classes: usize,
    config: &TrainConfig,
) -> Option<SplitChoice> {
    let n = samples.len();
    let parent_counts = class_counts(labels, samples, classes);
    let parent = gini(&parent_counts, n as u64);
    let per_feature: Vec<Option<SplitChoice>> = columns
        .par_iter()
        .enumerate()
        .map(|(feature, column)| {
            let sorted = sort_column(column, samples);
            // prefix[i * classes + c]: class c count among the first i sorted samples
            let mut prefix = vec![0u64; (n + 1) * classes];
            for (pos, &j) in sorted.order.iter().enumerate() {
                let (head, tail) = prefix.split_at_mut((pos + 1) * classes);
                tail[..classes].copy_from_slice(&head[pos * classes..]);
                tail[labels[samples[j]] as usize] += 1;
            }
            let mut best: Option<SplitChoice> = None;
            let mut right = vec![0u64; classes];
            for t in candidate_thresholds(&sorted.values, config.max_thresholds) {
                let nl = sorted.values.partition_point(|&v| v < t);
                let nr = n - nl;
                if nl < config.n_min || nr < config.n_min {
                    continue;
                }
                let left = &prefix[nl * classes..(nl + 1) * classes];
                for c in 0..classes {
                    right[c] = parent_counts[c] - left[c];
                }
                let child = (nl as f64 * gini(left, nl as u64) + nr as f64 * gini(&right, nr as u64))
                    / n as f64;
                let decrease = parent - child;
                if best.is_none_or(|b| decrease > b.score) {
                    best = Some(SplitChoice {
                        feature,
                        threshold: t,
                        score: decrease,
                    });
                }
            }
            best
        })
        .collect();
    reduce_best(per_feature.into_iter().flatten()).filter(|s| s.score > GINI_MIN_DECREASE)
}

struct Grower<'a> {
    columns: Vec<Vec<f32>>,
    labels: &'a [u8],
    classes: usize,
    config: &'a TrainConfig,
    nodes: Vec<TreeNode>,
}

impl Grower<'_> {
    // Seeds follow the root-to-node path, not the node id, so a node's fold
    // draws don't depend on how much of the tree was grown before it. That
    // keeps a stricter tau_sig an exact prefix of the looser tree.
    fn grow(&mut self, samples: Vec<usize>, depth: usize, seed: u64) -> u32 {
        let counts = class_counts(self.labels, &samples, self.classes);
        let label = majority(&counts);
        let id = self.nodes.len();
        self.nodes.push(TreeNode::leaf(label as u16));
        let classes_present = counts.iter().filter(|&&c| c > 0).count();
        if classes_present < 2 || samples.len() < 2 * self.config.n_min {
            return id as u32;
        }
        let split = match self.config.criterion {
            Criterion::Ztest => best_split(
                &self.columns,
                self.labels,
                &samples,
                label as u8,
                self.config,
                seed,
            ),
            Criterion::Gini if depth < GINI_MAX_DEPTH => {
                best_gini_split(&self.columns, self.labels, &samples, self.classes, self.config)
            }
            Criterion::Gini => None,
        };
        let Some(split) = split else {
            return id as u32;
        };
        let column = &self.columns[split.feature];
        let (left, right): (Vec<usize>, Vec<usize>) =
            samples.iter().partition(|&&i| column[i] < split.threshold);
        drop(samples);
        let l = self.grow(left, depth + 1, derive_seed(seed, 1));
        let r = self.grow(right, depth + 1, derive_seed(seed, 2));
        self.nodes[id] = TreeNode {
            is_leaf: false,
            feature_idx: split.feature as u16,
            threshold: split.threshold,
            left: l,
            right: r,
            label: label as u16,
        };
        id as u32
    }
}

/// Fit the normalizer and grow a tree over the ten waveform classes.
pub fn fit(
    features: &[FeatureVector],
    labels: &[u8],
    config: &TrainConfig,
) -> Result<(ZTreeModel, Normalizer)> {
    fit_with_names(features, labels, config, default_class_names())
}

/// As [`fit`] with an explicit class table; labels must index into it.
pub fn fit_with_names(
    features: &[FeatureVector],
    labels: &[u8],
    config: &TrainConfig,
    class_names: Vec<String>,
) -> Result<(ZTreeModel, Normalizer)> {
    config.validate()?;
    if features.is_empty() {
        return Err(Error::Training("training set is empty".into()));
    }
    if features.len() != labels.len() {
        return Err(Error::Training(format!(
            "{} feature rows but {} labels",
            features.len(),
            labels.len()
        )));
    }
    let classes = class_names.len();
    if classes == 0 || classes > u16::MAX as usize {
        return Err(Error::Training("class table must be non-empty".into()));
    }
    if let Some(bad) = labels.iter().find(|&&l| l as usize >= classes) {
        return Err(Error::Training(format!("label {bad} outside {classes} classes")));
    }
    if let Some(row) = features.iter().position(|r| r.0.iter().any(|v| !v.is_finite())) {
        return Err(Error::Training(format!("feature row {row} has non-finite values")));
    }
    let normalizer = Normalizer::fit(features)?;
    let columns: Vec<Vec<f32>> = (0..FEATURE_DIM)
        .map(|f| {
            features
                .iter()
                .map(|r| normalizer.apply(f, r.0[f] as f32))
                .collect()
        })
        .collect();
    let mut grower = Grower {
        columns,
        labels,
        classes,
        config,
        nodes: Vec::new(),
    };
    grower.grow((0..features.len()).collect(), 0, config.seed);
    let model = ZTreeModel {
        nodes: grower.nodes,
        n_features: FEATURE_DIM,
        class_names,
    };
    model.validate()?;
    Ok((model, normalizer))
}
