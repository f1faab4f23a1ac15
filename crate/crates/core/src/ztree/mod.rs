//! Univariate decision tree grown with a two-proportion Z-squared split
//! criterion, plus the flat node array it serializes to.
//!
//! Inference walks the array from node 0: at an internal node the input's
//! z-scored feature goes left iff it is strictly less than the threshold.
//! Normalization and comparison both run in `f32` so every backend that
//! reads the same model bytes reproduces the same labels.

mod format;
mod train;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureVector, FEATURE_DIM};
use crate::waveform::WaveformClass;

pub use format::{deserialize, serialize, FORMAT_VERSION, MAGIC, NODE_RECORD_BYTES};
pub use train::{
    best_split, candidate_thresholds, fit, fit_with_names, z2_score, SplitChoice, Z2_EPS,
};

/// Floor applied to every fitted standard deviation.
pub const STD_FLOOR: f64 = 1e-8;
/// Depth cap for the Gini ablation tree.
pub const GINI_MAX_DEPTH: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TreeNode {
    pub is_leaf: bool,
    pub feature_idx: u16,
    pub threshold: f32,
    pub left: u32,
    pub right: u32,
    /// Leaf prediction; internal nodes carry their majority class.
    pub label: u16,
}

impl TreeNode {
    pub fn leaf(label: u16) -> Self {
        TreeNode {
            is_leaf: true,
            feature_idx: 0,
            threshold: 0.0,
            left: 0,
            right: 0,
            label,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZTreeModel {
    pub nodes: Vec<TreeNode>,
    pub n_features: usize,
    pub class_names: Vec<String>,
}

impl ZTreeModel {
    pub fn single_leaf(label: u16) -> Self {
        ZTreeModel {
            nodes: vec![TreeNode::leaf(label)],
            n_features: FEATURE_DIM,
            class_names: default_class_names(),
        }
    }

    pub fn class_count(&self) -> usize {
        self.class_names.len()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes.iter().filter(|n| n.is_leaf).count()
    }

    pub fn internal_count(&self) -> usize {
        self.node_count() - self.leaf_count()
    }

    /// Number of edges on the longest root-to-leaf path.
    pub fn depth(&self) -> usize {
        let mut depth = vec![0usize; self.nodes.len()];
        let mut max = 0;
        for (i, n) in self.nodes.iter().enumerate() {
            if !n.is_leaf {
                for c in [n.left as usize, n.right as usize] {
                    depth[c] = depth[i] + 1;
                    max = max.max(depth[c]);
                }
            }
        }
        max
    }

    /// Check structural invariants: children strictly after parents, every
    /// node reached exactly once from the root, features and labels in range.
    pub fn validate(&self) -> Result<()> {
        let count = self.nodes.len();
        if count == 0 {
            return Err(Error::Format("model has no nodes".into()));
        }
        if self.n_features != FEATURE_DIM {
            return Err(Error::Format(format!(
                "model expects {} features, toolkit provides {FEATURE_DIM}",
                self.n_features
            )));
        }
        let mut seen = vec![0u8; count];
        seen[0] = 1;
        for (i, n) in self.nodes.iter().enumerate() {
            if n.label as usize >= self.class_count() {
                return Err(Error::Format(format!("node {i} label {} out of range", n.label)));
            }
            if n.is_leaf {
                continue;
            }
            if n.feature_idx as usize >= self.n_features {
                return Err(Error::Format(format!(
                    "node {i} splits on feature {} >= {}",
                    n.feature_idx, self.n_features
                )));
            }
            if !n.threshold.is_finite() {
                return Err(Error::Format(format!("node {i} has a non-finite threshold")));
            }
            for c in [n.left as usize, n.right as usize] {
                if c <= i || c >= count {
                    return Err(Error::Format(format!("node {i} has invalid child {c}")));
                }
                seen[c] += 1;
            }
        }
        if let Some(i) = seen.iter().position(|&s| s != 1) {
            return Err(Error::Format(format!("node {i} is unreachable or shared")));
        }
        Ok(())
    }
}

pub fn default_class_names() -> Vec<String> {
    WaveformClass::ALL.iter().map(|w| w.name().to_string()).collect()
}

/// Per-feature z-score parameters, stored in single precision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl Normalizer {
    pub fn identity() -> Self {
        Normalizer {
            mean: vec![0.0; FEATURE_DIM],
            std: vec![1.0; FEATURE_DIM],
        }
    }

    /// Population mean and floored standard deviation per column.
    pub fn fit(rows: &[FeatureVector]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Training("cannot fit a normalizer on zero rows".into()));
        }
        let n = rows.len() as f64;
        let mut mean = [0.0f64; FEATURE_DIM];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(r.0) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = [0.0f64; FEATURE_DIM];
        for r in rows {
            for ((s, m), v) in var.iter_mut().zip(&mean).zip(r.0) {
                *s += (v - m) * (v - m);
            }
        }
        Ok(Normalizer {
            mean: mean.iter().map(|&m| m as f32).collect(),
            std: var
                .iter()
                .map(|&s| ((s / n).sqrt().max(STD_FLOOR) as f32).max(STD_FLOOR as f32))
                .collect(),
        })
    }

    #[inline]
    pub fn apply(&self, idx: usize, raw: f32) -> f32 {
        (raw - self.mean[idx]) / self.std[idx]
    }

    pub fn validate(&self) -> Result<()> {
        if self.mean.len() != FEATURE_DIM || self.std.len() != FEATURE_DIM {
            return Err(Error::Format("normalizer must hold 80 means and 80 stds".into()));
        }
        if self.mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::Format("normalizer mean is not finite".into()));
        }
        if self.std.iter().any(|s| !(s.is_finite() && *s >= STD_FLOOR as f32)) {
            return Err(Error::Format("normalizer std below floor or not finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Criterion {
    Ztest,
    Gini,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub k_folds: usize,
    pub repeats: usize,
    pub n_min: usize,
    pub tau_sig: f64,
    pub max_thresholds: usize,
    pub criterion: Criterion,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            k_folds: 5,
            repeats: 3,
            n_min: 20,
            tau_sig: 3.84,
            max_thresholds: 256,
            criterion: Criterion::Ztest,
            seed: 0,
        }
    }
}

impl TrainConfig {
    #[allow(clippy::neg_cmp_op_on_partial_ord)] // NaN must fail too
    pub fn validate(&self) -> Result<()> {
        if self.k_folds < 2 {
            return Err(Error::Input("k_folds must be at least 2".into()));
        }
        if self.repeats < 1 {
            return Err(Error::Input("repeats must be at least 1".into()));
        }
        if self.n_min < 1 {
            return Err(Error::Input("n_min must be at least 1".into()));
        }
        if !(self.tau_sig > 0.0) {
            return Err(Error::Input("tau_sig must be positive".into()));
        }
        if self.max_thresholds < 2 {
            return Err(Error::Input("max_thresholds must be at least 2".into()));
        }
        Ok(())
    }
}

/// Classify a raw (un-normalized) single-precision feature vector.
#[inline]
pub fn predict_f32(model: &ZTreeModel, norm: &Normalizer, x: &[f32]) -> u16 {
    let nodes = &model.nodes;
    let mut i = 0usize;
    loop {
        let node = &nodes[i];
        if node.is_leaf {
            return node.label;
        }
        let f = node.feature_idx as usize;
        let v = norm.apply(f, x[f]);
        i = if v < node.threshold {
            node.left as usize
        } else {
            node.right as usize
        };
    }
}

/// Classify a feature vector; values are rounded to `f32` first.
pub fn predict(model: &ZTreeModel, norm: &Normalizer, feat: &FeatureVector) -> u16 {
    predict_f32(model, norm, &feat.to_f32())
}

/// Number of internal nodes splitting on each feature.
pub fn feature_importance(model: &ZTreeModel) -> [u32; FEATURE_DIM] {
    let mut counts = [0u32; FEATURE_DIM];
    for n in model.nodes.iter().filter(|n| !n.is_leaf) {
        counts[n.feature_idx as usize] += 1;
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn three_node(feature: u16, threshold: f32) -> ZTreeModel {
        ZTreeModel {
            nodes: vec![
                TreeNode {
                    is_leaf: false,
                    feature_idx: feature,
                    threshold,
                    left: 1,
                    right: 2,
                    label: 0,
                },
                TreeNode::leaf(3),
                TreeNode::leaf(7),
            ],
            n_features: FEATURE_DIM,
            class_names: default_class_names(),
        }
    }

    fn random_tree(rng: &mut ChaCha8Rng, internal: usize) -> ZTreeModel {
        // Grow by repeatedly splitting a random leaf, then relabel in preorder.
        #[derive(Clone)]
        enum Shape {
            Leaf(u16),
            Split(u16, f32, Box<Shape>, Box<Shape>),
        }
        fn split_random(s: &mut Shape, rng: &mut ChaCha8Rng) {
            match s {
                Shape::Leaf(_) => {
                    *s = Shape::Split(
                        rng.random_range(0..80),
                        rng.random_range(-2.0..2.0),
                        Box::new(Shape::Leaf(rng.random_range(0..10))),
                        Box::new(Shape::Leaf(rng.random_range(0..10))),
                    )
                }
                Shape::Split(_, _, l, r) => {
                    if rng.random::<bool>() {
                        split_random(l, rng)
                    } else {
                        split_random(r, rng)
                    }
                }
            }
        }
        fn emit(s: &Shape, out: &mut Vec<TreeNode>) -> u32 {
            let id = out.len() as u32;
            match s {
                Shape::Leaf(l) => out.push(TreeNode::leaf(*l)),
                Shape::Split(f, t, l, r) => {
                    out.push(TreeNode::leaf(0));
                    let li = emit(l, out);
                    let ri = emit(r, out);
                    out[id as usize] = TreeNode {
                        is_leaf: false,
                        feature_idx: *f,
                        threshold: *t,
                        left: li,
                        right: ri,
                        label: 0,
                    };
                }
            }
            id
        }
        let mut shape = Shape::Leaf(rng.random_range(0..10));
        for _ in 0..internal {
            split_random(&mut shape, rng);
        }
        let mut nodes = Vec::new();
        emit(&shape, &mut nodes);
        ZTreeModel {
            nodes,
            n_features: FEATURE_DIM,
            class_names: default_class_names(),
        }
    }

    /// Reference traversal: normalize everything up front and recurse.
    fn recursive_predict(model: &ZTreeModel, norm: &Normalizer, x: &[f32], at: usize) -> u16 {
        let z: Vec<f32> = (0..FEATURE_DIM).map(|i| (x[i] - norm.mean[i]) / norm.std[i]).collect();
        fn walk(m: &ZTreeModel, z: &[f32], at: usize) -> u16 {
            let n = &m.nodes[at];
            if n.is_leaf {
                n.label
            } else if z[n.feature_idx as usize] < n.threshold {
                walk(m, z, n.left as usize)
            } else {
                walk(m, z, n.right as usize)
            }
        }
        walk(model, &z, at)
    }

    #[test]
    fn single_leaf_predicts_its_label() {
        let m = ZTreeModel::single_leaf(4);
        let x = [1.5f32; 80];
        assert_eq!(predict_f32(&m, &Normalizer::identity(), &x), 4);
        assert_eq!(feature_importance(&m), [0; 80]);
    }

    #[test]
    fn three_node_goes_left_below_threshold() {
        let m = three_node(5, 0.0);
        let mut x = [0.0f32; 80];
        x[5] = -1.0;
        assert_eq!(predict_f32(&m, &Normalizer::identity(), &x), 3);
        x[5] = 0.0;
        assert_eq!(predict_f32(&m, &Normalizer::identity(), &x), 7, "equality goes right");
        let imp = feature_importance(&m);
        assert_eq!(imp[5], 1);
        assert_eq!(imp.iter().sum::<u32>(), 1);
    }

    #[test]
    fn predict_matches_recursive_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let model = random_tree(&mut rng, 60);
        model.validate().unwrap();
        let norm = Normalizer {
            mean: (0..80).map(|_| rng.random_range(-1.0..1.0)).collect(),
            std: (0..80).map(|_| rng.random_range(0.1..3.0)).collect(),
        };
        for _ in 0..10_000 {
            let x: Vec<f32> = (0..80).map(|_| rng.random_range(-6.0..6.0)).collect();
            assert_eq!(predict_f32(&model, &norm, &x), recursive_predict(&model, &norm, &x, 0));
        }
        let imp = feature_importance(&model);
        assert_eq!(imp.iter().sum::<u32>() as usize, model.internal_count());
    }

    #[test]
    fn validate_rejects_backward_children() {
        let mut m = three_node(5, 0.0);
        m.nodes[0].left = 0;
        assert!(m.validate().is_err());
        let mut m = three_node(5, 0.0);
        m.nodes[0].feature_idx = 80;
        assert!(m.validate().is_err());
        let mut m = three_node(5, 0.0);
        m.nodes.push(TreeNode::leaf(1));
        assert!(m.validate().is_err(), "orphan node");
    }

    #[test]
    fn normalizer_floors_constant_columns() {
        let rows = vec![FeatureVector([2.0; 80]); 5];
        let n = Normalizer::fit(&rows).unwrap();
        assert!(n.std.iter().all(|&s| s >= 1e-8));
        assert_eq!(n.apply(3, 2.0), 0.0);
        n.validate().unwrap();
    }

    #[test]
    fn depth_and_counts() {
        let m = three_node(1, 0.5);
        assert_eq!((m.node_count(), m.leaf_count(), m.internal_count(), m.depth()), (3, 2, 1, 1));
        assert_eq!(ZTreeModel::single_leaf(0).depth(), 0);
    }
}
