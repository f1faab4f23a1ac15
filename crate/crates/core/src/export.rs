//! C99 header emission and the companion test-vector dump.
//!
//! The emitted function normalizes each visited feature with
//! `(x - mean) / std` in `float` and goes left iff the result is strictly
//! less than the node threshold, matching [`crate::ztree::predict_f32`].

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::features::{FeatureVector, FEATURE_DIM};
use crate::ztree::{predict_f32, Normalizer, ZTreeModel, FORMAT_VERSION};

/// `sizeof` of the emitted node struct on common ABIs: u8, u16, f32, u32,
/// u32, u16 with natural alignment.
pub const C_NODE_BYTES: usize = 20;

/// Static storage of the emitted node array.
pub fn c_node_array_bytes(model: &ZTreeModel) -> usize {
    model.node_count() * C_NODE_BYTES
}

fn c_float(v: f32) -> String {
    // Shortest round-trip digits; any correctly rounding C parser recovers
    // the same bits.
    format!("{v:e}f")
}

fn c_string(s: &str) -> String {
    let mut out = String::from("\"");
    for b in s.bytes() {
        match b {
            b'"' | b'\\' => {
                out.push('\\');
                out.push(b as char);
            }
            0x20..=0x7e => out.push(b as char),
            _ => write!(out, "\\{b:03o}").unwrap(),
        }
    }
    out.push('"');
    out
}

fn float_table(out: &mut String, name: &str, values: &[f32]) {
    writeln!(out, "static const float {name}[WAVETREE_N_FEATURES] = {{").unwrap();
    for chunk in values.chunks(6) {
        let row: Vec<String> = chunk.iter().map(|&v| c_float(v)).collect();
        writeln!(out, "    {},", row.join(", ")).unwrap();
    }
    writeln!(out, "}};").unwrap();
}

/// Render a self-contained C99 header for `model` and `norm`.
pub fn emit_c99_header(model: &ZTreeModel, norm: &Normalizer) -> Result<String> {
    model.validate()?;
    norm.validate()?;
    let mut s = String::new();
    writeln!(s, "/* wavetree model header, model format version {FORMAT_VERSION}. Generated; do not edit. */").unwrap();
    writeln!(s, "#ifndef WAVETREE_MODEL_H").unwrap();
    writeln!(s, "#define WAVETREE_MODEL_H").unwrap();
    writeln!(s).unwrap();
    writeln!(s, "#include <stdint.h>").unwrap();
    writeln!(s).unwrap();
    writeln!(s, "#define WAVETREE_FORMAT_VERSION {FORMAT_VERSION}").unwrap();
    writeln!(s, "#define WAVETREE_N_FEATURES {}", model.n_features).unwrap();
    writeln!(s, "#define WAVETREE_N_CLASSES {}", model.class_count()).unwrap();
    writeln!(s, "#define WAVETREE_N_NODES {}", model.node_count()).unwrap();
    writeln!(s).unwrap();
    writeln!(s, "typedef struct {{").unwrap();
    writeln!(s, "    uint8_t is_leaf;").unwrap();
    writeln!(s, "    uint16_t feature_idx;").unwrap();
    writeln!(s, "    float threshold;").unwrap();
    writeln!(s, "    uint32_t left;").unwrap();
    writeln!(s, "    uint32_t right;").unwrap();
    writeln!(s, "    uint16_t label;").unwrap();
    writeln!(s, "}} wavetree_node;").unwrap();
    writeln!(s).unwrap();
    writeln!(s, "static const wavetree_node wavetree_nodes[WAVETREE_N_NODES] = {{").unwrap();
    for (i, n) in model.nodes.iter().enumerate() {
        writeln!(
            s,
            "    {{{}u, {}u, {}, {}u, {}u, {}u}}, /* {i} */",
            n.is_leaf as u8,
            n.feature_idx,
            c_float(n.threshold),
            n.left,
            n.right,
            n.label
        )
        .unwrap();
    }
    writeln!(s, "}};").unwrap();
    writeln!(s).unwrap();
    float_table(&mut s, "wavetree_mean", &norm.mean);
    writeln!(s).unwrap();
    float_table(&mut s, "wavetree_std", &norm.std);
    writeln!(s).unwrap();
    writeln!(s, "static const char *const wavetree_class_names[WAVETREE_N_CLASSES] = {{").unwrap();
    for name in &model.class_names {
        writeln!(s, "    {},", c_string(name)).unwrap();
    }
    writeln!(s, "}};").unwrap();
    writeln!(s).unwrap();
    writeln!(s, "/* Raw (unnormalized) features in, class code out. */").unwrap();
    writeln!(s, "static uint16_t wavetree_predict(const float x[WAVETREE_N_FEATURES])").unwrap();
    writeln!(s, "{{").unwrap();
    if model.node_count() == 1 {
        writeln!(s, "    (void)x;").unwrap();
        writeln!(s, "    return {}u;", model.nodes[0].label).unwrap();
    } else {
        writeln!(s, "    uint32_t i = 0;").unwrap();
        writeln!(s, "    while (!wavetree_nodes[i].is_leaf) {{").unwrap();
        writeln!(s, "        const wavetree_node *n = &wavetree_nodes[i];").unwrap();
        writeln!(s, "        /* assignments round to float even under wider evaluation */").unwrap();
        writeln!(s, "        float d = x[n->feature_idx] - wavetree_mean[n->feature_idx];").unwrap();
        writeln!(s, "        float z = d / wavetree_std[n->feature_idx];").unwrap();
        writeln!(s, "        i = (z < n->threshold) ? n->left : n->right;").unwrap();
        writeln!(s, "    }}").unwrap();
        writeln!(s, "    return wavetree_nodes[i].label;").unwrap();
    }
    writeln!(s, "}}").unwrap();
    writeln!(s).unwrap();
    writeln!(s, "#endif /* WAVETREE_MODEL_H */").unwrap();
    Ok(s)
}

/// Does the walk for `x` pass through node `target`?
fn reaches(model: &ZTreeModel, norm: &Normalizer, x: &[f32], target: usize) -> bool {
    let mut i = 0usize;
    loop {
        if i == target {
            return true;
        }
        let n = &model.nodes[i];
        if n.is_leaf || i > target {
            return false;
        }
        let f = n.feature_idx as usize;
        i = if norm.apply(f, x[f]) < n.threshold {
            n.left as usize
        } else {
            n.right as usize
        };
    }
}

/// Raw values adjacent to the normalized threshold: the largest raw value
/// that normalizes below `t` and the smallest that normalizes to `>= t`.
fn straddle(norm: &Normalizer, f: usize, t: f32) -> Option<(f32, f32)> {
    let guess = (t as f64 * norm.std[f] as f64 + norm.mean[f] as f64) as f32;
    if !guess.is_finite() {
        return None;
    }
    let z = |r: f32| norm.apply(f, r);
    let mut r = guess;
    // Normalization is monotone non-decreasing in r, so walk one ulp at a time.
    for _ in 0..64 {
        if z(r) < t {
            let up = r.next_up();
            if z(up) >= t {
                return Some((r, up));
            }
            r = up;
        } else {
            let down = r.next_down();
            if z(down) < t {
                return Some((down, r));
            }
            r = down;
        }
    }
    None
}

/// Feature vectors for cross-checking another predict implementation, with
/// reference labels.
#[derive(Debug, Clone, PartialEq)]
pub struct TestVectors {
    pub vectors: Vec<[f32; FEATURE_DIM]>,
    pub labels: Vec<u16>,
    /// How many leading vectors were built to straddle a threshold.
    pub threshold_adjacent: usize,
}

/// Build `count` vectors: for every internal node, a pair of inputs that
/// reach it and land one ulp either side of its threshold, then random
/// vectors drawn around `base` rows (or the normalizer's mean/std when
/// `base` is empty).
pub fn generate_test_vectors(
    model: &ZTreeModel,
    norm: &Normalizer,
    base: &[FeatureVector],
    count: usize,
    seed: u64,
) -> Result<TestVectors> {
    model.validate()?;
    norm.validate()?;
    if count == 0 {
        return Err(Error::Usage("test-vector count must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut vectors: Vec<[f32; FEATURE_DIM]> = Vec::with_capacity(count);

    // Normalized-space box reaching each node, tracked top-down.
    let mut boxes: Vec<Option<Vec<(f32, f32)>>> = vec![None; model.node_count()];
    boxes[0] = Some(vec![(f32::NEG_INFINITY, f32::INFINITY); FEATURE_DIM]);
    for (i, n) in model.nodes.iter().enumerate() {
        if n.is_leaf || vectors.len() + 2 > count {
            continue;
        }
        let bx = boxes[i].clone().expect("parents precede children");
        let f = n.feature_idx as usize;
        let mut left = bx.clone();
        left[f].1 = left[f].1.min(n.threshold);
        let mut right = bx.clone();
        right[f].0 = right[f].0.max(n.threshold);
        boxes[n.left as usize] = Some(left);
        boxes[n.right as usize] = Some(right);

        let mut x = [0f32; FEATURE_DIM];
        for (k, &(lo, hi)) in bx.iter().enumerate() {
            let z = match (lo.is_finite(), hi.is_finite()) {
                (true, true) => lo + (hi - lo) * 0.5,
                (true, false) => lo + 0.5,
                (false, true) => hi - 0.5,
                (false, false) => rng.sample::<f64, _>(StandardNormal) as f32,
            };
            x[k] = (z as f64 * norm.std[k] as f64 + norm.mean[k] as f64) as f32;
        }
        let Some((below, above)) = straddle(norm, f, n.threshold) else {
            continue;
        };
        for v in [below, above] {
            let mut y = x;
            y[f] = v;
            if reaches(model, norm, &y, i) {
                vectors.push(y);
            }
        }
    }
    let threshold_adjacent = vectors.len();

    while vectors.len() < count {
        let mut x = [0f32; FEATURE_DIM];
        if base.is_empty() {
            for (k, v) in x.iter_mut().enumerate() {
                let z: f64 = rng.sample(StandardNormal);
                *v = (norm.mean[k] as f64 + 2.0 * z * norm.std[k] as f64) as f32;
            }
        } else {
            let row = &base[rng.random_range(0..base.len())];
            for (k, v) in x.iter_mut().enumerate() {
                let z: f64 = rng.sample(StandardNormal);
                *v = (row.0[k] + 0.05 * z * norm.std[k] as f64) as f32;
            }
        }
        vectors.push(x);
    }
    let labels = vectors.iter().map(|x| predict_f32(model, norm, x)).collect();
    Ok(TestVectors {
        vectors,
        labels,
        threshold_adjacent,
    })
}

/// Write `vectors` as consecutive little-endian f32 rows of 80 and `labels`
/// as little-endian u16.
pub fn write_test_vectors(tv: &TestVectors, vectors_path: &Path, labels_path: &Path) -> Result<()> {
    let mut vb = Vec::with_capacity(tv.vectors.len() * FEATURE_DIM * 4);
    for row in &tv.vectors {
        for v in row {
            vb.extend_from_slice(&v.to_le_bytes());
        }
    }
    std::fs::write(vectors_path, vb).map_err(|e| Error::io(vectors_path, e))?;
    let lb: Vec<u8> = tv.labels.iter().flat_map(|l| l.to_le_bytes()).collect();
    std::fs::write(labels_path, lb).map_err(|e| Error::io(labels_path, e))
}

/// Parse a raw little-endian f32 file of 80-wide rows.
pub fn read_feature_rows(path: &Path) -> Result<Vec<[f32; FEATURE_DIM]>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let row = FEATURE_DIM * 4;
    if bytes.is_empty() || bytes.len() % row != 0 {
        return Err(Error::Format(format!(
            "{}: {} bytes is not a positive multiple of {row}",
            path.display(),
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(row)
        .map(|c| {
            let mut r = [0f32; FEATURE_DIM];
            for (k, b) in c.chunks_exact(4).enumerate() {
                r[k] = f32::from_le_bytes(b.try_into().unwrap());
            }
            r
        })
        .collect())
}
