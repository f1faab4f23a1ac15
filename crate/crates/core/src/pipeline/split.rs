use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::RecordMeta;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    /// Sorted record indices.
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    /// One message per stratum that contributed nothing to training.
    pub warnings: Vec<String>,
}

/// Per (class, SNR) stratum, `floor(ratio * n)` randomly chosen records go to
/// training and the rest to test.
pub fn stratified_split(metas: &[RecordMeta], ratio: f64, seed: u64) -> Result<Split> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Usage(format!("split ratio {ratio} outside (0, 1)")));
    }
    let mut strata: BTreeMap<(u8, u32), Vec<usize>> = BTreeMap::new();
    for (i, m) in metas.iter().enumerate() {
        strata
            .entry((m.label.code(), m.snr_db.to_bits()))
            .or_default()
            .push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut split = Split {
        train: Vec::new(),
        test: Vec::new(),
        warnings: Vec::new(),
    };
    for ((label, snr_bits), mut ids) in strata {
        // The epsilon keeps products such as 0.29 * 100 from flooring to 28.
        let n_train = (ratio * ids.len() as f64 + 1e-9).floor() as usize;
        if n_train == 0 {
            split.warnings.push(format!(
                "stratum class={label} snr={} dB has {} record(s); none go to training",
                f32::from_bits(snr_bits),
                ids.len()
            ));
        }
        ids.shuffle(&mut rng);
        split.train.extend_from_slice(&ids[..n_train]);
        split.test.extend_from_slice(&ids[n_train..]);
    }
    split.train.sort_unstable();
    split.test.sort_unstable();
    Ok(split)
}
