//! Little-endian model file: header, fixed-size node records, normalizer,
//! then length-prefixed UTF-8 class names.

use super::{Normalizer, TreeNode, ZTreeModel};
use crate::error::{Error, Result};
use crate::features::FEATURE_DIM;

pub const MAGIC: [u8; 4] = *b"ZTRE";
pub const FORMAT_VERSION: u16 = 1;
pub const NODE_RECORD_BYTES: usize = 17;
const HEADER_BYTES: usize = 4 + 2 + 2 + 2 + 4;

pub fn serialize(model: &ZTreeModel, norm: &Normalizer) -> Vec<u8> {
    let mut out = Vec::with_capacity(
        HEADER_BYTES + model.nodes.len() * NODE_RECORD_BYTES + FEATURE_DIM * 8 + 16 * 10,
    );
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(model.n_features as u16).to_le_bytes());
    out.extend_from_slice(&(model.class_names.len() as u16).to_le_bytes());
    out.extend_from_slice(&(model.nodes.len() as u32).to_le_bytes());
    for n in &model.nodes {
        out.push(n.is_leaf as u8);
        out.extend_from_slice(&n.feature_idx.to_le_bytes());
        out.extend_from_slice(&n.threshold.to_le_bytes());
        out.extend_from_slice(&n.left.to_le_bytes());
        out.extend_from_slice(&n.right.to_le_bytes());
        out.extend_from_slice(&n.label.to_le_bytes());
    }
    for v in norm.mean.iter().chain(&norm.std) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for name in &model.class_names {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let Some(end) = end else {
            return Err(Error::Format(format!(
                "truncated model: need {n} bytes for {what} at offset {}",
                self.pos
            )));
        };
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const K: usize>(&mut self, what: &str) -> Result<[u8; K]> {
        Ok(self.take(K, what)?.try_into().unwrap())
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.array::<1>(what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.array(what)?))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array(what)?))
    }

    fn f32(&mut self, what: &str) -> Result<f32> {
        Ok(f32::from_le_bytes(self.array(what)?))
    }
}

pub fn deserialize(bytes: &[u8]) -> Result<(ZTreeModel, Normalizer)> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let magic = r.array::<4>("magic")?;
    if magic != MAGIC {
        return Err(Error::Format(format!(
            "bad magic {magic:02x?}, expected {MAGIC:02x?}"
        )));
    }
    let version = r.u16("version")?;
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "unsupported version {version}, expected {FORMAT_VERSION}"
        )));
    }
    let n_features = r.u16("feature count")? as usize;
    if n_features != FEATURE_DIM {
        return Err(Error::Format(format!(
            "model has {n_features} features, expected {FEATURE_DIM}"
        )));
    }
    let class_count = r.u16("class count")? as usize;
    let node_count = r.u32("node count")? as usize;
    if node_count == 0 {
        return Err(Error::Format("node count is zero".into()));
    }
    let remaining = bytes.len() - r.pos;
    if node_count > remaining / NODE_RECORD_BYTES {
        return Err(Error::Format(format!(
            "truncated model: {node_count} nodes declared, {remaining} bytes left"
        )));
    }
    let mut nodes = Vec::with_capacity(node_count);
    for _ in 0..node_count {
        let flag = r.u8("node flag")?;
        if flag > 1 {
            return Err(Error::Format(format!("node leaf flag {flag} is not 0 or 1")));
        }
        nodes.push(TreeNode {
            is_leaf: flag == 1,
            feature_idx: r.u16("node feature")?,
            threshold: r.f32("node threshold")?,
            left: r.u32("node left")?,
            right: r.u32("node right")?,
            label: r.u16("node label")?,
        });
    }
    let mut mean = Vec::with_capacity(FEATURE_DIM);
    for _ in 0..FEATURE_DIM {
        mean.push(r.f32("normalizer mean")?);
    }
    let mut std = Vec::with_capacity(FEATURE_DIM);
    for _ in 0..FEATURE_DIM {
        std.push(r.f32("normalizer std")?);
    }
    let mut class_names = Vec::with_capacity(class_count);
    for _ in 0..class_count {
        let len = r.u16("class name length")? as usize;
        let raw = r.take(len, "class name")?;
        let name = std::str::from_utf8(raw)
            .map_err(|_| Error::Format("class name is not UTF-8".into()))?;
        class_names.push(name.to_string());
    }
    if r.pos != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after model",
            bytes.len() - r.pos
        )));
    }
    let model = ZTreeModel {
        nodes,
        n_features,
        class_names,
    };
    model.validate()?;
    let norm = Normalizer { mean, std };
    norm.validate()?;
    Ok((model, norm))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ztree::default_class_names;

    fn sample() -> (ZTreeModel, Normalizer) {
        let model = ZTreeModel {
            nodes: vec![
                TreeNode {
                    is_leaf: false,
                    feature_idx: 64,
                    threshold: 0.25,
                    left: 1,
                    right: 2,
                    label: 1,
                },
                TreeNode::leaf(1),
                TreeNode::leaf(9),
            ],
            n_features: FEATURE_DIM,
            class_names: default_class_names(),
        };
        let mut norm = Normalizer::identity();
        norm.mean[3] = -2.5;
        norm.std[7] = 0.125;
        (model, norm)
    }

    #[test]
    fn round_trip_is_exact() {
        let (m, n) = sample();
        let bytes = serialize(&m, &n);
        assert_eq!(&bytes[..4], b"ZTRE");
        let (m2, n2) = deserialize(&bytes).unwrap();
        assert_eq!(m, m2);
        assert_eq!(n, n2);
        assert_eq!(serialize(&m2, &n2), bytes);
    }

    #[test]
    fn single_leaf_has_one_record() {
        let bytes = serialize(&ZTreeModel::single_leaf(4), &Normalizer::identity());
        assert_eq!(u32::from_le_bytes(bytes[10..14].try_into().unwrap()), 1);
        let (m, _) = deserialize(&bytes).unwrap();
        assert_eq!(m.node_count(), 1);
    }

    #[test]
    fn corrupted_magic_is_named() {
        let (m, n) = sample();
        let mut bytes = serialize(&m, &n);
        bytes[0] = b'X';
        let err = deserialize(&bytes).unwrap_err().to_string();
        assert!(err.contains("magic"), "{err}");
    }

    #[test]
    fn structural_corruption_is_rejected() {
        let (m, n) = sample();
        let bytes = serialize(&m, &n);
        assert!(deserialize(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(deserialize(&extra).is_err());
        let mut bad_version = bytes.clone();
        bad_version[4] = 2;
        assert!(deserialize(&bad_version).unwrap_err().to_string().contains("version"));
        // point the root's left child back at itself
        let mut cyclic = bytes.clone();
        cyclic[HEADER_BYTES + 7..HEADER_BYTES + 11].copy_from_slice(&0u32.to_le_bytes());
        assert!(deserialize(&cyclic).is_err());
        let mut huge = bytes;
        huge[10..14].copy_from_slice(&u32::MAX.to_le_bytes());
        assert!(deserialize(&huge).is_err());
    }
}
