//! Little-endian dataset container.

use std::io::{BufWriter, Write};
use std::path::Path;

use super::{Dataset, Record, RecordMeta};
use crate::error::{Error, Result};
use crate::features::FEATURE_DIM;
use crate::waveform::{ChannelTag, ModulationScheme, WaveformClass, SEGMENT_LEN};

pub const DATASET_MAGIC: [u8; 4] = *b"WVDS";
pub const DATASET_VERSION: u16 = 1;
pub const FLAG_IQ: u8 = 0b01;
pub const FLAG_FEATURES: u8 = 0b10;

const HEADER_BYTES: usize = 4 + 2 + 4 + 1;
const META_BYTES: usize = 1 + 1 + 4 + 1 + 4 + 4 + 8;

fn record_bytes(flags: u8) -> usize {
    META_BYTES
        + if flags & FLAG_IQ != 0 { 2 * SEGMENT_LEN * 4 } else { 0 }
        + if flags & FLAG_FEATURES != 0 { FEATURE_DIM * 4 } else { 0 }
}

fn check_record(flags: u8, i: usize, r: &Record) -> Result<()> {
    let want_iq = flags & FLAG_IQ != 0;
    let want_feat = flags & FLAG_FEATURES != 0;
    if want_iq != r.iq.is_some() || want_feat != r.features.is_some() {
        return Err(Error::Format(format!(
            "record {i} payload does not match dataset flags {flags:#04b}"
        )));
    }
    if let Some(iq) = &r.iq {
        if iq.len() != 2 * SEGMENT_LEN {
            return Err(Error::Format(format!(
                "record {i} has {} IQ values, expected {}",
                iq.len(),
                2 * SEGMENT_LEN
            )));
        }
    }
    Ok(())
}

fn push_record(out: &mut Vec<u8>, r: &Record) {
    let m = &r.meta;
    out.push(m.label.code());
    out.push(m.modulation.code());
    out.extend_from_slice(&m.snr_db.to_le_bytes());
    out.push(m.channel_tag as u8);
    out.extend_from_slice(&m.speed_kmh.to_le_bytes());
    out.extend_from_slice(&m.delay_spread_ns.to_le_bytes());
    out.extend_from_slice(&m.seed.to_le_bytes());
    for v in r.iq.iter().flatten() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in r.features.iter().flatten() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn header(flags: u8, count: usize) -> Result<Vec<u8>> {
    let count = u32::try_from(count)
        .map_err(|_| Error::Format(format!("{count} records exceed the u32 count field")))?;
    let mut out = Vec::with_capacity(HEADER_BYTES);
    out.extend_from_slice(&DATASET_MAGIC);
    out.extend_from_slice(&DATASET_VERSION.to_le_bytes());
    out.extend_from_slice(&count.to_le_bytes());
    out.push(flags);
    Ok(out)
}

/// Serialize a dataset; panics on a record whose payload contradicts the flags.
pub fn encode_dataset(ds: &Dataset) -> Vec<u8> {
    try_encode(ds).expect("dataset payloads must match its flags")
}

fn try_encode(ds: &Dataset) -> Result<Vec<u8>> {
    let mut out = header(ds.flags, ds.records.len())?;
    out.reserve(ds.records.len() * record_bytes(ds.flags));
    for (i, r) in ds.records.iter().enumerate() {
        check_record(ds.flags, i, r)?;
        push_record(&mut out, r);
    }
    Ok(out)
}

pub fn write_dataset(path: &Path, ds: &Dataset) -> Result<()> {
    for (i, r) in ds.records.iter().enumerate() {
        check_record(ds.flags, i, r)?;
    }
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    w.write_all(&header(ds.flags, ds.records.len())?).map_err(io)?;
    let mut buf = Vec::with_capacity(record_bytes(ds.flags));
    for r in &ds.records {
        buf.clear();
        push_record(&mut buf, r);
        w.write_all(&buf).map_err(io)?;
    }
    w.flush().map_err(io)
}

fn le_f32(b: &[u8]) -> f32 {
    f32::from_le_bytes(b.try_into().unwrap())
}

pub fn decode_dataset(bytes: &[u8]) -> Result<Dataset> {
    if bytes.len() < HEADER_BYTES {
        return Err(Error::Format("dataset shorter than its header".into()));
    }
    if bytes[..4] != DATASET_MAGIC {
        return Err(Error::Format(format!(
            "bad dataset magic {:02x?}, expected {DATASET_MAGIC:02x?}",
            &bytes[..4]
        )));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != DATASET_VERSION {
        return Err(Error::Format(format!(
            "unsupported dataset version {version}, expected {DATASET_VERSION}"
        )));
    }
    let count = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
    let flags = bytes[10];
    if flags & !(FLAG_IQ | FLAG_FEATURES) != 0 || flags == 0 {
        return Err(Error::Format(format!("invalid dataset flags {flags:#04x}")));
    }
    let stride = record_bytes(flags);
    let body = &bytes[HEADER_BYTES..];
    if body.len() != count * stride {
        return Err(Error::Format(format!(
            "dataset declares {count} records of {stride} bytes but carries {} payload bytes",
            body.len()
        )));
    }
    let mut records = Vec::with_capacity(count);
    for (i, rec) in body.chunks_exact(stride).enumerate() {
        let label = WaveformClass::from_code(rec[0])
            .ok_or_else(|| Error::Format(format!("record {i}: unknown class code {}", rec[0])))?;
        let modulation = ModulationScheme::from_code(rec[1]).ok_or_else(|| {
            Error::Format(format!("record {i}: unknown modulation code {}", rec[1]))
        })?;
        let channel_tag = ChannelTag::from_code(rec[6])
            .ok_or_else(|| Error::Format(format!("record {i}: unknown channel tag {}", rec[6])))?;
        let meta = RecordMeta {
            label,
            modulation,
            snr_db: le_f32(&rec[2..6]),
            channel_tag,
            speed_kmh: le_f32(&rec[7..11]),
            delay_spread_ns: le_f32(&rec[11..15]),
            seed: u64::from_le_bytes(rec[15..23].try_into().unwrap()),
        };
        let mut at = META_BYTES;
        let iq = (flags & FLAG_IQ != 0).then(|| {
            let v: Vec<f32> = rec[at..at + 8 * SEGMENT_LEN].chunks_exact(4).map(le_f32).collect();
            at += 8 * SEGMENT_LEN;
            v
        });
        let features = (flags & FLAG_FEATURES != 0).then(|| {
            let mut f = [0f32; FEATURE_DIM];
            for (k, c) in rec[at..at + 4 * FEATURE_DIM].chunks_exact(4).enumerate() {
                f[k] = le_f32(c);
            }
            f
        });
        records.push(Record { meta, iq, features });
    }
    Ok(Dataset { flags, records })
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_dataset(&bytes).map_err(|e| match e {
        Error::Format(msg) => Error::Format(format!("{}: {msg}", path.display())),
        other => other,
    })
}
