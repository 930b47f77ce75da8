//! Binary embedding store.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic        4 bytes  "GWEB"
//! version      u32      1
//! dimension    u32
//! count        u64
//! meta_len     u32
//! metadata     meta_len bytes of UTF-8
//! count × {
//!     key_len  u16
//!     key      key_len bytes of UTF-8, "<text_id>::<image_id>"
//!     values   dimension × f32 (IEEE-754)
//! }
//! ```
//!
//! Entries are written sorted by key bytes, so equal stores always serialize
//! to equal files.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{EmbeddingVector, StimulusKey};

pub const MAGIC: [u8; 4] = *b"GWEB";
pub const FORMAT_VERSION: u32 = 1;

const HEADER_LEN: usize = 4 + 4 + 4 + 8 + 4;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    dimension: usize,
    entries: BTreeMap<String, EmbeddingVector>,
    metadata: String,
}

impl EmbeddingStore {
    pub fn new(dimension: usize, metadata: impl Into<String>) -> Result<Self> {
        if dimension == 0 || dimension > u32::MAX as usize {
            return Err(Error::InvalidConfig(format!(
                "store dimension {dimension} out of range"
            )));
        }
        let metadata = metadata.into();
        if metadata.len() > u32::MAX as usize {
            return Err(Error::InvalidConfig("metadata block too large".into()));
        }
        Ok(EmbeddingStore {
            dimension,
            entries: BTreeMap::new(),
            metadata,
        })
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn metadata(&self) -> &str {
        &self.metadata
    }

    /// Value of a `name=value` line in the metadata block, if present.
    pub fn metadata_value(&self, name: &str) -> Option<&str> {
        self.metadata.lines().find_map(|line| {
            let (k, v) = line.split_once('=')?;
            (k.trim() == name).then(|| v.trim())
        })
    }

    /// Inserts an embedding. Values are rounded to single precision, which is
    /// what the file stores, so in-memory and on-disk stores agree exactly.
    pub fn insert(&mut self, key: &StimulusKey, values: &[f64]) -> Result<()> {
        if values.len() != self.dimension {
            return Err(Error::DimensionMismatch {
                left: self.dimension,
                right: values.len(),
            });
        }
        let serialized = key.serialized();
        if serialized.len() > u16::MAX as usize {
            return Err(Error::InvalidIdentifier(serialized));
        }
        if self.entries.contains_key(&serialized) {
            return Err(Error::InvariantViolation {
                keys: vec![serialized],
                reason: "duplicate key".into(),
            });
        }
        let rounded: Vec<f64> = values.iter().map(|&v| v as f32 as f64).collect();
        let vector = EmbeddingVector::new(rounded).map_err(|e| match e {
            Error::ZeroVector => Error::InvariantViolation {
                keys: vec![serialized.clone()],
                reason: "zero-norm vector".into(),
            },
            _ => Error::InvariantViolation {
                keys: vec![serialized.clone()],
                reason: "non-finite value".into(),
            },
        })?;
        self.entries.insert(serialized, vector);
        Ok(())
    }

    pub fn get(&self, key: &StimulusKey) -> Option<&EmbeddingVector> {
        self.entries.get(&key.serialized())
    }

    pub fn get_serialized(&self, key: &str) -> Option<&EmbeddingVector> {
        self.entries.get(key)
    }

    pub fn contains(&self, key: &StimulusKey) -> bool {
        self.entries.contains_key(&key.serialized())
    }

    /// Serialized keys in canonical (byte-lexicographic) order.
    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &EmbeddingVector)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let per_entry = 2 + 4 * self.dimension;
        let mut out = Vec::with_capacity(
            HEADER_LEN
                + self.metadata.len()
                + self.entries.keys().map(|k| k.len() + per_entry).sum::<usize>(),
        );
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dimension as u32).to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u64).to_le_bytes());
        out.extend_from_slice(&(self.metadata.len() as u32).to_le_bytes());
        out.extend_from_slice(self.metadata.as_bytes());
        for (key, vector) in &self.entries {
            out.extend_from_slice(&(key.len() as u16).to_le_bytes());
            out.extend_from_slice(key.as_bytes());
            for &v in vector.iter() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic: [u8; 4] = match r.take(4) {
            Some(m) => m.try_into().unwrap(),
            None => {
                let mut partial = [0u8; 4];
                partial[..bytes.len()].copy_from_slice(bytes);
                return Err(Error::BadMagic(partial));
            }
        };
        if magic != MAGIC {
            return Err(Error::BadMagic(magic));
        }
        let version = r.u32("header")?;
        if version != FORMAT_VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let dimension = r.u32("header")? as usize;
        let count = r.u64("header")?;
        if dimension == 0 {
            return Err(Error::CorruptRecord {
                offset: 8,
                reason: "dimension is zero".into(),
            });
        }
        let meta_len = r.u32("header")? as usize;
        let meta_offset = r.pos;
        let metadata = r
            .take(meta_len)
            .ok_or_else(|| corrupt(meta_offset, "truncated metadata block"))?;
        let metadata = std::str::from_utf8(metadata)
            .map_err(|_| corrupt(meta_offset, "metadata is not valid UTF-8"))?
            .to_string();

        let mut entries = BTreeMap::new();
        let mut duplicates = Vec::new();
        let mut non_finite = Vec::new();
        let mut zero = Vec::new();
        for index in 0..count {
            let start = r.pos;
            let truncated = || corrupt(start, &format!("truncated record {index}"));
            let key_len = r.u16_opt().ok_or_else(truncated)? as usize;
            let key_bytes = r.take(key_len).ok_or_else(truncated)?;
            let raw = r.take(4 * dimension).ok_or_else(truncated)?;
            let key = std::str::from_utf8(key_bytes)
                .map_err(|_| corrupt(start, &format!("record {index}: key is not valid UTF-8")))?;
            key.parse::<StimulusKey>().map_err(|_| {
                corrupt(start, &format!("record {index}: malformed key {key:?}"))
            })?;
            let values: Vec<f64> = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect();
            if values.iter().any(|v| !v.is_finite()) {
                non_finite.push(key.to_string());
                continue;
            }
            match EmbeddingVector::new(values) {
                Ok(v) => {
                    if entries.insert(key.to_string(), v).is_some() {
                        duplicates.push(key.to_string());
                    }
                }
                Err(_) => zero.push(key.to_string()),
            }
        }
        if r.pos != bytes.len() {
            return Err(corrupt(
                r.pos,
                &format!("{} trailing byte(s) after last record", bytes.len() - r.pos),
            ));
        }
        for (keys, reason) in [
            (non_finite, "NaN or infinite value"),
            (zero, "zero-norm vector"),
            (duplicates, "duplicate key"),
        ] {
            if !keys.is_empty() {
                return Err(Error::InvariantViolation {
                    keys,
                    reason: reason.into(),
                });
            }
        }
        Ok(EmbeddingStore {
            dimension,
            entries,
            metadata,
        })
    }
}

fn corrupt(offset: usize, reason: &str) -> Error {
    Error::CorruptRecord {
        offset: offset as u64,
        reason: reason.to_string(),
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        let slice = self.bytes.get(self.pos..end)?;
        self.pos = end;
        Some(slice)
    }

    fn u16_opt(&mut self) -> Option<u16> {
        self.take(2).map(|b| u16::from_le_bytes(b.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let at = self.pos;
        self.take(4)
            .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
            .ok_or_else(|| corrupt(at, &format!("truncated {what}")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        let at = self.pos;
        self.take(8)
            .map(|b| u64::from_le_bytes(b.try_into().unwrap()))
            .ok_or_else(|| corrupt(at, &format!("truncated {what}")))
    }
}

pub fn read_store(path: impl AsRef<Path>) -> Result<EmbeddingStore> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    EmbeddingStore::from_bytes(&bytes)
}

pub fn write_store(store: &EmbeddingStore, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, store.to_bytes()).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::make_key;

    fn one_entry() -> EmbeddingStore {
        let mut s = EmbeddingStore::new(4, "model=test\ngranularity=W").unwrap();
        s.insert(&make_key("man", "img1").unwrap(), &[1.0, 0.0, 0.0, 0.0])
            .unwrap();
        s
    }

    #[test]
    fn single_entry_round_trip() {
        let s = one_entry();
        let bytes = s.to_bytes();
        let back = EmbeddingStore::from_bytes(&bytes).unwrap();
        assert_eq!(back, s);
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(back.metadata_value("granularity"), Some("W"));
        assert_eq!(&bytes[..4], b"GWEB");
        // header, metadata, key_len, key, values
        assert_eq!(bytes.len(), 24 + 24 + 2 + 9 + 16);
    }

    #[test]
    fn truncated_record_reports_offset() {
        let mut s = one_entry();
        s.insert(&make_key("woman", "img2").unwrap(), &[0.0, 1.0, 0.0, 0.0])
            .unwrap();
        let bytes = s.to_bytes();
        let second_record = 24 + 24 + (2 + 9 + 16);
        let err = EmbeddingStore::from_bytes(&bytes[..bytes.len() - 3]).unwrap_err();
        match err {
            Error::CorruptRecord { offset, .. } => assert_eq!(offset, second_record as u64),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn nan_is_rejected_with_key() {
        let mut bytes = one_entry().to_bytes();
        let n = bytes.len();
        bytes[n - 4..].copy_from_slice(&f32::NAN.to_le_bytes());
        match EmbeddingStore::from_bytes(&bytes).unwrap_err() {
            Error::InvariantViolation { keys, .. } => assert_eq!(keys, vec!["man::img1"]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn zero_vector_rejected() {
        let mut bytes = one_entry().to_bytes();
        let n = bytes.len();
        bytes[n - 16..].fill(0);
        assert!(matches!(
            EmbeddingStore::from_bytes(&bytes),
            Err(Error::InvariantViolation { .. })
        ));
        let mut s = one_entry();
        assert!(s
            .insert(&make_key("z", "img").unwrap(), &[0.0; 4])
            .is_err());
    }

    #[test]
    fn header_errors() {
        let mut bytes = one_entry().to_bytes();
        bytes[0] = b'X';
        assert!(matches!(
            EmbeddingStore::from_bytes(&bytes),
            Err(Error::BadMagic(_))
        ));
        let mut bytes = one_entry().to_bytes();
        bytes[4] = 9;
        assert!(matches!(
            EmbeddingStore::from_bytes(&bytes),
            Err(Error::UnsupportedVersion(9))
        ));
        assert!(matches!(
            EmbeddingStore::from_bytes(b"GW"),
            Err(Error::BadMagic(_))
        ));
        let mut bytes = one_entry().to_bytes();
        bytes.push(0);
        assert!(matches!(
            EmbeddingStore::from_bytes(&bytes),
            Err(Error::CorruptRecord { .. })
        ));
    }

    #[test]
    fn canonical_order_and_empty_store() {
        let k1 = make_key("b", "1").unwrap();
        let k2 = make_key("a", "2").unwrap();
        let mut s1 = EmbeddingStore::new(2, "").unwrap();
        s1.insert(&k1, &[1.0, 2.0]).unwrap();
        s1.insert(&k2, &[3.0, 4.0]).unwrap();
        let mut s2 = EmbeddingStore::new(2, "").unwrap();
        s2.insert(&k2, &[3.0, 4.0]).unwrap();
        s2.insert(&k1, &[1.0, 2.0]).unwrap();
        assert_eq!(s1.to_bytes(), s2.to_bytes());

        let empty = EmbeddingStore::new(3, "").unwrap();
        let bytes = empty.to_bytes();
        assert_eq!(bytes.len(), HEADER_LEN);
        assert_eq!(&bytes[12..20], &0u64.to_le_bytes());
        assert!(EmbeddingStore::from_bytes(&bytes).unwrap().is_empty());
    }

    #[test]
    fn file_round_trip_is_idempotent() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.gweb");
        let p2 = dir.path().join("b.gweb");
        let s = one_entry();
        write_store(&s, &p1).unwrap();
        let back = read_store(&p1).unwrap();
        write_store(&back, &p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }
}
