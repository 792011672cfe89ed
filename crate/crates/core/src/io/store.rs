//! Binary embedding store.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "COFE" | version u32 | dim u32 | count u64
//! count × ( id_len u16 | id bytes (UTF-8) | dim × f32 )
//! ```

use std::collections::HashMap;
use std::path::Path;

use crate::encoder::Cursor;
use crate::error::{CofError, Result};

pub const STORE_MAGIC: &[u8; 4] = b"COFE";
pub const STORE_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingStore {
    dim: usize,
    ids: Vec<String>,
    vectors: Vec<Vec<f32>>,
    index: HashMap<String, usize>,
}

impl EmbeddingStore {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            ids: Vec::new(),
            vectors: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Appends a record; rejects a wrong dimension or a repeated id.
    pub fn push(&mut self, id: impl Into<String>, vector: Vec<f32>) -> Result<()> {
        let id = id.into();
        if vector.len() != self.dim {
            return Err(CofError::Input(format!(
                "embedding {id:?} has dimension {}, store holds dimension {}",
                vector.len(),
                self.dim
            )));
        }
        if id.len() > u16::MAX as usize {
            return Err(CofError::Input(format!("id of {} bytes is too long", id.len())));
        }
        if self.index.contains_key(&id) {
            return Err(CofError::Input(format!("duplicate embedding id {id:?}")));
        }
        self.index.insert(id.clone(), self.ids.len());
        self.ids.push(id);
        self.vectors.push(vector);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&[f32]> {
        self.index.get(id).map(|&i| self.vectors[i].as_slice())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f32])> {
        self.ids
            .iter()
            .map(String::as_str)
            .zip(self.vectors.iter().map(Vec::as_slice))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(20 + self.len() * (2 + 16 + 4 * self.dim));
        out.extend_from_slice(STORE_MAGIC);
        out.extend_from_slice(&STORE_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.len() as u64).to_le_bytes());
        for (id, v) in self.iter() {
            out.extend_from_slice(&(id.len() as u16).to_le_bytes());
            out.extend_from_slice(id.as_bytes());
            for x in v {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let fail = |message: String| CofError::Format {
            path: origin.to_path_buf(),
            message,
        };
        let truncated = || fail("truncated embedding store".into());
        let mut c = Cursor::new(bytes);
        if c.take(4) != Some(STORE_MAGIC.as_slice()) {
            return Err(fail("bad magic, expected \"COFE\"".into()));
        }
        let version = c.u32().ok_or_else(truncated)?;
        if version != STORE_VERSION {
            return Err(fail(format!(
                "unsupported store version {version}, expected {STORE_VERSION}"
            )));
        }
        let dim = c.u32().ok_or_else(truncated)? as usize;
        let count = c.u64().ok_or_else(truncated)?;
        let mut store = Self::new(dim);
        for _ in 0..count {
            let n = c.u16().ok_or_else(truncated)? as usize;
            let id = std::str::from_utf8(c.take(n).ok_or_else(truncated)?)
                .map_err(|e| fail(format!("id is not UTF-8: {e}")))?
                .to_string();
            let v = (0..dim)
                .map(|_| c.f32().ok_or_else(truncated))
                .collect::<Result<Vec<_>>>()?;
            store.push(id, v).map_err(|e| fail(e.to_string()))?;
        }
        if !c.is_empty() {
            return Err(fail("trailing bytes after last record".into()));
        }
        Ok(store)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| CofError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| CofError::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_store_round_trips() {
        let s = EmbeddingStore::new(3);
        let back = EmbeddingStore::from_bytes(&s.to_bytes(), Path::new("x")).unwrap();
        assert_eq!(back, s);
        assert_eq!(s.to_bytes().len(), 20);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let mut s = EmbeddingStore::new(2);
        s.push("a", vec![1.0, 2.0]).unwrap();
        assert!(s.push("b", vec![1.0]).is_err());
        assert!(s.push("a", vec![0.0, 0.0]).is_err());
    }

    #[test]
    fn header_layout() {
        let mut s = EmbeddingStore::new(1);
        s.push("ab", vec![1.5]).unwrap();
        let b = s.to_bytes();
        assert_eq!(&b[..4], b"COFE");
        assert_eq!(&b[4..8], &1u32.to_le_bytes());
        assert_eq!(&b[8..12], &1u32.to_le_bytes());
        assert_eq!(&b[12..20], &1u64.to_le_bytes());
        assert_eq!(&b[20..22], &2u16.to_le_bytes());
        assert_eq!(&b[22..24], b"ab");
        assert_eq!(&b[24..28], &1.5f32.to_le_bytes());
    }

    #[test]
    fn bad_magic_version_and_truncation() {
        let mut s = EmbeddingStore::new(2);
        s.push("a", vec![1.0, 2.0]).unwrap();
        let good = s.to_bytes();
        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(
            EmbeddingStore::from_bytes(&bad, Path::new("x")),
            Err(CofError::Format { .. })
        ));
        let mut bad = good.clone();
        bad[4] = 9;
        let err = EmbeddingStore::from_bytes(&bad, Path::new("x")).unwrap_err();
        assert!(err.to_string().contains("version"));
        assert!(EmbeddingStore::from_bytes(&good[..good.len() - 1], Path::new("x")).is_err());
    }
}
