// SPDX-License-Identifier: Apache-2.0

//! Persistent set of fault-free template hashes.
//!
//! File layout (little-endian):
//!
//! ```text
//! magic      8 bytes  "CFLSTORE"
//! version    u16
//! fingerprint u64     parser config fingerprint
//! created_at u64      unix seconds
//! count      u64
//! count x { hash u64, support u64, len u32, pattern [len] utf-8 }   ascending hash
//! crc32      u32      over every preceding byte
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::hash::template_hash;
use crate::log_parser::ParsedLog;

pub const STORE_MAGIC: &[u8; 8] = b"CFLSTORE";
pub const STORE_VERSION: u16 = 1;

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("parser configuration mismatch: store fingerprint {store:016x}, input fingerprint {input:016x}")]
    ConfigMismatch { store: u64, input: u64 },
    #[error("store i/o failure on {path}: {source}")]
    IoFailure { path: String, source: std::io::Error },
    #[error("corrupt template store: {0}")]
    CorruptStore(String),
    #[error("unsupported store format version {found} (expected {expected})")]
    VersionMismatch { found: u16, expected: u16 },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StoreEntry {
    pub pattern: String,
    pub support: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StoreMeta {
    pub created_at: u64,
    pub parser_fingerprint: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateStore {
    entries: BTreeMap<u64, StoreEntry>,
    meta: StoreMeta,
}

impl TemplateStore {
    pub fn new(parser_fingerprint: u64, created_at: u64) -> Self {
        Self {
            entries: BTreeMap::new(),
            meta: StoreMeta { created_at, parser_fingerprint },
        }
    }

    pub fn meta(&self) -> StoreMeta {
        self.meta
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = (u64, &StoreEntry)> {
        self.entries.iter().map(|(h, e)| (*h, e))
    }

    pub fn get(&self, hash: u64) -> Option<&StoreEntry> {
        self.entries.get(&hash)
    }

    pub fn check_fingerprint(&self, input: u64) -> Result<(), StoreError> {
        if input == self.meta.parser_fingerprint {
            Ok(())
        } else {
            Err(StoreError::ConfigMismatch { store: self.meta.parser_fingerprint, input })
        }
    }

    /// Adds every template of `parsed`; returns how many hashes were new.
    pub fn ingest(&mut self, parsed: &ParsedLog) -> Result<usize, StoreError> {
        self.check_fingerprint(parsed.fingerprint)?;
        let mut added = 0;
        for (hash, template) in &parsed.templates {
            match self.entries.get_mut(hash) {
                Some(entry) => entry.support += template.support,
                None => {
                    self.entries.insert(
                        *hash,
                        StoreEntry { pattern: template.pattern.clone(), support: template.support },
                    );
                    added += 1;
                }
            }
        }
        Ok(added)
    }

    /// Exact membership; no similarity matching.
    pub fn contains(&self, hash: u64) -> bool {
        self.entries.contains_key(&hash)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(STORE_MAGIC);
        out.extend_from_slice(&STORE_VERSION.to_le_bytes());
        out.extend_from_slice(&self.meta.parser_fingerprint.to_le_bytes());
        out.extend_from_slice(&self.meta.created_at.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u64).to_le_bytes());
        for (hash, entry) in &self.entries {
            out.extend_from_slice(&hash.to_le_bytes());
            out.extend_from_slice(&entry.support.to_le_bytes());
            out.extend_from_slice(&(entry.pattern.len() as u32).to_le_bytes());
            out.extend_from_slice(entry.pattern.as_bytes());
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, StoreError> {
        let corrupt = |m: &str| StoreError::CorruptStore(m.to_string());
        if bytes.len() < STORE_MAGIC.len() + 2 + 8 * 3 + 4 {
            return Err(corrupt("file too short"));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored_crc = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
        if crc32fast::hash(body) != stored_crc {
            return Err(corrupt("checksum mismatch"));
        }
        let mut r = Reader { buf: body, pos: 0 };
        if r.take(8)? != STORE_MAGIC {
            return Err(corrupt("bad magic"));
        }
        let version = u16::from_le_bytes(r.take(2)?.try_into().expect("2 bytes"));
        if version != STORE_VERSION {
            return Err(StoreError::VersionMismatch { found: version, expected: STORE_VERSION });
        }
        let parser_fingerprint = r.u64()?;
        let created_at = r.u64()?;
        let count = r.u64()?;
        let mut entries = BTreeMap::new();
        let mut last: Option<u64> = None;
        for _ in 0..count {
            let hash = r.u64()?;
            let support = r.u64()?;
            let len = u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes")) as usize;
            let pattern = std::str::from_utf8(r.take(len)?)
                .map_err(|_| corrupt("pattern is not utf-8"))?
                .to_string();
            if last.is_some_and(|l| l >= hash) {
                return Err(corrupt("entries not in ascending hash order"));
            }
            if template_hash(&pattern) != hash {
                return Err(corrupt("pattern does not rehash to its key"));
            }
            last = Some(hash);
            entries.insert(hash, StoreEntry { pattern, support });
        }
        if r.pos != body.len() {
            return Err(corrupt("trailing bytes"));
        }
        Ok(Self { entries, meta: StoreMeta { created_at, parser_fingerprint } })
    }

    /// Writes to a sibling temp file, then renames over `path`.
    pub fn persist(&self, path: &Path) -> Result<(), StoreError> {
        let io = |source| StoreError::IoFailure { path: path.display().to_string(), source };
        let file_name = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "store".to_string());
        let tmp = path.with_file_name(format!(".{file_name}.tmp{}", std::process::id()));
        {
            let mut f = fs::File::create(&tmp).map_err(io)?;
            f.write_all(&self.to_bytes()).map_err(io)?;
            f.sync_all().map_err(io)?;
        }
        fs::rename(&tmp, path).map_err(io)
    }

    pub fn load(path: &Path) -> Result<Self, StoreError> {
        let bytes = fs::read(path)
            .map_err(|source| StoreError::IoFailure { path: path.display().to_string(), source })?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], StoreError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|e| *e <= self.buf.len())
            .ok_or_else(|| StoreError::CorruptStore("unexpected end of data".into()))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u64(&mut self) -> Result<u64, StoreError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::log_parser::{parse_text, LogParser, ParserConfig};

    fn parser() -> LogParser {
        LogParser::new(ParserConfig::default()).unwrap()
    }

    fn store() -> TemplateStore {
        TemplateStore::new(ParserConfig::default().fingerprint(), 1_700_000_000)
    }

    const THREE: &str = "alpha started\nbeta stopped now\ngamma is ready to go\n";

    #[test]
    fn ingest_into_empty_store() {
        let mut s = store();
        let parsed = parse_text(&parser(), "f", THREE);
        assert_eq!(s.ingest(&parsed).unwrap(), 3);
    }

    #[test]
    fn ingest_twice_doubles_support() {
        let mut s = store();
        let parsed = parse_text(&parser(), "f", THREE);
        s.ingest(&parsed).unwrap();
        assert_eq!(s.ingest(&parsed).unwrap(), 0);
        assert!(s.entries().all(|(_, e)| e.support == 2));
    }

    #[test]
    fn overlapping_ingests_union() {
        let mut s = store();
        let a = parse_text(&parser(), "a", "alpha started\nbeta stopped now\n");
        let b = parse_text(&parser(), "b", "beta stopped now\ngamma is ready to go\n");
        s.ingest(&a).unwrap();
        s.ingest(&b).unwrap();
        assert_eq!(s.len(), 3);
    }

    #[test]
    fn ingest_rejects_other_config() {
        let mut s = TemplateStore::new(42, 0);
        let parsed = parse_text(&parser(), "f", THREE);
        assert!(matches!(s.ingest(&parsed), Err(StoreError::ConfigMismatch { .. })));
    }

    #[test]
    fn membership_is_exact() {
        let mut s = store();
        let parsed = parse_text(&parser(), "f", "Running job job_1\n");
        s.ingest(&parsed).unwrap();
        assert!(s.contains(template_hash("Running job <*>")));
        assert!(s.contains(template_hash("  Running   job <*>")));
        assert!(!s.contains(template_hash("Running task <*>")));
    }

    #[test]
    fn truncated_file_is_corrupt() {
        let mut s = store();
        s.ingest(&parse_text(&parser(), "f", THREE)).unwrap();
        let bytes = s.to_bytes();
        let err = TemplateStore::from_bytes(&bytes[..bytes.len() - 7]).unwrap_err();
        assert!(matches!(err, StoreError::CorruptStore(_)));
    }

    #[test]
    fn bumped_version_is_rejected() {
        let mut s = store();
        s.ingest(&parse_text(&parser(), "f", THREE)).unwrap();
        let mut bytes = s.to_bytes();
        bytes[8] = 2;
        let body_len = bytes.len() - 4;
        let crc = crc32fast::hash(&bytes[..body_len]);
        bytes[body_len..].copy_from_slice(&crc.to_le_bytes());
        let err = TemplateStore::from_bytes(&bytes).unwrap_err();
        assert!(matches!(err, StoreError::VersionMismatch { found: 2, .. }));
    }

    #[test]
    fn persist_and_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("store.bin");
        let mut s = store();
        s.ingest(&parse_text(&parser(), "f", THREE)).unwrap();
        s.persist(&path).unwrap();
        assert_eq!(TemplateStore::load(&path).unwrap(), s);
        assert!(matches!(
            TemplateStore::load(&dir.path().join("missing")),
            Err(StoreError::IoFailure { .. })
        ));
    }
}
