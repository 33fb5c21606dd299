use super::GatewayError;
use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};
use std::time::SystemTime;

/// One line of a cassette file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CassetteRecord {
    pub digest: String,
    pub model_id: String,
    pub prompt_sha: String,
    pub response: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CassetteMetadata {
    pub created: Option<SystemTime>,
    pub model_ids: BTreeSet<String>,
    pub records: usize,
}

/// Digest-keyed store of recorded responses backed by an append-only NDJSON file.
#[derive(Debug)]
pub struct Cassette {
    path: Option<PathBuf>,
    records: RwLock<IndexMap<String, CassetteRecord>>,
    writer: Mutex<Option<File>>,
}

fn read_records(path: &Path) -> Result<IndexMap<String, CassetteRecord>, GatewayError> {
    let file = File::open(path).map_err(|e| GatewayError::Cassette(format!("{}: {e}", path.display())))?;
    let mut records = IndexMap::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| GatewayError::Cassette(format!("{}: {e}", path.display())))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: CassetteRecord = serde_json::from_str(&line)
            .map_err(|e| GatewayError::Cassette(format!("{}:{}: {e}", path.display(), i + 1)))?;
        // First occurrence wins; later duplicates cannot rewrite history.
        records.entry(rec.digest.clone()).or_insert(rec);
    }
    Ok(records)
}

impl Cassette {
    pub fn in_memory() -> Self {
        Cassette { path: None, records: RwLock::new(IndexMap::new()), writer: Mutex::new(None) }
    }

    pub fn from_records(records: impl IntoIterator<Item = CassetteRecord>) -> Self {
        let c = Self::in_memory();
        {
            let mut map = c.records.write().unwrap();
            for r in records {
                map.entry(r.digest.clone()).or_insert(r);
            }
        }
        c
    }

    /// Opens an existing cassette read-only.
    pub fn open(path: &Path) -> Result<Self, GatewayError> {
        if !path.is_file() {
            return Err(GatewayError::Cassette(format!("cassette {} does not exist", path.display())));
        }
        Ok(Cassette { path: Some(path.to_path_buf()), records: RwLock::new(read_records(path)?), writer: Mutex::new(None) })
    }

    /// Opens (creating if needed) a cassette for appending.
    pub fn open_for_append(path: &Path) -> Result<Self, GatewayError> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| GatewayError::Cassette(format!("{}: {e}", parent.display())))?;
        }
        let records = if path.exists() { read_records(path)? } else { IndexMap::new() };
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| GatewayError::Cassette(format!("{}: {e}", path.display())))?;
        Ok(Cassette { path: Some(path.to_path_buf()), records: RwLock::new(records), writer: Mutex::new(Some(file)) })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn get(&self, digest: &str) -> Option<String> {
        self.records.read().unwrap().get(digest).map(|r| r.response.clone())
    }

    pub fn contains(&self, digest: &str) -> bool {
        self.records.read().unwrap().contains_key(digest)
    }

    pub fn len(&self) -> usize {
        self.records.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn records(&self) -> Vec<CassetteRecord> {
        self.records.read().unwrap().values().cloned().collect()
    }

    /// Stores a record unless its digest is already present. Returns whether it was added.
    pub fn append(&self, record: CassetteRecord) -> Result<bool, GatewayError> {
        // The writer lock is held across the check and the write so concurrent
        // recorders cannot both append the same digest.
        let mut writer = self.writer.lock().unwrap();
        if self.contains(&record.digest) {
            return Ok(false);
        }
        if let Some(file) = writer.as_mut() {
            let mut line = serde_json::to_string(&record).map_err(|e| GatewayError::Cassette(e.to_string()))?;
            line.push('\n');
            file.write_all(line.as_bytes())
                .and_then(|_| file.flush())
                .map_err(|e| GatewayError::Cassette(e.to_string()))?;
        }
        self.records.write().unwrap().insert(record.digest.clone(), record);
        Ok(true)
    }

    pub fn metadata(&self) -> CassetteMetadata {
        let records = self.records.read().unwrap();
        CassetteMetadata {
            created: self
                .path
                .as_ref()
                .and_then(|p| std::fs::metadata(p).ok())
                .and_then(|m| m.created().or_else(|_| m.modified()).ok()),
            model_ids: records.values().map(|r| r.model_id.clone()).collect(),
            records: records.len(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(d: &str, resp: &str) -> CassetteRecord {
        CassetteRecord { digest: d.into(), model_id: "m".into(), prompt_sha: "p".into(), response: resp.into() }
    }

    #[test]
    fn lookup_by_digest() {
        let c = Cassette::from_records([rec("d1", "hello")]);
        assert_eq!(c.get("d1").as_deref(), Some("hello"));
        assert_eq!(c.get("d2"), None);
    }

    #[test]
    fn append_is_append_only() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.ndjson");
        let c = Cassette::open_for_append(&path).unwrap();
        assert!(c.append(rec("d1", "first")).unwrap());
        assert!(!c.append(rec("d1", "second")).unwrap());
        assert!(c.append(rec("d2", "x")).unwrap());
        let before = std::fs::read_to_string(&path).unwrap();
        drop(c);

        let c = Cassette::open_for_append(&path).unwrap();
        assert_eq!(c.get("d1").as_deref(), Some("first"));
        c.append(rec("d3", "y")).unwrap();
        let after = std::fs::read_to_string(&path).unwrap();
        assert!(after.starts_with(&before));
        assert_eq!(after.lines().count(), 3);
    }

    #[test]
    fn open_missing_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(Cassette::open(&dir.path().join("none.ndjson")).is_err());
    }

    #[test]
    fn malformed_line_reports_position() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ndjson");
        std::fs::write(&path, "{\"digest\":\"a\",\"model_id\":\"m\",\"prompt_sha\":\"p\",\"response\":\"r\"}\nnot json\n").unwrap();
        match Cassette::open(&path) {
            Err(GatewayError::Cassette(msg)) => assert!(msg.contains(":2:"), "{msg}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn metadata_collects_model_ids() {
        let c = Cassette::from_records([rec("a", "1"), CassetteRecord { model_id: "gpt-4".into(), ..rec("b", "2") }]);
        let m = c.metadata();
        assert_eq!(m.records, 2);
        assert_eq!(m.model_ids.into_iter().collect::<Vec<_>>(), ["gpt-4", "m"]);
    }
}
