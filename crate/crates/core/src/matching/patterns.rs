//! Successful bindings remembered by profile fingerprint.
//!
//! Stored as JSON lines. Updates are appended; the last line for a
//! fingerprint wins, and [`PatternStore::compact`] rewrites one line each.

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::MatchError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatternRecord {
    pub fingerprint: String,
    /// Service ids, sorted.
    pub services: Vec<String>,
    pub successes: u64,
    /// Unix seconds of the last recorded success.
    #[serde(default)]
    pub last_used: u64,
}

#[derive(Debug, Clone, Default)]
pub struct PatternStore {
    path: Option<PathBuf>,
    records: BTreeMap<String, PatternRecord>,
}

fn io(e: impl std::fmt::Display) -> MatchError {
    MatchError::Patterns(e.to_string())
}

impl PatternStore {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens (or starts) a store backed by `path`.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, MatchError> {
        let path = path.as_ref().to_path_buf();
        let mut records = BTreeMap::new();
        if path.exists() {
            let text = fs::read_to_string(&path).map_err(io)?;
            for (i, line) in text.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let r: PatternRecord =
                    serde_json::from_str(line).map_err(|e| MatchError::Patterns(format!("line {}: {e}", i + 1)))?;
                records.insert(r.fingerprint.clone(), r);
            }
        }
        Ok(Self { path: Some(path), records })
    }

    pub fn lookup(&self, fingerprint: &str) -> Option<&PatternRecord> {
        self.records.get(fingerprint)
    }

    pub fn records(&self) -> impl Iterator<Item = &PatternRecord> {
        self.records.values()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Counts a successful execution of `services` for the fingerprint. A
    /// different service set replaces the previous pattern.
    pub fn record_success(&mut self, fingerprint: &str, services: &[String]) -> Result<&PatternRecord, MatchError> {
        let mut services = services.to_vec();
        services.sort();
        let now = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
        let rec = self
            .records
            .entry(fingerprint.to_string())
            .and_modify(|r| {
                if r.services == services {
                    r.successes += 1;
                } else {
                    r.services = services.clone();
                    r.successes = 1;
                }
                r.last_used = now;
            })
            .or_insert_with(|| PatternRecord {
                fingerprint: fingerprint.to_string(),
                services,
                successes: 1,
                last_used: now,
            });
        if let Some(path) = &self.path {
            let mut f = OpenOptions::new().create(true).append(true).open(path).map_err(io)?;
            writeln!(f, "{}", serde_json::to_string(rec).map_err(io)?).map_err(io)?;
        }
        Ok(rec)
    }

    /// Rewrites the backing file with one line per fingerprint.
    pub fn compact(&self) -> Result<(), MatchError> {
        let Some(path) = &self.path else { return Ok(()) };
        let mut out = String::new();
        for r in self.records.values() {
            out.push_str(&serde_json::to_string(r).map_err(io)?);
            out.push('\n');
        }
        let tmp = path.with_extension("jsonl.tmp");
        fs::write(&tmp, out).map_err(io)?;
        fs::rename(&tmp, path).map_err(io)
    }
}

#[cfg(test)]
mod tests {
    use super::super::tests::{activity, profile, service};
    use super::super::*;
    use crate::ontology::tests::five_node;

    #[test]
    fn persisted_counts_survive_reopen_and_compaction() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("patterns.jsonl");
        let mut s = PatternStore::open(&path).unwrap();
        s.record_success("fp", &["b".into(), "a".into()]).unwrap();
        s.record_success("fp", &["a".into(), "b".into()]).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap().lines().count(), 2);
        let s = PatternStore::open(&path).unwrap();
        assert_eq!(s.lookup("fp").unwrap().successes, 2);
        assert_eq!(s.lookup("fp").unwrap().services, vec!["a", "b"]);
        s.compact().unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap().lines().count(), 1);
        assert_eq!(PatternStore::open(&path).unwrap().lookup("fp").unwrap().successes, 2);
    }

    #[test]
    fn pattern_hit_ranks_first() {
        let o = five_node();
        let want = profile(&["A1"], &["A"], &["A2"]);
        let reg = Registry {
            services: vec![
                service("exact", "pick parts", want.clone()),
                service("other", "other thing", profile(&["A"], &["A"], &["A2"])),
            ],
        };
        let a = activity("t", "pick parts", want.clone());
        let cfg = MatchConfig::default();
        let mut store = PatternStore::in_memory();
        let fresh = match_activity(&a, &reg, &store, &o, &cfg).unwrap();
        assert_eq!(fresh.candidates[0].services, vec!["exact"]);
        store.record_success(&fresh.fingerprint, &["other".to_string()]).unwrap();
        let hit = match_activity(&a, &reg, &store, &o, &cfg).unwrap();
        assert!(hit.from_pattern);
        assert_eq!(hit.status, MatchStatus::Auto);
        assert_eq!(hit.candidates[0].services, vec!["other"]);
        assert_eq!(hit.candidates[0].score, 1.0);
        assert_eq!(hit.chosen.as_ref().unwrap().services, vec!["other"]);
        // a vanished service invalidates the pattern
        let gone = reg.without(&["other".to_string()].into());
        let miss = match_activity(&a, &gone, &store, &o, &cfg).unwrap();
        assert!(!miss.from_pattern);
    }
}
