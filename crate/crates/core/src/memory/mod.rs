//! Per-session, append-only record store for turns, agent states and task
//! graphs.
//!
//! Every `(session, kind)` pair carries a gapless version sequence starting
//! at 1. Records are never mutated after they are written. Sessions are
//! independent: each one sits behind its own lock, so appends to different
//! sessions never contend.

mod context;

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use chrono::{DateTime, Duration, Utc};
use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::{Clock, SystemClock};

pub use context::{Interaction, InteractionKind, SessionContext};

pub const SNAPSHOT_FORMAT_VERSION: u32 = 1;

pub fn default_ttl() -> Duration {
    Duration::hours(24)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordKind {
    Turn,
    AgentState,
    TaskGraph,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryRecord {
    pub session_id: String,
    pub kind: RecordKind,
    pub payload: serde_json::Value,
    pub version: u64,
    pub created_at: DateTime<Utc>,
}

#[derive(Debug, Error)]
pub enum MemoryError {
    #[error("unknown session '{0}'")]
    UnknownSession(String),
    #[error("session '{0}' already exists")]
    SessionExists(String),
    #[error("snapshot i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("corrupt snapshot: {0}")]
    Corrupt(String),
    #[error("unsupported snapshot format_version {0}")]
    UnsupportedVersion(u64),
}

#[derive(Debug, Clone)]
struct SessionLog {
    created_at: DateTime<Utc>,
    last_active: DateTime<Utc>,
    records: BTreeMap<RecordKind, Vec<Arc<MemoryRecord>>>,
}

impl SessionLog {
    fn new(now: DateTime<Utc>) -> Self {
        Self {
            created_at: now,
            last_active: now,
            records: BTreeMap::new(),
        }
    }
}

type SessionMap = BTreeMap<String, Arc<Mutex<SessionLog>>>;

pub struct MemoryStore {
    sessions: RwLock<SessionMap>,
    clock: Arc<dyn Clock>,
    ttl: Duration,
}

impl Default for MemoryStore {
    fn default() -> Self {
        Self::new(Arc::new(SystemClock))
    }
}

impl std::fmt::Debug for MemoryStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MemoryStore")
            .field("sessions", &self.sessions.read().len())
            .field("ttl", &self.ttl)
            .finish()
    }
}

impl MemoryStore {
    pub fn new(clock: Arc<dyn Clock>) -> Self {
        Self {
            sessions: RwLock::new(BTreeMap::new()),
            clock,
            ttl: default_ttl(),
        }
    }

    pub fn with_ttl(mut self, ttl: Duration) -> Self {
        self.ttl = ttl;
        self
    }

    pub fn clock(&self) -> &Arc<dyn Clock> {
        &self.clock
    }

    pub fn create_session(&self, session_id: &str) -> Result<(), MemoryError> {
        let mut sessions = self.sessions.write();
        if sessions.contains_key(session_id) {
            return Err(MemoryError::SessionExists(session_id.to_string()));
        }
        sessions.insert(
            session_id.to_string(),
            Arc::new(Mutex::new(SessionLog::new(self.clock.now()))),
        );
        Ok(())
    }

    pub fn contains(&self, session_id: &str) -> bool {
        self.sessions.read().contains_key(session_id)
    }

    pub fn session_ids(&self) -> Vec<String> {
        self.sessions.read().keys().cloned().collect()
    }

    pub fn is_empty(&self) -> bool {
        self.sessions.read().is_empty()
    }

    fn session(&self, session_id: &str) -> Option<Arc<Mutex<SessionLog>>> {
        self.sessions.read().get(session_id).cloned()
    }

    /// Appends a record and returns its version. A `Turn` append to an
    /// unknown session creates it; other kinds require an existing session.
    pub fn append(
        &self,
        session_id: &str,
        kind: RecordKind,
        payload: serde_json::Value,
    ) -> Result<u64, MemoryError> {
        let log = match self.session(session_id) {
            Some(log) => log,
            None if kind == RecordKind::Turn => {
                let mut sessions = self.sessions.write();
                sessions
                    .entry(session_id.to_string())
                    .or_insert_with(|| Arc::new(Mutex::new(SessionLog::new(self.clock.now()))))
                    .clone()
            }
            None => return Err(MemoryError::UnknownSession(session_id.to_string())),
        };
        let now = self.clock.now();
        let mut log = log.lock();
        log.last_active = now;
        let entries = log.records.entry(kind).or_default();
        let version = entries.len() as u64 + 1;
        entries.push(Arc::new(MemoryRecord {
            session_id: session_id.to_string(),
            kind,
            payload,
            version,
            created_at: now,
        }));
        Ok(version)
    }

    pub fn latest(&self, session_id: &str, kind: RecordKind) -> Option<MemoryRecord> {
        let log = self.session(session_id)?;
        let log = log.lock();
        log.records
            .get(&kind)
            .and_then(|v| v.last())
            .map(|r| MemoryRecord::clone(r))
    }

    /// All records of one kind, oldest first.
    pub fn history(&self, session_id: &str, kind: RecordKind) -> Vec<Arc<MemoryRecord>> {
        self.session(session_id)
            .map(|log| log.lock().records.get(&kind).cloned().unwrap_or_default())
            .unwrap_or_default()
    }

    /// Marks the session active without writing a record.
    pub fn touch(&self, session_id: &str) -> Result<(), MemoryError> {
        let log = self
            .session(session_id)
            .ok_or_else(|| MemoryError::UnknownSession(session_id.to_string()))?;
        log.lock().last_active = self.clock.now();
        Ok(())
    }

    /// Removes every session idle for longer than the configured TTL.
    pub fn evict(&self) -> usize {
        self.evict_idle(self.ttl)
    }

    pub fn evict_idle(&self, ttl: Duration) -> usize {
        let now = self.clock.now();
        let mut sessions = self.sessions.write();
        let before = sessions.len();
        sessions.retain(|_, log| now - log.lock().last_active <= ttl);
        before - sessions.len()
    }

    /// Serializes the whole store as one JSON document.
    pub fn snapshot_json(&self) -> String {
        let sessions = self.sessions.read();
        let doc = SnapshotDoc {
            format_version: u64::from(SNAPSHOT_FORMAT_VERSION),
            sessions: sessions
                .iter()
                .map(|(id, log)| {
                    let log = log.lock();
                    SnapshotSession {
                        session_id: id.clone(),
                        created_at: log.created_at,
                        last_active: log.last_active,
                        records: log
                            .records
                            .values()
                            .flatten()
                            .map(|r| MemoryRecord::clone(r))
                            .collect(),
                    }
                })
                .collect(),
        };
        serde_json::to_string_pretty(&doc).expect("snapshot serializes")
    }

    /// Writes the snapshot next to `path` and renames it into place.
    pub fn snapshot(&self, path: &Path) -> Result<(), MemoryError> {
        let body = self.snapshot_json();
        let dir = path
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .unwrap_or(Path::new("."));
        fs::create_dir_all(dir)?;
        let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
        tmp.write_all(body.as_bytes())?;
        tmp.as_file().sync_all()?;
        tmp.persist(path).map_err(|e| MemoryError::Io(e.error))?;
        Ok(())
    }

    /// Replaces the store's contents with the snapshot at `path`. On any
    /// error the current contents are left untouched.
    pub fn restore(&self, path: &Path) -> Result<(), MemoryError> {
        let body = fs::read_to_string(path)?;
        self.restore_json(&body)
    }

    pub fn restore_json(&self, body: &str) -> Result<(), MemoryError> {
        let parsed = parse_snapshot(body)?;
        *self.sessions.write() = parsed;
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct SnapshotDoc {
    format_version: u64,
    sessions: Vec<SnapshotSession>,
}

#[derive(Serialize, Deserialize)]
struct SnapshotSession {
    session_id: String,
    created_at: DateTime<Utc>,
    last_active: DateTime<Utc>,
    records: Vec<MemoryRecord>,
}

fn parse_snapshot(body: &str) -> Result<SessionMap, MemoryError> {
    let header: serde_json::Value =
        serde_json::from_str(body).map_err(|e| MemoryError::Corrupt(e.to_string()))?;
    let version = header
        .get("format_version")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| MemoryError::Corrupt("missing format_version".into()))?;
    if version != u64::from(SNAPSHOT_FORMAT_VERSION) {
        return Err(MemoryError::UnsupportedVersion(version));
    }
    let doc: SnapshotDoc =
        serde_json::from_value(header).map_err(|e| MemoryError::Corrupt(e.to_string()))?;

    let mut out = SessionMap::new();
    for s in doc.sessions {
        let mut log = SessionLog {
            created_at: s.created_at,
            last_active: s.last_active,
            records: BTreeMap::new(),
        };
        for r in s.records {
            if r.session_id != s.session_id {
                return Err(MemoryError::Corrupt(format!(
                    "record for '{}' stored under session '{}'",
                    r.session_id, s.session_id
                )));
            }
            let entries = log.records.entry(r.kind).or_default();
            if r.version != entries.len() as u64 + 1 {
                return Err(MemoryError::Corrupt(format!(
                    "session '{}' {:?}: expected version {}, found {}",
                    s.session_id,
                    r.kind,
                    entries.len() + 1,
                    r.version
                )));
            }
            entries.push(Arc::new(r));
        }
        if out
            .insert(s.session_id.clone(), Arc::new(Mutex::new(log)))
            .is_some()
        {
            return Err(MemoryError::Corrupt(format!(
                "duplicate session '{}'",
                s.session_id
            )));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::ManualClock;
    use serde_json::json;

    fn store() -> (Arc<ManualClock>, MemoryStore) {
        let clock = Arc::new(ManualClock::new("2025-03-01T00:00:00Z".parse().unwrap()));
        let store = MemoryStore::new(clock.clone());
        (clock, store)
    }

    #[test]
    fn first_turn_creates_session() {
        let (_, s) = store();
        assert_eq!(
            s.append("a", RecordKind::Turn, json!({"q": "x"})).unwrap(),
            1
        );
        assert!(s.contains("a"));
    }

    #[test]
    fn versions_are_monotone_per_kind() {
        let (_, s) = store();
        s.create_session("a").unwrap();
        assert_eq!(s.append("a", RecordKind::AgentState, json!(1)).unwrap(), 1);
        assert_eq!(s.append("a", RecordKind::AgentState, json!(2)).unwrap(), 2);
        assert_eq!(s.append("a", RecordKind::TaskGraph, json!(3)).unwrap(), 1);
    }

    #[test]
    fn non_turn_append_to_unknown_session_fails() {
        let (_, s) = store();
        let err = s
            .append("ghost", RecordKind::TaskGraph, json!({}))
            .unwrap_err();
        assert_eq!(err.to_string(), "unknown session 'ghost'");
    }

    #[test]
    fn latest_returns_highest_version() {
        let (_, s) = store();
        for i in 1..=3 {
            s.append("a", RecordKind::Turn, json!(i)).unwrap();
        }
        let r = s.latest("a", RecordKind::Turn).unwrap();
        assert_eq!(r.version, 3);
        assert_eq!(r.payload, json!(3));
        assert!(s.latest("nobody", RecordKind::Turn).is_none());
        assert!(s.latest("a", RecordKind::AgentState).is_none());
    }

    #[test]
    fn empty_round_trip() {
        let (_, s) = store();
        let body = s.snapshot_json();
        let (_, t) = store();
        t.restore_json(&body).unwrap();
        assert!(t.is_empty());
        assert_eq!(t.snapshot_json(), body);
    }

    #[test]
    fn latest_survives_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mem.json");
        let (_, s) = store();
        for i in 1..=3 {
            s.append("a", RecordKind::Turn, json!({"i": i})).unwrap();
        }
        s.snapshot(&path).unwrap();
        let (_, t) = store();
        t.restore(&path).unwrap();
        assert_eq!(
            t.latest("a", RecordKind::Turn),
            s.latest("a", RecordKind::Turn)
        );
    }

    #[test]
    fn truncated_snapshot_leaves_state_intact() {
        let (_, s) = store();
        s.append("a", RecordKind::Turn, json!("keep")).unwrap();
        let (_, other) = store();
        other.append("b", RecordKind::Turn, json!("x")).unwrap();
        let body = other.snapshot_json();
        let truncated = &body[..body.len() / 2];
        assert!(matches!(
            s.restore_json(truncated),
            Err(MemoryError::Corrupt(_))
        ));
        assert_eq!(
            s.latest("a", RecordKind::Turn).unwrap().payload,
            json!("keep")
        );
        assert!(!s.contains("b"));
    }

    #[test]
    fn unknown_format_version_rejected() {
        let (_, s) = store();
        let err = s
            .restore_json(r#"{"format_version": 2, "sessions": []}"#)
            .unwrap_err();
        assert!(matches!(err, MemoryError::UnsupportedVersion(2)));
    }

    #[test]
    fn version_gap_is_corrupt() {
        let (_, s) = store();
        s.append("a", RecordKind::Turn, json!(1)).unwrap();
        s.append("a", RecordKind::Turn, json!(2)).unwrap();
        let mut doc: serde_json::Value = serde_json::from_str(&s.snapshot_json()).unwrap();
        doc["sessions"][0]["records"][1]["version"] = json!(5);
        let (_, t) = store();
        assert!(matches!(
            t.restore_json(&doc.to_string()),
            Err(MemoryError::Corrupt(_))
        ));
    }

    #[test]
    fn eviction_by_idle_time() {
        let (clock, s) = store();
        s.create_session("fresh").unwrap();
        assert_eq!(s.evict_idle(Duration::hours(1)), 0);

        s.create_session("old").unwrap();
        clock.advance(Duration::hours(2));
        s.touch("fresh").unwrap();
        assert_eq!(s.evict_idle(Duration::hours(1)), 1);
        assert!(s.contains("fresh"));
        assert!(!s.contains("old"));
    }

    #[test]
    fn default_ttl_is_a_day() {
        let (clock, s) = store();
        s.create_session("x").unwrap();
        clock.advance(Duration::hours(23));
        assert_eq!(s.evict(), 0);
        clock.advance(Duration::hours(2));
        assert_eq!(s.evict(), 1);
    }
}
