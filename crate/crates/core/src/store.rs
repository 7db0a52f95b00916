//! JSON-Lines event log with periodic snapshots.
//!
//! `events.jsonl` holds one [`PersistedEvent`] per line. Each line carries a
//! CRC-32 over `seq|kind|ts_ms|payload`. `snapshot.json` holds the state as of
//! some sequence number and is replaced atomically.

use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::state::{Event, State};

pub const EVENTS_FILE: &str = "events.jsonl";
pub const SNAPSHOT_FILE: &str = "snapshot.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersistedEvent {
    pub seq: u64,
    pub kind: String,
    pub ts_ms: i64,
    pub payload: Value,
    pub crc: u32,
}

impl PersistedEvent {
    pub fn new(seq: u64, ts_ms: i64, event: &Event) -> Result<Self> {
        let mut value = serde_json::to_value(event)?;
        let payload = value
            .get_mut("payload")
            .map(Value::take)
            .ok_or_else(|| Error::Storage("event serialized without payload".into()))?;
        let kind = event.kind().to_owned();
        let crc = checksum(seq, &kind, ts_ms, &payload);
        Ok(Self {
            seq,
            kind,
            ts_ms,
            payload,
            crc,
        })
    }

    pub fn event(&self) -> Result<Event> {
        let value = serde_json::json!({"kind": self.kind, "payload": self.payload});
        serde_json::from_value(value).map_err(|e| Error::CorruptLog(format!("seq {}: {e}", self.seq)))
    }

    pub fn verify(&self) -> bool {
        checksum(self.seq, &self.kind, self.ts_ms, &self.payload) == self.crc
    }
}

pub fn checksum(seq: u64, kind: &str, ts_ms: i64, payload: &Value) -> u32 {
    let text = format!("{seq}|{kind}|{ts_ms}|{payload}");
    crc32fast::hash(text.as_bytes())
}

#[derive(Serialize, Deserialize)]
struct Snapshot {
    seq: u64,
    state: State,
}

/// What recovery found on disk.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct RecoveryReport {
    pub snapshot_seq: Option<u64>,
    pub replayed: u64,
    pub last_seq: u64,
    /// A torn final line was dropped.
    pub truncated_tail: bool,
}

pub struct EventLog {
    dir: PathBuf,
    file: File,
    next_seq: u64,
    snapshot_every: u64,
    fsync: bool,
}

impl EventLog {
    /// Opens (or creates) a log directory and rebuilds state from it.
    pub fn open(dir: &Path, snapshot_every: u64) -> Result<(Self, State, RecoveryReport)> {
        fs::create_dir_all(dir).map_err(|e| Error::Storage(format!("{}: {e}", dir.display())))?;
        let events_path = dir.join(EVENTS_FILE);
        let mut report = RecoveryReport::default();

        let mut state = State::default();
        let snap_path = dir.join(SNAPSHOT_FILE);
        if snap_path.exists() {
            let text = fs::read_to_string(&snap_path)?;
            let snap: Snapshot =
                serde_json::from_str(&text).map_err(|e| Error::CorruptLog(format!("snapshot: {e}")))?;
            report.snapshot_seq = Some(snap.seq);
            state = snap.state;
            if state.seq != snap.seq {
                return Err(Error::CorruptLog("snapshot seq disagrees with its state".into()));
            }
        }

        let mut last_seq = 0u64;
        if events_path.exists() {
            let (events, torn_at) = read_events(&events_path)?;
            if let Some(good_len) = torn_at {
                tracing::warn!(path = %events_path.display(), "discarding torn final event line");
                let f = OpenOptions::new().write(true).open(&events_path)?;
                f.set_len(good_len)?;
                f.sync_all()?;
                report.truncated_tail = true;
            }
            for ev in events {
                if ev.seq != last_seq + 1 {
                    return Err(Error::CorruptLog(format!(
                        "sequence gap: expected {}, found {}",
                        last_seq + 1,
                        ev.seq
                    )));
                }
                last_seq = ev.seq;
                if ev.seq > state.seq {
                    let event = ev.event()?;
                    state.apply(ev.seq, ev.ts_ms, &event);
                    report.replayed += 1;
                }
            }
        }
        if state.seq > last_seq {
            return Err(Error::CorruptLog(format!(
                "snapshot at seq {} is ahead of the log (last seq {last_seq})",
                state.seq
            )));
        }
        report.last_seq = last_seq;

        let mut file = OpenOptions::new().create(true).append(true).open(&events_path)?;
        let bytes = fs::read(&events_path)?;
        if bytes.last().is_some_and(|b| *b != b'\n') {
            file.write_all(b"\n")?;
        }
        Ok((
            Self {
                dir: dir.to_owned(),
                file,
                next_seq: last_seq + 1,
                snapshot_every,
                fsync: true,
            },
            state,
            report,
        ))
    }

    /// Skips fsync after each append. For tests and bulk replays.
    pub fn set_fsync(&mut self, on: bool) {
        self.fsync = on;
    }

    pub fn next_seq(&self) -> u64 {
        self.next_seq
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn append(&mut self, ts_ms: i64, event: &Event) -> Result<PersistedEvent> {
        let persisted = PersistedEvent::new(self.next_seq, ts_ms, event)?;
        let mut line = serde_json::to_string(&persisted)?;
        line.push('\n');
        self.file.write_all(line.as_bytes())?;
        if self.fsync {
            self.file.sync_data()?;
        }
        self.next_seq += 1;
        Ok(persisted)
    }

    /// Writes a snapshot when the configured interval has been reached.
    pub fn maybe_snapshot(&mut self, state: &State) -> Result<bool> {
        if self.snapshot_every == 0 || state.seq == 0 || state.seq % self.snapshot_every != 0 {
            return Ok(false);
        }
        self.snapshot(state)?;
        Ok(true)
    }

    pub fn snapshot(&self, state: &State) -> Result<()> {
        let tmp = self.dir.join(format!("{SNAPSHOT_FILE}.tmp"));
        let snap = Snapshot {
            seq: state.seq,
            state: state.clone(),
        };
        {
            let mut f = File::create(&tmp)?;
            serde_json::to_writer(&mut f, &snap)?;
            f.sync_all()?;
        }
        fs::rename(&tmp, self.dir.join(SNAPSHOT_FILE))?;
        Ok(())
    }
}

/// Parses every line. Returns the events and, when the final line is torn
/// (unparsable), the byte length of the well-formed prefix.
fn read_events(path: &Path) -> Result<(Vec<PersistedEvent>, Option<u64>)> {
    let bytes = fs::read(path)?;
    let text = String::from_utf8_lossy(&bytes);
    let mut events = Vec::new();
    let mut offset = 0usize;
    let lines: Vec<&str> = text.split_inclusive('\n').collect();
    for (i, raw) in lines.iter().enumerate() {
        let line = raw.trim();
        if !line.is_empty() {
            match serde_json::from_str::<PersistedEvent>(line) {
                Ok(ev) if ev.verify() => events.push(ev),
                Ok(ev) => return Err(Error::CorruptLog(format!("checksum mismatch at seq {}", ev.seq))),
                Err(_) if lines[i + 1..].iter().all(|l| l.trim().is_empty()) => {
                    return Ok((events, Some(offset as u64)));
                }
                Err(e) => return Err(Error::CorruptLog(format!("unparsable line at byte {offset}: {e}"))),
            }
        }
        offset += raw.len();
    }
    Ok((events, None))
}
