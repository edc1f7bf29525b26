//! Append-only JSON-lines event logs, one file per session.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use uuid::Uuid;

use crate::error::{ServiceError, ServiceResult};
use crate::session::SessionEvent;

pub struct EventLog {
    path: PathBuf,
    file: File,
}

impl EventLog {
    pub fn path_for(dir: &Path, id: Uuid) -> PathBuf {
        dir.join(format!("{id}.jsonl"))
    }

    /// Creates a new log; fails if one already exists for `id`.
    pub fn create(dir: &Path, id: Uuid) -> ServiceResult<EventLog> {
        let path = Self::path_for(dir, id);
        let file = OpenOptions::new().create_new(true).append(true).open(&path)?;
        Ok(EventLog { path, file })
    }

    /// Reads a log and reopens it for appending. A torn final line (a write
    /// interrupted by a crash, so never acknowledged) is cut off.
    pub fn open(path: &Path) -> ServiceResult<(EventLog, Vec<SessionEvent>)> {
        let bytes = std::fs::read(path)?;
        let mut events = Vec::new();
        let mut good = 0usize;
        let mut reader = BufReader::new(&bytes[..]);
        let mut line = Vec::new();
        loop {
            line.clear();
            let n = reader.read_until(b'\n', &mut line)?;
            if n == 0 {
                break;
            }
            if line.last() != Some(&b'\n') {
                log::warn!("{}: dropping torn final record ({n} bytes)", path.display());
                break;
            }
            let event: SessionEvent = serde_json::from_slice(&line)
                .map_err(|e| ServiceError::CorruptLog(format!("{} record {}: {e}", path.display(), events.len() + 1)))?;
            events.push(event);
            good += n;
        }
        if good < bytes.len() {
            OpenOptions::new().write(true).open(path)?.set_len(good as u64)?;
        }
        let file = OpenOptions::new().append(true).open(path)?;
        Ok((EventLog { path: path.to_path_buf(), file }, events))
    }

    /// Appends and syncs the events before returning.
    pub fn append(&mut self, events: &[SessionEvent]) -> ServiceResult<()> {
        let mut buf = Vec::new();
        for e in events {
            serde_json::to_writer(&mut buf, e)?;
            buf.push(b'\n');
        }
        self.file.write_all(&buf)?;
        self.file.sync_data()?;
        Ok(())
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

/// Reads every event of a log file without opening it for writing.
pub fn read_events(path: &Path) -> ServiceResult<Vec<SessionEvent>> {
    let text = std::fs::read_to_string(path)?;
    let mut events = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(line) {
            Ok(e) => events.push(e),
            // a torn last line was never acknowledged
            Err(_) if i + 1 == text.lines().count() && !text.ends_with('\n') => break,
            Err(e) => return Err(ServiceError::CorruptLog(format!("{} record {}: {e}", path.display(), i + 1))),
        }
    }
    Ok(events)
}
