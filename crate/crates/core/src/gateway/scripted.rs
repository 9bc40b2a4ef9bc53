//! Deterministic replay backend.
//!
//! A transcript is a JSONL file of recorded responses. Each record either
//! carries the fingerprint of the request it answers, or the wildcard
//! fingerprint `"*"`, which is consumed strictly in file order. Replaying a
//! run against the same transcript yields byte-identical exchanges.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{BackendError, BackendResponse, ChatBackend, ChatMessage, ModelProfile};

pub const WILDCARD: &str = "*";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub fingerprint: String,
    pub response_text: String,
    pub tokens_in: u64,
    pub tokens_out: u64,
}

/// Stable request fingerprint: SHA-256 over the canonical JSON encoding of
/// the message list. Profile-independent, so a recorded transcript survives a
/// profile rename.
pub fn fingerprint(messages: &[ChatMessage]) -> String {
    let canonical = serde_json::to_string(messages).expect("messages serialize");
    let mut hasher = Sha256::new();
    hasher.update(canonical.as_bytes());
    hex::encode(hasher.finalize())
}

#[derive(Debug)]
pub struct ScriptedBackend {
    entries: Vec<TranscriptEntry>,
    consumed: Vec<bool>,
    by_fingerprint: HashMap<String, Vec<usize>>,
    cursor: usize,
}

impl ScriptedBackend {
    pub fn new(entries: Vec<TranscriptEntry>) -> Result<Self, BackendError> {
        let mut by_fingerprint: HashMap<String, Vec<usize>> = HashMap::new();
        for (i, e) in entries.iter().enumerate() {
            if e.fingerprint != WILDCARD {
                by_fingerprint.entry(e.fingerprint.clone()).or_default().push(i);
            }
        }
        let consumed = vec![false; entries.len()];
        Ok(ScriptedBackend {
            entries,
            consumed,
            by_fingerprint,
            cursor: 0,
        })
    }

    pub fn from_file(path: &Path) -> Result<Self, BackendError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| BackendError::Fatal(format!("transcript {}: {e}", path.display())))?;
        let mut entries = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let entry: TranscriptEntry = serde_json::from_str(line).map_err(|e| {
                BackendError::Fatal(format!(
                    "transcript {} line {}: {e}",
                    path.display(),
                    lineno + 1
                ))
            })?;
            entries.push(entry);
        }
        ScriptedBackend::new(entries)
    }

    /// True once every recorded response has been handed out.
    pub fn exhausted(&self) -> bool {
        self.consumed.iter().all(|&c| c)
    }

    pub fn remaining(&self) -> usize {
        self.consumed.iter().filter(|&&c| !c).count()
    }

    fn take(&mut self, idx: usize) -> BackendResponse {
        self.consumed[idx] = true;
        let e = &self.entries[idx];
        BackendResponse {
            text: e.response_text.clone(),
            tokens_in: e.tokens_in,
            tokens_out: e.tokens_out,
        }
    }

    fn advance_cursor(&mut self) {
        while self.cursor < self.entries.len() && self.consumed[self.cursor] {
            self.cursor += 1;
        }
    }
}

impl ChatBackend for ScriptedBackend {
    fn send(
        &mut self,
        _profile: &ModelProfile,
        messages: &[ChatMessage],
    ) -> Result<BackendResponse, BackendError> {
        let fp = fingerprint(messages);
        if let Some(indices) = self.by_fingerprint.get(&fp) {
            if let Some(&idx) = indices.iter().find(|&&i| !self.consumed[i]) {
                return Ok(self.take(idx));
            }
        }
        self.advance_cursor();
        if self.cursor < self.entries.len() && self.entries[self.cursor].fingerprint == WILDCARD {
            let idx = self.cursor;
            return Ok(self.take(idx));
        }
        let tail = messages
            .last()
            .map(|m| m.content.chars().take(160).collect::<String>())
            .unwrap_or_default();
        Err(BackendError::Miss(format!(
            "no transcript entry for fingerprint {fp} (last message starts: {tail:?})"
        )))
    }
}

/// Writes entries in the transcript file format, one JSON record per line.
pub fn write_transcript(path: &Path, entries: &[TranscriptEntry]) -> std::io::Result<()> {
    let mut out = String::new();
    for e in entries {
        out.push_str(&serde_json::to_string(e).expect("entry serialize"));
        out.push('\n');
    }
    std::fs::write(path, out)
}
