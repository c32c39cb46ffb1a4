//! Append-only bulletin board for validator messages.
//!
//! Stands in for a data-availability layer: messages are appended to an
//! in-memory log and optionally mirrored to a JSONL file, one message per
//! line. Message ids are content hashes, derived rather than stored, so
//! a replayed log yields identical ids.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::detector::NodeReport;

use super::EpochError;

/// One validator's signed report for one round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidatorMessage {
    pub validator: String,
    pub epoch: u64,
    pub round: u32,
    /// Question polled this round.
    pub question: String,
    pub reports: Vec<NodeReport>,
    /// Hex signature over [`ValidatorMessage::payload_bytes`].
    pub sig: String,
}

impl ValidatorMessage {
    /// Canonical signing payload: the JSON encoding of everything except
    /// the signature itself.
    pub fn payload_bytes(
        validator: &str,
        epoch: u64,
        round: u32,
        question: &str,
        reports: &[NodeReport],
    ) -> Vec<u8> {
        #[derive(Serialize)]
        struct Unsigned<'a> {
            validator: &'a str,
            epoch: u64,
            round: u32,
            question: &'a str,
            reports: &'a [NodeReport],
        }
        serde_json::to_vec(&Unsigned {
            validator,
            epoch,
            round,
            question,
            reports,
        })
        .expect("reports serialize")
    }

    pub fn own_payload(&self) -> Vec<u8> {
        Self::payload_bytes(
            &self.validator,
            self.epoch,
            self.round,
            &self.question,
            &self.reports,
        )
    }

    /// Content-hash id of the full message.
    pub fn id(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("message serializes");
        hex::encode(Sha256::digest(bytes))
    }
}

/// Append-only message log, optionally file-backed.
#[derive(Default)]
pub struct BulletinBoard {
    entries: Vec<ValidatorMessage>,
    file: Option<File>,
}

impl BulletinBoard {
    /// In-memory board.
    pub fn new() -> Self {
        Self::default()
    }

    /// Board mirrored to a JSONL file, appending to existing content.
    pub fn with_file(path: impl AsRef<Path>) -> Result<Self, EpochError> {
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path.as_ref())?;
        Ok(Self {
            entries: Vec::new(),
            file: Some(file),
        })
    }

    /// Loads a previously written log into memory (not file-backed).
    pub fn load(path: impl AsRef<Path>) -> Result<Self, EpochError> {
        let reader = BufReader::new(File::open(path.as_ref())?);
        let mut entries = Vec::new();
        for (idx, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let message: ValidatorMessage = serde_json::from_str(&line)
                .map_err(|e| EpochError::BoardParse {
                    line: idx + 1,
                    message: e.to_string(),
                })?;
            entries.push(message);
        }
        Ok(Self {
            entries,
            file: None,
        })
    }

    /// Appends a message; returns its content-hash id.
    pub fn post(&mut self, message: ValidatorMessage) -> Result<String, EpochError> {
        let id = message.id();
        if let Some(file) = &mut self.file {
            let mut line = serde_json::to_vec(&message).expect("message serializes");
            line.push(b'\n');
            file.write_all(&line)?;
            file.flush()?;
        }
        self.entries.push(message);
        Ok(id)
    }

    pub fn entries(&self) -> &[ValidatorMessage] {
        &self.entries
    }

    pub fn for_epoch(&self, epoch: u64) -> Vec<&ValidatorMessage> {
        self.entries.iter().filter(|m| m.epoch == epoch).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::{Flag, FlagKind};

    fn message(validator: &str, round: u32) -> ValidatorMessage {
        let mut report = NodeReport {
            node_id: "n1".into(),
            flags: Vec::new(),
            inconclusive: false,
            consensus_distance: Some(0.1),
            cluster: None,
        };
        report.add_flag(Flag {
            kind: FlagKind::Outlier,
            evidence: 8.0,
        });
        ValidatorMessage {
            validator: validator.into(),
            epoch: 1,
            round,
            question: "q1".into(),
            reports: vec![report],
            sig: "00ff".into(),
        }
    }

    #[test]
    fn wire_shape_is_stable() {
        let json = serde_json::to_string(&message("v1", 0)).unwrap();
        assert_eq!(
            json,
            r#"{"validator":"v1","epoch":1,"round":0,"question":"q1","reports":[{"m":"n1","flags":[{"kind":"outlier","evidence":8.0}],"inconclusive":false,"consensus_distance":0.1}],"sig":"00ff"}"#
        );
    }

    #[test]
    fn post_and_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("board.jsonl");
        let mut board = BulletinBoard::with_file(&path).unwrap();
        let id1 = board.post(message("v1", 0)).unwrap();
        let id2 = board.post(message("v2", 0)).unwrap();
        assert_ne!(id1, id2);
        assert_eq!(board.entries().len(), 2);

        let loaded = BulletinBoard::load(&path).unwrap();
        assert_eq!(loaded.entries(), board.entries());
        assert_eq!(loaded.entries()[0].id(), id1);
    }

    #[test]
    fn appends_preserve_existing_log() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("board.jsonl");
        {
            let mut board = BulletinBoard::with_file(&path).unwrap();
            board.post(message("v1", 0)).unwrap();
        }
        {
            let mut board = BulletinBoard::with_file(&path).unwrap();
            board.post(message("v1", 1)).unwrap();
        }
        let loaded = BulletinBoard::load(&path).unwrap();
        assert_eq!(loaded.entries().len(), 2);
        assert_eq!(loaded.entries()[1].round, 1);
    }

    #[test]
    fn for_epoch_filters() {
        let mut board = BulletinBoard::new();
        let mut m = message("v1", 0);
        board.post(m.clone()).unwrap();
        m.epoch = 2;
        board.post(m).unwrap();
        assert_eq!(board.for_epoch(1).len(), 1);
        assert_eq!(board.for_epoch(2).len(), 1);
        assert_eq!(board.for_epoch(3).len(), 0);
    }

    #[test]
    fn malformed_log_line_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("board.jsonl");
        std::fs::write(&path, "{bad\n").unwrap();
        assert!(matches!(
            BulletinBoard::load(&path),
            Err(EpochError::BoardParse { line: 1, .. })
        ));
    }
}
