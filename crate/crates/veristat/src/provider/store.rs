//! File-backed embedding store.
//!
//! One JSON object per line: `{"q": question, "m": node, "i": trial,
//! "v": [floats]}`. Loading is strict: any malformed line or dimension
//! drift fails with the offending line number. Saving iterates the
//! internal map in key order, so save/load round-trips are bit-exact and
//! independent of insertion order.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::metrics::EmbeddingVector;

use super::{EmbedContext, EmbeddingProvider, ProviderError};

/// One stored embedding.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StoreRecord {
    #[serde(rename = "q")]
    pub question_id: String,
    #[serde(rename = "m")]
    pub node_id: String,
    #[serde(rename = "i")]
    pub trial: u32,
    #[serde(rename = "v")]
    pub vector: EmbeddingVector,
}

/// In-memory map of precomputed embeddings, keyed by
/// (question, node, trial). Doubles as a file-backed provider.
#[derive(Debug, Default)]
pub struct EmbeddingStore {
    dimension: usize,
    entries: BTreeMap<(String, String, u32), EmbeddingVector>,
}

impl EmbeddingStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Inserts one embedding; the first insert fixes the store dimension.
    pub fn insert(&mut self, record: StoreRecord) -> Result<(), ProviderError> {
        if self.entries.is_empty() {
            self.dimension = record.vector.dimension();
        } else if record.vector.dimension() != self.dimension {
            return Err(ProviderError::Dimension {
                expected: self.dimension,
                got: record.vector.dimension(),
            });
        }
        self.entries.insert(
            (record.question_id, record.node_id, record.trial),
            record.vector,
        );
        Ok(())
    }

    pub fn get(&self, question_id: &str, node_id: &str, trial: u32) -> Option<&EmbeddingVector> {
        self.entries
            .get(&(question_id.to_string(), node_id.to_string(), trial))
    }

    pub fn records(&self) -> impl Iterator<Item = StoreRecord> + '_ {
        self.entries.iter().map(|((q, m, i), v)| StoreRecord {
            question_id: q.clone(),
            node_id: m.clone(),
            trial: *i,
            vector: v.clone(),
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ProviderError> {
        let file = File::open(path.as_ref())?;
        let reader = BufReader::new(file);
        let mut store = Self::new();
        for (idx, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let record: StoreRecord =
                serde_json::from_str(&line).map_err(|e| ProviderError::Parse {
                    line: idx + 1,
                    message: e.to_string(),
                })?;
            store.insert(record).map_err(|e| match e {
                ProviderError::Dimension { expected, got } => ProviderError::Parse {
                    line: idx + 1,
                    message: format!("dimension mismatch: expected {expected}, got {got}"),
                },
                other => other,
            })?;
        }
        Ok(store)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ProviderError> {
        let file = File::create(path.as_ref())?;
        let mut writer = BufWriter::new(file);
        for record in self.records() {
            serde_json::to_writer(&mut writer, &record)
                .map_err(|e| ProviderError::MalformedResponse(e.to_string()))?;
            writer.write_all(b"\n")?;
        }
        writer.flush()?;
        Ok(())
    }
}

impl EmbeddingProvider for EmbeddingStore {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, _text: &str, ctx: &EmbedContext<'_>) -> Result<EmbeddingVector, ProviderError> {
        self.get(ctx.question_id, ctx.node_id, ctx.trial)
            .cloned()
            .ok_or_else(|| ProviderError::MissingKey {
                question_id: ctx.question_id.to_string(),
                node_id: ctx.node_id.to_string(),
                trial: ctx.trial,
            })
    }
}
