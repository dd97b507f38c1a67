//! Append-only trace store for hermetic record/replay.
//!
//! Traces are keyed by (pair_id, template, model_id). The pair identity is
//! folded into the stored `prompt_id` as `<pair_id>/<template>`, which keeps
//! the on-disk trace format at exactly {model_id, prompt_id, steps}.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::{Path, PathBuf};

use super::templates::TemplateId;
use super::LlmError;
use crate::trace::TokenTrace;

/// Builds the stored prompt identifier for a (pair, template) request.
pub fn composite_prompt_id(pair_id: &str, template: TemplateId) -> String {
    format!("{pair_id}/{template}")
}

/// Splits a stored prompt identifier back into (pair_id, template name).
pub fn split_prompt_id(prompt_id: &str) -> Option<(&str, &str)> {
    prompt_id.split_once('/')
}

type Key = (String, String, String); // (pair_id, template, model_id)

/// File-backed trace store. All appends go through one open handle; reads
/// are served from an in-memory index that keeps the latest trace per key.
pub struct TraceStore {
    path: PathBuf,
    index: BTreeMap<Key, TokenTrace>,
    duplicates: BTreeSet<Key>,
}

impl TraceStore {
    /// Opens (or prepares to create) a store at `path`, indexing any
    /// existing content. Later records for the same key shadow earlier ones.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, LlmError> {
        let path = path.as_ref().to_path_buf();
        let mut index = BTreeMap::new();
        let mut duplicates = BTreeSet::new();
        if path.exists() {
            for trace in crate::trace::read_traces(&path)? {
                let key = trace_key(&trace);
                if index.insert(key.clone(), trace).is_some() {
                    duplicates.insert(key);
                }
            }
        }
        Ok(Self {
            path,
            index,
            duplicates,
        })
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn contains(&self, pair_id: &str, template: TemplateId, model_id: &str) -> bool {
        self.index.contains_key(&(
            pair_id.to_string(),
            template.as_str().to_string(),
            model_id.to_string(),
        ))
    }

    /// Appends a trace to the file and the index.
    pub fn record(&mut self, trace: &TokenTrace) -> Result<(), LlmError> {
        trace.validate()?;
        let line = serde_json::to_string(trace).expect("trace serializes");
        let mut file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)?;
        writeln!(file, "{line}")?;
        let key = trace_key(trace);
        if self.index.insert(key.clone(), trace.clone()).is_some() {
            log::warn!(
                "trace store already had a record for {key:?}; later record shadows it"
            );
            self.duplicates.insert(key);
        }
        Ok(())
    }

    /// Returns the stored trace for a key. When `model_id` is `None` and a
    /// single model matches, that one is returned; several matching models
    /// resolve to the lexicographically last with a warning.
    pub fn replay(
        &self,
        pair_id: &str,
        template: TemplateId,
        model_id: Option<&str>,
    ) -> Result<&TokenTrace, LlmError> {
        let found: Vec<(&Key, &TokenTrace)> = self
            .index
            .iter()
            .filter(|((p, t, m), _)| {
                p == pair_id
                    && t == template.as_str()
                    && model_id.map_or(true, |want| m == want)
            })
            .collect();
        let (key, trace) = match found.len() {
            0 => {
                return Err(LlmError::NotFound {
                    pair_id: pair_id.to_string(),
                    template: template.as_str().to_string(),
                })
            }
            1 => found[0],
            _ => {
                log::warn!(
                    "{} models recorded for pair {pair_id} template {template}; using the last",
                    found.len()
                );
                found[found.len() - 1]
            }
        };
        if self.duplicates.contains(key) {
            log::warn!(
                "pair {pair_id} template {template} was recorded more than once; replaying the latest"
            );
        }
        Ok(trace)
    }

    /// All indexed traces in key order.
    pub fn traces(&self) -> impl Iterator<Item = &TokenTrace> {
        self.index.values()
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

fn trace_key(trace: &TokenTrace) -> Key {
    let (pair_id, template) = split_prompt_id(&trace.prompt_id).unwrap_or(("", ""));
    (
        pair_id.to_string(),
        template.to_string(),
        trace.model_id.clone(),
    )
}
