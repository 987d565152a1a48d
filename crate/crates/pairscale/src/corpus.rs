//! Corpus ingestion and line-delimited record persistence.
//!
//! A corpus is an ordered list of uniquely-identified short texts, optionally
//! carrying integer label counts (e.g. how many human coders flagged the text
//! for a concept). Corpora and every other intermediate product (breakdowns,
//! matchups, verdicts, fitted scores) are stored as JSON Lines: UTF-8, one
//! JSON record per line. The generic [`save_records`]/[`load_records`] pair is
//! the single read/write path used by all of them.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::ItemId;

/// One text to be scaled.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextItem {
    /// Unique, nonempty identifier.
    pub id: ItemId,
    /// The text itself. Nonempty; may contain newlines, quotes, any UTF-8.
    pub text: String,
    /// Optional named label counts (e.g. `"aversion" -> 2` coders out of 3).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<BTreeMap<String, u32>>,
}

/// An ordered, validated collection of [`TextItem`]s with id lookup.
///
/// Item order is preserved from the source file; estimators use the first
/// item as the fixed reference, so order is part of the corpus identity.
#[derive(Debug, Clone)]
pub struct Corpus {
    items: Vec<TextItem>,
    index: HashMap<ItemId, usize>,
}

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at {path}:{line}: {source}")]
    Parse {
        path: PathBuf,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("duplicate item id {0:?}")]
    DuplicateId(ItemId),
    #[error("item at line {line} has an empty {field}")]
    EmptyField { line: usize, field: &'static str },
    #[error("corpus contains no items")]
    EmptyCorpus,
}

impl Corpus {
    /// Validate a list of items into a corpus: ids and texts nonempty, ids
    /// unique, at least one item.
    pub fn from_items(items: Vec<TextItem>) -> Result<Self, CorpusError> {
        if items.is_empty() {
            return Err(CorpusError::EmptyCorpus);
        }
        let mut index = HashMap::with_capacity(items.len());
        for (pos, item) in items.iter().enumerate() {
            let line = pos + 1;
            if item.id.is_empty() {
                return Err(CorpusError::EmptyField { line, field: "id" });
            }
            if item.text.is_empty() {
                return Err(CorpusError::EmptyField { line, field: "text" });
            }
            if index.insert(item.id.clone(), pos).is_some() {
                return Err(CorpusError::DuplicateId(item.id.clone()));
            }
        }
        Ok(Corpus { items, index })
    }

    /// Load and validate a corpus from a JSON Lines file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, CorpusError> {
        Self::from_items(load_records(path)?)
    }

    /// Write the corpus back out as JSON Lines.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CorpusError> {
        save_records(path, &self.items)
    }

    pub fn items(&self) -> &[TextItem] {
        &self.items
    }

    pub fn get(&self, id: &str) -> Option<&TextItem> {
        self.index.get(id).map(|&i| &self.items[i])
    }

    /// Position of `id` in corpus order, if present.
    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    /// Item ids in corpus order.
    pub fn ids(&self) -> Vec<ItemId> {
        self.items.iter().map(|t| t.id.clone()).collect()
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// Write `records` to `path` as JSON Lines, one record per line.
///
/// The write goes through a temp file in the same directory followed by a
/// rename, so readers never observe a half-written file.
pub fn save_records<T: Serialize>(
    path: impl AsRef<Path>,
    records: &[T],
) -> Result<(), CorpusError> {
    let path = path.as_ref();
    let io_err = |source| CorpusError::Io { path: path.to_path_buf(), source };
    let tmp = path.with_extension("tmp");
    {
        let file = File::create(&tmp).map_err(io_err)?;
        let mut w = BufWriter::new(file);
        for record in records {
            let line = serde_json::to_string(record).map_err(|e| CorpusError::Parse {
                path: path.to_path_buf(),
                line: 0,
                source: e,
            })?;
            w.write_all(line.as_bytes()).map_err(io_err)?;
            w.write_all(b"\n").map_err(io_err)?;
        }
        w.flush().map_err(io_err)?;
    }
    std::fs::rename(&tmp, path).map_err(io_err)
}

/// Read a JSON Lines file into typed records.
///
/// Whitespace-only lines (including a trailing newline) are skipped; any
/// malformed line fails with its 1-based line number.
pub fn load_records<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>, CorpusError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let reader = BufReader::new(file);
    let mut records = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|source| CorpusError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|source| CorpusError::Parse {
            path: path.to_path_buf(),
            line: idx + 1,
            source,
        })?;
        records.push(record);
    }
    Ok(records)
}

/// Append one record as a JSON line to an open writer (used by resumable
/// pipeline stages that persist results as they complete).
pub fn append_record<T: Serialize, W: Write>(w: &mut W, record: &T) -> std::io::Result<()> {
    let line = serde_json::to_string(record)
        .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
    w.write_all(line.as_bytes())?;
    w.write_all(b"\n")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn item(id: &str, text: &str) -> TextItem {
        TextItem { id: id.into(), text: text.into(), labels: None }
    }

    #[test]
    fn round_trips_items_with_awkward_text() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corpus.jsonl");
        let mut labels = BTreeMap::new();
        labels.insert("aversion".to_string(), 2);
        let items = vec![
            item("a", "plain text"),
            item("b", "line one\nline two\t\"quoted\""),
            item("c", "émoji 🗳️ and ``backticks''"),
            TextItem { id: "d".into(), text: "labeled".into(), labels: Some(labels) },
        ];
        save_records(&path, &items).unwrap();
        let corpus = Corpus::load(&path).unwrap();
        assert_eq!(corpus.items(), items.as_slice());
        assert_eq!(corpus.get("c").unwrap().text, "émoji 🗳️ and ``backticks''");
    }

    #[test]
    fn trailing_newline_loads_cleanly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corpus.jsonl");
        std::fs::write(&path, "{\"id\":\"a\",\"text\":\"x\"}\n{\"id\":\"b\",\"text\":\"y\"}\n\n")
            .unwrap();
        let corpus = Corpus::load(&path).unwrap();
        assert_eq!(corpus.len(), 2);
    }

    #[test]
    fn duplicate_id_is_rejected_by_name() {
        let items = vec![item("t1", "x"), item("t2", "y"), item("t1", "z")];
        let err = Corpus::from_items(items).unwrap_err();
        match err {
            CorpusError::DuplicateId(id) => assert_eq!(id, "t1"),
            other => panic!("expected DuplicateId, got {other:?}"),
        }
    }

    #[test]
    fn empty_id_or_text_is_rejected() {
        let err = Corpus::from_items(vec![item("", "x")]).unwrap_err();
        assert!(matches!(err, CorpusError::EmptyField { field: "id", .. }));
        let err = Corpus::from_items(vec![item("a", "x"), item("b", "")]).unwrap_err();
        assert!(matches!(err, CorpusError::EmptyField { line: 2, field: "text" }));
    }

    #[test]
    fn empty_file_is_an_empty_corpus() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corpus.jsonl");
        std::fs::write(&path, "").unwrap();
        assert!(matches!(Corpus::load(&path), Err(CorpusError::EmptyCorpus)));
    }

    #[test]
    fn parse_error_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corpus.jsonl");
        std::fs::write(&path, "{\"id\":\"a\",\"text\":\"x\"}\nnot json\n").unwrap();
        let err = Corpus::load(&path).unwrap_err();
        match err {
            CorpusError::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("expected Parse, got {other:?}"),
        }
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = Corpus::load("/nonexistent/corpus.jsonl").unwrap_err();
        assert!(matches!(err, CorpusError::Io { .. }));
    }

    proptest! {
        /// Any valid item list survives a save/load round trip bit-for-bit.
        #[test]
        fn save_load_round_trip(texts in proptest::collection::vec("[^\\x00]{1,40}", 1..8)) {
            let items: Vec<TextItem> = texts
                .iter()
                .enumerate()
                .map(|(i, t)| item(&format!("id{i}"), t))
                .collect();
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("r.jsonl");
            save_records(&path, &items).unwrap();
            let back: Vec<TextItem> = load_records(&path).unwrap();
            prop_assert_eq!(back, items);
        }
    }
}
