use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AnnotatedDocument, AnnotatorRecord, Exclusion, Label};
use crate::error::{Error, Result};
use crate::tokenizer::word_tokenize;

/// One line of a dataset file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DocumentRecord {
    pub id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub self_report_label: Option<Label>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resolved_label: Option<Label>,
    pub annotations: Vec<AnnotationRecord>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationRecord {
    pub annotator_id: String,
    pub highlighted_word_indices: Vec<usize>,
    pub label: Label,
}

impl DocumentRecord {
    /// Tokenize the text and expand highlight indices into word masks.
    pub fn into_document(self) -> Result<AnnotatedDocument> {
        let words = word_tokenize(&self.text);
        let mut annotations = Vec::with_capacity(self.annotations.len());
        for a in self.annotations {
            let mut highlights = vec![0u8; words.len()];
            for &i in &a.highlighted_word_indices {
                let slot = highlights.get_mut(i).ok_or_else(|| Error::Validation {
                    doc_id: self.id.clone(),
                    message: format!(
                        "annotator {} highlights word {i} but the text has {} words",
                        a.annotator_id,
                        words.len()
                    ),
                })?;
                *slot = 1;
            }
            annotations.push(AnnotatorRecord {
                annotator_id: a.annotator_id,
                highlights,
                label: a.label,
            });
        }
        Ok(AnnotatedDocument {
            id: self.id,
            text: self.text,
            words,
            annotations,
            self_report_label: self.self_report_label,
            resolved_label: self.resolved_label,
        })
    }
}

impl From<&AnnotatedDocument> for DocumentRecord {
    fn from(doc: &AnnotatedDocument) -> Self {
        DocumentRecord {
            id: doc.id.clone(),
            text: doc.text.clone(),
            self_report_label: doc.self_report_label,
            resolved_label: doc.resolved_label,
            annotations: doc
                .annotations
                .iter()
                .map(|a| AnnotationRecord {
                    annotator_id: a.annotator_id.clone(),
                    highlighted_word_indices: a.highlighted_indices(),
                    label: a.label,
                })
                .collect(),
        }
    }
}

/// Parse a dataset from any reader; `source` names it in diagnostics.
pub fn read_dataset_from<R: BufRead>(reader: R, source: &str) -> Result<Vec<AnnotatedDocument>> {
    let mut docs = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: source.to_string(),
            line: n + 1,
            message,
        };
        let rec: DocumentRecord =
            serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        let doc = rec.into_document().map_err(|e| parse_err(e.to_string()))?;
        docs.push(doc);
    }
    Ok(docs)
}

pub fn read_dataset(path: &Path) -> Result<Vec<AnnotatedDocument>> {
    let f = std::fs::File::open(path)?;
    read_dataset_from(std::io::BufReader::new(f), &path.display().to_string())
}

pub fn read_dataset_str(text: &str) -> Result<Vec<AnnotatedDocument>> {
    read_dataset_from(text.as_bytes(), "<memory>")
}

pub fn write_dataset<W: Write>(mut w: W, docs: &[AnnotatedDocument]) -> Result<()> {
    for doc in docs {
        serde_json::to_writer(&mut w, &DocumentRecord::from(doc))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// CSV with columns `id,reason`.
pub fn write_exclusion_log<W: Write>(w: W, excluded: &[Exclusion]) -> Result<()> {
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(["id", "reason"]).map_err(csv_err)?;
    for e in excluded {
        csv.write_record([&e.id, &e.reason]).map_err(csv_err)?;
    }
    csv.flush()?;
    Ok(())
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}
