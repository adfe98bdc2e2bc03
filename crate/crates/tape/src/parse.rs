//! Extracting ranked class lists and explanations from free-form LLM output.
//!
//! Parsing is total: answers that match nothing degrade to a fallback record
//! that keeps the raw text as the explanation, so downstream encoders never
//! lose data. The expected answer shape puts the ranked list first, so the
//! head segment (up to the first blank line or sentence end) is scanned
//! before falling back to a whole-text scan.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{LabelSpace, TextAttributedGraph};
use crate::ioutil::write_atomic;

#[derive(Debug, Error)]
pub enum ParseIoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {msg}")]
    MalformedLine {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("{path}:{line}: unknown class name {name:?}")]
    UnknownClassName {
        path: PathBuf,
        line: usize,
        name: String,
    },
    #[error("{path}:{line}: unknown node id {id:?}")]
    UnknownNodeId {
        path: PathBuf,
        line: usize,
        id: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParseStatus {
    /// Ranked labels found in the head segment.
    Full,
    /// Labels found only by scanning the whole text.
    Partial,
    /// No labels anywhere; the raw text is kept as the explanation.
    Fallback,
}

/// One node's parsed LLM answer.
#[derive(Debug, Clone, PartialEq)]
pub struct EnrichmentRecord {
    pub node_id: usize,
    /// Distinct class indices in answer order, at most `k` of them.
    pub ranked: Vec<usize>,
    pub explanation: String,
    pub parse_status: ParseStatus,
}

/// Whole-token label mention: the bytes before and after the match must not
/// be ASCII alphanumerics. Comparison is ASCII case-insensitive, which covers
/// every canonical form (forms are stored lowercase).
fn matches_at(haystack: &[u8], pos: usize, form: &[u8]) -> bool {
    if pos + form.len() > haystack.len() {
        return false;
    }
    if !haystack[pos..pos + form.len()].eq_ignore_ascii_case(form) {
        return false;
    }
    if pos > 0 && haystack[pos - 1].is_ascii_alphanumeric() {
        return false;
    }
    let end = pos + form.len();
    if end < haystack.len() && haystack[end].is_ascii_alphanumeric() {
        return false;
    }
    true
}

/// All label mentions in `text`, ordered by position (longer form wins a tie
/// at the same position), deduplicated by class with first occurrence kept.
fn find_mentions(text: &str, label_space: &LabelSpace) -> Vec<(usize, usize)> {
    let bytes = text.as_bytes();
    // (pos, negated length, class)
    let mut hits: Vec<(usize, isize, usize)> = Vec::new();
    for class in 0..label_space.num_classes() {
        for form in label_space.forms(class) {
            let form_bytes = form.as_bytes();
            if form_bytes.is_empty() {
                continue;
            }
            let mut pos = 0;
            while pos + form_bytes.len() <= bytes.len() {
                if matches_at(bytes, pos, form_bytes) {
                    hits.push((pos, -(form_bytes.len() as isize), class));
                    pos += form_bytes.len();
                } else {
                    pos += 1;
                }
            }
        }
    }
    // arXiv-style tokens: anything shaped cs.xx is looked up as a form, so the
    // answer's casing never matters for these.
    let mut pos = 0;
    while pos + 5 <= bytes.len() {
        let shaped = bytes[pos].eq_ignore_ascii_case(&b'c')
            && bytes[pos + 1].eq_ignore_ascii_case(&b's')
            && bytes[pos + 2] == b'.'
            && bytes[pos + 3].is_ascii_alphabetic()
            && bytes[pos + 4].is_ascii_alphabetic();
        let boundary_ok = (pos == 0 || !bytes[pos - 1].is_ascii_alphanumeric())
            && (pos + 5 == bytes.len() || !bytes[pos + 5].is_ascii_alphanumeric());
        if shaped && boundary_ok {
            let token = text[pos..pos + 5].to_ascii_lowercase();
            for class in 0..label_space.num_classes() {
                if label_space.forms(class).iter().any(|f| f == &token) {
                    hits.push((pos, -5, class));
                }
            }
        }
        pos += 1;
    }
    hits.sort();
    let mut seen = vec![false; label_space.num_classes()];
    let mut out = Vec::new();
    for (pos, _, class) in hits {
        if !seen[class] {
            seen[class] = true;
            out.push((pos, class));
        }
    }
    out
}

/// First class mentioned in the window, earliest position first.
pub fn match_label(token_window: &str, label_space: &LabelSpace) -> Option<usize> {
    find_mentions(token_window, label_space)
        .first()
        .map(|&(_, class)| class)
}

/// Byte offset just past the head segment: the earlier of the first blank
/// line and the first sentence terminator followed by whitespace. A `.`
/// followed by a letter (as in `cs.LG`) is not a sentence end.
fn head_segment_end(text: &str) -> usize {
    let bytes = text.as_bytes();
    let start = text.len() - text.trim_start().len();
    let mut i = start;
    while i < bytes.len() {
        let b = bytes[i];
        if b == b'\n' {
            // Blank line: only spaces/tabs/CR until the next newline.
            let mut j = i + 1;
            while j < bytes.len() && (bytes[j] == b' ' || bytes[j] == b'\t' || bytes[j] == b'\r') {
                j += 1;
            }
            if j >= bytes.len() || bytes[j] == b'\n' {
                return i;
            }
        }
        if (b == b'.' || b == b'!' || b == b'?')
            && (i + 1 >= bytes.len() || bytes[i + 1].is_ascii_whitespace())
        {
            return i;
        }
        i += 1;
    }
    bytes.len()
}

/// Parses one raw answer. Total: every input yields a record, with
/// [`ParseStatus::Fallback`] as the failure mode.
pub fn parse_answer(
    node_id: usize,
    raw: &str,
    label_space: &LabelSpace,
    k: usize,
) -> EnrichmentRecord {
    debug_assert!(k >= 1);
    let head_end = head_segment_end(raw);
    let head = &raw[..head_end];
    let head_mentions = find_mentions(head, label_space);
    if !head_mentions.is_empty() {
        let ranked = head_mentions.into_iter().take(k).map(|(_, c)| c).collect();
        let explanation = raw[head_end..]
            .trim_start_matches(['.', '!', '?'])
            .trim()
            .to_string();
        return EnrichmentRecord {
            node_id,
            ranked,
            explanation,
            parse_status: ParseStatus::Full,
        };
    }
    let all_mentions = find_mentions(raw, label_space);
    if !all_mentions.is_empty() {
        let ranked = all_mentions.into_iter().take(k).map(|(_, c)| c).collect();
        return EnrichmentRecord {
            node_id,
            ranked,
            explanation: raw.to_string(),
            parse_status: ParseStatus::Partial,
        };
    }
    EnrichmentRecord {
        node_id,
        ranked: Vec::new(),
        explanation: raw.to_string(),
        parse_status: ParseStatus::Fallback,
    }
}

/// How missing ranks are filled when a list shorter than `k` is padded.
#[derive(Debug, Clone, Copy)]
pub enum PadStrategy {
    /// Reserve a dedicated "absent" class slot at the given index.
    Absent { index: usize },
}

/// Pads `record.ranked` to exactly `k` entries. Requires `k >= ranked.len()`.
pub fn pad_ranked(record: &EnrichmentRecord, k: usize, strategy: PadStrategy) -> Vec<usize> {
    assert!(
        k >= record.ranked.len(),
        "k = {k} shorter than ranked list of {}",
        record.ranked.len()
    );
    let PadStrategy::Absent { index } = strategy;
    let mut out = record.ranked.clone();
    out.resize(k, index);
    out
}

#[derive(Serialize, Deserialize)]
struct EnrichedLine {
    id: String,
    ranked: Vec<String>,
    explanation: String,
    status: ParseStatus,
}

/// Writes the canonical enriched JSONL consumed by the feature builders:
/// one `{"id", "ranked": [class names], "explanation", "status"}` per node.
pub fn write_enriched(
    path: &Path,
    records: &[EnrichmentRecord],
    graph: &TextAttributedGraph,
) -> Result<(), ParseIoError> {
    let mut body = String::new();
    for r in records {
        let line = EnrichedLine {
            id: graph.node_ids()[r.node_id].clone(),
            ranked: r
                .ranked
                .iter()
                .map(|&c| graph.label_space().name(c).to_string())
                .collect(),
            explanation: r.explanation.clone(),
            status: r.parse_status,
        };
        body.push_str(&serde_json::to_string(&line).expect("enriched line serializes"));
        body.push('\n');
    }
    write_atomic(path, body.as_bytes()).map_err(|e| ParseIoError::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

/// Reads enriched JSONL back, mapping ids and class names to indices.
pub fn read_enriched(
    path: &Path,
    graph: &TextAttributedGraph,
) -> Result<Vec<EnrichmentRecord>, ParseIoError> {
    let body = fs::read_to_string(path).map_err(|e| ParseIoError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let mut out = Vec::new();
    for (lineno, line) in body.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parsed: EnrichedLine =
            serde_json::from_str(line).map_err(|e| ParseIoError::MalformedLine {
                path: path.to_path_buf(),
                line: lineno + 1,
                msg: e.to_string(),
            })?;
        let node_id = graph
            .index_of_id(&parsed.id)
            .ok_or_else(|| ParseIoError::UnknownNodeId {
                path: path.to_path_buf(),
                line: lineno + 1,
                id: parsed.id.clone(),
            })?;
        let mut ranked = Vec::with_capacity(parsed.ranked.len());
        for name in &parsed.ranked {
            let class = graph.label_space().index_of_name(name).ok_or_else(|| {
                ParseIoError::UnknownClassName {
                    path: path.to_path_buf(),
                    line: lineno + 1,
                    name: name.clone(),
                }
            })?;
            ranked.push(class);
        }
        out.push(EnrichmentRecord {
            node_id,
            ranked,
            explanation: parsed.explanation,
            parse_status: parsed.status,
        });
    }
    Ok(out)
}

/// Parse-status counts for the audit summary written next to the enriched
/// file.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ParseSummary {
    pub total: usize,
    pub full: usize,
    pub partial: usize,
    pub fallback: usize,
    pub fallback_node_ids: Vec<String>,
}

impl ParseSummary {
    pub fn from_records(records: &[EnrichmentRecord], graph: &TextAttributedGraph) -> Self {
        let mut s = Self {
            total: records.len(),
            ..Self::default()
        };
        for r in records {
            match r.parse_status {
                ParseStatus::Full => s.full += 1,
                ParseStatus::Partial => s.partial += 1,
                ParseStatus::Fallback => {
                    s.fallback += 1;
                    s.fallback_node_ids
                        .push(graph.node_ids()[r.node_id].clone());
                }
            }
        }
        s
    }

    pub fn fallback_rate(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.fallback as f64 / self.total as f64
        }
    }
}
