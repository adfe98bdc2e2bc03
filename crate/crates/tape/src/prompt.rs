//! Prompt construction. Each dataset pairs the node's abstract and title with
//! a task-specific question asking for a ranked, comma-separated list of
//! classes plus reasoning; the model's reply is parsed downstream.
//!
//! Prompts are byte-stable: `\n` newlines only, a double newline before
//! `Answer:`, and nothing after it. Cache keys hash the prompt string, so any
//! formatting drift would invalidate caches.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::NodeText;

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("invalid template {template_id:?}: {msg}")]
    Invalid { template_id: String, msg: String },
}

const DEFAULT_ABSTRACT_BUDGET: usize = 6000;

fn default_abstract_budget() -> usize {
    DEFAULT_ABSTRACT_BUDGET
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub template_id: String,
    pub question_text: String,
    pub expected_k: usize,
    /// Puts the title line before the abstract (the "Title first" variant).
    #[serde(default)]
    pub title_first: bool,
    /// Abstracts longer than this many characters are cut at the last
    /// whitespace before the budget.
    #[serde(default = "default_abstract_budget")]
    pub max_abstract_chars: usize,
}

impl PromptTemplate {
    pub fn new(template_id: &str, question_text: &str, expected_k: usize) -> Self {
        Self {
            template_id: template_id.to_string(),
            question_text: question_text.to_string(),
            expected_k,
            title_first: false,
            max_abstract_chars: DEFAULT_ABSTRACT_BUDGET,
        }
    }

    fn validate(&self) -> Result<(), PromptError> {
        if self.question_text.is_empty() {
            return Err(PromptError::Invalid {
                template_id: self.template_id.clone(),
                msg: "question_text is empty".into(),
            });
        }
        if self.expected_k == 0 {
            return Err(PromptError::Invalid {
                template_id: self.template_id.clone(),
                msg: "expected_k must be >= 1".into(),
            });
        }
        Ok(())
    }
}

/// Cuts at the last whitespace at or before `budget` characters; hard cut if
/// the head has no whitespace at all.
fn truncate_at_whitespace(text: &str, budget: usize) -> &str {
    if text.chars().count() <= budget {
        return text;
    }
    let mut cut_bytes = 0;
    let mut last_ws: Option<usize> = None;
    for (chars_seen, (byte_idx, ch)) in text.char_indices().enumerate() {
        if chars_seen >= budget {
            break;
        }
        if ch.is_whitespace() {
            last_ws = Some(byte_idx);
        }
        cut_bytes = byte_idx + ch.len_utf8();
    }
    text[..last_ws.unwrap_or(cut_bytes)].trim_end()
}

/// Renders the exact prompt string for one node. Pure: identical inputs give
/// identical bytes.
pub fn build_prompt(text: &NodeText, template: &PromptTemplate) -> String {
    let abstract_text = truncate_at_whitespace(&text.abstract_text, template.max_abstract_chars);
    if template.title_first {
        format!(
            "Title: {}\nAbstract: {}\nQuestion: {}\n\nAnswer:",
            text.title, abstract_text, template.question_text
        )
    } else {
        format!(
            "Abstract: {}\nTitle: {}\nQuestion: {}\n\nAnswer:",
            abstract_text, text.title, template.question_text
        )
    }
}

const CORA_QUESTION: &str = "Which of the following sub-categories of AI does this paper belong \
to: Case Based, Genetic Algorithms, Neural Networks, Probabilistic Methods, Reinforcement \
Learning, Rule Learning, Theory? If multiple options apply, provide a comma-separated list \
ordered from most to least related, then for each choice you gave, explain how it is present in \
the text.";

const PUBMED_QUESTION: &str = "Does the paper involve any cases of Type 1 diabetes, Type 2 \
diabetes, or Experimentally induced diabetes? Please give one or more answers of either Type 1 \
diabetes, Type 2 diabetes, or Experimentally induced diabetes; if multiple options apply, \
provide a comma-separated list ordered from most to least related, then for each choice you \
gave, give a detailed explanation with quotes from the text explaining why it is related to the \
chosen option.";

const ARXIV_QUESTION: &str = "Which arXiv CS sub-category does this paper belong to? Give 5 \
likely arXiv CS sub-categories as a comma-separated list ordered from most to least likely, in \
the form \"cs.XX\", and provide your reasoning.";

const ARXIV_FOCUS_QUESTION: &str = "Which arXiv CS sub-category does this paper belong to? Give \
5 likely arXiv CS sub-categories as a comma-separated list ordered from most to least likely, \
in the form \"cs.XX\". Focus only on content in the actual text and avoid making false \
associations. Then provide your reasoning.";

const ARXIV_COT_QUESTION: &str = "Which arXiv CS sub-category does this paper belong to? Give 5 \
likely arXiv CS sub-categories as a comma-separated list ordered from most to least likely, in \
the form \"cs.XX\". Please think about the categorization in a step by step manner and avoid \
making false associations. Then provide your reasoning.";

/// The built-in templates: one per dataset plus the three alternative
/// phrasings of the arXiv question used by the prompt sweep.
pub fn builtin_templates() -> Vec<PromptTemplate> {
    let mut arxiv_title_first = PromptTemplate::new("ogbn-arxiv-title-first", ARXIV_QUESTION, 5);
    arxiv_title_first.title_first = true;
    let mut arxiv_focus = PromptTemplate::new("ogbn-arxiv-focus", ARXIV_FOCUS_QUESTION, 5);
    arxiv_focus.title_first = true;
    let mut arxiv_cot = PromptTemplate::new("ogbn-arxiv-cot", ARXIV_COT_QUESTION, 5);
    arxiv_cot.title_first = true;
    vec![
        PromptTemplate::new("cora", CORA_QUESTION, 7),
        PromptTemplate::new("pubmed", PUBMED_QUESTION, 3),
        PromptTemplate::new("ogbn-arxiv", ARXIV_QUESTION, 5),
        arxiv_title_first,
        arxiv_focus,
        arxiv_cot,
    ]
}

/// Template ids swept by `prompt-sweep` when none are configured.
pub fn arxiv_sweep_ids() -> Vec<String> {
    vec![
        "ogbn-arxiv".into(),
        "ogbn-arxiv-title-first".into(),
        "ogbn-arxiv-focus".into(),
        "ogbn-arxiv-cot".into(),
    ]
}

/// Loads extra templates from a JSON list so new datasets need no code
/// changes.
pub fn load_templates(path: &Path) -> Result<Vec<PromptTemplate>, PromptError> {
    let body = fs::read_to_string(path).map_err(|e| PromptError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let templates: Vec<PromptTemplate> =
        serde_json::from_str(&body).map_err(|e| PromptError::Json {
            path: path.to_path_buf(),
            source: e,
        })?;
    for t in &templates {
        t.validate()?;
    }
    Ok(templates)
}

/// Finds a template by id among `extra` first, then the built-ins.
pub fn resolve_template(extra: &[PromptTemplate], id: &str) -> Option<PromptTemplate> {
    extra
        .iter()
        .find(|t| t.template_id == id)
        .cloned()
        .or_else(|| builtin_templates().into_iter().find(|t| t.template_id == id))
}
