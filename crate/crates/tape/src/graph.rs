//! Data model and ingestion for text-attributed graphs: nodes with title and
//! abstract text, a symmetrized sparse adjacency, a label space with
//! canonical match strings, and train/val/test splits.
//!
//! File formats (all UTF-8):
//! - edges: one `src<TAB>dst` per line, `#` comment lines ignored
//! - texts: JSON Lines `{"id", "title", "abstract"}`
//! - labels: CSV with header `id,label`, label = class display name
//! - label space: JSON list of `{"name", "match": [...]}`
//! - splits: JSON object `{"train": [ids], "val": [ids], "test": [ids]}`
//!
//! Node ids in files are arbitrary strings; the loader assigns dense indices
//! in first-seen order (the text file is authoritative) and the saver records
//! the mapping in `manifest.json`.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ioutil::write_atomic;
use crate::numeric::SparseCsr;

#[derive(Debug, Error)]
pub enum DataError {
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
    #[error("edge file references node ids with no text entry: {}", ids.join(", "))]
    MissingText { ids: Vec<String> },
    #[error("{path}:{line}: label {label:?} is not in the label space")]
    UnknownLabel {
        path: PathBuf,
        line: usize,
        label: String,
    },
    #[error("{path}: unknown node id {id:?} in {context}")]
    UnknownNodeId {
        path: PathBuf,
        id: String,
        context: &'static str,
    },
    #[error("invalid label space: {0}")]
    InvalidLabelSpace(String),
    #[error("split ratios must be positive and sum to 1, got ({0}, {1}, {2})")]
    InvalidRatios(f64, f64, f64),
    #[error("need at least 3 labeled nodes to split, found {0}")]
    TooFewLabeled(usize),
    #[error("invalid split: {0}")]
    InvalidSplit(String),
    #[error("invalid synthetic parameters: {0}")]
    InvalidSynthetic(String),
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Numeric(#[from] crate::numeric::NumericError),
}

fn io_err(path: &Path, source: std::io::Error) -> DataError {
    DataError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Title and abstract of one node. Either field may be empty, never absent.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeText {
    pub node_id: usize,
    pub title: String,
    pub abstract_text: String,
}

impl NodeText {
    /// Title and abstract joined for encoders that want one string.
    pub fn combined(&self) -> String {
        if self.title.is_empty() {
            self.abstract_text.clone()
        } else if self.abstract_text.is_empty() {
            self.title.clone()
        } else {
            format!("{} {}", self.title, self.abstract_text)
        }
    }
}

#[derive(Serialize, Deserialize)]
struct TextLine {
    id: String,
    title: String,
    #[serde(rename = "abstract")]
    abstract_text: String,
}

#[derive(Serialize, Deserialize)]
struct LabelSpaceEntry {
    name: String,
    #[serde(default)]
    r#match: Vec<String>,
}

/// Ordered class names plus lowercase canonical match strings per class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelSpace {
    class_names: Vec<String>,
    canonical_forms: Vec<Vec<String>>,
}

impl LabelSpace {
    /// A class with no explicit forms gets its lowercased display name.
    pub fn new(classes: Vec<(String, Vec<String>)>) -> Result<Self, DataError> {
        if classes.len() < 2 {
            return Err(DataError::InvalidLabelSpace(format!(
                "need at least 2 classes, got {}",
                classes.len()
            )));
        }
        let mut class_names = Vec::with_capacity(classes.len());
        let mut canonical_forms = Vec::with_capacity(classes.len());
        let mut seen = HashSet::new();
        for (name, forms) in classes {
            let forms = if forms.is_empty() {
                vec![name.to_lowercase()]
            } else {
                forms.iter().map(|f| f.to_lowercase()).collect()
            };
            for f in &forms {
                if f.is_empty() {
                    return Err(DataError::InvalidLabelSpace(format!(
                        "class {name:?} has an empty match string"
                    )));
                }
                if !seen.insert(f.clone()) {
                    return Err(DataError::InvalidLabelSpace(format!(
                        "match string {f:?} appears in more than one class"
                    )));
                }
            }
            class_names.push(name);
            canonical_forms.push(forms);
        }
        Ok(Self {
            class_names,
            canonical_forms,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn name(&self, class: usize) -> &str {
        &self.class_names[class]
    }

    pub fn names(&self) -> &[String] {
        &self.class_names
    }

    pub fn forms(&self, class: usize) -> &[String] {
        &self.canonical_forms[class]
    }

    pub fn index_of_name(&self, name: &str) -> Option<usize> {
        self.class_names
            .iter()
            .position(|n| n.eq_ignore_ascii_case(name))
    }

    pub fn from_json_file(path: &Path) -> Result<Self, DataError> {
        let body = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        let entries: Vec<LabelSpaceEntry> =
            serde_json::from_str(&body).map_err(|e| DataError::Json {
                path: path.to_path_buf(),
                source: e,
            })?;
        Self::new(entries.into_iter().map(|e| (e.name, e.r#match)).collect())
    }

    pub fn to_json(&self) -> String {
        let entries: Vec<LabelSpaceEntry> = self
            .class_names
            .iter()
            .zip(&self.canonical_forms)
            .map(|(name, forms)| LabelSpaceEntry {
                name: name.clone(),
                r#match: forms.clone(),
            })
            .collect();
        serde_json::to_string_pretty(&entries).expect("label space serializes")
    }

    /// The seven Cora topics.
    pub fn cora() -> Self {
        let classes = [
            "Case Based",
            "Genetic Algorithms",
            "Neural Networks",
            "Probabilistic Methods",
            "Reinforcement Learning",
            "Rule Learning",
            "Theory",
        ];
        Self::new(
            classes
                .iter()
                .map(|n| (n.to_string(), Vec::new()))
                .collect(),
        )
        .expect("static label space")
    }

    /// The three PubMed diabetes classes.
    pub fn pubmed() -> Self {
        Self::new(vec![
            (
                "Experimentally induced diabetes".into(),
                vec![
                    "experimentally induced diabetes".into(),
                    "experimental induced diabetes".into(),
                    "experimentally induced".into(),
                ],
            ),
            (
                "Type 1 diabetes".into(),
                vec!["type 1 diabetes".into(), "type 1".into()],
            ),
            (
                "Type 2 diabetes".into(),
                vec!["type 2 diabetes".into(), "type 2".into()],
            ),
        ])
        .expect("static label space")
    }

    /// The 40 arXiv CS subject areas, named `cs.XX`.
    pub fn arxiv_cs() -> Self {
        const SUBS: [&str; 40] = [
            "AI", "AR", "CC", "CE", "CG", "CL", "CR", "CV", "CY", "DB", "DC", "DL", "DM", "DS",
            "ET", "FL", "GL", "GR", "GT", "HC", "IR", "IT", "LG", "LO", "MA", "MM", "MS", "NA",
            "NE", "NI", "OH", "OS", "PF", "PL", "RO", "SC", "SD", "SE", "SI", "SY",
        ];
        Self::new(
            SUBS.iter()
                .map(|s| (format!("cs.{s}"), Vec::new()))
                .collect(),
        )
        .expect("static label space")
    }
}

/// Disjoint train/val/test node-index sets over labeled nodes.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitMask {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl SplitMask {
    pub fn is_empty(&self) -> bool {
        self.train.is_empty() && self.val.is_empty() && self.test.is_empty()
    }

    fn validate(&self, labels: &[i64]) -> Result<(), DataError> {
        let mut seen = HashSet::new();
        for (name, part) in [
            ("train", &self.train),
            ("val", &self.val),
            ("test", &self.test),
        ] {
            for &n in part {
                if n >= labels.len() {
                    return Err(DataError::InvalidSplit(format!(
                        "{name} index {n} out of range"
                    )));
                }
                if labels[n] < 0 {
                    return Err(DataError::InvalidSplit(format!(
                        "{name} contains unlabeled node {n}"
                    )));
                }
                if !seen.insert(n) {
                    return Err(DataError::InvalidSplit(format!(
                        "node {n} appears in more than one split"
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct SplitFile {
    train: Vec<String>,
    val: Vec<String>,
    test: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    num_nodes: usize,
    ids: Vec<String>,
}

/// An immutable text-attributed graph. The adjacency is symmetric after
/// load-time symmetrization; unlabeled nodes carry label -1 and take part in
/// message passing but never in losses or metrics.
#[derive(Debug, Clone)]
pub struct TextAttributedGraph {
    num_nodes: usize,
    adjacency: SparseCsr,
    texts: Vec<NodeText>,
    labels: Vec<i64>,
    label_space: LabelSpace,
    splits: SplitMask,
    node_ids: Vec<String>,
    id_to_index: HashMap<String, usize>,
}

impl TextAttributedGraph {
    /// Assembles a graph from parts, symmetrizing and deduplicating the edge
    /// set (self-loops kept as given).
    pub fn assemble(
        node_ids: Vec<String>,
        texts: Vec<NodeText>,
        labels: Vec<i64>,
        label_space: LabelSpace,
        edges: &BTreeSet<(usize, usize)>,
        splits: SplitMask,
    ) -> Result<Self, DataError> {
        let n = node_ids.len();
        assert_eq!(texts.len(), n);
        assert_eq!(labels.len(), n);
        for (i, &l) in labels.iter().enumerate() {
            if l >= label_space.num_classes() as i64 {
                return Err(DataError::InvalidLabelSpace(format!(
                    "node {i} has class index {l} but the space has {} classes",
                    label_space.num_classes()
                )));
            }
        }
        splits.validate(&labels)?;
        let mut symmetric = BTreeSet::new();
        for &(u, v) in edges {
            symmetric.insert((u, v));
            symmetric.insert((v, u));
        }
        let entries: Vec<(usize, usize, f32)> =
            symmetric.iter().map(|&(u, v)| (u, v, 1.0)).collect();
        let adjacency = SparseCsr::from_edges(n, n, &entries)?;
        let id_to_index = node_ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.clone(), i))
            .collect();
        Ok(Self {
            num_nodes: n,
            adjacency,
            texts,
            labels,
            label_space,
            splits,
            node_ids,
            id_to_index,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_classes(&self) -> usize {
        self.label_space.num_classes()
    }

    pub fn adjacency(&self) -> &SparseCsr {
        &self.adjacency
    }

    pub fn texts(&self) -> &[NodeText] {
        &self.texts
    }

    pub fn text(&self, node: usize) -> &NodeText {
        &self.texts[node]
    }

    pub fn labels(&self) -> &[i64] {
        &self.labels
    }

    pub fn label_space(&self) -> &LabelSpace {
        &self.label_space
    }

    pub fn splits(&self) -> &SplitMask {
        &self.splits
    }

    pub fn set_splits(&mut self, splits: SplitMask) -> Result<(), DataError> {
        splits.validate(&self.labels)?;
        self.splits = splits;
        Ok(())
    }

    pub fn node_ids(&self) -> &[String] {
        &self.node_ids
    }

    pub fn index_of_id(&self, id: &str) -> Option<usize> {
        self.id_to_index.get(id).copied()
    }

    pub fn labeled_nodes(&self) -> Vec<usize> {
        (0..self.num_nodes).filter(|&n| self.labels[n] >= 0).collect()
    }

    /// Fraction of (directed) adjacency entries joining same-class endpoints,
    /// over entries where both endpoints are labeled; self-loops excluded.
    pub fn edge_homophily(&self) -> f64 {
        let mut same = 0usize;
        let mut total = 0usize;
        for u in 0..self.num_nodes {
            let (cols, _) = self.adjacency.row_entries(u);
            for &v in cols {
                if u == v || self.labels[u] < 0 || self.labels[v] < 0 {
                    continue;
                }
                total += 1;
                if self.labels[u] == self.labels[v] {
                    same += 1;
                }
            }
        }
        if total == 0 {
            0.0
        } else {
            same as f64 / total as f64
        }
    }
}

/// Loads and validates a graph from its component files. The text file
/// defines the node set and index order; edges may not mention ids that have
/// no text entry.
pub fn load_tag_dataset(
    edge_path: &Path,
    text_path: &Path,
    label_path: &Path,
    label_space_path: &Path,
    split_path: Option<&Path>,
) -> Result<TextAttributedGraph, DataError> {
    let label_space = LabelSpace::from_json_file(label_space_path)?;

    // Texts establish the id -> dense index mapping in first-seen order.
    let mut node_ids = Vec::new();
    let mut texts = Vec::new();
    let mut id_to_index: HashMap<String, usize> = HashMap::new();
    let file = fs::File::open(text_path).map_err(|e| io_err(text_path, e))?;
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| io_err(text_path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: TextLine =
            serde_json::from_str(&line).map_err(|e| DataError::MalformedLine {
                path: text_path.to_path_buf(),
                line: lineno + 1,
                msg: e.to_string(),
            })?;
        if id_to_index.contains_key(&parsed.id) {
            return Err(DataError::MalformedLine {
                path: text_path.to_path_buf(),
                line: lineno + 1,
                msg: format!("duplicate node id {:?}", parsed.id),
            });
        }
        let idx = node_ids.len();
        id_to_index.insert(parsed.id.clone(), idx);
        node_ids.push(parsed.id);
        texts.push(NodeText {
            node_id: idx,
            title: parsed.title,
            abstract_text: parsed.abstract_text,
        });
    }

    // Edges.
    let mut edges = BTreeSet::new();
    let mut missing: BTreeSet<String> = BTreeSet::new();
    let file = fs::File::open(edge_path).map_err(|e| io_err(edge_path, e))?;
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| io_err(edge_path, e))?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let (src, dst) = trimmed.split_once('\t').ok_or_else(|| DataError::MalformedLine {
            path: edge_path.to_path_buf(),
            line: lineno + 1,
            msg: "expected `src<TAB>dst`".into(),
        })?;
        let (src, dst) = (src.trim(), dst.trim());
        if src.is_empty() || dst.is_empty() {
            return Err(DataError::MalformedLine {
                path: edge_path.to_path_buf(),
                line: lineno + 1,
                msg: "empty endpoint".into(),
            });
        }
        match (id_to_index.get(src), id_to_index.get(dst)) {
            (Some(&u), Some(&v)) => {
                edges.insert((u, v));
            }
            (a, b) => {
                if a.is_none() {
                    missing.insert(src.to_string());
                }
                if b.is_none() {
                    missing.insert(dst.to_string());
                }
            }
        }
    }
    if !missing.is_empty() {
        return Err(DataError::MissingText {
            ids: missing.into_iter().collect(),
        });
    }

    // Labels.
    let mut labels = vec![-1i64; node_ids.len()];
    let file = fs::File::open(label_path).map_err(|e| io_err(label_path, e))?;
    let mut lines = BufReader::new(file).lines().enumerate();
    match lines.next() {
        Some((_, Ok(header))) if header.trim() == "id,label" => {}
        Some((_, Ok(header))) => {
            return Err(DataError::MalformedLine {
                path: label_path.to_path_buf(),
                line: 1,
                msg: format!("expected header `id,label`, got {header:?}"),
            })
        }
        Some((_, Err(e))) => return Err(io_err(label_path, e)),
        None => {
            return Err(DataError::MalformedLine {
                path: label_path.to_path_buf(),
                line: 1,
                msg: "empty label file".into(),
            })
        }
    }
    for (lineno, line) in lines {
        let line = line.map_err(|e| io_err(label_path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let (id, label) = line.split_once(',').ok_or_else(|| DataError::MalformedLine {
            path: label_path.to_path_buf(),
            line: lineno + 1,
            msg: "expected `id,label`".into(),
        })?;
        let idx = *id_to_index
            .get(id.trim())
            .ok_or_else(|| DataError::UnknownNodeId {
                path: label_path.to_path_buf(),
                id: id.trim().to_string(),
                context: "label file",
            })?;
        let class = label_space
            .index_of_name(label.trim())
            .ok_or_else(|| DataError::UnknownLabel {
                path: label_path.to_path_buf(),
                line: lineno + 1,
                label: label.trim().to_string(),
            })?;
        labels[idx] = class as i64;
    }

    // Splits.
    let splits = match split_path {
        Some(path) if path.exists() => {
            let body = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
            let parsed: SplitFile = serde_json::from_str(&body).map_err(|e| DataError::Json {
                path: path.to_path_buf(),
                source: e,
            })?;
            let resolve = |ids: &[String]| -> Result<Vec<usize>, DataError> {
                let mut out = Vec::with_capacity(ids.len());
                for id in ids {
                    out.push(*id_to_index.get(id).ok_or_else(|| DataError::UnknownNodeId {
                        path: path.to_path_buf(),
                        id: id.clone(),
                        context: "split file",
                    })?);
                }
                out.sort_unstable();
                Ok(out)
            };
            SplitMask {
                train: resolve(&parsed.train)?,
                val: resolve(&parsed.val)?,
                test: resolve(&parsed.test)?,
            }
        }
        _ => SplitMask::default(),
    };

    TextAttributedGraph::assemble(node_ids, texts, labels, label_space, &edges, splits)
}

/// Standard in-directory file names used by [`load_tag_dir`] and
/// [`save_tag_dataset`].
pub mod dataset_files {
    pub const EDGES: &str = "edges.tsv";
    pub const TEXTS: &str = "texts.jsonl";
    pub const LABELS: &str = "labels.csv";
    pub const LABEL_SPACE: &str = "label_space.json";
    pub const SPLITS: &str = "splits.json";
    pub const MANIFEST: &str = "manifest.json";
}

pub fn load_tag_dir(dir: &Path) -> Result<TextAttributedGraph, DataError> {
    let split = dir.join(dataset_files::SPLITS);
    load_tag_dataset(
        &dir.join(dataset_files::EDGES),
        &dir.join(dataset_files::TEXTS),
        &dir.join(dataset_files::LABELS),
        &dir.join(dataset_files::LABEL_SPACE),
        Some(&split),
    )
}

/// Writes the dataset directory in the loader's formats, one undirected edge
/// per line, plus `manifest.json` with the id -> index mapping.
pub fn save_tag_dataset(g: &TextAttributedGraph, dir: &Path) -> Result<(), DataError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;

    let mut edges = String::from("# src\tdst\n");
    for u in 0..g.num_nodes() {
        let (cols, _) = g.adjacency.row_entries(u);
        for &v in cols {
            if v >= u {
                let _ = writeln!(edges, "{}\t{}", g.node_ids[u], g.node_ids[v]);
            }
        }
    }
    let path = dir.join(dataset_files::EDGES);
    write_atomic(&path, edges.as_bytes()).map_err(|e| io_err(&path, e))?;

    let mut texts = String::new();
    for t in &g.texts {
        let line = serde_json::to_string(&TextLine {
            id: g.node_ids[t.node_id].clone(),
            title: t.title.clone(),
            abstract_text: t.abstract_text.clone(),
        })
        .expect("text line serializes");
        texts.push_str(&line);
        texts.push('\n');
    }
    let path = dir.join(dataset_files::TEXTS);
    write_atomic(&path, texts.as_bytes()).map_err(|e| io_err(&path, e))?;

    let mut labels = String::from("id,label\n");
    for (n, &l) in g.labels.iter().enumerate() {
        if l >= 0 {
            let _ = writeln!(labels, "{},{}", g.node_ids[n], g.label_space.name(l as usize));
        }
    }
    let path = dir.join(dataset_files::LABELS);
    write_atomic(&path, labels.as_bytes()).map_err(|e| io_err(&path, e))?;

    let path = dir.join(dataset_files::LABEL_SPACE);
    write_atomic(&path, g.label_space.to_json().as_bytes()).map_err(|e| io_err(&path, e))?;

    if !g.splits.is_empty() {
        let to_ids = |part: &[usize]| part.iter().map(|&n| g.node_ids[n].clone()).collect();
        let file = SplitFile {
            train: to_ids(&g.splits.train),
            val: to_ids(&g.splits.val),
            test: to_ids(&g.splits.test),
        };
        let path = dir.join(dataset_files::SPLITS);
        write_atomic(
            &path,
            serde_json::to_string_pretty(&file).expect("splits serialize").as_bytes(),
        )
        .map_err(|e| io_err(&path, e))?;
    }

    let manifest = Manifest {
        num_nodes: g.num_nodes,
        ids: g.node_ids.clone(),
    };
    let path = dir.join(dataset_files::MANIFEST);
    write_atomic(
        &path,
        serde_json::to_string_pretty(&manifest).expect("manifest serializes").as_bytes(),
    )
    .map_err(|e| io_err(&path, e))?;
    Ok(())
}

/// Deterministic split of the labeled nodes. Val and test get
/// floor(labeled * ratio) nodes each; the remainder goes to train.
pub fn split_nodes(
    g: &TextAttributedGraph,
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<SplitMask, DataError> {
    let (tr, va, te) = ratios;
    if !(tr > 0.0 && va > 0.0 && te > 0.0) || (tr + va + te - 1.0).abs() > 1e-9 {
        return Err(DataError::InvalidRatios(tr, va, te));
    }
    let mut labeled = g.labeled_nodes();
    if labeled.len() < 3 {
        return Err(DataError::TooFewLabeled(labeled.len()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    labeled.shuffle(&mut rng);
    let n = labeled.len();
    let n_val = (n as f64 * va).floor() as usize;
    let n_test = (n as f64 * te).floor() as usize;
    let n_train = n - n_val - n_test;
    let mut train: Vec<usize> = labeled[..n_train].to_vec();
    let mut val: Vec<usize> = labeled[n_train..n_train + n_val].to_vec();
    let mut test: Vec<usize> = labeled[n_train + n_val..].to_vec();
    train.sort_unstable();
    val.sort_unstable();
    test.sort_unstable();
    Ok(SplitMask { train, val, test })
}
