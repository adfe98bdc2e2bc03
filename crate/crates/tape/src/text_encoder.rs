//! Text features: a TF-IDF encoder with a seeded random projection feeds a
//! small supervised MLP ("interpreter"); the MLP's post-nonlinearity hidden
//! layer becomes the frozen per-node feature vector.
//!
//! One interpreter is fitted per text source (original text, explanation
//! text) with independently fitted vocabularies. An optional remote
//! embeddings client can replace the TF-IDF front end without changing
//! anything downstream.

use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::llm::{prompt_hash, LlmError, ResponseCache, Transport};
use crate::numeric::{
    adam_step, gaussian, glorot_uniform, AdamConfig, AdamState, DenseMatrix,
    NumericError, ParamId, Params, Tape,
};

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("vocabulary is empty after document-frequency filtering (min_df = {min_df})")]
    EmptyVocabulary { min_df: usize },
    #[error("feature dimension {found} does not match the model's input dimension {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("train mask is empty")]
    EmptyTrainMask,
    #[error("non-finite loss at epoch {epoch} (learning rate {learning_rate})")]
    NonFiniteLoss { epoch: usize, learning_rate: f32 },
    #[error(transparent)]
    Numeric(#[from] NumericError),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error("embeddings endpoint: {0}")]
    Embed(String),
}

/// TF-IDF fitting and projection settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TfidfConfig {
    pub max_features: usize,
    pub min_df: usize,
    /// Tokens shorter than this are dropped (default 2, dropping one-char
    /// tokens).
    pub min_token_len: usize,
    /// Output dimension of the seeded Gaussian projection.
    pub dim: usize,
    pub seed: u64,
}

impl Default for TfidfConfig {
    fn default() -> Self {
        Self {
            max_features: 20_000,
            min_df: 5,
            min_token_len: 2,
            dim: 256,
            seed: 42,
        }
    }
}

/// Lowercase and split on non-alphanumerics, dropping short tokens.
pub fn tokenize(text: &str, min_token_len: usize) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| t.chars().count() >= min_token_len && !t.is_empty())
        .map(|t| t.to_lowercase())
        .collect()
}

/// Fitted vocabulary, smoothed idf weights, and the frozen projection.
#[derive(Debug, Clone)]
pub struct TfidfModel {
    terms: Vec<String>,
    term_to_col: HashMap<String, usize>,
    idf: Vec<f64>,
    min_token_len: usize,
    dim: usize,
    projection: DenseMatrix,
}

/// Fits vocabulary and idf on a corpus. Terms with document frequency below
/// `min_df` are dropped; if more than `max_features` remain, the highest-df
/// terms win (ties broken lexicographically). idf(t) = ln((1+N)/(1+df)) + 1.
pub fn fit_tfidf(corpus: &[String], config: &TfidfConfig) -> Result<TfidfModel, EncoderError> {
    if corpus.is_empty() {
        return Err(EncoderError::EmptyCorpus);
    }
    let mut df: HashMap<String, usize> = HashMap::new();
    for doc in corpus {
        let mut tokens = tokenize(doc, config.min_token_len);
        tokens.sort_unstable();
        tokens.dedup();
        for t in tokens {
            *df.entry(t).or_insert(0) += 1;
        }
    }
    let mut kept: Vec<(String, usize)> = df
        .into_iter()
        .filter(|&(_, c)| c >= config.min_df)
        .collect();
    if kept.is_empty() {
        return Err(EncoderError::EmptyVocabulary {
            min_df: config.min_df,
        });
    }
    if kept.len() > config.max_features {
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        kept.truncate(config.max_features);
    }
    // Column order is lexicographic over the surviving terms, so the layout
    // never depends on hash-map iteration order.
    kept.sort_by(|a, b| a.0.cmp(&b.0));

    let n_docs = corpus.len() as f64;
    let terms: Vec<String> = kept.iter().map(|(t, _)| t.clone()).collect();
    let idf: Vec<f64> = kept
        .iter()
        .map(|&(_, d)| ((1.0 + n_docs) / (1.0 + d as f64)).ln() + 1.0)
        .collect();
    let term_to_col = terms
        .iter()
        .enumerate()
        .map(|(i, t)| (t.clone(), i))
        .collect();
    let projection = gaussian(
        terms.len(),
        config.dim,
        1.0 / (config.dim as f64).sqrt(),
        config.seed,
    );
    Ok(TfidfModel {
        terms,
        term_to_col,
        idf,
        min_token_len: config.min_token_len,
        dim: config.dim,
        projection,
    })
}

impl TfidfModel {
    pub fn vocab_size(&self) -> usize {
        self.terms.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    pub fn idf(&self) -> &[f64] {
        &self.idf
    }

    pub fn column_of(&self, term: &str) -> Option<usize> {
        self.term_to_col.get(term).copied()
    }

    pub fn projection(&self) -> &DenseMatrix {
        &self.projection
    }

    /// Sparse tf-idf weights of one document, L2-normalized, in f64.
    /// Out-of-vocabulary terms are ignored; an all-OOV document is empty.
    pub fn tfidf_sparse(&self, text: &str) -> Vec<(usize, f64)> {
        let mut counts: HashMap<usize, f64> = HashMap::new();
        for token in tokenize(text, self.min_token_len) {
            if let Some(&col) = self.term_to_col.get(&token) {
                *counts.entry(col).or_insert(0.0) += 1.0;
            }
        }
        let mut entries: Vec<(usize, f64)> = counts
            .into_iter()
            .map(|(col, tf)| (col, tf * self.idf[col]))
            .collect();
        entries.sort_by_key(|&(col, _)| col);
        let norm = entries.iter().map(|&(_, w)| w * w).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Vec::new();
        }
        entries.into_iter().map(|(col, w)| (col, w / norm)).collect()
    }

    /// Dense vocabulary-sized tf-idf vector (mostly for the test oracles).
    pub fn tfidf_dense(&self, text: &str) -> Vec<f64> {
        let mut out = vec![0.0; self.vocab_size()];
        for (col, w) in self.tfidf_sparse(text) {
            out[col] = w;
        }
        out
    }

    /// Projects the normalized tf-idf weights to `dim` dimensions. An
    /// all-OOV document encodes to the zero vector.
    pub fn encode(&self, text: &str) -> Vec<f32> {
        let mut acc = vec![0.0f64; self.dim];
        for (col, w) in self.tfidf_sparse(text) {
            let row = self.projection.row(col);
            for (j, &p) in row.iter().enumerate() {
                acc[j] += w * p as f64;
            }
        }
        acc.into_iter().map(|v| v as f32).collect()
    }

    pub fn encode_corpus(&self, texts: &[String]) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(texts.len(), self.dim);
        for (i, text) in texts.iter().enumerate() {
            let row = self.encode(text);
            out.row_mut(i).copy_from_slice(&row);
        }
        out
    }
}

/// Interpreter training hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InterpreterHyper {
    pub hidden_dim: usize,
    pub learning_rate: f32,
    pub epochs: usize,
    pub patience: usize,
    pub seed: u64,
}

impl Default for InterpreterHyper {
    fn default() -> Self {
        Self {
            hidden_dim: 256,
            learning_rate: 1e-3,
            epochs: 500,
            patience: 30,
            seed: 42,
        }
    }
}

/// Two-layer MLP: relu(x W1 + b1) W2 + b2.
#[derive(Debug, Clone)]
pub struct Mlp {
    params: Params,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
    in_dim: usize,
    hidden_dim: usize,
    out_dim: usize,
}

impl Mlp {
    pub fn new(in_dim: usize, hidden_dim: usize, out_dim: usize, seed: u64) -> Self {
        let mut params = Params::new();
        let w1 = params.add(glorot_uniform(in_dim, hidden_dim, seed ^ 0x11));
        let b1 = params.add(DenseMatrix::zeros(1, hidden_dim));
        let w2 = params.add(glorot_uniform(hidden_dim, out_dim, seed ^ 0x22));
        let b2 = params.add(DenseMatrix::zeros(1, out_dim));
        Self {
            params,
            w1,
            b1,
            w2,
            b2,
            in_dim,
            hidden_dim,
            out_dim,
        }
    }

    /// Assembles an MLP from explicit weights (identity setups in tests).
    pub fn from_parts(
        w1: DenseMatrix,
        b1: DenseMatrix,
        w2: DenseMatrix,
        b2: DenseMatrix,
    ) -> Self {
        let (in_dim, hidden_dim, out_dim) = (w1.rows(), w1.cols(), w2.cols());
        let mut params = Params::new();
        let w1 = params.add(w1);
        let b1 = params.add(b1);
        let w2 = params.add(w2);
        let b2 = params.add(b2);
        Self {
            params,
            w1,
            b1,
            w2,
            b2,
            in_dim,
            hidden_dim,
            out_dim,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    fn check_input(&self, x: &DenseMatrix) -> Result<(), EncoderError> {
        if x.cols() != self.in_dim {
            return Err(EncoderError::DimensionMismatch {
                expected: self.in_dim,
                found: x.cols(),
            });
        }
        Ok(())
    }

    /// Post-nonlinearity hidden activations, computed without the tape.
    pub fn hidden(&self, x: &DenseMatrix) -> Result<DenseMatrix, EncoderError> {
        self.check_input(x)?;
        let mut h = x.matmul(self.params.get(self.w1))?;
        let b1 = self.params.get(self.b1);
        for i in 0..h.rows() {
            let row = h.row_mut(i);
            for (j, v) in row.iter_mut().enumerate() {
                *v = (*v + b1.get(0, j)).max(0.0);
            }
        }
        Ok(h)
    }

    pub fn logits(&self, x: &DenseMatrix) -> Result<DenseMatrix, EncoderError> {
        let h = self.hidden(x)?;
        let mut out = h.matmul(self.params.get(self.w2))?;
        let b2 = self.params.get(self.b2);
        for i in 0..out.rows() {
            let row = out.row_mut(i);
            for (j, v) in row.iter_mut().enumerate() {
                *v += b2.get(0, j);
            }
        }
        Ok(out)
    }

    fn loss_tape(
        &self,
        x: Arc<DenseMatrix>,
        labels: &[i64],
        mask: &[usize],
    ) -> Result<(Tape, crate::numeric::NodeId), NumericError> {
        let mut tape = Tape::new();
        let xn = tape.constant_shared(x);
        let w1 = tape.param(&self.params, self.w1);
        let b1 = tape.param(&self.params, self.b1);
        let w2 = tape.param(&self.params, self.w2);
        let b2 = tape.param(&self.params, self.b2);
        let h = tape.matmul(xn, w1)?;
        let h = tape.add_bias(h, b1)?;
        let h = tape.relu(h)?;
        let logits = tape.matmul(h, w2)?;
        let logits = tape.add_bias(logits, b2)?;
        let logp = tape.log_softmax(logits)?;
        let loss = tape.nll_loss(logp, labels, mask)?;
        Ok((tape, loss))
    }
}

/// Mean cross-entropy of raw logits over masked rows, computed in f64.
pub fn cross_entropy(logits: &DenseMatrix, labels: &[i64], mask: &[usize]) -> f64 {
    let mut total = 0.0f64;
    for &i in mask {
        let row = logits.row(i);
        let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
        let lse = max + row.iter().map(|&v| (v as f64 - max).exp()).sum::<f64>().ln();
        total += lse - row[labels[i] as usize] as f64;
    }
    total / mask.len() as f64
}

/// Loss trace of one interpreter run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InterpreterHistory {
    pub train_loss: Vec<f32>,
    pub val_loss: Vec<f64>,
    /// 0-based epoch whose weights were kept.
    pub best_epoch: usize,
}

/// Trains the interpreter MLP with Adam and cross-entropy on the train mask,
/// early-stopping on val cross-entropy and restoring the best-val weights.
pub fn train_interpreter(
    features: &DenseMatrix,
    labels: &[i64],
    train_mask: &[usize],
    val_mask: &[usize],
    hyper: &InterpreterHyper,
) -> Result<(Mlp, InterpreterHistory), EncoderError> {
    if train_mask.is_empty() {
        return Err(EncoderError::EmptyTrainMask);
    }
    features.check_finite("train_interpreter input")?;
    let num_classes = 1 + labels
        .iter()
        .filter(|&&l| l >= 0)
        .map(|&l| l as usize)
        .max()
        .unwrap_or(0);
    let mut mlp = Mlp::new(features.cols(), hyper.hidden_dim, num_classes, hyper.seed);
    let mut state = AdamState::new(&mlp.params);
    let adam = AdamConfig::with_learning_rate(hyper.learning_rate);
    let x = Arc::new(features.clone());

    // Empty val mask falls back to the train loss as the stopping metric.
    let stop_mask: &[usize] = if val_mask.is_empty() { train_mask } else { val_mask };

    let mut history = InterpreterHistory {
        train_loss: Vec::new(),
        val_loss: Vec::new(),
        best_epoch: 0,
    };
    let mut best_val = f64::INFINITY;
    let mut best_params = mlp.params.clone();
    let mut since_best = 0usize;

    for epoch in 0..hyper.epochs {
        let (mut tape, loss) = mlp.loss_tape(Arc::clone(&x), labels, train_mask)?;
        let train_loss = tape.value(loss).scalar();
        if !train_loss.is_finite() {
            return Err(EncoderError::NonFiniteLoss {
                epoch,
                learning_rate: hyper.learning_rate,
            });
        }
        let grads = tape.backward(loss)?;
        adam_step(&mut mlp.params, &grads, &mut state, &adam);

        let val = cross_entropy(&mlp.logits(x.as_ref())?, labels, stop_mask);
        history.train_loss.push(train_loss);
        history.val_loss.push(val);
        if val < best_val {
            best_val = val;
            best_params = mlp.params.clone();
            history.best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best > hyper.patience {
                break;
            }
        }
    }
    mlp.params = best_params;
    Ok((mlp, history))
}

/// Hidden activations for every row: the frozen node features.
pub fn extract_features(mlp: &Mlp, features: &DenseMatrix) -> Result<DenseMatrix, EncoderError> {
    mlp.hidden(features)
}

/// Remote embeddings endpoint settings (optional TF-IDF replacement).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmbedConfig {
    pub endpoint_url: String,
    pub model_name: String,
    pub api_key_env: String,
    pub batch_size: usize,
}

impl Default for EmbedConfig {
    fn default() -> Self {
        Self {
            endpoint_url: String::new(),
            model_name: "text-embedding-3-small".into(),
            api_key_env: "TAPE_API_KEY".into(),
            batch_size: 64,
        }
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    model: &'a str,
    input: &'a [String],
}

#[derive(Deserialize)]
struct EmbedVector {
    embedding: Vec<f32>,
}

#[derive(Deserialize)]
struct EmbedResponse {
    data: Vec<EmbedVector>,
}

/// Fetches one embedding vector per text (JSON POST, list of strings in,
/// list of float vectors out), caching by text hash so reruns are offline.
pub fn embed_remote(
    texts: &[String],
    config: &EmbedConfig,
    transport: &dyn Transport,
    cache_path: Option<&Path>,
) -> Result<DenseMatrix, EncoderError> {
    let cache = match cache_path {
        Some(p) => Some(ResponseCache::open(p, false)?),
        None => None,
    };
    let mut vectors: Vec<Option<Vec<f32>>> = vec![None; texts.len()];
    let mut missing: Vec<usize> = Vec::new();
    for (i, text) in texts.iter().enumerate() {
        let hash = prompt_hash(text);
        match cache
            .as_ref()
            .and_then(|c| c.get(0, &hash, &config.model_name))
        {
            Some(stored) => {
                let v: Vec<f32> = serde_json::from_str(&stored)
                    .map_err(|e| EncoderError::Embed(format!("corrupt cached vector: {e}")))?;
                vectors[i] = Some(v);
            }
            None => missing.push(i),
        }
    }

    let api_key = std::env::var(&config.api_key_env).ok();
    for chunk in missing.chunks(config.batch_size.max(1)) {
        let batch: Vec<String> = chunk.iter().map(|&i| texts[i].clone()).collect();
        let body = serde_json::to_string(&EmbedRequest {
            model: &config.model_name,
            input: &batch,
        })
        .expect("embed request serializes");
        let resp = transport
            .post(&config.endpoint_url, api_key.as_deref(), &body)
            .map_err(EncoderError::Embed)?;
        if !(200..300).contains(&resp.status) {
            return Err(EncoderError::Embed(format!(
                "status {}: {}",
                resp.status, resp.body
            )));
        }
        let parsed: EmbedResponse = serde_json::from_str(&resp.body)
            .map_err(|e| EncoderError::Embed(format!("malformed response: {e}")))?;
        if parsed.data.len() != chunk.len() {
            return Err(EncoderError::Embed(format!(
                "asked for {} embeddings, got {}",
                chunk.len(),
                parsed.data.len()
            )));
        }
        for (&i, vec) in chunk.iter().zip(parsed.data) {
            if let Some(c) = cache.as_ref() {
                let stored = serde_json::to_string(&vec.embedding).expect("vector serializes");
                c.insert(0, &prompt_hash(&texts[i]), &config.model_name, &stored)?;
            }
            vectors[i] = Some(vec.embedding);
        }
    }

    let dim = vectors
        .first()
        .and_then(|v| v.as_ref())
        .map(Vec::len)
        .unwrap_or(0);
    let mut out = DenseMatrix::zeros(texts.len(), dim);
    for (i, v) in vectors.into_iter().enumerate() {
        let v = v.expect("every vector fetched or cached");
        if v.len() != dim {
            return Err(EncoderError::Embed(format!(
                "inconsistent embedding dimension: {} vs {dim}",
                v.len()
            )));
        }
        out.row_mut(i).copy_from_slice(&v);
    }
    Ok(out)
}
