//! Chat-completion client with caching, bounded concurrency, retries, and a
//! deterministic offline mock.
//!
//! The LLM is reachable only as text-in/text-out: a JSON POST with `model`,
//! `temperature`, `max_tokens`, and a single user message, answered by the
//! first choice's message content. No logits or embeddings are ever read.
//! Every raw response is appended to a JSON Lines cache keyed by
//! (node id, prompt hash, model name), so reruns issue zero network calls.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::graph::TextAttributedGraph;
use crate::seeds::stage_seed;

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("transport failed after {attempts} attempt(s): {message}")]
    Transport { attempts: usize, message: String },
    #[error("endpoint returned status {status} after {attempts} attempt(s): {body}")]
    Status {
        status: u16,
        attempts: usize,
        body: String,
    },
    #[error("response is not valid chat-completion JSON: {0}")]
    MalformedResponse(String),
    #[error("response contained no message content")]
    EmptyContent,
    #[error("cache {path}:{line}: {msg} (pass repair=true to skip bad lines)")]
    CacheCorrupt {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("cache {path}: {source}")]
    CacheIo {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("mock oracle: {0}")]
    Mock(String),
}

/// Connection and retry settings for a chat-completion endpoint.
#[derive(Debug, Clone)]
pub struct LlmConfig {
    pub endpoint_url: String,
    pub model_name: String,
    pub temperature: f64,
    pub max_output_tokens: usize,
    pub max_in_flight: usize,
    pub retry_limit: usize,
    pub timeout: Duration,
    /// First backoff delay; doubles per retry with jitter.
    pub retry_base: Duration,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
}

impl Default for LlmConfig {
    fn default() -> Self {
        Self {
            endpoint_url: String::new(),
            model_name: "gpt-3.5-turbo".into(),
            temperature: 0.0,
            max_output_tokens: 512,
            max_in_flight: 4,
            retry_limit: 3,
            timeout: Duration::from_secs(60),
            retry_base: Duration::from_secs(1),
            api_key_env: "TAPE_API_KEY".into(),
        }
    }
}

/// Raw HTTP reply, status plus body.
#[derive(Debug, Clone)]
pub struct HttpResponse {
    pub status: u16,
    pub body: String,
}

/// Anything that can POST a JSON body. Implementations must be shareable
/// across the enrichment worker threads.
pub trait Transport: Send + Sync {
    fn post(&self, url: &str, api_key: Option<&str>, body: &str) -> Result<HttpResponse, String>;
}

/// Blocking HTTP transport.
pub struct HttpTransport {
    client: reqwest::blocking::Client,
}

impl HttpTransport {
    pub fn new(timeout: Duration) -> Result<Self, LlmError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| LlmError::Transport {
                attempts: 0,
                message: e.to_string(),
            })?;
        Ok(Self { client })
    }
}

impl Transport for HttpTransport {
    fn post(&self, url: &str, api_key: Option<&str>, body: &str) -> Result<HttpResponse, String> {
        let mut req = self
            .client
            .post(url)
            .header("content-type", "application/json")
            .body(body.to_string());
        if let Some(key) = api_key {
            req = req.header("authorization", format!("Bearer {key}"));
        }
        let resp = req.send().map_err(|e| e.to_string())?;
        let status = resp.status().as_u16();
        let body = resp.text().map_err(|e| e.to_string())?;
        Ok(HttpResponse { status, body })
    }
}

/// Scripted transport for tests and dry runs: pops canned outcomes in order,
/// repeating the last one.
pub struct MockTransport {
    script: Mutex<Vec<Result<HttpResponse, String>>>,
}

impl MockTransport {
    pub fn new(script: Vec<Result<HttpResponse, String>>) -> Self {
        Self {
            script: Mutex::new(script),
        }
    }

    /// Always answers 200 with a well-formed chat completion carrying `content`.
    pub fn ok(content: &str) -> Self {
        Self::new(vec![Ok(HttpResponse {
            status: 200,
            body: chat_body(content),
        })])
    }
}

/// Renders a minimal chat-completion JSON body with the given content.
pub fn chat_body(content: &str) -> String {
    serde_json::json!({
        "choices": [{"message": {"role": "assistant", "content": content}}]
    })
    .to_string()
}

impl Transport for MockTransport {
    fn post(&self, _url: &str, _key: Option<&str>, _body: &str) -> Result<HttpResponse, String> {
        let mut script = self.script.lock().expect("mock transport lock");
        if script.len() > 1 {
            script.remove(0)
        } else {
            script[0].clone()
        }
    }
}

/// Wraps a transport, counting total calls and the in-flight high-water mark.
pub struct CountingTransport<T: Transport> {
    inner: T,
    calls: AtomicUsize,
    in_flight: AtomicUsize,
    max_in_flight_seen: AtomicUsize,
}

impl<T: Transport> CountingTransport<T> {
    pub fn new(inner: T) -> Self {
        Self {
            inner,
            calls: AtomicUsize::new(0),
            in_flight: AtomicUsize::new(0),
            max_in_flight_seen: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn max_in_flight_seen(&self) -> usize {
        self.max_in_flight_seen.load(Ordering::SeqCst)
    }
}

impl<T: Transport> Transport for CountingTransport<T> {
    fn post(&self, url: &str, api_key: Option<&str>, body: &str) -> Result<HttpResponse, String> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        self.max_in_flight_seen.fetch_max(now, Ordering::SeqCst);
        let out = self.inner.post(url, api_key, body);
        self.in_flight.fetch_sub(1, Ordering::SeqCst);
        out
    }
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    temperature: f64,
    max_tokens: usize,
    messages: Vec<ChatMessage<'a>>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatChoiceMessage,
}

#[derive(Deserialize)]
struct ChatChoiceMessage {
    content: Option<String>,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

/// First 8 bytes of SHA-256 over the prompt bytes, hex-encoded. Stable across
/// platforms and releases, so cache files stay valid.
pub fn prompt_hash(prompt: &str) -> String {
    let digest = Sha256::digest(prompt.as_bytes());
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

/// Sends one prompt, retrying transient failures with exponential backoff
/// (base doubles per attempt, plus jitter). Returns the assistant message
/// content verbatim.
pub fn query(prompt: &str, config: &LlmConfig, transport: &dyn Transport) -> Result<String, LlmError> {
    let body = serde_json::to_string(&ChatRequest {
        model: &config.model_name,
        temperature: config.temperature,
        max_tokens: config.max_output_tokens,
        messages: vec![ChatMessage {
            role: "user",
            content: prompt,
        }],
    })
    .expect("chat request serializes");
    let api_key = std::env::var(&config.api_key_env).ok();

    let mut last_failure: Option<LlmError> = None;
    for attempt in 0..=config.retry_limit {
        if attempt > 0 {
            let factor = 1u32 << (attempt - 1).min(16) as u32;
            let exp = config.retry_base.saturating_mul(factor);
            let jitter = exp.mul_f64(rand::thread_rng().gen_range(0.0..0.5));
            std::thread::sleep(exp + jitter);
        }
        match transport.post(&config.endpoint_url, api_key.as_deref(), &body) {
            Ok(resp) if (200..300).contains(&resp.status) => {
                let parsed: ChatResponse = serde_json::from_str(&resp.body)
                    .map_err(|e| LlmError::MalformedResponse(e.to_string()))?;
                let content = parsed
                    .choices
                    .into_iter()
                    .next()
                    .and_then(|c| c.message.content)
                    .unwrap_or_default();
                if content.is_empty() {
                    return Err(LlmError::EmptyContent);
                }
                return Ok(content);
            }
            Ok(resp) => {
                last_failure = Some(LlmError::Status {
                    status: resp.status,
                    attempts: attempt + 1,
                    body: resp.body,
                });
            }
            Err(message) => {
                last_failure = Some(LlmError::Transport {
                    attempts: attempt + 1,
                    message,
                });
            }
        }
    }
    Err(last_failure.expect("at least one attempt ran"))
}

/// One cached raw response.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CacheEntry {
    pub node_id: usize,
    pub prompt_hash: String,
    pub raw_response: String,
    pub model_name: String,
    pub timestamp: u64,
}

/// Append-only JSON Lines response cache; one file per (dataset, template).
/// Reads share a map, appends are serialized, and each entry is written as
/// one line in a single write.
pub struct ResponseCache {
    path: PathBuf,
    inner: Mutex<CacheInner>,
}

struct CacheInner {
    entries: HashMap<(usize, String, String), String>,
    writer: fs::File,
}

impl ResponseCache {
    /// Opens (creating if needed) a cache file. A corrupt line is an error
    /// naming the line unless `repair` is set, which skips bad lines.
    pub fn open(path: &Path, repair: bool) -> Result<Self, LlmError> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| LlmError::CacheIo {
                path: path.to_path_buf(),
                source: e,
            })?;
        }
        let mut entries = HashMap::new();
        if path.exists() {
            let body = fs::read_to_string(path).map_err(|e| LlmError::CacheIo {
                path: path.to_path_buf(),
                source: e,
            })?;
            for (lineno, line) in body.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<CacheEntry>(line) {
                    Ok(e) => {
                        entries.insert(
                            (e.node_id, e.prompt_hash, e.model_name),
                            e.raw_response,
                        );
                    }
                    Err(e) if repair => {
                        let _ = e;
                    }
                    Err(e) => {
                        return Err(LlmError::CacheCorrupt {
                            path: path.to_path_buf(),
                            line: lineno + 1,
                            msg: e.to_string(),
                        })
                    }
                }
            }
        }
        let writer = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| LlmError::CacheIo {
                path: path.to_path_buf(),
                source: e,
            })?;
        Ok(Self {
            path: path.to_path_buf(),
            inner: Mutex::new(CacheInner { entries, writer }),
        })
    }

    pub fn len(&self) -> usize {
        self.inner.lock().expect("cache lock").entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, node_id: usize, prompt_hash: &str, model: &str) -> Option<String> {
        self.inner
            .lock()
            .expect("cache lock")
            .entries
            .get(&(node_id, prompt_hash.to_string(), model.to_string()))
            .cloned()
    }

    pub fn insert(
        &self,
        node_id: usize,
        prompt_hash: &str,
        model: &str,
        raw_response: &str,
    ) -> Result<(), LlmError> {
        let entry = CacheEntry {
            node_id,
            prompt_hash: prompt_hash.to_string(),
            raw_response: raw_response.to_string(),
            model_name: model.to_string(),
            timestamp: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        };
        let line = serde_json::to_string(&entry).expect("cache entry serializes");
        let mut inner = self.inner.lock().expect("cache lock");
        // One write call per entry keeps lines atomic for concurrent readers.
        writeln!(inner.writer, "{line}").map_err(|e| LlmError::CacheIo {
            path: self.path.clone(),
            source: e,
        })?;
        inner.writer.flush().map_err(|e| LlmError::CacheIo {
            path: self.path.clone(),
            source: e,
        })?;
        inner.entries.insert(
            (entry.node_id, entry.prompt_hash, entry.model_name),
            entry.raw_response,
        );
        Ok(())
    }
}

/// Cache-through query: on a hit the transport is never touched.
pub fn query_cached(
    node_id: usize,
    prompt: &str,
    config: &LlmConfig,
    cache: &ResponseCache,
    transport: &dyn Transport,
) -> Result<(String, bool), LlmError> {
    let hash = prompt_hash(prompt);
    if let Some(hit) = cache.get(node_id, &hash, &config.model_name) {
        return Ok((hit, true));
    }
    let raw = query(prompt, config, transport)?;
    cache.insert(node_id, &hash, &config.model_name, &raw)?;
    Ok((raw, false))
}

/// Deterministic offline stand-in for the LLM. Per node, the true class is
/// ranked first with probability `top1_accuracy` (otherwise a uniformly
/// random wrong class is), the remaining ranks are distinct other classes,
/// and the emitted text is "ranked list, blank line, templated explanation"
/// that names the top class and quotes one keyword from the node's own text.
pub struct MockOracle {
    responses: Vec<String>,
    ranked: Vec<Vec<usize>>,
}

/// Builds the full response table for a graph.
pub fn mock_oracle(
    graph: &TextAttributedGraph,
    top1_accuracy: f64,
    k: usize,
    seed: u64,
) -> Result<MockOracle, LlmError> {
    if !(0.0..=1.0).contains(&top1_accuracy) {
        return Err(LlmError::Mock(format!(
            "top1_accuracy {top1_accuracy} outside [0, 1]"
        )));
    }
    let classes = graph.num_classes();
    if k == 0 || k > classes {
        return Err(LlmError::Mock(format!(
            "k = {k} must be in 1..={classes}"
        )));
    }
    let names = graph.label_space().names();
    let mut responses = Vec::with_capacity(graph.num_nodes());
    let mut all_ranked = Vec::with_capacity(graph.num_nodes());
    for node in 0..graph.num_nodes() {
        let mut rng = ChaCha8Rng::seed_from_u64(stage_seed(seed, &format!("mock-node-{node}")));
        let label = graph.labels()[node];
        let first = if label < 0 {
            // Unlabeled nodes have no truth to rank; any class may lead.
            rng.gen_range(0..classes)
        } else if rng.gen::<f64>() < top1_accuracy {
            label as usize
        } else {
            let mut c = rng.gen_range(0..classes - 1);
            if c >= label as usize {
                c += 1;
            }
            c
        };
        let mut rest: Vec<usize> = (0..classes).filter(|&c| c != first).collect();
        // Fisher-Yates prefix shuffle for the remaining k-1 ranks.
        for i in 0..(k - 1).min(rest.len()) {
            let j = rng.gen_range(i..rest.len());
            rest.swap(i, j);
        }
        let mut ranked = vec![first];
        ranked.extend(rest.into_iter().take(k - 1));

        let list = ranked
            .iter()
            .map(|&c| names[c].clone())
            .collect::<Vec<_>>()
            .join(", ");
        let text = graph.text(node);
        let keyword = text
            .title
            .split_whitespace()
            .next()
            .or_else(|| text.abstract_text.split_whitespace().next())
            .unwrap_or("the text");
        let top_name = &names[first];
        responses.push(format!(
            "{list}\n\nThe text most likely concerns {top_name}; terms such as \"{keyword}\" point to {top_name}."
        ));
        all_ranked.push(ranked);
    }
    Ok(MockOracle {
        responses,
        ranked: all_ranked,
    })
}

impl MockOracle {
    pub fn response(&self, node_id: usize) -> &str {
        &self.responses[node_id]
    }

    /// The class the mock ranked first for a node.
    pub fn top1(&self, node_id: usize) -> usize {
        self.ranked[node_id][0]
    }

    /// The full ranked list the mock emitted for a node.
    pub fn ranked(&self, node_id: usize) -> &[usize] {
        &self.ranked[node_id]
    }
}
