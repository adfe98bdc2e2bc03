//! Pipeline orchestration: enrichment, feature building, per-source GNN
//! training, ensembling, ablations and the prompt sweep.
//!
//! Stages are resumable: every artifact is written atomically and every
//! stage checks for existing artifacts before recomputing. All randomness
//! flows from `run.master_seed` (stage-level streams) and `run.seeds` (GNN
//! repetitions) through fixed tags, so reruns reproduce artifacts exactly.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ConfigError, ExperimentConfig};
use crate::ensemble::{accuracy, ensemble_mean, softmax_rows, EvalError, ExperimentReport, SourceStats};
use crate::features::{
    read_feature_matrix, write_feature_matrix, FeatureIoError, FeatureSidecar, FeatureSource,
};
use crate::gnn::{train_gnn, GnnConfig, GnnError};
use crate::graph::{load_tag_dir, save_tag_dataset, split_nodes, DataError, TextAttributedGraph};
use crate::llm::{
    mock_oracle, prompt_hash, query_cached, HttpTransport, LlmConfig, LlmError, MockOracle,
    ResponseCache, Transport,
};
use crate::numeric::{DenseMatrix, NumericError};
use crate::parse::{
    parse_answer, read_enriched, write_enriched, EnrichmentRecord, ParseIoError, ParseSummary,
};
use crate::pred_features::{encode_predictions, PredError, PredFeatureConfig, ProjectionMode};
use crate::prompt::{arxiv_sweep_ids, build_prompt, load_templates, resolve_template, PromptError, PromptTemplate};
use crate::seeds::stage_seed;
use crate::synth::make_synthetic_tag;
use crate::text_encoder::{
    embed_remote, extract_features, fit_tfidf, train_interpreter, EmbedConfig, EncoderError,
    InterpreterHyper, TfidfConfig,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    ParseIo(#[from] ParseIoError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Pred(#[from] PredError),
    #[error(transparent)]
    Gnn(#[from] GnnError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Feature(#[from] FeatureIoError),
    #[error(transparent)]
    Numeric(#[from] NumericError),
    #[error("missing feature source {0:?}; list it in run.sources and rerun build-features")]
    MissingSource(String),
    #[error("unknown template id {0:?}")]
    UnknownTemplate(String),
    #[error("{0}")]
    Invalid(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl PipelineError {
    /// Process exit code: 2 config error, 3 transport error, 4 numeric abort,
    /// 1 anything else.
    pub fn exit_code(&self) -> i32 {
        fn llm_code(e: &LlmError) -> i32 {
            match e {
                LlmError::Transport { .. } | LlmError::Status { .. } => 3,
                _ => 1,
            }
        }
        match self {
            PipelineError::Config(_) | PipelineError::Invalid(_) => 2,
            PipelineError::UnknownTemplate(_) | PipelineError::MissingSource(_) => 2,
            PipelineError::Llm(e) => llm_code(e),
            PipelineError::Encoder(EncoderError::Llm(e)) => llm_code(e),
            PipelineError::Encoder(EncoderError::NonFiniteLoss { .. }) => 4,
            PipelineError::Gnn(GnnError::NonFiniteLoss { .. }) => 4,
            PipelineError::Gnn(GnnError::Numeric(NumericError::NonFinite { .. })) => 4,
            PipelineError::Numeric(NumericError::NonFinite { .. }) => 4,
            _ => 1,
        }
    }
}

// ---------------------------------------------------------------------------
// Artifact paths
// ---------------------------------------------------------------------------

pub fn enriched_path(cfg: &ExperimentConfig, template_id: &str) -> PathBuf {
    cfg.out_dir().join(format!("enriched-{template_id}.jsonl"))
}

pub fn cache_path(cfg: &ExperimentConfig, template_id: &str) -> PathBuf {
    cfg.out_dir()
        .join("cache")
        .join(format!("{}-{template_id}.jsonl", cfg.dataset_name()))
}

pub fn feature_path(cfg: &ExperimentConfig, source: FeatureSource) -> PathBuf {
    cfg.out_dir().join(format!("features-{source}.fm"))
}

pub fn checkpoint_path(cfg: &ExperimentConfig, source: &str, seed: u64) -> PathBuf {
    cfg.out_dir()
        .join("checkpoints")
        .join(format!("{source}-seed{seed}.gnn"))
}

fn io_err(path: &Path, source: std::io::Error) -> PipelineError {
    PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_json(path: &Path, body: &str) -> Result<(), PipelineError> {
    crate::ioutil::write_atomic(path, body.as_bytes()).map_err(|e| io_err(path, e))
}

#[derive(Serialize)]
struct RunManifest<'a> {
    command: &'a str,
    config_hash: String,
    master_seed: u64,
    seeds: &'a [u64],
    dataset_dir: &'a str,
}

fn write_manifest(cfg: &ExperimentConfig, command: &str) -> Result<(), PipelineError> {
    let manifest = RunManifest {
        command,
        config_hash: cfg.hash(),
        master_seed: cfg.run.master_seed,
        seeds: &cfg.run.seeds,
        dataset_dir: &cfg.dataset.dir,
    };
    write_json(
        &cfg.out_dir().join("run_manifest.json"),
        &serde_json::to_string_pretty(&manifest).expect("manifest serializes"),
    )
}

// ---------------------------------------------------------------------------
// Shared resolution helpers
// ---------------------------------------------------------------------------

fn load_graph(cfg: &ExperimentConfig) -> Result<TextAttributedGraph, PipelineError> {
    let mut graph = load_tag_dir(&cfg.dataset_dir())?;
    if graph.splits().is_empty() {
        let [tr, va, te] = cfg.dataset.split_ratios;
        let splits = split_nodes(
            &graph,
            (tr, va, te),
            stage_seed(cfg.run.master_seed, "split"),
        )?;
        graph.set_splits(splits)?;
    }
    Ok(graph)
}

fn extra_templates(cfg: &ExperimentConfig) -> Result<Vec<PromptTemplate>, PipelineError> {
    if cfg.prompt.templates_file.is_empty() {
        return Ok(Vec::new());
    }
    Ok(load_templates(Path::new(&cfg.prompt.templates_file))?)
}

/// The dataset's template: configured id, or a generic question synthesized
/// from the label space when none is set.
fn dataset_template(
    cfg: &ExperimentConfig,
    graph: &TextAttributedGraph,
    extra: &[PromptTemplate],
) -> Result<PromptTemplate, PipelineError> {
    if cfg.prompt.template_id.is_empty() {
        let names = graph.label_space().names().join(", ");
        let question = format!(
            "Which of the following topics does this text belong to: {names}? If multiple \
             options apply, provide a comma-separated list ordered from most to least likely, \
             then explain your reasoning."
        );
        let k = graph.num_classes().min(3);
        return Ok(PromptTemplate::new("generic", &question, k));
    }
    resolve_template(extra, &cfg.prompt.template_id)
        .ok_or_else(|| PipelineError::UnknownTemplate(cfg.prompt.template_id.clone()))
}

fn effective_k(cfg: &ExperimentConfig, template: &PromptTemplate, num_classes: usize) -> usize {
    let k = if cfg.pred.k > 0 {
        cfg.pred.k
    } else {
        template.expected_k
    };
    k.clamp(1, num_classes)
}

fn llm_config(cfg: &ExperimentConfig, template: &PromptTemplate, k: usize) -> LlmConfig {
    let model_name = if cfg.llm.mock {
        // Mock parameters key the cache, so changing the dial invalidates it.
        format!(
            "mock-p{:.4}-k{k}-s{}-{}",
            cfg.llm.mock_accuracy,
            stage_seed(cfg.run.master_seed, &format!("mock-{}", template.template_id)),
            template.template_id
        )
    } else {
        cfg.llm.model_name.clone()
    };
    LlmConfig {
        endpoint_url: cfg.llm.endpoint_url.clone(),
        model_name,
        temperature: cfg.llm.temperature,
        max_output_tokens: cfg.llm.max_output_tokens,
        max_in_flight: cfg.llm.max_in_flight,
        retry_limit: cfg.llm.retry_limit,
        timeout: Duration::from_secs(cfg.llm.timeout_secs),
        retry_base: Duration::from_secs(1),
        api_key_env: cfg.llm.api_key_env.clone(),
    }
}

// ---------------------------------------------------------------------------
// Enrichment
// ---------------------------------------------------------------------------

enum FetchBackend<'a> {
    Mock(MockOracle),
    Http(&'a dyn Transport),
}

/// Fetches one raw response per node through the cache, fanning out over at
/// most `max_in_flight` worker threads.
fn fetch_raw_responses(
    graph: &TextAttributedGraph,
    template: &PromptTemplate,
    llm: &LlmConfig,
    backend: &FetchBackend<'_>,
    cache: &ResponseCache,
) -> Result<(Vec<String>, usize), PipelineError> {
    let n = graph.num_nodes();
    let workers = llm.max_in_flight.max(1).min(n.max(1));
    let next = AtomicUsize::new(0);
    let hits = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<Result<String, LlmError>>>> =
        (0..n).map(|_| Mutex::new(None)).collect();

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let idx = next.fetch_add(1, Ordering::SeqCst);
                if idx >= n {
                    break;
                }
                let prompt = build_prompt(graph.text(idx), template);
                let outcome = match backend {
                    FetchBackend::Mock(oracle) => {
                        let hash = prompt_hash(&prompt);
                        match cache.get(idx, &hash, &llm.model_name) {
                            Some(hit) => {
                                hits.fetch_add(1, Ordering::SeqCst);
                                Ok(hit)
                            }
                            None => {
                                let raw = oracle.response(idx).to_string();
                                cache
                                    .insert(idx, &hash, &llm.model_name, &raw)
                                    .map(|()| raw)
                            }
                        }
                    }
                    FetchBackend::Http(transport) => {
                        query_cached(idx, &prompt, llm, cache, *transport).map(|(raw, hit)| {
                            if hit {
                                hits.fetch_add(1, Ordering::SeqCst);
                            }
                            raw
                        })
                    }
                };
                *slots[idx].lock().expect("slot lock") = Some(outcome);
            });
        }
    });

    let mut raws = Vec::with_capacity(n);
    for slot in slots {
        let outcome = slot
            .into_inner()
            .expect("slot lock")
            .expect("every worker slot filled");
        raws.push(outcome?);
    }
    Ok((raws, hits.load(Ordering::SeqCst)))
}

/// Outcome of one enrichment pass.
pub struct EnrichOutcome {
    pub records: Vec<EnrichmentRecord>,
    pub summary: ParseSummary,
    pub cache_hits: usize,
    pub enriched_path: PathBuf,
}

fn enrich_for_template(
    cfg: &ExperimentConfig,
    graph: &TextAttributedGraph,
    template: &PromptTemplate,
    transport: Option<&dyn Transport>,
) -> Result<EnrichOutcome, PipelineError> {
    let k = effective_k(cfg, template, graph.num_classes());
    let llm = llm_config(cfg, template, k);
    let cache = ResponseCache::open(&cache_path(cfg, &template.template_id), cfg.llm.cache_repair)?;

    let owned_http;
    let backend = if cfg.llm.mock {
        FetchBackend::Mock(mock_oracle(
            graph,
            cfg.llm.mock_accuracy,
            k,
            stage_seed(
                cfg.run.master_seed,
                &format!("mock-{}", template.template_id),
            ),
        )?)
    } else {
        match transport {
            Some(t) => FetchBackend::Http(t),
            None => {
                owned_http = HttpTransport::new(llm.timeout)?;
                FetchBackend::Http(&owned_http)
            }
        }
    };

    let (raws, cache_hits) = fetch_raw_responses(graph, template, &llm, &backend, &cache)?;
    let records: Vec<EnrichmentRecord> = raws
        .iter()
        .enumerate()
        .map(|(node, raw)| parse_answer(node, raw, graph.label_space(), k))
        .collect();
    let summary = ParseSummary::from_records(&records, graph);

    let path = enriched_path(cfg, &template.template_id);
    write_enriched(&path, &records, graph)?;
    Ok(EnrichOutcome {
        records,
        summary,
        cache_hits,
        enriched_path: path,
    })
}

/// The `enrich` stage: builds prompts, queries the (mock or HTTP) LLM
/// through the cache, parses answers, writes the enriched JSONL and a
/// parse-status summary. `transport` overrides the HTTP transport (tests
/// inject counters); mock mode never touches it.
pub fn run_enrich(
    cfg: &ExperimentConfig,
    transport: Option<&dyn Transport>,
) -> Result<EnrichOutcome, PipelineError> {
    cfg.validate()?;
    let graph = load_graph(cfg)?;
    let extra = extra_templates(cfg)?;
    let template = dataset_template(cfg, &graph, &extra)?;
    let outcome = enrich_for_template(cfg, &graph, &template, transport)?;
    write_json(
        &cfg.out_dir().join("enrich_summary.json"),
        &serde_json::to_string_pretty(&outcome.summary).expect("summary serializes"),
    )?;
    write_manifest(cfg, "enrich")?;
    Ok(outcome)
}

/// Loads enriched records for the dataset template, running the enrich stage
/// first if the artifact is missing.
fn ensure_enriched(
    cfg: &ExperimentConfig,
    graph: &TextAttributedGraph,
    transport: Option<&dyn Transport>,
) -> Result<Vec<EnrichmentRecord>, PipelineError> {
    let extra = extra_templates(cfg)?;
    let template = dataset_template(cfg, graph, &extra)?;
    let path = enriched_path(cfg, &template.template_id);
    if path.exists() {
        return Ok(read_enriched(&path, graph)?);
    }
    Ok(enrich_for_template(cfg, graph, &template, transport)?.records)
}

// ---------------------------------------------------------------------------
// Feature building
// ---------------------------------------------------------------------------

fn text_source_features(
    cfg: &ExperimentConfig,
    graph: &TextAttributedGraph,
    corpus: &[String],
    source: FeatureSource,
) -> Result<DenseMatrix, PipelineError> {
    let base = if cfg.encoder.remote_endpoint.is_empty() {
        let tf_cfg = TfidfConfig {
            max_features: cfg.encoder.max_features,
            min_df: cfg.encoder.min_df,
            min_token_len: cfg.encoder.min_token_len,
            dim: cfg.encoder.dim,
            seed: stage_seed(cfg.run.master_seed, &format!("tfidf-{source}")),
        };
        fit_tfidf(corpus, &tf_cfg)?.encode_corpus(corpus)
    } else {
        let embed_cfg = EmbedConfig {
            endpoint_url: cfg.encoder.remote_endpoint.clone(),
            model_name: cfg.encoder.remote_model.clone(),
            api_key_env: cfg.llm.api_key_env.clone(),
            batch_size: 64,
        };
        let transport = HttpTransport::new(Duration::from_secs(cfg.llm.timeout_secs))?;
        let cache = cfg
            .out_dir()
            .join("cache")
            .join(format!("embed-{source}.jsonl"));
        embed_remote(corpus, &embed_cfg, &transport, Some(&cache))?
    };
    let hyper = InterpreterHyper {
        hidden_dim: cfg.encoder.hidden_dim,
        learning_rate: cfg.encoder.learning_rate,
        epochs: cfg.encoder.epochs,
        patience: cfg.encoder.patience,
        seed: stage_seed(cfg.run.master_seed, &format!("interp-{source}")),
    };
    let splits = graph.splits();
    let (mlp, _history) = train_interpreter(
        &base,
        graph.labels(),
        &splits.train,
        &splits.val,
        &hyper,
    )?;
    Ok(extract_features(&mlp, &base)?)
}

fn build_one_feature(
    cfg: &ExperimentConfig,
    graph: &TextAttributedGraph,
    records: &[EnrichmentRecord],
    source: FeatureSource,
) -> Result<DenseMatrix, PipelineError> {
    match source {
        FeatureSource::Orig => {
            let corpus: Vec<String> = graph.texts().iter().map(|t| t.combined()).collect();
            text_source_features(cfg, graph, &corpus, source)
        }
        FeatureSource::Expl => {
            let mut corpus = vec![String::new(); graph.num_nodes()];
            for r in records {
                corpus[r.node_id] = r.explanation.clone();
            }
            text_source_features(cfg, graph, &corpus, source)
        }
        FeatureSource::Pred => {
            let extra = extra_templates(cfg)?;
            let template = dataset_template(cfg, graph, &extra)?;
            let k = effective_k(cfg, &template, graph.num_classes());
            let width = k * (graph.num_classes() + 1);
            let pred_cfg = PredFeatureConfig {
                k,
                num_classes: graph.num_classes(),
                d_p: match cfg.pred.projection {
                    ProjectionMode::Identity => width,
                    ProjectionMode::Seeded => cfg.pred.d_p,
                },
                seed: stage_seed(cfg.run.master_seed, "pred"),
                projection: cfg.pred.projection,
            };
            Ok(encode_predictions(records, graph.num_nodes(), &pred_cfg)?)
        }
    }
}

/// Builds and writes the requested feature files. Enrichment records are
/// fetched only when the explanation or prediction features ask for them,
/// so original-text runs never touch the LLM. The two interpreter trainings
/// run on separate threads.
fn build_and_write_features(
    cfg: &ExperimentConfig,
    graph: &TextAttributedGraph,
    sources: &[FeatureSource],
    transport: Option<&dyn Transport>,
) -> Result<BTreeMap<FeatureSource, PathBuf>, PipelineError> {
    let needs_records = sources
        .iter()
        .any(|s| matches!(s, FeatureSource::Expl | FeatureSource::Pred));
    let records = if needs_records {
        ensure_enriched(cfg, graph, transport)?
    } else {
        Vec::new()
    };

    let text_sources: Vec<FeatureSource> = sources
        .iter()
        .copied()
        .filter(|s| matches!(s, FeatureSource::Orig | FeatureSource::Expl))
        .collect();
    let mut built: Vec<(FeatureSource, DenseMatrix)> = std::thread::scope(|scope| {
        let handles: Vec<_> = text_sources
            .iter()
            .map(|&source| {
                let records = &records;
                scope.spawn(move || {
                    build_one_feature(cfg, graph, records, source).map(|m| (source, m))
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("feature thread"))
            .collect::<Result<_, _>>()
    })?;
    if sources.contains(&FeatureSource::Pred) {
        built.push((
            FeatureSource::Pred,
            build_one_feature(cfg, graph, &records, FeatureSource::Pred)?,
        ));
    }

    let mut paths = BTreeMap::new();
    for (source, matrix) in built {
        let path = feature_path(cfg, source);
        let sidecar = FeatureSidecar {
            source,
            seed: cfg.run.master_seed,
            config_hash: cfg.hash(),
        };
        write_feature_matrix(&path, &matrix, &sidecar)?;
        paths.insert(source, path);
    }
    Ok(paths)
}

/// The `build-features` stage: fits encoders, trains the two interpreters,
/// encodes predictions, and writes all three feature files.
pub fn run_build_features(
    cfg: &ExperimentConfig,
    transport: Option<&dyn Transport>,
) -> Result<BTreeMap<FeatureSource, PathBuf>, PipelineError> {
    cfg.validate()?;
    let graph = load_graph(cfg)?;
    let paths = build_and_write_features(cfg, &graph, &FeatureSource::ALL, transport)?;
    write_manifest(cfg, "build-features")?;
    Ok(paths)
}

/// Loads the requested feature matrices, building any that are missing.
fn ensure_features(
    cfg: &ExperimentConfig,
    graph: &TextAttributedGraph,
    sources: &[String],
    transport: Option<&dyn Transport>,
) -> Result<BTreeMap<String, DenseMatrix>, PipelineError> {
    let wanted: Vec<FeatureSource> = sources
        .iter()
        .map(|s| s.parse::<FeatureSource>())
        .collect::<Result<_, _>>()?;
    let missing: Vec<FeatureSource> = wanted
        .iter()
        .copied()
        .filter(|s| !feature_path(cfg, *s).exists())
        .collect();
    if !missing.is_empty() {
        build_and_write_features(cfg, graph, &missing, transport)?;
    }
    let mut out = BTreeMap::new();
    for source in wanted {
        let path = feature_path(cfg, source);
        if !path.exists() {
            return Err(PipelineError::MissingSource(source.to_string()));
        }
        let (matrix, _sidecar) = read_feature_matrix(&path)?;
        if matrix.rows() != graph.num_nodes() {
            return Err(PipelineError::Invalid(format!(
                "{} has {} rows but the graph has {} nodes; rebuild features",
                path.display(),
                matrix.rows(),
                graph.num_nodes()
            )));
        }
        out.insert(source.to_string(), matrix);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Training and evaluation
// ---------------------------------------------------------------------------

struct Prepared {
    graph: TextAttributedGraph,
    /// Eval logits per (seed index, source).
    trial_logits: Vec<BTreeMap<String, DenseMatrix>>,
    source_stats: BTreeMap<String, SourceStats>,
    timings: BTreeMap<String, f64>,
}

fn train_trials(
    cfg: &ExperimentConfig,
    transport: Option<&dyn Transport>,
    save_checkpoints: bool,
) -> Result<Prepared, PipelineError> {
    cfg.validate()?;
    let mut timings = BTreeMap::new();

    let t0 = Instant::now();
    let graph = load_graph(cfg)?;
    let features = ensure_features(cfg, &graph, &cfg.run.sources, transport)?;
    timings.insert("prepare_features".to_string(), t0.elapsed().as_secs_f64());

    let t1 = Instant::now();
    let mut trial_logits = Vec::with_capacity(cfg.run.seeds.len());
    let mut source_stats: BTreeMap<String, SourceStats> = BTreeMap::new();
    for &seed in &cfg.run.seeds {
        // The per-source trainings share the immutable graph and features and
        // own disjoint state, so they run on separate threads.
        type TrainOut = Result<(String, DenseMatrix, f64, f64), PipelineError>;
        let outputs: Vec<TrainOut> = std::thread::scope(|scope| {
            let handles: Vec<_> = cfg
                .run
                .sources
                .iter()
                .map(|source| {
                    let feat = &features[source];
                    let graph = &graph;
                    scope.spawn(move || -> TrainOut {
                        let gnn_cfg = GnnConfig {
                            arch: cfg.gnn.arch,
                            num_layers: cfg.gnn.num_layers,
                            hidden_dim: cfg.gnn.hidden_dim,
                            dropout: cfg.gnn.dropout,
                            learning_rate: cfg.gnn.learning_rate,
                            max_epochs: cfg.gnn.max_epochs,
                            patience: cfg.gnn.patience,
                            seed: stage_seed(seed, source),
                        };
                        let (model, history) = train_gnn(feat, graph, &gnn_cfg)?;
                        let logits = model.predict(feat)?;
                        let splits = graph.splits();
                        let val = accuracy(&logits, graph.labels(), &splits.val)?;
                        let test = accuracy(&logits, graph.labels(), &splits.test)?;
                        if save_checkpoints {
                            let mut metrics = BTreeMap::new();
                            metrics.insert("best_val_acc".to_string(), history.best_val_acc);
                            metrics.insert("val_acc".to_string(), val);
                            metrics.insert("test_acc".to_string(), test);
                            model.save(&checkpoint_path(cfg, source, seed), &metrics)?;
                        }
                        Ok((source.clone(), logits, val, test))
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("training thread"))
                .collect()
        });

        let mut per_source = BTreeMap::new();
        for out in outputs {
            let (source, logits, val, test) = out?;
            source_stats.entry(source.clone()).or_default().push(val, test);
            per_source.insert(source, logits);
        }
        trial_logits.push(per_source);
    }
    timings.insert("train".to_string(), t1.elapsed().as_secs_f64());

    Ok(Prepared {
        graph,
        trial_logits,
        source_stats,
        timings,
    })
}

fn report_for_subset(
    cfg: &ExperimentConfig,
    prepared: &Prepared,
    subset: &[String],
) -> Result<ExperimentReport, PipelineError> {
    let splits = prepared.graph.splits();
    let labels = prepared.graph.labels();
    let mut ensemble = SourceStats::default();
    for per_source in &prepared.trial_logits {
        let mut members: Vec<DenseMatrix> = Vec::with_capacity(subset.len());
        for source in subset {
            let logits = per_source
                .get(source)
                .ok_or_else(|| PipelineError::MissingSource(source.clone()))?;
            members.push(match cfg.run.ensemble.as_str() {
                "probs" => softmax_rows(logits),
                _ => logits.clone(),
            });
        }
        let mean = ensemble_mean(&members)?;
        ensemble.push(
            accuracy(&mean, labels, &splits.val)?,
            accuracy(&mean, labels, &splits.test)?,
        );
    }
    Ok(ExperimentReport {
        sources: prepared
            .source_stats
            .iter()
            .filter(|(name, _)| subset.contains(name))
            .map(|(name, stats)| (name.clone(), stats.clone()))
            .collect(),
        ensemble,
        seeds: cfg.run.seeds.clone(),
        config_hash: cfg.hash(),
        timings: prepared.timings.clone(),
    })
}

/// Trains one GNN per configured source, evaluates each source and their
/// ensemble on val and test for every seed, and aggregates mean and sample
/// standard deviation across seeds.
pub fn run_tape_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport, PipelineError> {
    run_tape_experiment_with(cfg, None)
}

pub fn run_tape_experiment_with(
    cfg: &ExperimentConfig,
    transport: Option<&dyn Transport>,
) -> Result<ExperimentReport, PipelineError> {
    let prepared = train_trials(cfg, transport, true)?;
    report_for_subset(cfg, &prepared, &cfg.run.sources)
}

/// The `train` stage: runs the experiment, writes `report.json`, and returns
/// the report.
pub fn run_train_eval(cfg: &ExperimentConfig) -> Result<ExperimentReport, PipelineError> {
    let report = run_tape_experiment(cfg)?;
    write_json(&cfg.out_dir().join("report.json"), &report.to_json())?;
    write_manifest(cfg, "train")?;
    Ok(report)
}

// ---------------------------------------------------------------------------
// Ablation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationRow {
    pub left_out: Vec<String>,
    pub report: ExperimentReport,
    /// Ensemble test-mean delta versus the full run.
    pub delta_ensemble_test: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationReport {
    pub full: ExperimentReport,
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<12} {:>14} {:>14} {:>8}\n",
            "sources", "val", "test", "delta"
        ));
        let line = |name: &str, r: &ExperimentReport, delta: Option<f64>| {
            format!(
                "{name:<12} {:>7.4}±{:.4} {:>7.4}±{:.4} {:>8}\n",
                r.ensemble.val_mean(),
                r.ensemble.val_std(),
                r.ensemble.test_mean(),
                r.ensemble.test_std(),
                delta.map_or("-".to_string(), |d| format!("{d:+.4}")),
            )
        };
        out.push_str(&line("full", &self.full, None));
        for row in &self.rows {
            let name = format!("-{}", row.left_out.join(",-"));
            out.push_str(&line(&name, &row.report, Some(row.delta_ensemble_test)));
        }
        out
    }
}

/// Leave-out experiment: identical trainings (the per-source seeds do not
/// depend on the source set), ensembled over the complement of `leave_out`.
pub fn ablation_sweep(
    cfg: &ExperimentConfig,
    leave_out: &[String],
) -> Result<AblationReport, PipelineError> {
    let prepared = train_trials(cfg, None, false)?;
    let full = report_for_subset(cfg, &prepared, &cfg.run.sources)?;
    let complement: Vec<String> = cfg
        .run
        .sources
        .iter()
        .filter(|s| !leave_out.contains(s))
        .cloned()
        .collect();
    if complement.is_empty() {
        return Err(PipelineError::Invalid(
            "ablation cannot leave out every source".into(),
        ));
    }
    let report = report_for_subset(cfg, &prepared, &complement)?;
    let delta = report.ensemble.test_mean() - full.ensemble.test_mean();
    Ok(AblationReport {
        full,
        rows: vec![AblationRow {
            left_out: leave_out.to_vec(),
            report,
            delta_ensemble_test: delta,
        }],
    })
}

/// The `ablate` stage: full run plus one leave-one-out row per source,
/// written to `ablation.json`.
pub fn run_ablate(cfg: &ExperimentConfig) -> Result<AblationReport, PipelineError> {
    let prepared = train_trials(cfg, None, false)?;
    let full = report_for_subset(cfg, &prepared, &cfg.run.sources)?;
    let mut rows = Vec::new();
    for source in &cfg.run.sources {
        let complement: Vec<String> = cfg
            .run
            .sources
            .iter()
            .filter(|s| *s != source)
            .cloned()
            .collect();
        if complement.is_empty() {
            return Err(PipelineError::Invalid(
                "ablation needs at least two sources".into(),
            ));
        }
        let report = report_for_subset(cfg, &prepared, &complement)?;
        let delta = report.ensemble.test_mean() - full.ensemble.test_mean();
        rows.push(AblationRow {
            left_out: vec![source.clone()],
            report,
            delta_ensemble_test: delta,
        });
    }
    let ablation = AblationReport { full, rows };
    write_json(
        &cfg.out_dir().join("ablation.json"),
        &serde_json::to_string_pretty(&ablation).expect("ablation serializes"),
    )?;
    write_manifest(cfg, "ablate")?;
    Ok(ablation)
}

// ---------------------------------------------------------------------------
// Prompt sweep
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRow {
    pub template_id: String,
    pub top1_accuracy: f64,
    pub fallback_rate: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
}

impl SweepReport {
    pub fn render_table(&self) -> String {
        let mut out = format!("{:<28} {:>9} {:>9}\n", "template", "top-1", "fallback");
        for row in &self.rows {
            out.push_str(&format!(
                "{:<28} {:>9.4} {:>9.4}\n",
                row.template_id, row.top1_accuracy, row.fallback_rate
            ));
        }
        out
    }
}

/// The `prompt-sweep` stage: zero-shot top-1 accuracy of the parsed answers
/// per prompt template, over all labeled nodes, against mock or cached
/// transcripts.
pub fn run_prompt_sweep(
    cfg: &ExperimentConfig,
    transport: Option<&dyn Transport>,
) -> Result<SweepReport, PipelineError> {
    cfg.validate()?;
    let graph = load_graph(cfg)?;
    let extra = extra_templates(cfg)?;
    let ids = if cfg.prompt.sweep_template_ids.is_empty() {
        arxiv_sweep_ids()
    } else {
        cfg.prompt.sweep_template_ids.clone()
    };
    let labeled = graph.labeled_nodes();
    let mut rows = Vec::with_capacity(ids.len());
    for id in &ids {
        let template = resolve_template(&extra, id)
            .ok_or_else(|| PipelineError::UnknownTemplate(id.clone()))?;
        let outcome = enrich_for_template(cfg, &graph, &template, transport)?;
        let correct = labeled
            .iter()
            .filter(|&&n| {
                outcome.records[n]
                    .ranked
                    .first()
                    .is_some_and(|&c| c as i64 == graph.labels()[n])
            })
            .count();
        rows.push(SweepRow {
            template_id: id.clone(),
            top1_accuracy: correct as f64 / labeled.len().max(1) as f64,
            fallback_rate: outcome.summary.fallback_rate(),
        });
    }
    let report = SweepReport { rows };
    write_json(
        &cfg.out_dir().join("prompt_sweep.json"),
        &serde_json::to_string_pretty(&report).expect("sweep serializes"),
    )?;
    write_manifest(cfg, "prompt-sweep")?;
    Ok(report)
}

// ---------------------------------------------------------------------------
// Synthetic dataset generation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct SynthArgs {
    pub nodes: usize,
    pub classes: usize,
    pub homophily: f64,
    pub keywords_per_class: usize,
    pub seed: u64,
    pub out: PathBuf,
}

/// The `make-synthetic` stage: generates and saves a dataset directory
/// loadable by the standard loader.
pub fn run_make_synthetic(args: &SynthArgs) -> Result<PathBuf, PipelineError> {
    let graph = make_synthetic_tag(
        args.nodes,
        args.classes,
        args.homophily,
        args.keywords_per_class,
        args.seed,
    )?;
    save_tag_dataset(&graph, &args.out)?;
    Ok(args.out.clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base_cfg(dir: &Path, out: &Path) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        cfg.dataset.dir = dir.to_string_lossy().into_owned();
        cfg.run.out_dir = out.to_string_lossy().into_owned();
        cfg.llm.mock = true;
        cfg
    }

    #[test]
    fn effective_k_resolution() {
        let mut cfg = ExperimentConfig::default();
        let template = PromptTemplate::new("x", "q", 5);
        assert_eq!(effective_k(&cfg, &template, 40), 5);
        assert_eq!(effective_k(&cfg, &template, 3), 3);
        cfg.pred.k = 2;
        assert_eq!(effective_k(&cfg, &template, 40), 2);
    }

    #[test]
    fn generic_template_lists_class_names() {
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("data");
        run_make_synthetic(&SynthArgs {
            nodes: 30,
            classes: 3,
            homophily: 0.6,
            keywords_per_class: 3,
            seed: 1,
            out: data.clone(),
        })
        .unwrap();
        let cfg = base_cfg(&data, &dir.path().join("out"));
        let graph = load_graph(&cfg).unwrap();
        let template = dataset_template(&cfg, &graph, &[]).unwrap();
        assert!(template.question_text.contains("alpha"));
        assert_eq!(template.expected_k, 3);
    }

    #[test]
    fn exit_codes_classify_errors() {
        let transport = PipelineError::Llm(LlmError::Transport {
            attempts: 2,
            message: "x".into(),
        });
        assert_eq!(transport.exit_code(), 3);
        let config = PipelineError::Config(ConfigError::Invalid("x".into()));
        assert_eq!(config.exit_code(), 2);
        let numeric = PipelineError::Gnn(GnnError::NonFiniteLoss {
            epoch: 3,
            learning_rate: 0.1,
        });
        assert_eq!(numeric.exit_code(), 4);
        let other = PipelineError::Invalid("y".into());
        assert_eq!(other.exit_code(), 2);
    }
}
