//! Enrich every node with the deterministic mock oracle: build prompts,
//! fetch ranked predictions and explanations, parse them, and report the
//! parse-status summary.
//!
//! ```bash
//! cargo run --example enrich_mock
//! ```

use tape::config::ExperimentConfig;
use tape::experiment::run_enrich;
use tape::graph::save_tag_dataset;
use tape::llm::mock_oracle;
use tape::prompt::{build_prompt, PromptTemplate};
use tape::synth::make_synthetic_tag;

fn main() {
    let base = std::env::temp_dir().join("tape-examples/enrich");
    let data = base.join("data");
    let graph = make_synthetic_tag(300, 4, 0.8, 5, 7).expect("valid parameters");
    save_tag_dataset(&graph, &data).expect("writable temp dir");

    // What one prompt/answer pair looks like before the pipeline runs.
    let template = PromptTemplate::new(
        "demo",
        "Which of the following topics does this text belong to: alpha, beta, gamma, delta?",
        3,
    );
    println!("--- prompt for node 0 ---");
    println!("{}", build_prompt(graph.text(0), &template));
    let oracle = mock_oracle(&graph, 0.735, 3, 42).expect("valid dial");
    println!("\n--- mock answer for node 0 ---");
    println!("{}", oracle.response(0));

    let mut cfg = ExperimentConfig::default();
    cfg.dataset.dir = data.to_string_lossy().into_owned();
    cfg.run.out_dir = base.join("run").to_string_lossy().into_owned();
    cfg.llm.mock = true;
    cfg.llm.mock_accuracy = 0.735;

    let outcome = run_enrich(&cfg, None).expect("mock enrichment is offline");
    println!("\nenriched {} nodes -> {}", outcome.records.len(), outcome.enriched_path.display());
    println!(
        "parse summary: {} full / {} partial / {} fallback (fallback rate {:.4})",
        outcome.summary.full,
        outcome.summary.partial,
        outcome.summary.fallback,
        outcome.summary.fallback_rate()
    );

    // A rerun is served entirely from the response cache.
    let again = run_enrich(&cfg, None).expect("rerun");
    println!("rerun cache hits: {}/{}", again.cache_hits, again.records.len());
}
