//! Zero-shot accuracy per prompt template. Shows the built-in question
//! variants (default, title-first, focus-on-text, chain-of-thought) and
//! sweeps them against the mock oracle.
//!
//! ```bash
//! cargo run --example prompt_sweep
//! ```

use tape::config::ExperimentConfig;
use tape::experiment::run_prompt_sweep;
use tape::graph::save_tag_dataset;
use tape::prompt::builtin_templates;
use tape::synth::make_synthetic_tag;

fn main() {
    println!("built-in templates:");
    for t in builtin_templates() {
        println!(
            "  {:<24} expected_k={} title_first={}",
            t.template_id, t.expected_k, t.title_first
        );
    }

    let base = std::env::temp_dir().join("tape-examples/sweep");
    let data = base.join("data");
    save_tag_dataset(&make_synthetic_tag(300, 4, 0.8, 5, 9).unwrap(), &data).unwrap();

    let mut cfg = ExperimentConfig::default();
    cfg.dataset.dir = data.to_string_lossy().into_owned();
    cfg.run.out_dir = base.join("run").to_string_lossy().into_owned();
    cfg.llm.mock = true;
    cfg.llm.mock_accuracy = 0.735;

    let sweep = run_prompt_sweep(&cfg, None).expect("offline sweep");
    println!("\n{}", sweep.render_table());
}
