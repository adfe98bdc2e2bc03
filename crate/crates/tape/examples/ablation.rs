//! Leave-one-out ablation: how much each feature family contributes to the
//! ensemble.
//!
//! ```bash
//! cargo run --release --example ablation
//! ```

use tape::config::ExperimentConfig;
use tape::experiment::run_ablate;
use tape::graph::save_tag_dataset;
use tape::synth::make_synthetic_tag;

fn main() {
    let base = std::env::temp_dir().join("tape-examples/ablation");
    let data = base.join("data");
    save_tag_dataset(&make_synthetic_tag(400, 4, 0.8, 5, 3).unwrap(), &data).unwrap();

    let mut cfg = ExperimentConfig::default();
    cfg.dataset.dir = data.to_string_lossy().into_owned();
    cfg.run.out_dir = base.join("run").to_string_lossy().into_owned();
    cfg.llm.mock = true;
    cfg.run.seeds = vec![0, 1];
    cfg.encoder.dim = 32;
    cfg.encoder.hidden_dim = 32;
    cfg.encoder.min_df = 2;
    cfg.gnn.hidden_dim = 32;
    cfg.gnn.max_epochs = 200;
    cfg.gnn.patience = 20;
    cfg.pred.d_p = 32;

    let ablation = run_ablate(&cfg).expect("offline ablation");
    print!("{}", ablation.render_table());
}
