//! The full experiment: enrich (mock), build features, train one GNN per
//! source over four seeds, and ensemble their logits by averaging.
//!
//! ```bash
//! cargo run --release --example train_ensemble
//! ```

use tape::config::ExperimentConfig;
use tape::experiment::run_train_eval;
use tape::graph::save_tag_dataset;
use tape::synth::make_synthetic_tag;

fn main() {
    let base = std::env::temp_dir().join("tape-examples/train");
    let data = base.join("data");
    save_tag_dataset(&make_synthetic_tag(600, 4, 0.8, 6, 2).unwrap(), &data).unwrap();

    let mut cfg = ExperimentConfig::default();
    cfg.dataset.dir = data.to_string_lossy().into_owned();
    cfg.run.out_dir = base.join("run").to_string_lossy().into_owned();
    cfg.llm.mock = true;
    cfg.llm.mock_accuracy = 0.735;
    cfg.run.seeds = vec![0, 1, 2, 3];
    cfg.encoder.dim = 64;
    cfg.encoder.hidden_dim = 64;
    cfg.encoder.min_df = 2;
    cfg.gnn.hidden_dim = 64;
    cfg.gnn.max_epochs = 300;
    cfg.gnn.patience = 30;
    cfg.pred.d_p = 64;

    let report = run_train_eval(&cfg).expect("offline experiment");
    print!("{}", report.render_table());
    println!(
        "\nensemble gain over original text alone: {:+.4}",
        report.ensemble.test_mean() - report.sources["orig"].test_mean()
    );
    println!("timings: {:?}", report.timings);
    println!("report at {}/report.json", cfg.run.out_dir);
}
