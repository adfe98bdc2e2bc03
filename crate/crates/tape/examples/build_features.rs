//! Build the three frozen feature matrices (original text, explanations,
//! ranked predictions) and inspect the written artifacts.
//!
//! ```bash
//! cargo run --example build_features
//! ```

use tape::config::ExperimentConfig;
use tape::experiment::run_build_features;
use tape::features::read_feature_matrix;
use tape::graph::save_tag_dataset;
use tape::synth::make_synthetic_tag;

fn main() {
    let base = std::env::temp_dir().join("tape-examples/features");
    let data = base.join("data");
    save_tag_dataset(&make_synthetic_tag(300, 4, 0.8, 5, 7).unwrap(), &data).unwrap();

    let mut cfg = ExperimentConfig::default();
    cfg.dataset.dir = data.to_string_lossy().into_owned();
    cfg.run.out_dir = base.join("run").to_string_lossy().into_owned();
    cfg.llm.mock = true;
    cfg.encoder.dim = 64;
    cfg.encoder.hidden_dim = 64;
    cfg.encoder.min_df = 2;
    cfg.pred.d_p = 64;

    let paths = run_build_features(&cfg, None).expect("offline build");
    for (source, path) in paths {
        let (matrix, sidecar) = read_feature_matrix(&path).expect("readable");
        println!(
            "{source}: {} x {} at {} (sidecar: {:?})",
            matrix.rows(),
            matrix.cols(),
            path.display(),
            sidecar.map(|s| s.config_hash)
        );
    }
}
