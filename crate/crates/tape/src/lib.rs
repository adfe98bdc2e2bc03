//! Node classification on text-attributed graphs with LLM-enriched features.
//!
//! The pipeline has three stages. First, every node's title and abstract are
//! wrapped in a dataset-specific prompt and sent to a chat-completion LLM
//! (or a deterministic offline mock), which answers with a ranked list of
//! class guesses and a free-text explanation. Second, the original text, the
//! explanation text, and the ranked predictions are turned into three frozen
//! feature matrices: the two text sources go through a TF-IDF encoder plus a
//! small supervised MLP whose hidden layer becomes the feature, and the
//! ranked lists are one-hot encoded and linearly projected. Third, one GNN
//! (GCN or GraphSAGE) is trained per feature family and their logits are
//! averaged into the final prediction.
//!
//! Start with the runnable examples (`cargo run --example train_ensemble`)
//! or the `tape` binary, whose subcommands map one-to-one onto the stages:
//! `make-synthetic`, `enrich`, `build-features`, `train`, `ablate`,
//! `prompt-sweep`.

pub mod cli;
pub mod config;
pub mod ensemble;
pub mod experiment;
pub mod features;
pub mod gnn;
pub mod graph;
mod ioutil;
pub mod llm;
pub mod numeric;
pub mod parse;
pub mod pred_features;
pub mod prompt;
pub mod seeds;
pub mod synth;
pub mod text_encoder;

pub use config::ExperimentConfig;
pub use ensemble::{accuracy, ensemble_mean, ExperimentReport};
pub use experiment::{run_tape_experiment, PipelineError};
pub use graph::{
    load_tag_dataset, load_tag_dir, save_tag_dataset, split_nodes, DataError, LabelSpace,
    NodeText, SplitMask, TextAttributedGraph,
};
pub use numeric::{DenseMatrix, NumericError, SparseCsr};
pub use synth::make_synthetic_tag;
