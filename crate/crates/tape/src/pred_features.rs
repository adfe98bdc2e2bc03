//! Ranked-prediction features: each node's top-k class list is one-hot
//! encoded per rank, concatenated, and linearly mapped to a fixed dimension.
//!
//! One-hot blocks are C+1 wide: the extra slot is a dedicated "absent" class
//! for ranks the answer did not fill (short lists, fallback parses), which
//! keeps "no prediction" distinguishable from any real class. The linear map
//! is a frozen seeded Gaussian by default; identity mode passes the raw
//! concatenation through so a downstream model's first layer can learn the
//! encoding instead.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numeric::{gaussian, DenseMatrix};
use crate::parse::{pad_ranked, EnrichmentRecord, PadStrategy};

#[derive(Debug, Error)]
pub enum PredError {
    #[error("ranked list has {found} entries, expected exactly k = {k}")]
    WrongLength { k: usize, found: usize },
    #[error("class index {index} out of range (absent slot is {absent})")]
    IndexOutOfRange { index: usize, absent: usize },
    #[error("identity projection needs d_p = k(C+1) = {expected}, got {found}")]
    IdentityDimension { expected: usize, found: usize },
    #[error("record for node {node} out of range for {num_nodes} nodes")]
    NodeOutOfRange { node: usize, num_nodes: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProjectionMode {
    /// Frozen seeded Gaussian map, entries N(0, 1/d_p).
    Seeded,
    /// Pass the raw one-hot concatenation through (d_p must equal k(C+1)).
    Identity,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PredFeatureConfig {
    pub k: usize,
    pub num_classes: usize,
    pub d_p: usize,
    pub seed: u64,
    pub projection: ProjectionMode,
}

impl PredFeatureConfig {
    pub fn new(k: usize, num_classes: usize, d_p: usize, seed: u64) -> Self {
        Self {
            k,
            num_classes,
            d_p,
            seed,
            projection: ProjectionMode::Seeded,
        }
    }

    /// The reserved index for an unfilled rank: exactly C.
    pub fn absent_index(&self) -> usize {
        self.num_classes
    }

    /// Width of the concatenated one-hot vector: k(C+1).
    pub fn one_hot_width(&self) -> usize {
        self.k * (self.num_classes + 1)
    }
}

/// One-hot encodes a padded ranked list: position j(C+1) + ranked[j] is 1.
pub fn one_hot_concat(
    ranked_padded: &[usize],
    config: &PredFeatureConfig,
) -> Result<Vec<f32>, PredError> {
    if ranked_padded.len() != config.k {
        return Err(PredError::WrongLength {
            k: config.k,
            found: ranked_padded.len(),
        });
    }
    let block = config.num_classes + 1;
    let mut out = vec![0.0f32; config.one_hot_width()];
    for (rank, &class) in ranked_padded.iter().enumerate() {
        if class > config.absent_index() {
            return Err(PredError::IndexOutOfRange {
                index: class,
                absent: config.absent_index(),
            });
        }
        out[rank * block + class] = 1.0;
    }
    Ok(out)
}

/// The frozen linear map, d_p x k(C+1).
pub fn prediction_projection(config: &PredFeatureConfig) -> Result<DenseMatrix, PredError> {
    let width = config.one_hot_width();
    match config.projection {
        ProjectionMode::Seeded => Ok(gaussian(
            config.d_p,
            width,
            1.0 / (config.d_p as f64).sqrt(),
            config.seed,
        )),
        ProjectionMode::Identity => {
            if config.d_p != width {
                return Err(PredError::IdentityDimension {
                    expected: width,
                    found: config.d_p,
                });
            }
            let mut m = DenseMatrix::zeros(width, width);
            for i in 0..width {
                m.set(i, i, 1.0);
            }
            Ok(m)
        }
    }
}

/// Builds the N x d_p prediction feature matrix. Nodes without a record get
/// the all-absent padding. Row i is the sum of the projection columns picked
/// by the one-hot concatenation (accumulated in rank order).
pub fn encode_predictions(
    records: &[EnrichmentRecord],
    num_nodes: usize,
    config: &PredFeatureConfig,
) -> Result<DenseMatrix, PredError> {
    let mut by_node: Vec<Option<&EnrichmentRecord>> = vec![None; num_nodes];
    for r in records {
        if r.node_id >= num_nodes {
            return Err(PredError::NodeOutOfRange {
                node: r.node_id,
                num_nodes,
            });
        }
        by_node[r.node_id] = Some(r);
    }
    let projection = prediction_projection(config)?;
    let block = config.num_classes + 1;
    let absent = PadStrategy::Absent {
        index: config.absent_index(),
    };
    let empty = EnrichmentRecord {
        node_id: 0,
        ranked: Vec::new(),
        explanation: String::new(),
        parse_status: crate::parse::ParseStatus::Fallback,
    };

    let mut out = DenseMatrix::zeros(num_nodes, config.d_p);
    for (node, slot) in by_node.iter().enumerate() {
        let record = slot.unwrap_or(&empty);
        let padded = pad_ranked(record, config.k, absent);
        let row = out.row_mut(node);
        for (rank, &class) in padded.iter().enumerate() {
            if class > config.num_classes {
                return Err(PredError::IndexOutOfRange {
                    index: class,
                    absent: config.num_classes,
                });
            }
            let col = rank * block + class;
            for (j, v) in row.iter_mut().enumerate() {
                *v += projection.get(j, col);
            }
        }
    }
    Ok(out)
}
