//! GCN and GraphSAGE over frozen node features.
//!
//! GCN uses the symmetric normalization A_hat = D^-1/2 (A + I) D^-1/2 with
//! no bias terms; a layer computes relu(A_hat H W) with dropout on its input
//! at train time and no relu after the final layer. SAGE uses mean
//! aggregation (row-normalized A without self-loop injection) with separate
//! self and neighbor weights and a bias on the self path:
//! relu(H W_self + b + A_bar H W_nbr).
//!
//! Training is full batch with Adam, tracking validation accuracy per epoch
//! and restoring the best-validation weights after `patience` stale epochs.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ensemble::accuracy;
use crate::graph::TextAttributedGraph;
use crate::ioutil::write_atomic;
use crate::numeric::{
    adam_step, dropout_key, glorot_uniform, AdamConfig, AdamState, DenseMatrix, NodeId,
    NumericError, ParamId, Params, SparseCsr, Tape,
};
use crate::seeds::stage_seed;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"TAPEGNN1";

#[derive(Debug, Error)]
pub enum GnnError {
    #[error("adjacency must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("adjacency must be symmetric")]
    NotSymmetric,
    #[error("graph has no {0} split; compute splits first")]
    MissingSplit(&'static str),
    #[error("non-finite loss at epoch {epoch} (learning rate {learning_rate})")]
    NonFiniteLoss { epoch: usize, learning_rate: f32 },
    #[error("feature matrix has {found} columns, model expects {expected}")]
    InputDim { expected: usize, found: usize },
    #[error(transparent)]
    Numeric(#[from] NumericError),
    #[error(transparent)]
    Eval(#[from] crate::ensemble::EvalError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("checkpoint {path}: {msg}")]
    BadCheckpoint { path: PathBuf, msg: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GnnArch {
    Gcn,
    Sage,
}

impl fmt::Display for GnnArch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GnnArch::Gcn => "gcn",
            GnnArch::Sage => "sage",
        })
    }
}

impl FromStr for GnnArch {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "gcn" => Ok(GnnArch::Gcn),
            "sage" => Ok(GnnArch::Sage),
            other => Err(format!("unknown GNN architecture {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GnnConfig {
    pub arch: GnnArch,
    pub num_layers: usize,
    pub hidden_dim: usize,
    pub dropout: f32,
    pub learning_rate: f32,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
}

impl Default for GnnConfig {
    fn default() -> Self {
        Self {
            arch: GnnArch::Gcn,
            num_layers: 3,
            hidden_dim: 256,
            dropout: 0.5,
            learning_rate: 0.01,
            max_epochs: 1000,
            patience: 50,
            seed: 0,
        }
    }
}

/// Architecture-specific adjacency normalization. Requires a square,
/// symmetric input.
pub fn normalize_adjacency(a: &SparseCsr, arch: GnnArch) -> Result<SparseCsr, GnnError> {
    if a.rows() != a.cols() {
        return Err(GnnError::NotSquare {
            rows: a.rows(),
            cols: a.cols(),
        });
    }
    if !a.is_symmetric() {
        return Err(GnnError::NotSymmetric);
    }
    let n = a.rows();
    match arch {
        GnnArch::Gcn => {
            let mut entries: Vec<(usize, usize, f32)> = Vec::with_capacity(a.nnz() + n);
            for r in 0..n {
                let (cols, vals) = a.row_entries(r);
                for (&c, &v) in cols.iter().zip(vals) {
                    entries.push((r, c, v));
                }
            }
            for i in 0..n {
                entries.push((i, i, 1.0));
            }
            let with_loops = SparseCsr::from_edges(n, n, &entries)?;
            let degrees = with_loops.row_sums();
            let mut scaled: Vec<(usize, usize, f32)> = Vec::with_capacity(with_loops.nnz());
            for r in 0..n {
                let (cols, vals) = with_loops.row_entries(r);
                for (&c, &v) in cols.iter().zip(vals) {
                    let scale = 1.0 / (degrees[r] * degrees[c]).sqrt();
                    scaled.push((r, c, (v as f64 * scale) as f32));
                }
            }
            Ok(SparseCsr::from_edges(n, n, &scaled)?)
        }
        GnnArch::Sage => {
            let degrees = a.row_sums();
            let mut scaled: Vec<(usize, usize, f32)> = Vec::with_capacity(a.nnz());
            for (r, &degree) in degrees.iter().enumerate() {
                let (cols, vals) = a.row_entries(r);
                for (&c, &v) in cols.iter().zip(vals) {
                    scaled.push((r, c, (v as f64 / degree) as f32));
                }
            }
            Ok(SparseCsr::from_edges(n, n, &scaled)?)
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct SageLayer {
    w_self: ParamId,
    b_self: ParamId,
    w_nbr: ParamId,
}

#[derive(Debug, Clone)]
enum Layers {
    Gcn(Vec<ParamId>),
    Sage(Vec<SageLayer>),
}

#[derive(Debug, Clone)]
pub struct GnnModel {
    config: GnnConfig,
    dims: Vec<usize>,
    params: Params,
    layers: Layers,
    norm_adj: Arc<SparseCsr>,
}

impl GnnModel {
    /// Fresh model with Glorot-initialized weights; normalizes the adjacency
    /// for the configured architecture.
    pub fn new(
        config: GnnConfig,
        input_dim: usize,
        num_classes: usize,
        adjacency: &SparseCsr,
    ) -> Result<Self, GnnError> {
        let norm_adj = Arc::new(normalize_adjacency(adjacency, config.arch)?);
        let dims = layer_dims(&config, input_dim, num_classes);
        let mut params = Params::new();
        let layers = match config.arch {
            GnnArch::Gcn => Layers::Gcn(
                (0..config.num_layers)
                    .map(|l| {
                        params.add(glorot_uniform(
                            dims[l],
                            dims[l + 1],
                            stage_seed(config.seed, &format!("gcn-w{l}")),
                        ))
                    })
                    .collect(),
            ),
            GnnArch::Sage => Layers::Sage(
                (0..config.num_layers)
                    .map(|l| SageLayer {
                        w_self: params.add(glorot_uniform(
                            dims[l],
                            dims[l + 1],
                            stage_seed(config.seed, &format!("sage-self{l}")),
                        )),
                        b_self: params.add(DenseMatrix::zeros(1, dims[l + 1])),
                        w_nbr: params.add(glorot_uniform(
                            dims[l],
                            dims[l + 1],
                            stage_seed(config.seed, &format!("sage-nbr{l}")),
                        )),
                    })
                    .collect(),
            ),
        };
        Ok(Self {
            config,
            dims,
            params,
            layers,
            norm_adj,
        })
    }

    /// Rebuilds a model from explicit per-layer weights (checkpoint loading,
    /// oracle fixtures). Weight order: GCN `[W_l]`; SAGE
    /// `[w_self_l, b_self_l, w_nbr_l]` per layer.
    pub fn from_weights(
        config: GnnConfig,
        input_dim: usize,
        num_classes: usize,
        adjacency: &SparseCsr,
        weights: Vec<DenseMatrix>,
    ) -> Result<Self, GnnError> {
        let mut model = Self::new(config, input_dim, num_classes, adjacency)?;
        let expected = model.params.len();
        if weights.len() != expected {
            return Err(GnnError::BadCheckpoint {
                path: PathBuf::new(),
                msg: format!("expected {expected} weight matrices, got {}", weights.len()),
            });
        }
        for (id, w) in model.params.ids().collect::<Vec<_>>().into_iter().zip(weights) {
            let current = model.params.get(id);
            if current.rows() != w.rows() || current.cols() != w.cols() {
                return Err(GnnError::BadCheckpoint {
                    path: PathBuf::new(),
                    msg: format!(
                        "weight {} is {}x{}, expected {}x{}",
                        id.index(),
                        w.rows(),
                        w.cols(),
                        current.rows(),
                        current.cols()
                    ),
                });
            }
            *model.params.get_mut(id) = w;
        }
        Ok(model)
    }

    pub fn config(&self) -> &GnnConfig {
        &self.config
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn norm_adj(&self) -> &SparseCsr {
        &self.norm_adj
    }

    fn forward_tape(
        &self,
        tape: &mut Tape,
        x: NodeId,
        train: bool,
        epoch: u64,
    ) -> Result<NodeId, NumericError> {
        let last = self.config.num_layers - 1;
        let mut h = x;
        match &self.layers {
            Layers::Gcn(ws) => {
                for (l, &w) in ws.iter().enumerate() {
                    h = tape.dropout(
                        h,
                        self.config.dropout,
                        dropout_key(self.config.seed, epoch, l as u64),
                        train,
                    )?;
                    let agg = tape.spmm(&self.norm_adj, h)?;
                    let wn = tape.param(&self.params, w);
                    h = tape.matmul(agg, wn)?;
                    if l < last {
                        h = tape.relu(h)?;
                    }
                }
            }
            Layers::Sage(layers) => {
                for (l, layer) in layers.iter().enumerate() {
                    h = tape.dropout(
                        h,
                        self.config.dropout,
                        dropout_key(self.config.seed, epoch, l as u64),
                        train,
                    )?;
                    let w_self = tape.param(&self.params, layer.w_self);
                    let b_self = tape.param(&self.params, layer.b_self);
                    let w_nbr = tape.param(&self.params, layer.w_nbr);
                    let own = tape.matmul(h, w_self)?;
                    let own = tape.add_bias(own, b_self)?;
                    let agg = tape.spmm(&self.norm_adj, h)?;
                    let nbr = tape.matmul(agg, w_nbr)?;
                    h = tape.add(own, nbr)?;
                    if l < last {
                        h = tape.relu(h)?;
                    }
                }
            }
        }
        Ok(h)
    }

    fn check_input(&self, features: &DenseMatrix) -> Result<(), GnnError> {
        if features.cols() != self.dims[0] {
            return Err(GnnError::InputDim {
                expected: self.dims[0],
                found: features.cols(),
            });
        }
        Ok(())
    }

    /// Logits for all nodes. Train mode applies dropout keyed by the epoch.
    pub fn forward(
        &self,
        features: &DenseMatrix,
        train: bool,
        epoch: u64,
    ) -> Result<DenseMatrix, GnnError> {
        self.check_input(features)?;
        let mut tape = Tape::new();
        let x = tape.constant(features.clone());
        let out = self.forward_tape(&mut tape, x, train, epoch)?;
        Ok(tape.value(out).clone())
    }

    /// Eval-mode logits.
    pub fn predict(&self, features: &DenseMatrix) -> Result<DenseMatrix, GnnError> {
        self.forward(features, false, 0)
    }

    /// Writes the binary checkpoint plus a JSON sidecar with the config and
    /// whatever final metrics the caller hands over.
    pub fn save(&self, path: &Path, metrics: &BTreeMap<String, f64>) -> Result<(), GnnError> {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(CHECKPOINT_MAGIC);
        bytes.push(match self.config.arch {
            GnnArch::Gcn => 0u8,
            GnnArch::Sage => 1u8,
        });
        bytes.extend_from_slice(&(self.config.num_layers as u32).to_le_bytes());
        bytes.extend_from_slice(&(self.dims.len() as u32).to_le_bytes());
        for &d in &self.dims {
            bytes.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for w in self.params.iter() {
            bytes.extend_from_slice(&(w.rows() as u64).to_le_bytes());
            bytes.extend_from_slice(&(w.cols() as u64).to_le_bytes());
            for v in w.data() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        write_atomic(path, &bytes).map_err(|e| GnnError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        let sidecar = CheckpointSidecar {
            config: self.config.clone(),
            dims: self.dims.clone(),
            metrics: metrics.clone(),
        };
        let sidecar_path = sidecar_json_path(path);
        write_atomic(
            &sidecar_path,
            serde_json::to_string_pretty(&sidecar)
                .expect("sidecar serializes")
                .as_bytes(),
        )
        .map_err(|e| GnnError::Io {
            path: sidecar_path,
            source: e,
        })
    }

    /// Reads a checkpoint back; the adjacency is re-normalized from the
    /// provided graph adjacency.
    pub fn load(path: &Path, adjacency: &SparseCsr) -> Result<Self, GnnError> {
        let bad = |msg: &str| GnnError::BadCheckpoint {
            path: path.to_path_buf(),
            msg: msg.to_string(),
        };
        let bytes = fs::read(path).map_err(|e| GnnError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        if bytes.len() < 17 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(bad("bad magic"));
        }
        let arch = match bytes[8] {
            0 => GnnArch::Gcn,
            1 => GnnArch::Sage,
            other => return Err(bad(&format!("unknown arch byte {other}"))),
        };
        let num_layers = u32::from_le_bytes(bytes[9..13].try_into().expect("4 bytes")) as usize;
        let dims_len = u32::from_le_bytes(bytes[13..17].try_into().expect("4 bytes")) as usize;
        let mut off = 17usize;
        let mut dims = Vec::with_capacity(dims_len);
        for _ in 0..dims_len {
            if off + 8 > bytes.len() {
                return Err(bad("truncated dims"));
            }
            dims.push(u64::from_le_bytes(bytes[off..off + 8].try_into().expect("8 bytes")) as usize);
            off += 8;
        }
        if dims.len() != num_layers + 1 {
            return Err(bad("dims length does not match layer count"));
        }
        let mut weights = Vec::new();
        while off < bytes.len() {
            if off + 16 > bytes.len() {
                return Err(bad("truncated weight header"));
            }
            let rows =
                u64::from_le_bytes(bytes[off..off + 8].try_into().expect("8 bytes")) as usize;
            let cols =
                u64::from_le_bytes(bytes[off + 8..off + 16].try_into().expect("8 bytes")) as usize;
            off += 16;
            let need = rows * cols * 4;
            if off + need > bytes.len() {
                return Err(bad("truncated weight data"));
            }
            let data: Vec<f32> = bytes[off..off + need]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            off += need;
            weights.push(
                DenseMatrix::from_vec(rows, cols, data)
                    .map_err(|e| bad(&format!("weight data: {e}")))?,
            );
        }

        let sidecar_path = sidecar_json_path(path);
        let config = if sidecar_path.exists() {
            let body = fs::read_to_string(&sidecar_path).map_err(|e| GnnError::Io {
                path: sidecar_path.clone(),
                source: e,
            })?;
            let sidecar: CheckpointSidecar =
                serde_json::from_str(&body).map_err(|e| bad(&format!("sidecar: {e}")))?;
            sidecar.config
        } else {
            GnnConfig {
                arch,
                num_layers,
                ..GnnConfig::default()
            }
        };
        if config.arch != arch || config.num_layers != num_layers {
            return Err(bad("sidecar disagrees with binary header"));
        }
        let input_dim = dims[0];
        let num_classes = *dims.last().expect("dims nonempty");
        Self::from_weights(config, input_dim, num_classes, adjacency, weights)
    }
}

fn layer_dims(config: &GnnConfig, input_dim: usize, num_classes: usize) -> Vec<usize> {
    let mut dims = Vec::with_capacity(config.num_layers + 1);
    dims.push(input_dim);
    for _ in 1..config.num_layers {
        dims.push(config.hidden_dim);
    }
    dims.push(num_classes);
    dims
}

#[derive(Serialize, Deserialize)]
struct CheckpointSidecar {
    config: GnnConfig,
    dims: Vec<usize>,
    metrics: BTreeMap<String, f64>,
}

fn sidecar_json_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(".json");
    PathBuf::from(s)
}

/// Per-epoch training trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GnnHistory {
    pub train_loss: Vec<f32>,
    pub val_acc: Vec<f64>,
    pub best_epoch: usize,
    pub best_val_acc: f64,
}

/// Full-batch training on the graph's train mask, early-stopped on val
/// accuracy, returning the best-validation weights.
pub fn train_gnn(
    features: &DenseMatrix,
    graph: &TextAttributedGraph,
    config: &GnnConfig,
) -> Result<(GnnModel, GnnHistory), GnnError> {
    let splits = graph.splits();
    if splits.train.is_empty() {
        return Err(GnnError::MissingSplit("train"));
    }
    if splits.val.is_empty() {
        return Err(GnnError::MissingSplit("val"));
    }
    let mut model = GnnModel::new(
        config.clone(),
        features.cols(),
        graph.num_classes(),
        graph.adjacency(),
    )?;
    model.check_input(features)?;
    let mut state = AdamState::new(&model.params);
    let adam = AdamConfig::with_learning_rate(config.learning_rate);
    let x = Arc::new(features.clone());
    let labels = graph.labels();

    let mut history = GnnHistory {
        train_loss: Vec::new(),
        val_acc: Vec::new(),
        best_epoch: 0,
        best_val_acc: f64::NEG_INFINITY,
    };
    let mut best_params = model.params.clone();
    let mut since_best = 0usize;

    for epoch in 0..config.max_epochs {
        let mut tape = Tape::new();
        let xn = tape.constant_shared(Arc::clone(&x));
        let logits = model.forward_tape(&mut tape, xn, true, epoch as u64)?;
        let logp = tape.log_softmax(logits)?;
        let loss = tape.nll_loss(logp, labels, &splits.train)?;
        let train_loss = tape.value(loss).scalar();
        if !train_loss.is_finite() {
            return Err(GnnError::NonFiniteLoss {
                epoch,
                learning_rate: config.learning_rate,
            });
        }
        let grads = tape.backward(loss)?;
        adam_step(&mut model.params, &grads, &mut state, &adam);

        let val_logits = model.forward(x.as_ref(), false, 0)?;
        let val_acc = accuracy(&val_logits, labels, &splits.val)?;
        history.train_loss.push(train_loss);
        history.val_acc.push(val_acc);
        if val_acc > history.best_val_acc {
            history.best_val_acc = val_acc;
            history.best_epoch = epoch;
            best_params = model.params.clone();
            since_best = 0;
        } else {
            since_best += 1;
            if since_best > config.patience {
                break;
            }
        }
    }
    model.params = best_params;
    Ok((model, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::make_synthetic_tag;

    fn small_config(arch: GnnArch) -> GnnConfig {
        GnnConfig {
            arch,
            num_layers: 2,
            hidden_dim: 8,
            dropout: 0.3,
            learning_rate: 0.05,
            max_epochs: 60,
            patience: 20,
            seed: 1,
        }
    }

    #[test]
    fn gcn_single_node_self_loop() {
        let a = SparseCsr::from_edges(1, 1, &[]).unwrap();
        let norm = normalize_adjacency(&a, GnnArch::Gcn).unwrap();
        assert_eq!(norm.nnz(), 1);
        assert_eq!(norm.row_entries(0), (&[0usize][..], &[1.0f32][..]));
    }

    #[test]
    fn gcn_two_node_edge_gives_halves() {
        let a = SparseCsr::from_edges(2, 2, &[(0, 1, 1.0), (1, 0, 1.0)]).unwrap();
        let norm = normalize_adjacency(&a, GnnArch::Gcn).unwrap();
        assert_eq!(norm.nnz(), 4);
        for r in 0..2 {
            let (_, vals) = norm.row_entries(r);
            for &v in vals {
                assert!((v - 0.5).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn sage_rows_are_means() {
        let a = SparseCsr::from_edges(
            3,
            3,
            &[(0, 1, 1.0), (1, 0, 1.0), (0, 2, 1.0), (2, 0, 1.0)],
        )
        .unwrap();
        let norm = normalize_adjacency(&a, GnnArch::Sage).unwrap();
        for r in 0..3 {
            let (_, vals) = norm.row_entries(r);
            let sum: f32 = vals.iter().sum();
            assert!((sum - 1.0).abs() < 1e-6, "row {r} sums to {sum}");
        }
    }

    #[test]
    fn sage_isolated_node_has_empty_row() {
        let a = SparseCsr::from_edges(3, 3, &[(0, 1, 1.0), (1, 0, 1.0)]).unwrap();
        let norm = normalize_adjacency(&a, GnnArch::Sage).unwrap();
        assert_eq!(norm.row_entries(2).0.len(), 0);
    }

    #[test]
    fn rejects_asymmetric_adjacency() {
        let a = SparseCsr::from_edges(2, 2, &[(0, 1, 1.0)]).unwrap();
        assert!(matches!(
            normalize_adjacency(&a, GnnArch::Gcn),
            Err(GnnError::NotSymmetric)
        ));
    }

    #[test]
    fn identity_weights_single_node_is_relu_chain() {
        // One node, no edges: A_hat = I, so with identity weights the network
        // is relu^(L-1) followed by a linear layer.
        let a = SparseCsr::from_edges(1, 1, &[]).unwrap();
        let config = GnnConfig {
            arch: GnnArch::Gcn,
            num_layers: 2,
            hidden_dim: 3,
            dropout: 0.0,
            ..GnnConfig::default()
        };
        let eye = |n: usize| {
            let mut m = DenseMatrix::zeros(n, n);
            for i in 0..n {
                m.set(i, i, 1.0);
            }
            m
        };
        let model =
            GnnModel::from_weights(config, 3, 3, &a, vec![eye(3), eye(3)]).unwrap();
        let x = DenseMatrix::from_rows(&[vec![-2.0, 0.5, 1.0]]).unwrap();
        let out = model.predict(&x).unwrap();
        assert_eq!(out.data(), &[0.0, 0.5, 1.0]);
    }

    #[test]
    fn eval_equals_train_when_dropout_zero() {
        let g = make_synthetic_tag(40, 3, 0.6, 3, 2).unwrap();
        let mut config = small_config(GnnArch::Gcn);
        config.dropout = 0.0;
        let model = GnnModel::new(config, 5, 3, g.adjacency()).unwrap();
        let x = crate::numeric::gaussian(40, 5, 1.0, 7);
        let train = model.forward(&x, true, 3).unwrap();
        let eval = model.forward(&x, false, 0).unwrap();
        assert_eq!(train, eval);
    }

    #[test]
    fn informative_features_beat_majority_by_wide_margin() {
        let g = make_synthetic_tag(200, 4, 0.8, 3, 12).unwrap();
        // One-hot true class corrupted 25% of the time: plenty of signal.
        let mut rng = rand::rngs::StdRng::seed_from_u64(3);
        use rand::{Rng, SeedableRng};
        let mut x = DenseMatrix::zeros(200, 4);
        for n in 0..200 {
            let class = if rng.gen::<f64>() < 0.75 {
                g.labels()[n] as usize
            } else {
                rng.gen_range(0..4)
            };
            x.set(n, class, 1.0);
        }
        let (_, history) = train_gnn(&x, &g, &small_config(GnnArch::Gcn)).unwrap();
        let val = &g.splits().val;
        let mut counts = [0usize; 4];
        for &n in val {
            counts[g.labels()[n] as usize] += 1;
        }
        let majority = *counts.iter().max().unwrap() as f64 / val.len() as f64;
        assert!(
            history.best_val_acc > majority + 0.2,
            "val acc {} vs majority {majority}",
            history.best_val_acc
        );
    }

    #[test]
    fn training_is_deterministic() {
        let g = make_synthetic_tag(60, 3, 0.7, 3, 4).unwrap();
        let x = crate::numeric::gaussian(60, 6, 1.0, 11);
        let (_, ha) = train_gnn(&x, &g, &small_config(GnnArch::Sage)).unwrap();
        let (_, hb) = train_gnn(&x, &g, &small_config(GnnArch::Sage)).unwrap();
        assert_eq!(ha, hb);
    }

    #[test]
    fn missing_splits_rejected() {
        let mut g = make_synthetic_tag(30, 2, 0.5, 3, 1).unwrap();
        g.set_splits(crate::graph::SplitMask::default()).unwrap();
        let x = DenseMatrix::zeros(30, 4);
        assert!(matches!(
            train_gnn(&x, &g, &small_config(GnnArch::Gcn)),
            Err(GnnError::MissingSplit("train"))
        ));
    }

    #[test]
    fn checkpoint_roundtrips_predictions() {
        let g = make_synthetic_tag(30, 3, 0.6, 3, 8).unwrap();
        let x = crate::numeric::gaussian(30, 5, 1.0, 3);
        for arch in [GnnArch::Gcn, GnnArch::Sage] {
            let mut config = small_config(arch);
            config.max_epochs = 5;
            let (model, history) = train_gnn(&x, &g, &config).unwrap();
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("model.gnn");
            let mut metrics = BTreeMap::new();
            metrics.insert("best_val_acc".to_string(), history.best_val_acc);
            model.save(&path, &metrics).unwrap();
            let loaded = GnnModel::load(&path, g.adjacency()).unwrap();
            assert_eq!(
                model.predict(&x).unwrap(),
                loaded.predict(&x).unwrap(),
                "{arch} checkpoint changed predictions"
            );
        }
    }

    #[test]
    fn permutation_equivariance() {
        // Relabeling nodes by a permutation permutes the logits identically.
        let n = 7;
        let g = make_synthetic_tag(n, 2, 0.5, 3, 5).unwrap();
        let x = crate::numeric::gaussian(n, 4, 1.0, 9);
        let perm: Vec<usize> = vec![3, 0, 6, 2, 5, 1, 4];
        let mut permuted_edges = Vec::new();
        for u in 0..n {
            let (cols, vals) = g.adjacency().row_entries(u);
            for (&v, &w) in cols.iter().zip(vals) {
                permuted_edges.push((perm[u], perm[v], w));
            }
        }
        let pa = SparseCsr::from_edges(n, n, &permuted_edges).unwrap();
        let mut px = DenseMatrix::zeros(n, 4);
        for i in 0..n {
            px.row_mut(perm[i]).copy_from_slice(x.row(i));
        }
        for arch in [GnnArch::Gcn, GnnArch::Sage] {
            let mut config = small_config(arch);
            config.dropout = 0.0;
            let base = GnnModel::new(config.clone(), 4, 2, g.adjacency()).unwrap();
            let weights: Vec<DenseMatrix> = base.params().iter().cloned().collect();
            let permuted = GnnModel::from_weights(config, 4, 2, &pa, weights).unwrap();
            let out = base.predict(&x).unwrap();
            let pout = permuted.predict(&px).unwrap();
            for i in 0..n {
                for j in 0..2 {
                    assert!(
                        (out.get(i, j) - pout.get(perm[i], j)).abs() < 1e-6,
                        "{arch} not equivariant at ({i}, {j})"
                    );
                }
            }
        }
    }

    #[test]
    fn isolated_node_does_not_disturb_others() {
        let n = 6;
        let g = make_synthetic_tag(n, 2, 0.5, 3, 6).unwrap();
        let x = crate::numeric::gaussian(n, 4, 1.0, 13);
        // Same graph plus one isolated node with zero features.
        let mut edges = Vec::new();
        for u in 0..n {
            let (cols, vals) = g.adjacency().row_entries(u);
            for (&v, &w) in cols.iter().zip(vals) {
                edges.push((u, v, w));
            }
        }
        let bigger = SparseCsr::from_edges(n + 1, n + 1, &edges).unwrap();
        let mut bx = DenseMatrix::zeros(n + 1, 4);
        for i in 0..n {
            bx.row_mut(i).copy_from_slice(x.row(i));
        }
        for arch in [GnnArch::Gcn, GnnArch::Sage] {
            let mut config = small_config(arch);
            config.dropout = 0.0;
            let base = GnnModel::new(config.clone(), 4, 2, g.adjacency()).unwrap();
            let weights: Vec<DenseMatrix> = base.params().iter().cloned().collect();
            let extended = GnnModel::from_weights(config, 4, 2, &bigger, weights).unwrap();
            let out = base.predict(&x).unwrap();
            let bout = extended.predict(&bx).unwrap();
            for i in 0..n {
                for j in 0..2 {
                    assert!(
                        (out.get(i, j) - bout.get(i, j)).abs() < 1e-6,
                        "{arch} disturbed node {i}"
                    );
                }
            }
        }
    }
}
