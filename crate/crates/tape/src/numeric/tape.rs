//! Reverse-mode differentiation over an eagerly evaluated forward recording.
//!
//! A [`Tape`] records one forward pass over the fixed op set the pipeline
//! needs (matmul, add, bias broadcast, relu, dropout, sparse-dense matmul,
//! log-softmax, masked NLL). [`Tape::backward`] then walks the recording in
//! reverse topological order exactly once and returns gradients for every
//! parameter that participated. Parameters live outside the tape in a
//! [`Params`] registry so an optimizer can update them between passes.

use std::sync::Arc;

use super::{DenseMatrix, NumericError, SparseCsr};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    /// Dense position in the owning [`Params`] registry.
    pub fn index(self) -> usize {
        self.0
    }
}

/// Registry of trainable matrices. Ids are dense and stable, so optimizer
/// state can be kept in parallel vectors.
#[derive(Debug, Clone, Default)]
pub struct Params {
    mats: Vec<DenseMatrix>,
}

impl Params {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, m: DenseMatrix) -> ParamId {
        self.mats.push(m);
        ParamId(self.mats.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &DenseMatrix {
        &self.mats[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut DenseMatrix {
        &mut self.mats[id.0]
    }

    pub fn len(&self) -> usize {
        self.mats.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mats.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.mats.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = &DenseMatrix> {
        self.mats.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut DenseMatrix> {
        self.mats.iter_mut()
    }
}

/// Per-parameter gradients from one backward pass.
#[derive(Debug)]
pub struct Gradients {
    by_param: Vec<Option<DenseMatrix>>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&DenseMatrix> {
        self.by_param.get(id.0).and_then(Option::as_ref)
    }
}

enum Op {
    Leaf,
    Matmul(usize, usize),
    Add(usize, usize),
    AddBias { x: usize, bias: usize },
    Relu(usize),
    Dropout { x: usize, mask: Vec<bool>, scale: f32 },
    Spmm { adj: Arc<SparseCsr>, x: usize },
    LogSoftmax(usize),
    NllLoss { logp: usize, picks: Vec<(usize, usize)> },
}

pub struct Tape {
    values: Vec<Arc<DenseMatrix>>,
    ops: Vec<Op>,
    param_of: Vec<Option<ParamId>>,
    param_capacity: usize,
    consumed: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            values: Vec::new(),
            ops: Vec::new(),
            param_of: Vec::new(),
            param_capacity: 0,
            consumed: false,
        }
    }

    fn push(&mut self, value: DenseMatrix, op: Op, param: Option<ParamId>) -> NodeId {
        self.values.push(Arc::new(value));
        self.ops.push(op);
        self.param_of.push(param);
        NodeId(self.values.len() - 1)
    }

    fn node(&self, id: NodeId) -> Result<usize, NumericError> {
        if id.0 < self.values.len() {
            Ok(id.0)
        } else {
            Err(NumericError::UnknownNode { id: id.0 })
        }
    }

    pub fn value(&self, id: NodeId) -> &DenseMatrix {
        &self.values[id.0]
    }

    /// Records a constant input (no gradient flows into it).
    pub fn constant(&mut self, m: DenseMatrix) -> NodeId {
        self.push(m, Op::Leaf, None)
    }

    /// Shares an existing matrix without copying its data.
    pub fn constant_shared(&mut self, m: Arc<DenseMatrix>) -> NodeId {
        self.values.push(m);
        self.ops.push(Op::Leaf);
        self.param_of.push(None);
        NodeId(self.values.len() - 1)
    }

    /// Registers the current value of a parameter as a differentiable leaf.
    pub fn param(&mut self, params: &Params, id: ParamId) -> NodeId {
        self.param_capacity = self.param_capacity.max(params.len());
        self.push(params.get(id).clone(), Op::Leaf, Some(id))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumericError> {
        let (a, b) = (self.node(a)?, self.node(b)?);
        let out = self.values[a].matmul(&self.values[b])?;
        out.check_finite("matmul")?;
        Ok(self.push(out, Op::Matmul(a, b), None))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumericError> {
        let (a, b) = (self.node(a)?, self.node(b)?);
        let out = self.values[a].add(&self.values[b])?;
        out.check_finite("add")?;
        Ok(self.push(out, Op::Add(a, b), None))
    }

    /// Broadcasts a 1 x cols bias over every row of `x`.
    pub fn add_bias(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId, NumericError> {
        let (x, bias) = (self.node(x)?, self.node(bias)?);
        let xv = &self.values[x];
        let bv = &self.values[bias];
        if bv.rows() != 1 || bv.cols() != xv.cols() {
            return Err(NumericError::ShapeMismatch {
                op: "add_bias",
                lhs_rows: xv.rows(),
                lhs_cols: xv.cols(),
                rhs_rows: bv.rows(),
                rhs_cols: bv.cols(),
            });
        }
        let mut out = xv.as_ref().clone();
        for i in 0..out.rows() {
            let row = out.row_mut(i);
            for (j, v) in row.iter_mut().enumerate() {
                *v += bv.get(0, j);
            }
        }
        out.check_finite("add_bias")?;
        Ok(self.push(out, Op::AddBias { x, bias }, None))
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId, NumericError> {
        let x = self.node(x)?;
        let mut out = self.values[x].as_ref().clone();
        for v in out.data_mut() {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        Ok(self.push(out, Op::Relu(x), None))
    }

    /// Inverted dropout: keeps each entry with probability 1-p and scales by
    /// 1/(1-p) at train time; eval mode (or p = 0) is the identity and records
    /// nothing. The mask comes from a counter-based generator, so it depends
    /// only on `key` and the entry index, never on evaluation order.
    pub fn dropout(
        &mut self,
        x: NodeId,
        p: f32,
        key: u64,
        train: bool,
    ) -> Result<NodeId, NumericError> {
        if !(0.0..1.0).contains(&p) {
            return Err(NumericError::InvalidDropout { p });
        }
        let xi = self.node(x)?;
        if !train || p == 0.0 {
            return Ok(x);
        }
        let scale = 1.0 / (1.0 - p);
        let src = self.values[xi].clone();
        let mut out = src.as_ref().clone();
        let mut mask = vec![false; out.data().len()];
        for (idx, (v, keep)) in out.data_mut().iter_mut().zip(mask.iter_mut()).enumerate() {
            *keep = unit_from(key, idx as u64) >= p;
            *v = if *keep { *v * scale } else { 0.0 };
        }
        out.check_finite("dropout")?;
        Ok(self.push(out, Op::Dropout { x: xi, mask, scale }, None))
    }

    pub fn spmm(&mut self, adj: &Arc<SparseCsr>, x: NodeId) -> Result<NodeId, NumericError> {
        let xi = self.node(x)?;
        let out = adj.spmm(&self.values[xi])?;
        out.check_finite("spmm")?;
        Ok(self.push(
            out,
            Op::Spmm {
                adj: Arc::clone(adj),
                x: xi,
            },
            None,
        ))
    }

    /// Row-wise log-softmax with max subtraction and f64 accumulation.
    pub fn log_softmax(&mut self, x: NodeId) -> Result<NodeId, NumericError> {
        let xi = self.node(x)?;
        let src = self.values[xi].clone();
        let mut out = DenseMatrix::zeros(src.rows(), src.cols());
        for i in 0..src.rows() {
            let row = src.row(i);
            let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
            let sum: f64 = row.iter().map(|&v| ((v - max) as f64).exp()).sum();
            let lse = max as f64 + sum.ln();
            let out_row = out.row_mut(i);
            for (j, &v) in row.iter().enumerate() {
                out_row[j] = (v as f64 - lse) as f32;
            }
        }
        out.check_finite("log_softmax")?;
        Ok(self.push(out, Op::LogSoftmax(xi), None))
    }

    /// Mean negative log-likelihood over the masked rows only.
    pub fn nll_loss(
        &mut self,
        logp: NodeId,
        labels: &[i64],
        mask: &[usize],
    ) -> Result<NodeId, NumericError> {
        let li = self.node(logp)?;
        if mask.is_empty() {
            return Err(NumericError::EmptyMask);
        }
        let lp = self.values[li].clone();
        let classes = lp.cols();
        let mut picks = Vec::with_capacity(mask.len());
        let mut total = 0.0f64;
        for &row in mask {
            if row >= lp.rows() {
                return Err(NumericError::RowOutOfRange {
                    row,
                    rows: lp.rows(),
                });
            }
            let label = labels[row];
            if label < 0 || label as usize >= classes {
                return Err(NumericError::LabelOutOfRange {
                    row,
                    label,
                    classes,
                });
            }
            picks.push((row, label as usize));
            total += lp.get(row, label as usize) as f64;
        }
        let loss = (-total / picks.len() as f64) as f32;
        let out = DenseMatrix::from_vec(1, 1, vec![loss])
            .map_err(|_| NumericError::NonFinite { op: "nll_loss" })?;
        Ok(self.push(out, Op::NllLoss { logp: li, picks }, None))
    }

    /// Propagates d(loss)/d(param) for every registered parameter. Consumes
    /// the recording: a second call without a fresh forward pass errors.
    pub fn backward(&mut self, loss: NodeId) -> Result<Gradients, NumericError> {
        let li = self.node(loss)?;
        if self.consumed {
            return Err(NumericError::BackwardConsumed);
        }
        let lv = &self.values[li];
        if !lv.is_scalar() {
            return Err(NumericError::NotScalar {
                rows: lv.rows(),
                cols: lv.cols(),
            });
        }
        self.consumed = true;

        let mut grads: Vec<Option<DenseMatrix>> = (0..self.values.len()).map(|_| None).collect();
        grads[li] = Some(DenseMatrix::from_vec(1, 1, vec![1.0]).expect("finite"));
        let mut by_param: Vec<Option<DenseMatrix>> =
            (0..self.param_capacity).map(|_| None).collect();

        for idx in (0..=li).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            if let Some(pid) = self.param_of[idx] {
                if pid.0 >= by_param.len() {
                    by_param.resize_with(pid.0 + 1, || None);
                }
                accumulate(&mut by_param[pid.0], g)?;
                continue;
            }
            match &self.ops[idx] {
                Op::Leaf => {}
                Op::Matmul(a, b) => {
                    let da = g.matmul(&self.values[*b].transpose())?;
                    let db = self.values[*a].transpose().matmul(&g)?;
                    accumulate(&mut grads[*a], da)?;
                    accumulate(&mut grads[*b], db)?;
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads[*a], g.clone())?;
                    accumulate(&mut grads[*b], g.clone())?;
                }
                Op::AddBias { x, bias } => {
                    let mut db = DenseMatrix::zeros(1, g.cols());
                    for i in 0..g.rows() {
                        for (j, &v) in g.row(i).iter().enumerate() {
                            db.set(0, j, db.get(0, j) + v);
                        }
                    }
                    accumulate(&mut grads[*bias], db)?;
                    accumulate(&mut grads[*x], g)?;
                }
                Op::Relu(x) => {
                    let input = &self.values[*x];
                    let mut dx = g;
                    for (v, &xin) in dx.data_mut().iter_mut().zip(input.data()) {
                        if xin <= 0.0 {
                            *v = 0.0;
                        }
                    }
                    accumulate(&mut grads[*x], dx)?;
                }
                Op::Dropout { x, mask, scale } => {
                    let mut dx = g;
                    for (v, &keep) in dx.data_mut().iter_mut().zip(mask.iter()) {
                        *v = if keep { *v * scale } else { 0.0 };
                    }
                    accumulate(&mut grads[*x], dx)?;
                }
                Op::Spmm { adj, x } => {
                    let dx = adj.transpose().spmm(&g)?;
                    accumulate(&mut grads[*x], dx)?;
                }
                Op::LogSoftmax(x) => {
                    let y = &self.values[idx];
                    let mut dx = DenseMatrix::zeros(g.rows(), g.cols());
                    for i in 0..g.rows() {
                        let gsum: f64 = g.row(i).iter().map(|&v| v as f64).sum();
                        let dx_row = dx.row_mut(i);
                        for (j, v) in dx_row.iter_mut().enumerate() {
                            *v = (g.get(i, j) as f64
                                - (y.get(i, j) as f64).exp() * gsum)
                                as f32;
                        }
                    }
                    accumulate(&mut grads[*x], dx)?;
                }
                Op::NllLoss { logp, picks } => {
                    let up = g.scalar();
                    let coeff = -up / picks.len() as f32;
                    let shape = &self.values[*logp];
                    let mut dlp = DenseMatrix::zeros(shape.rows(), shape.cols());
                    for &(row, class) in picks {
                        dlp.set(row, class, dlp.get(row, class) + coeff);
                    }
                    accumulate(&mut grads[*logp], dlp)?;
                }
            }
        }
        Ok(Gradients { by_param })
    }
}

fn accumulate(slot: &mut Option<DenseMatrix>, delta: DenseMatrix) -> Result<(), NumericError> {
    match slot {
        Some(existing) => existing.add_assign(&delta),
        None => {
            *slot = Some(delta);
            Ok(())
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Uniform [0, 1) value derived purely from (key, index).
fn unit_from(key: u64, idx: u64) -> f32 {
    let h = splitmix64(key ^ splitmix64(idx.wrapping_add(1)));
    ((h >> 11) as f64 / (1u64 << 53) as f64) as f32
}

/// Combines (seed, epoch, op id) into one dropout stream key.
pub fn dropout_key(seed: u64, epoch: u64, op_id: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(seed) ^ epoch) ^ op_id)
}
