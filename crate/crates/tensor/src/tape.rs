//! Tape-based reverse-mode differentiation.
//!
//! A [`Tape`] records one forward computation; [`Tape::backward`] replays the
//! record in exact reverse order and accumulates gradients into a
//! [`ParamSet`]. Every forward operation validates shapes and rejects
//! non-finite outputs. All reductions run in a fixed left-to-right order, so
//! a fixed seed gives bit-identical results across runs on one machine.

use crate::error::TensorError;
use crate::params::{ParamId, ParamSet};
use crate::rng::CounterRng;
use crate::tensor::{BoolMask, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

struct Node {
    value: Tensor,
    op: Op,
}

enum Op {
    Constant,
    Param(usize),
    Matmul(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Transpose(Var),
    SliceCols {
        x: Var,
        start: usize,
    },
    ConcatLastDim(Vec<Var>),
    Relu(Var),
    Linear {
        x: Var,
        w: Var,
        b: Var,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        x_hat: Tensor,
        inv_std: Vec<f64>,
    },
    Dropout {
        x: Var,
        mask: Vec<f64>,
    },
    MaskedSoftmax {
        scores: Var,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<Option<usize>>,
        row_weights: Vec<f64>,
        weight_sum: f64,
        probs: Tensor,
    },
    SumAll(Var),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Constant => "constant",
            Op::Param(_) => "param",
            Op::Matmul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Transpose(..) => "transpose",
            Op::SliceCols { .. } => "slice_cols",
            Op::ConcatLastDim(..) => "concat_last_dim",
            Op::Relu(..) => "relu",
            Op::Linear { .. } => "linear",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Dropout { .. } => "dropout",
            Op::MaskedSoftmax { .. } => "masked_softmax",
            Op::CrossEntropy { .. } => "cross_entropy",
            Op::SumAll(..) => "sum_all",
        }
    }
}

/// Recorded forward computation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Result<Var, TensorError> {
        if !value.is_finite() {
            return Err(TensorError::NonFinite { op: op.name() });
        }
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Leaf with no gradient path.
    pub fn constant(&mut self, value: Tensor) -> Result<Var, TensorError> {
        self.push(value, Op::Constant)
    }

    /// Leaf whose gradient flows into `params` on backward.
    pub fn param(&mut self, id: ParamId, params: &ParamSet) -> Result<Var, TensorError> {
        self.push(params.value(id).clone(), Op::Param(id.index()))
    }

    fn require_rank(&self, v: Var, rank: usize, op: &'static str) -> Result<(), TensorError> {
        if self.shape(v).len() != rank {
            return Err(TensorError::RankMismatch {
                op,
                expected: rank,
                shape: self.shape(v).to_vec(),
            });
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.require_rank(a, 2, "matmul")?;
        self.require_rank(b, 2, "matmul")?;
        let (av, bv) = (self.value(a), self.value(b));
        if av.cols() != bv.rows() {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: av.shape().to_vec(),
                rhs: bv.shape().to_vec(),
            });
        }
        let out = matmul_raw(av, bv);
        self.push(out, Op::Matmul(a, b))
    }

    /// Elementwise addition; shapes must match exactly.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "add",
                lhs: av.shape().to_vec(),
                rhs: bv.shape().to_vec(),
            });
        }
        let data = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(x, y)| x + y)
            .collect();
        let out = Tensor::new(av.shape().to_vec(), data)?;
        self.push(out, Op::Add(a, b))
    }

    /// Elementwise product; shapes must match exactly.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "mul",
                lhs: av.shape().to_vec(),
                rhs: bv.shape().to_vec(),
            });
        }
        let data = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(x, y)| x * y)
            .collect();
        let out = Tensor::new(av.shape().to_vec(), data)?;
        self.push(out, Op::Mul(a, b))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var, TensorError> {
        let xv = self.value(x);
        let data = xv.data().iter().map(|v| v * c).collect();
        let out = Tensor::new(xv.shape().to_vec(), data)?;
        self.push(out, Op::Scale(x, c))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var, TensorError> {
        self.require_rank(x, 2, "transpose")?;
        let xv = self.value(x);
        let (r, c) = (xv.rows(), xv.cols());
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = xv.at(i, j);
            }
        }
        let out = Tensor::matrix(c, r, data)?;
        self.push(out, Op::Transpose(x))
    }

    /// Columns `start..start+len` of a rank-2 tensor.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var, TensorError> {
        self.require_rank(x, 2, "slice_cols")?;
        let xv = self.value(x);
        let (r, c) = (xv.rows(), xv.cols());
        if start + len > c {
            return Err(TensorError::SliceOutOfRange {
                start,
                end: start + len,
                width: c,
            });
        }
        let mut data = Vec::with_capacity(r * len);
        for i in 0..r {
            data.extend_from_slice(&xv.row(i)[start..start + len]);
        }
        let out = Tensor::matrix(r, len, data)?;
        self.push(out, Op::SliceCols { x, start })
    }

    /// Concatenate rank-2 tensors along the last dimension.
    pub fn concat_last_dim(&mut self, xs: &[Var]) -> Result<Var, TensorError> {
        if xs.is_empty() {
            return Err(TensorError::ShapeMismatch {
                op: "concat_last_dim",
                lhs: vec![],
                rhs: vec![],
            });
        }
        for &x in xs {
            self.require_rank(x, 2, "concat_last_dim")?;
        }
        let rows = self.value(xs[0]).rows();
        for &x in xs {
            if self.value(x).rows() != rows {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_last_dim",
                    lhs: self.value(xs[0]).shape().to_vec(),
                    rhs: self.value(x).shape().to_vec(),
                });
            }
        }
        let total: usize = xs.iter().map(|&x| self.value(x).cols()).sum();
        let mut data = Vec::with_capacity(rows * total);
        for i in 0..rows {
            for &x in xs {
                data.extend_from_slice(self.value(x).row(i));
            }
        }
        let out = Tensor::matrix(rows, total, data)?;
        self.push(out, Op::ConcatLastDim(xs.to_vec()))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var, TensorError> {
        let xv = self.value(x);
        let data = xv.data().iter().map(|&v| v.max(0.0)).collect();
        let out = Tensor::new(xv.shape().to_vec(), data)?;
        self.push(out, Op::Relu(x))
    }

    /// Affine map `x @ w + b` with `b` broadcast over rows.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var, TensorError> {
        self.require_rank(x, 2, "linear")?;
        self.require_rank(w, 2, "linear")?;
        self.require_rank(b, 1, "linear")?;
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        if xv.cols() != wv.rows() || wv.cols() != bv.len() {
            return Err(TensorError::ShapeMismatch {
                op: "linear",
                lhs: xv.shape().to_vec(),
                rhs: wv.shape().to_vec(),
            });
        }
        let mut out = matmul_raw(xv, wv);
        let (n, d) = (out.rows(), out.cols());
        {
            let data = out.data_mut();
            for i in 0..n {
                for j in 0..d {
                    data[i * d + j] += bv.data()[j];
                }
            }
        }
        self.push(out, Op::Linear { x, w, b })
    }

    /// Layer normalization over the last dimension of a rank-2 tensor.
    pub fn layer_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
    ) -> Result<Var, TensorError> {
        self.require_rank(x, 2, "layer_norm")?;
        self.require_rank(gamma, 1, "layer_norm")?;
        self.require_rank(beta, 1, "layer_norm")?;
        let (xv, gv, bv) = (self.value(x), self.value(gamma), self.value(beta));
        let (n, d) = (xv.rows(), xv.cols());
        if gv.len() != d || bv.len() != d {
            return Err(TensorError::ShapeMismatch {
                op: "layer_norm",
                lhs: xv.shape().to_vec(),
                rhs: gv.shape().to_vec(),
            });
        }
        let mut x_hat = vec![0.0; n * d];
        let mut inv_std = vec![0.0; n];
        let mut out = vec![0.0; n * d];
        for i in 0..n {
            let row = xv.row(i);
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + eps).sqrt();
            inv_std[i] = inv;
            for j in 0..d {
                let xh = (row[j] - mean) * inv;
                x_hat[i * d + j] = xh;
                out[i * d + j] = xh * gv.data()[j] + bv.data()[j];
            }
        }
        let out = Tensor::matrix(n, d, out)?;
        let x_hat = Tensor::matrix(n, d, x_hat)?;
        self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                x_hat,
                inv_std,
            },
        )
    }

    /// Inverted dropout: kept activations are scaled by `1/(1-p)` during
    /// training; evaluation is the identity.
    pub fn dropout(
        &mut self,
        x: Var,
        p: f64,
        rng: &mut CounterRng,
        train: bool,
    ) -> Result<Var, TensorError> {
        if !(0.0..1.0).contains(&p) {
            return Err(TensorError::InvalidDropout { p });
        }
        if !train || p == 0.0 {
            return Ok(x);
        }
        let xv = self.value(x);
        let keep_scale = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..xv.len())
            .map(|_| if rng.next_f64() < p { 0.0 } else { keep_scale })
            .collect();
        let data = xv.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let out = Tensor::new(xv.shape().to_vec(), data)?;
        self.push(out, Op::Dropout { x, mask })
    }

    /// Row-wise softmax restricted to admissible positions.
    ///
    /// Inadmissible positions receive probability exactly 0 and no gradient:
    /// they are excluded before exponentiation, not zeroed afterwards.
    pub fn masked_softmax(&mut self, scores: Var, mask: &BoolMask) -> Result<Var, TensorError> {
        self.require_rank(scores, 2, "masked_softmax")?;
        let sv = self.value(scores);
        let (n, m) = (sv.rows(), sv.cols());
        if mask.rows() != n || mask.cols() != m {
            return Err(TensorError::ShapeMismatch {
                op: "masked_softmax",
                lhs: sv.shape().to_vec(),
                rhs: vec![mask.rows(), mask.cols()],
            });
        }
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            let row = sv.row(i);
            let mrow = mask.row(i);
            let mut max = f64::NEG_INFINITY;
            for j in 0..m {
                if mrow[j] && row[j] > max {
                    max = row[j];
                }
            }
            if max == f64::NEG_INFINITY {
                return Err(TensorError::AllMaskedRow { row: i });
            }
            let mut denom = 0.0;
            for j in 0..m {
                if mrow[j] {
                    let e = (row[j] - max).exp();
                    out[i * m + j] = e;
                    denom += e;
                }
            }
            for j in 0..m {
                out[i * m + j] /= denom;
            }
        }
        let out = Tensor::matrix(n, m, out)?;
        self.push(out, Op::MaskedSoftmax { scores })
    }

    /// Mean negative log-likelihood over rows with a target class.
    ///
    /// `targets[i] = None` drops row `i` from the loss (used for utterances
    /// excluded from training). `class_weights`, when given, rescales each
    /// valid row by the weight of its target class and normalizes by the
    /// total weight.
    pub fn cross_entropy(
        &mut self,
        logits: Var,
        targets: &[Option<usize>],
        class_weights: Option<&[f64]>,
    ) -> Result<Var, TensorError> {
        self.require_rank(logits, 2, "cross_entropy")?;
        let lv = self.value(logits);
        let (n, c) = (lv.rows(), lv.cols());
        if targets.len() != n {
            return Err(TensorError::ShapeMismatch {
                op: "cross_entropy",
                lhs: lv.shape().to_vec(),
                rhs: vec![targets.len()],
            });
        }
        if let Some(w) = class_weights {
            if w.len() != c {
                return Err(TensorError::ShapeMismatch {
                    op: "cross_entropy",
                    lhs: vec![c],
                    rhs: vec![w.len()],
                });
            }
        }
        for t in targets.iter().flatten() {
            if *t >= c {
                return Err(TensorError::TargetOutOfRange {
                    target: *t,
                    n_classes: c,
                });
            }
        }
        let mut probs = vec![0.0; n * c];
        let mut row_weights = vec![0.0; n];
        let mut weight_sum = 0.0;
        let mut loss = 0.0;
        for i in 0..n {
            let row = lv.row(i);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut denom = 0.0;
            for j in 0..c {
                let e = (row[j] - max).exp();
                probs[i * c + j] = e;
                denom += e;
            }
            for j in 0..c {
                probs[i * c + j] /= denom;
            }
            if let Some(t) = targets[i] {
                let w = class_weights.map_or(1.0, |cw| cw[t]);
                let lse = max + denom.ln();
                loss += w * (lse - row[t]);
                row_weights[i] = w;
                weight_sum += w;
            }
        }
        if weight_sum <= 0.0 {
            return Err(TensorError::NoValidTargets);
        }
        let out = Tensor::scalar(loss / weight_sum);
        self.push(
            out,
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                row_weights,
                weight_sum,
                probs: Tensor::matrix(n, c, probs)?,
            },
        )
    }

    /// Sum of all elements, as a scalar.
    pub fn sum_all(&mut self, x: Var) -> Result<Var, TensorError> {
        let s = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::SumAll(x))
    }

    /// Accumulate `d(loss)/d(param)` into `params` for every parameter leaf.
    ///
    /// Visits nodes in exact reverse recording order. Calling backward again
    /// (on a fresh tape) without `params.zero_grads()` accumulates.
    pub fn backward(&self, loss: Var, params: &mut ParamSet) -> Result<(), TensorError> {
        if self.nodes.is_empty() {
            return Err(TensorError::EmptyTape);
        }
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(TensorError::LossNotScalar {
                shape: lv.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Tensor>> = Vec::with_capacity(loss.0 + 1);
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            match &self.nodes[id].op {
                Op::Constant => {}
                Op::Param(p) => params.accumulate_grad(*p, &g),
                Op::Matmul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    accumulate(&mut grads, *a, matmul_nt(&g, bv));
                    accumulate(&mut grads, *b, matmul_tn(av, &g));
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g);
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let da = ew(&g, bv, |x, y| x * y);
                    let db = ew(&g, av, |x, y| x * y);
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::Scale(x, c) => {
                    let mut d = g;
                    d.data_mut().iter_mut().for_each(|v| *v *= c);
                    accumulate(&mut grads, *x, d);
                }
                Op::Transpose(x) => {
                    let (r, c) = (g.rows(), g.cols());
                    let mut data = vec![0.0; r * c];
                    for i in 0..r {
                        for j in 0..c {
                            data[j * r + i] = g.at(i, j);
                        }
                    }
                    accumulate(&mut grads, *x, Tensor::matrix(c, r, data).unwrap());
                }
                Op::SliceCols { x, start } => {
                    let xv = self.value(*x);
                    let (r, c) = (xv.rows(), xv.cols());
                    let len = g.cols();
                    let mut d = Tensor::zeros(vec![r, c]);
                    {
                        let data = d.data_mut();
                        for i in 0..r {
                            for j in 0..len {
                                data[i * c + start + j] = g.at(i, j);
                            }
                        }
                    }
                    accumulate(&mut grads, *x, d);
                }
                Op::ConcatLastDim(xs) => {
                    let rows = g.rows();
                    let mut offset = 0;
                    for &x in xs {
                        let w = self.value(x).cols();
                        let mut data = Vec::with_capacity(rows * w);
                        for i in 0..rows {
                            data.extend_from_slice(&g.row(i)[offset..offset + w]);
                        }
                        accumulate(&mut grads, x, Tensor::matrix(rows, w, data).unwrap());
                        offset += w;
                    }
                }
                Op::Relu(x) => {
                    let xv = self.value(*x);
                    let data = g
                        .data()
                        .iter()
                        .zip(xv.data())
                        .map(|(gv, xvv)| if *xvv > 0.0 { *gv } else { 0.0 })
                        .collect();
                    accumulate(
                        &mut grads,
                        *x,
                        Tensor::new(xv.shape().to_vec(), data).unwrap(),
                    );
                }
                Op::Linear { x, w, b } => {
                    let (xv, wv) = (self.value(*x), self.value(*w));
                    accumulate(&mut grads, *x, matmul_nt(&g, wv));
                    accumulate(&mut grads, *w, matmul_tn(xv, &g));
                    let (n, d) = (g.rows(), g.cols());
                    let mut db = vec![0.0; d];
                    for i in 0..n {
                        for j in 0..d {
                            db[j] += g.at(i, j);
                        }
                    }
                    accumulate(&mut grads, *b, Tensor::new(vec![d], db).unwrap());
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    x_hat,
                    inv_std,
                } => {
                    let gv = self.value(*gamma);
                    let (n, d) = (g.rows(), g.cols());
                    let mut dgamma = vec![0.0; d];
                    let mut dbeta = vec![0.0; d];
                    let mut dx = vec![0.0; n * d];
                    for i in 0..n {
                        let grow = g.row(i);
                        let xhrow = x_hat.row(i);
                        let mut mean_gy = 0.0;
                        let mut mean_gy_xh = 0.0;
                        for j in 0..d {
                            let gy = grow[j] * gv.data()[j];
                            mean_gy += gy;
                            mean_gy_xh += gy * xhrow[j];
                            dgamma[j] += grow[j] * xhrow[j];
                            dbeta[j] += grow[j];
                        }
                        mean_gy /= d as f64;
                        mean_gy_xh /= d as f64;
                        for j in 0..d {
                            let gy = grow[j] * gv.data()[j];
                            dx[i * d + j] = inv_std[i] * (gy - mean_gy - xhrow[j] * mean_gy_xh);
                        }
                    }
                    accumulate(&mut grads, *x, Tensor::matrix(n, d, dx).unwrap());
                    accumulate(&mut grads, *gamma, Tensor::new(vec![d], dgamma).unwrap());
                    accumulate(&mut grads, *beta, Tensor::new(vec![d], dbeta).unwrap());
                }
                Op::Dropout { x, mask } => {
                    let data = g
                        .data()
                        .iter()
                        .zip(mask)
                        .map(|(gv, m)| gv * m)
                        .collect();
                    accumulate(
                        &mut grads,
                        *x,
                        Tensor::new(g.shape().to_vec(), data).unwrap(),
                    );
                }
                Op::MaskedSoftmax { scores } => {
                    let p = &self.nodes[id].value;
                    let (n, m) = (p.rows(), p.cols());
                    let mut ds = vec![0.0; n * m];
                    for i in 0..n {
                        let prow = p.row(i);
                        let grow = g.row(i);
                        let dot: f64 = prow.iter().zip(grow).map(|(pv, gv)| pv * gv).sum();
                        for j in 0..m {
                            ds[i * m + j] = prow[j] * (grow[j] - dot);
                        }
                    }
                    accumulate(&mut grads, *scores, Tensor::matrix(n, m, ds).unwrap());
                }
                Op::CrossEntropy {
                    logits,
                    targets,
                    row_weights,
                    weight_sum,
                    probs,
                } => {
                    let g0 = g.item();
                    let (n, c) = (probs.rows(), probs.cols());
                    let mut dl = vec![0.0; n * c];
                    for i in 0..n {
                        if let Some(t) = targets[i] {
                            let scale = g0 * row_weights[i] / weight_sum;
                            let prow = probs.row(i);
                            for j in 0..c {
                                dl[i * c + j] = scale * (prow[j] - if j == t { 1.0 } else { 0.0 });
                            }
                        }
                    }
                    accumulate(&mut grads, *logits, Tensor::matrix(n, c, dl).unwrap());
                }
                Op::SumAll(x) => {
                    let g0 = g.item();
                    let xv = self.value(*x);
                    let mut d = Tensor::zeros(xv.shape().to_vec());
                    d.fill(g0);
                    accumulate(&mut grads, *x, d);
                }
            }
        }
        Ok(())
    }
}

fn accumulate(grads: &mut [Option<Tensor>], target: Var, delta: Tensor) {
    match &mut grads[target.0] {
        Some(g) => g.add_assign(&delta),
        slot => *slot = Some(delta),
    }
}

fn ew(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(x, y)| f(*x, *y)).collect();
    Tensor::new(a.shape().to_vec(), data).unwrap()
}

/// `a @ b` for rank-2 tensors; ikj loop order, fixed summation order.
fn matmul_raw(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k, n) = (a.rows(), a.cols(), b.cols());
    let mut out = vec![0.0; m * n];
    let (ad, bd) = (a.data(), b.data());
    for i in 0..m {
        let arow = &ad[i * k..(i + 1) * k];
        let crow = &mut out[i * n..(i + 1) * n];
        for (kk, &aik) in arow.iter().enumerate() {
            let brow = &bd[kk * n..(kk + 1) * n];
            for j in 0..n {
                crow[j] += aik * brow[j];
            }
        }
    }
    Tensor::matrix(m, n, out).unwrap()
}

/// `a @ b^T` without materializing the transpose.
fn matmul_nt(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k) = (a.rows(), a.cols());
    let n = b.rows();
    debug_assert_eq!(b.cols(), k);
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let arow = a.row(i);
        for j in 0..n {
            let brow = b.row(j);
            let mut s = 0.0;
            for kk in 0..k {
                s += arow[kk] * brow[kk];
            }
            out[i * n + j] = s;
        }
    }
    Tensor::matrix(m, n, out).unwrap()
}

/// `a^T @ b` without materializing the transpose.
fn matmul_tn(a: &Tensor, b: &Tensor) -> Tensor {
    let (k, m) = (a.rows(), a.cols());
    let n = b.cols();
    debug_assert_eq!(b.rows(), k);
    let mut out = vec![0.0; m * n];
    for kk in 0..k {
        let arow = a.row(kk);
        let brow = b.row(kk);
        for i in 0..m {
            let aki = arow[i];
            let orow = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                orow[j] += aki * brow[j];
            }
        }
    }
    Tensor::matrix(m, n, out).unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params_with(name: &str, t: Tensor) -> (ParamSet, ParamId) {
        let mut ps = ParamSet::new();
        let id = ps.register(name, t).unwrap();
        (ps, id)
    }

    #[test]
    fn sum_grad_is_ones() {
        let (mut ps, w) = params_with("w", Tensor::matrix(2, 3, vec![1.0; 6]).unwrap());
        let mut tape = Tape::new();
        let wv = tape.param(w, &ps).unwrap();
        let loss = tape.sum_all(wv).unwrap();
        tape.backward(loss, &mut ps).unwrap();
        assert_eq!(ps.grad(w).data(), &[1.0; 6]);
    }

    #[test]
    fn square_grad_of_scalar() {
        let (mut ps, x) = params_with("x", Tensor::scalar(3.0));
        let mut tape = Tape::new();
        let xv = tape.param(x, &ps).unwrap();
        let sq = tape.mul(xv, xv).unwrap();
        let loss = tape.sum_all(sq).unwrap();
        tape.backward(loss, &mut ps).unwrap();
        assert_eq!(ps.grad(x).data(), &[6.0]);
    }

    #[test]
    fn backward_accumulates_without_zeroing() {
        let (mut ps, x) = params_with("x", Tensor::scalar(2.0));
        for _ in 0..2 {
            let mut tape = Tape::new();
            let xv = tape.param(x, &ps).unwrap();
            let loss = tape.sum_all(xv).unwrap();
            tape.backward(loss, &mut ps).unwrap();
        }
        assert_eq!(ps.grad(x).data(), &[2.0]);
        ps.zero_grads();
        assert_eq!(ps.grad(x).data(), &[0.0]);
    }

    #[test]
    fn masked_softmax_symmetric_row() {
        let mut tape = Tape::new();
        let s = tape
            .constant(Tensor::matrix(1, 3, vec![0.0, 0.0, 0.0]).unwrap())
            .unwrap();
        let mask = BoolMask::new(1, 3, vec![true, false, true]).unwrap();
        let p = tape.masked_softmax(s, &mask).unwrap();
        assert_eq!(tape.value(p).data(), &[0.5, 0.0, 0.5]);
    }

    #[test]
    fn masked_softmax_width_one() {
        let mut tape = Tape::new();
        let s = tape
            .constant(Tensor::matrix(1, 1, vec![123.0]).unwrap())
            .unwrap();
        let mask = BoolMask::all_true(1, 1);
        let p = tape.masked_softmax(s, &mask).unwrap();
        assert_eq!(tape.value(p).data(), &[1.0]);
    }

    #[test]
    fn masked_softmax_all_masked_row_errors() {
        let mut tape = Tape::new();
        let s = tape
            .constant(Tensor::matrix(2, 2, vec![0.0; 4]).unwrap())
            .unwrap();
        let mask = BoolMask::new(2, 2, vec![true, true, false, false]).unwrap();
        let err = tape.masked_softmax(s, &mask).unwrap_err();
        assert!(matches!(err, TensorError::AllMaskedRow { row: 1 }));
    }

    #[test]
    fn cross_entropy_uniform_logits_is_ln_classes() {
        let mut tape = Tape::new();
        let logits = tape
            .constant(Tensor::matrix(1, 7, vec![0.3; 7]).unwrap())
            .unwrap();
        let loss = tape.cross_entropy(logits, &[Some(4)], None).unwrap();
        let expected = (7.0f64).ln();
        assert!((tape.value(loss).item() - expected).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_rejects_bad_target() {
        let mut tape = Tape::new();
        let logits = tape
            .constant(Tensor::matrix(1, 7, vec![0.0; 7]).unwrap())
            .unwrap();
        let err = tape.cross_entropy(logits, &[Some(7)], None).unwrap_err();
        assert!(matches!(err, TensorError::TargetOutOfRange { .. }));
    }

    #[test]
    fn dropout_eval_is_identity() {
        let mut tape = Tape::new();
        let x = tape
            .constant(Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap())
            .unwrap();
        let mut rng = CounterRng::new(0);
        let y = tape.dropout(x, 0.5, &mut rng, false).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn dropout_train_scales_kept() {
        let mut tape = Tape::new();
        let x = tape
            .constant(Tensor::matrix(1, 1000, vec![1.0; 1000]).unwrap())
            .unwrap();
        let mut rng = CounterRng::new(9);
        let y = tape.dropout(x, 0.25, &mut rng, true).unwrap();
        let vals = tape.value(y).data();
        let scale = 1.0 / 0.75;
        assert!(vals.iter().all(|&v| v == 0.0 || (v - scale).abs() < 1e-15));
        let kept = vals.iter().filter(|&&v| v != 0.0).count();
        assert!((600..900).contains(&kept), "kept {kept}");
    }

    #[test]
    fn dropout_rejects_bad_p() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::scalar(1.0)).unwrap();
        let mut rng = CounterRng::new(0);
        assert!(tape.dropout(x, 1.0, &mut rng, true).is_err());
        assert!(tape.dropout(x, -0.1, &mut rng, true).is_err());
    }

    #[test]
    fn non_finite_forward_rejected() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::scalar(1e308)).unwrap();
        let err = tape.add(x, x).unwrap_err();
        assert!(matches!(err, TensorError::NonFinite { op: "add" }));
    }

    #[test]
    fn backward_requires_scalar_loss() {
        let mut ps = ParamSet::new();
        let mut tape = Tape::new();
        let x = tape
            .constant(Tensor::matrix(1, 2, vec![1.0, 2.0]).unwrap())
            .unwrap();
        let err = tape.backward(x, &mut ps).unwrap_err();
        assert!(matches!(err, TensorError::LossNotScalar { .. }));
    }

    #[test]
    fn linear_matches_manual() {
        let mut tape = Tape::new();
        let x = tape
            .constant(Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap())
            .unwrap();
        let w = tape
            .constant(Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap())
            .unwrap();
        let b = tape
            .constant(Tensor::new(vec![2], vec![10.0, 20.0]).unwrap())
            .unwrap();
        let y = tape.linear(x, w, b).unwrap();
        assert_eq!(tape.value(y).data(), &[11.0, 22.0, 13.0, 24.0]);
    }

    #[test]
    fn slice_concat_roundtrip() {
        let mut tape = Tape::new();
        let x = tape
            .constant(Tensor::matrix(2, 4, (0..8).map(|v| v as f64).collect()).unwrap())
            .unwrap();
        let a = tape.slice_cols(x, 0, 2).unwrap();
        let b = tape.slice_cols(x, 2, 2).unwrap();
        let y = tape.concat_last_dim(&[a, b]).unwrap();
        assert_eq!(tape.value(y), tape.value(x));
    }
}
