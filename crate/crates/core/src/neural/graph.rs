//! Tape-based reverse-mode differentiation over the operator set used by
//! the dual-branch forecaster.
//!
//! A [`Graph`] records every operation in execution order, so the tape is
//! topologically sorted by construction; [`Graph::backward`] walks it once
//! in reverse. Gradients of a node that fans out to several consumers
//! accumulate additively.

use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::tensor::{gemm, Element, MatView, MatViewMut, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Train mode enables batch statistics and dropout; infer mode is deterministic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Infer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolKind {
    Avg,
    Max,
}

/// Batch-normalization constants shared by every BN layer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatchNormConfig {
    pub momentum: f64,
    pub epsilon: f64,
}

impl Default for BatchNormConfig {
    fn default() -> Self {
        BatchNormConfig {
            momentum: 0.99,
            epsilon: 1e-3,
        }
    }
}

/// Running statistics of one batch-norm layer.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormState<F = f32> {
    pub running_mean: Vec<F>,
    pub running_var: Vec<F>,
}

impl<F: Element> BatchNormState<F> {
    pub fn new(channels: usize) -> Self {
        BatchNormState {
            running_mean: vec![F::zero(); channels],
            running_var: vec![F::one(); channels],
        }
    }

    pub fn channels(&self) -> usize {
        self.running_mean.len()
    }

    /// `running = momentum * running + (1 - momentum) * batch`.
    pub fn update(&mut self, batch_mean: &[F], batch_var: &[F], momentum: f64) {
        let m = F::lit(momentum);
        let r = F::one() - m;
        for (rm, &bm) in self.running_mean.iter_mut().zip(batch_mean) {
            *rm = m * *rm + r * bm;
        }
        for (rv, &bv) in self.running_var.iter_mut().zip(batch_var) {
            *rv = m * *rv + r * bv;
        }
    }
}

enum Op<F> {
    Leaf,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Conv1d {
        x: Var,
        w: Var,
        b: Var,
        dilation: usize,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<F>,
        inv_std: Vec<F>,
        train: bool,
    },
    Dropout {
        x: Var,
        mask: Vec<F>,
    },
    Relu(Var),
    AvgPool(Var),
    MaxPool {
        x: Var,
        argmax: Vec<usize>,
    },
    Concat(Vec<Var>),
    SliceLastK {
        x: Var,
        k: usize,
    },
    Reshape(Var),
    Mse {
        pred: Var,
        target: Var,
    },
    Sum(Var),
}

struct Node<F> {
    shape: Vec<usize>,
    data: Vec<F>,
    op: Op<F>,
    requires_grad: bool,
}

/// Recorded computation. One graph per forward pass.
pub struct Graph<F = f32> {
    nodes: Vec<Node<F>>,
    grads: Vec<Option<Vec<F>>>,
}

impl<F: Element> Default for Graph<F> {
    fn default() -> Self {
        Self::new()
    }
}

/// Splits a `[T, C]` or `[B, T, C]` shape into `(B, T, C)`.
fn btc(shape: &[usize], what: &str) -> Result<(usize, usize, usize)> {
    match *shape {
        [t, c] => Ok((1, t, c)),
        [b, t, c] => Ok((b, t, c)),
        _ => Err(Error::Dimension(format!(
            "{what} expects [T, C] or [B, T, C], got {shape:?}"
        ))),
    }
}

fn seq_shape(rank3: bool, b: usize, t: usize, c: usize) -> Vec<usize> {
    if rank3 {
        vec![b, t, c]
    } else {
        vec![t, c]
    }
}

impl<F: Element> Graph<F> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<F>, op: Op<F>, requires_grad: bool) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.nodes.push(Node {
            shape,
            data,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node<F> {
        &self.nodes[v.0]
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Records a leaf. Its `requires_grad` flag decides whether backward
    /// produces a gradient for it.
    pub fn leaf(&mut self, t: Tensor<F>) -> Var {
        let rg = t.requires_grad;
        let shape = t.shape().to_vec();
        self.push(shape, t.into_data(), Op::Leaf, rg)
    }

    /// Leaf from a borrowed tensor (copies the values).
    pub fn leaf_ref(&mut self, t: &Tensor<F>) -> Var {
        self.push(
            t.shape().to_vec(),
            t.data().to_vec(),
            Op::Leaf,
            t.requires_grad,
        )
    }

    /// Leaf from a raw buffer; never requires a gradient.
    pub fn input(&mut self, shape: Vec<usize>, data: Vec<F>) -> Result<Var> {
        let t = Tensor::new(shape, data)?;
        Ok(self.leaf(t))
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.node(v).shape
    }

    pub fn data(&self, v: Var) -> &[F] {
        &self.node(v).data
    }

    pub fn value(&self, v: Var) -> Tensor<F> {
        let n = self.node(v);
        Tensor::new(n.shape.clone(), n.data.clone()).expect("node shape consistent")
    }

    /// Gradient of the last `backward` target with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&[F]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// `a[m,k] · b[k,n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::Dimension(format!(
                "matmul shape mismatch: {sa:?} x {sb:?}"
            )));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![F::zero(); m * n];
        gemm(
            MatView::rm(self.data(a), 0, m, k, k),
            MatView::rm(self.data(b), 0, k, n, n),
            MatViewMut::rm(&mut out, 0, m, n, n),
            false,
        );
        let rg = self.rg(&[a, b]);
        Ok(self.push(vec![m, n], out, Op::MatMul(a, b), rg))
    }

    /// Adds `bias[n]` to every row of `x[.., n]`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let sb = self.shape(bias).to_vec();
        let n = *sx.last().unwrap_or(&0);
        if sb != [n] {
            return Err(Error::Dimension(format!(
                "bias shape {sb:?} does not match trailing dim of {sx:?}"
            )));
        }
        let b = self.data(bias);
        let out: Vec<F> = self
            .data(x)
            .chunks(n)
            .flat_map(|row| row.iter().zip(b).map(|(&v, &bb)| v + bb))
            .collect();
        let rg = self.rg(&[x, bias]);
        Ok(self.push(sx, out, Op::AddBias(x, bias), rg))
    }

    /// Fully connected layer `x[m,k] · w[k,n] + b[n]`.
    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = self.matmul(x, w)?;
        self.add_bias(y, b)
    }

    /// Causal 1-D convolution with left zero-padding of `(K-1)*dilation`.
    ///
    /// `x` is `[T, C_in]` or `[B, T, C_in]`, `w` is `[K, C_in, C_out]`.
    /// Tap `k` reads `x[t - (K-1-k)*dilation]`, so the last tap is the
    /// current timestep.
    pub fn causal_conv1d(&mut self, x: Var, w: Var, bias: Var, dilation: usize) -> Result<Var> {
        if dilation == 0 {
            return Err(Error::Config("dilation must be >= 1".into()));
        }
        let sx = self.shape(x).to_vec();
        let (bsz, t, cin) = btc(&sx, "causal_conv1d")?;
        let sw = self.shape(w).to_vec();
        let [k, wcin, cout] = sw[..] else {
            return Err(Error::Dimension(format!(
                "conv kernel must be [K, C_in, C_out], got {sw:?}"
            )));
        };
        if k == 0 {
            return Err(Error::Config("kernel size must be >= 1".into()));
        }
        if wcin != cin {
            return Err(Error::Dimension(format!(
                "conv channel mismatch: input {sx:?} vs kernel {sw:?}"
            )));
        }
        if self.shape(bias) != [cout] {
            return Err(Error::Dimension(format!(
                "conv bias shape {:?} != [{cout}]",
                self.shape(bias)
            )));
        }
        let mut out = Vec::with_capacity(bsz * t * cout);
        for _ in 0..bsz * t {
            out.extend_from_slice(self.data(bias));
        }
        let xd = self.data(x);
        let wd = self.data(w);
        for b in 0..bsz {
            for tap in 0..k {
                let shift = (k - 1 - tap) * dilation;
                if shift >= t {
                    continue;
                }
                let rows = t - shift;
                gemm(
                    MatView::rm(xd, b * t * cin, rows, cin, cin),
                    MatView::rm(wd, tap * cin * cout, cin, cout, cout),
                    MatViewMut::rm(&mut out, (b * t + shift) * cout, rows, cout, cout),
                    true,
                );
            }
        }
        let rg = self.rg(&[x, w, bias]);
        Ok(self.push(
            seq_shape(sx.len() == 3, bsz, t, cout),
            out,
            Op::Conv1d {
                x,
                w,
                b: bias,
                dilation,
            },
            rg,
        ))
    }

    /// Batch normalization over every axis but the last (channel) axis.
    ///
    /// Train mode normalizes with the biased batch variance and folds the
    /// unbiased variance into `state`; infer mode reads `state` only.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        state: &mut BatchNormState<F>,
        mode: Mode,
        cfg: BatchNormConfig,
    ) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let c = *sx.last().unwrap_or(&0);
        if c == 0 || self.shape(gamma) != [c] || self.shape(beta) != [c] || state.channels() != c {
            return Err(Error::Dimension(format!(
                "batch_norm: input {sx:?}, gamma {:?}, beta {:?}, state {} channels",
                self.shape(gamma),
                self.shape(beta),
                state.channels()
            )));
        }
        let xd = self.data(x);
        let count = xd.len() / c;
        let eps = F::lit(cfg.epsilon);
        let (mean, var) = match mode {
            Mode::Train => {
                if count < 2 {
                    return Err(Error::Contract(format!(
                        "batch_norm in train mode needs >= 2 values per channel, got {count}"
                    )));
                }
                let mut mean = vec![F::zero(); c];
                for row in xd.chunks(c) {
                    for (m, &v) in mean.iter_mut().zip(row) {
                        *m = *m + v;
                    }
                }
                let nf = F::from_usize(count).unwrap();
                mean.iter_mut().for_each(|m| *m = *m / nf);
                let mut var = vec![F::zero(); c];
                for row in xd.chunks(c) {
                    for ((s, &v), &m) in var.iter_mut().zip(row).zip(&mean) {
                        let d = v - m;
                        *s = *s + d * d;
                    }
                }
                var.iter_mut().for_each(|s| *s = *s / nf);
                let unbiased: Vec<F> = var
                    .iter()
                    .map(|&v| v * nf / F::from_usize(count - 1).unwrap())
                    .collect();
                state.update(&mean, &unbiased, cfg.momentum);
                (mean, var)
            }
            Mode::Infer => (state.running_mean.clone(), state.running_var.clone()),
        };
        let inv_std: Vec<F> = var.iter().map(|&v| F::one() / (v + eps).sqrt()).collect();
        let g = self.data(gamma);
        let bt = self.data(beta);
        let mut xhat = vec![F::zero(); xd.len()];
        let mut out = vec![F::zero(); xd.len()];
        for ((row, hrow), orow) in xd.chunks(c).zip(xhat.chunks_mut(c)).zip(out.chunks_mut(c)) {
            for (((((&v, &m), &is), h), o), (&gj, &bj)) in row
                .iter()
                .zip(&mean)
                .zip(&inv_std)
                .zip(hrow.iter_mut())
                .zip(orow.iter_mut())
                .zip(g.iter().zip(bt))
            {
                *h = (v - m) * is;
                *o = gj * *h + bj;
            }
        }
        let rg = self.rg(&[x, gamma, beta]);
        let (xhat, inv_std) = if rg {
            (xhat, inv_std)
        } else {
            (Vec::new(), Vec::new())
        };
        Ok(self.push(
            sx,
            out,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train: mode == Mode::Train,
            },
            rg,
        ))
    }

    /// Inverted dropout: identity in infer mode.
    pub fn dropout(&mut self, x: Var, rate: f64, mode: Mode, rng: &mut dyn RngCore) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")));
        }
        if mode == Mode::Infer || rate == 0.0 {
            return Ok(x);
        }
        let keep = F::lit(1.0 / (1.0 - rate));
        // an element is dropped when a uniform u32 falls below rate * 2^32
        let threshold = (rate * 4_294_967_296.0) as u64;
        let n = self.data(x).len();
        let mut bytes = vec![0u8; 4 * n];
        rng.fill_bytes(&mut bytes);
        let mask: Vec<F> = bytes
            .chunks_exact(4)
            .map(|b| {
                if (u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as u64) < threshold {
                    F::zero()
                } else {
                    keep
                }
            })
            .collect();
        let out = self
            .data(x)
            .iter()
            .zip(&mask)
            .map(|(&v, &m)| v * m)
            .collect();
        let shape = self.shape(x).to_vec();
        let rg = self.rg(&[x]);
        Ok(self.push(shape, out, Op::Dropout { x, mask }, rg))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let out = self.data(x).iter().map(|&v| v.max(F::zero())).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.rg(&[x]);
        Ok(self.push(shape, out, Op::Relu(x), rg))
    }

    /// Per-channel mean or max over the time axis: `[B,T,C] -> [B,C]`,
    /// `[T,C] -> [C]`.
    pub fn global_pool(&mut self, x: Var, kind: PoolKind) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let (bsz, t, c) = btc(&sx, "global_pool")?;
        if t == 0 {
            return Err(Error::Dimension(
                "global_pool over an empty time axis".into(),
            ));
        }
        let xd = self.data(x);
        let mut out = Vec::with_capacity(bsz * c);
        let shape = if sx.len() == 3 { vec![bsz, c] } else { vec![c] };
        let rg = self.rg(&[x]);
        match kind {
            PoolKind::Avg => {
                let tf = F::from_usize(t).unwrap();
                for b in 0..bsz {
                    let mut acc = vec![F::zero(); c];
                    for row in xd[b * t * c..(b + 1) * t * c].chunks(c) {
                        for (a, &v) in acc.iter_mut().zip(row) {
                            *a = *a + v;
                        }
                    }
                    out.extend(acc.into_iter().map(|a| a / tf));
                }
                Ok(self.push(shape, out, Op::AvgPool(x), rg))
            }
            PoolKind::Max => {
                let mut argmax = Vec::with_capacity(bsz * c);
                for b in 0..bsz {
                    let base = b * t * c;
                    for j in 0..c {
                        let mut best = 0;
                        let mut bv = xd[base + j];
                        for s in 1..t {
                            let v = xd[base + s * c + j];
                            if v > bv {
                                bv = v;
                                best = s;
                            }
                        }
                        out.push(bv);
                        argmax.push(base + best * c + j);
                    }
                }
                Ok(self.push(shape, out, Op::MaxPool { x, argmax }, rg))
            }
        }
    }

    /// Concatenates 2-D `[B, n_i]` values along the feature axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Dimension("concat of zero tensors".into()));
        }
        let rows = self.shape(parts[0])[0];
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            if s.len() != 2 || s[0] != rows {
                return Err(Error::Dimension(format!(
                    "concat expects [B, n] with B = {rows}, got {s:?}"
                )));
            }
            widths.push(s[1]);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.data(p)[r * w..(r + 1) * w]);
            }
        }
        let rg = self.rg(parts);
        Ok(self.push(vec![rows, total], out, Op::Concat(parts.to_vec()), rg))
    }

    /// Keeps the last `k` timesteps of a `[B,T,C]` / `[T,C]` sequence.
    pub fn slice_last_k(&mut self, x: Var, k: usize) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let (bsz, t, c) = btc(&sx, "slice_last_k")?;
        if k > t {
            return Err(Error::Dimension(format!(
                "slice_last_k: k = {k} exceeds {t} timesteps"
            )));
        }
        let xd = self.data(x);
        let mut out = Vec::with_capacity(bsz * k * c);
        for b in 0..bsz {
            out.extend_from_slice(&xd[(b * t + t - k) * c..(b + 1) * t * c]);
        }
        let rg = self.rg(&[x]);
        Ok(self.push(
            seq_shape(sx.len() == 3, bsz, k, c),
            out,
            Op::SliceLastK { x, k },
            rg,
        ))
    }

    /// `[B, d1, d2, ...] -> [B, d1*d2*...]`.
    pub fn flatten(&mut self, x: Var) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        if sx.is_empty() {
            return Err(Error::Dimension("flatten of a scalar".into()));
        }
        let rest: usize = sx[1..].iter().product();
        let data = self.data(x).to_vec();
        let rg = self.rg(&[x]);
        Ok(self.push(vec![sx[0], rest], data, Op::Reshape(x), rg))
    }

    /// Mean squared error, a scalar of shape `[]`.
    pub fn mse_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        if self.shape(pred) != self.shape(target) {
            return Err(Error::Dimension(format!(
                "mse shape mismatch: {:?} vs {:?}",
                self.shape(pred),
                self.shape(target)
            )));
        }
        let n = self.data(pred).len();
        if n == 0 {
            return Err(Error::Dimension("mse of empty tensors".into()));
        }
        let s: F = self
            .data(pred)
            .iter()
            .zip(self.data(target))
            .map(|(&p, &t)| (p - t) * (p - t))
            .sum();
        let rg = self.rg(&[pred, target]);
        Ok(self.push(
            vec![],
            vec![s / F::from_usize(n).unwrap()],
            Op::Mse { pred, target },
            rg,
        ))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s: F = self.data(x).iter().copied().sum();
        let rg = self.rg(&[x]);
        Ok(self.push(vec![], vec![s], Op::Sum(x), rg))
    }

    /// Reverse sweep from a scalar `loss`. Afterwards [`Graph::grad`]
    /// returns `d loss / d v` for every node that requires a gradient.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.node(loss).data.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.node(loss).shape
            )));
        }
        let mut grads: Vec<Option<Vec<F>>> = vec![None; self.nodes.len()];
        if !self.node(loss).requires_grad {
            self.grads = grads;
            return Ok(());
        }
        grads[loss.0] = Some(vec![F::one()]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            self.backprop_node(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        // Only requires_grad nodes keep a gradient.
        for (g, n) in grads.iter_mut().zip(&self.nodes) {
            if !n.requires_grad {
                *g = None;
            }
        }
        self.grads = grads;
        Ok(())
    }

    /// Copies leaf gradients back into the tensors they were created from.
    pub fn write_grads(&self, pairs: &mut [(Var, &mut Tensor<F>)]) {
        for (v, t) in pairs.iter_mut() {
            t.grad = self.grad(*v).map(|g| g.to_vec());
        }
    }

    fn backprop_node(&self, node: &Node<F>, g: &[F], grads: &mut [Option<Vec<F>>]) {
        let nodes = &self.nodes;
        let wants = |v: Var| nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (nodes[a.0].shape[0], nodes[a.0].shape[1]);
                let n = nodes[b.0].shape[1];
                if wants(*a) {
                    let ga = slot(grads, *a, m * k);
                    gemm(
                        MatView::rm(g, 0, m, n, n),
                        MatView::rm(&nodes[b.0].data, 0, k, n, n).t(),
                        MatViewMut::rm(ga, 0, m, k, k),
                        true,
                    );
                }
                if wants(*b) {
                    let gb = slot(grads, *b, k * n);
                    gemm(
                        MatView::rm(&nodes[a.0].data, 0, m, k, k).t(),
                        MatView::rm(g, 0, m, n, n),
                        MatViewMut::rm(gb, 0, k, n, n),
                        true,
                    );
                }
            }
            Op::AddBias(x, b) => {
                if wants(*x) {
                    add_into(slot(grads, *x, g.len()), g);
                }
                if wants(*b) {
                    let n = nodes[b.0].data.len();
                    let gb = slot(grads, *b, n);
                    for row in g.chunks(n) {
                        add_into(gb, row);
                    }
                }
            }
            Op::Conv1d { x, w, b, dilation } => {
                let sx = &nodes[x.0].shape;
                let (bsz, t, cin) = btc(sx, "conv").expect("recorded shape");
                let k = nodes[w.0].shape[0];
                let cout = nodes[w.0].shape[2];
                if wants(*x) {
                    let gx = slot(grads, *x, bsz * t * cin);
                    for bi in 0..bsz {
                        for tap in 0..k {
                            let shift = (k - 1 - tap) * dilation;
                            if shift >= t {
                                continue;
                            }
                            let rows = t - shift;
                            gemm(
                                MatView::rm(g, (bi * t + shift) * cout, rows, cout, cout),
                                MatView::rm(&nodes[w.0].data, tap * cin * cout, cin, cout, cout)
                                    .t(),
                                MatViewMut::rm(gx, bi * t * cin, rows, cin, cin),
                                true,
                            );
                        }
                    }
                }
                if wants(*w) {
                    let gw = slot(grads, *w, k * cin * cout);
                    for bi in 0..bsz {
                        for tap in 0..k {
                            let shift = (k - 1 - tap) * dilation;
                            if shift >= t {
                                continue;
                            }
                            let rows = t - shift;
                            gemm(
                                MatView::rm(&nodes[x.0].data, bi * t * cin, rows, cin, cin).t(),
                                MatView::rm(g, (bi * t + shift) * cout, rows, cout, cout),
                                MatViewMut::rm(gw, tap * cin * cout, cin, cout, cout),
                                true,
                            );
                        }
                    }
                }
                if wants(*b) {
                    let gb = slot(grads, *b, cout);
                    for row in g.chunks(cout) {
                        add_into(gb, row);
                    }
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            } => {
                let c = inv_std.len();
                let count = xhat.len() / c;
                let gam = &nodes[gamma.0].data;
                let mut sum_dy = vec![F::zero(); c];
                let mut sum_dy_xhat = vec![F::zero(); c];
                for (grow, hrow) in g.chunks(c).zip(xhat.chunks(c)) {
                    for (((sd, sdh), &gv), &hv) in sum_dy
                        .iter_mut()
                        .zip(sum_dy_xhat.iter_mut())
                        .zip(grow)
                        .zip(hrow)
                    {
                        *sd = *sd + gv;
                        *sdh = *sdh + gv * hv;
                    }
                }
                if wants(*x) {
                    let gx = slot(grads, *x, g.len());
                    if *train {
                        // dx = gamma * inv_std / n * (n * dy - sum(dy) - xhat * sum(dy * xhat))
                        let nf = F::from_usize(count).unwrap();
                        let scale: Vec<F> =
                            gam.iter().zip(inv_std).map(|(&a, &b)| a * b / nf).collect();
                        for ((gxr, grow), hrow) in
                            gx.chunks_mut(c).zip(g.chunks(c)).zip(xhat.chunks(c))
                        {
                            for (((((o, &gv), &hv), &sc), &sd), &sdh) in gxr
                                .iter_mut()
                                .zip(grow)
                                .zip(hrow)
                                .zip(&scale)
                                .zip(&sum_dy)
                                .zip(&sum_dy_xhat)
                            {
                                *o = *o + sc * (nf * gv - sd - hv * sdh);
                            }
                        }
                    } else {
                        let scale: Vec<F> = gam.iter().zip(inv_std).map(|(&a, &b)| a * b).collect();
                        for (gxr, grow) in gx.chunks_mut(c).zip(g.chunks(c)) {
                            for ((o, &gv), &sc) in gxr.iter_mut().zip(grow).zip(&scale) {
                                *o = *o + gv * sc;
                            }
                        }
                    }
                }
                if wants(*gamma) {
                    add_into(slot(grads, *gamma, c), &sum_dy_xhat);
                }
                if wants(*beta) {
                    add_into(slot(grads, *beta, c), &sum_dy);
                }
            }
            Op::Dropout { x, mask } => {
                if wants(*x) {
                    let gx = slot(grads, *x, g.len());
                    for ((o, &gi), &m) in gx.iter_mut().zip(g).zip(mask) {
                        *o = *o + gi * m;
                    }
                }
            }
            Op::Relu(x) => {
                if wants(*x) {
                    let xd = &nodes[x.0].data;
                    let gx = slot(grads, *x, g.len());
                    for ((o, &gi), &v) in gx.iter_mut().zip(g).zip(xd) {
                        *o = *o + if v > F::zero() { gi } else { F::zero() };
                    }
                }
            }
            Op::AvgPool(x) => {
                if wants(*x) {
                    let (bsz, t, c) = btc(&nodes[x.0].shape, "pool").expect("recorded shape");
                    let tf = F::from_usize(t).unwrap();
                    let gx = slot(grads, *x, bsz * t * c);
                    for b in 0..bsz {
                        let grow = &g[b * c..(b + 1) * c];
                        for row in gx[b * t * c..(b + 1) * t * c].chunks_mut(c) {
                            for (o, &gi) in row.iter_mut().zip(grow) {
                                *o = *o + gi / tf;
                            }
                        }
                    }
                }
            }
            Op::MaxPool { x, argmax } => {
                if wants(*x) {
                    let n = nodes[x.0].data.len();
                    let gx = slot(grads, *x, n);
                    for (&idx, &gi) in argmax.iter().zip(g) {
                        gx[idx] = gx[idx] + gi;
                    }
                }
            }
            Op::Concat(parts) => {
                let rows = node.shape[0];
                let total = node.shape[1];
                let mut off = 0;
                for p in parts {
                    let w = nodes[p.0].shape[1];
                    if wants(*p) {
                        let gp = slot(grads, *p, rows * w);
                        for r in 0..rows {
                            add_into(
                                &mut gp[r * w..(r + 1) * w],
                                &g[r * total + off..r * total + off + w],
                            );
                        }
                    }
                    off += w;
                }
            }
            Op::SliceLastK { x, k } => {
                if wants(*x) {
                    let (bsz, t, c) = btc(&nodes[x.0].shape, "slice").expect("recorded shape");
                    let gx = slot(grads, *x, bsz * t * c);
                    for b in 0..bsz {
                        add_into(
                            &mut gx[(b * t + t - k) * c..(b + 1) * t * c],
                            &g[b * k * c..(b + 1) * k * c],
                        );
                    }
                }
            }
            Op::Reshape(x) => {
                if wants(*x) {
                    add_into(slot(grads, *x, g.len()), g);
                }
            }
            Op::Mse { pred, target } => {
                let pd = &nodes[pred.0].data;
                let td = &nodes[target.0].data;
                let scale = g[0] * F::lit(2.0) / F::from_usize(pd.len()).unwrap();
                if wants(*pred) {
                    let gp = slot(grads, *pred, pd.len());
                    for ((o, &p), &t) in gp.iter_mut().zip(pd).zip(td) {
                        *o = *o + scale * (p - t);
                    }
                }
                if wants(*target) {
                    let gt = slot(grads, *target, td.len());
                    for ((o, &p), &t) in gt.iter_mut().zip(pd).zip(td) {
                        *o = *o - scale * (p - t);
                    }
                }
            }
            Op::Sum(x) => {
                if wants(*x) {
                    let gx = slot(grads, *x, nodes[x.0].data.len());
                    gx.iter_mut().for_each(|o| *o = *o + g[0]);
                }
            }
        }
    }
}

fn slot<F: Element>(grads: &mut [Option<Vec<F>>], v: Var, len: usize) -> &mut [F] {
    grads[v.0].get_or_insert_with(|| vec![F::zero(); len])
}

fn add_into<F: Element>(dst: &mut [F], src: &[F]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = *d + s;
    }
}
