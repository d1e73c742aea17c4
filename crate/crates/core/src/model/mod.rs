//! The dual-branch forecaster: a lag branch over the most recent
//! `lag_window` steps, a causal TCN branch over the whole sequence with
//! dual global pooling, and a dense fusion head.
//!
//! With the default configuration the full variant has 383,880 trainable
//! parameters (weights, biases and batch-norm gamma/beta).

mod arch;
mod config;
pub mod io;

use std::collections::HashMap;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};

pub use arch::{Architecture, Block, LayerKind};
pub use config::{ModelConfig, Variant};

use crate::dataset::{ScalerParams, WindowedDataset};
use crate::error::{Error, Result};
use crate::neural::{BatchNormState, Graph, Mode, PoolKind, Tensor, Var};

/// Named parameter tensors in a fixed order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor<f32>>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn insert(&mut self, name: String, t: Tensor<f32>) {
        if let Some(&i) = self.index.get(&name) {
            self.tensors[i] = t;
        } else {
            self.index.insert(name.clone(), self.names.len());
            self.names.push(name);
            self.tensors.push(t);
        }
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<f32>> {
        self.position(name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<f32>> {
        self.position(name).map(|i| &mut self.tensors[i])
    }

    pub fn require(&self, name: &str) -> Result<&Tensor<f32>> {
        self.get(name)
            .ok_or_else(|| Error::Structure(format!("missing parameter {name}")))
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<f32>)> {
        self.names.iter().map(|s| s.as_str()).zip(&self.tensors)
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<f32>] {
        &mut self.tensors
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn count(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    arch: Architecture,
    params: ParamStore,
    /// Running statistics keyed by BN layer name, in layer order.
    bn: Vec<(String, BatchNormState<f32>)>,
    /// Scaler fitted at training time; needed to denormalize forecasts.
    pub scaler: Option<ScalerParams>,
    folded: bool,
}

fn glorot(shape: &[usize], fans: (usize, usize), rng: &mut ChaCha8Rng) -> Tensor<f32> {
    let limit = (6.0 / (fans.0 + fans.1) as f64).sqrt();
    let dist = Uniform::new_inclusive(-limit, limit);
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| dist.sample(rng) as f32).collect();
    Tensor::new(shape.to_vec(), data).expect("shape product")
}

impl Model {
    /// Builds the network for `config`, Glorot-uniform weights drawn from
    /// a generator seeded with `seed`; biases and BN beta start at 0,
    /// BN gamma at 1.
    pub fn build(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let arch = Architecture::from_config(&config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::default();
        let mut bn = Vec::new();
        for b in arch.blocks() {
            params.insert(
                b.weight(),
                glorot(&b.kind.weight_shape(), b.kind.fans(), &mut rng),
            );
            let out = b.kind.outputs();
            params.insert(b.bias(), Tensor::zeros(&[out]));
            if b.batch_norm {
                params.insert(b.gamma(), Tensor::full(&[out], 1.0));
                params.insert(b.beta(), Tensor::zeros(&[out]));
                bn.push((b.bn_name(), BatchNormState::new(out)));
            }
        }
        Ok(Model {
            config,
            arch,
            params,
            bn,
            scaler: None,
            folded: false,
        })
    }

    /// Reassembles a model from stored parts, checking every tensor the
    /// architecture needs is present with the right shape.
    pub fn from_parts(
        config: ModelConfig,
        params: ParamStore,
        bn: Vec<(String, BatchNormState<f32>)>,
        scaler: Option<ScalerParams>,
        folded: bool,
    ) -> Result<Self> {
        config.validate()?;
        let arch = Architecture::from_config(&config);
        for b in arch.blocks() {
            let w = params.require(&b.weight())?;
            if w.shape() != b.kind.weight_shape() {
                return Err(Error::Structure(format!(
                    "{} has shape {:?}, expected {:?}",
                    b.weight(),
                    w.shape(),
                    b.kind.weight_shape()
                )));
            }
            if params.require(&b.bias())?.shape() != [b.kind.outputs()] {
                return Err(Error::Structure(format!(
                    "{} has the wrong shape",
                    b.bias()
                )));
            }
            if b.batch_norm && !folded {
                params.require(&b.gamma())?;
                params.require(&b.beta())?;
                if !bn.iter().any(|(n, _)| *n == b.bn_name()) {
                    return Err(Error::Structure(format!("missing state {}", b.bn_name())));
                }
            }
        }
        Ok(Model {
            config,
            arch,
            params,
            bn,
            scaler,
            folded,
        })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn bn_states(&self) -> &[(String, BatchNormState<f32>)] {
        &self.bn
    }

    pub fn bn_states_mut(&mut self) -> &mut [(String, BatchNormState<f32>)] {
        &mut self.bn
    }

    /// True once batch norm has been folded into the affine weights.
    pub fn is_folded(&self) -> bool {
        self.folded
    }

    pub(crate) fn into_folded(mut self, params: ParamStore) -> Self {
        self.params = params;
        self.bn.clear();
        self.folded = true;
        self
    }

    /// Exact trainable-parameter count.
    pub fn count_params(&self) -> usize {
        self.params.count()
    }

    /// Registers every parameter as a graph leaf.
    pub fn bind(&self, g: &mut Graph<f32>, trainable: bool) -> Vec<Var> {
        self.params
            .iter()
            .map(|(_, t)| {
                if trainable {
                    g.leaf(t.clone().with_grad())
                } else {
                    g.leaf_ref(t)
                }
            })
            .collect()
    }

    #[allow(clippy::too_many_arguments)]
    fn block(
        &self,
        g: &mut Graph<f32>,
        x: Var,
        b: &Block,
        vars: &[Var],
        mode: Mode,
        bn: &mut [BatchNormState<f32>],
        rng: &mut dyn RngCore,
    ) -> Result<Var> {
        let p = |name: String| -> Result<Var> {
            self.params
                .position(&name)
                .map(|i| vars[i])
                .ok_or_else(|| Error::Structure(format!("missing parameter {name}")))
        };
        let (w, bias) = (p(b.weight())?, p(b.bias())?);
        let mut y = match b.kind {
            LayerKind::Dense { .. } => g.dense(x, w, bias)?,
            LayerKind::Conv { dilation, .. } => g.causal_conv1d(x, w, bias, dilation)?,
        };
        if b.batch_norm && !self.folded {
            let idx = self
                .bn
                .iter()
                .position(|(n, _)| *n == b.bn_name())
                .ok_or_else(|| Error::Structure(format!("missing state {}", b.bn_name())))?;
            y = g.batch_norm(
                y,
                p(b.gamma())?,
                p(b.beta())?,
                &mut bn[idx],
                mode,
                self.config.batch_norm,
            )?;
        }
        if b.relu {
            y = g.relu(y)?;
        }
        if b.dropout && mode == Mode::Train {
            y = g.dropout(y, self.config.dropout, mode, rng)?;
        }
        Ok(y)
    }

    /// Records the forward pass of `x: [B, seq_len, n_features]` on `g`.
    ///
    /// `bn` holds one state per BN layer (see [`Model::bn_states`]); train
    /// mode updates it in place.
    pub fn forward_graph(
        &self,
        g: &mut Graph<f32>,
        x: Var,
        vars: &[Var],
        mode: Mode,
        bn: &mut [BatchNormState<f32>],
        rng: &mut dyn RngCore,
    ) -> Result<Var> {
        self.forward_observed(g, x, vars, mode, bn, rng, &mut |_, _, _| {})
    }

    /// [`Model::forward_graph`] that reports intermediate activations to
    /// `observe`: every block output by block name, plus `"tcn_pool"` and
    /// `"fusion_input"`.
    #[allow(clippy::too_many_arguments)]
    pub fn forward_observed(
        &self,
        g: &mut Graph<f32>,
        x: Var,
        vars: &[Var],
        mode: Mode,
        bn: &mut [BatchNormState<f32>],
        rng: &mut dyn RngCore,
        observe: &mut dyn FnMut(&str, &Graph<f32>, Var),
    ) -> Result<Var> {
        let c = &self.config;
        let s = g.shape(x);
        if s.len() != 3 || s[1] != c.seq_len || s[2] != c.n_features {
            return Err(Error::Dimension(format!(
                "model input must be [B, {}, {}], got {s:?}",
                c.seq_len, c.n_features
            )));
        }
        let mut branches = Vec::with_capacity(2);
        if !self.arch.lag.is_empty() {
            let last = g.slice_last_k(x, c.lag_window)?;
            let mut h = g.flatten(last)?;
            for b in &self.arch.lag {
                h = self.block(g, h, b, vars, mode, bn, rng)?;
                observe(&b.name, g, h);
            }
            branches.push(h);
        }
        if !self.arch.tcn.is_empty() {
            let mut h = x;
            for b in &self.arch.tcn {
                h = self.block(g, h, b, vars, mode, bn, rng)?;
                observe(&b.name, g, h);
            }
            let avg = g.global_pool(h, PoolKind::Avg)?;
            if self.arch.max_pool {
                let max = g.global_pool(h, PoolKind::Max)?;
                branches.push(g.concat(&[avg, max])?);
            } else {
                branches.push(avg);
            }
            observe("tcn_pool", g, *branches.last().unwrap());
        }
        let mut h = if branches.len() == 1 {
            branches[0]
        } else {
            g.concat(&branches)?
        };
        observe("fusion_input", g, h);
        for b in &self.arch.fusion {
            h = self.block(g, h, b, vars, mode, bn, rng)?;
            observe(&b.name, g, h);
        }
        Ok(h)
    }

    /// Output of the TCN stack before pooling, `[B, T, C]`; used to probe
    /// causality.
    pub fn tcn_features(&self, x: &[f32], batch: usize) -> Result<Tensor<f32>> {
        if self.arch.tcn.is_empty() {
            return Err(Error::Structure("variant has no TCN branch".into()));
        }
        let mut g = Graph::new();
        let vars = self.bind(&mut g, false);
        let xv = g.input(
            vec![batch, self.config.seq_len, self.config.n_features],
            x.to_vec(),
        )?;
        let mut bn: Vec<_> = self.bn.iter().map(|(_, s)| s.clone()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut h = xv;
        for b in &self.arch.tcn {
            h = self.block(&mut g, h, b, &vars, Mode::Infer, &mut bn, &mut rng)?;
        }
        Ok(g.value(h))
    }

    /// Deterministic inference on `batch` windows laid out as
    /// `[batch, seq_len, n_features]`; returns `[batch, horizon]` values in
    /// normalized target space.
    pub fn forward(&self, x: &[f32], batch: usize) -> Result<Vec<f32>> {
        let mut g = Graph::new();
        let vars = self.bind(&mut g, false);
        let xv = g.input(
            vec![batch, self.config.seq_len, self.config.n_features],
            x.to_vec(),
        )?;
        let mut bn: Vec<_> = self.bn.iter().map(|(_, s)| s.clone()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let y = self.forward_graph(&mut g, xv, &vars, Mode::Infer, &mut bn, &mut rng)?;
        Ok(g.data(y).to_vec())
    }

    /// Normalized predictions for the given windows, batched internally.
    pub fn predict(&self, ds: &WindowedDataset, idx: &[usize]) -> Result<Vec<f32>> {
        const CHUNK: usize = 128;
        let mut out = Vec::with_capacity(idx.len() * self.config.horizon);
        for chunk in idx.chunks(CHUNK) {
            let (x, _) = ds.batch(chunk);
            out.extend(self.forward(&x, chunk.len())?);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ModelConfig {
        ModelConfig {
            seq_len: 16,
            n_features: 3,
            lag_window: 4,
            horizon: 5,
            conv_filters: vec![4, 4],
            dilated_filters: 6,
            lag_dense: vec![8, 6],
            fusion_dense: vec![8, 5],
            ..ModelConfig::default()
        }
    }

    #[test]
    fn full_default_forward_shape() {
        let m = Model::build(ModelConfig::default(), 42).unwrap();
        let y = m.forward(&vec![0.0; 144 * 27], 1).unwrap();
        assert_eq!(y.len(), 72);
        assert!(y.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn default_param_count() {
        let m = Model::build(ModelConfig::default(), 1).unwrap();
        assert_eq!(m.count_params(), 383_880);
        let t = Model::build(ModelConfig::default().with_variant(Variant::TcnOnly), 1).unwrap();
        assert!(t.count_params() < m.count_params());
    }

    #[test]
    fn every_variant_outputs_horizon() {
        for v in Variant::ALL {
            let m = Model::build(small().with_variant(v), 3).unwrap();
            for b in [1, 2, 5] {
                let y = m.forward(&vec![0.3; b * 16 * 3], b).unwrap();
                assert_eq!(y.len(), b * 5, "{v}");
            }
        }
    }

    #[test]
    fn seeded_builds_are_identical() {
        let a = Model::build(ModelConfig::default(), 42).unwrap();
        let b = Model::build(ModelConfig::default(), 42).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn wrong_input_shape() {
        let m = Model::build(small(), 3).unwrap();
        assert!(matches!(
            m.forward(&[0.0; 15 * 3], 1),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn lag_only_ignores_old_steps() {
        let m = Model::build(small().with_variant(Variant::LagOnly), 9).unwrap();
        let x: Vec<f32> = (0..48).map(|i| (i as f32 * 0.1).sin()).collect();
        let y0 = m.forward(&x, 1).unwrap();
        let mut x1 = x.clone();
        for v in &mut x1[..12 * 3] {
            *v += 5.0;
        }
        assert_eq!(m.forward(&x1, 1).unwrap(), y0);
        x1[15 * 3] += 1.0;
        assert_ne!(m.forward(&x1, 1).unwrap(), y0);
    }

    #[test]
    fn full_model_sees_first_step() {
        let m = Model::build(small(), 9).unwrap();
        let x: Vec<f32> = (0..48).map(|i| (i as f32 * 0.37).cos()).collect();
        let y0 = m.forward(&x, 1).unwrap();
        let mut x1 = x.clone();
        x1[0] += 1.0;
        x1[1] += 1.0;
        x1[2] += 1.0;
        assert_ne!(m.forward(&x1, 1).unwrap(), y0);
        // inference is repeatable
        assert_eq!(m.forward(&x, 1).unwrap(), y0);
    }

    #[test]
    fn no_dual_pool_uses_average_only() {
        let m = Model::build(ModelConfig::default().with_variant(Variant::NoDualPool), 1).unwrap();
        assert_eq!(m.architecture().tcn_width, 128);
        let f = Model::build(ModelConfig::default(), 1).unwrap();
        assert_eq!(f.architecture().tcn_width, 256);
    }
}
