//! Mini-batch Adam training with MSE loss and early stopping on the
//! validation loss. Best-epoch weights are restored at the end.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::WindowedDataset;
use crate::error::{Error, Result};
use crate::model::{Model, ParamStore};
use crate::neural::{Graph, Mode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub early_stop_patience: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub seed: u64,
    pub shuffle: bool,
    /// Caps the number of batches per epoch (the first ones of the
    /// shuffled order). `None` uses every training window.
    pub steps_per_epoch: Option<usize>,
    /// Caps the validation windows scored per epoch (evenly spaced).
    pub val_max_windows: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.0005,
            batch_size: 16,
            max_epochs: 400,
            early_stop_patience: 50,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            seed: 42,
            shuffle: true,
            steps_per_epoch: None,
            val_max_windows: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = self.learning_rate > 0.0
            && self.batch_size > 0
            && self.max_epochs > 0
            && self.early_stop_patience > 0
            && self.adam_epsilon > 0.0
            && self.steps_per_epoch != Some(0)
            && self.val_max_windows != Some(0);
        if !positive {
            return Err(Error::Config(
                "training hyperparameters must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(Error::Config("Adam betas must lie in [0, 1)".into()));
        }
        if self.early_stop_patience > self.max_epochs {
            return Err(Error::Config(format!(
                "patience {} exceeds max_epochs {}",
                self.early_stop_patience, self.max_epochs
            )));
        }
        Ok(())
    }
}

/// First/second moment estimates per parameter tensor.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Vec<f32>>,
    pub v: Vec<Vec<f32>>,
}

impl AdamState {
    pub fn new(params: &ParamStore) -> Self {
        let zeros = || params.iter().map(|(_, t)| vec![0f32; t.len()]).collect();
        AdamState {
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }
}

/// Moments of parameters whose gradient stays at zero decay into the
/// subnormal range, where float arithmetic is orders of magnitude slower.
/// Such values are far below any effect on the update, so they are
/// flushed to zero.
#[inline]
fn flush(x: f32) -> f32 {
    if x.abs() < f32::MIN_POSITIVE {
        0.0
    } else {
        x
    }
}

/// One bias-corrected Adam update over every tensor of `params`.
///
/// `grads[i]` belongs to the i-th tensor of the store. Non-finite
/// gradients abort before anything is modified.
pub fn adam_step(
    params: &mut ParamStore,
    grads: &[Vec<f32>],
    state: &mut AdamState,
    cfg: &TrainConfig,
) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(Error::Contract(format!(
            "{} gradients / {} moment buffers for {} parameters",
            grads.len(),
            state.m.len(),
            params.len()
        )));
    }
    for (name, g) in params.names().iter().zip(grads) {
        if let Some(i) = g.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite gradient in {name} at element {i}"
            )));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
    let c1 = (1.0 - b1.powi(t)) as f32;
    let c2 = (1.0 - b2.powi(t)) as f32;
    let (b1, b2) = (b1 as f32, b2 as f32);
    let lr = cfg.learning_rate as f32;
    let eps = cfg.adam_epsilon as f32;
    for (k, tensor) in params.tensors_mut().iter_mut().enumerate() {
        let (m, v, g) = (&mut state.m[k], &mut state.v[k], &grads[k]);
        for (((p, m), v), &g) in tensor
            .data_mut()
            .iter_mut()
            .zip(m.iter_mut())
            .zip(v.iter_mut())
            .zip(g)
        {
            *m = flush(b1 * *m + (1.0 - b1) * g);
            *v = flush(b2 * *v + (1.0 - b2) * g * g);
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Wall time; not serialized so histories stay reproducible.
    #[serde(skip)]
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose weights were restored.
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_early: bool,
}

/// Batches of one epoch: consecutive chunks of `order`; a trailing
/// single-window batch is merged into the previous one.
pub fn epoch_batches(order: &[usize], batch_size: usize) -> Vec<Vec<usize>> {
    let mut batches: Vec<Vec<usize>> = order.chunks(batch_size).map(|c| c.to_vec()).collect();
    if batches.len() > 1 && batches.last().map(|b| b.len()) == Some(1) {
        let last = batches.pop().unwrap();
        batches.last_mut().unwrap().extend(last);
    }
    batches
}

/// Mean squared error of the model over windows `idx`, in normalized space.
pub fn evaluate_mse(model: &Model, ds: &WindowedDataset, idx: &[usize]) -> Result<f64> {
    let pred = model.predict(ds, idx)?;
    let h = ds.shape.horizon;
    let mut sum = 0.0f64;
    for (k, &i) in idx.iter().enumerate() {
        for (p, &t) in pred[k * h..(k + 1) * h].iter().zip(ds.target(i)) {
            let d = *p as f64 - t as f64;
            sum += d * d;
        }
    }
    Ok(sum / (idx.len() * h) as f64)
}

/// Evenly spaced subset of `0..n` of at most `cap` indices.
pub fn spaced_indices(n: usize, cap: Option<usize>) -> Vec<usize> {
    match cap {
        Some(c) if c < n => (0..c).map(|k| k * n / c).collect(),
        _ => (0..n).collect(),
    }
}

/// One optimization step on a batch; returns the batch loss.
pub fn train_step(
    model: &mut Model,
    ds: &WindowedDataset,
    batch: &[usize],
    adam: &mut AdamState,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let c = &model.config;
    let (x, y) = ds.batch(batch);
    let mut g = Graph::new();
    let vars = model.bind(&mut g, true);
    let xv = g.input(vec![batch.len(), c.seq_len, c.n_features], x)?;
    let yv = g.input(vec![batch.len(), c.horizon], y)?;
    let mut bn: Vec<_> = model.bn_states().iter().map(|(_, s)| s.clone()).collect();
    let pred = model.forward_graph(&mut g, xv, &vars, Mode::Train, &mut bn, rng)?;
    let loss = g.mse_loss(pred, yv)?;
    g.backward(loss)?;
    let grads: Vec<Vec<f32>> = vars
        .iter()
        .map(|&v| g.grad(v).map(|s| s.to_vec()).unwrap_or_default())
        .collect();
    let grads: Vec<Vec<f32>> = grads
        .into_iter()
        .zip(model.params().iter())
        .map(|(g, (_, t))| if g.is_empty() { vec![0.0; t.len()] } else { g })
        .collect();
    adam_step(model.params_mut(), &grads, adam, cfg)?;
    for ((_, st), new) in model.bn_states_mut().iter_mut().zip(bn) {
        *st = new;
    }
    Ok(g.data(loss)[0] as f64)
}

/// Trains `model` and returns the best-validation weights with the
/// per-epoch history. `on_epoch` sees every finished epoch.
pub fn train(
    mut model: Model,
    train_ds: &WindowedDataset,
    val_ds: &WindowedDataset,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<(Model, TrainHistory)> {
    cfg.validate()?;
    if train_ds.n_windows() < 2 {
        return Err(Error::Config(format!(
            "training split needs at least 2 windows, has {}",
            train_ds.n_windows()
        )));
    }
    if val_ds.is_empty() {
        return Err(Error::Config("validation split has no windows".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = AdamState::new(model.params());
    let val_idx = spaced_indices(val_ds.n_windows(), cfg.val_max_windows);
    let mut order: Vec<usize> = (0..train_ds.n_windows()).collect();

    let mut epochs = Vec::new();
    let mut best: Option<(usize, f64, Model)> = None;
    let mut since_best = 0;
    let mut stopped_early = false;
    for epoch in 1..=cfg.max_epochs {
        let started = Instant::now();
        if cfg.shuffle {
            order.shuffle(&mut rng);
        }
        let mut batches = epoch_batches(&order, cfg.batch_size);
        if let Some(s) = cfg.steps_per_epoch {
            batches.truncate(s);
        }
        let (mut loss_sum, mut seen) = (0.0, 0usize);
        for b in &batches {
            let l = train_step(&mut model, train_ds, b, &mut adam, cfg, &mut rng)?;
            loss_sum += l * b.len() as f64;
            seen += b.len();
        }
        let val_loss = evaluate_mse(&model, val_ds, &val_idx)?;
        let rec = EpochRecord {
            epoch,
            train_loss: loss_sum / seen as f64,
            val_loss,
            seconds: started.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {epoch} train_loss {:.6} val_loss {:.6} ({:.1}s)",
            rec.train_loss,
            rec.val_loss,
            rec.seconds
        );
        on_epoch(&rec);
        epochs.push(rec);

        if best.as_ref().is_none_or(|(_, b, _)| val_loss < *b) {
            best = Some((epoch, val_loss, model.clone()));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.early_stop_patience {
                stopped_early = epoch < cfg.max_epochs;
                break;
            }
        }
    }
    let (best_epoch, best_val_loss, best_model) = best.expect("at least one epoch ran");
    Ok((
        best_model,
        TrainHistory {
            epochs,
            best_epoch,
            best_val_loss,
            stopped_early,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::Tensor;

    fn scalar_store(v: f32) -> ParamStore {
        let mut s = ParamStore::default();
        s.insert("p".into(), Tensor::new(vec![1], vec![v]).unwrap());
        s
    }

    #[test]
    fn zero_gradient_keeps_params() {
        let mut s = scalar_store(0.7);
        let mut st = AdamState::new(&s);
        adam_step(&mut s, &[vec![0.0]], &mut st, &TrainConfig::default()).unwrap();
        assert_eq!(s.get("p").unwrap().data(), &[0.7]);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut s = scalar_store(1.0);
        let mut st = AdamState::new(&s);
        adam_step(&mut s, &[vec![1.0]], &mut st, &TrainConfig::default()).unwrap();
        let p = s.get("p").unwrap().data()[0];
        assert!((p - 0.9995).abs() < 1e-6, "{p}");
    }

    #[test]
    fn nan_gradient_names_parameter() {
        let mut s = scalar_store(1.0);
        let mut st = AdamState::new(&s);
        let err = adam_step(&mut s, &[vec![f32::NAN]], &mut st, &TrainConfig::default())
            .unwrap_err()
            .to_string();
        assert!(err.contains("p"), "{err}");
        assert_eq!(s.get("p").unwrap().data(), &[1.0]);
    }

    #[test]
    fn batches_partition_and_merge_singletons() {
        let order: Vec<usize> = (0..33).rev().collect();
        let b = epoch_batches(&order, 16);
        assert_eq!(b.iter().map(|x| x.len()).collect::<Vec<_>>(), vec![16, 17]);
        let mut all: Vec<usize> = b.concat();
        all.sort();
        assert_eq!(all, (0..33).collect::<Vec<_>>());
        let b = epoch_batches(&(0..34).collect::<Vec<_>>(), 16);
        assert_eq!(
            b.iter().map(|x| x.len()).collect::<Vec<_>>(),
            vec![16, 16, 2]
        );
    }

    #[test]
    fn config_checks() {
        assert!(TrainConfig::default().validate().is_ok());
        let c = TrainConfig {
            early_stop_patience: 500,
            ..TrainConfig::default()
        };
        assert!(c.validate().is_err());
    }
}
