//! Post-training int8 quantization.
//!
//! Batch norm is folded into the preceding affine layers, activations are
//! calibrated with plain min/max over a representative set, and inference
//! runs in int8 x int8 -> int32 arithmetic with fixed-point requantization
//! between layers. Only the input quantize and output dequantize touch
//! floats.

mod fixed;
mod io;

pub use fixed::{
    float_ops, reset_float_ops, rounded_div, saturate_i8, FixedMultiplier, QuantParams, Scheme,
};

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{ScalerParams, WindowedDataset};
use crate::error::{Error, Result};
use crate::model::{Block, LayerKind, Model, ModelConfig, ParamStore};
use crate::neural::{Graph, Mode, Tensor};

/// Default representative-set size.
pub const CALIBRATION_WINDOWS: usize = 1000;

/// Folds inference-mode batch norm into the preceding conv/dense layer:
/// `w' = w * s`, `b' = (b - mu) * s + beta`, `s = gamma / sqrt(var + eps)`.
pub fn fold_bn(model: &Model) -> Result<Model> {
    if model.is_folded() {
        return Err(Error::Structure("batch norm already folded".into()));
    }
    let eps = model.config.batch_norm.epsilon;
    let mut params = ParamStore::default();
    for b in model.architecture().blocks() {
        let w = model.params().require(&b.weight())?;
        let bias = model.params().require(&b.bias())?;
        if !b.batch_norm {
            params.insert(b.weight(), w.clone());
            params.insert(b.bias(), bias.clone());
            continue;
        }
        let out = b.kind.outputs();
        let gamma = model.params().require(&b.gamma())?.data();
        let beta = model.params().require(&b.beta())?.data();
        let st = model
            .bn_states()
            .iter()
            .find(|(n, _)| *n == b.bn_name())
            .map(|(_, s)| s)
            .ok_or_else(|| Error::Structure(format!("missing state {}", b.bn_name())))?;
        if gamma.len() != out || st.running_mean.len() != out || w.shape().last() != Some(&out) {
            return Err(Error::Structure(format!(
                "{} does not follow an affine layer with {out} outputs",
                b.bn_name()
            )));
        }
        let s: Vec<f64> = (0..out)
            .map(|c| gamma[c] as f64 / (st.running_var[c] as f64 + eps).sqrt())
            .collect();
        let wd: Vec<f32> = w
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| (v as f64 * s[i % out]) as f32)
            .collect();
        let bd: Vec<f32> = (0..out)
            .map(|c| {
                ((bias.data()[c] as f64 - st.running_mean[c] as f64) * s[c] + beta[c] as f64) as f32
            })
            .collect();
        params.insert(b.weight(), Tensor::new(w.shape().to_vec(), wd)?);
        params.insert(b.bias(), Tensor::new(vec![out], bd)?);
    }
    Ok(model.clone().into_folded(params))
}

/// One quantized conv or dense layer with its requantization contract.
#[derive(Debug, Clone, PartialEq)]
pub struct QLayer {
    pub name: String,
    pub kind: LayerKind,
    pub relu: bool,
    /// Same layout as the float weight (`[in, out]` or `[K, in, out]`).
    pub weight: Vec<i8>,
    pub weight_q: QuantParams,
    /// Bias at scale `input_q.scale * weight_q.scale`, zero point 0.
    pub bias: Vec<i32>,
    pub input_q: QuantParams,
    pub output_q: QuantParams,
    /// `input_q.scale * weight_q.scale / output_q.scale`.
    pub multiplier: FixedMultiplier,
}

/// Serializable per-layer quantization table entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerQuant {
    pub name: String,
    pub weight: QuantParams,
    pub input: QuantParams,
    pub output: QuantParams,
    pub multiplier: FixedMultiplier,
}

/// `acc += xv * row`.
#[inline]
fn mac_row(acc: &mut [i32], xv: i32, row: &[i8]) {
    for (a, &w) in acc.iter_mut().zip(row) {
        *a += xv * w as i32;
    }
}

impl QLayer {
    fn table(&self) -> LayerQuant {
        LayerQuant {
            name: self.name.clone(),
            weight: self.weight_q,
            input: self.input_q,
            output: self.output_q,
            multiplier: self.multiplier,
        }
    }

    #[inline]
    fn finish(&self, acc: &[i32], out: &mut Vec<i8>) {
        let zp = self.output_q.zero_point as i64;
        let floor = if self.relu { zp } else { -128 };
        out.extend(
            acc.iter()
                .map(|&a| saturate_i8((zp + self.multiplier.apply(a)).max(floor))),
        );
    }

    fn dense(&self, x: &[i8], out: &mut Vec<i8>) {
        let LayerKind::Dense { inputs, outputs } = self.kind else {
            unreachable!("dense on conv layer")
        };
        debug_assert_eq!(x.len(), inputs);
        let zx = self.input_q.zero_point;
        let mut acc = self.bias.clone();
        for (i, &xq) in x.iter().enumerate() {
            let xv = xq as i32 - zx;
            if xv == 0 {
                continue;
            }
            mac_row(&mut acc, xv, &self.weight[i * outputs..(i + 1) * outputs]);
        }
        self.finish(&acc, out);
    }

    /// Causal dilated conv over `x: [T, inputs]`; taps before step 0 read
    /// real zero, i.e. contribute nothing.
    fn conv(&self, x: &[i8], steps: usize, out: &mut Vec<i8>) {
        let LayerKind::Conv {
            inputs,
            outputs,
            kernel,
            dilation,
        } = self.kind
        else {
            unreachable!("conv on dense layer")
        };
        debug_assert_eq!(x.len(), steps * inputs);
        let zx = self.input_q.zero_point;
        let mut acc = vec![0i32; outputs];
        for t in 0..steps {
            acc.copy_from_slice(&self.bias);
            for k in 0..kernel {
                let back = (kernel - 1 - k) * dilation;
                if back > t {
                    continue;
                }
                let src = &x[(t - back) * inputs..(t - back + 1) * inputs];
                let wk = &self.weight[k * inputs * outputs..(k + 1) * inputs * outputs];
                for (ci, &xq) in src.iter().enumerate() {
                    let xv = xq as i32 - zx;
                    if xv == 0 {
                        continue;
                    }
                    mac_row(&mut acc, xv, &wk[ci * outputs..(ci + 1) * outputs]);
                }
            }
            self.finish(&acc, out);
        }
    }

    /// Largest |accumulator| any input can produce.
    fn accumulator_bound(&self) -> i64 {
        let (fan_in, _) = self.kind.fans();
        let wmax = self
            .weight
            .iter()
            .map(|&w| (w as i64).abs())
            .max()
            .unwrap_or(0);
        let bmax = self
            .bias
            .iter()
            .map(|&b| (b as i64).abs())
            .max()
            .unwrap_or(0);
        bmax + fan_in as i64 * 255 * wmax
    }
}

/// Calibrated full-integer model. Immutable; `forward` takes `&self` and
/// is safe to call concurrently.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedModel {
    pub config: ModelConfig,
    pub input_q: QuantParams,
    pub lag: Vec<QLayer>,
    pub tcn: Vec<QLayer>,
    pub max_pool: bool,
    /// Shared params of the fused branch outputs.
    pub fusion_q: QuantParams,
    /// Branch output -> fusion scale, present only when both branches exist.
    pub lag_requant: Option<FixedMultiplier>,
    pub tcn_requant: Option<FixedMultiplier>,
    pub fusion: Vec<QLayer>,
    pub scaler: Option<ScalerParams>,
}

#[derive(Default)]
struct Ranges(HashMap<String, (f64, f64)>);

impl Ranges {
    fn observe(&mut self, name: &str, data: &[f32]) {
        let e = self
            .0
            .entry(name.to_string())
            .or_insert((f64::INFINITY, f64::NEG_INFINITY));
        for &v in data {
            e.0 = e.0.min(v as f64);
            e.1 = e.1.max(v as f64);
        }
    }

    fn params(&self, name: &str) -> Result<QuantParams> {
        let &(lo, hi) = self
            .0
            .get(name)
            .ok_or_else(|| Error::Internal(format!("activation {name} never observed")))?;
        if !(lo.is_finite() && hi.is_finite()) {
            return Err(Error::Calibration(format!(
                "activation {name} is not finite"
            )));
        }
        Ok(QuantParams::affine(lo, hi))
    }
}

fn quantize_layer(
    model: &Model,
    b: &Block,
    input_q: QuantParams,
    output_q: QuantParams,
) -> Result<QLayer> {
    let w = model.params().require(&b.weight())?.data();
    let bias = model.params().require(&b.bias())?.data();
    let max_abs = w.iter().fold(0f64, |m, &v| m.max((v as f64).abs()));
    let weight_q = QuantParams::symmetric(max_abs);
    let weight: Vec<i8> = w.iter().map(|&v| weight_q.quantize(v as f64)).collect();
    let bias_scale = input_q.scale * weight_q.scale;
    let bias = bias
        .iter()
        .map(|&v| {
            let q = (v as f64 / bias_scale).round();
            if q.abs() > i32::MAX as f64 {
                Err(Error::Calibration(format!(
                    "{} bias overflows int32",
                    b.name
                )))
            } else {
                Ok(q as i32)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let layer = QLayer {
        name: b.name.clone(),
        kind: b.kind,
        relu: b.relu,
        weight,
        weight_q,
        bias,
        input_q,
        output_q,
        multiplier: FixedMultiplier::from_real(bias_scale / output_q.scale)?,
    };
    if layer.accumulator_bound() > i32::MAX as i64 {
        return Err(Error::Calibration(format!(
            "{} accumulator may overflow int32",
            b.name
        )));
    }
    Ok(layer)
}

/// Quantizes a BN-folded model, calibrating activation ranges over
/// `windows` (`n` windows laid out `[n, seq_len, n_features]`).
pub fn calibrate(model: &Model, windows: &[f32], n: usize) -> Result<QuantizedModel> {
    if !model.is_folded() {
        return Err(Error::State("calibration needs a BN-folded model".into()));
    }
    if n == 0 {
        return Err(Error::Calibration(
            "at least one representative window required".into(),
        ));
    }
    let c = &model.config;
    let per = c.seq_len * c.n_features;
    if windows.len() != n * per {
        return Err(Error::Dimension(format!(
            "{} values for {n} windows of {per}",
            windows.len()
        )));
    }
    let mut ranges = Ranges::default();
    ranges.observe("input", windows);
    const CHUNK: usize = 64;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for start in (0..n).step_by(CHUNK) {
        let b = CHUNK.min(n - start);
        let mut g = Graph::new();
        let vars = model.bind(&mut g, false);
        let x = g.input(
            vec![b, c.seq_len, c.n_features],
            windows[start * per..(start + b) * per].to_vec(),
        )?;
        model.forward_observed(
            &mut g,
            x,
            &vars,
            Mode::Infer,
            &mut [],
            &mut rng,
            &mut |name, g, v| ranges.observe(name, g.data(v)),
        )?;
    }

    let arch = model.architecture();
    let input_q = ranges.params("input")?;
    let chain = |blocks: &[Block], mut q: QuantParams| -> Result<Vec<QLayer>> {
        let mut out = Vec::with_capacity(blocks.len());
        for b in blocks {
            let oq = ranges.params(&b.name)?;
            out.push(quantize_layer(model, b, q, oq)?);
            q = oq;
        }
        Ok(out)
    };
    let lag = chain(&arch.lag, input_q)?;
    let tcn = chain(&arch.tcn, input_q)?;
    let lag_out = lag.last().map(|l| l.output_q);
    let tcn_out = tcn.last().map(|l| l.output_q);
    let (fusion_q, lag_requant, tcn_requant) = match (lag_out, tcn_out) {
        (Some(l), Some(t)) => {
            let (ll, lh) = l.range();
            let (tl, th) = t.range();
            let f = QuantParams::affine(ll.min(tl), lh.max(th));
            (
                f,
                Some(FixedMultiplier::from_real(l.scale / f.scale)?),
                Some(FixedMultiplier::from_real(t.scale / f.scale)?),
            )
        }
        (Some(q), None) | (None, Some(q)) => (q, None, None),
        (None, None) => return Err(Error::Structure("model has no branch".into())),
    };
    let fusion = chain(&arch.fusion, fusion_q)?;
    Ok(QuantizedModel {
        config: c.clone(),
        input_q,
        lag,
        tcn,
        max_pool: arch.max_pool,
        fusion_q,
        lag_requant,
        tcn_requant,
        fusion,
        scaler: model.scaler.clone(),
    })
}

/// Evenly spaced representative windows (at most `max`) from `ds`.
pub fn representative_set(ds: &WindowedDataset, max: usize) -> (Vec<f32>, usize) {
    let n = ds.n_windows().min(max);
    let idx: Vec<usize> = (0..n).map(|i| i * ds.n_windows() / n.max(1)).collect();
    (ds.batch(&idx).0, n)
}

/// Folds BN if needed and calibrates on up to `max` windows of `ds`.
pub fn quantize_model(model: &Model, ds: &WindowedDataset, max: usize) -> Result<QuantizedModel> {
    let folded = if model.is_folded() {
        model.clone()
    } else {
        fold_bn(model)?
    };
    let (x, n) = representative_set(ds, max);
    calibrate(&folded, &x, n)
}

impl QuantizedModel {
    pub fn layers(&self) -> impl Iterator<Item = &QLayer> {
        self.lag.iter().chain(&self.tcn).chain(&self.fusion)
    }

    /// Activation params of the final (output) layer.
    pub fn output_q(&self) -> QuantParams {
        self.fusion.last().expect("output layer").output_q
    }

    pub fn quantize_input(&self, window: &[f32]) -> Vec<i8> {
        fixed::count_float_ops(window.len());
        window
            .iter()
            .map(|&v| self.input_q.quantize(v as f64))
            .collect()
    }

    pub fn dequantize_output(&self, q: &[i8]) -> Vec<f32> {
        fixed::count_float_ops(q.len());
        let p = self.output_q();
        q.iter().map(|&v| p.dequantize(v) as f32).collect()
    }

    /// Integer-only forward of one quantized window `[seq_len, n_features]`
    /// to `horizon` int8 outputs.
    pub fn forward_int(&self, x: &[i8]) -> Result<Vec<i8>> {
        self.forward_int_observed(x, &mut |_, _| {})
    }

    /// [`QuantizedModel::forward_int`] reporting every layer output plus
    /// `"fusion_input"`, as in [`Model::forward_observed`].
    pub fn forward_int_observed(
        &self,
        x: &[i8],
        observe: &mut dyn FnMut(&str, &[i8]),
    ) -> Result<Vec<i8>> {
        let c = &self.config;
        if x.len() != c.seq_len * c.n_features {
            return Err(Error::Dimension(format!(
                "window must hold {} values, got {}",
                c.seq_len * c.n_features,
                x.len()
            )));
        }
        let mut fused: Vec<i8> = Vec::new();
        if !self.lag.is_empty() {
            let mut h = x[(c.seq_len - c.lag_window) * c.n_features..].to_vec();
            for l in &self.lag {
                let mut next = Vec::with_capacity(l.kind.outputs());
                l.dense(&h, &mut next);
                observe(&l.name, &next);
                h = next;
            }
            push_requant(
                &mut fused,
                &h,
                self.lag_requant,
                self.lag.last().unwrap().output_q,
                self.fusion_q,
            );
        }
        if !self.tcn.is_empty() {
            let mut h = x.to_vec();
            for l in &self.tcn {
                let mut next = Vec::with_capacity(c.seq_len * l.kind.outputs());
                l.conv(&h, c.seq_len, &mut next);
                observe(&l.name, &next);
                h = next;
            }
            let ch = self.tcn.last().unwrap().kind.outputs();
            let mut pooled = Vec::with_capacity(2 * ch);
            for o in 0..ch {
                let sum: i32 = (0..c.seq_len).map(|t| h[t * ch + o] as i32).sum();
                pooled.push(rounded_div(sum, c.seq_len as i32) as i8);
            }
            if self.max_pool {
                for o in 0..ch {
                    pooled.push((0..c.seq_len).map(|t| h[t * ch + o]).max().unwrap());
                }
            }
            push_requant(
                &mut fused,
                &pooled,
                self.tcn_requant,
                self.tcn.last().unwrap().output_q,
                self.fusion_q,
            );
        }
        observe("fusion_input", &fused);
        let mut h = fused;
        for l in &self.fusion {
            let mut next = Vec::with_capacity(l.kind.outputs());
            l.dense(&h, &mut next);
            observe(&l.name, &next);
            h = next;
        }
        Ok(h)
    }

    /// Normalized-space forecasts for `batch` float windows, mirroring
    /// [`Model::forward`].
    pub fn forward(&self, x: &[f32], batch: usize) -> Result<Vec<f32>> {
        let per = self.config.seq_len * self.config.n_features;
        if x.len() != batch * per {
            return Err(Error::Dimension(format!(
                "{} values for {batch} windows",
                x.len()
            )));
        }
        let mut out = Vec::with_capacity(batch * self.config.horizon);
        for w in x.chunks(per) {
            let q = self.forward_int(&self.quantize_input(w))?;
            out.extend(self.dequantize_output(&q));
        }
        Ok(out)
    }

    pub fn predict(&self, ds: &WindowedDataset, idx: &[usize]) -> Result<Vec<f32>> {
        let mut out = Vec::with_capacity(idx.len() * self.config.horizon);
        for &i in idx {
            out.extend(self.forward(ds.input(i), 1)?);
        }
        Ok(out)
    }

    /// Forecast in kW for one normalized window.
    pub fn forecast_kw(&self, window: &[f32]) -> Result<Vec<f64>> {
        let scaler = self
            .scaler
            .as_ref()
            .ok_or_else(|| Error::State("quantized model carries no scaler".into()))?;
        Ok(self
            .forward(window, 1)?
            .into_iter()
            .map(|y| scaler.invert_target(y as f64))
            .collect())
    }

    pub fn weight_bytes(&self) -> usize {
        self.layers()
            .map(|l| l.weight.len() + 4 * l.bias.len())
            .sum()
    }
}

fn push_requant(
    out: &mut Vec<i8>,
    h: &[i8],
    m: Option<FixedMultiplier>,
    from: QuantParams,
    to: QuantParams,
) {
    match m {
        None => out.extend_from_slice(h),
        Some(m) => out.extend(
            h.iter()
                .map(|&q| saturate_i8(to.zero_point as i64 + m.apply(q as i32 - from.zero_point))),
        ),
    }
}


#[cfg(test)]
mod tests {
    use super::tests_support::*;
    use super::*;
    use crate::model::Variant;

    #[test]
    fn folding_preserves_inference() {
        for v in Variant::ALL {
            let m = trained_like(v, 11);
            let f = fold_bn(&m).unwrap();
            assert!(f.is_folded());
            assert!(f.bn_states().is_empty());
            let x = windows(&m.config, 8, 3);
            let a = m.forward(&x, 8).unwrap();
            let b = f.forward(&x, 8).unwrap();
            let diff = a
                .iter()
                .zip(&b)
                .map(|(p, q)| (p - q).abs())
                .fold(0f32, f32::max);
            assert!(diff < 1e-5, "{v}: {diff}");
            assert!(matches!(fold_bn(&f), Err(Error::Structure(_))));
        }
    }

    #[test]
    fn calibration_needs_samples_and_folding() {
        let m = trained_like(Variant::Full, 2);
        assert!(matches!(calibrate(&m, &[], 0), Err(Error::State(_))));
        let f = fold_bn(&m).unwrap();
        assert!(matches!(calibrate(&f, &[], 0), Err(Error::Calibration(_))));
    }

    #[test]
    fn integer_path_tracks_float_path() {
        // the 100 windows double as the representative set, so the bound
        // measures propagated rounding rather than out-of-range clipping
        for v in Variant::ALL {
            let cfg = ModelConfig::default().with_variant(v);
            let m = fold_bn(&Model::build(cfg.clone(), 21).unwrap()).unwrap();
            let x = windows(&cfg, 100, 6);
            let q = calibrate(&m, &x, 100).unwrap();
            let a = m.forward(&x, 100).unwrap();
            let b = q.forward(&x, 100).unwrap();
            let bound = 6.0 * q.output_q().scale;
            let err = a
                .iter()
                .zip(&b)
                .map(|(p, r)| (p - r).abs() as f64)
                .fold(0.0, f64::max);
            assert!(err <= bound, "{v}: {err} > {bound}");
        }
    }

    #[test]
    fn core_runs_no_float_ops() {
        let m = fold_bn(&trained_like(Variant::Full, 4)).unwrap();
        let cal = windows(&m.config, 20, 1);
        let q = calibrate(&m, &cal, 20).unwrap();
        let xq = q.quantize_input(&cal[..m.config.seq_len * m.config.n_features]);
        reset_float_ops();
        q.forward_int(&xq).unwrap();
        assert_eq!(float_ops(), 0);
        q.forward(&cal[..xq.len()], 1).unwrap();
        assert_eq!(float_ops() as usize, xq.len() + m.config.horizon);
    }

    #[test]
    fn weights_are_symmetric_and_in_range() {
        let m = fold_bn(&trained_like(Variant::Full, 8)).unwrap();
        let cal = windows(&m.config, 10, 1);
        let q = calibrate(&m, &cal, 10).unwrap();
        for l in q.layers() {
            assert_eq!(l.weight_q.zero_point, 0);
            assert!(l.weight.iter().all(|&w| w >= -127));
            assert!(l.weight.iter().any(|&w| w.abs() == 127));
            if l.relu {
                assert_eq!(l.output_q.zero_point, -128);
            }
            let want = l.input_q.scale * l.weight_q.scale / l.output_q.scale;
            assert!((l.multiplier.to_real() - want).abs() < want * 1e-8);
        }
    }
}
