//! Int8 export in the shared model container (`kind = "int8"`).
//!
//! Tensors: `{layer}.weight` as i8, `{layer}.bias` as i32. The header
//! `meta` carries the config, scaler and the quantization table.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{FixedMultiplier, LayerQuant, QLayer, QuantParams, QuantizedModel};
use crate::dataset::ScalerParams;
use crate::error::{Error, Result};
use crate::features::FEATURE_COLUMNS;
use crate::model::io::{Container, Payload, StoredTensor};
use crate::model::{Architecture, Block, ModelConfig};

#[derive(Debug, Clone, Serialize, Deserialize)]
struct QuantMeta {
    config: ModelConfig,
    feature_columns: Vec<String>,
    scaler: Option<ScalerParams>,
    input: QuantParams,
    fusion: QuantParams,
    lag_requant: Option<FixedMultiplier>,
    tcn_requant: Option<FixedMultiplier>,
    layers: Vec<LayerQuant>,
}

fn format_err(section: &'static str, msg: String) -> Error {
    Error::Format { section, msg }
}

impl QuantizedModel {
    pub fn to_container(&self) -> Result<Container> {
        let mut tensors = Vec::new();
        for l in self.layers() {
            tensors.push(StoredTensor {
                name: format!("{}.weight", l.name),
                shape: l.kind.weight_shape(),
                payload: Payload::I8(l.weight.clone()),
            });
            tensors.push(StoredTensor {
                name: format!("{}.bias", l.name),
                shape: vec![l.bias.len()],
                payload: Payload::I32(l.bias.clone()),
            });
        }
        let meta = QuantMeta {
            config: self.config.clone(),
            feature_columns: FEATURE_COLUMNS.iter().map(|s| s.to_string()).collect(),
            scaler: self.scaler.clone(),
            input: self.input_q,
            fusion: self.fusion_q,
            lag_requant: self.lag_requant,
            tcn_requant: self.tcn_requant,
            layers: self.layers().map(QLayer::table).collect(),
        };
        Ok(Container {
            kind: "int8".into(),
            meta: serde_json::to_value(meta)?,
            tensors,
        })
    }

    pub fn from_container(mut c: Container) -> Result<Self> {
        if c.kind != "int8" {
            return Err(format_err(
                "header",
                format!("expected an int8 model, found kind {:?}", c.kind),
            ));
        }
        let meta: QuantMeta = serde_json::from_value(c.meta.clone())
            .map_err(|e| format_err("header", e.to_string()))?;
        if meta.feature_columns != FEATURE_COLUMNS {
            return Err(format_err(
                "header",
                "feature column order differs from this build".into(),
            ));
        }
        meta.config.validate()?;
        if let Some(s) = &meta.scaler {
            s.validate()?;
        }
        let arch = Architecture::from_config(&meta.config);
        let mut table = meta.layers.into_iter();
        let mut build = |blocks: &[Block]| -> Result<Vec<QLayer>> {
            blocks
                .iter()
                .map(|b| {
                    let t = table.next().filter(|t| t.name == b.name).ok_or_else(|| {
                        format_err("header", format!("no quant entry for {}", b.name))
                    })?;
                    let weight = match c.take(&b.weight()) {
                        Some(StoredTensor {
                            shape,
                            payload: Payload::I8(v),
                            ..
                        }) if shape == b.kind.weight_shape() => v,
                        _ => {
                            return Err(format_err(
                                "tensor directory",
                                format!("bad i8 tensor {}", b.weight()),
                            ))
                        }
                    };
                    let bias = match c.take(&b.bias()) {
                        Some(StoredTensor {
                            payload: Payload::I32(v),
                            ..
                        }) if v.len() == b.kind.outputs() => v,
                        _ => {
                            return Err(format_err(
                                "tensor directory",
                                format!("bad i32 tensor {}", b.bias()),
                            ))
                        }
                    };
                    Ok(QLayer {
                        name: b.name.clone(),
                        kind: b.kind,
                        relu: b.relu,
                        weight,
                        weight_q: t.weight,
                        bias,
                        input_q: t.input,
                        output_q: t.output,
                        multiplier: t.multiplier,
                    })
                })
                .collect()
        };
        let lag = build(&arch.lag)?;
        let tcn = build(&arch.tcn)?;
        let fusion = build(&arch.fusion)?;
        if table.next().is_some() || !c.tensors.is_empty() {
            return Err(format_err(
                "tensor directory",
                "unexpected extra layers".into(),
            ));
        }
        let both = !lag.is_empty() && !tcn.is_empty();
        if both != (meta.lag_requant.is_some() && meta.tcn_requant.is_some()) {
            return Err(format_err(
                "header",
                "branch requantization table inconsistent".into(),
            ));
        }
        Ok(QuantizedModel {
            config: meta.config,
            input_q: meta.input,
            lag,
            tcn,
            max_pool: arch.max_pool,
            fusion_q: meta.fusion,
            lag_requant: meta.lag_requant,
            tcn_requant: meta.tcn_requant,
            fusion,
            scaler: meta.scaler,
        })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.to_container()?.encode()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Self::from_container(Container::decode(bytes)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container()?.write(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(Container::read(path)?)
    }
}
