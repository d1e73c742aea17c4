//! Layer layout derived from a [`ModelConfig`].
//!
//! Every affine block is `affine -> [BN] -> [ReLU] -> [dropout]`. The
//! batch norm sits directly on the affine output so it can be folded
//! into the preceding weights.

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum LayerKind {
    Dense {
        inputs: usize,
        outputs: usize,
    },
    Conv {
        inputs: usize,
        outputs: usize,
        kernel: usize,
        dilation: usize,
    },
}

impl LayerKind {
    pub fn outputs(&self) -> usize {
        match *self {
            LayerKind::Dense { outputs, .. } | LayerKind::Conv { outputs, .. } => outputs,
        }
    }

    pub fn weight_shape(&self) -> Vec<usize> {
        match *self {
            LayerKind::Dense { inputs, outputs } => vec![inputs, outputs],
            LayerKind::Conv {
                inputs,
                outputs,
                kernel,
                ..
            } => vec![kernel, inputs, outputs],
        }
    }

    /// `(fan_in, fan_out)` of the flattened kernel.
    pub fn fans(&self) -> (usize, usize) {
        match *self {
            LayerKind::Dense { inputs, outputs } => (inputs, outputs),
            LayerKind::Conv {
                inputs,
                outputs,
                kernel,
                ..
            } => (kernel * inputs, kernel * outputs),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub name: String,
    pub kind: LayerKind,
    pub batch_norm: bool,
    pub relu: bool,
    pub dropout: bool,
}

impl Block {
    pub fn weight(&self) -> String {
        format!("{}.weight", self.name)
    }

    pub fn bias(&self) -> String {
        format!("{}.bias", self.name)
    }

    pub fn bn_name(&self) -> String {
        format!("{}_bn", self.name)
    }

    pub fn gamma(&self) -> String {
        format!("{}_bn.gamma", self.name)
    }

    pub fn beta(&self) -> String {
        format!("{}_bn.beta", self.name)
    }
}

/// Full layer layout of one variant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Architecture {
    pub lag: Vec<Block>,
    pub tcn: Vec<Block>,
    pub max_pool: bool,
    /// Fusion blocks; the last one is the linear output head.
    pub fusion: Vec<Block>,
    pub lag_width: usize,
    pub tcn_width: usize,
}

impl Architecture {
    pub fn from_config(c: &ModelConfig) -> Self {
        let v = c.variant;
        let hidden = |name: String, kind, bn| Block {
            name,
            kind,
            batch_norm: bn,
            relu: true,
            dropout: true,
        };

        let mut lag = Vec::new();
        let mut lag_width = 0;
        if v.has_lag() {
            let mut inputs = c.lag_window * c.n_features;
            for (i, &out) in c.lag_dense.iter().enumerate() {
                lag.push(hidden(
                    format!("lag_dense{}", i + 1),
                    LayerKind::Dense {
                        inputs,
                        outputs: out,
                    },
                    true,
                ));
                inputs = out;
            }
            lag_width = inputs;
        }

        let mut tcn = Vec::new();
        let mut tcn_width = 0;
        if v.has_tcn() {
            let mut inputs = c.n_features;
            for (i, &out) in c.conv_filters.iter().enumerate() {
                tcn.push(hidden(
                    format!("tcn_conv{}", i + 1),
                    LayerKind::Conv {
                        inputs,
                        outputs: out,
                        kernel: c.kernel_size,
                        dilation: 1,
                    },
                    true,
                ));
                inputs = out;
            }
            if v.has_dilated() {
                tcn.push(hidden(
                    "tcn_dilated".into(),
                    LayerKind::Conv {
                        inputs,
                        outputs: c.dilated_filters,
                        kernel: c.kernel_size,
                        dilation: c.dilation,
                    },
                    true,
                ));
                inputs = c.dilated_filters;
            }
            tcn_width = if v.has_max_pool() { 2 * inputs } else { inputs };
        }

        let mut fusion = Vec::new();
        let mut inputs = lag_width + tcn_width;
        let n = c.fusion_dense.len();
        for (i, &out) in c.fusion_dense.iter().enumerate() {
            fusion.push(hidden(
                format!("fusion_dense{}", i + 1),
                LayerKind::Dense {
                    inputs,
                    outputs: out,
                },
                i + 1 < n,
            ));
            inputs = out;
        }
        fusion.push(Block {
            name: "output".into(),
            kind: LayerKind::Dense {
                inputs,
                outputs: c.horizon,
            },
            batch_norm: false,
            relu: false,
            dropout: false,
        });

        Architecture {
            lag,
            tcn,
            max_pool: v.has_max_pool(),
            fusion,
            lag_width,
            tcn_width,
        }
    }

    pub fn blocks(&self) -> impl Iterator<Item = &Block> {
        self.lag.iter().chain(&self.tcn).chain(&self.fusion)
    }
}
