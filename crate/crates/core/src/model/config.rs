use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neural::BatchNormConfig;

/// Architecture variants used by the ablation study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Full,
    LagOnly,
    TcnOnly,
    NoDilated,
    NoDualPool,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Full,
        Variant::LagOnly,
        Variant::TcnOnly,
        Variant::NoDilated,
        Variant::NoDualPool,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::LagOnly => "lag_only",
            Variant::TcnOnly => "tcn_only",
            Variant::NoDilated => "no_dilated",
            Variant::NoDualPool => "no_dual_pool",
        }
    }

    pub fn has_lag(self) -> bool {
        self != Variant::TcnOnly
    }

    pub fn has_tcn(self) -> bool {
        self != Variant::LagOnly
    }

    pub fn has_dilated(self) -> bool {
        self != Variant::NoDilated
    }

    pub fn has_max_pool(self) -> bool {
        self != Variant::NoDualPool
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown variant {s:?} (expected one of full, lag_only, tcn_only, no_dilated, no_dual_pool)"
                ))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub seq_len: usize,
    pub n_features: usize,
    pub lag_window: usize,
    pub horizon: usize,
    pub conv_filters: Vec<usize>,
    pub dilated_filters: usize,
    pub kernel_size: usize,
    pub dilation: usize,
    pub lag_dense: Vec<usize>,
    pub fusion_dense: Vec<usize>,
    pub dropout: f64,
    pub variant: Variant,
    pub batch_norm: BatchNormConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            seq_len: 144,
            n_features: 27,
            lag_window: 24,
            horizon: 72,
            conv_filters: vec![64, 64],
            dilated_filters: 128,
            kernel_size: 3,
            dilation: 2,
            lag_dense: vec![256, 128],
            fusion_dense: vec![256, 128],
            dropout: 0.1,
            variant: Variant::Full,
            batch_norm: BatchNormConfig::default(),
        }
    }
}

impl ModelConfig {
    pub fn with_variant(mut self, v: Variant) -> Self {
        self.variant = v;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.seq_len == 0 || self.n_features == 0 || self.horizon == 0 {
            return bad("seq_len, n_features and horizon must be >= 1".into());
        }
        if self.lag_window == 0 || self.lag_window > self.seq_len {
            return bad(format!(
                "lag_window {} must be in 1..={}",
                self.lag_window, self.seq_len
            ));
        }
        if self.kernel_size == 0 || self.dilation == 0 || self.dilated_filters == 0 {
            return bad("kernel_size, dilation and dilated_filters must be >= 1".into());
        }
        let lists = [&self.conv_filters, &self.lag_dense, &self.fusion_dense];
        if lists.iter().any(|l| l.is_empty() || l.contains(&0)) {
            return bad("layer size lists must be non-empty with sizes >= 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
        }
        assert!(matches!("lag".parse::<Variant>(), Err(Error::Config(_))));
    }

    #[test]
    fn config_validation() {
        assert!(ModelConfig::default().validate().is_ok());
        let c = ModelConfig {
            lag_window: 200,
            ..ModelConfig::default()
        };
        assert!(c.validate().is_err());
        let c = ModelConfig {
            horizon: 0,
            ..ModelConfig::default()
        };
        assert!(c.validate().is_err());
        let json = r#"{"seq_len": 144, "bogus": 1}"#;
        assert!(serde_json::from_str::<ModelConfig>(json).is_err());
    }
}
