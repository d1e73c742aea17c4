use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureMatrix, FEATURE_COLUMNS, N_COLUMNS, N_INPUTS, TARGET};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnRange {
    pub name: String,
    pub min: f64,
    pub max: f64,
}

impl ColumnRange {
    pub fn is_constant(&self) -> bool {
        self.max == self.min
    }

    /// `(x - min) / (max - min)`, unclipped; constant columns map to 0.
    pub fn scale(&self, x: f64) -> f64 {
        if self.is_constant() {
            0.0
        } else {
            (x - self.min) / (self.max - self.min)
        }
    }

    pub fn unscale(&self, y: f64) -> f64 {
        if self.is_constant() {
            self.min
        } else {
            y * (self.max - self.min) + self.min
        }
    }
}

/// Per-column min/max for all 28 feature columns, fitted on training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalerParams {
    pub columns: Vec<ColumnRange>,
}

impl ScalerParams {
    /// Fits on `rows` of the matrix. Rows before `valid_from` are refused.
    pub fn fit(fm: &FeatureMatrix, rows: Range<usize>) -> Result<Self> {
        if rows.is_empty() || rows.start < fm.valid_from || rows.end > fm.n_rows() {
            return Err(Error::InsufficientData(format!(
                "scaler fit rows {rows:?} outside valid rows {}..{}",
                fm.valid_from,
                fm.n_rows()
            )));
        }
        let mut lo = [f64::INFINITY; N_COLUMNS];
        let mut hi = [f64::NEG_INFINITY; N_COLUMNS];
        for i in rows {
            for (c, &v) in fm.row(i).iter().enumerate() {
                lo[c] = lo[c].min(v);
                hi[c] = hi[c].max(v);
            }
        }
        Ok(ScalerParams {
            columns: FEATURE_COLUMNS
                .iter()
                .enumerate()
                .map(|(c, name)| ColumnRange {
                    name: name.to_string(),
                    min: lo[c],
                    max: hi[c],
                })
                .collect(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.columns.len() != N_COLUMNS {
            return Err(Error::Schema(format!(
                "scaler has {} columns, expected {N_COLUMNS}",
                self.columns.len()
            )));
        }
        for (c, name) in self.columns.iter().zip(FEATURE_COLUMNS) {
            if c.name != name {
                return Err(Error::Schema(format!(
                    "scaler column {:?} where {name:?} expected",
                    c.name
                )));
            }
            if c.max.is_nan() || c.min.is_nan() || c.max < c.min {
                return Err(Error::Schema(format!("scaler column {name}: max < min")));
            }
        }
        Ok(())
    }

    pub fn target(&self) -> &ColumnRange {
        &self.columns[TARGET]
    }

    /// Normalizes the 27 input columns of one feature row.
    pub fn scale_inputs(&self, row: &[f64], out: &mut [f32]) {
        for c in 0..N_INPUTS {
            out[c] = self.columns[c].scale(row[c]) as f32;
        }
    }

    pub fn scale_target(&self, kw: f64) -> f64 {
        self.target().scale(kw)
    }

    /// Maps a normalized prediction back to kW.
    pub fn invert_target(&self, y: f64) -> f64 {
        self.target().unscale(y)
    }

    pub fn constant_columns(&self) -> Vec<&str> {
        self.columns
            .iter()
            .filter(|c| c.is_constant())
            .map(|c| c.name.as_str())
            .collect()
    }
}

/// Fit/apply wrapper that refuses to transform before fitting.
#[derive(Debug, Clone, Default)]
pub struct MinMaxScaler {
    params: Option<ScalerParams>,
}

impl MinMaxScaler {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn fit(&mut self, fm: &FeatureMatrix, train_rows: Range<usize>) -> Result<&ScalerParams> {
        self.params = Some(ScalerParams::fit(fm, train_rows)?);
        Ok(self.params.as_ref().unwrap())
    }

    pub fn params(&self) -> Result<&ScalerParams> {
        self.params
            .as_ref()
            .ok_or_else(|| Error::State("scaler applied before fit".into()))
    }

    /// Normalized copy of every column of the matrix.
    pub fn apply(&self, fm: &FeatureMatrix) -> Result<Vec<f64>> {
        let p = self.params()?;
        Ok(fm
            .data
            .chunks(N_COLUMNS)
            .flat_map(|row| row.iter().zip(&p.columns).map(|(&v, c)| c.scale(v)))
            .collect())
    }

    pub fn invert_target(&self, y: f64) -> Result<f64> {
        Ok(self.params()?.invert_target(y))
    }
}
