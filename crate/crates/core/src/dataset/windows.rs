use std::ops::Range;

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

use super::{ScalerParams, WindowShape};
use crate::error::{Error, Result};
use crate::features::{FeatureMatrix, N_INPUTS, TARGET};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

/// Stride-1 windows over one split segment.
///
/// Inputs are stored once per segment row; window `i` is the contiguous
/// slice of rows `i .. i + seq_len`, and its target is the normalized
/// load of rows `i + seq_len .. i + seq_len + horizon`.
#[derive(Debug, Clone)]
pub struct WindowedDataset {
    pub split: Split,
    pub shape: WindowShape,
    /// Absolute feature-matrix row of segment row 0.
    pub row_offset: usize,
    inputs: Vec<f32>,
    targets: Vec<f32>,
    kw: Vec<f64>,
    timestamps: Vec<NaiveDateTime>,
}

impl WindowedDataset {
    pub fn n_windows(&self) -> usize {
        (self.kw.len() + 1).saturating_sub(self.shape.rows())
    }

    pub fn is_empty(&self) -> bool {
        self.n_windows() == 0
    }

    pub fn n_rows(&self) -> usize {
        self.kw.len()
    }

    /// `[seq_len, 27]` normalized inputs of window `i`, row-major.
    pub fn input(&self, i: usize) -> &[f32] {
        &self.inputs[i * N_INPUTS..(i + self.shape.seq_len) * N_INPUTS]
    }

    /// Normalized targets of window `i`.
    pub fn target(&self, i: usize) -> &[f32] {
        let s = i + self.shape.seq_len;
        &self.targets[s..s + self.shape.horizon]
    }

    /// Raw kW actually observed over the horizon of window `i`.
    pub fn actual_kw(&self, i: usize) -> &[f64] {
        let s = i + self.shape.seq_len;
        &self.kw[s..s + self.shape.horizon]
    }

    /// Raw kW over the input rows of window `i`.
    pub fn history_kw(&self, i: usize) -> &[f64] {
        &self.kw[i..i + self.shape.seq_len]
    }

    /// Absolute feature row where window `i` starts.
    pub fn index(&self, i: usize) -> usize {
        self.row_offset + i
    }

    /// Timestamp of the first forecast step of window `i`.
    pub fn forecast_start(&self, i: usize) -> NaiveDateTime {
        self.timestamps[i + self.shape.seq_len]
    }

    /// Stacks windows into `[B, seq_len, 27]` inputs and `[B, horizon]` targets.
    pub fn batch(&self, idx: &[usize]) -> (Vec<f32>, Vec<f32>) {
        let mut x = Vec::with_capacity(idx.len() * self.shape.seq_len * N_INPUTS);
        let mut y = Vec::with_capacity(idx.len() * self.shape.horizon);
        for &i in idx {
            x.extend_from_slice(self.input(i));
            y.extend_from_slice(self.target(i));
        }
        (x, y)
    }
}

/// Builds the windows of one segment. A segment shorter than one window
/// yields an empty dataset and a warning.
pub fn make_windows(
    fm: &FeatureMatrix,
    scaler: &ScalerParams,
    rows: Range<usize>,
    split: Split,
    shape: WindowShape,
) -> Result<WindowedDataset> {
    if rows.start < fm.valid_from || rows.end > fm.n_rows() {
        return Err(Error::InsufficientData(format!(
            "{} rows {rows:?} outside valid feature rows {}..{}",
            split.name(),
            fm.valid_from,
            fm.n_rows()
        )));
    }
    if rows.len() < shape.rows() {
        log::warn!(
            "{} segment of {} rows is shorter than one {}-row window; skipped",
            split.name(),
            rows.len(),
            shape.rows()
        );
    }
    let n = rows.len();
    let mut inputs = vec![0f32; n * N_INPUTS];
    let mut targets = Vec::with_capacity(n);
    let mut kw = Vec::with_capacity(n);
    for (j, r) in rows.clone().enumerate() {
        let row = fm.row(r);
        scaler.scale_inputs(row, &mut inputs[j * N_INPUTS..(j + 1) * N_INPUTS]);
        targets.push(scaler.scale_target(row[TARGET]) as f32);
        kw.push(row[TARGET]);
    }
    Ok(WindowedDataset {
        split,
        shape,
        row_offset: rows.start,
        inputs,
        targets,
        kw,
        timestamps: fm.timestamps[rows].to_vec(),
    })
}
