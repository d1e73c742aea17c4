//! Raw sensor frames, CSV ingestion, gap imputation, scaling, splitting,
//! windowing and the synthetic load generator.

mod scaler;
mod split;
mod synth;
mod windows;

use std::collections::BTreeMap;
use std::path::Path;

use chrono::{Duration, NaiveDateTime};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{self, FeatureConfig, FeatureMatrix, HolidayCalendar};

pub use scaler::{ColumnRange, MinMaxScaler, ScalerParams};
pub use split::{chrono_split, split_counts, Segments, SplitRatios};
pub use synth::{synth_generate, SynthProfile};
pub use windows::{make_windows, Split, WindowedDataset};

/// Timestamp layout used for every CSV this crate writes.
pub const TIME_FORMAT: &str = "%Y-%m-%d %H:%M:%S";

/// Sampling period of the sensor grid.
pub const STEP_MINUTES: i64 = 10;

const ACCEPTED_TIME_FORMATS: [&str; 4] = [
    "%Y-%m-%d %H:%M:%S",
    "%Y-%m-%dT%H:%M:%S",
    "%Y-%m-%d %H:%M",
    "%Y-%m-%dT%H:%M",
];

pub fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    let s = s.trim();
    ACCEPTED_TIME_FORMATS
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
}

/// One sensor row. `None` marks a missing reading.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RawRecord {
    pub datetime: NaiveDateTime,
    #[serde(rename = "DBT")]
    pub dbt: Option<f64>,
    #[serde(rename = "RH")]
    pub rh: Option<f64>,
    #[serde(rename = "kW")]
    pub kw: Option<f64>,
}

impl RawRecord {
    pub fn complete(datetime: NaiveDateTime, dbt: f64, rh: f64, kw: f64) -> Self {
        RawRecord {
            datetime,
            dbt: Some(dbt),
            rh: Some(rh),
            kw: Some(kw),
        }
    }

    pub fn missing(datetime: NaiveDateTime) -> Self {
        RawRecord {
            datetime,
            dbt: None,
            rh: None,
            kw: None,
        }
    }

    pub fn is_complete(&self) -> bool {
        self.dbt.is_some() && self.rh.is_some() && self.kw.is_some()
    }
}

/// Rows on a contiguous 10-minute grid, strictly increasing.
#[derive(Debug, Clone, PartialEq)]
pub struct RawFrame {
    pub records: Vec<RawRecord>,
}

impl RawFrame {
    /// Validates the grid: strictly increasing, constant 10-minute step.
    pub fn new(records: Vec<RawRecord>) -> Result<Self> {
        let step = Duration::minutes(STEP_MINUTES);
        for (i, w) in records.windows(2).enumerate() {
            if w[1].datetime - w[0].datetime != step {
                return Err(Error::Schema(format!(
                    "rows {} and {} are not one 10-minute step apart ({} -> {})",
                    i,
                    i + 1,
                    w[0].datetime,
                    w[1].datetime
                )));
            }
        }
        Ok(RawFrame { records })
    }

    /// Sorts arbitrary rows and fills grid gaps with missing rows.
    pub fn from_unordered(mut rows: Vec<RawRecord>) -> Result<Self> {
        rows.sort_by_key(|r| r.datetime);
        for w in rows.windows(2) {
            if w[0].datetime == w[1].datetime {
                return Err(Error::Schema(format!(
                    "duplicate timestamp {}",
                    w[0].datetime
                )));
            }
        }
        let Some(first) = rows.first().map(|r| r.datetime) else {
            return Ok(RawFrame { records: rows });
        };
        let step = Duration::minutes(STEP_MINUTES);
        let mut out = Vec::with_capacity(rows.len());
        let mut expected = first;
        for r in rows {
            let off = (r.datetime - first).num_seconds();
            if off % (STEP_MINUTES * 60) != 0 {
                return Err(Error::Schema(format!(
                    "timestamp {} is off the 10-minute grid starting at {first}",
                    r.datetime
                )));
            }
            while expected < r.datetime {
                out.push(RawRecord::missing(expected));
                expected += step;
            }
            out.push(r);
            expected += step;
        }
        Ok(RawFrame { records: out })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn missing_count(&self) -> usize {
        self.records.iter().filter(|r| !r.is_complete()).count()
    }

    /// `(DBT, RH, kW)` columns; fails if any value is missing.
    pub fn complete_columns(&self) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        let n = self.len();
        let (mut d, mut h, mut k) = (
            Vec::with_capacity(n),
            Vec::with_capacity(n),
            Vec::with_capacity(n),
        );
        for (i, r) in self.records.iter().enumerate() {
            match (r.dbt, r.rh, r.kw) {
                (Some(a), Some(b), Some(c)) => {
                    d.push(a);
                    h.push(b);
                    k.push(c);
                }
                _ => {
                    return Err(Error::State(format!(
                        "row {i} ({}) has missing values; impute first",
                        r.datetime
                    )))
                }
            }
        }
        Ok((d, h, k))
    }

    pub fn kw(&self) -> Vec<Option<f64>> {
        self.records.iter().map(|r| r.kw).collect()
    }

    pub fn slice(&self, range: std::ops::Range<usize>) -> RawFrame {
        RawFrame {
            records: self.records[range].to_vec(),
        }
    }
}

/// Reads a `datetime,DBT,RH,kW` CSV (column order free, extra columns
/// ignored). Empty or `NaN` fields are missing readings.
pub fn load_csv(path: &Path) -> Result<RawFrame> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file)
}

pub fn read_csv<R: std::io::Read>(reader: R) -> Result<RawFrame> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Schema(format!("unreadable header: {e}")))?
        .clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("missing required column {name:?}")))
    };
    let (ci, cd, cr, ck) = (col("datetime")?, col("DBT")?, col("RH")?, col("kW")?);
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        // header is line 1
        let line = i + 2;
        let rec = rec.map_err(|e| Error::Parse {
            line,
            msg: e.to_string(),
        })?;
        let field = |c: usize| rec.get(c).unwrap_or("");
        let datetime = parse_timestamp(field(ci)).ok_or_else(|| Error::Parse {
            line,
            msg: format!("bad timestamp {:?}", field(ci)),
        })?;
        let num = |c: usize, name: &str| -> Result<Option<f64>> {
            let s = field(c);
            if s.is_empty() || s.eq_ignore_ascii_case("nan") {
                return Ok(None);
            }
            s.parse::<f64>().map(Some).map_err(|_| Error::Parse {
                line,
                msg: format!("bad {name} value {s:?}"),
            })
        };
        rows.push(RawRecord {
            datetime,
            dbt: num(cd, "DBT")?,
            rh: num(cr, "RH")?,
            kw: num(ck, "kW")?,
        });
    }
    RawFrame::from_unordered(rows)
}

pub fn write_csv(frame: &RawFrame, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    write_csv_to(frame, &mut w).map_err(|e| Error::io(path, e))
}

pub fn write_csv_to<W: std::io::Write>(frame: &RawFrame, w: &mut W) -> std::io::Result<()> {
    writeln!(w, "datetime,DBT,RH,kW")?;
    let f = |v: Option<f64>| v.map(|x| format!("{x}")).unwrap_or_default();
    for r in &frame.records {
        writeln!(
            w,
            "{},{},{},{}",
            r.datetime.format(TIME_FORMAT),
            f(r.dbt),
            f(r.rh),
            f(r.kw)
        )?;
    }
    w.flush()
}

fn interpolate(values: &mut [Option<f64>], name: &str) -> Result<()> {
    let n = values.len();
    if n == 0 {
        return Ok(());
    }
    if values[0].is_none() || values[n - 1].is_none() {
        return Err(Error::InsufficientData(format!(
            "{name}: leading or trailing gap cannot be interpolated"
        )));
    }
    let mut last = 0;
    for i in 1..n {
        if let Some(v) = values[i] {
            if i - last > 1 {
                let a = values[last].unwrap();
                let span = (i - last) as f64;
                for (j, slot) in values.iter_mut().enumerate().take(i).skip(last + 1) {
                    let f = (j - last) as f64 / span;
                    *slot = Some(a + (v - a) * f);
                }
            }
            last = i;
        }
    }
    Ok(())
}

/// Linear interpolation of interior gaps on the time grid, per column.
pub fn impute_linear(frame: &RawFrame) -> Result<RawFrame> {
    let mut dbt: Vec<_> = frame.records.iter().map(|r| r.dbt).collect();
    let mut rh: Vec<_> = frame.records.iter().map(|r| r.rh).collect();
    let mut kw: Vec<_> = frame.records.iter().map(|r| r.kw).collect();
    interpolate(&mut dbt, "DBT")?;
    interpolate(&mut rh, "RH")?;
    interpolate(&mut kw, "kW")?;
    let records = frame
        .records
        .iter()
        .enumerate()
        .map(|(i, r)| RawRecord {
            datetime: r.datetime,
            dbt: dbt[i],
            rh: rh[i],
            kw: kw[i],
        })
        .collect();
    Ok(RawFrame { records })
}

/// Input window / horizon lengths shared by windowing and splitting.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowShape {
    pub seq_len: usize,
    pub horizon: usize,
}

impl WindowShape {
    pub fn rows(&self) -> usize {
        self.seq_len + self.horizon
    }
}

impl Default for WindowShape {
    fn default() -> Self {
        WindowShape {
            seq_len: 144,
            horizon: 72,
        }
    }
}

/// Row accounting of one preparation run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitReport {
    pub raw_rows: usize,
    pub missing_rows: usize,
    /// Ratios applied to raw rows, ignoring the lag drop.
    pub raw_split: [usize; 3],
    pub lag_dropped_rows: usize,
    pub feature_rows: usize,
    /// Ratios applied to feature rows; this is the split actually used.
    pub feature_split: [usize; 3],
    pub windows: BTreeMap<String, usize>,
}

/// Everything a training or evaluation run needs.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub features: FeatureMatrix,
    pub segments: Segments,
    pub scaler: ScalerParams,
    pub train: WindowedDataset,
    pub val: WindowedDataset,
    pub test: WindowedDataset,
    pub report: SplitReport,
}

/// impute -> features -> chronological split -> train-only scaler -> windows.
pub fn prepare(
    frame: &RawFrame,
    calendar: &HolidayCalendar,
    feature_cfg: &FeatureConfig,
    ratios: SplitRatios,
    shape: WindowShape,
) -> Result<Prepared> {
    let missing_rows = frame.missing_count();
    let frame = impute_linear(frame)?;
    let features = features::assemble(&frame, calendar, feature_cfg)?;
    let segments = chrono_split(features.valid_from..features.n_rows(), ratios, shape.rows())?;
    let scaler = ScalerParams::fit(&features, segments.train.clone())?;
    let train = make_windows(
        &features,
        &scaler,
        segments.train.clone(),
        Split::Train,
        shape,
    )?;
    let val = make_windows(&features, &scaler, segments.val.clone(), Split::Val, shape)?;
    let test = make_windows(
        &features,
        &scaler,
        segments.test.clone(),
        Split::Test,
        shape,
    )?;
    let report = SplitReport {
        raw_rows: frame.len(),
        missing_rows,
        raw_split: split_counts(frame.len(), ratios)?,
        lag_dropped_rows: features.valid_from,
        feature_rows: features.n_valid(),
        feature_split: [
            segments.train.len(),
            segments.val.len(),
            segments.test.len(),
        ],
        windows: [
            ("train".to_string(), train.n_windows()),
            ("val".to_string(), val.n_windows()),
            ("test".to_string(), test.n_windows()),
        ]
        .into_iter()
        .collect(),
    };
    Ok(Prepared {
        features,
        segments,
        scaler,
        train,
        val,
        test,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const CSV3: &str = "datetime,DBT,RH,kW\n\
        2024-01-01 00:00:00,24.0,70.0,50.0\n\
        2024-01-01 00:10:00,24.1,70.5,51.0\n\
        2024-01-01 00:20:00,24.2,71.0,52.5\n";

    #[test]
    fn parses_three_rows() {
        let f = read_csv(CSV3.as_bytes()).unwrap();
        assert_eq!(f.len(), 3);
        assert_eq!(f.records[2].kw, Some(52.5));
    }

    #[test]
    fn missing_column_is_schema_error() {
        let r = read_csv("datetime,DBT,RH\n2024-01-01 00:00:00,1,2\n".as_bytes());
        assert!(matches!(r, Err(Error::Schema(_))));
    }

    #[test]
    fn malformed_row_reports_line() {
        let bad = "datetime,DBT,RH,kW\n2024-01-01 00:00:00,1,2,3\n2024-01-01 00:10:00,x,2,3\n";
        match read_csv(bad.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn sorts_and_rejects_duplicates() {
        let shuffled = "datetime,DBT,RH,kW\n\
            2024-01-01 00:20:00,1,2,3\n\
            2024-01-01 00:00:00,1,2,1\n\
            2024-01-01 00:10:00,1,2,2\n";
        let f = read_csv(shuffled.as_bytes()).unwrap();
        let kw: Vec<_> = f.records.iter().map(|r| r.kw.unwrap()).collect();
        assert_eq!(kw, vec![1.0, 2.0, 3.0]);
        let dup = "datetime,DBT,RH,kW\n2024-01-01 00:00:00,1,2,3\n2024-01-01 00:00:00,1,2,3\n";
        assert!(matches!(read_csv(dup.as_bytes()), Err(Error::Schema(_))));
    }

    #[test]
    fn gaps_become_missing_rows() {
        let gap = "datetime,DBT,RH,kW\n2024-01-01 00:00:00,1,2,10\n2024-01-01 00:20:00,1,2,30\n";
        let f = read_csv(gap.as_bytes()).unwrap();
        assert_eq!(f.len(), 3);
        assert_eq!(f.missing_count(), 1);
        let imp = impute_linear(&f).unwrap();
        assert_eq!(imp.records[1].kw, Some(20.0));
    }

    #[test]
    fn interpolation_examples() {
        let mut v = vec![Some(0.0), None, None, Some(3.0)];
        interpolate(&mut v, "kW").unwrap();
        assert_eq!(v, vec![Some(0.0), Some(1.0), Some(2.0), Some(3.0)]);
        let mut lead = vec![None, Some(1.0)];
        assert!(interpolate(&mut lead, "kW").is_err());
        let mut trail = vec![Some(1.0), None];
        assert!(interpolate(&mut trail, "kW").is_err());
    }

    #[test]
    fn impute_without_gaps_is_identity() {
        let f = read_csv(CSV3.as_bytes()).unwrap();
        assert_eq!(impute_linear(&f).unwrap(), f);
    }

    #[test]
    fn csv_round_trip() {
        let f = synth_generate(50, 3, &SynthProfile::default());
        let mut buf = Vec::new();
        write_csv_to(&f, &mut buf).unwrap();
        let back = read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, f);
    }
}
