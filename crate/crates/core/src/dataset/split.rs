use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            train: 0.70,
            val: 0.15,
            test: 0.15,
        }
    }
}

/// Segment sizes: floor(train), floor(val), remainder to test.
pub fn split_counts(n: usize, r: SplitRatios) -> Result<[usize; 3]> {
    let sum = r.train + r.val + r.test;
    if (sum - 1.0).abs() > 1e-9 || r.train < 0.0 || r.val < 0.0 || r.test < 0.0 {
        return Err(Error::Config(format!(
            "split ratios must be non-negative and sum to 1, got {} + {} + {}",
            r.train, r.val, r.test
        )));
    }
    // the small slack keeps 0.7 * 90720 from flooring to 63503
    let floor = |x: f64| (n as f64 * x + 1e-7).floor() as usize;
    let train = floor(r.train).min(n);
    let val = floor(r.val).min(n - train);
    Ok([train, val, n - train - val])
}

/// Contiguous chronological segments of a row range, train first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segments {
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub test: Range<usize>,
}

/// Splits `rows` and checks every segment holds at least `min_rows`
/// (one full window).
pub fn chrono_split(rows: Range<usize>, r: SplitRatios, min_rows: usize) -> Result<Segments> {
    let [a, b, _] = split_counts(rows.len(), r)?;
    let s = Segments {
        train: rows.start..rows.start + a,
        val: rows.start + a..rows.start + a + b,
        test: rows.start + a + b..rows.end,
    };
    for (name, seg) in [("train", &s.train), ("val", &s.val), ("test", &s.test)] {
        if seg.len() < min_rows {
            return Err(Error::InsufficientData(format!(
                "{name} segment has {} rows, at least {min_rows} needed for one window",
                seg.len()
            )));
        }
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_counts() {
        assert_eq!(
            split_counts(90_720, SplitRatios::default()).unwrap(),
            [63_504, 13_608, 13_608]
        );
        assert_eq!(split_counts(10, SplitRatios::default()).unwrap(), [7, 1, 2]);
    }

    #[test]
    fn ratios_must_sum_to_one() {
        let bad = SplitRatios {
            train: 0.7,
            val: 0.2,
            test: 0.2,
        };
        assert!(split_counts(100, bad).is_err());
    }

    #[test]
    fn segments_are_ordered_and_exhaustive() {
        let s = chrono_split(144..90_720, SplitRatios::default(), 216).unwrap();
        assert_eq!(s.train.start, 144);
        assert_eq!(s.train.end, s.val.start);
        assert_eq!(s.val.end, s.test.start);
        assert_eq!(s.test.end, 90_720);
        assert_eq!(
            [s.train.len(), s.val.len(), s.test.len()],
            [63_403, 13_586, 13_587]
        );
    }

    #[test]
    fn short_segment_is_rejected() {
        assert!(matches!(
            chrono_split(0..1000, SplitRatios::default(), 216),
            Err(Error::InsufficientData(_))
        ));
    }
}
