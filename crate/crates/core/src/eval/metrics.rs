//! Accuracy metrics with compensated summation.

use crate::error::{Error, Result};

/// Smallest |actual| accepted by [`mape`], in kW.
pub const MAPE_FLOOR: f64 = 1e-6;

/// Neumaier-compensated sum, so reductions are reproducible regardless of
/// magnitude spread.
#[derive(Debug, Default, Clone, Copy)]
pub struct CompensatedSum {
    sum: f64,
    c: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.c += (self.sum - t) + x;
        } else {
            self.c += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.c
    }
}

impl FromIterator<f64> for CompensatedSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = CompensatedSum::default();
        iter.into_iter().for_each(|x| s.add(x));
        s
    }
}

fn check_lengths(a: &[f64], p: &[f64], min: usize) -> Result<()> {
    if a.len() != p.len() {
        return Err(Error::Dimension(format!(
            "{} actual vs {} predicted values",
            a.len(),
            p.len()
        )));
    }
    if a.len() < min {
        return Err(Error::Metric(format!(
            "need at least {min} values, got {}",
            a.len()
        )));
    }
    Ok(())
}

/// Mean absolute percentage error in percent.
pub fn mape(actual: &[f64], predicted: &[f64]) -> Result<f64> {
    mape_with_floor(actual, predicted, MAPE_FLOOR)
}

pub fn mape_with_floor(actual: &[f64], predicted: &[f64], floor: f64) -> Result<f64> {
    check_lengths(actual, predicted, 1)?;
    let mut s = CompensatedSum::default();
    for (&a, &p) in actual.iter().zip(predicted) {
        if a.is_nan() || a.abs() < floor {
            return Err(Error::Metric(format!(
                "actual value {a} below the MAPE floor {floor}"
            )));
        }
        s.add((a - p).abs() / a.abs());
    }
    Ok(100.0 * s.value() / actual.len() as f64)
}

/// Coefficient of determination.
pub fn r_squared(actual: &[f64], predicted: &[f64]) -> Result<f64> {
    check_lengths(actual, predicted, 2)?;
    let n = actual.len() as f64;
    let mean = actual.iter().copied().collect::<CompensatedSum>().value() / n;
    let ss_tot = actual
        .iter()
        .map(|a| (a - mean).powi(2))
        .collect::<CompensatedSum>()
        .value();
    if ss_tot == 0.0 {
        return Err(Error::Metric(
            "actual values are constant; R² undefined".into(),
        ));
    }
    let ss_res = actual
        .iter()
        .zip(predicted)
        .map(|(a, p)| (a - p).powi(2))
        .collect::<CompensatedSum>()
        .value();
    Ok(1.0 - ss_res / ss_tot)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mape_examples() {
        assert_eq!(mape(&[5.0, 7.0], &[5.0, 7.0]).unwrap(), 0.0);
        assert!((mape(&[100.0, 200.0], &[110.0, 190.0]).unwrap() - 7.5).abs() < 1e-12);
        let a = mape(&[3.0, 9.0], &[2.0, 11.0]).unwrap();
        let b = mape(&[30.0, 90.0], &[20.0, 110.0]).unwrap();
        assert!((a - b).abs() < 1e-12);
        assert!(matches!(mape(&[0.0], &[1.0]), Err(Error::Metric(_))));
        assert!(matches!(mape(&[], &[]), Err(Error::Metric(_))));
    }

    #[test]
    fn r_squared_examples() {
        let a = [1.0, 2.0, 4.0, 7.0];
        assert_eq!(r_squared(&a, &a).unwrap(), 1.0);
        assert!(r_squared(&a, &[3.5; 4]).unwrap().abs() < 1e-12);
        assert!(r_squared(&a, &[7.0, 4.0, 2.0, 1.0]).unwrap() < 0.0);
        assert!(matches!(
            r_squared(&[2.0, 2.0], &[1.0, 3.0]),
            Err(Error::Metric(_))
        ));
    }

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let s: CompensatedSum = [1e16, 1.0, -1e16, 1.0].into_iter().collect();
        assert_eq!(s.value(), 2.0);
    }
}
