#[path = "common/metric_oracle.rs"]
mod metric_oracle;

use ladbnet::eval::{mape, r_squared};
use metric_oracle::{worst_deviation, TOL};

#[test]
fn thousand_random_pairs() {
    for seed in [2024, 7] {
        let (m, r) = worst_deviation(seed);
        assert!(m <= TOL, "mape deviation {m:e}");
        assert!(r <= TOL, "r2 deviation {r:e}");
    }
}

#[test]
fn hand_examples() {
    assert!((mape(&[100.0, 200.0], &[110.0, 190.0]).unwrap() - 7.5).abs() < 1e-12);
    assert_eq!(r_squared(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 1.0);
    // Predicting the mean explains nothing.
    assert_eq!(r_squared(&[1.0, 2.0, 3.0], &[2.0, 2.0, 2.0]).unwrap(), 0.0);
}
