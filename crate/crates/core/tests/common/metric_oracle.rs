//! MAPE and R² against straightforward two-pass evaluations of their
//! definitions on random pairs.

#![allow(dead_code)]

use ladbnet::eval::{mape, r_squared};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const PAIRS: usize = 1000;
pub const TOL: f64 = 1e-9;

pub fn brute_mape(a: &[f64], p: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += ((a[i] - p[i]) / a[i]).abs();
    }
    100.0 * s / a.len() as f64
}

pub fn brute_r2(a: &[f64], p: &[f64]) -> f64 {
    let n = a.len() as f64;
    let mut mean = 0.0;
    for v in a {
        mean += v;
    }
    mean /= n;
    let (mut ss_res, mut ss_tot) = (0.0, 0.0);
    for i in 0..a.len() {
        ss_res += (a[i] - p[i]) * (a[i] - p[i]);
        ss_tot += (a[i] - mean) * (a[i] - mean);
    }
    1.0 - ss_res / ss_tot
}

/// Deviation scaled by `max(|x|, |y|, 1)`.
pub fn deviation(x: f64, y: f64) -> f64 {
    (x - y).abs() / x.abs().max(y.abs()).max(1.0)
}

/// Worst `(mape, r2)` deviation over `PAIRS` random actual/predicted pairs.
pub fn worst_deviation(seed: u64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut wm, mut wr) = (0.0f64, 0.0f64);
    for _ in 0..PAIRS {
        let n = rng.gen_range(2..200);
        let level = rng.gen_range(1.0..200.0);
        let a: Vec<f64> = (0..n).map(|_| level * rng.gen_range(0.2..1.8)).collect();
        let noise = rng.gen_range(0.0..0.5);
        let p: Vec<f64> = a
            .iter()
            .map(|v| v * (1.0 + noise * rng.gen_range(-1.0..1.0)))
            .collect();
        wm = wm.max(deviation(mape(&a, &p).unwrap(), brute_mape(&a, &p)));
        wr = wr.max(deviation(r_squared(&a, &p).unwrap(), brute_r2(&a, &p)));
    }
    (wm, wr)
}
