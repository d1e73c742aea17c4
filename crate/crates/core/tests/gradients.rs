#[path = "common/gradcheck.rs"]
mod gradcheck;

use std::time::{Duration, Instant};

use gradcheck::{run_all, suite, SHAPES, TOL};

fn assert_suite(name: &str) {
    let r = suite(name);
    assert!(r.cases >= SHAPES);
    assert!(
        r.passed(),
        "{name}: worst relative error {:e} (tolerance {TOL:e}) at shapes {:?}",
        r.worst,
        r.worst_shapes
    );
}

#[test]
fn matmul() {
    assert_suite("matmul");
}

#[test]
fn add_bias() {
    assert_suite("add_bias");
}

#[test]
fn dense() {
    assert_suite("dense");
}

#[test]
fn causal_conv1d() {
    assert_suite("causal_conv1d");
}

#[test]
fn batch_norm_train() {
    assert_suite("batch_norm/train");
}

#[test]
fn batch_norm_infer() {
    assert_suite("batch_norm/infer");
}

#[test]
fn dropout() {
    assert_suite("dropout");
}

#[test]
fn relu() {
    assert_suite("relu");
}

#[test]
fn avg_pool() {
    assert_suite("global_pool/avg");
}

#[test]
fn max_pool() {
    assert_suite("global_pool/max");
}

#[test]
fn concat() {
    assert_suite("concat");
}

#[test]
fn slice_last_k() {
    assert_suite("slice_last_k");
}

#[test]
fn flatten() {
    assert_suite("flatten");
}

#[test]
fn sum() {
    assert_suite("sum");
}

#[test]
fn mse_loss() {
    assert_suite("mse_loss");
}

#[test]
fn composed_block() {
    assert_suite("composed");
}

#[test]
fn whole_suite_under_two_minutes() {
    let started = Instant::now();
    let results = run_all();
    assert!(results.iter().all(|r| r.passed()));
    assert!(started.elapsed() < Duration::from_secs(120));
}
