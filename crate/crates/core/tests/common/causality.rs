//! Causality probe for the TCN stack before pooling: perturbing input
//! step `t` must leave every output step `< t` bit-identical.

#![allow(dead_code)]

use ladbnet::model::{Model, ModelConfig, Variant};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const PROBE_STEPS: usize = 32;

pub fn probe_model(variant: Variant, seed: u64) -> Model {
    let cfg = ModelConfig {
        seq_len: PROBE_STEPS,
        lag_window: 8,
        conv_filters: vec![8, 8],
        dilated_filters: 8,
        ..ModelConfig::default()
    }
    .with_variant(variant);
    let mut m = Model::build(cfg, seed).unwrap();
    // Non-trivial inference statistics so BN is not the identity.
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    for (_, st) in m.bn_states_mut() {
        for v in st.running_mean.iter_mut() {
            *v = rng.gen_range(-0.5..0.5);
        }
        for v in st.running_var.iter_mut() {
            *v = rng.gen_range(0.2..2.0);
        }
    }
    m
}

/// `(earliest changed step, steps changed)` after perturbing step `t`.
pub fn perturb(m: &Model, base: &[f32], t: usize, rng: &mut ChaCha8Rng) -> (Option<usize>, usize) {
    let nf = m.config.n_features;
    let y0 = m.tcn_features(base, 1).unwrap();
    let mut x = base.to_vec();
    for v in &mut x[t * nf..(t + 1) * nf] {
        *v += rng.gen_range(0.5..2.0);
    }
    let y1 = m.tcn_features(&x, 1).unwrap();
    let c = y0.shape()[2];
    let changed: Vec<usize> = (0..PROBE_STEPS)
        .filter(|&s| y0.data()[s * c..(s + 1) * c] != y1.data()[s * c..(s + 1) * c])
        .collect();
    (changed.first().copied(), changed.len())
}

/// Exhaustive over `t`; `Err` names the first violation.
pub fn check_variant(variant: Variant, seed: u64) -> Result<(), String> {
    let m = probe_model(variant, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let base: Vec<f32> = (0..PROBE_STEPS * m.config.n_features)
        .map(|_| rng.gen_range(0.0..1.0))
        .collect();
    for t in 0..PROBE_STEPS {
        match perturb(&m, &base, t, &mut rng) {
            (Some(s), _) if s < t => return Err(format!("{variant}: step {t} changed output {s}")),
            (None, _) => return Err(format!("{variant}: step {t} had no effect")),
            _ => {}
        }
    }
    Ok(())
}

/// Variants that have a TCN branch.
pub const TCN_VARIANTS: [Variant; 4] = [
    Variant::Full,
    Variant::TcnOnly,
    Variant::NoDilated,
    Variant::NoDualPool,
];
