#[path = "common/causality.rs"]
mod causality;

use causality::{check_variant, perturb, probe_model, TCN_VARIANTS};
use ladbnet::model::Variant;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn tcn_is_causal_for_every_step() {
    for v in TCN_VARIANTS {
        for seed in [9, 10] {
            check_variant(v, seed).unwrap();
        }
    }
}

#[test]
fn receptive_field_of_the_stack() {
    // Two K=3 convs plus a K=3, d=2 conv: each output sees 1 + 2 + 2 + 4
    // = 9 steps, so a change at t reaches at most t..=t+8.
    let m = probe_model(Variant::Full, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let base: Vec<f32> = (0..causality::PROBE_STEPS * m.config.n_features)
        .map(|_| rng.gen_range(0.0..1.0))
        .collect();
    let (first, n) = perturb(&m, &base, 10, &mut rng);
    assert_eq!(first, Some(10));
    assert!(n <= 9, "change spread over {n} steps");
}
