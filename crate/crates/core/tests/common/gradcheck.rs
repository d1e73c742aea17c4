//! Central finite-difference checks of the differentiable operators in
//! double precision.
//!
//! Each op runs on 20+ random shapes. The scalar loss is the MSE of the op
//! output against a fixed random target, so every output element gets a
//! distinct upstream gradient. Errors are norm-wise per input:
//! `|g_analytic - g_numeric| / max(|g_analytic|, |g_numeric|, FLOOR)`.
//! The floor only matters for gradients that vanish analytically (a bias
//! feeding batch norm): there the numeric estimate is rounding noise of
//! order `eps * |loss| / h`, about 1e-11, and the check becomes an
//! absolute one at 1e-10.

#![allow(dead_code)]

use ladbnet::neural::{BatchNormConfig, BatchNormState, Graph, Mode, PoolKind, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const H: f64 = 1e-5;
pub const TOL: f64 = 1e-6;
pub const SHAPES: usize = 20;
pub const FLOOR: f64 = 1e-4;

pub type Build = Box<dyn Fn(&mut Graph<f64>, &[Var]) -> Var>;
pub type Case = (Vec<Tensor<f64>>, Build);
pub type CaseFn = fn(&mut ChaCha8Rng) -> Case;

/// Worst error of one op over all its random shapes.
#[derive(Debug, Clone)]
pub struct SuiteResult {
    pub name: &'static str,
    pub cases: usize,
    pub worst: f64,
    /// Shapes of the worst case.
    pub worst_shapes: Vec<Vec<usize>>,
}

impl SuiteResult {
    pub fn passed(&self) -> bool {
        self.cases >= SHAPES && self.worst < TOL
    }
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Tensor::from_f64(shape, &v).unwrap()
}

/// Values at least `gap` away from zero, for ops with a kink at 0.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize], gap: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    let v: Vec<f64> = (0..n)
        .map(|_| {
            let m = rng.gen_range(gap..1.0);
            if rng.gen_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::from_f64(shape, &v).unwrap()
}

fn eval(
    inputs: &[Tensor<f64>],
    build: &Build,
    target_seed: u64,
    with_grad: bool,
) -> (f64, Vec<Vec<f64>>) {
    let mut g = Graph::<f64>::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|t| {
            if with_grad {
                g.leaf(t.clone().with_grad())
            } else {
                g.leaf(t.clone())
            }
        })
        .collect();
    let y = build(&mut g, &vars);
    let shape = g.shape(y).to_vec();
    let target = g.leaf(rand_tensor(
        &mut ChaCha8Rng::seed_from_u64(target_seed),
        &shape,
    ));
    let loss = g.mse_loss(y, target).unwrap();
    let value = g.data(loss)[0];
    if !with_grad {
        return (value, Vec::new());
    }
    g.backward(loss).unwrap();
    let grads = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| {
            g.grad(v)
                .map(|s| s.to_vec())
                .unwrap_or_else(|| vec![0.0; t.len()])
        })
        .collect();
    (value, grads)
}

/// Worst norm-wise relative error over all inputs of one case.
pub fn check(inputs: &[Tensor<f64>], build: &Build, target_seed: u64) -> f64 {
    let (_, analytic) = eval(inputs, build, target_seed, true);
    let mut worst = 0.0f64;
    for (i, a) in analytic.iter().enumerate() {
        let mut numeric = vec![0.0; a.len()];
        for (j, n) in numeric.iter_mut().enumerate() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] += H;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] -= H;
            let fp = eval(&plus, build, target_seed, false).0;
            let fm = eval(&minus, build, target_seed, false).0;
            *n = (fp - fm) / (2.0 * H);
        }
        let diff = a
            .iter()
            .zip(&numeric)
            .map(|(x, y)| (x - y).powi(2))
            .sum::<f64>()
            .sqrt();
        let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nn = numeric.iter().map(|x| x * x).sum::<f64>().sqrt();
        worst = worst.max(diff / na.max(nn).max(FLOOR));
    }
    worst
}

pub fn run_suite(name: &'static str, seed: u64, case: CaseFn) -> SuiteResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut res = SuiteResult {
        name,
        cases: 0,
        worst: 0.0,
        worst_shapes: Vec::new(),
    };
    for k in 0..SHAPES {
        let (inputs, build) = case(&mut rng);
        let err = check(&inputs, &build, seed * 1000 + k as u64);
        res.cases += 1;
        if err >= res.worst {
            res.worst = err;
            res.worst_shapes = inputs.iter().map(|t| t.shape().to_vec()).collect();
        }
    }
    res
}

fn matmul(r: &mut ChaCha8Rng) -> Case {
    let (m, k, n) = (r.gen_range(1..6), r.gen_range(1..6), r.gen_range(1..6));
    let inputs = vec![rand_tensor(r, &[m, k]), rand_tensor(r, &[k, n])];
    (inputs, Box::new(|g, v| g.matmul(v[0], v[1]).unwrap()))
}

fn add_bias(r: &mut ChaCha8Rng) -> Case {
    let shape: Vec<usize> = if r.gen_bool(0.5) {
        vec![r.gen_range(1..5), r.gen_range(1..5)]
    } else {
        vec![r.gen_range(1..4), r.gen_range(1..4), r.gen_range(1..4)]
    };
    let c = *shape.last().unwrap();
    let inputs = vec![rand_tensor(r, &shape), rand_tensor(r, &[c])];
    (inputs, Box::new(|g, v| g.add_bias(v[0], v[1]).unwrap()))
}

fn dense(r: &mut ChaCha8Rng) -> Case {
    let (b, i, o) = (r.gen_range(1..5), r.gen_range(1..7), r.gen_range(1..7));
    let inputs = vec![
        rand_tensor(r, &[b, i]),
        rand_tensor(r, &[i, o]),
        rand_tensor(r, &[o]),
    ];
    (inputs, Box::new(|g, v| g.dense(v[0], v[1], v[2]).unwrap()))
}

fn causal_conv(r: &mut ChaCha8Rng) -> Case {
    let (t, cin, cout) = (r.gen_range(1..10), r.gen_range(1..4), r.gen_range(1..4));
    let (k, d) = (r.gen_range(1..4), r.gen_range(1..4));
    let x = if r.gen_bool(0.5) {
        let b = r.gen_range(1..3);
        rand_tensor(r, &[b, t, cin])
    } else {
        rand_tensor(r, &[t, cin])
    };
    let inputs = vec![x, rand_tensor(r, &[k, cin, cout]), rand_tensor(r, &[cout])];
    (
        inputs,
        Box::new(move |g, v| g.causal_conv1d(v[0], v[1], v[2], d).unwrap()),
    )
}

fn batch_norm_train(r: &mut ChaCha8Rng) -> Case {
    let (n, c) = (r.gen_range(2..7), r.gen_range(1..4));
    let shape = if r.gen_bool(0.5) {
        vec![n, c]
    } else {
        vec![r.gen_range(1..3), n, c]
    };
    let inputs = vec![
        rand_tensor(r, &shape),
        rand_tensor(r, &[c]),
        rand_tensor(r, &[c]),
    ];
    (
        inputs,
        Box::new(move |g, v| {
            let mut st = BatchNormState::new(c);
            g.batch_norm(
                v[0],
                v[1],
                v[2],
                &mut st,
                Mode::Train,
                BatchNormConfig::default(),
            )
            .unwrap()
        }),
    )
}

fn batch_norm_infer(r: &mut ChaCha8Rng) -> Case {
    let (n, c) = (r.gen_range(1..6), r.gen_range(1..4));
    let inputs = vec![
        rand_tensor(r, &[n, c]),
        rand_tensor(r, &[c]),
        rand_tensor(r, &[c]),
    ];
    let st = BatchNormState {
        running_mean: (0..c).map(|_| r.gen_range(-0.5..0.5)).collect(),
        running_var: (0..c).map(|_| r.gen_range(0.2..2.0)).collect(),
    };
    (
        inputs,
        Box::new(move |g, v| {
            let mut st = st.clone();
            g.batch_norm(
                v[0],
                v[1],
                v[2],
                &mut st,
                Mode::Infer,
                BatchNormConfig::default(),
            )
            .unwrap()
        }),
    )
}

fn dropout(r: &mut ChaCha8Rng) -> Case {
    let shape = vec![r.gen_range(1..5), r.gen_range(1..8)];
    let rate = r.gen_range(0.05..0.6);
    let mask_seed: u64 = r.gen();
    (
        vec![rand_tensor(r, &shape)],
        Box::new(move |g, v| {
            // same seed on every evaluation, so the mask is fixed
            let mut mr = ChaCha8Rng::seed_from_u64(mask_seed);
            g.dropout(v[0], rate, Mode::Train, &mut mr).unwrap()
        }),
    )
}

fn relu(r: &mut ChaCha8Rng) -> Case {
    let shape = vec![r.gen_range(1..5), r.gen_range(1..8)];
    (
        vec![away_from_zero(r, &shape, 0.01)],
        Box::new(|g, v| g.relu(v[0]).unwrap()),
    )
}

fn pool_case(r: &mut ChaCha8Rng, kind: PoolKind) -> Case {
    let (t, c) = (r.gen_range(1..8), r.gen_range(1..4));
    let shape = if r.gen_bool(0.5) {
        vec![t, c]
    } else {
        vec![r.gen_range(1..3), t, c]
    };
    let n: usize = shape.iter().product();
    // distinct values spaced far beyond 2h, so the argmax never switches
    let mut vals: Vec<f64> = (0..n).map(|i| i as f64 * 0.05).collect();
    for i in (1..n).rev() {
        vals.swap(i, r.gen_range(0..=i));
    }
    let x = Tensor::from_f64(&shape, &vals).unwrap();
    (
        vec![x],
        Box::new(move |g, v| g.global_pool(v[0], kind).unwrap()),
    )
}

fn avg_pool(r: &mut ChaCha8Rng) -> Case {
    pool_case(r, PoolKind::Avg)
}

fn max_pool(r: &mut ChaCha8Rng) -> Case {
    pool_case(r, PoolKind::Max)
}

fn concat(r: &mut ChaCha8Rng) -> Case {
    let b = r.gen_range(1..4);
    let parts = r.gen_range(1..4);
    let inputs: Vec<Tensor<f64>> = (0..parts)
        .map(|_| {
            let w = r.gen_range(1..5);
            rand_tensor(r, &[b, w])
        })
        .collect();
    (inputs, Box::new(|g, v| g.concat(v).unwrap()))
}

fn slice_last_k(r: &mut ChaCha8Rng) -> Case {
    let (b, t, c) = (r.gen_range(1..3), r.gen_range(1..8), r.gen_range(1..4));
    let k = r.gen_range(1..=t);
    (
        vec![rand_tensor(r, &[b, t, c])],
        Box::new(move |g, v| g.slice_last_k(v[0], k).unwrap()),
    )
}

fn flatten(r: &mut ChaCha8Rng) -> Case {
    let shape = vec![r.gen_range(1..3), r.gen_range(1..5), r.gen_range(1..4)];
    (
        vec![rand_tensor(r, &shape)],
        Box::new(|g, v| g.flatten(v[0]).unwrap()),
    )
}

fn sum(r: &mut ChaCha8Rng) -> Case {
    let shape = vec![r.gen_range(1..4), r.gen_range(1..6)];
    (
        vec![rand_tensor(r, &shape)],
        Box::new(|g, v| g.sum(v[0]).unwrap()),
    )
}

fn mse_loss(r: &mut ChaCha8Rng) -> Case {
    let shape = vec![r.gen_range(1..4), r.gen_range(1..6)];
    let inputs = vec![rand_tensor(r, &shape), rand_tensor(r, &shape)];
    (inputs, Box::new(|g, v| g.mse_loss(v[0], v[1]).unwrap()))
}

/// conv -> BN -> dropout -> avg pool + last step -> dense, as in the model.
/// ReLU and max pooling are left out of the composite: their kinks are
/// covered by their own suites.
fn composed(r: &mut ChaCha8Rng) -> Case {
    let (b, t, cin, cout) = (
        r.gen_range(2..4),
        r.gen_range(2..7),
        r.gen_range(1..3),
        r.gen_range(1..4),
    );
    let d = r.gen_range(1..3);
    let mask_seed: u64 = r.gen();
    let inputs = vec![
        rand_tensor(r, &[b, t, cin]),
        rand_tensor(r, &[2, cin, cout]),
        rand_tensor(r, &[cout]),
        rand_tensor(r, &[cout]),
        rand_tensor(r, &[cout]),
        rand_tensor(r, &[2 * cout, 3]),
        rand_tensor(r, &[3]),
    ];
    (
        inputs,
        Box::new(move |g, v| {
            let mut mr = ChaCha8Rng::seed_from_u64(mask_seed);
            let mut st = BatchNormState::new(cout);
            let h = g.causal_conv1d(v[0], v[1], v[2], d).unwrap();
            let h = g
                .batch_norm(
                    h,
                    v[3],
                    v[4],
                    &mut st,
                    Mode::Train,
                    BatchNormConfig::default(),
                )
                .unwrap();
            let h = g.dropout(h, 0.2, Mode::Train, &mut mr).unwrap();
            let a = g.global_pool(h, PoolKind::Avg).unwrap();
            let last = g.slice_last_k(h, 1).unwrap();
            let last = g.flatten(last).unwrap();
            let z = g.concat(&[a, last]).unwrap();
            g.dense(z, v[5], v[6]).unwrap()
        }),
    )
}

/// Every suite with its seed.
pub const SUITES: &[(&str, u64, CaseFn)] = &[
    ("matmul", 1, matmul),
    ("add_bias", 2, add_bias),
    ("dense", 3, dense),
    ("causal_conv1d", 4, causal_conv),
    ("batch_norm/train", 5, batch_norm_train),
    ("batch_norm/infer", 6, batch_norm_infer),
    ("dropout", 7, dropout),
    ("relu", 8, relu),
    ("global_pool/avg", 9, avg_pool),
    ("global_pool/max", 10, max_pool),
    ("concat", 11, concat),
    ("slice_last_k", 12, slice_last_k),
    ("flatten", 13, flatten),
    ("sum", 14, sum),
    ("mse_loss", 15, mse_loss),
    ("composed", 16, composed),
];

pub fn suite(name: &str) -> SuiteResult {
    let &(n, seed, f) = SUITES
        .iter()
        .find(|(n, _, _)| *n == name)
        .unwrap_or_else(|| panic!("no suite {name}"));
    run_suite(n, seed, f)
}

pub fn run_all() -> Vec<SuiteResult> {
    SUITES
        .iter()
        .map(|&(n, seed, f)| run_suite(n, seed, f))
        .collect()
}
