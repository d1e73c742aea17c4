//! Minimal differentiable tensor engine.
//!
//! Only the operators the forecaster needs: matmul/bias, causal dilated
//! convolution, batch normalization, inverted dropout, ReLU, global
//! pooling, concatenation, last-k slicing, flatten and MSE.

mod graph;
mod tensor;

pub use graph::{BatchNormConfig, BatchNormState, Graph, Mode, PoolKind, Var};
pub use tensor::{Element, Tensor};

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, v).unwrap()
    }

    fn conv1(x: &[f64], taps: &[f64], dilation: usize) -> Vec<f64> {
        let mut g = Graph::<f64>::new();
        let xv = g.leaf(t(&[x.len(), 1], x));
        let wv = g.leaf(t(&[taps.len(), 1, 1], taps));
        let bv = g.leaf(t(&[1], &[0.0]));
        let y = g.causal_conv1d(xv, wv, bv, dilation).unwrap();
        g.data(y).to_vec()
    }

    #[test]
    fn matmul_examples() {
        let mut g = Graph::<f64>::new();
        let a = g.leaf(t(&[2, 2], &[1., 2., 3., 4.]));
        let i = g.leaf(Tensor::identity(2));
        let y = g.matmul(a, i).unwrap();
        assert_eq!(g.data(y), &[1., 2., 3., 4.]);

        let a = g.leaf(t(&[1, 2], &[1., 2.]));
        let b = g.leaf(t(&[2, 1], &[3., 4.]));
        let y = g.matmul(a, b).unwrap();
        assert_eq!(g.data(y), &[11.]);
    }

    #[test]
    fn matmul_shape_error_reports_both_shapes() {
        let mut g = Graph::<f32>::new();
        let a = g.leaf(Tensor::zeros(&[2, 3]));
        let b = g.leaf(Tensor::zeros(&[2, 3]));
        let msg = g.matmul(a, b).unwrap_err().to_string();
        assert!(msg.contains("[2, 3] x [2, 3]"), "{msg}");
    }

    #[test]
    fn conv_examples() {
        assert_eq!(
            conv1(&[1., 2., 3., 4.], &[0., 0., 1.], 1),
            vec![1., 2., 3., 4.]
        );
        assert_eq!(
            conv1(&[1., 1., 1., 1.], &[1., 1., 1.], 1),
            vec![1., 2., 3., 3.]
        );
    }

    #[test]
    fn conv_channel_mismatch() {
        let mut g = Graph::<f32>::new();
        let x = g.leaf(Tensor::zeros(&[4, 2]));
        let w = g.leaf(Tensor::zeros(&[3, 3, 1]));
        let b = g.leaf(Tensor::zeros(&[1]));
        assert!(matches!(
            g.causal_conv1d(x, w, b, 1),
            Err(crate::Error::Dimension(_))
        ));
    }

    #[test]
    fn dilated_conv_is_causal_with_receptive_field_five() {
        let base: Vec<f64> = (0..12).map(|v| (v as f64 * 0.37).sin()).collect();
        let taps = [0.3, -0.7, 1.1];
        let y0 = conv1(&base, &taps, 2);
        let mut x = base.clone();
        x[5] += 10.0;
        let y1 = conv1(&x, &taps, 2);
        assert_eq!(&y0[..5], &y1[..5]);
        // output[t] sees exactly {t, t-2, t-4}
        let changed: Vec<usize> = (0..12).filter(|&i| y0[i] != y1[i]).collect();
        assert_eq!(changed, vec![5, 7, 9]);
    }

    #[test]
    fn batch_norm_examples() {
        let cfg = BatchNormConfig::default();
        let mut g = Graph::<f64>::new();
        let x = g.leaf(t(&[3, 2], &[1., -2., 3., 4., 0.5, 7.]));
        let gamma = g.leaf(t(&[2], &[1., 1.]));
        let beta = g.leaf(t(&[2], &[0., 0.]));
        let mut st = BatchNormState::<f64>::new(2);
        let y = g
            .batch_norm(x, gamma, beta, &mut st, Mode::Infer, cfg)
            .unwrap();
        let s = 1.0 / (1.0f64 + 1e-3).sqrt();
        for (o, i) in g.data(y).iter().zip(g.data(x)) {
            assert!((o - i * s).abs() < 1e-12);
        }

        let xc = g.leaf(t(&[4, 1], &[2.5; 4]));
        let gm = g.leaf(t(&[1], &[1.7]));
        let bt = g.leaf(t(&[1], &[5.0]));
        let mut st = BatchNormState::<f64>::new(1);
        let y = g.batch_norm(xc, gm, bt, &mut st, Mode::Train, cfg).unwrap();
        assert!(g.data(y).iter().all(|&v| v == 5.0));
    }

    #[test]
    fn batch_norm_running_update() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(t(&[2, 1], &[1.0, 3.0]));
        let gm = g.leaf(t(&[1], &[1.0]));
        let bt = g.leaf(t(&[1], &[0.0]));
        let mut st = BatchNormState {
            running_mean: vec![4.0],
            running_var: vec![2.0],
        };
        g.batch_norm(x, gm, bt, &mut st, Mode::Train, BatchNormConfig::default())
            .unwrap();
        assert!((st.running_mean[0] - (0.99 * 4.0 + 0.01 * 2.0)).abs() < 1e-12);
        // unbiased variance of [1, 3] is 2
        assert!((st.running_var[0] - (0.99 * 2.0 + 0.01 * 2.0)).abs() < 1e-12);
    }

    #[test]
    fn batch_norm_rejects_single_sample() {
        let mut g = Graph::<f32>::new();
        let x = g.leaf(Tensor::zeros(&[1, 3]));
        let gm = g.leaf(Tensor::full(&[3], 1.0));
        let bt = g.leaf(Tensor::zeros(&[3]));
        let mut st = BatchNormState::new(3);
        let r = g.batch_norm(x, gm, bt, &mut st, Mode::Train, BatchNormConfig::default());
        assert!(matches!(r, Err(crate::Error::Contract(_))));
    }

    #[test]
    fn dropout_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut g = Graph::<f64>::new();
        let x = g.leaf(t(&[4], &[1., 2., 3., 4.]));
        let y = g.dropout(x, 0.1, Mode::Infer, &mut rng).unwrap();
        assert_eq!(g.data(y), g.data(x));
        let y = g.dropout(x, 0.0, Mode::Train, &mut rng).unwrap();
        assert_eq!(g.data(y), g.data(x));
        assert!(g.dropout(x, 1.0, Mode::Train, &mut rng).is_err());
    }

    #[test]
    fn dropout_preserves_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x: Vec<f64> = (0..8).map(|i| 1.0 + i as f64).collect();
        let mut acc = [0.0; 8];
        let reps = 10_000;
        for _ in 0..reps {
            let mut g = Graph::<f64>::new();
            let xv = g.leaf(t(&[8], &x));
            let y = g.dropout(xv, 0.5, Mode::Train, &mut rng).unwrap();
            for (a, v) in acc.iter_mut().zip(g.data(y)) {
                *a += v;
            }
        }
        let got: f64 = acc.iter().sum::<f64>() / reps as f64;
        let want: f64 = x.iter().sum();
        assert!((got - want).abs() / want < 0.02, "{got} vs {want}");
    }

    #[test]
    fn pooling_examples() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(t(&[3, 1], &[1., 5., 3.]));
        let a = g.global_pool(x, PoolKind::Avg).unwrap();
        let m = g.global_pool(x, PoolKind::Max).unwrap();
        assert_eq!(g.data(a), &[3.0]);
        assert_eq!(g.data(m), &[5.0]);

        let c = g.leaf(Tensor::full(&[2, 4, 3], 3.0));
        let a = g.global_pool(c, PoolKind::Avg).unwrap();
        let m = g.global_pool(c, PoolKind::Max).unwrap();
        assert!(g.data(a).iter().chain(g.data(m)).all(|&v| v == 3.0));
        assert_eq!(g.shape(a), &[2, 3]);

        let e = g.leaf(Tensor::zeros(&[0, 2]));
        assert!(g.global_pool(e, PoolKind::Avg).is_err());
    }

    #[test]
    fn max_pool_routes_gradient_to_argmax() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(t(&[3, 1], &[1., 5., 3.]).with_grad());
        let m = g.global_pool(x, PoolKind::Max).unwrap();
        let s = g.sum(m).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[0., 1., 0.]);
    }

    #[test]
    fn small_op_examples() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(t(&[3], &[-1., 0., 2.]));
        let r = g.relu(x).unwrap();
        assert_eq!(g.data(r), &[0., 0., 2.]);

        let a = g.leaf(t(&[2], &[1., 3.]));
        let b = g.leaf(t(&[2], &[2., 5.]));
        let z = g.mse_loss(a, a).unwrap();
        assert_eq!(g.data(z), &[0.0]);
        let l = g.mse_loss(a, b).unwrap();
        assert_eq!(g.data(l), &[2.5]);

        let s = g.leaf(Tensor::zeros(&[1, 5, 2]));
        assert!(g.slice_last_k(s, 6).is_err());
        let k = g.slice_last_k(s, 2).unwrap();
        assert_eq!(g.shape(k), &[1, 2, 2]);
        let f = g.flatten(k).unwrap();
        assert_eq!(g.shape(f), &[1, 4]);
    }

    #[test]
    fn backward_of_sum_is_ones() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(t(&[2, 3], &[0.3, -1., 2., 7., 0., 1.]).with_grad());
        let s = g.sum(x).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[1.0; 6]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(t(&[2], &[1., 2.]).with_grad());
        assert!(matches!(g.backward(x), Err(crate::Error::Contract(_))));
    }

    #[test]
    fn fan_out_accumulates() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(t(&[1, 2], &[1., 2.]).with_grad());
        let c = g.concat(&[x, x]).unwrap();
        let s = g.sum(c).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[2., 2.]);
    }
}
