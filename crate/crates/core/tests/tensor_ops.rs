mod common;

use std::rc::Rc;

use proptest::prelude::*;

use common::{random_tensor, rng, unit_op_errors};
use nonar_mmi::nn::relative_buckets;
use nonar_mmi::params::{Gradients, ParamStore};
use nonar_mmi::tensor::{adam_step, AdamConfig, AdamState, Graph, Tensor};

const TOL: f64 = 1e-4;

#[test]
fn unit_op_gradients() {
    let errors = unit_op_errors();
    assert!(errors.len() >= 25);
    for (name, err) in errors {
        assert!(err < TOL, "{name}: relative error {err:e}");
    }
}

#[test]
fn relative_buckets_clip_distances() {
    let b = relative_buckets(4, 1);
    // rows are queries, columns keys; bucket = clip(j - i) + clip
    assert_eq!(&b[..4], &[1, 2, 2, 2]);
    assert_eq!(&b[12..], &[0, 0, 0, 1]);
}

#[test]
fn adam_matches_hand_computation() {
    let mut store = ParamStore::new();
    let id = store.insert("w", Tensor::vector(vec![1.0, -2.0])).unwrap();
    let cfg = AdamConfig {
        lr: 0.1,
        ..AdamConfig::default()
    };
    let mut opt = AdamState::new(cfg, &store, vec![id]);
    let steps = [[0.5, -1.0], [0.25, 3.0]];
    let (mut m, mut v, mut w) = ([0.0; 2], [0.0; 2], [1.0, -2.0]);
    for (k, gr) in steps.iter().enumerate() {
        let mut grads = Gradients::empty(1);
        grads.set(id, Tensor::vector(gr.to_vec()));
        adam_step(&mut store, &grads, &mut opt).unwrap();
        let n = (k + 1) as i32;
        for i in 0..2 {
            m[i] = 0.9 * m[i] + 0.1 * gr[i];
            v[i] = 0.98 * v[i] + 0.02 * gr[i] * gr[i];
            let mh = m[i] / (1.0 - 0.9f64.powi(n));
            let vh = v[i] / (1.0 - 0.98f64.powi(n));
            w[i] -= 0.1 * mh / (vh.sqrt() + 1e-8);
        }
    }
    for (got, want) in store.get(id).data().iter().zip(w) {
        assert!((got - want).abs() < 1e-12);
    }
    assert_eq!(opt.step(), 2);
}

#[test]
fn adam_rejects_missing_gradient() {
    let mut store = ParamStore::new();
    let id = store.insert("w", Tensor::vector(vec![1.0])).unwrap();
    let mut opt = AdamState::new(AdamConfig::default(), &store, vec![id]);
    assert!(adam_step(&mut store, &Gradients::empty(1), &mut opt).is_err());
    assert_eq!(store.get(id).data(), &[1.0]);
}

#[test]
fn shape_errors_are_reported() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::zeros(&[2, 3]));
    let b = g.constant(Tensor::zeros(&[2, 3]));
    assert!(g.matmul(a, b).is_err());
    assert!(g.gather_rows(a, &[2]).is_err());
    assert!(g.softmax(a, 2).is_err());
}

fn matrix_strategy() -> impl Strategy<Value = (usize, usize, Vec<f64>)> {
    (1usize..5, 1usize..6).prop_flat_map(|(m, n)| (Just(m), Just(n), prop::collection::vec(-30.0f64..30.0, m * n)))
}

proptest! {
    #[test]
    fn softmax_rows_are_distributions((m, n, data) in matrix_strategy()) {
        let mut g = Graph::new();
        let x = g.constant(Tensor::matrix(m, n, data).unwrap());
        let s = g.softmax(x, 1).unwrap();
        let ls = g.log_softmax(x, 1).unwrap();
        for i in 0..m {
            let row = g.value(s).row(i);
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(row.iter().all(|p| *p >= 0.0));
            for (j, p) in row.iter().enumerate() {
                prop_assert!((g.value(ls).at(i, j) - p.ln()).abs() < 1e-9 || *p < 1e-300);
            }
        }
    }

    #[test]
    fn layer_norm_rows_are_standardised((m, n, data) in matrix_strategy()) {
        prop_assume!(n >= 2);
        let mut g = Graph::new();
        let x = g.constant(Tensor::matrix(m, n, data).unwrap());
        let gain = g.constant(Tensor::full(&[n], 1.0));
        let bias = g.constant(Tensor::zeros(&[n]));
        let y = g.layer_norm(x, gain, bias).unwrap();
        for i in 0..m {
            let row = g.value(y).row(i);
            prop_assert!((row.iter().sum::<f64>() / n as f64).abs() < 1e-9);
        }
    }

    #[test]
    fn scatter_is_adjoint_of_gather(seed in 0u64..1000, m in 1usize..4, c in 1usize..5, w in 1usize..5) {
        let mut r = rng(seed);
        let idx: Rc<[usize]> = (0..m * w).map(|_| rand::Rng::gen_range(&mut r, 0..c)).collect::<Vec<_>>().into();
        let x = random_tensor(&[m, c], &mut r);
        let y = random_tensor(&[m, w], &mut r);
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let yv = g.constant(y.clone());
        let gx = g.gather_index(xv, idx.clone(), w).unwrap();
        let sy = g.scatter_index(yv, idx, c).unwrap();
        let lhs: f64 = g.value(gx).data().iter().zip(y.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = g.value(sy).data().iter().zip(x.data()).map(|(a, b)| a * b).sum();
        prop_assert!((lhs - rhs).abs() < 1e-9);
    }
}
