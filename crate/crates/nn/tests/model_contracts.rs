use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use trussmodal_nn::network::{GraphInput, Model, ModelConfig, Variant};
use trussmodal_nn::params::Bound;
use trussmodal_nn::tape::Tape;
use trussmodal_nn::training::{evaluate, train_inputs, LossWeights, TrainConfig};

const LEN: usize = 96;

/// Connected random graph: a spanning chain plus random extra edges.
fn random_graph(rng: &mut ChaCha8Rng, n: usize) -> GraphInput {
    let mut groups: Vec<Vec<usize>> = (0..n).map(|v| vec![v]).collect();
    let link = |a: usize, b: usize, groups: &mut Vec<Vec<usize>>| {
        if a != b && !groups[a].contains(&b) {
            groups[a].push(b);
            groups[b].push(a);
        }
    };
    for v in 1..n {
        let u = rng.random_range(0..v);
        link(u, v, &mut groups);
    }
    for _ in 0..n {
        let (a, b) = (rng.random_range(0..n), rng.random_range(0..n));
        link(a, b, &mut groups);
    }
    for g in &mut groups {
        g.sort_unstable();
    }
    GraphInput {
        signals: DMatrix::from_fn(n, LEN, |_, _| rng.random_range(-1.0..1.0)),
        groups,
        coords: (0..n).map(|_| (rng.random_range(0.0..10.0), rng.random_range(0.0..2.0))).collect(),
        mask: (0..n).map(|_| rng.random_bool(0.5)).collect(),
    }
}

fn config(variant: Variant) -> ModelConfig {
    ModelConfig { n_modes: 5, input_len: LEN, hidden_dim: 32, variant, ..ModelConfig::default() }
}

fn max_abs(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn permutation_contract_over_random_graphs() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let models: Vec<Model> = [Variant::Full, Variant::SetLstm].iter().map(|&v| Model::new(config(v), 7).unwrap()).collect();
    for _ in 0..20 {
        let n = rng.random_range(5..32);
        let g = random_graph(&mut rng, n);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let pg = g.permuted(&perm);
        for model in &models {
            let (q, phi, _) = model.raw(&g).unwrap();
            let (pq, pphi, _) = model.raw(&pg).unwrap();
            assert!(max_abs(&q, &pq) < 1e-5, "Q moved by {}", max_abs(&q, &pq));
            let expected = DMatrix::from_fn(n, phi.ncols(), |r, c| phi[(perm[r], c)]);
            assert!(max_abs(&expected, &pphi) < 1e-5);
            let (l, pl) = (evaluate(model, &g, LossWeights::default()).unwrap(), evaluate(model, &pg, LossWeights::default()).unwrap());
            assert!((l.total - pl.total).abs() < 1e-6, "{} vs {}", l.total, pl.total);
        }
    }
}

#[test]
fn subset_variant_is_permutation_invariant_on_its_subset() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let model = Model::new(config(Variant::NoGnn), 1).unwrap();
    for _ in 0..5 {
        let g = random_graph(&mut rng, 20);
        let mut perm: Vec<usize> = (0..20).collect();
        perm.shuffle(&mut rng);
        let a = model.decompose(&g).unwrap();
        let b = model.decompose(&g.permuted(&perm)).unwrap();
        assert!(max_abs(&a.modal_responses, &b.modal_responses) < 1e-5);
        let expected = DMatrix::from_fn(20, a.n_modes(), |r, c| a.mode_shapes[(perm[r], c)]);
        assert!(max_abs(&expected, &b.mode_shapes) < 1e-5);
    }
}

#[test]
fn attention_head_ignores_duplicated_rows() {
    let model = Model::new(config(Variant::Full), 5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let h = DMatrix::from_fn(12, 32, |_, _| rng.random_range(-1.0..1.0));
    let h2 = DMatrix::from_fn(24, 32, |r, c| h[(r % 12, c)]);
    let run = |h: &DMatrix<f64>| {
        let mut t = Tape::new();
        let p = Bound::new(&mut t, &model.params);
        let hv = t.constant(h.clone());
        let q = model.graph_head(&mut t, &p, hv);
        t.value(q).clone()
    };
    let (a, b) = (run(&h), run(&h2));
    assert!(max_abs(&a, &b) < 1e-10, "{}", max_abs(&a, &b));
}

#[test]
fn identical_hidden_rows_give_identical_shapes() {
    let model = Model::new(config(Variant::Full), 5).unwrap();
    let h = DMatrix::from_fn(3, 32, |r, c| if r == 2 { (c as f64).sin() } else { ((r * 32 + c) as f64).cos() });
    let h = DMatrix::from_fn(4, 32, |r, c| h[(r.min(2), c)]);
    let mut t = Tape::new();
    let p = Bound::new(&mut t, &model.params);
    let hv = t.constant(h);
    let s = model.node_head(&mut t, &p, hv);
    let phi = t.value(s);
    assert_eq!(phi.row(2), phi.row(3));
}

#[test]
fn ragged_batch_shapes() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for variant in [Variant::Full, Variant::NoGnn, Variant::SetLstm] {
        let model = Model::new(config(variant), 2).unwrap();
        for n in [20, 25, 31] {
            let out = model.decompose(&random_graph(&mut rng, n)).unwrap();
            assert_eq!(out.modal_responses.shape(), (5, LEN));
            assert_eq!(out.mode_shapes.shape(), (n, 5));
        }
    }
}

#[test]
fn finite_outputs_at_initialisation() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let model = Model::new(config(Variant::Full), 0).unwrap();
    for _ in 0..100 {
        let n = rng.random_range(3..40);
        let out = model.decompose(&random_graph(&mut rng, n)).unwrap();
        assert!(out.is_finite());
    }
}

#[test]
fn normalised_shapes_have_unit_positive_peak() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let model = Model::new(config(Variant::Full), 3).unwrap();
    let g = random_graph(&mut rng, 15);
    let (q, phi, _) = model.raw(&g).unwrap();
    let out = model.decompose(&g).unwrap();
    assert!(max_abs(&(&phi * &q), &(&out.mode_shapes * &out.modal_responses)) < 1e-9);
    for c in 0..5 {
        let col = out.mode_shapes.column(c);
        let peak = col.iter().copied().fold(0.0f64, |m, v| if v.abs() > m.abs() { v } else { m });
        assert!((peak - 1.0).abs() < 1e-12);
    }
}

#[test]
fn wrong_signal_length_is_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let model = Model::new(ModelConfig { input_len: LEN + 1, ..config(Variant::Full) }, 0).unwrap();
    assert!(model.raw(&random_graph(&mut rng, 6)).is_err());
}

fn small_train(lr: f64, epochs: usize, seed: u64) -> (Vec<GraphInput>, Vec<GraphInput>, ModelConfig, TrainConfig) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let train: Vec<_> = (0..3).map(|i| random_graph(&mut rng, 6 + i)).collect();
    let val = vec![random_graph(&mut rng, 7)];
    let mc = ModelConfig { hidden_dim: 16, n_modes: 3, n_inducing_points: 4, ..config(Variant::Full) };
    let tc = TrainConfig { learning_rate: lr, epochs, batch_size: 2, seed, ..TrainConfig::default() };
    (train, val, mc, tc)
}

#[test]
fn zero_learning_rate_freezes_parameters() {
    let (train, val, mc, tc) = small_train(0.0, 4, 6);
    let out = train_inputs(&train, &val, &mc, &tc, |_| {}).unwrap();
    let init = Model::new(mc, trussmodal_core::seed::derive_named(tc.seed, "init")).unwrap();
    assert_eq!(out.model.params, init.params);
    let losses: Vec<f64> = out.log.records.iter().map(|r| r.train.total).collect();
    assert!(losses.windows(2).all(|w| (w[0] - w[1]).abs() < 1e-12), "{losses:?}");
}

#[test]
fn training_is_deterministic_and_logs_every_epoch() {
    let (train, val, mc, tc) = small_train(1e-3, 5, 8);
    let a = train_inputs(&train, &val, &mc, &tc, |_| {}).unwrap();
    let b = train_inputs(&train, &val, &mc, &tc, |_| {}).unwrap();
    assert_eq!(a.model.params, b.model.params);
    assert_eq!(a.log.epochs(), 5);
    assert!(a.log.records.iter().all(|r| r.validation.is_some()));
    assert_eq!(a.log.to_csv().lines().count(), 6);
}

#[test]
fn training_reduces_the_loss() {
    let (train, val, mc, tc) = small_train(3e-3, 60, 10);
    let out = train_inputs(&train, &val, &mc, &tc, |_| {}).unwrap();
    let first = out.log.records[0].train.total;
    let last = out.log.records.last().unwrap().train.total;
    assert!(last < 0.8 * first, "{first} -> {last}");
}

#[test]
fn disabled_independence_trains_on_reconstruction_only() {
    let (train, val, mc, mut tc) = small_train(1e-3, 2, 11);
    tc.independence_enabled = false;
    let out = train_inputs(&train, &val, &mc, &tc, |_| {}).unwrap();
    for r in &out.log.records {
        assert!((r.train.total - 10.0 * r.train.reconstruction).abs() < 1e-9 * r.train.total.max(1.0));
    }
}

#[test]
fn empty_train_split_is_an_error() {
    let (_, val, mc, tc) = small_train(1e-3, 1, 1);
    assert!(train_inputs(&[], &val, &mc, &tc, |_| {}).is_err());
}
