use hlmbo::rng;
use hlmbo::task::{make_synthetic_family, FamilyConfig, FamilyKind, TaskDataset};
use hlmbo::tnp::{load_model, meta_train, save_model, sequence_loss_and_grad, Network, Shape, TnpConfig, TnpModel};
use hlmbo::Error;

fn tiny_config() -> TnpConfig {
    TnpConfig {
        model_dim: 8,
        embed_layers: 2,
        ff_dim: 16,
        heads: 2,
        transformer_layers: 1,
        train_steps: 20,
        batch_tasks: 2,
        max_sequence: 8,
        eval_every: 10,
        ..TnpConfig::desk()
    }
}

fn tiny_model() -> TnpModel {
    let cfg = FamilyConfig { kind: FamilyKind::RandomFeatures { features: 16, lengthscale: 0.3 }, dims: 2, n_train: 4, n_val: 1, n_test: 1 };
    let family = make_synthetic_family(&cfg, 3).unwrap();
    meta_train(&family, &tiny_config(), 11).unwrap()
}

fn dataset(points: &[[f64; 2]], values: &[f64]) -> TaskDataset {
    TaskDataset::from_parts("t", points.iter().map(|p| p.to_vec()).collect(), values.to_vec()).unwrap()
}

#[test]
fn analytic_gradient_matches_finite_differences() {
    let shape = Shape { input_dim: 3, model_dim: 8, embed_layers: 2, ff_dim: 16, heads: 2, layers: 1 };
    let net = Network::new(shape);
    let params = net.init(&mut rng::stream(5, 0, 0));
    // one context point and one target: [context][truth][query] = 3 tokens
    let ctx = vec![(vec![0.3], 0.7)];
    let tgt = vec![(vec![0.8], -0.4)];
    let loss = |p: &[f64]| {
        let mut g = vec![0.0; p.len()];
        sequence_loss_and_grad(&net, p, &ctx, &tgt, &mut g, 1.0, None)
    };
    let mut grads = vec![0.0; params.len()];
    sequence_loss_and_grad(&net, &params, &ctx, &tgt, &mut grads, 1.0, None);

    let h = 1e-6;
    let mut numeric = vec![0.0; params.len()];
    for i in 0..params.len() {
        let mut p = params.clone();
        p[i] += h;
        let up = loss(&p);
        p[i] -= 2.0 * h;
        let down = loss(&p);
        numeric[i] = (up - down) / (2.0 * h);
    }
    let diff = grads.iter().zip(&numeric).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let norm = numeric.iter().map(|b| b * b).sum::<f64>().sqrt();
    assert!(norm > 1e-3, "degenerate gradient");
    assert!(diff / norm < 1e-4, "relative gradient error {}", diff / norm);
    for (i, (a, b)) in grads.iter().zip(&numeric).enumerate() {
        if b.abs() > 1e-4 {
            assert!((a - b).abs() / b.abs() < 1e-4, "param {i}: analytic {a}, numeric {b}");
        }
    }
}

#[test]
fn context_order_does_not_change_prediction() {
    let model = tiny_model();
    let pts = [[0.1, 0.9], [0.5, 0.5], [0.7, 0.2], [0.3, 0.3], [0.9, 0.6]];
    let ys = [0.1, -0.2, 0.4, 0.0, 0.3];
    let a = dataset(&pts, &ys);
    let order = [3, 0, 4, 2, 1];
    let b = dataset(&order.map(|i| pts[i]), &order.map(|i| ys[i]));
    let targets = vec![vec![0.2, 0.4], vec![0.6, 0.8], vec![0.95, 0.05]];
    let pa = model.predict(&a, &targets).unwrap();
    let pb = model.predict(&b, &targets).unwrap();
    assert_eq!(pa, pb);
    assert_eq!(model.nll(&a, &dataset(&[[0.2, 0.2]], &[0.1])).unwrap(), model.nll(&b, &dataset(&[[0.2, 0.2]], &[0.1])).unwrap());
}

#[test]
fn later_targets_do_not_affect_earlier_ones() {
    let model = tiny_model();
    let ctx = dataset(&[[0.2, 0.7], [0.6, 0.1]], &[0.3, -0.1]);
    let base = vec![vec![0.1, 0.1], vec![0.4, 0.9], vec![0.8, 0.5]];
    let p = model.predict(&ctx, &base).unwrap();
    let mut moved = base.clone();
    moved[2] = vec![0.33, 0.44];
    let q = model.predict(&ctx, &moved).unwrap();
    assert_eq!(p.mean[..2], q.mean[..2]);
    assert_eq!(p.variance[..2], q.variance[..2]);
    let short = model.predict(&ctx, &base[..1]).unwrap();
    assert_eq!(short.mean[0], p.mean[0]);

    // teacher-forced likelihood: earlier per-target terms ignore later truths
    let t1 = dataset(&[[0.1, 0.1]], &[0.2]);
    let t2 = dataset(&[[0.1, 0.1], [0.4, 0.9]], &[0.2, 5.0]);
    let t3 = dataset(&[[0.1, 0.1], [0.4, 0.9]], &[0.2, -5.0]);
    let first = model.nll(&ctx, &t1).unwrap();
    let second_a = 2.0 * model.nll(&ctx, &t2).unwrap() - first;
    let second_b = 2.0 * model.nll(&ctx, &t3).unwrap() - first;
    assert_ne!(second_a, second_b);
}

#[test]
fn predictions_are_positive_and_nll_finite() {
    let model = tiny_model();
    let empty = TaskDataset::new("t");
    let post = model.predict(&empty, &[vec![0.5, 0.5], vec![0.0, 1.0]]).unwrap();
    assert!(post.variance.iter().all(|v| *v > 0.0));
    let ctx = dataset(&[[0.5, 0.5]], &[1e6]);
    let nll = model.nll(&ctx, &dataset(&[[0.2, 0.2]], &[-1e6])).unwrap();
    assert!(nll.is_finite());
}

#[test]
fn predict_rejects_bad_requests() {
    let model = tiny_model();
    let empty = TaskDataset::new("t");
    assert!(matches!(model.predict(&empty, &[]), Err(Error::EmptyRequest(_))));
    assert!(matches!(model.predict(&empty, &[vec![0.5]]), Err(Error::Shape(_))));
    let bad_ctx = TaskDataset::from_parts("t", vec![vec![0.1, 0.2, 0.3]], vec![1.0]).unwrap();
    assert!(matches!(model.predict(&bad_ctx, &[vec![0.5, 0.5]]), Err(Error::Shape(_))));
}

#[test]
fn training_is_seed_deterministic() {
    let a = tiny_model();
    let b = tiny_model();
    assert_eq!(a.params(), b.params());
    assert_eq!(a.history, b.history);
    assert!(a.params().iter().all(|p| p.is_finite()));
}

#[test]
fn training_rejects_short_sequences() {
    let family = make_synthetic_family(&FamilyConfig { n_train: 2, n_val: 0, n_test: 0, ..FamilyConfig::default() }, 1).unwrap();
    let cfg = TnpConfig { max_sequence: 1, ..tiny_config() };
    assert!(matches!(meta_train(&family, &cfg, 0), Err(Error::InsufficientData(_))));
}

#[test]
fn checkpoint_round_trip_is_bitwise() {
    let model = tiny_model();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.tnp");
    save_model(&model, &path).unwrap();
    let loaded = load_model(&path).unwrap();
    assert_eq!(loaded.config, model.config);
    assert_eq!(loaded.normalization, model.normalization);
    assert_eq!(loaded.history, model.history);
    let ctx = dataset(&[[0.2, 0.7], [0.6, 0.1]], &[0.3, -0.1]);
    let targets: Vec<Vec<f64>> = (0..50).map(|i| vec![i as f64 / 49.0, 1.0 - i as f64 / 49.0]).collect();
    assert_eq!(model.predict(&ctx, &targets).unwrap(), loaded.predict(&ctx, &targets).unwrap());
    assert_eq!(model.fingerprint().unwrap(), loaded.fingerprint().unwrap());
    assert!(matches!(loaded.predict(&ctx, &[vec![0.1, 0.2, 0.3]]), Err(Error::Shape(_))));
}

#[test]
fn damaged_checkpoints_are_rejected() {
    let bytes = tiny_model().to_bytes().unwrap();
    for cut in [0, 10, bytes.len() / 2, bytes.len() - 1] {
        assert!(matches!(TnpModel::from_bytes(&bytes[..cut]), Err(Error::Checkpoint(_))), "cut at {cut}");
    }
    let mut flipped = bytes.clone();
    let mid = flipped.len() / 2;
    flipped[mid] ^= 0x40;
    assert!(matches!(TnpModel::from_bytes(&flipped), Err(Error::Checkpoint(_))));
    let mut version = bytes.clone();
    version[8] = 99;
    let err = TnpModel::from_bytes(&version).unwrap_err();
    assert!(err.to_string().contains("version"), "{err}");
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cut.tnp");
    std::fs::write(&path, &bytes[..bytes.len() - 7]).unwrap();
    assert!(matches!(load_model(&path), Err(Error::Checkpoint(_))));
}

#[test]
fn interval_coverage_counts_every_target() {
    let model = tiny_model();
    let tasks = make_synthetic_family(&FamilyConfig::default(), 0).unwrap().test;
    let cov = model.interval_coverage(&tasks[..3], 5, 7, 2, 9).unwrap();
    assert_eq!(cov.total, 3 * 7 * 2);
    assert!((0.0..=1.0).contains(&cov.rate()));
    assert_eq!(cov, model.interval_coverage(&tasks[..3], 5, 7, 2, 9).unwrap());
    assert!(matches!(model.interval_coverage(&[], 5, 7, 2, 9), Err(Error::EmptyRequest(_))));
}
