use hlmbo::acquisition::normal_cdf;
use hlmbo::preference::{
    augment_skew, build_pref_dataset, fit_preference_model, make_hypothesis, preference_posterior, Hypothesis,
    HypothesisKind, PrefSource, PreferenceConfig, PreferenceDataset, PreferenceModel, PreferencePair,
};
use hlmbo::task::{BlackBoxTask, Objective, SearchSpace, SimulatedExpert};
use hlmbo::{rng, Error};
use proptest::prelude::*;
use rand::Rng;

fn ramp(dims: usize) -> BlackBoxTask {
    let mut weights = vec![0.0; dims];
    weights[0] = 1.0;
    BlackBoxTask::new("ramp", SearchSpace::unit(dims), Objective::Linear { weights, bias: 0.0 })
        .with_optimum_at(vec![1.0; dims])
        .unwrap()
}

fn bowl() -> BlackBoxTask {
    BlackBoxTask::new(
        "bowl",
        SearchSpace::unit(2),
        Objective::Bumps { bumps: vec![hlmbo::task::Bump { center: vec![0.7, 0.3], width: 0.3, height: 1.0 }], baseline: 0.0 },
    )
    .with_located_optimum(0)
}

fn elicit(task: &BlackBoxTask, sigma: f64, m: usize, seed: u64) -> PreferenceDataset {
    let mut expert = SimulatedExpert::new(sigma, seed).unwrap();
    build_pref_dataset(&mut expert, task, &Hypothesis::full(&task.space), m, seed).unwrap()
}

#[test]
fn elicited_points_stay_inside_the_hypothesis() {
    let task = ramp(2);
    let h = make_hypothesis(HypothesisKind::Expert, &task, 10, 100, 3).unwrap();
    let mut expert = SimulatedExpert::new(0.1, 1).unwrap();
    let d = build_pref_dataset(&mut expert, &task, &h, 10, 2).unwrap();
    assert_eq!(d.len(), 10);
    for p in &d.pairs {
        assert!(h.contains(&p.x1) && h.contains(&p.x2));
        assert_ne!(p.x1, p.x2);
        assert_eq!(p.source, PrefSource::Simulated);
    }
}

#[test]
fn noiseless_labels_follow_the_objective() {
    let task = ramp(3);
    for p in &elicit(&task, 0.0, 200, 4).pairs {
        assert_eq!(p.y == 1, task.evaluate(&p.x1).unwrap() > task.evaluate(&p.x2).unwrap());
    }
}

#[test]
fn noisy_label_agreement_matches_the_normal_cdf() {
    let task = bowl();
    let d = elicit(&task, 0.1, 1000, 6);
    let (mut agree, mut expected) = (0.0, 0.0);
    for p in &d.pairs {
        let (f1, f2) = (task.evaluate(&p.x1).unwrap(), task.evaluate(&p.x2).unwrap());
        agree += f64::from(u8::from(f1 > f2) == p.y);
        expected += normal_cdf((f1 - f2).abs() / (2f64.sqrt() * 0.1));
    }
    let (agree, expected) = (agree / 1000.0, expected / 1000.0);
    assert!((agree - expected).abs() <= 0.05, "{agree} vs {expected}");
}

#[test]
fn zero_pairs_is_an_empty_request() {
    let task = ramp(1);
    let mut e = SimulatedExpert::new(0.0, 0).unwrap();
    assert!(matches!(build_pref_dataset(&mut e, &task, &Hypothesis::full(&task.space), 0, 0), Err(Error::EmptyRequest(_))));
}

#[test]
fn hypothesis_examples() {
    let task = BlackBoxTask::new("ramp", SearchSpace::unit(1), Objective::Linear { weights: vec![1.0], bias: 0.0 })
        .with_optimum_at(vec![0.95])
        .unwrap();
    let h = make_hypothesis(HypothesisKind::Expert, &task, 10, 100, 0).unwrap();
    assert!((h.boxes[0].lower()[0] - 0.9).abs() < 1e-12 && (h.boxes[0].upper()[0] - 1.0).abs() < 1e-12);
    let a = make_hypothesis(HypothesisKind::Adversarial, &task, 10, 100, 0).unwrap();
    assert!(a.boxes[0].lower()[0].abs() < 1e-12 && (a.boxes[0].upper()[0] - 0.1).abs() < 1e-12);
    assert_eq!(make_hypothesis(HypothesisKind::Random, &task, 10, 100, 0).unwrap(), Hypothesis::full(&task.space));
    let blind = BlackBoxTask::new("x", SearchSpace::unit(1), Objective::Constant { value: 0.0 });
    assert!(matches!(make_hypothesis(HypothesisKind::Expert, &blind, 10, 100, 0), Err(Error::HypothesisUnavailable(_))));
}

#[test]
fn adversarial_slab_matches_an_exhaustive_sum() {
    let task = bowl();
    let h = make_hypothesis(HypothesisKind::Adversarial, &task, 5, 400, 8).unwrap();
    let lo = h.boxes[0].lower()[0];
    let sums: Vec<f64> = (0..5)
        .map(|k| {
            let mut s = 0.0;
            for a in 0..40 {
                for b in 0..200 {
                    s += task.evaluate(&[0.2 * k as f64 + 0.2 * (a as f64 + 0.5) / 40.0, (b as f64 + 0.5) / 200.0]).unwrap();
                }
            }
            s
        })
        .collect();
    let lowest = (0..5).min_by(|a, b| sums[*a].total_cmp(&sums[*b])).unwrap();
    assert!((lo - 0.2 * lowest as f64).abs() < 1e-12, "picked slab at {lo}, sums {sums:?}");
}

#[test]
fn separable_preferences_are_learned() {
    let task = ramp(1);
    let d = elicit(&task, 0.0, 30, 12);
    let model = fit_preference_model(&augment_skew(&d), PreferenceConfig::default()).unwrap();
    let right = d.pairs.iter().filter(|p| (model.pair_probability(&p.x1, &p.x2).unwrap() > 0.5) == (p.y == 1)).count();
    assert!(right as f64 >= 0.95 * 30.0, "{right}/30");
    assert!(model.diagnostics().unwrap().train_accuracy >= 0.95);
}

#[test]
fn fitted_model_is_approximately_antisymmetric() {
    let task = bowl();
    let model = fit_preference_model(&augment_skew(&elicit(&task, 0.1, 40, 2)), PreferenceConfig::default()).unwrap();
    let mut r = rng::from_key(77);
    for _ in 0..100 {
        let a = vec![r.random::<f64>(), r.random::<f64>()];
        let b = vec![r.random::<f64>(), r.random::<f64>()];
        let s = model.pair_probability(&a, &b).unwrap() + model.pair_probability(&b, &a).unwrap();
        assert!((s - 1.0).abs() <= 0.05, "p + p' = {s}");
    }
}

#[test]
fn reference_point_scores_one_half() {
    let task = bowl();
    let model = fit_preference_model(&augment_skew(&elicit(&task, 0.1, 40, 3)), PreferenceConfig::default()).unwrap();
    for x_ref in [vec![0.2, 0.8], vec![0.7, 0.3], vec![0.5, 0.5]] {
        let post = preference_posterior(&model, &[x_ref.clone()], &x_ref, 9).unwrap();
        assert!((post.mean[0] - 0.5).abs() <= 0.05, "mu_pi at reference = {}", post.mean[0]);
    }
}

#[test]
fn uncertainty_grows_away_from_the_data() {
    let task = ramp(2);
    let h = Hypothesis { boxes: vec![SearchSpace::new(vec![0.0, 0.0], vec![0.25, 0.25]).unwrap()] };
    let mut e = SimulatedExpert::new(0.05, 0).unwrap();
    let d = build_pref_dataset(&mut e, &task, &h, 30, 5).unwrap();
    let model = fit_preference_model(&augment_skew(&d), PreferenceConfig { mc_samples: 512, ..PreferenceConfig::default() }).unwrap();
    let x_ref = vec![0.125, 0.125];
    let post = preference_posterior(&model, &[vec![0.1, 0.2], vec![0.95, 0.95]], &x_ref, 1).unwrap();
    assert!(post.variance[1] >= post.variance[0], "far {} vs dense {}", post.variance[1], post.variance[0]);
}

#[test]
fn posterior_means_converge_across_seeds() {
    let task = bowl();
    let cfg = PreferenceConfig { mc_samples: 4096, ..PreferenceConfig::default() };
    let model = fit_preference_model(&augment_skew(&elicit(&task, 0.1, 30, 8)), cfg).unwrap();
    let qs: Vec<Vec<f64>> = (0..10).map(|i| vec![0.1 * i as f64, 1.0 - 0.1 * i as f64]).collect();
    let a = preference_posterior(&model, &qs, &[0.5, 0.5], 1).unwrap();
    let b = preference_posterior(&model, &qs, &[0.5, 0.5], 2).unwrap();
    assert_eq!(a, preference_posterior(&model, &qs, &[0.5, 0.5], 1).unwrap());
    for ((m1, m2), v) in a.mean.iter().zip(&b.mean).zip(&a.variance) {
        assert!((m1 - m2).abs() <= 0.02);
        assert!(*v >= 1e-6);
    }
}

#[test]
fn unfitted_models_refuse_queries() {
    let m = PreferenceModel::new(PreferenceConfig::default());
    assert!(matches!(m.posterior(&[vec![0.5]], &[0.5], 0), Err(Error::ModelNotFitted)));
}

fn pair_strategy() -> impl Strategy<Value = PreferencePair> {
    (prop::collection::vec(0.0f64..1.0, 2), prop::collection::vec(0.0f64..1.0, 2), 0u8..2)
        .prop_filter("distinct points", |(a, b, _)| a != b)
        .prop_map(|(x1, x2, y)| PreferencePair { x1, x2, y, source: PrefSource::Simulated })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn augmentation_mirrors_every_pair(pairs in prop::collection::vec(pair_strategy(), 1..20)) {
        let d = PreferenceDataset { pairs };
        let a = augment_skew(&d);
        prop_assert_eq!(a.len(), 2 * d.len());
        for (p, q) in d.pairs.iter().zip(&a.pairs[d.len()..]) {
            prop_assert_eq!(&p.x1, &q.x2);
            prop_assert_eq!(&p.x2, &q.x1);
            prop_assert_eq!(p.y + q.y, 1);
        }
        let twice = augment_skew(&a);
        prop_assert_eq!(twice.len(), 4 * d.len());
        for p in &d.pairs {
            let same = twice.pairs.iter().filter(|q| q.x1 == p.x1 && q.x2 == p.x2 && q.y == p.y).count();
            let flipped = twice.pairs.iter().filter(|q| q.x1 == p.x2 && q.x2 == p.x1 && q.y == 1 - p.y).count();
            prop_assert!(same >= 2 && flipped >= 2);
        }
    }

    #[test]
    fn expert_slab_always_holds_the_optimum(x in 0.0f64..1.0, y in 0.0f64..1.0, k in 2usize..12) {
        let task = BlackBoxTask::new("t", SearchSpace::unit(2), Objective::Constant { value: 1.0 })
            .with_optimum_at(vec![x, y])
            .unwrap();
        let h = make_hypothesis(HypothesisKind::Expert, &task, k, 10, 0).unwrap();
        prop_assert!(h.contains(&[x, y]));
        prop_assert!(h.validate(&task.space).is_ok());
        let width = h.boxes[0].upper()[0] - h.boxes[0].lower()[0];
        prop_assert!((width - 1.0 / k as f64).abs() < 1e-12);
    }

    #[test]
    fn jsonl_round_trips(pairs in prop::collection::vec(pair_strategy(), 0..10)) {
        let d = PreferenceDataset { pairs };
        prop_assert_eq!(PreferenceDataset::from_jsonl(&d.to_jsonl().unwrap()).unwrap(), d);
    }
}
