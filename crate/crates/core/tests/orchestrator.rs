use std::sync::{Arc, OnceLock};
use std::time::Duration;

use hlmbo::acquisition::SearchConfig;
use hlmbo::orchestrator::{
    load_run, replay, run_simulated, run_with, save_run, verify_replay, ChooseRequest, ExpertMode, MethodKind, Phase,
    Reference, RunRecord, Session, SessionConfig, SessionManager, SessionState,
};
use hlmbo::preference::{HypothesisKind, PrefSource};
use hlmbo::task::{make_synthetic_family, BlackBoxTask, Choice, ChoiceOracle, FamilyConfig, FamilyKind, SimulatedExpert};
use hlmbo::tnp::{meta_train, TnpConfig, TnpModel};
use hlmbo::{Error, Result};

fn model() -> Arc<TnpModel> {
    static MODEL: OnceLock<Arc<TnpModel>> = OnceLock::new();
    MODEL
        .get_or_init(|| {
            let family = make_synthetic_family(
                &FamilyConfig { kind: FamilyKind::RandomFeatures { features: 16, lengthscale: 0.3 }, dims: 2, n_train: 4, n_val: 1, n_test: 1 },
                3,
            )
            .unwrap();
            let cfg = TnpConfig {
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
            };
            Arc::new(meta_train(&family, &cfg, 11).unwrap())
        })
        .clone()
}

fn task(i: usize) -> BlackBoxTask {
    static FAMILY: OnceLock<Vec<BlackBoxTask>> = OnceLock::new();
    FAMILY.get_or_init(|| make_synthetic_family(&FamilyConfig::default(), 0).unwrap().test)[i].clone()
}

fn config(method: MethodKind, seed: u64) -> SessionConfig {
    let mut c = SessionConfig::new(task(seed as usize % 10), seed);
    c.method = method;
    c.budget = 3;
    c.preference.pairs = 6;
    c.preference.per_slice = 20;
    c.search = SearchConfig { candidates: 128, top_k: 2, refine_iters: 5, ..SearchConfig::default() };
    c.explain = false;
    c
}

#[test]
fn every_method_spends_exactly_the_budget() {
    for method in MethodKind::ALL {
        for initial in [1, 2] {
            let mut c = config(method, 1);
            c.initial = initial;
            let r = run_simulated(c, &model()).unwrap();
            assert_eq!(r.phase, Phase::Done);
            assert_eq!(r.evaluations, initial + 3, "{method:?}");
            assert_eq!(r.regret.len(), initial + 3);
            assert_eq!(r.steps.len(), 3);
            assert!(r.regret.windows(2).all(|w| w[1] <= w[0]));
            assert!(r.regret.iter().all(|v| *v >= -1e-9));
        }
    }
}

#[test]
fn surrogate_only_runs_skip_elicitation_and_offer_one_point() {
    let r = run_simulated(config(MethodKind::TnpEi, 2), &model()).unwrap();
    assert!(r.preferences.is_empty());
    assert!(r.hypothesis.is_none());
    for s in &r.steps {
        assert_eq!(s.pair.x1, s.pair.x2);
        assert_eq!(s.choice, Choice::First);
    }
}

#[test]
fn elicited_pairs_stay_inside_the_hypothesis() {
    let r = run_simulated(config(MethodKind::HlmboEi, 3), &model()).unwrap();
    let h = r.hypothesis.as_ref().unwrap();
    assert_eq!(r.preferences.len(), 6);
    for p in &r.preferences.pairs {
        assert!(h.contains(&p.x1) && h.contains(&p.x2));
        assert_ne!(p.x1, p.x2);
        assert_eq!(p.source, PrefSource::Simulated);
    }
    let diag = r.pref_diagnostics.as_ref().unwrap();
    assert_eq!(diag.n_pairs, 12);
}

#[test]
fn run_records_survive_disk_and_detect_tampering() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.json");
    let r = run_simulated(config(MethodKind::HlmboEi, 4), &model()).unwrap();
    save_run(&r, &path).unwrap();
    assert_eq!(load_run(&path).unwrap(), r);

    let text = std::fs::read_to_string(&path).unwrap();
    let tampered = text.replacen("\"budget\": 3", "\"budget\": 4", 1);
    assert_ne!(tampered, text);
    std::fs::write(&path, tampered).unwrap();
    assert!(matches!(load_run(&path), Err(Error::Record(_))));

    let mut old = r.clone();
    old.format_version = 0;
    std::fs::write(&path, serde_json::to_string(&old).unwrap()).unwrap();
    assert!(matches!(load_run(&path), Err(Error::Record(m)) if m.contains("version")));
}

#[test]
fn replay_reproduces_recorded_runs() {
    for (i, method) in MethodKind::ALL.into_iter().enumerate() {
        let mut c = config(method, 10 + i as u64);
        if i == 0 {
            c.expert = ExpertMode::Simulated { sigma_pref_sq: 0.1, label_accuracy: Some(0.7) };
        }
        let r = run_simulated(c, &model()).unwrap();
        let again = verify_replay(&r, &model()).unwrap();
        assert_eq!(again.regret, r.regret);
        assert_eq!(again.without_timestamps().unwrap(), r.without_timestamps().unwrap());
    }
}

#[test]
fn replay_rejects_a_record_from_another_configuration() {
    let r = run_simulated(config(MethodKind::HlmboEi, 5), &model()).unwrap();
    let mut other = r.clone();
    other.config.seed += 1;
    let resealed = other.without_timestamps().unwrap();
    assert!(matches!(replay(&resealed, &model()), Err(Error::Record(m)) if m.contains("diverged")));
    let unsealed = RunRecord { integrity: String::new(), ..other };
    assert!(matches!(replay(&unsealed, &model()), Err(Error::Record(m)) if m.contains("integrity")));
}

/// Labels `limit` pairs and then walks away.
struct Quitter {
    expert: SimulatedExpert,
    limit: usize,
}

impl ChoiceOracle for Quitter {
    fn choose(&mut self, task: &BlackBoxTask, x1: &[f64], x2: &[f64]) -> Result<Choice> {
        if self.limit == 0 {
            return Err(Error::ElicitationAborted { partial: Box::default() });
        }
        self.limit -= 1;
        self.expert.choose(task, x1, x2)
    }
}

#[test]
fn aborted_elicitation_keeps_partial_labels_and_replays() {
    let mut q = Quitter { expert: SimulatedExpert::new(0.0, 1).unwrap(), limit: 4 };
    let r = run_with(config(MethodKind::HlmboEi, 6), &model(), &mut q, None).unwrap();
    assert_eq!(r.phase, Phase::Aborted);
    assert_eq!(r.preferences.len(), 4);
    assert!(r.steps.is_empty());
    assert_eq!(r.evaluations, 1);
    let again = verify_replay(&r, &model()).unwrap();
    assert_eq!(again.phase, Phase::Aborted);
}

#[test]
fn session_rejects_out_of_phase_requests() {
    let mut s = Session::create("s", config(MethodKind::HlmboEi, 7), model()).unwrap();
    assert_eq!(s.phase(), Phase::ElicitingPreferences);
    assert!(matches!(s.choose(Choice::First), Err(Error::Phase { .. })));
    assert!(matches!(s.propose(), Err(Error::Phase { .. })));
    assert!(matches!(s.heatmap((0, 1), 5, None), Err(Error::Phase { .. })));
    assert!(matches!(s.submit_labels(&[2], PrefSource::Human), Err(Error::BadRequest(_))));
    assert!(matches!(s.submit_labels(&[1; 7], PrefSource::Human), Err(Error::BadRequest(_))));
    assert!(matches!(s.submit_labels(&[], PrefSource::Human), Err(Error::BadRequest(_))));
    s.submit_labels(&[1, 0, 1], PrefSource::Human).unwrap();
    assert_eq!(s.state.next_pair().unwrap().0, 3);
    s.submit_labels(&[0, 0, 1], PrefSource::Human).unwrap();
    assert_eq!(s.phase(), Phase::Evaluating);
    assert!(matches!(s.submit_labels(&[1], PrefSource::Human), Err(Error::Phase { .. })));
    s.propose().unwrap();
    assert_eq!(s.phase(), Phase::AwaitingChoice);
    s.abort("done for today").unwrap();
    assert!(matches!(s.abort("again"), Err(Error::Phase { .. })));
}

#[test]
fn session_checks_model_fingerprint_and_dimensions() {
    let mut c = config(MethodKind::TnpEi, 8);
    c.model_fingerprint = Some("0".repeat(64));
    assert!(matches!(Session::create("s", c, model()), Err(Error::Config(_))));
    let mut c = config(MethodKind::TnpEi, 8);
    c.model_fingerprint = Some(model().fingerprint().unwrap());
    Session::create("s", c, model()).unwrap();
}

#[test]
fn invalid_configs_are_rejected() {
    let mut c = config(MethodKind::HlmboEi, 9);
    c.budget = 0;
    assert!(matches!(Session::create("s", c, model()), Err(Error::Config(_))));
    let mut c = config(MethodKind::HlmboEi, 9);
    c.gamma = -1.0;
    assert!(Session::create("s", c, model()).is_err());
    let mut c = config(MethodKind::HlmboEi, 9);
    c.expert = ExpertMode::Interactive;
    assert!(matches!(run_simulated(c, &model()), Err(Error::Config(_))));
}

/// Drives a session one request at a time, round-tripping its state through
/// JSON between requests.
fn drive_with_restarts(c: SessionConfig) -> SessionState {
    let mut expert = SimulatedExpert::from_variance(0.1, hlmbo::rng::derive(c.seed, hlmbo::rng::tag::EXPERT, 0)).unwrap();
    let task = c.task.clone();
    let mut s = Session::create("r", c, model()).unwrap();
    let reload = |s: Session| -> Session {
        let json = serde_json::to_string(&s.state).unwrap();
        Session::restore(serde_json::from_str(&json).unwrap(), model()).unwrap()
    };
    while let Some((_, (a, b))) = s.state.next_pair() {
        let (a, b) = (a.clone(), b.clone());
        let y = u8::from(expert.choose(&task, &a, &b).unwrap() == Choice::First);
        s.submit_labels(&[y], PrefSource::Simulated).unwrap();
        s = reload(s);
    }
    while s.phase() == Phase::Evaluating {
        s.propose().unwrap();
        s = reload(s);
        let p = s.state.current.clone().unwrap();
        let c = expert.choose(&task, &p.pair.x1, &p.pair.x2).unwrap();
        s.choose(c).unwrap();
        s = reload(s);
    }
    s.state
}

#[test]
fn restored_sessions_continue_exactly() {
    let c = config(MethodKind::HlmboEi, 12);
    let resumed = drive_with_restarts(c.clone());
    let straight = run_simulated(c, &model()).unwrap();
    assert_eq!(resumed.regret, straight.regret);
    let xs: Vec<_> = resumed.history.iter().map(|h| h.x.clone()).collect();
    let ys: Vec<_> = straight.steps.iter().map(|h| h.x.clone()).collect();
    assert_eq!(xs, ys);
}

#[test]
fn elicited_and_incumbent_references_both_run() {
    for reference in [Reference::Incumbent, Reference::Elicited { max: 3 }] {
        let mut c = config(MethodKind::HlmboEi, 13);
        c.preference.reference = reference;
        let s = Session::create("s", c, model()).unwrap();
        let refs = s.reference_points();
        match reference {
            Reference::Incumbent => assert_eq!(refs, vec![s.state.context.points[0].clone()]),
            Reference::Elicited { .. } => assert!(refs.is_empty()),
        }
    }
}

#[test]
fn hypothesis_kinds_all_complete() {
    for kind in HypothesisKind::ALL {
        let mut c = config(MethodKind::HlmboEi, 14);
        c.preference.hypothesis = hlmbo::orchestrator::HypothesisSpec::Kind(kind);
        let r = run_simulated(c, &model()).unwrap();
        assert_eq!(r.phase, Phase::Done);
    }
}

fn manager() -> SessionManager {
    let m = SessionManager::new();
    m.register_model("tiny", (*model()).clone()).unwrap();
    m
}

fn interactive(method: MethodKind, seed: u64) -> SessionConfig {
    let mut c = config(method, seed);
    c.expert = ExpertMode::Interactive;
    c
}

fn elicit(m: &SessionManager, id: &str) {
    let n = m.state(id).unwrap().pending_pairs.len();
    m.submit_labels(id, &vec![1; n]).unwrap();
}

#[test]
fn manager_runs_a_session_through_its_phases() {
    let m = manager();
    let s = m.create(interactive(MethodKind::HlmboEi, 15)).unwrap();
    assert_eq!(s.phase, Phase::ElicitingPreferences);
    assert!(matches!(m.candidates(&s.id), Err(Error::Phase { .. })));
    elicit(&m, &s.id);
    for t in 0..3 {
        let st = m.wait_ready(&s.id, Duration::from_secs(60)).unwrap();
        assert_eq!(st.phase, Phase::AwaitingChoice);
        assert_eq!(st.t, t);
        let p = m.candidates(&s.id).unwrap();
        assert_eq!(p.t, t);
        m.choose(&s.id, ChooseRequest { side: Choice::Second, t: Some(t) }).unwrap();
    }
    let done = m.wait_ready(&s.id, Duration::from_secs(60)).unwrap();
    assert_eq!(done.phase, Phase::Done);
    assert_eq!(done.evaluations, 4);
    assert!(m.record(&s.id).unwrap().preferences.pairs.iter().all(|p| p.source == PrefSource::Human));
    assert!(matches!(m.state("nope"), Err(Error::NotFound(_))));
}

#[test]
fn concurrent_choices_apply_once() {
    let m = manager();
    let s = m.create(config(MethodKind::TnpEi, 16)).unwrap();
    assert_eq!(s.phase, Phase::AwaitingChoice);
    let results: Vec<_> = (0..4)
        .map(|_| {
            let m = m.clone();
            let id = s.id.clone();
            std::thread::spawn(move || m.choose(&id, ChooseRequest { side: Choice::First, t: Some(0) }))
        })
        .collect::<Vec<_>>()
        .into_iter()
        .map(|h| h.join().unwrap())
        .collect();
    assert_eq!(results.iter().filter(|r| r.is_ok()).count(), 1);
    assert!(results.iter().filter_map(|r| r.as_ref().err()).all(|e| matches!(e, Error::Phase { .. })));
    let st = m.wait_ready(&s.id, Duration::from_secs(60)).unwrap();
    assert_eq!(st.t, 1);
    assert_eq!(st.evaluations, 2);
    assert!(matches!(m.choose(&s.id, ChooseRequest { side: Choice::First, t: Some(0) }), Err(Error::Phase { .. })));
}

#[test]
fn manager_persists_and_restores_sessions() {
    let dir = tempfile::tempdir().unwrap();
    let m = SessionManager::with_persistence(dir.path()).unwrap();
    m.register_model("tiny", (*model()).clone()).unwrap();
    let s = m.create(interactive(MethodKind::HlmboEi, 17)).unwrap();
    elicit(&m, &s.id);
    m.wait_ready(&s.id, Duration::from_secs(60)).unwrap();
    m.choose(&s.id, ChooseRequest { side: Choice::First, t: Some(0) }).unwrap();
    let before = m.wait_ready(&s.id, Duration::from_secs(60)).unwrap();

    let again = SessionManager::with_persistence(dir.path()).unwrap();
    again.register_model("tiny", (*model()).clone()).unwrap();
    assert_eq!(again.restore_all().unwrap(), 1);
    let after = again.wait_ready(&s.id, Duration::from_secs(60)).unwrap();
    assert_eq!(after.phase, Phase::AwaitingChoice);
    assert_eq!(after.t, before.t);
    assert_eq!(after.current.as_ref().unwrap().pair, before.current.as_ref().unwrap().pair);
    assert_eq!(after.context, before.context);
}

#[test]
fn heatmap_matches_offered_scores() {
    let m = manager();
    let mut c = interactive(MethodKind::HlmboEi, 18);
    c.explain = true;
    c.explain_config.n_coalitions = 16;
    let s = m.create(c).unwrap();
    elicit(&m, &s.id);
    let st = m.wait_ready(&s.id, Duration::from_secs(60)).unwrap();
    let p = st.current.unwrap();
    assert!(p.explanation.is_some());
    let h = m.heatmap(&s.id, (0, 1), 7, Some(p.pair.x2.clone())).unwrap();
    assert_eq!(h.mean.len(), 49);
    assert_eq!(h.markers.len(), 1);
    let again = m.heatmap(&s.id, (0, 1), 7, None).unwrap();
    assert_eq!(again.acquisition, h.acquisition);
    assert!(h.acquisition.iter().all(|a| *a >= 0.0));
}

#[test]
fn simulated_sessions_finish_elicitation_on_creation() {
    let m = manager();
    let s = m.create(config(MethodKind::HlmboEi, 19)).unwrap();
    assert_eq!(s.phase, Phase::AwaitingChoice);
    assert_eq!(s.preferences.len(), 6);
    let straight = run_simulated(config(MethodKind::HlmboEi, 19), &model()).unwrap();
    assert_eq!(s.preferences, straight.preferences);
    assert_eq!(s.current.as_ref().unwrap().pair, straight.steps[0].pair);
}

#[test]
fn huge_decay_hands_control_to_the_surrogate_after_the_first_step() {
    for method in [MethodKind::HlmboEi, MethodKind::McoexboUcb] {
        let mut c = config(method, 20);
        c.gamma = 1e9;
        let r = run_simulated(c, &model()).unwrap();
        for s in r.steps.iter().filter(|s| s.t >= 1) {
            let snap = &s.pair.snapshot2;
            assert!(snap.w_pi < 1e-8, "w_pi {}", snap.w_pi);
            assert!((snap.mu_combined - snap.mu_s).abs() <= 1e-6 * snap.mu_s.abs().max(1.0));
            assert!((snap.alpha_s_pi - snap.alpha_s).abs() <= 1e-4 * snap.alpha_s.abs().max(1e-12));
        }
    }
}
