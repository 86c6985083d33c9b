use std::sync::Arc;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::{ExpertMode, HypothesisSpec, MethodKind, Reference, RunRecord, SessionConfig};
use crate::acquisition::{candidate_batch, propose_pair, AcqKind, Acquisition, CandidatePair, DecaySchedule, EiConfig, PrefTerm};
use crate::error::{Error, Result};
use crate::explain::{default_background, explain_candidates, slice_heatmap, ExplanationBundle, HeatmapSlice};
use crate::preference::{
    augment_skew, fit_preference_model, make_hypothesis, sample_pref_pairs, FitDiagnostics, Hypothesis, PrefSource,
    PreferenceDataset, PreferenceModel, PreferencePair,
};
use crate::rng::{self, tag};
use crate::task::{sample_space, simple_regret, AccuracyOracle, Choice, ChoiceOracle, Point, SamplingMethod, SimulatedExpert, TaskDataset};
use crate::tnp::TnpModel;

pub const SESSION_SCHEMA: &str = "hlmbo.session/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    ElicitingPreferences,
    AwaitingChoice,
    Evaluating,
    Done,
    Aborted,
}

impl Phase {
    pub fn label(self) -> &'static str {
        match self {
            Phase::ElicitingPreferences => "eliciting_preferences",
            Phase::AwaitingChoice => "awaiting_choice",
            Phase::Evaluating => "evaluating",
            Phase::Done => "done",
            Phase::Aborted => "aborted",
        }
    }
}

/// The pair on offer at step `t` and its explanations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Proposal {
    pub t: u64,
    pub pair: CandidatePair,
    pub explanation: Option<ExplanationBundle>,
    /// Heatmap dimensions suggested by the explanations.
    pub suggested_dims: Option<(usize, usize)>,
    pub compute_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: u64,
    pub pair: CandidatePair,
    pub explanation: Option<ExplanationBundle>,
    pub choice: Choice,
    pub x: Point,
    pub y: f64,
    pub wall_ms: u64,
}

/// Everything a session persists; also the body of `GET /sessions/{id}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub schema: String,
    pub id: String,
    pub phase: Phase,
    pub config: SessionConfig,
    pub model_fingerprint: String,
    pub context: TaskDataset,
    /// Completed online steps.
    pub t: u64,
    pub hypothesis: Option<Hypothesis>,
    /// All pairs to be labeled, in presentation order.
    pub pending_pairs: Vec<(Point, Point)>,
    pub preferences: PreferenceDataset,
    pub pref_diagnostics: Option<FitDiagnostics>,
    pub current: Option<Proposal>,
    pub history: Vec<StepRecord>,
    pub regret: Vec<f64>,
    pub evaluations: usize,
    pub abort_reason: Option<String>,
    pub created_unix_ms: u64,
    pub updated_unix_ms: u64,
}

pub(crate) fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64)
}

impl SessionState {
    /// Index and points of the next pair awaiting a label.
    pub fn next_pair(&self) -> Option<(usize, &(Point, Point))> {
        let i = self.preferences.len();
        self.pending_pairs.get(i).map(|p| (i, p))
    }
}

/// One optimization run as a state machine.
#[derive(Debug, Clone)]
pub struct Session {
    pub state: SessionState,
    model: Arc<TnpModel>,
    pref: Option<PreferenceModel>,
}

fn phase_error(phase: Phase, detail: &str) -> Error {
    Error::Phase { phase: phase.label().to_string(), detail: detail.to_string() }
}

impl Session {
    /// Starts a session: evaluates the initial design and, for methods that
    /// consult the expert, prepares the pairs to label.
    pub fn create(id: impl Into<String>, config: SessionConfig, model: Arc<TnpModel>) -> Result<Self> {
        config.validate()?;
        if model.input_dims != config.task.dims() {
            return Err(Error::Shape(format!(
                "surrogate expects {} dimensions, task has {}",
                model.input_dims,
                config.task.dims()
            )));
        }
        let fingerprint = model.fingerprint()?;
        if let Some(want) = &config.model_fingerprint {
            if *want != fingerprint {
                return Err(Error::Config(format!("surrogate fingerprint {fingerprint} does not match {want}")));
            }
        }
        let task = &config.task;
        let mut context = TaskDataset::new(task.id.clone());
        let init = sample_space(&task.space, config.initial, SamplingMethod::LatinHypercube, rng::derive(config.seed, tag::INIT, 0))?;
        for x in init {
            let y = task.evaluate(&x)?;
            context.push(x, y);
        }
        let evaluations = context.len();
        let (phase, hypothesis, pending_pairs) = if config.method.uses_expert() {
            let p = &config.preference;
            let h = match &p.hypothesis {
                HypothesisSpec::Kind(kind) => {
                    make_hypothesis(*kind, task, p.slices, p.per_slice, rng::derive(config.seed, tag::HYPOTHESIS, 0))?
                }
                HypothesisSpec::Boxes(h) => h.clone(),
            };
            let pairs = sample_pref_pairs(&h, p.pairs, rng::derive(config.seed, tag::PREF_PAIRS, 0));
            (Phase::ElicitingPreferences, Some(h), pairs)
        } else {
            (Phase::Evaluating, None, Vec::new())
        };
        let now = now_ms();
        let mut state = SessionState {
            schema: SESSION_SCHEMA.to_string(),
            id: id.into(),
            phase,
            config,
            model_fingerprint: fingerprint,
            context,
            t: 0,
            hypothesis,
            pending_pairs,
            preferences: PreferenceDataset::default(),
            pref_diagnostics: None,
            current: None,
            history: Vec::new(),
            regret: Vec::new(),
            evaluations,
            abort_reason: None,
            created_unix_ms: now,
            updated_unix_ms: now,
        };
        state.regret = regret_of(&state);
        Ok(Self { state, model, pref: None })
    }

    /// Rebuilds a session from persisted state; the preference model is
    /// refitted from the stored labels.
    pub fn restore(state: SessionState, model: Arc<TnpModel>) -> Result<Self> {
        if state.schema != SESSION_SCHEMA {
            return Err(Error::Record(format!("session schema {} is not {SESSION_SCHEMA}", state.schema)));
        }
        if model.fingerprint()? != state.model_fingerprint {
            return Err(Error::Config("surrogate fingerprint does not match the stored session".into()));
        }
        let mut s = Self { state, model, pref: None };
        if s.state.config.method.uses_expert() && s.state.next_pair().is_none() && !s.state.preferences.is_empty() {
            s.fit_preferences()?;
        }
        Ok(s)
    }

    pub fn model(&self) -> &Arc<TnpModel> {
        &self.model
    }

    pub fn phase(&self) -> Phase {
        self.state.phase
    }

    fn touch(&mut self) {
        self.state.updated_unix_ms = now_ms();
    }

    fn require(&self, phase: Phase, what: &str) -> Result<()> {
        if self.state.phase != phase {
            return Err(phase_error(self.state.phase, &format!("{what} requires phase {}", phase.label())));
        }
        Ok(())
    }

    /// Records labels for the next pairs in presentation order. Elicitation
    /// completes, and the preference model is fitted, with the last label.
    pub fn submit_labels(&mut self, labels: &[u8], source: PrefSource) -> Result<()> {
        self.require(Phase::ElicitingPreferences, "submitting preference labels")?;
        let remaining = self.state.pending_pairs.len() - self.state.preferences.len();
        if labels.is_empty() || labels.len() > remaining {
            return Err(Error::BadRequest(format!("expected between 1 and {remaining} labels, got {}", labels.len())));
        }
        if let Some(bad) = labels.iter().find(|y| **y > 1) {
            return Err(Error::BadRequest(format!("labels must be 0 or 1, got {bad}")));
        }
        for &y in labels {
            let (x1, x2) = self.state.pending_pairs[self.state.preferences.len()].clone();
            self.state.preferences.push(PreferencePair { x1, x2, y, source })?;
        }
        if self.state.next_pair().is_none() {
            self.fit_preferences()?;
            self.state.phase = Phase::Evaluating;
        }
        self.touch();
        Ok(())
    }

    /// Answers every outstanding elicitation pair with the simulated oracle
    /// configured in `expert`.
    pub fn elicit_simulated(&mut self) -> Result<()> {
        let ExpertMode::Simulated { sigma_pref_sq, label_accuracy } = self.state.config.expert.clone() else {
            return Err(Error::Config("interactive sessions are labeled by the expert".into()));
        };
        let seed = self.state.config.seed;
        let mut expert = SimulatedExpert::from_variance(sigma_pref_sq, rng::derive(seed, tag::EXPERT, 0))?;
        let mut accuracy = label_accuracy.map(|a| AccuracyOracle::new(a, rng::derive(seed, tag::PREF_LABELS, 0))).transpose()?;
        let oracle: &mut dyn ChoiceOracle = match accuracy.as_mut() {
            Some(a) => a,
            None => &mut expert,
        };
        while let Some((_, (x1, x2))) = self.state.next_pair() {
            let (x1, x2) = (x1.clone(), x2.clone());
            let c = oracle.choose(&self.state.config.task, &x1, &x2)?;
            self.submit_labels(&[u8::from(c == Choice::First)], PrefSource::Simulated)?;
        }
        Ok(())
    }

    fn fit_preferences(&mut self) -> Result<()> {
        let data = augment_skew(&self.state.preferences);
        let model = fit_preference_model(&data, self.state.config.preference.model.clone())?;
        self.state.pref_diagnostics = model.diagnostics().cloned();
        self.pref = Some(model);
        Ok(())
    }

    /// Points each query is compared against by the preference model.
    pub fn reference_points(&self) -> Vec<Point> {
        match self.state.config.preference.reference {
            Reference::Incumbent => self.state.context.incumbent().cloned().into_iter().collect(),
            Reference::Elicited { max } => {
                let mut pts: Vec<&Point> = Vec::new();
                for p in &self.state.preferences.pairs {
                    for x in [&p.x1, &p.x2] {
                        if !pts.contains(&x) {
                            pts.push(x);
                        }
                    }
                }
                let n = pts.len();
                let max = max.max(1);
                if n <= max {
                    pts.into_iter().cloned().collect()
                } else {
                    (0..max).map(|i| pts[i * n / max].clone()).collect()
                }
            }
        }
    }

    fn acquisition(&self) -> Acquisition<'_> {
        let cfg = &self.state.config;
        let kind = if cfg.method == MethodKind::McoexboUcb { AcqKind::Ucb } else { AcqKind::Ei };
        let acq = Acquisition::new(&self.model, &self.state.context, EiConfig { zeta: cfg.zeta }, kind);
        match (&self.pref, cfg.method.uses_expert()) {
            (Some(pref), true) => acq.with_preference(PrefTerm {
                model: pref,
                refs: self.reference_points(),
                sched: DecaySchedule { gamma: cfg.gamma, t: self.state.t },
                mc_seed: rng::derive(cfg.seed, tag::PREF_MC, self.state.t),
                bridge: None,
            }),
            _ => acq,
        }
    }

    fn propose_seed(&self) -> u64 {
        rng::derive(self.state.config.seed, tag::PROPOSE, self.state.t)
    }

    /// Computes the pair (and explanations) for the current step.
    pub fn propose(&mut self) -> Result<()> {
        self.require(Phase::Evaluating, "proposing candidates")?;
        if self.state.config.method.uses_expert() && self.pref.is_none() {
            return Err(Error::ModelNotFitted);
        }
        let start = Instant::now();
        let cfg = &self.state.config;
        let space = &cfg.task.space;
        let mut acq = self.acquisition();
        let pair = propose_pair(&mut acq, space, &cfg.search, self.propose_seed())?;
        let (explanation, suggested_dims) = if cfg.explain {
            let seed = rng::derive(cfg.seed, tag::EXPLAIN, self.state.t);
            let bg = default_background(&self.state.context, space, seed)?;
            let bundle = explain_candidates(&acq, &pair, space, &bg, &cfg.explain_config, seed)?;
            let dims = bundle.most_influential_pair();
            (Some(bundle), dims)
        } else {
            (None, (space.dims() >= 2).then_some((0, 1)))
        };
        let proposal = Proposal { t: self.state.t, pair, explanation, suggested_dims, compute_ms: start.elapsed().as_millis() as u64 };
        self.state.current = Some(proposal);
        self.state.phase = Phase::AwaitingChoice;
        self.touch();
        Ok(())
    }

    /// Evaluates the chosen candidate and advances the clock.
    pub fn choose(&mut self, side: Choice) -> Result<()> {
        self.require(Phase::AwaitingChoice, "choosing a candidate")?;
        let proposal = self.state.current.take().expect("awaiting choice implies a proposal");
        let started = Instant::now();
        let x = side.pick(&proposal.pair.x1, &proposal.pair.x2).clone();
        let y = match self.state.config.task.evaluate(&x) {
            Ok(y) => y,
            Err(e) => {
                self.state.current = Some(proposal);
                return Err(e);
            }
        };
        self.state.evaluations += 1;
        self.state.context.push(x.clone(), y);
        self.state.history.push(StepRecord {
            t: proposal.t,
            pair: proposal.pair,
            explanation: proposal.explanation,
            choice: side,
            x,
            y,
            wall_ms: proposal.compute_ms + started.elapsed().as_millis() as u64,
        });
        self.state.t += 1;
        self.state.regret = regret_of(&self.state);
        self.state.phase = if self.state.t as usize >= self.state.config.budget { Phase::Done } else { Phase::Evaluating };
        self.touch();
        Ok(())
    }

    pub fn abort(&mut self, reason: &str) -> Result<()> {
        if matches!(self.state.phase, Phase::Done | Phase::Aborted) {
            return Err(phase_error(self.state.phase, "session already finished"));
        }
        self.state.phase = Phase::Aborted;
        self.state.abort_reason = Some(reason.to_string());
        self.touch();
        Ok(())
    }

    /// Posterior slice at the current step, scored exactly as the current
    /// candidates were.
    pub fn heatmap(&self, dims: (usize, usize), resolution: usize, fixed: Option<Point>) -> Result<HeatmapSlice> {
        if self.state.phase == Phase::ElicitingPreferences {
            return Err(phase_error(self.state.phase, "heatmaps are available once elicitation is complete"));
        }
        let mut acq = self.acquisition();
        if acq.pref.is_some() {
            match self.state.current.as_ref().filter(|p| p.t == self.state.t).and_then(|p| p.pair.bridge) {
                Some(b) => acq.pref.as_mut().unwrap().bridge = Some(b),
                None => {
                    let batch = candidate_batch(&self.state.config.task.space, &self.state.config.search, self.propose_seed())?;
                    acq.freeze_bridge(&batch)?;
                }
            }
        }
        slice_heatmap(&acq, &self.state.config.task.space, dims, fixed, resolution)
    }

    /// The run so far as a sealed record.
    pub fn record(&self) -> Result<RunRecord> {
        RunRecord::from_state(&self.state)
    }
}

fn regret_of(state: &SessionState) -> Vec<f64> {
    simple_regret(&state.config.task, &state.context).unwrap_or_default()
}

fn ask(oracle: &mut dyn ChoiceOracle, session: &mut Session, x1: &[f64], x2: &[f64]) -> Result<Option<Choice>> {
    match oracle.choose(&session.state.config.task, x1, x2) {
        Ok(c) => Ok(Some(c)),
        Err(Error::ElicitationAborted { .. }) => {
            session.abort("expert aborted")?;
            Ok(None)
        }
        Err(e) => Err(e),
    }
}

/// Runs a whole session: `labeler` (default: `chooser`) answers the
/// elicitation pairs and `chooser` picks between candidates. The surrogate-
/// only method never consults either oracle during the loop.
pub fn run_with(
    config: SessionConfig,
    model: &Arc<TnpModel>,
    chooser: &mut dyn ChoiceOracle,
    mut labeler: Option<&mut dyn ChoiceOracle>,
) -> Result<RunRecord> {
    let mut s = Session::create(format!("run-{}", config.seed), config, model.clone())?;
    {
        let lab: &mut dyn ChoiceOracle = match labeler.as_mut() {
            Some(l) => &mut **l,
            None => &mut *chooser,
        };
        let source = if lab.is_human() { PrefSource::Human } else { PrefSource::Simulated };
        while let Some((_, (x1, x2))) = s.state.next_pair() {
            let (x1, x2) = (x1.clone(), x2.clone());
            match ask(lab, &mut s, &x1, &x2)? {
                Some(c) => s.submit_labels(&[u8::from(c == Choice::First)], source)?,
                None => return s.record(),
            }
        }
    }
    while s.phase() == Phase::Evaluating {
        s.propose()?;
        let pair = &s.state.current.as_ref().unwrap().pair;
        let choice = if s.state.config.method.uses_expert() {
            let (x1, x2) = (pair.x1.clone(), pair.x2.clone());
            match ask(chooser, &mut s, &x1, &x2)? {
                Some(c) => c,
                None => return s.record(),
            }
        } else {
            Choice::First
        };
        s.choose(choice)?;
    }
    s.record()
}

/// The full method: combined EI with the expert in the loop.
pub fn run_hlmbo(mut config: SessionConfig, model: &Arc<TnpModel>, expert: &mut dyn ChoiceOracle) -> Result<RunRecord> {
    config.method = MethodKind::HlmboEi;
    run_with(config, model, expert, None)
}

pub fn run_baseline(kind: MethodKind, mut config: SessionConfig, model: &Arc<TnpModel>, expert: &mut dyn ChoiceOracle) -> Result<RunRecord> {
    config.method = kind;
    run_with(config, model, expert, None)
}

/// Runs with the simulated oracles described by `config.expert`.
pub fn run_simulated(config: SessionConfig, model: &Arc<TnpModel>) -> Result<RunRecord> {
    let ExpertMode::Simulated { sigma_pref_sq, label_accuracy } = config.expert.clone() else {
        return Err(Error::Config("interactive sessions cannot run unattended".into()));
    };
    let mut expert = SimulatedExpert::from_variance(sigma_pref_sq, rng::derive(config.seed, tag::EXPERT, 0))?;
    match label_accuracy {
        Some(acc) => {
            let mut labeler = AccuracyOracle::new(acc, rng::derive(config.seed, tag::PREF_LABELS, 0))?;
            run_with(config, model, &mut expert, Some(&mut labeler))
        }
        None => run_with(config, model, &mut expert, None),
    }
}
