//! Acquisition functions and candidate proposal.
//!
//! The surrogate posterior `(mu_S, var_S)` and the (rescaled) preference
//! posterior `(mu_pi, var_pi)` are fused by precision weighting, with the
//! preference variance inflated by `gamma * t^2 * var_S` so the expert's
//! influence fades as online evaluations accumulate.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preference::PreferenceModel;
use crate::rng::{self, tag};
use crate::task::{sample_space, Point, SamplingMethod, SearchSpace, TaskDataset};
use crate::tnp::{Posterior, TnpModel};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecaySchedule {
    pub gamma: f64,
    /// Completed online evaluations after initialization.
    pub t: u64,
}

impl DecaySchedule {
    pub const DEFAULT_GAMMA: f64 = 0.1;

    pub fn new(gamma: f64, t: u64) -> Result<Self> {
        if !(gamma > 0.0) || !gamma.is_finite() {
            return Err(Error::Config(format!("decay gamma must be positive, got {gamma}")));
        }
        Ok(Self { gamma, t })
    }

    /// Inflated preference variance `var_pi + gamma * t^2 * var_S`.
    pub fn inflated(&self, var_pi: f64, var_s: f64) -> f64 {
        let t = self.t as f64;
        var_pi + self.gamma * t * t * var_s
    }
}

impl Default for DecaySchedule {
    fn default() -> Self {
        Self { gamma: Self::DEFAULT_GAMMA, t: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CombinedPosterior {
    pub mean: f64,
    pub variance: f64,
    pub w_pi: f64,
    pub w_s: f64,
}

fn check_var(name: &str, v: f64) -> Result<()> {
    if !(v > 0.0) || v.is_nan() {
        return Err(Error::InvalidPosterior(format!("{name} must be positive, got {v}")));
    }
    Ok(())
}

/// `(w_pi, w_S) = (var_S, S_pi^2) / (S_pi^2 + var_S)`.
pub fn noharm_weights(var_pi: f64, var_s: f64, sched: &DecaySchedule) -> Result<(f64, f64)> {
    check_var("preference variance", var_pi)?;
    check_var("surrogate variance", var_s)?;
    let s_pi = sched.inflated(var_pi, var_s);
    if s_pi.is_infinite() {
        return Ok((0.0, 1.0));
    }
    let denom = s_pi + var_s;
    Ok((var_s / denom, s_pi / denom))
}

/// Precision-weighted fusion of surrogate and preference posteriors.
pub fn combine_posterior(mu_s: f64, var_s: f64, mu_pi: f64, var_pi: f64, sched: &DecaySchedule) -> Result<CombinedPosterior> {
    let (w_pi, w_s) = noharm_weights(var_pi, var_s, sched)?;
    let s_pi = sched.inflated(var_pi, var_s);
    let variance = if s_pi.is_infinite() { var_s } else { s_pi * var_s / (s_pi + var_s) };
    Ok(CombinedPosterior { mean: w_pi * mu_pi + w_s * mu_s, variance, w_pi, w_s })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EiConfig {
    pub zeta: f64,
}

impl EiConfig {
    pub const DEFAULT_ZETA: f64 = 0.1;
    pub const HIGH_EXPLORATION_ZETA: f64 = 0.3;

    pub fn new(zeta: f64) -> Result<Self> {
        if !(zeta >= 0.0) || !zeta.is_finite() {
            return Err(Error::Config(format!("zeta must be >= 0, got {zeta}")));
        }
        Ok(Self { zeta })
    }
}

impl Default for EiConfig {
    fn default() -> Self {
        Self { zeta: Self::DEFAULT_ZETA }
    }
}

pub fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

pub fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// `E[max(Y - f_best - zeta, 0)]` for `Y ~ N(mu, sigma^2)`.
pub fn expected_improvement(mu: f64, sigma: f64, f_best: f64, cfg: &EiConfig) -> f64 {
    let gap = mu - f_best - cfg.zeta;
    if !(sigma > 0.0) {
        return gap.max(0.0);
    }
    let z = gap / sigma;
    (gap * normal_cdf(z) + sigma * normal_pdf(z)).max(0.0)
}

pub fn ucb(mu: f64, sigma: f64) -> f64 {
    mu + sigma
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AcqKind {
    Ei,
    Ucb,
}

/// Affine map putting preference probabilities on the surrogate's scale:
/// `mu -> intercept + slope * mu`, `var -> slope^2 * var`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrefBridge {
    pub slope: f64,
    pub intercept: f64,
}

const BRIDGED_VAR_FLOOR: f64 = 1e-12;

impl PrefBridge {
    /// Matches the mean and standard deviation of `mu_pi` to those of `mu_s`
    /// over one candidate set.
    pub fn fit(mu_s: &[f64], mu_pi: &[f64]) -> Self {
        let stats = |v: &[f64]| {
            let n = v.len().max(1) as f64;
            let m = v.iter().sum::<f64>() / n;
            (m, (v.iter().map(|a| (a - m).powi(2)).sum::<f64>() / n).sqrt())
        };
        let (ms, ss) = stats(mu_s);
        let (mp, sp) = stats(mu_pi);
        let slope = ss / sp.max(1e-9);
        Self { slope, intercept: ms - slope * mp }
    }

    pub fn apply(&self, mu_pi: f64, var_pi: f64) -> (f64, f64) {
        (self.intercept + self.slope * mu_pi, (self.slope * self.slope * var_pi).max(BRIDGED_VAR_FLOOR))
    }
}

/// The preference side of the combined acquisition.
#[derive(Debug, Clone)]
pub struct PrefTerm<'a> {
    pub model: &'a PreferenceModel,
    /// Reference points each query is compared against.
    pub refs: Vec<Point>,
    pub sched: DecaySchedule,
    pub mc_seed: u64,
    /// Frozen scale bridge; `None` refits it on every scored batch.
    pub bridge: Option<PrefBridge>,
}

/// Everything about one point that the acquisitions look at.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointSnapshot {
    pub x: Point,
    pub mu_s: f64,
    pub var_s: f64,
    pub mu_pi: Option<f64>,
    pub var_pi: Option<f64>,
    pub mu_combined: f64,
    pub var_combined: f64,
    pub w_pi: f64,
    pub alpha_s: f64,
    pub alpha_s_pi: f64,
}

/// Scores candidates for one proposal step.
#[derive(Debug, Clone)]
pub struct Acquisition<'a> {
    pub model: &'a TnpModel,
    pub context: &'a TaskDataset,
    pub ei: EiConfig,
    pub kind: AcqKind,
    pub pref: Option<PrefTerm<'a>>,
}

impl<'a> Acquisition<'a> {
    pub fn new(model: &'a TnpModel, context: &'a TaskDataset, ei: EiConfig, kind: AcqKind) -> Self {
        Self { model, context, ei, kind, pref: None }
    }

    pub fn with_preference(mut self, pref: PrefTerm<'a>) -> Self {
        self.pref = Some(pref);
        self
    }

    fn f_best(&self) -> Option<f64> {
        self.context.best().map(|b| b.1)
    }

    fn score(&self, mu: f64, var: f64) -> f64 {
        let sigma = var.max(0.0).sqrt();
        match (self.kind, self.f_best()) {
            (AcqKind::Ucb, _) => ucb(mu, sigma),
            (AcqKind::Ei, Some(best)) => expected_improvement(mu, sigma, best, &self.ei),
            // no incumbent yet: rank by the mean alone
            (AcqKind::Ei, None) => mu,
        }
    }

    pub fn surrogate(&self, xs: &[Point]) -> Result<Posterior> {
        self.model.predict(self.context, xs)
    }

    /// Freezes the scale bridge on `xs` so later batches score consistently.
    pub fn freeze_bridge(&mut self, xs: &[Point]) -> Result<()> {
        if self.pref.is_none() {
            return Ok(());
        }
        let post = self.surrogate(xs)?;
        let pref = self.pref.as_ref().unwrap();
        let raw = pref.model.posterior_over_refs(xs, &pref.refs, pref.mc_seed)?;
        let bridge = PrefBridge::fit(&post.mean, &raw.mean);
        self.pref.as_mut().unwrap().bridge = Some(bridge);
        Ok(())
    }

    pub fn bridge(&self) -> Option<PrefBridge> {
        self.pref.as_ref().and_then(|p| p.bridge)
    }

    /// Surrogate-only acquisition.
    pub fn alpha_s(&self, xs: &[Point]) -> Result<Vec<f64>> {
        let post = self.surrogate(xs)?;
        Ok(post.mean.iter().zip(&post.variance).map(|(m, v)| self.score(*m, *v)).collect())
    }

    /// Acquisition over the combined posterior; equals [`alpha_s`](Self::alpha_s)
    /// when no preference term is attached.
    pub fn alpha_s_pi(&self, xs: &[Point]) -> Result<Vec<f64>> {
        Ok(self.snapshots(xs)?.into_iter().map(|s| s.alpha_s_pi).collect())
    }

    pub fn snapshots(&self, xs: &[Point]) -> Result<Vec<PointSnapshot>> {
        if xs.is_empty() {
            return Err(Error::EmptyRequest("no candidates to score".into()));
        }
        let post = self.surrogate(xs)?;
        let pref = match &self.pref {
            Some(p) => {
                let raw = p.model.posterior_over_refs(xs, &p.refs, p.mc_seed)?;
                let bridge = p.bridge.unwrap_or_else(|| PrefBridge::fit(&post.mean, &raw.mean));
                Some((raw, bridge, p.sched))
            }
            None => None,
        };
        xs.iter()
            .enumerate()
            .map(|(i, x)| {
                let (mu_s, var_s) = (post.mean[i], post.variance[i]);
                let alpha_s = self.score(mu_s, var_s);
                let mut snap = PointSnapshot {
                    x: x.clone(),
                    mu_s,
                    var_s,
                    mu_pi: None,
                    var_pi: None,
                    mu_combined: mu_s,
                    var_combined: var_s,
                    w_pi: 0.0,
                    alpha_s,
                    alpha_s_pi: alpha_s,
                };
                if let Some((raw, bridge, sched)) = &pref {
                    let (mu_pi, var_pi) = bridge.apply(raw.mean[i], raw.variance[i]);
                    let c = combine_posterior(mu_s, var_s, mu_pi, var_pi, sched)?;
                    snap.mu_pi = Some(mu_pi);
                    snap.var_pi = Some(var_pi);
                    snap.mu_combined = c.mean;
                    snap.var_combined = c.variance;
                    snap.w_pi = c.w_pi;
                    snap.alpha_s_pi = self.score(c.mean, c.variance);
                }
                Ok(snap)
            })
            .collect()
    }
}

/// EI over the surrogate alone, with `f_best` the best observed value.
pub fn score_alpha_s(model: &TnpModel, context: &TaskDataset, candidates: &[Point], cfg: &EiConfig) -> Result<Vec<f64>> {
    if candidates.is_empty() {
        return Err(Error::EmptyRequest("no candidates to score".into()));
    }
    Acquisition::new(model, context, *cfg, AcqKind::Ei).alpha_s(candidates)
}

/// EI over the combined posterior, bridging preference units on the
/// candidate set itself.
pub fn score_alpha_s_pi(
    model: &TnpModel,
    pref: &PreferenceModel,
    refs: &[Point],
    context: &TaskDataset,
    candidates: &[Point],
    sched: &DecaySchedule,
    cfg: &EiConfig,
    mc_seed: u64,
) -> Result<Vec<f64>> {
    let term = PrefTerm { model: pref, refs: refs.to_vec(), sched: *sched, mc_seed, bridge: None };
    Acquisition::new(model, context, *cfg, AcqKind::Ei).with_preference(term).alpha_s_pi(candidates)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub candidates: usize,
    pub top_k: usize,
    pub refine_iters: usize,
    /// Initial perturbation scale as a fraction of each dimension's width.
    pub initial_step: f64,
    /// Per-iteration step multiplier.
    pub shrink: f64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self { candidates: 2048, top_k: 8, refine_iters: 50, initial_step: 0.25, shrink: 0.85 }
    }
}

/// A maximizer found by [`maximize`].
#[derive(Debug, Clone, PartialEq)]
pub struct Maximum {
    pub x: Point,
    pub score: f64,
    /// Best score among the raw Latin-hypercube batch.
    pub best_raw: f64,
}

/// Batch-then-refine maximization of `score` over `space`: Latin-hypercube
/// candidates, the `top_k` best refined by coordinate-wise perturbations
/// whose scale shrinks every iteration. Refinement only accepts improvements.
pub fn maximize(
    space: &SearchSpace,
    candidates: &[Point],
    score: &dyn Fn(&[Point]) -> Result<Vec<f64>>,
    search: &SearchConfig,
    seed: u64,
) -> Result<Maximum> {
    if candidates.is_empty() {
        return Err(Error::EmptyRequest("no candidates to maximize over".into()));
    }
    let raw = score(candidates)?;
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|a, b| raw[*b].total_cmp(&raw[*a]).then(a.cmp(b)));
    let k = search.top_k.clamp(1, candidates.len());
    let mut xs: Vec<Point> = order[..k].iter().map(|i| candidates[*i].clone()).collect();
    let mut ys: Vec<f64> = order[..k].iter().map(|i| raw[*i]).collect();
    let best_raw = ys[0];
    let mut rng = rng::stream(seed, tag::PROPOSE, 1);
    let d = space.dims();
    let mut step = search.initial_step;
    for _ in 0..search.refine_iters {
        for j in 0..d {
            let deltas: Vec<f64> = (0..k)
                .map(|_| {
                    let n: f64 = StandardNormal.sample(&mut rng);
                    step * space.width(j) * n.abs().max(1e-3)
                })
                .collect();
            let mut trial = Vec::with_capacity(2 * k);
            for sign in [1.0, -1.0] {
                for (x, delta) in xs.iter().zip(&deltas) {
                    let mut t = x.clone();
                    t[j] += sign * delta;
                    space.clamp(&mut t);
                    trial.push(t);
                }
            }
            let s = score(&trial)?;
            for i in 0..k {
                for cand in [i, i + k] {
                    if s[cand] > ys[i] {
                        ys[i] = s[cand];
                        xs[i] = trial[cand].clone();
                    }
                }
            }
        }
        step *= search.shrink;
        // keep the stream position independent of early exits
        let _: u32 = rng.random();
    }
    let best = (0..k).max_by(|a, b| ys[*a].total_cmp(&ys[*b]).then(b.cmp(a))).unwrap();
    Ok(Maximum { x: xs[best].clone(), score: ys[best], best_raw })
}

/// `x1 = argmax alpha_S`, `x2 = argmax alpha_{S,pi}`, with snapshots of both.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidatePair {
    pub x1: Point,
    pub x2: Point,
    pub score1: f64,
    pub score2: f64,
    pub snapshot1: PointSnapshot,
    pub snapshot2: PointSnapshot,
    pub bridge: Option<PrefBridge>,
}

/// The Latin-hypercube batch [`propose_pair`] starts from for `seed`.
pub fn candidate_batch(space: &SearchSpace, search: &SearchConfig, seed: u64) -> Result<Vec<Point>> {
    sample_space(space, search.candidates.max(1), SamplingMethod::LatinHypercube, rng::derive(seed, tag::PROPOSE, 0))
}

/// Proposes the candidate pair. The scale bridge is fitted once on the
/// Latin-hypercube batch and frozen for the refinement. Search covers the
/// whole space.
pub fn propose_pair(acq: &mut Acquisition<'_>, space: &SearchSpace, search: &SearchConfig, seed: u64) -> Result<CandidatePair> {
    let batch = candidate_batch(space, search, seed)?;
    acq.freeze_bridge(&batch)?;
    let acq = &*acq;
    let m1 = maximize(space, &batch, &|xs: &[Point]| acq.alpha_s(xs), search, rng::derive(seed, tag::PROPOSE, 1))?;
    let m2 = if acq.pref.is_some() {
        maximize(space, &batch, &|xs: &[Point]| acq.alpha_s_pi(xs), search, rng::derive(seed, tag::PROPOSE, 2))?
    } else {
        m1.clone()
    };
    let snaps = acq.snapshots(&[m1.x.clone(), m2.x.clone()])?;
    let mut it = snaps.into_iter();
    Ok(CandidatePair {
        x1: m1.x,
        x2: m2.x,
        score1: m1.score,
        score2: m2.score,
        snapshot1: it.next().unwrap(),
        snapshot2: it.next().unwrap(),
        bridge: acq.bridge(),
    })
}
