//! Pairwise expert preferences: hypothesis-constrained elicitation, skew
//! augmentation, and a Dirichlet-based GP classifier over pair features
//! `z = [x1, x2]`.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Cholesky;
use crate::rng::{self, tag};
use crate::task::{sample_space, BlackBoxTask, Choice, ChoiceOracle, Point, SamplingMethod, SearchSpace};

/// Expert-designated promising region: a union of sub-boxes of the space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    pub boxes: Vec<SearchSpace>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HypothesisKind {
    Expert,
    Random,
    Adversarial,
}

impl HypothesisKind {
    pub const ALL: [HypothesisKind; 3] = [HypothesisKind::Expert, HypothesisKind::Random, HypothesisKind::Adversarial];

    pub fn label(self) -> &'static str {
        match self {
            HypothesisKind::Expert => "expert",
            HypothesisKind::Random => "random",
            HypothesisKind::Adversarial => "adversarial",
        }
    }
}

impl Hypothesis {
    pub fn full(space: &SearchSpace) -> Self {
        Self { boxes: vec![space.clone()] }
    }

    /// Checks every box is a nonempty sub-box of `space`.
    pub fn validate(&self, space: &SearchSpace) -> Result<()> {
        if self.boxes.is_empty() {
            return Err(Error::Config("hypothesis has no boxes".into()));
        }
        for b in &self.boxes {
            let inside = b.dims() == space.dims()
                && (0..b.dims()).all(|i| b.lower()[i] >= space.lower()[i] && b.upper()[i] <= space.upper()[i]);
            if !inside {
                return Err(Error::Config(format!("hypothesis box {b:?} is not inside the search space")));
            }
        }
        Ok(())
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        self.boxes.iter().any(|b| b.contains(x))
    }

    fn volume(b: &SearchSpace) -> f64 {
        (0..b.dims()).map(|i| b.width(i)).product()
    }

    /// Uniform draw from the union (boxes weighted by volume; overlaps are
    /// counted once per box).
    fn sample(&self, rng: &mut rng::Rng) -> Point {
        let total: f64 = self.boxes.iter().map(Self::volume).sum();
        let mut pick = rng.random::<f64>() * total;
        let mut chosen = &self.boxes[self.boxes.len() - 1];
        for b in &self.boxes {
            let v = Self::volume(b);
            if pick < v {
                chosen = b;
                break;
            }
            pick -= v;
        }
        let u: Vec<f64> = (0..chosen.dims()).map(|_| rng.random::<f64>()).collect();
        chosen.from_unit(&u)
    }
}

fn slab(space: &SearchSpace, k: usize, slices: usize) -> SearchSpace {
    let mut lower = space.lower().to_vec();
    let mut upper = space.upper().to_vec();
    let (l, w) = (space.lower()[0], space.width(0));
    lower[0] = l + w * k as f64 / slices as f64;
    if k + 1 < slices {
        upper[0] = l + w * (k + 1) as f64 / slices as f64;
    }
    SearchSpace::new(lower, upper).expect("slab of a valid space")
}

/// Slices the first dimension into `slices` equal slabs and picks one:
/// the slab holding the optimum (`Expert`), the slab with the smallest sum
/// of `per_slice` Latin-hypercube evaluations (`Adversarial`), or the whole
/// space (`Random`).
pub fn make_hypothesis(kind: HypothesisKind, task: &BlackBoxTask, slices: usize, per_slice: usize, seed: u64) -> Result<Hypothesis> {
    if slices < 2 {
        return Err(Error::Config(format!("hypotheses need at least 2 slices, got {slices}")));
    }
    let space = &task.space;
    match kind {
        HypothesisKind::Random => Ok(Hypothesis::full(space)),
        HypothesisKind::Expert => {
            let opt = task
                .known_optimum
                .as_ref()
                .ok_or_else(|| Error::HypothesisUnavailable(format!("task {} has no known optimum", task.id)))?;
            let frac = (opt.point[0] - space.lower()[0]) / space.width(0);
            let k = ((frac * slices as f64).floor().max(0.0) as usize).min(slices - 1);
            Ok(Hypothesis { boxes: vec![slab(space, k, slices)] })
        }
        HypothesisKind::Adversarial => {
            if per_slice == 0 {
                return Err(Error::EmptyRequest("adversarial hypothesis with 0 samples per slice".into()));
            }
            let mut worst = (0, f64::INFINITY);
            for k in 0..slices {
                let b = slab(space, k, slices);
                let pts = sample_space(&b, per_slice, SamplingMethod::LatinHypercube, rng::derive(seed, tag::HYPOTHESIS, k as u64))?;
                let v: f64 = pts.iter().map(|p| task.evaluate(p)).sum::<Result<f64>>()?;
                if v < worst.1 {
                    worst = (k, v);
                }
            }
            Ok(Hypothesis { boxes: vec![slab(space, worst.0, slices)] })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrefSource {
    Simulated,
    Human,
}

/// One labeled comparison; `y == 1` iff `x1` was favored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub x1: Point,
    pub x2: Point,
    pub y: u8,
    pub source: PrefSource,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PreferenceDataset {
    pub pairs: Vec<PreferencePair>,
}

impl PreferenceDataset {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn push(&mut self, pair: PreferencePair) -> Result<()> {
        if pair.y > 1 {
            return Err(Error::BadRequest(format!("preference label must be 0 or 1, got {}", pair.y)));
        }
        if pair.x1.len() != pair.x2.len() {
            return Err(Error::Shape("pair points differ in dimension".into()));
        }
        if pair.x1 == pair.x2 {
            return Err(Error::BadRequest("pair compares a point with itself".into()));
        }
        self.pairs.push(pair);
        Ok(())
    }

    /// Labels as a slice-friendly vector.
    pub fn labels(&self) -> Vec<u8> {
        self.pairs.iter().map(|p| p.y).collect()
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for p in &self.pairs {
            out.push_str(&serde_json::to_string(p)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_jsonl(s: &str) -> Result<Self> {
        let mut d = Self::default();
        for line in s.lines().filter(|l| !l.trim().is_empty()) {
            d.push(serde_json::from_str(line)?)?;
        }
        Ok(d)
    }
}

/// Samples `m` distinct-point pairs uniformly inside `hypothesis` and asks
/// `oracle` to label each. An oracle error of kind
/// [`Error::ElicitationAborted`] is returned with the labels collected so far.
pub fn build_pref_dataset(
    oracle: &mut dyn ChoiceOracle,
    task: &BlackBoxTask,
    hypothesis: &Hypothesis,
    m: usize,
    seed: u64,
) -> Result<PreferenceDataset> {
    if m == 0 {
        return Err(Error::EmptyRequest("preference dataset with M = 0".into()));
    }
    hypothesis.validate(&task.space)?;
    let source = if oracle.is_human() { PrefSource::Human } else { PrefSource::Simulated };
    let mut data = PreferenceDataset::default();
    for (x1, x2) in sample_pref_pairs(hypothesis, m, seed) {
        let choice = match oracle.choose(task, &x1, &x2) {
            Ok(c) => c,
            Err(Error::ElicitationAborted { .. }) => return Err(Error::ElicitationAborted { partial: Box::new(data) }),
            Err(e) => return Err(e),
        };
        data.push(PreferencePair { x1, x2, y: u8::from(choice == Choice::First), source })?;
    }
    Ok(data)
}

/// The unlabeled pairs [`build_pref_dataset`] would present, in order.
pub fn sample_pref_pairs(hypothesis: &Hypothesis, m: usize, seed: u64) -> Vec<(Point, Point)> {
    (0..m)
        .map(|i| {
            let mut r = rng::stream(seed, tag::PREF_PAIRS, i as u64);
            let x1 = hypothesis.sample(&mut r);
            let mut x2 = hypothesis.sample(&mut r);
            while x2 == x1 {
                x2 = hypothesis.sample(&mut r);
            }
            (x1, x2)
        })
        .collect()
}

/// Appends the mirrored pair `(x2, x1, 1 - y)` for every pair.
pub fn augment_skew(data: &PreferenceDataset) -> PreferenceDataset {
    let mut pairs = data.pairs.clone();
    pairs.extend(data.pairs.iter().map(|p| PreferencePair { x1: p.x2.clone(), x2: p.x1.clone(), y: 1 - p.y, source: p.source }));
    PreferenceDataset { pairs }
}

/// `z^y (1 - z)^(1 - y)`.
pub fn bernoulli_likelihood(y: u8, z: f64) -> f64 {
    if y == 1 {
        z
    } else {
        1.0 - z
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferenceConfig {
    pub dirichlet_eps: f64,
    pub mc_samples: usize,
    /// Multipliers of the median-heuristic lengthscales tried by ML-II.
    pub lengthscale_factors: Vec<f64>,
}

impl Default for PreferenceConfig {
    fn default() -> Self {
        Self { dirichlet_eps: 0.01, mc_samples: 64, lengthscale_factors: vec![0.5, 1.0, 2.0] }
    }
}

fn matern52(a: &[f64], b: &[f64], ls: &[f64], var: f64) -> f64 {
    let r2: f64 = a.iter().zip(b).zip(ls).map(|((x, y), l)| ((x - y) / l).powi(2)).sum();
    let s5r = (5.0 * r2).sqrt();
    var * (1.0 + s5r + 5.0 * r2 / 3.0) * (-s5r).exp()
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

/// Exact GP regression with per-point noise on one Dirichlet class.
#[derive(Debug, Clone)]
struct ClassGp {
    prior_mean: f64,
    signal_var: f64,
    chol: Cholesky,
    alpha: Vec<f64>,
    log_marginal: f64,
}

impl ClassGp {
    fn fit(z: &[Point], targets: &[f64], noise: &[f64], ls: &[f64]) -> Option<(Self, f64)> {
        let n = z.len();
        let prior_mean = targets.iter().sum::<f64>() / n as f64;
        let signal_var = (targets.iter().map(|t| (t - prior_mean).powi(2)).sum::<f64>() / n as f64).max(1e-2);
        let mut k = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let v = matern52(&z[i], &z[j], ls, signal_var);
                k[i * n + j] = v;
                k[j * n + i] = v;
            }
            k[i * n + i] += noise[i];
        }
        let (chol, jitter) = Cholesky::with_jitter(&k, n, 1e-8, 1e-4)?;
        let resid: Vec<f64> = targets.iter().map(|t| t - prior_mean).collect();
        let alpha = chol.solve(&resid);
        let fit = resid.iter().zip(&alpha).map(|(a, b)| a * b).sum::<f64>();
        let log_marginal = -0.5 * fit - 0.5 * chol.log_det() - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();
        Some((Self { prior_mean, signal_var, chol, alpha, log_marginal }, jitter))
    }

    fn predict(&self, z: &[Point], ls: &[f64], q: &[f64]) -> (f64, f64) {
        let ks: Vec<f64> = z.iter().map(|zi| matern52(zi, q, ls, self.signal_var)).collect();
        let mean = self.prior_mean + ks.iter().zip(&self.alpha).map(|(a, b)| a * b).sum::<f64>();
        let v = self.chol.forward(&ks);
        let var = (self.signal_var - v.iter().map(|a| a * a).sum::<f64>()).max(1e-12);
        (mean, var)
    }
}

#[derive(Debug, Clone)]
struct Fitted {
    z: Vec<Point>,
    lengthscales: Vec<f64>,
    classes: [ClassGp; 2],
    diagnostics: FitDiagnostics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub n_pairs: usize,
    pub lengthscale_factor: f64,
    pub jitter: f64,
    pub log_marginal: f64,
    /// Mean Bernoulli log-likelihood of the training labels.
    pub mean_log_likelihood: f64,
    /// Fraction of training pairs whose favored point the model predicts.
    pub train_accuracy: f64,
}

/// Dirichlet-GP pairwise classifier `pi`. Unfitted until [`fit`](Self::fit)
/// succeeds.
#[derive(Debug, Clone)]
pub struct PreferenceModel {
    pub config: PreferenceConfig,
    fitted: Option<Fitted>,
}

/// Per-query preference mean and variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferencePosterior {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

const VARIANCE_FLOOR: f64 = 1e-6;
const QUAD_NODES: usize = 161;

impl PreferenceModel {
    pub fn new(config: PreferenceConfig) -> Self {
        Self { config, fitted: None }
    }

    pub fn is_fitted(&self) -> bool {
        self.fitted.is_some()
    }

    pub fn diagnostics(&self) -> Option<&FitDiagnostics> {
        self.fitted.as_ref().map(|f| &f.diagnostics)
    }

    pub fn lengthscales(&self) -> Option<&[f64]> {
        self.fitted.as_ref().map(|f| f.lengthscales.as_slice())
    }

    /// Fits both class GPs on `data` (normally already skew-augmented).
    pub fn fit(&mut self, data: &PreferenceDataset) -> Result<()> {
        if data.len() < 2 {
            return Err(Error::Fit(format!("need at least 2 labeled pairs, got {}", data.len())));
        }
        let eps = self.config.dirichlet_eps;
        if !(eps > 0.0) {
            return Err(Error::Config("dirichlet_eps must be positive".into()));
        }
        let z: Vec<Point> = data.pairs.iter().map(|p| [p.x1.as_slice(), p.x2.as_slice()].concat()).collect();
        let dims = z[0].len();
        let mut dists = Vec::new();
        for i in 0..z.len() {
            for j in i + 1..z.len() {
                let r = z[i].iter().zip(&z[j]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                if r > 0.0 {
                    dists.push(r);
                }
            }
        }
        let median_ls = vec![median(dists).unwrap_or(1.0); dims];

        let mut targets = [vec![], vec![]];
        let mut noise = [vec![], vec![]];
        for p in &data.pairs {
            for c in 0..2 {
                let a = eps + f64::from(u8::from(p.y as usize == c));
                let s2 = (1.0 / a + 1.0).ln();
                targets[c].push(a.ln() - s2 / 2.0);
                noise[c].push(s2);
            }
        }

        let mut best: Option<(f64, f64, Vec<f64>, [ClassGp; 2], f64)> = None;
        for &factor in &self.config.lengthscale_factors {
            let ls: Vec<f64> = median_ls.iter().map(|l| l * factor).collect();
            let Some((g0, j0)) = ClassGp::fit(&z, &targets[0], &noise[0], &ls) else { continue };
            let Some((g1, j1)) = ClassGp::fit(&z, &targets[1], &noise[1], &ls) else { continue };
            let lml = g0.log_marginal + g1.log_marginal;
            if best.as_ref().is_none_or(|b| lml > b.0) {
                best = Some((lml, factor, ls, [g0, g1], j0.max(j1)));
            }
        }
        let (lml, factor, lengthscales, classes, jitter) =
            best.ok_or_else(|| Error::Fit("kernel matrix singular even with jitter 1e-4".into()))?;
        let mut fitted = Fitted {
            z,
            lengthscales,
            classes,
            diagnostics: FitDiagnostics {
                n_pairs: data.len(),
                lengthscale_factor: factor,
                jitter,
                log_marginal: lml,
                mean_log_likelihood: 0.0,
                train_accuracy: 0.0,
            },
        };
        let (mut ll, mut hits) = (0.0, 0usize);
        for p in &data.pairs {
            let prob = latent_probability(&fitted, &p.x1, &p.x2);
            ll += bernoulli_likelihood(p.y, prob).max(1e-300).ln();
            hits += usize::from((prob >= 0.5) == (p.y == 1));
        }
        fitted.diagnostics.mean_log_likelihood = ll / data.len() as f64;
        fitted.diagnostics.train_accuracy = hits as f64 / data.len() as f64;
        self.fitted = Some(fitted);
        Ok(())
    }

    fn fitted(&self) -> Result<&Fitted> {
        self.fitted.as_ref().ok_or(Error::ModelNotFitted)
    }

    /// Latent difference `g_1 - g_0` at pair `(x1, x2)` as `(mean, variance)`.
    pub fn latent(&self, x1: &[f64], x2: &[f64]) -> Result<(f64, f64)> {
        let f = self.fitted()?;
        check_pair_dims(f, x1, x2)?;
        Ok(latent_diff(f, x1, x2))
    }

    /// Expected probability that `x1` is favored over `x2`, integrating the
    /// class softmax over the latent posterior by quadrature.
    pub fn pair_probability(&self, x1: &[f64], x2: &[f64]) -> Result<f64> {
        let f = self.fitted()?;
        check_pair_dims(f, x1, x2)?;
        Ok(latent_probability(f, x1, x2))
    }

    /// Monte-Carlo mean and variance of `P(x > x_ref)` for each query.
    pub fn posterior(&self, queries: &[Point], x_ref: &[f64], mc_seed: u64) -> Result<PreferencePosterior> {
        self.posterior_over_refs(queries, std::slice::from_ref(&x_ref.to_vec()), mc_seed)
    }

    /// As [`posterior`](Self::posterior), pooled over several reference
    /// points: the mean averages the per-reference means and the variance is
    /// the total variance of the mixture.
    pub fn posterior_over_refs(&self, queries: &[Point], refs: &[Point], mc_seed: u64) -> Result<PreferencePosterior> {
        let f = self.fitted()?;
        if refs.is_empty() {
            return Err(Error::EmptyRequest("preference posterior needs a reference point".into()));
        }
        let s = self.config.mc_samples.max(2);
        let mut out = PreferencePosterior { mean: Vec::with_capacity(queries.len()), variance: Vec::with_capacity(queries.len()) };
        for x in queries {
            let mut means = Vec::with_capacity(refs.len());
            let mut vars = Vec::with_capacity(refs.len());
            for r in refs {
                check_pair_dims(f, x, r)?;
                let (m, v) = latent_diff(f, x, r);
                let key = rng::point_key(rng::derive(mc_seed, tag::PREF_MC, 0), &[x.as_slice(), r.as_slice()].concat());
                let mut g = rng::from_key(key);
                let sd = v.sqrt();
                let (mut sum, mut sum2) = (0.0, 0.0);
                // antithetic pairs keep the estimate symmetric about the latent mean
                for _ in 0..s / 2 {
                    let e: f64 = StandardNormal.sample(&mut g);
                    for p in [sigmoid(m + sd * e), sigmoid(m - sd * e)] {
                        sum += p;
                        sum2 += p * p;
                    }
                }
                let n = (s / 2 * 2) as f64;
                let mean = sum / n;
                means.push(mean);
                vars.push(((sum2 - n * mean * mean) / (n - 1.0)).max(0.0));
            }
            let k = refs.len() as f64;
            let mu = means.iter().sum::<f64>() / k;
            let within = vars.iter().sum::<f64>() / k;
            let between = means.iter().map(|m| (m - mu).powi(2)).sum::<f64>() / k;
            out.mean.push(mu);
            out.variance.push((within + between).max(VARIANCE_FLOOR));
        }
        Ok(out)
    }
}

fn check_pair_dims(f: &Fitted, x1: &[f64], x2: &[f64]) -> Result<()> {
    let d = f.z[0].len();
    if x1.len() + x2.len() != d || x1.len() != x2.len() {
        return Err(Error::Shape(format!("preference model expects {}-dimensional points", d / 2)));
    }
    Ok(())
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn latent_diff(f: &Fitted, x1: &[f64], x2: &[f64]) -> (f64, f64) {
    let q = [x1, x2].concat();
    let (m0, v0) = f.classes[0].predict(&f.z, &f.lengthscales, &q);
    let (m1, v1) = f.classes[1].predict(&f.z, &f.lengthscales, &q);
    (m1 - m0, v0 + v1)
}

fn latent_probability(f: &Fitted, x1: &[f64], x2: &[f64]) -> f64 {
    let (m, v) = latent_diff(f, x1, x2);
    let sd = v.sqrt();
    // trapezoid rule on [-8, 8] against the standard normal density
    let h = 16.0 / (QUAD_NODES - 1) as f64;
    let mut acc = 0.0;
    let mut wsum = 0.0;
    for i in 0..QUAD_NODES {
        let e = -8.0 + i as f64 * h;
        let w = (-0.5 * e * e).exp() * if i == 0 || i + 1 == QUAD_NODES { 0.5 } else { 1.0 };
        acc += w * sigmoid(m + sd * e);
        wsum += w;
    }
    acc / wsum
}

/// Fits a fresh model on `data` (which should be skew-augmented).
pub fn fit_preference_model(data: &PreferenceDataset, config: PreferenceConfig) -> Result<PreferenceModel> {
    let mut m = PreferenceModel::new(config);
    m.fit(data)?;
    Ok(m)
}

/// Per-point preference posterior against a single reference point.
pub fn preference_posterior(model: &PreferenceModel, queries: &[Point], x_ref: &[f64], mc_seed: u64) -> Result<PreferencePosterior> {
    model.posterior(queries, x_ref, mc_seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::task::{Objective, SimulatedExpert};

    fn line(d: usize) -> BlackBoxTask {
        let mut w = vec![0.0; d];
        w[0] = 1.0;
        BlackBoxTask::new("line", SearchSpace::unit(d), Objective::Linear { weights: w, bias: 0.0 })
            .with_optimum_at([vec![1.0], vec![0.5; d - 1]].concat())
            .unwrap()
    }

    #[test]
    fn bernoulli_identity() {
        assert_eq!(bernoulli_likelihood(1, 0.7), 0.7);
        assert!((bernoulli_likelihood(0, 0.7) - 0.3).abs() < 1e-15);
    }

    #[test]
    fn expert_slab_contains_optimum() {
        let task = line(2).with_optimum_at(vec![0.95, 0.3]).unwrap();
        let h = make_hypothesis(HypothesisKind::Expert, &task, 10, 100, 0).unwrap();
        assert_eq!(h.boxes.len(), 1);
        assert_eq!(h.boxes[0].lower(), &[0.9, 0.0]);
        assert_eq!(h.boxes[0].upper(), &[1.0, 1.0]);
    }

    #[test]
    fn adversarial_slab_is_lowest_sum() {
        let task = line(2);
        let h = make_hypothesis(HypothesisKind::Adversarial, &task, 10, 100, 4).unwrap();
        assert_eq!(h.boxes[0].lower()[0], 0.0);
        assert_eq!(h.boxes[0].upper()[0], 0.1);
    }

    #[test]
    fn random_hypothesis_is_full_space() {
        let task = line(3);
        let h = make_hypothesis(HypothesisKind::Random, &task, 10, 100, 4).unwrap();
        assert_eq!(h, Hypothesis::full(&task.space));
    }

    #[test]
    fn hypothesis_errors() {
        let task = BlackBoxTask::new("c", SearchSpace::unit(1), Objective::Constant { value: 1.0 });
        assert!(matches!(make_hypothesis(HypothesisKind::Expert, &task, 10, 5, 0), Err(Error::HypothesisUnavailable(_))));
        assert!(make_hypothesis(HypothesisKind::Random, &task, 1, 5, 0).is_err());
    }

    #[test]
    fn pairs_stay_inside_hypothesis() {
        let task = line(2);
        let h = make_hypothesis(HypothesisKind::Expert, &task, 10, 100, 0).unwrap();
        let mut expert = SimulatedExpert::new(0.0, 1).unwrap();
        let d = build_pref_dataset(&mut expert, &task, &h, 10, 3).unwrap();
        assert_eq!(d.len(), 10);
        for p in &d.pairs {
            assert!(h.contains(&p.x1) && h.contains(&p.x2));
            assert_ne!(p.x1, p.x2);
            assert_eq!(p.y == 1, p.x1[0] >= p.x2[0]);
            assert_eq!(p.source, PrefSource::Simulated);
        }
    }

    #[test]
    fn skew_augmentation_shape() {
        let a = PreferencePair { x1: vec![0.1], x2: vec![0.2], y: 1, source: PrefSource::Human };
        let d = PreferenceDataset { pairs: vec![a.clone()] };
        let aug = augment_skew(&d);
        assert_eq!(aug.pairs[0], a);
        assert_eq!(aug.pairs[1], PreferencePair { x1: vec![0.2], x2: vec![0.1], y: 0, source: PrefSource::Human });
        let twice = augment_skew(&aug);
        assert_eq!(twice.len(), 4);
        assert_eq!(twice.pairs.iter().filter(|p| **p == a).count(), 2);
    }

    #[test]
    fn jsonl_round_trip_and_validation() {
        let d = PreferenceDataset {
            pairs: vec![PreferencePair { x1: vec![0.1, 0.2], x2: vec![0.3, 0.4], y: 0, source: PrefSource::Simulated }],
        };
        let text = d.to_jsonl().unwrap();
        assert!(text.contains("\"source\":\"simulated\""));
        assert_eq!(PreferenceDataset::from_jsonl(&text).unwrap(), d);
        assert!(PreferenceDataset::from_jsonl(r#"{"x1":[0.1],"x2":[0.1],"y":1,"source":"human"}"#).is_err());
        assert!(PreferenceDataset::from_jsonl(r#"{"x1":[0.1],"x2":[0.2],"y":2,"source":"human"}"#).is_err());
    }

    #[test]
    fn single_pair_points_the_right_way() {
        let d = PreferenceDataset {
            pairs: vec![PreferencePair { x1: vec![0.8], x2: vec![0.2], y: 1, source: PrefSource::Simulated }],
        };
        let m = fit_preference_model(&augment_skew(&d), PreferenceConfig::default()).unwrap();
        assert!(m.pair_probability(&[0.8], &[0.2]).unwrap() >= 0.5);
        assert!(m.pair_probability(&[0.2], &[0.8]).unwrap() <= 0.5);
    }

    #[test]
    fn unfitted_model_refuses_queries() {
        let m = PreferenceModel::new(PreferenceConfig::default());
        assert!(matches!(m.posterior(&[vec![0.5]], &[0.5], 0), Err(Error::ModelNotFitted)));
        assert!(matches!(m.pair_probability(&[0.5], &[0.1]), Err(Error::ModelNotFitted)));
    }
}
