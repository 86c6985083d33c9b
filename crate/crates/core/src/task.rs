//! Search spaces, black-box tasks, synthetic task families, the simulated
//! expert and regret accounting.

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, tag};

pub type Point = Vec<f64>;

/// Axis-aligned box `[lower_i, upper_i]` per dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSpace")]
pub struct SearchSpace {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

#[derive(Deserialize)]
struct RawSpace {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl TryFrom<RawSpace> for SearchSpace {
    type Error = Error;
    fn try_from(raw: RawSpace) -> Result<Self> {
        SearchSpace::new(raw.lower, raw.upper)
    }
}

impl SearchSpace {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.is_empty() {
            return Err(Error::InvalidSpace("zero dimensions".into()));
        }
        if lower.len() != upper.len() {
            return Err(Error::InvalidSpace(format!(
                "{} lower bounds but {} upper bounds",
                lower.len(),
                upper.len()
            )));
        }
        for (i, (l, u)) in lower.iter().zip(&upper).enumerate() {
            if !(l.is_finite() && u.is_finite() && l < u) {
                return Err(Error::InvalidSpace(format!("dimension {i}: [{l}, {u}]")));
            }
        }
        Ok(Self { lower, upper })
    }

    /// The unit hypercube `[0, 1]^dims`.
    pub fn unit(dims: usize) -> Self {
        Self::new(vec![0.0; dims], vec![1.0; dims]).expect("dims >= 1")
    }

    pub fn dims(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn width(&self, i: usize) -> f64 {
        self.upper[i] - self.lower[i]
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dims()
            && x.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (l, u))| *v >= *l && *v <= *u)
    }

    pub fn check(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dims() {
            return Err(Error::Shape(format!(
                "point has {} coordinates, space has {}",
                x.len(),
                self.dims()
            )));
        }
        if !self.contains(x) {
            return Err(Error::Domain(format!("{x:?} not in {:?}..{:?}", self.lower, self.upper)));
        }
        Ok(())
    }

    pub fn to_unit(&self, x: &[f64]) -> Point {
        x.iter()
            .enumerate()
            .map(|(i, v)| (v - self.lower[i]) / self.width(i))
            .collect()
    }

    pub fn from_unit(&self, u: &[f64]) -> Point {
        u.iter()
            .enumerate()
            .map(|(i, v)| (self.lower[i] + v * self.width(i)).clamp(self.lower[i], self.upper[i]))
            .collect()
    }

    pub fn clamp(&self, x: &mut [f64]) {
        for (i, v) in x.iter_mut().enumerate() {
            *v = v.clamp(self.lower[i], self.upper[i]);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingMethod {
    Uniform,
    LatinHypercube,
}

/// Draws `n` points from `space`.
///
/// Latin hypercube sampling splits every dimension into `n` equal bins and
/// places exactly one sample in each bin.
pub fn sample_space(space: &SearchSpace, n: usize, method: SamplingMethod, seed: u64) -> Result<Vec<Point>> {
    if n == 0 {
        return Err(Error::EmptyRequest("sample_space with n = 0".into()));
    }
    let mut rng = rng::stream(seed, method as u64, n as u64);
    let d = space.dims();
    let unit: Vec<Point> = match method {
        SamplingMethod::Uniform => (0..n).map(|_| (0..d).map(|_| rng.random::<f64>()).collect()).collect(),
        SamplingMethod::LatinHypercube => {
            let mut pts = vec![vec![0.0; d]; n];
            let mut bins: Vec<usize> = (0..n).collect();
            for j in 0..d {
                bins.shuffle(&mut rng);
                for (i, p) in pts.iter_mut().enumerate() {
                    let u: f64 = rng.random();
                    // stays strictly inside bin `bins[i]`
                    p[j] = ((bins[i] as f64 + u) / n as f64).min((bins[i] as f64 + 1.0) / n as f64 - f64::EPSILON);
                }
            }
            pts
        }
    };
    Ok(unit.iter().map(|u| space.from_unit(u)).collect())
}

/// One Gaussian bump `height * exp(-|x - center|^2 / (2 width^2))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bump {
    pub center: Point,
    pub width: f64,
    pub height: f64,
}

impl Bump {
    fn eval(&self, u: &[f64]) -> f64 {
        let r2: f64 = u.iter().zip(&self.center).map(|(a, b)| (a - b).powi(2)).sum();
        self.height * (-r2 / (2.0 * self.width * self.width)).exp()
    }
}

/// The deterministic map behind a [`BlackBoxTask`]. All variants are
/// evaluated on unit-cube coordinates of the task's space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Objective {
    /// `sqrt(2/K) * sum_k a_k cos(w_k . u / lengthscale + b_k)`; a draw from a
    /// GP with squared-exponential kernel in the limit of many features.
    RandomFeatures {
        frequencies: Vec<Point>,
        phases: Vec<f64>,
        amplitudes: Vec<f64>,
        lengthscale: f64,
    },
    /// Fixed multimodal template composed with a random rotation, shift,
    /// input scaling and output affine map.
    Template {
        center: Point,
        rotation: Vec<Point>,
        input_scale: f64,
        amplitude: f64,
        bias: f64,
    },
    /// Sum of Gaussian bumps plus a constant.
    Bumps { bumps: Vec<Bump>, baseline: f64 },
    Linear { weights: Point, bias: f64 },
    Constant { value: f64 },
}

/// Bumps of the shared multimodal template, in rotated/scaled coordinates:
/// a sharp global peak, a wider decoy, and a broad shoulder.
fn template_value(v: &[f64]) -> f64 {
    let r2 = |off0: f64, off1: f64| -> f64 {
        v.iter()
            .enumerate()
            .map(|(i, a)| {
                let o = match i {
                    0 => off0,
                    1 => off1,
                    _ => 0.0,
                };
                (a - o).powi(2)
            })
            .sum()
    };
    let main = (-r2(0.0, 0.0) / (2.0 * 0.12 * 0.12)).exp();
    let decoy = 0.7 * (-r2(0.38, 0.22) / (2.0 * 0.16 * 0.16)).exp();
    let shoulder = 0.25 * (-r2(0.0, 0.0) / (2.0 * 0.45 * 0.45)).exp();
    main + decoy + shoulder
}

impl Objective {
    pub fn eval_unit(&self, u: &[f64]) -> f64 {
        match self {
            Objective::RandomFeatures { frequencies, phases, amplitudes, lengthscale } => {
                let k = frequencies.len() as f64;
                let s: f64 = frequencies
                    .iter()
                    .zip(phases)
                    .zip(amplitudes)
                    .map(|((w, b), a)| {
                        let dot: f64 = w.iter().zip(u).map(|(wi, ui)| wi * ui).sum();
                        a * (dot / lengthscale + b).cos()
                    })
                    .sum();
                (2.0 / k).sqrt() * s
            }
            Objective::Template { center, rotation, input_scale, amplitude, bias } => {
                let shifted: Vec<f64> = u.iter().zip(center).map(|(a, c)| a - c).collect();
                let v: Vec<f64> = rotation
                    .iter()
                    .map(|row| row.iter().zip(&shifted).map(|(r, s)| r * s).sum::<f64>() / input_scale)
                    .collect();
                amplitude * template_value(&v) + bias
            }
            Objective::Bumps { bumps, baseline } => baseline + bumps.iter().map(|b| b.eval(u)).sum::<f64>(),
            Objective::Linear { weights, bias } => bias + weights.iter().zip(u).map(|(w, x)| w * x).sum::<f64>(),
            Objective::Constant { value } => *value,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Optimum {
    pub point: Point,
    pub value: f64,
}

/// A deterministic black-box objective over a search space (maximized).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlackBoxTask {
    pub id: String,
    pub space: SearchSpace,
    pub objective: Objective,
    pub known_optimum: Option<Optimum>,
}

impl BlackBoxTask {
    pub fn new(id: impl Into<String>, space: SearchSpace, objective: Objective) -> Self {
        Self { id: id.into(), space, objective, known_optimum: None }
    }

    /// Attaches the global maximum located by a dense scan plus local
    /// pattern-search refinement.
    pub fn with_located_optimum(mut self, seed: u64) -> Self {
        self.known_optimum = Some(locate_optimum(&self.space, &self.objective, seed));
        self
    }

    /// Attaches a known optimum; its value is recomputed from `point`.
    pub fn with_optimum_at(mut self, point: Point) -> Result<Self> {
        let value = self.evaluate(&point)?;
        self.known_optimum = Some(Optimum { point, value });
        Ok(self)
    }

    pub fn dims(&self) -> usize {
        self.space.dims()
    }

    pub fn evaluate(&self, x: &[f64]) -> Result<f64> {
        self.space.check(x)?;
        Ok(self.eval_unchecked(x))
    }

    fn eval_unchecked(&self, x: &[f64]) -> f64 {
        self.objective.eval_unit(&self.space.to_unit(x))
    }
}

fn grid_points_per_dim(dims: usize) -> usize {
    (1e4f64.powf(1.0 / dims as f64)).ceil() as usize
}

/// Index-th point of a full-factorial grid with `per_dim` levels (endpoints included).
fn grid_point(index: usize, per_dim: usize, dims: usize) -> Point {
    let mut rem = index;
    (0..dims)
        .map(|_| {
            let k = rem % per_dim;
            rem /= per_dim;
            k as f64 / (per_dim - 1) as f64
        })
        .collect()
}

fn locate_optimum(space: &SearchSpace, objective: &Objective, seed: u64) -> Optimum {
    let d = space.dims();
    let f = |u: &[f64]| objective.eval_unit(u);
    let (candidates, spacing): (Vec<Point>, f64) = if d <= 3 {
        let per = grid_points_per_dim(d);
        ((0..per.pow(d as u32)).map(|i| grid_point(i, per, d)).collect(), 1.0 / (per - 1) as f64)
    } else {
        let unit = SearchSpace::unit(d);
        let pts = sample_space(&unit, 100_000, SamplingMethod::LatinHypercube, rng::derive(seed, tag::OPTIMUM, 0))
            .expect("n > 0");
        (pts, 0.1)
    };
    let mut scored: Vec<(f64, Point)> = candidates.into_iter().map(|u| (f(&u), u)).collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut best = (f64::NEG_INFINITY, Vec::new());
    for (v, u) in scored.into_iter().take(5) {
        let refined = pattern_search(&f, u, v, spacing);
        if refined.0 > best.0 {
            best = refined;
        }
    }
    let point = space.from_unit(&best.1);
    let value = objective.eval_unit(&space.to_unit(&point));
    Optimum { point, value }
}

/// Compass search inside the unit cube, halving the step until it is negligible.
fn pattern_search(f: &impl Fn(&[f64]) -> f64, mut u: Point, mut v: f64, mut step: f64) -> (f64, Point) {
    while step > 1e-10 {
        let mut improved = false;
        for i in 0..u.len() {
            for dir in [1.0, -1.0] {
                let mut c = u.clone();
                c[i] = (c[i] + dir * step).clamp(0.0, 1.0);
                let fc = f(&c);
                if fc > v {
                    u = c;
                    v = fc;
                    improved = true;
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    (v, u)
}

/// Evaluated `(x, y)` pairs on one task, in evaluation order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TaskDataset {
    pub task_id: String,
    pub points: Vec<Point>,
    pub values: Vec<f64>,
}

impl TaskDataset {
    pub fn new(task_id: impl Into<String>) -> Self {
        Self { task_id: task_id.into(), points: Vec::new(), values: Vec::new() }
    }

    pub fn from_parts(task_id: impl Into<String>, points: Vec<Point>, values: Vec<f64>) -> Result<Self> {
        if points.len() != values.len() {
            return Err(Error::Shape(format!("{} points but {} values", points.len(), values.len())));
        }
        Ok(Self { task_id: task_id.into(), points, values })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn push(&mut self, x: Point, y: f64) {
        self.points.push(x);
        self.values.push(y);
    }

    /// Index and value of the best (largest) observation.
    pub fn best(&self) -> Option<(usize, f64)> {
        self.values
            .iter()
            .copied()
            .enumerate()
            .fold(None, |acc, (i, v)| match acc {
                Some((_, b)) if b >= v => acc,
                _ => Some((i, v)),
            })
    }

    pub fn incumbent(&self) -> Option<&Point> {
        self.best().map(|(i, _)| &self.points[i])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FamilyKind {
    RandomFeatures { features: usize, lengthscale: f64 },
    Template,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyConfig {
    pub kind: FamilyKind,
    pub dims: usize,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
}

impl Default for FamilyConfig {
    fn default() -> Self {
        Self { kind: FamilyKind::Template, dims: 2, n_train: 64, n_val: 4, n_test: 10 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// Related tasks sharing one search space, split into disjoint
/// train/validation/test sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskFamily {
    pub space: SearchSpace,
    pub config: FamilyConfig,
    pub seed: u64,
    pub train: Vec<BlackBoxTask>,
    pub val: Vec<BlackBoxTask>,
    pub test: Vec<BlackBoxTask>,
}

impl TaskFamily {
    pub fn split(&self, split: Split) -> &[BlackBoxTask] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    pub fn tasks(&self) -> impl Iterator<Item = &BlackBoxTask> {
        self.train.iter().chain(&self.val).chain(&self.test)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let family: TaskFamily = serde_json::from_str(s)?;
        family.validate()?;
        Ok(family)
    }

    pub fn validate(&self) -> Result<()> {
        if self.train.is_empty() {
            return Err(Error::InvalidFamily("empty training split".into()));
        }
        let all: Vec<&BlackBoxTask> = self.tasks().collect();
        for (i, a) in all.iter().enumerate() {
            if a.space != self.space {
                return Err(Error::InvalidFamily(format!("task {} has a different space", a.id)));
            }
            for b in &all[i + 1..] {
                if a.id == b.id || a.objective == b.objective {
                    return Err(Error::InvalidFamily(format!("tasks {} and {} are not distinct", a.id, b.id)));
                }
            }
        }
        Ok(())
    }
}

fn random_rotation(d: usize, rng: &mut rng::Rng) -> Vec<Point> {
    // Gram-Schmidt on a Gaussian matrix gives a Haar-distributed orthogonal matrix.
    let mut rows: Vec<Point> = Vec::with_capacity(d);
    while rows.len() < d {
        let mut v: Point = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        for r in &rows {
            let dot: f64 = v.iter().zip(r).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(r).for_each(|(a, b)| *a -= dot * b);
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-8 {
            rows.push(v.into_iter().map(|a| a / norm).collect());
        }
    }
    rows
}

fn sample_objective(kind: &FamilyKind, dims: usize, rng: &mut rng::Rng) -> Objective {
    match kind {
        FamilyKind::RandomFeatures { features, lengthscale } => Objective::RandomFeatures {
            frequencies: (0..*features).map(|_| (0..dims).map(|_| StandardNormal.sample(rng)).collect()).collect(),
            phases: (0..*features).map(|_| rng.random_range(0.0..std::f64::consts::TAU)).collect(),
            amplitudes: (0..*features).map(|_| StandardNormal.sample(rng)).collect(),
            lengthscale: *lengthscale,
        },
        FamilyKind::Template => Objective::Template {
            center: (0..dims).map(|_| rng.random_range(0.15..0.85)).collect(),
            rotation: random_rotation(dims, rng),
            input_scale: rng.random_range(0.8..1.25),
            amplitude: rng.random_range(0.8..1.2),
            bias: rng.random_range(-0.1..0.1),
        },
    }
}

/// Generates a synthetic task family whose members differ only in their
/// random parameters. Each task carries its located optimum.
pub fn make_synthetic_family(config: &FamilyConfig, seed: u64) -> Result<TaskFamily> {
    if config.n_train == 0 {
        return Err(Error::InvalidFamily("n_train must be positive".into()));
    }
    if config.dims == 0 {
        return Err(Error::InvalidFamily("dims must be positive".into()));
    }
    if let FamilyKind::RandomFeatures { features, lengthscale } = config.kind {
        if features == 0 || !(lengthscale > 0.0) {
            return Err(Error::InvalidFamily("random features need features > 0 and lengthscale > 0".into()));
        }
    }
    let space = SearchSpace::unit(config.dims);
    let mut index = 0u64;
    let mut make = |prefix: &str, count: usize| -> Vec<BlackBoxTask> {
        (0..count)
            .map(|i| {
                let mut r = rng::stream(seed, tag::FAMILY, index);
                index += 1;
                let objective = sample_objective(&config.kind, config.dims, &mut r);
                BlackBoxTask::new(format!("{prefix}-{i}"), space.clone(), objective).with_located_optimum(seed)
            })
            .collect()
    };
    let train = make("train", config.n_train);
    let val = make("val", config.n_val);
    let test = make("test", config.n_test);
    let family = TaskFamily { space, config: config.clone(), seed, train, val, test };
    family.validate()?;
    Ok(family)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Choice {
    First,
    Second,
}

impl Choice {
    pub fn pick<'a, T>(self, first: &'a T, second: &'a T) -> &'a T {
        match self {
            Choice::First => first,
            Choice::Second => second,
        }
    }
}

/// Anything that can pick between two points: a simulated expert, a
/// label-accuracy-controlled oracle, a replay of recorded answers.
pub trait ChoiceOracle {
    fn choose(&mut self, task: &BlackBoxTask, x1: &[f64], x2: &[f64]) -> Result<Choice>;

    /// True when a person, not a simulation, is answering.
    fn is_human(&self) -> bool {
        false
    }
}

/// Noisy synthetic human: prefers the point with larger `f(x) + eps`,
/// `eps ~ N(0, sigma_pref^2)` drawn independently for each point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulatedExpert {
    pub sigma_pref: f64,
    pub seed: u64,
    #[serde(default)]
    pub calls: u64,
}

impl SimulatedExpert {
    pub fn new(sigma_pref: f64, seed: u64) -> Result<Self> {
        if !(sigma_pref >= 0.0) || !sigma_pref.is_finite() {
            return Err(Error::Config(format!("sigma_pref must be >= 0, got {sigma_pref}")));
        }
        Ok(Self { sigma_pref, seed, calls: 0 })
    }

    /// Builds the expert from the noise variance, as the benchmarks quote it.
    pub fn from_variance(variance: f64, seed: u64) -> Result<Self> {
        Self::new(variance.max(0.0).sqrt(), seed)
    }
}

/// One simulated comparison. Exact ties go to the first point.
pub fn simulated_expert_choice(expert: &mut SimulatedExpert, task: &BlackBoxTask, x1: &[f64], x2: &[f64]) -> Result<Choice> {
    let f1 = task.evaluate(x1)?;
    let f2 = task.evaluate(x2)?;
    let mut r = rng::stream(expert.seed, tag::EXPERT, expert.calls);
    expert.calls += 1;
    let e1: f64 = StandardNormal.sample(&mut r);
    let e2: f64 = StandardNormal.sample(&mut r);
    let h1 = f1 + expert.sigma_pref * e1;
    let h2 = f2 + expert.sigma_pref * e2;
    Ok(if h1 >= h2 { Choice::First } else { Choice::Second })
}

impl ChoiceOracle for SimulatedExpert {
    fn choose(&mut self, task: &BlackBoxTask, x1: &[f64], x2: &[f64]) -> Result<Choice> {
        simulated_expert_choice(self, task, x1, x2)
    }
}

/// Answers correctly (by true `f`) with probability `accuracy`, otherwise
/// returns the wrong side; flips are independent per call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyOracle {
    pub accuracy: f64,
    pub seed: u64,
    #[serde(default)]
    pub calls: u64,
}

impl AccuracyOracle {
    pub fn new(accuracy: f64, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&accuracy) {
            return Err(Error::Config(format!("accuracy must be in [0, 1], got {accuracy}")));
        }
        Ok(Self { accuracy, seed, calls: 0 })
    }
}

impl ChoiceOracle for AccuracyOracle {
    fn choose(&mut self, task: &BlackBoxTask, x1: &[f64], x2: &[f64]) -> Result<Choice> {
        let truth = if task.evaluate(x1)? >= task.evaluate(x2)? { Choice::First } else { Choice::Second };
        let mut r = rng::stream(self.seed, tag::PREF_LABELS, self.calls);
        self.calls += 1;
        let correct = r.random::<f64>() < self.accuracy;
        Ok(match (correct, truth) {
            (true, c) => c,
            (false, Choice::First) => Choice::Second,
            (false, Choice::Second) => Choice::First,
        })
    }
}

/// Simple regret `R_t = f(x*) - max_{i <= t} y_i` after every observation.
pub fn simple_regret(task: &BlackBoxTask, history: &TaskDataset) -> Result<Vec<f64>> {
    let optimum = task
        .known_optimum
        .as_ref()
        .ok_or_else(|| Error::RegretUnavailable(task.id.clone()))?;
    if history.is_empty() {
        return Err(Error::EmptyRequest("regret of an empty history".into()));
    }
    let mut best = f64::NEG_INFINITY;
    Ok(history
        .values
        .iter()
        .map(|y| {
            best = best.max(*y);
            optimum.value - best
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line_task() -> BlackBoxTask {
        BlackBoxTask::new("line", SearchSpace::unit(1), Objective::Linear { weights: vec![1.0], bias: 0.0 })
            .with_optimum_at(vec![1.0])
            .unwrap()
    }

    #[test]
    fn space_rejects_bad_bounds() {
        assert!(SearchSpace::new(vec![0.0], vec![0.0]).is_err());
        assert!(SearchSpace::new(vec![0.0, 1.0], vec![1.0]).is_err());
        assert!(SearchSpace::new(vec![], vec![]).is_err());
        let json = r#"{"lower":[1.0],"upper":[0.0]}"#;
        assert!(serde_json::from_str::<SearchSpace>(json).is_err());
    }

    #[test]
    fn lhs_two_points_one_per_half() {
        for seed in 0..20 {
            let pts = sample_space(&SearchSpace::unit(1), 2, SamplingMethod::LatinHypercube, seed).unwrap();
            let mut xs: Vec<f64> = pts.iter().map(|p| p[0]).collect();
            xs.sort_by(f64::total_cmp);
            assert!(xs[0] >= 0.0 && xs[0] < 0.5);
            assert!(xs[1] >= 0.5 && xs[1] < 1.0);
        }
    }

    #[test]
    fn lhs_bins_all_ones() {
        let n = 100;
        let space = SearchSpace::new(vec![-2.0, 10.0], vec![3.0, 20.0]).unwrap();
        let pts = sample_space(&space, n, SamplingMethod::LatinHypercube, 3).unwrap();
        for j in 0..2 {
            let mut hist = vec![0usize; n];
            for p in &pts {
                let u = (p[j] - space.lower()[j]) / space.width(j);
                hist[((u * n as f64).floor() as usize).min(n - 1)] += 1;
            }
            assert!(hist.iter().all(|&c| c == 1), "dim {j}: {hist:?}");
        }
    }

    #[test]
    fn sampling_is_deterministic_and_nonempty() {
        let s = SearchSpace::unit(3);
        let a = sample_space(&s, 5, SamplingMethod::Uniform, 7).unwrap();
        let b = sample_space(&s, 5, SamplingMethod::Uniform, 7).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|p| s.contains(p)));
        assert!(matches!(sample_space(&s, 0, SamplingMethod::Uniform, 7), Err(Error::EmptyRequest(_))));
    }

    #[test]
    fn evaluate_checks_bounds() {
        let t = line_task();
        assert!(matches!(t.evaluate(&[1.5]), Err(Error::Domain(_))));
        assert!(matches!(t.evaluate(&[0.5, 0.5]), Err(Error::Shape(_))));
        assert_eq!(t.evaluate(&[0.25]).unwrap(), 0.25);
    }

    #[test]
    fn regret_running_max() {
        let t = line_task();
        let h = TaskDataset::from_parts("line", vec![vec![0.2], vec![0.9], vec![0.5]], vec![0.2, 0.9, 0.5]).unwrap();
        let r = simple_regret(&t, &h).unwrap();
        let expect = [0.8, 0.1, 0.1];
        for (a, b) in r.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
        let h = TaskDataset::from_parts("line", vec![vec![0.8]], vec![0.8]).unwrap();
        assert!((simple_regret(&t, &h).unwrap()[0] - 0.2).abs() < 1e-12);
    }

    #[test]
    fn regret_requires_optimum() {
        let t = BlackBoxTask::new("c", SearchSpace::unit(1), Objective::Constant { value: 1.0 });
        let h = TaskDataset::from_parts("c", vec![vec![0.5]], vec![1.0]).unwrap();
        assert!(matches!(simple_regret(&t, &h), Err(Error::RegretUnavailable(_))));
    }

    #[test]
    fn noiseless_expert_picks_argmax_and_ties_go_first() {
        let t = line_task();
        let mut e = SimulatedExpert::new(0.0, 1).unwrap();
        assert_eq!(simulated_expert_choice(&mut e, &t, &[1.0], &[0.0]).unwrap(), Choice::First);
        assert_eq!(simulated_expert_choice(&mut e, &t, &[0.1], &[0.3]).unwrap(), Choice::Second);
        assert_eq!(simulated_expert_choice(&mut e, &t, &[0.3], &[0.3]).unwrap(), Choice::First);
        assert!(SimulatedExpert::new(-1.0, 0).is_err());
    }

    #[test]
    fn family_rejects_empty_train() {
        let cfg = FamilyConfig { n_train: 0, ..FamilyConfig::default() };
        assert!(matches!(make_synthetic_family(&cfg, 1), Err(Error::InvalidFamily(_))));
    }

    #[test]
    fn accuracy_oracle_extremes() {
        let t = line_task();
        let mut perfect = AccuracyOracle::new(1.0, 0).unwrap();
        let mut wrong = AccuracyOracle::new(0.0, 0).unwrap();
        for _ in 0..20 {
            assert_eq!(perfect.choose(&t, &[0.9], &[0.1]).unwrap(), Choice::First);
            assert_eq!(wrong.choose(&t, &[0.9], &[0.1]).unwrap(), Choice::Second);
        }
    }
}
