//! Feature attributions (SHAP, LIME) and 2-D posterior slices for the
//! decision-support view.

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::acquisition::{Acquisition, CandidatePair, PointSnapshot};
use crate::error::{Error, Result};
use crate::linalg::{weighted_least_squares, Cholesky};
use crate::rng::{self, tag};
use crate::task::{sample_space, Point, SamplingMethod, SearchSpace, TaskDataset};

/// A batched scalar function of points.
pub type BatchFn<'a> = dyn Fn(&[Point]) -> Result<Vec<f64>> + 'a;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    Acquisition,
    SurrogateMean,
    SurrogateUncertainty,
}

impl TargetKind {
    pub const ALL: [TargetKind; 3] = [TargetKind::Acquisition, TargetKind::SurrogateMean, TargetKind::SurrogateUncertainty];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Shap,
    Lime,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attribution {
    pub method: Method,
    pub target: Option<TargetKind>,
    /// One value per input feature.
    pub values: Vec<f64>,
    /// Background expectation (SHAP) or local intercept (LIME).
    pub baseline: f64,
    /// Target evaluated at the explained point.
    pub value_at_x: f64,
    /// Weighted R^2 of the local fit (LIME only).
    pub r2: Option<f64>,
}

const EXACT_MAX_DIMS: usize = 12;

fn mix(x: &[f64], bg: &[f64], mask: u64) -> Point {
    (0..x.len()).map(|j| if mask >> j & 1 == 1 { x[j] } else { bg[j] }).collect()
}

/// Coalition value `v(S)`: mean over the background of `f` with the features
/// in `S` taken from `x`.
fn coalition_values(f: &BatchFn<'_>, x: &[f64], background: &[Point], masks: &[u64]) -> Result<Vec<f64>> {
    let mut pts = Vec::with_capacity(masks.len() * background.len());
    for &m in masks {
        for b in background {
            pts.push(mix(x, b, m));
        }
    }
    let ys = f(&pts)?;
    Ok(ys.chunks(background.len()).map(|c| c.iter().sum::<f64>() / c.len() as f64).collect())
}

fn ln_factorial(n: usize) -> f64 {
    (1..=n).map(|k| (k as f64).ln()).sum()
}

/// Shapley values of `f` at `x` against `background`. Exact enumeration for
/// up to 12 features, kernel-weighted coalition sampling above.
pub fn shap_attributions(f: &BatchFn<'_>, x: &[f64], background: &[Point], n_coalitions: usize, seed: u64) -> Result<Attribution> {
    if background.is_empty() {
        return Err(Error::BackgroundRequired);
    }
    let d = x.len();
    if d == 0 || background.iter().any(|b| b.len() != d) {
        return Err(Error::Shape("background points must match the explained point".into()));
    }
    let full = (1u64 << d) - 1;
    let (values, base, fx) = if d <= EXACT_MAX_DIMS {
        let masks: Vec<u64> = (0..=full).collect();
        let v = coalition_values(f, x, background, &masks)?;
        let mut phi = vec![0.0; d];
        for s in 0..=full {
            let size = s.count_ones() as usize;
            if size == d {
                continue;
            }
            let w = (ln_factorial(size) + ln_factorial(d - size - 1) - ln_factorial(d)).exp();
            for (j, p) in phi.iter_mut().enumerate() {
                if s >> j & 1 == 0 {
                    *p += w * (v[(s | 1 << j) as usize] - v[s as usize]);
                }
            }
        }
        (phi, v[0], v[full as usize])
    } else {
        kernel_shap(f, x, background, n_coalitions.max(2 * d + 2), seed)?
    };
    Ok(Attribution { method: Method::Shap, target: None, values, baseline: base, value_at_x: fx, r2: None })
}

fn kernel_shap(f: &BatchFn<'_>, x: &[f64], background: &[Point], n: usize, seed: u64) -> Result<(Vec<f64>, f64, f64)> {
    let d = x.len();
    let mut r = rng::stream(seed, tag::EXPLAIN, 0);
    // coalition sizes drawn from the Shapley kernel's marginal over |S|
    let size_w: Vec<f64> = (1..d).map(|s| (d - 1) as f64 / (s * (d - s)) as f64).collect();
    let total: f64 = size_w.iter().sum();
    let mut idx: Vec<usize> = (0..d).collect();
    let mut masks = vec![0u64, (1u64 << d) - 1];
    for _ in 0..n {
        let mut u = r.random::<f64>() * total;
        let mut size = d - 1;
        for (i, w) in size_w.iter().enumerate() {
            if u < *w {
                size = i + 1;
                break;
            }
            u -= w;
        }
        idx.shuffle(&mut r);
        masks.push(idx[..size].iter().fold(0u64, |m, j| m | 1 << j));
    }
    let v = coalition_values(f, x, background, &masks)?;
    let (v0, v1) = (v[0], v[1]);
    let delta = v1 - v0;
    // eliminate the last feature through the efficiency constraint
    let p = d - 1;
    let mut a = vec![0.0; p * p];
    let mut rhs = vec![0.0; p];
    for (m, val) in masks[2..].iter().zip(&v[2..]) {
        let zd = f64::from((m >> (d - 1) & 1) as u8);
        let row: Vec<f64> = (0..p).map(|j| f64::from((m >> j & 1) as u8) - zd).collect();
        let y = val - v0 - zd * delta;
        for i in 0..p {
            rhs[i] += row[i] * y;
            for j in 0..p {
                a[i * p + j] += row[i] * row[j];
            }
        }
    }
    let chol = Cholesky::with_jitter(&a, p, 1e-10, 1e-4)
        .ok_or_else(|| Error::Shape("too few coalitions for sampled SHAP".into()))?
        .0;
    let mut phi = chol.solve(&rhs);
    let last = delta - phi.iter().sum::<f64>();
    phi.push(last);
    Ok((phi, v0, v1))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimeConfig {
    pub n_perturb: usize,
    /// Kernel width in unit-scaled coordinates.
    pub kernel_width: f64,
    /// Number of features kept in the local model.
    pub sparsity: usize,
    /// Perturbation standard deviation as a fraction of each range.
    pub noise: f64,
}

impl LimeConfig {
    pub fn for_dims(d: usize) -> Self {
        Self { n_perturb: (10 * d).max(500), kernel_width: 0.75 * (d as f64).sqrt(), sparsity: d.min(8), noise: 0.1 }
    }
}

fn weighted_r2(xs: &[Vec<f64>], ys: &[f64], ws: &[f64], b: f64, coef: &[f64]) -> f64 {
    let wsum: f64 = ws.iter().sum();
    let ybar = ys.iter().zip(ws).map(|(y, w)| y * w).sum::<f64>() / wsum;
    let (mut ss_res, mut ss_tot) = (0.0, 0.0);
    for ((x, y), w) in xs.iter().zip(ys).zip(ws) {
        let pred = b + x.iter().zip(coef).map(|(a, c)| a * c).sum::<f64>();
        ss_res += w * (y - pred).powi(2);
        ss_tot += w * (y - ybar).powi(2);
    }
    if ss_tot <= 1e-300 {
        1.0
    } else {
        1.0 - ss_res / ss_tot
    }
}

fn wls_with_jitter(xs: &[Vec<f64>], ys: &[f64], ws: &[f64]) -> Result<(f64, Vec<f64>)> {
    [0.0, 1e-10, 1e-6]
        .iter()
        .find_map(|ridge| weighted_least_squares(xs, ys, ws, *ridge))
        .ok_or_else(|| Error::LimeFit("weighted design matrix is singular".into()))
}

/// Local linear explanation of `f` around `x`: Gaussian perturbations,
/// exponential proximity kernel, weighted least squares on the `sparsity`
/// most important features.
pub fn lime_attributions(f: &BatchFn<'_>, x: &[f64], space: &SearchSpace, cfg: &LimeConfig, seed: u64) -> Result<Attribution> {
    let d = x.len();
    space.check(x)?;
    if cfg.n_perturb < 10 * d {
        return Err(Error::Config(format!("LIME needs at least {} perturbations, got {}", 10 * d, cfg.n_perturb)));
    }
    if !(cfg.kernel_width > 0.0) || cfg.sparsity == 0 {
        return Err(Error::Config("LIME kernel width and sparsity must be positive".into()));
    }
    let mut r = rng::stream(seed, tag::EXPLAIN, 1);
    let mut pts = Vec::with_capacity(cfg.n_perturb + 1);
    pts.push(x.to_vec());
    for _ in 0..cfg.n_perturb {
        let mut p: Point = (0..d)
            .map(|j| {
                let n: f64 = StandardNormal.sample(&mut r);
                x[j] + cfg.noise * space.width(j) * n
            })
            .collect();
        space.clamp(&mut p);
        pts.push(p);
    }
    let ys = f(&pts)?;
    let xu = space.to_unit(x);
    let ws: Vec<f64> = pts
        .iter()
        .map(|p| {
            let dist2: f64 = space.to_unit(p).iter().zip(&xu).map(|(a, b)| (a - b).powi(2)).sum();
            (-dist2 / (cfg.kernel_width * cfg.kernel_width)).exp()
        })
        .collect();
    let centered: Vec<Vec<f64>> = pts.iter().map(|p| p.iter().zip(x).map(|(a, b)| a - b).collect()).collect();
    let (_, coef) = wls_with_jitter(&centered, &ys, &ws)?;

    let k = cfg.sparsity.min(d);
    let mut keep: Vec<usize> = (0..d).collect();
    keep.sort_by(|a, b| (coef[*b].abs() * space.width(*b)).total_cmp(&(coef[*a].abs() * space.width(*a))).then(a.cmp(b)));
    keep.truncate(k);
    keep.sort_unstable();
    let sub: Vec<Vec<f64>> = centered.iter().map(|row| keep.iter().map(|j| row[*j]).collect()).collect();
    let (b, c) = wls_with_jitter(&sub, &ys, &ws)?;
    let mut values = vec![0.0; d];
    for (j, v) in keep.iter().zip(&c) {
        values[*j] = *v;
    }
    let r2 = weighted_r2(&sub, &ys, &ws, b, &c);
    Ok(Attribution { method: Method::Lime, target: None, values, baseline: b, value_at_x: ys[0], r2: Some(r2) })
}

/// SHAP background: the context inputs, or Latin-hypercube points when the
/// context has fewer than 4 points.
pub fn default_background(context: &TaskDataset, space: &SearchSpace, seed: u64) -> Result<Vec<Point>> {
    if context.len() >= 4 {
        Ok(context.points.clone())
    } else {
        sample_space(space, 32, SamplingMethod::LatinHypercube, rng::derive(seed, tag::EXPLAIN, 2))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplainConfig {
    pub n_coalitions: usize,
    pub lime: Option<LimeConfig>,
}

impl Default for ExplainConfig {
    fn default() -> Self {
        Self { n_coalitions: 256, lime: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateExplanation {
    pub label: String,
    pub point: Point,
    pub snapshot: PointSnapshot,
    pub attributions: Vec<Attribution>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplanationBundle {
    pub candidates: Vec<CandidateExplanation>,
}

impl ExplanationBundle {
    pub fn attributions(&self) -> impl Iterator<Item = (&CandidateExplanation, &Attribution)> {
        self.candidates.iter().flat_map(|c| c.attributions.iter().map(move |a| (c, a)))
    }

    /// The two features with the largest mean |SHAP| on the surrogate mean.
    pub fn most_influential_pair(&self) -> Option<(usize, usize)> {
        let mut totals: Vec<f64> = Vec::new();
        for (_, a) in self.attributions() {
            if a.method == Method::Shap && a.target == Some(TargetKind::SurrogateMean) {
                totals.resize(a.values.len(), 0.0);
                totals.iter_mut().zip(&a.values).for_each(|(t, v)| *t += v.abs());
            }
        }
        if totals.len() < 2 {
            return None;
        }
        let mut idx: Vec<usize> = (0..totals.len()).collect();
        idx.sort_by(|a, b| totals[*b].total_cmp(&totals[*a]).then(a.cmp(b)));
        let (i, j) = (idx[0].min(idx[1]), idx[0].max(idx[1]));
        Some((i, j))
    }

    /// One CSV row per attributed feature.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["candidate", "method", "target", "feature", "value", "baseline", "value_at_x"])
            .map_err(csv_err)?;
        for (c, a) in self.attributions() {
            for (j, v) in a.values.iter().enumerate() {
                w.serialize((
                    &c.label,
                    a.method,
                    a.target,
                    j,
                    v,
                    a.baseline,
                    a.value_at_x,
                ))
                .map_err(csv_err)?;
            }
        }
        String::from_utf8(w.into_inner().map_err(|e| Error::Io(e.into_error()))?).map_err(|e| Error::BadRequest(e.to_string()))
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// The scalar a target kind reads off the acquisition at a batch of points.
pub fn target_fn<'a>(acq: &'a Acquisition<'a>, kind: TargetKind, combined: bool) -> Box<BatchFn<'a>> {
    match kind {
        TargetKind::SurrogateMean => Box::new(move |xs: &[Point]| Ok(acq.surrogate(xs)?.mean)),
        TargetKind::SurrogateUncertainty => {
            Box::new(move |xs: &[Point]| Ok(acq.surrogate(xs)?.variance.iter().map(|v| v.sqrt()).collect()))
        }
        TargetKind::Acquisition if combined => Box::new(move |xs: &[Point]| acq.alpha_s_pi(xs)),
        TargetKind::Acquisition => Box::new(move |xs: &[Point]| acq.alpha_s(xs)),
    }
}

/// SHAP and LIME for both candidates against acquisition value, surrogate
/// mean and surrogate uncertainty: 12 attributions. `x1` is explained with
/// the surrogate-only acquisition and `x2` with the combined one.
pub fn explain_candidates(
    acq: &Acquisition<'_>,
    pair: &CandidatePair,
    space: &SearchSpace,
    background: &[Point],
    cfg: &ExplainConfig,
    seed: u64,
) -> Result<ExplanationBundle> {
    let lime_cfg = cfg.lime.clone().unwrap_or_else(|| LimeConfig::for_dims(space.dims()));
    let mut candidates = Vec::with_capacity(2);
    for (ci, (label, x, snap)) in [("x1", &pair.x1, &pair.snapshot1), ("x2", &pair.x2, &pair.snapshot2)].into_iter().enumerate() {
        let mut attributions = Vec::with_capacity(6);
        for (ti, kind) in TargetKind::ALL.into_iter().enumerate() {
            let f = target_fn(acq, kind, ci == 1);
            let s = rng::derive(seed, tag::EXPLAIN, (ci * 8 + ti) as u64);
            for method in [Method::Shap, Method::Lime] {
                let mut a = match method {
                    Method::Shap => shap_attributions(&*f, x, background, cfg.n_coalitions, s)?,
                    Method::Lime => lime_attributions(&*f, x, space, &lime_cfg, s)?,
                };
                a.target = Some(kind);
                attributions.push(a);
            }
        }
        candidates.push(CandidateExplanation { label: label.to_string(), point: x.clone(), snapshot: snap.clone(), attributions });
    }
    Ok(ExplanationBundle { candidates })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMarker {
    /// 1-based evaluation order.
    pub order: usize,
    pub u: f64,
    pub v: f64,
}

/// Mean, uncertainty and acquisition on a `resolution x resolution` grid
/// over two dimensions. Layers are row-major with the first slice dimension
/// varying slowest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapSlice {
    pub dim_pair: (usize, usize),
    pub fixed: Point,
    pub resolution: usize,
    pub axis_u: Vec<f64>,
    pub axis_v: Vec<f64>,
    pub mean: Vec<f64>,
    pub uncertainty: Vec<f64>,
    pub acquisition: Vec<f64>,
    pub markers: Vec<SampleMarker>,
}

impl HeatmapSlice {
    /// The grid point behind cell `(a, b)`.
    pub fn cell_point(&self, a: usize, b: usize) -> Point {
        let mut p = self.fixed.clone();
        p[self.dim_pair.0] = self.axis_u[a];
        p[self.dim_pair.1] = self.axis_v[b];
        p
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["u", "v", "mean", "uncertainty", "acquisition"]).map_err(csv_err)?;
        for a in 0..self.resolution {
            for b in 0..self.resolution {
                let i = a * self.resolution + b;
                w.serialize((self.axis_u[a], self.axis_v[b], self.mean[i], self.uncertainty[i], self.acquisition[i]))
                    .map_err(csv_err)?;
            }
        }
        String::from_utf8(w.into_inner().map_err(|e| Error::Io(e.into_error()))?).map_err(|e| Error::BadRequest(e.to_string()))
    }
}

/// Slices the posterior over `dim_pair`, holding the other dimensions at
/// `fixed` (default: the incumbent, else the centre of the space).
pub fn slice_heatmap(
    acq: &Acquisition<'_>,
    space: &SearchSpace,
    dim_pair: (usize, usize),
    fixed: Option<Point>,
    resolution: usize,
) -> Result<HeatmapSlice> {
    let d = space.dims();
    let (i, j) = dim_pair;
    if i == j || i >= d || j >= d {
        return Err(Error::Shape(format!("slice dimensions ({i}, {j}) must be distinct and below {d}")));
    }
    if resolution < 2 {
        return Err(Error::Shape(format!("heatmap resolution must be at least 2, got {resolution}")));
    }
    let fixed = match fixed {
        Some(f) => {
            space.check(&f)?;
            f
        }
        None => acq
            .context
            .incumbent()
            .cloned()
            .unwrap_or_else(|| space.from_unit(&vec![0.5; d])),
    };
    let axis = |k: usize| -> Vec<f64> {
        (0..resolution)
            .map(|a| space.lower()[k] + space.width(k) * a as f64 / (resolution - 1) as f64)
            .collect()
    };
    let mut slice = HeatmapSlice {
        dim_pair,
        fixed,
        resolution,
        axis_u: axis(i),
        axis_v: axis(j),
        mean: vec![],
        uncertainty: vec![],
        acquisition: vec![],
        markers: vec![],
    };
    let pts: Vec<Point> = (0..resolution * resolution).map(|c| slice.cell_point(c / resolution, c % resolution)).collect();
    let snaps = acq.snapshots(&pts)?;
    slice.mean = snaps.iter().map(|s| s.mu_s).collect();
    slice.uncertainty = snaps.iter().map(|s| s.var_s.sqrt()).collect();
    slice.acquisition = snaps.iter().map(|s| s.alpha_s_pi).collect();
    slice.markers = acq
        .context
        .points
        .iter()
        .enumerate()
        .map(|(k, p)| SampleMarker { order: k + 1, u: p[i], v: p[j] })
        .collect();
    if [&slice.mean, &slice.uncertainty, &slice.acquisition].iter().any(|l| l.iter().any(|v| !v.is_finite())) {
        return Err(Error::InvalidPosterior("non-finite heatmap value".into()));
    }
    Ok(slice)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn batch(f: impl Fn(&[f64]) -> f64) -> impl Fn(&[Point]) -> Result<Vec<f64>> {
        move |xs: &[Point]| Ok(xs.iter().map(|x| f(x)).collect())
    }

    #[test]
    fn shap_on_additive_target() {
        let f = batch(|x| 3.0 * x[0] + 5.0 * x[1]);
        let a = shap_attributions(&f, &[0.4, 0.7], &[vec![0.0, 0.0]], 0, 0).unwrap();
        assert!((a.values[0] - 1.2).abs() < 1e-12 && (a.values[1] - 3.5).abs() < 1e-12);
    }

    #[test]
    fn shap_constant_and_empty_background() {
        let f = batch(|_| 4.2);
        let a = shap_attributions(&f, &[0.4, 0.7, 0.1], &[vec![0.0, 0.5, 1.0], vec![1.0, 0.2, 0.3]], 0, 0).unwrap();
        assert!(a.values.iter().all(|v| v.abs() < 1e-12));
        assert!(matches!(shap_attributions(&f, &[0.4], &[], 0, 0), Err(Error::BackgroundRequired)));
    }

    #[test]
    fn lime_on_constant_target() {
        let f = batch(|_| -1.5);
        let space = SearchSpace::unit(2);
        let a = lime_attributions(&f, &[0.5, 0.5], &space, &LimeConfig::for_dims(2), 1).unwrap();
        assert!(a.values.iter().all(|c| c.abs() <= 1e-6), "{:?}", a.values);
    }

    #[test]
    fn lime_rejects_too_few_perturbations() {
        let f = batch(|x| x[0]);
        let space = SearchSpace::unit(3);
        let cfg = LimeConfig { n_perturb: 29, ..LimeConfig::for_dims(3) };
        assert!(lime_attributions(&f, &[0.5; 3], &space, &cfg, 1).is_err());
    }
}
