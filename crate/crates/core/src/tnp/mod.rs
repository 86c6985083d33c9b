//! Transformer neural process surrogate (autoregressive variant).
//!
//! Points are encoded as tokens `[x, y, 1]` (observed) or `[x, 0, 0]`
//! (queried). Context tokens see every context token. Observed target tokens
//! see the context and the observed targets up to themselves; query token `i`
//! sees the context, observed targets `j < i`, and itself. A Gaussian head on
//! each query token emits a mean and a softplus-positive variance.
//!
//! Adapting to a new task is a forward pass with the new context: no weights
//! change at prediction time.

mod checkpoint;
mod network;
mod train;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::task::{sample_space, BlackBoxTask, Point, SamplingMethod, SearchSpace, TaskDataset};

pub use checkpoint::{load_model, save_model, CHECKPOINT_VERSION};
pub use network::{Mat, Network, Outputs, Shape, TensorSpec};
pub use train::{meta_train, TrainingHistory};

#[doc(hidden)]
pub use train::{sequence_loss_and_grad, training_sequence};

/// Architecture and optimizer settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TnpConfig {
    pub model_dim: usize,
    pub embed_layers: usize,
    pub ff_dim: usize,
    pub heads: usize,
    pub transformer_layers: usize,
    pub dropout: f64,
    /// Peak Adam step size; annealed to `min_learning_rate` on a cosine.
    pub learning_rate: f64,
    pub min_learning_rate: f64,
    /// Points per training sequence (`e_n`).
    pub max_sequence: usize,
    pub train_steps: usize,
    /// Sequences per optimizer step.
    pub batch_tasks: usize,
    /// Global gradient-norm clip; `0` disables clipping.
    pub grad_clip: f64,
    /// Validation NLL is recorded every this many steps.
    pub eval_every: usize,
}

impl Default for TnpConfig {
    /// The published TNP-A hyperparameters with a desk-scale step budget.
    fn default() -> Self {
        Self {
            model_dim: 64,
            embed_layers: 4,
            ff_dim: 128,
            heads: 8,
            transformer_layers: 6,
            dropout: 0.0,
            learning_rate: 5e-5,
            min_learning_rate: 0.0,
            max_sequence: 64,
            train_steps: 20_000,
            batch_tasks: 16,
            grad_clip: 1.0,
            eval_every: 500,
        }
    }
}

impl TnpConfig {
    /// A narrower, shallower network that trains in minutes on one CPU core.
    pub fn desk() -> Self {
        Self {
            model_dim: 32,
            embed_layers: 2,
            ff_dim: 64,
            heads: 4,
            transformer_layers: 2,
            dropout: 0.0,
            learning_rate: 1e-3,
            min_learning_rate: 2e-5,
            max_sequence: 32,
            train_steps: 20_000,
            batch_tasks: 8,
            grad_clip: 1.0,
            eval_every: 250,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.model_dim == 0 || self.heads == 0 || self.model_dim % self.heads != 0 {
            return Err(Error::Config(format!(
                "model_dim {} must be a positive multiple of heads {}",
                self.model_dim, self.heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} not in [0, 1)", self.dropout)));
        }
        if self.ff_dim == 0 || self.embed_layers == 0 || self.batch_tasks == 0 || self.eval_every == 0 {
            return Err(Error::Config("ff_dim, embed_layers, batch_tasks and eval_every must be positive".into()));
        }
        if !(self.learning_rate > 0.0) || self.min_learning_rate < 0.0 {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        Ok(())
    }

    fn shape(&self, input_dims: usize) -> Shape {
        Shape {
            input_dim: input_dims + 2,
            model_dim: self.model_dim,
            embed_layers: self.embed_layers,
            ff_dim: self.ff_dim,
            heads: self.heads,
            layers: self.transformer_layers,
        }
    }
}

/// Input min-max scaling and output z-scoring learned from the training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub y_mean: f64,
    pub y_std: f64,
}

impl Normalization {
    fn x(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(v, (l, u))| (v - l) / (u - l))
            .collect()
    }

    fn y(&self, y: f64) -> f64 {
        (y - self.y_mean) / self.y_std
    }

    pub fn space(&self) -> Result<SearchSpace> {
        SearchSpace::new(self.lower.clone(), self.upper.clone())
    }
}

/// Per-target predictive mean and variance in objective units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Posterior {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

impl Posterior {
    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    pub fn std(&self, i: usize) -> f64 {
        self.variance[i].sqrt()
    }
}

/// Negative log density of `y` under `N(mean, var)`.
pub fn gaussian_nll(y: f64, mean: f64, var: f64) -> f64 {
    0.5 * (2.0 * std::f64::consts::PI * var).ln() + (y - mean).powi(2) / (2.0 * var)
}

/// A meta-trained surrogate: weights plus everything needed to use them.
#[derive(Debug, Clone)]
pub struct TnpModel {
    pub config: TnpConfig,
    pub input_dims: usize,
    pub normalization: Normalization,
    pub history: TrainingHistory,
    params: Vec<f64>,
    network: Network,
}

const PREDICT_CHUNK: usize = 256;

/// Token rows and attention key lists for one forward pass.
pub struct Sequence {
    pub tokens: Mat,
    pub keys: Vec<Vec<u32>>,
    pub out_rows: Vec<usize>,
}

impl Sequence {
    fn token(x: &[f64], y: Option<f64>) -> Vec<f64> {
        let mut t = x.to_vec();
        match y {
            Some(y) => t.extend([y, 1.0]),
            None => t.extend([0.0, 0.0]),
        }
        t
    }

    /// `[context][queries]`: each query sees the context and itself.
    pub fn marginal(context: &[(Vec<f64>, f64)], queries: &[Vec<f64>]) -> Self {
        let c = context.len();
        let mut rows: Vec<Vec<f64>> = context.iter().map(|(x, y)| Self::token(x, Some(*y))).collect();
        rows.extend(queries.iter().map(|x| Self::token(x, None)));
        let ctx: Vec<u32> = (0..c as u32).collect();
        let mut keys: Vec<Vec<u32>> = vec![ctx.clone(); c];
        for j in 0..queries.len() {
            let mut k = ctx.clone();
            k.push((c + j) as u32);
            keys.push(k);
        }
        Self::assemble(rows, keys, (c..c + queries.len()).collect())
    }

    /// `[context][observed targets][queries]` for teacher-forced
    /// autoregressive likelihoods.
    pub fn autoregressive(context: &[(Vec<f64>, f64)], targets: &[(Vec<f64>, f64)]) -> Self {
        let c = context.len();
        let t = targets.len();
        let mut rows: Vec<Vec<f64>> = context.iter().map(|(x, y)| Self::token(x, Some(*y))).collect();
        rows.extend(targets.iter().map(|(x, y)| Self::token(x, Some(*y))));
        rows.extend(targets.iter().map(|(x, _)| Self::token(x, None)));
        let ctx: Vec<u32> = (0..c as u32).collect();
        let mut keys: Vec<Vec<u32>> = vec![ctx.clone(); c];
        for j in 0..t {
            let mut k = ctx.clone();
            k.extend((c..=c + j).map(|i| i as u32));
            keys.push(k);
        }
        for j in 0..t {
            let mut k = ctx.clone();
            k.extend((c..c + j).map(|i| i as u32));
            k.push((c + t + j) as u32);
            keys.push(k);
        }
        Self::assemble(rows, keys, (c + t..c + 2 * t).collect())
    }

    fn assemble(rows: Vec<Vec<f64>>, keys: Vec<Vec<u32>>, out_rows: Vec<usize>) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        let tokens = Mat { rows: rows.len(), cols, data: rows.into_iter().flatten().collect() };
        Self { tokens, keys, out_rows }
    }
}

impl TnpModel {
    pub(crate) fn from_parts(
        config: TnpConfig,
        input_dims: usize,
        normalization: Normalization,
        history: TrainingHistory,
        params: Vec<f64>,
    ) -> Result<Self> {
        config.validate()?;
        let network = Network::new(config.shape(input_dims));
        if params.len() != network.n_params() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameters, found {}",
                network.n_params(),
                params.len()
            )));
        }
        Ok(Self { config, input_dims, normalization, history, params, network })
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    fn check_dims(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dims {
            return Err(Error::Shape(format!(
                "model expects {}-dimensional inputs, got {}",
                self.input_dims,
                x.len()
            )));
        }
        Ok(())
    }

    /// Context in normalized units, sorted into a canonical order so that the
    /// prediction is exactly invariant to the order observations arrive in.
    fn canonical_context(&self, context: &TaskDataset) -> Result<Vec<(Vec<f64>, f64)>> {
        for x in &context.points {
            self.check_dims(x)?;
        }
        let mut ctx: Vec<(Vec<f64>, f64)> = context
            .points
            .iter()
            .zip(&context.values)
            .map(|(x, y)| (self.normalization.x(x), self.normalization.y(*y)))
            .collect();
        ctx.sort_by(|a, b| {
            a.0.iter()
                .zip(&b.0)
                .map(|(p, q)| p.total_cmp(q))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.1.total_cmp(&b.1))
        });
        Ok(ctx)
    }

    /// Predictive distribution at `targets` given the observed `context`
    /// (which may be empty).
    pub fn predict(&self, context: &TaskDataset, targets: &[Point]) -> Result<Posterior> {
        if targets.is_empty() {
            return Err(Error::EmptyRequest("predict with no targets".into()));
        }
        for x in targets {
            self.check_dims(x)?;
        }
        let ctx = self.canonical_context(context)?;
        let s = self.normalization.y_std;
        let mut post = Posterior { mean: Vec::with_capacity(targets.len()), variance: Vec::with_capacity(targets.len()) };
        for chunk in targets.chunks(PREDICT_CHUNK) {
            let queries: Vec<Vec<f64>> = chunk.iter().map(|x| self.normalization.x(x)).collect();
            let seq = Sequence::marginal(&ctx, &queries);
            let (out, _) = self.network.forward(&self.params, &seq.tokens, &seq.keys, &seq.out_rows, None);
            post.mean.extend(out.mean.iter().map(|m| self.normalization.y_mean + s * m));
            post.variance.extend(out.var.iter().map(|v| s * s * v));
        }
        Ok(post)
    }

    /// Mean negative log-likelihood of `targets` (objective units), predicted
    /// autoregressively: target `i` is conditioned on the context and the
    /// true values of targets `0..i`.
    pub fn nll(&self, context: &TaskDataset, targets: &TaskDataset) -> Result<f64> {
        if targets.is_empty() {
            return Err(Error::EmptyRequest("nll with no targets".into()));
        }
        for x in &targets.points {
            self.check_dims(x)?;
        }
        let ctx = self.canonical_context(context)?;
        let tgt: Vec<(Vec<f64>, f64)> = targets
            .points
            .iter()
            .zip(&targets.values)
            .map(|(x, y)| (self.normalization.x(x), self.normalization.y(*y)))
            .collect();
        let seq = Sequence::autoregressive(&ctx, &tgt);
        let (out, _) = self.network.forward(&self.params, &seq.tokens, &seq.keys, &seq.out_rows, None);
        let s = self.normalization.y_std;
        let total: f64 = targets
            .values
            .iter()
            .zip(out.mean.iter().zip(&out.var))
            .map(|(y, (m, v))| gaussian_nll(*y, self.normalization.y_mean + s * m, s * s * v))
            .sum();
        Ok(total / targets.len() as f64)
    }

    /// Empirical coverage of central 95% predictive intervals. Every task
    /// contributes `draws` independent splits of `context` observed and
    /// `targets` held-out uniform points.
    pub fn interval_coverage(&self, tasks: &[BlackBoxTask], context: usize, targets: usize, draws: usize, seed: u64) -> Result<Coverage> {
        if tasks.is_empty() || targets == 0 || draws == 0 {
            return Err(Error::EmptyRequest("coverage needs tasks, targets and draws".into()));
        }
        let mut cov = Coverage::default();
        for (i, task) in tasks.iter().enumerate() {
            for d in 0..draws {
                let key = rng::derive(seed, rng::tag::COVERAGE, (i * draws + d) as u64);
                let pts = sample_space(&task.space, context + targets, SamplingMethod::Uniform, key)?;
                let ys = pts.iter().map(|x| task.evaluate(x)).collect::<Result<Vec<_>>>()?;
                let ctx = TaskDataset::from_parts(&task.id, pts[..context].to_vec(), ys[..context].to_vec())?;
                let post = self.predict(&ctx, &pts[context..])?;
                for ((y, m), v) in ys[context..].iter().zip(&post.mean).zip(&post.variance) {
                    cov.total += 1;
                    if (y - m).abs() <= Z95 * v.sqrt() {
                        cov.hits += 1;
                    }
                }
            }
        }
        Ok(cov)
    }
}

const Z95: f64 = 1.959_963_984_540_054;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Coverage {
    pub hits: usize,
    pub total: usize,
}

impl Coverage {
    pub fn rate(&self) -> f64 {
        self.hits as f64 / self.total.max(1) as f64
    }
}
