use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::network::Network;
use super::{Normalization, Sequence, TnpConfig, TnpModel};
use crate::error::{Error, Result};
use crate::rng::{self, tag, Rng};
use crate::task::{BlackBoxTask, TaskFamily};

/// Loss curve recorded during meta-training (standardized units).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingHistory {
    /// Mean training NLL per optimizer step.
    pub losses: Vec<f64>,
    /// `(step, validation NLL)`; the first entry is at initialization.
    pub val_nll: Vec<(usize, f64)>,
}

impl TrainingHistory {
    pub fn initial_val(&self) -> Option<f64> {
        self.val_nll.first().map(|v| v.1)
    }

    pub fn final_val(&self) -> Option<f64> {
        self.val_nll.last().map(|v| v.1)
    }
}

type Pairs = Vec<(Vec<f64>, f64)>;

/// Samples `len` uniform points on `task`, then splits them into a context of
/// uniformly drawn size `m in [0, len - 1]` and the remaining targets.
pub fn training_sequence(task: &BlackBoxTask, norm: &Normalization, len: usize, rng: &mut Rng) -> (Pairs, Pairs) {
    let d = task.dims();
    let mut pts: Pairs = (0..len)
        .map(|_| {
            let u: Vec<f64> = (0..d).map(|_| rng.random::<f64>()).collect();
            let x = task.space.from_unit(&u);
            let y = task.evaluate(&x).expect("point drawn inside the space");
            (norm.x(&x), norm.y(y))
        })
        .collect();
    let m = rng.random_range(0..len);
    let targets = pts.split_off(m);
    (pts, targets)
}

/// Mean Gaussian NLL of `targets` and its gradient, accumulated into `grads`
/// with weight `scale`.
pub fn sequence_loss_and_grad(
    net: &Network,
    params: &[f64],
    context: &[(Vec<f64>, f64)],
    targets: &[(Vec<f64>, f64)],
    grads: &mut [f64],
    scale: f64,
    dropout: Option<(f64, &mut Rng)>,
) -> f64 {
    let seq = Sequence::autoregressive(context, targets);
    let (out, cache) = net.forward(params, &seq.tokens, &seq.keys, &seq.out_rows, dropout);
    let n = targets.len() as f64;
    let mut loss = 0.0;
    let mut dmean = Vec::with_capacity(targets.len());
    let mut dvar = Vec::with_capacity(targets.len());
    for ((_, y), (m, v)) in targets.iter().zip(out.mean.iter().zip(&out.var)) {
        let r = y - m;
        loss += super::gaussian_nll(*y, *m, *v);
        dmean.push(-r / v * scale / n);
        dvar.push((0.5 / v - r * r / (2.0 * v * v)) * scale / n);
    }
    net.backward(params, &seq.keys, &cache, &out, &dmean, &dvar, grads);
    loss / n
}

fn sequence_loss(net: &Network, params: &[f64], context: &[(Vec<f64>, f64)], targets: &[(Vec<f64>, f64)]) -> f64 {
    let seq = Sequence::autoregressive(context, targets);
    let (out, _) = net.forward(params, &seq.tokens, &seq.keys, &seq.out_rows, None);
    targets
        .iter()
        .zip(out.mean.iter().zip(&out.var))
        .map(|((_, y), (m, v))| super::gaussian_nll(*y, *m, *v))
        .sum::<f64>()
        / targets.len() as f64
}

fn output_stats(family: &TaskFamily, seed: u64) -> (f64, f64) {
    let mut ys = Vec::new();
    for (i, task) in family.train.iter().enumerate() {
        let mut r = rng::stream(seed, tag::TRAIN, u64::MAX - i as u64);
        for _ in 0..64 {
            let u: Vec<f64> = (0..task.dims()).map(|_| r.random::<f64>()).collect();
            ys.push(task.evaluate(&task.space.from_unit(&u)).expect("inside space"));
        }
    }
    let n = ys.len() as f64;
    let mean = ys.iter().sum::<f64>() / n;
    let var = ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt().max(1e-8))
}

fn quantize(p: &mut [f64]) {
    // stored weights are exactly representable as f32 so checkpoints round-trip bitwise
    p.iter_mut().for_each(|v| *v = *v as f32 as f64);
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = Self::B1 * self.m[i] + (1.0 - Self::B1) * g;
            self.v[i] = Self::B2 * self.v[i] + (1.0 - Self::B2) * g * g;
            params[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + Self::EPS);
        }
    }
}

fn cosine_lr(cfg: &TnpConfig, step: usize) -> f64 {
    let frac = step as f64 / cfg.train_steps.max(1) as f64;
    cfg.min_learning_rate + 0.5 * (cfg.learning_rate - cfg.min_learning_rate) * (1.0 + (std::f64::consts::PI * frac).cos())
}

/// Meta-trains a surrogate on the family's training split by maximizing the
/// autoregressive likelihood of random context/target splits.
pub fn meta_train(family: &TaskFamily, cfg: &TnpConfig, seed: u64) -> Result<TnpModel> {
    cfg.validate()?;
    if family.train.is_empty() {
        return Err(Error::InsufficientData("empty training split".into()));
    }
    if cfg.max_sequence < 2 {
        return Err(Error::InsufficientData(format!(
            "training sequences need at least 2 points, max_sequence = {}",
            cfg.max_sequence
        )));
    }
    let dims = family.space.dims();
    let (y_mean, y_std) = output_stats(family, seed);
    let norm = Normalization {
        lower: family.space.lower().to_vec(),
        upper: family.space.upper().to_vec(),
        y_mean,
        y_std,
    };
    let net = Network::new(cfg.shape(dims));
    let mut params = net.init(&mut rng::stream(seed, tag::INIT_WEIGHTS, 0));
    quantize(&mut params);

    let held_out = if family.val.is_empty() { &family.train } else { &family.val };
    let val_set: Vec<(Pairs, Pairs)> = held_out
        .iter()
        .enumerate()
        .flat_map(|(i, task)| {
            let norm = &norm;
            (0..4u64).map(move |k| {
                let mut r = rng::stream(seed ^ 0x5eed, tag::TRAIN, (i as u64) << 8 | k);
                training_sequence(task, norm, cfg.max_sequence, &mut r)
            })
        })
        .collect();
    let val_loss = |p: &[f64]| val_set.iter().map(|(c, t)| sequence_loss(&net, p, c, t)).sum::<f64>() / val_set.len() as f64;

    let mut history = TrainingHistory { losses: Vec::with_capacity(cfg.train_steps), val_nll: vec![(0, val_loss(&params))] };
    let mut adam = Adam::new(params.len());
    let mut grads = vec![0.0; params.len()];
    for step in 0..cfg.train_steps {
        grads.iter_mut().for_each(|g| *g = 0.0);
        let mut r = rng::stream(seed, tag::TRAIN, step as u64);
        let mut loss = 0.0;
        for _ in 0..cfg.batch_tasks {
            let task = &family.train[r.random_range(0..family.train.len())];
            let (ctx, tgt) = training_sequence(task, &norm, cfg.max_sequence, &mut r);
            let dropout = (cfg.dropout > 0.0).then_some((cfg.dropout, &mut r));
            loss += sequence_loss_and_grad(&net, &params, &ctx, &tgt, &mut grads, 1.0 / cfg.batch_tasks as f64, dropout);
        }
        loss /= cfg.batch_tasks as f64;
        if !loss.is_finite() {
            return Err(Error::TrainingDiverged {
                step,
                detail: format!("loss = {loss}, previous = {:?}", history.losses.last()),
            });
        }
        history.losses.push(loss);
        if cfg.grad_clip > 0.0 {
            let norm2 = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
            if norm2 > cfg.grad_clip {
                grads.iter_mut().for_each(|g| *g *= cfg.grad_clip / norm2);
            }
        }
        adam.step(&mut params, &grads, cosine_lr(cfg, step));
        quantize(&mut params);
        if let Some(i) = params.iter().position(|p| !p.is_finite()) {
            return Err(Error::TrainingDiverged { step, detail: format!("non-finite weight at index {i}") });
        }
        if (step + 1) % cfg.eval_every == 0 || step + 1 == cfg.train_steps {
            history.val_nll.push((step + 1, val_loss(&params)));
        }
    }
    TnpModel::from_parts(cfg.clone(), dims, norm, history, params)
}
