use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use hlmbo::orchestrator::{run_simulated, save_run, ExpertMode, HypothesisSpec, RunRecord, SessionConfig};
use hlmbo::preference::HypothesisKind;
use hlmbo::task::BlackBoxTask;
use hlmbo::tnp::{load_model, meta_train, save_model, TnpModel};
use hlmbo::{Error, Result};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{BenchConfig, SELECTED_ZETA_FILE};
use crate::report::{BenchReport, Meta, Row};

/// A finished experiment: the regret table plus the sealed run records, in
/// (variant, seed) order.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub report: BenchReport,
    pub records: Vec<RunRecord>,
}

impl Outcome {
    /// Writes the report files and `runs/<kind>/<variant>-<seed>.json`.
    pub fn write(&self, out: &Path) -> Result<()> {
        self.report.write(out)?;
        let dir = out.join("runs").join(&self.report.meta.kind);
        std::fs::create_dir_all(&dir)?;
        let labels = self.report.meta.variants.iter().flat_map(|v| self.report.seeds().into_iter().map(move |s| (v.clone(), s)));
        for ((label, seed), rec) in labels.zip(&self.records) {
            save_run(rec, dir.join(format!("{label}-{seed}.json")))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Trained {
    pub checkpoint: PathBuf,
    pub loss_csv: PathBuf,
    pub fingerprint: String,
    pub model: TnpModel,
}

/// Meta-trains on the configured family and writes the checkpoint and
/// `loss.csv` (step, train_loss, val_nll).
pub fn train(cfg: &BenchConfig, out: &Path) -> Result<Trained> {
    let family = cfg.family()?;
    let model = meta_train(&family, &cfg.tnp, cfg.train_seed)?;
    std::fs::create_dir_all(out)?;
    let checkpoint = cfg.checkpoint_path(out);
    if let Some(parent) = checkpoint.parent() {
        std::fs::create_dir_all(parent)?;
    }
    save_model(&model, &checkpoint)?;
    let loss_csv = out.join("loss.csv");
    std::fs::write(&loss_csv, loss_table(&model))?;
    Ok(Trained { checkpoint, loss_csv, fingerprint: model.fingerprint()?, model })
}

fn loss_table(model: &TnpModel) -> String {
    let val: BTreeMap<usize, f64> = model.history.val_nll.iter().copied().collect();
    let mut s = String::from("step,train_loss,val_nll\n");
    if let Some(v) = val.get(&0) {
        s += &format!("0,,{v}\n");
    }
    for (i, loss) in model.history.losses.iter().enumerate() {
        let step = i + 1;
        match val.get(&step) {
            Some(v) => s += &format!("{step},{loss},{v}\n"),
            None => s += &format!("{step},{loss},\n"),
        }
    }
    s
}

/// The checkpoint every experiment command shares.
pub fn load_checkpoint(cfg: &BenchConfig, out: &Path) -> Result<TnpModel> {
    let path = cfg.checkpoint_path(out);
    if !path.exists() {
        return Err(Error::Config(format!("checkpoint {} not found; run `bench train` first", path.display())));
    }
    load_model(&path)
}

struct Variant {
    label: String,
    apply: Box<dyn Fn(&mut SessionConfig) + Send + Sync>,
}

fn variant(label: impl Into<String>, apply: impl Fn(&mut SessionConfig) + Send + Sync + 'static) -> Variant {
    Variant { label: label.into(), apply: Box::new(apply) }
}

fn rows(label: &str, seed: u64, rec: &RunRecord) -> Vec<Row> {
    let initial = rec.initial.len();
    rec.regret
        .iter()
        .enumerate()
        .map(|(step, regret)| Row {
            method: label.to_string(),
            seed,
            step,
            regret: *regret,
            wall_ms: if step < initial { 0 } else { rec.steps[step - initial].wall_ms },
        })
        .collect()
}

fn run_variants(
    cfg: &BenchConfig,
    model: &Arc<TnpModel>,
    tasks: &[BlackBoxTask],
    zeta: f64,
    meta: (&str, &str),
    variants: Vec<Variant>,
) -> Result<Outcome> {
    if tasks.is_empty() {
        return Err(Error::Config("the family split used for this experiment is empty".into()));
    }
    let jobs: Vec<(usize, u64, SessionConfig)> = variants
        .iter()
        .enumerate()
        .flat_map(|(i, v)| {
            cfg.seeds.iter().map(move |&seed| {
                let mut c = cfg.session(tasks[seed as usize % tasks.len()].clone(), seed, zeta);
                (v.apply)(&mut c);
                (i, seed, c)
            })
        })
        .collect();
    let records = jobs.par_iter().map(|(_, _, c)| run_simulated(c.clone(), model)).collect::<Result<Vec<_>>>()?;
    let rows = jobs.iter().zip(&records).flat_map(|((i, seed, _), rec)| rows(&variants[*i].label, *seed, rec)).collect();
    let meta = Meta {
        kind: meta.0.into(),
        title: meta.1.into(),
        variants: variants.iter().map(|v| v.label.clone()).collect(),
        notes: BTreeMap::from([("zeta".to_string(), zeta.to_string())]),
    };
    let report = BenchReport { meta, rows };
    report.check_dense()?;
    Ok(Outcome { report, records })
}

/// Every configured method on the test split.
pub fn compare(cfg: &BenchConfig, model: &Arc<TnpModel>, zeta: f64) -> Result<Outcome> {
    let variants = cfg.methods.iter().map(|&m| variant(m.label(), move |c| c.method = m)).collect();
    run_variants(cfg, model, &cfg.family()?.test, zeta, ("compare", "Method comparison"), variants)
}

/// hlmbo_ei with each hypothesis kind constraining the elicited pairs.
pub fn ablate_hypothesis(cfg: &BenchConfig, model: &Arc<TnpModel>, zeta: f64) -> Result<Outcome> {
    let variants = cfg
        .hypotheses
        .iter()
        .map(|&k| variant(k.label(), move |c| c.preference.hypothesis = HypothesisSpec::Kind(k)))
        .collect();
    run_variants(cfg, model, &cfg.family()?.test, zeta, ("ablate_hypothesis", "Hypothesis ablation"), variants)
}

pub fn accuracy_label(a: f64) -> String {
    format!("acc_{}", (a * 100.0).round())
}

/// hlmbo_ei with elicitation labels forced to each accuracy level, highest
/// level first. Notes record the audited label accuracy per level.
pub fn ablate_accuracy(cfg: &BenchConfig, model: &Arc<TnpModel>, zeta: f64) -> Result<Outcome> {
    let mut levels = cfg.accuracies.clone();
    levels.sort_by(|a, b| b.total_cmp(a));
    levels.dedup();
    let sigma = cfg.sigma_pref_sq;
    let variants = levels
        .iter()
        .map(|&a| {
            variant(accuracy_label(a), move |c| {
                c.preference.hypothesis = HypothesisSpec::Kind(HypothesisKind::Expert);
                c.expert = ExpertMode::Simulated { sigma_pref_sq: sigma, label_accuracy: Some(a) };
            })
        })
        .collect();
    let tasks = cfg.family()?.test;
    if let Some(t) = tasks.iter().find(|t| t.known_optimum.is_none()) {
        return Err(Error::Config(format!("accuracy ablation needs known optima; task {} has none", t.id)));
    }
    let mut outcome = run_variants(cfg, model, &tasks, zeta, ("ablate_accuracy", "Label accuracy ablation"), variants)?;
    let per_level = cfg.seeds.len();
    for (i, &a) in levels.iter().enumerate() {
        let audit = label_audit(&outcome.records[i * per_level..(i + 1) * per_level])?;
        outcome.report.meta.notes.insert(
            format!("{} observed label accuracy", accuracy_label(a)),
            format!("{:.4} ({} of {} labels)", audit.rate(), audit.correct, audit.total),
        );
    }
    Ok(outcome)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct LabelAudit {
    pub correct: usize,
    pub total: usize,
}

impl LabelAudit {
    pub fn rate(&self) -> f64 {
        self.correct as f64 / self.total.max(1) as f64
    }
}

/// Counts preference labels that agree with the true objective ordering.
pub fn label_audit(records: &[RunRecord]) -> Result<LabelAudit> {
    let mut audit = LabelAudit::default();
    for rec in records {
        let task = &rec.config.task;
        for p in &rec.preferences.pairs {
            let truth = u8::from(task.evaluate(&p.x1)? >= task.evaluate(&p.x2)?);
            audit.total += 1;
            audit.correct += usize::from(truth == p.y);
        }
    }
    Ok(audit)
}

#[derive(Debug, Clone, Serialize)]
pub struct ZetaSelection {
    pub zeta: f64,
    pub split: &'static str,
    pub mean_final_regret: BTreeMap<String, f64>,
}

pub fn zeta_label(z: f64) -> String {
    format!("zeta_{z}")
}

/// hlmbo_ei for each zeta on the validation split; the lowest mean final
/// regret wins (earlier grid entry on ties).
pub fn sweep_zeta(cfg: &BenchConfig, model: &Arc<TnpModel>) -> Result<(Outcome, ZetaSelection)> {
    let variants = cfg.zeta_grid.iter().map(|&z| variant(zeta_label(z), move |c| c.zeta = z)).collect();
    let mut outcome = run_variants(cfg, model, &cfg.family()?.val, cfg.zeta_grid[0], ("sweep_zeta", "Exploration (zeta) sweep"), variants)?;
    outcome.report.meta.notes.remove("zeta");
    let best = outcome.report.best_variant().expect("grid is nonempty");
    let zeta = cfg.zeta_grid[outcome.report.meta.variants.iter().position(|v| *v == best).unwrap()];
    let mean_final_regret = outcome.report.summary().into_iter().map(|s| (s.label, s.final_mean)).collect();
    outcome.report.meta.notes.insert("selected zeta (validation split)".into(), zeta.to_string());
    Ok((outcome, ZetaSelection { zeta, split: "val", mean_final_regret }))
}

pub fn write_selection(out: &Path, sel: &ZetaSelection) -> Result<()> {
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join(SELECTED_ZETA_FILE), serde_json::to_string_pretty(sel)? + "\n")?;
    Ok(())
}
