use std::collections::VecDeque;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::session::{run_with, Phase, SessionState, StepRecord};
use super::SessionConfig;
use crate::error::{Error, Result};
use crate::preference::{FitDiagnostics, Hypothesis, PrefSource, PreferenceDataset};
use crate::task::{BlackBoxTask, Choice, ChoiceOracle, Point, TaskDataset};
use crate::tnp::TnpModel;

pub const RECORD_VERSION: u32 = 1;

/// A complete, self-verifying account of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub format_version: u32,
    pub config: SessionConfig,
    pub model_fingerprint: String,
    pub phase: Phase,
    pub initial: TaskDataset,
    pub hypothesis: Option<Hypothesis>,
    pub preferences: PreferenceDataset,
    pub pref_diagnostics: Option<FitDiagnostics>,
    pub steps: Vec<StepRecord>,
    pub regret: Vec<f64>,
    pub evaluations: usize,
    pub abort_reason: Option<String>,
    pub started_unix_ms: u64,
    pub finished_unix_ms: u64,
    /// Hex SHA-256 of the record serialized with this field empty.
    pub integrity: String,
}

impl RunRecord {
    pub(crate) fn from_state(state: &SessionState) -> Result<Self> {
        let n = state.config.initial.min(state.context.len());
        let initial = TaskDataset::from_parts(
            state.context.task_id.clone(),
            state.context.points[..n].to_vec(),
            state.context.values[..n].to_vec(),
        )?;
        let mut r = Self {
            format_version: RECORD_VERSION,
            config: state.config.clone(),
            model_fingerprint: state.model_fingerprint.clone(),
            phase: state.phase,
            initial,
            hypothesis: state.hypothesis.clone(),
            preferences: state.preferences.clone(),
            pref_diagnostics: state.pref_diagnostics.clone(),
            steps: state.history.clone(),
            regret: state.regret.clone(),
            evaluations: state.evaluations,
            abort_reason: state.abort_reason.clone(),
            started_unix_ms: state.created_unix_ms,
            finished_unix_ms: state.updated_unix_ms,
            integrity: String::new(),
        };
        r.seal()?;
        Ok(r)
    }

    fn digest(&self) -> Result<String> {
        let mut unsealed = self.clone();
        unsealed.integrity.clear();
        let bytes = serde_json::to_vec(&unsealed)?;
        Ok(hex::encode(Sha256::digest(&bytes)))
    }

    fn seal(&mut self) -> Result<()> {
        self.integrity = self.digest()?;
        Ok(())
    }

    pub fn verify(&self) -> Result<()> {
        if self.format_version != RECORD_VERSION {
            return Err(Error::Record(format!(
                "format version {} is not supported (expected {RECORD_VERSION})",
                self.format_version
            )));
        }
        if self.digest()? != self.integrity {
            return Err(Error::Record("integrity hash mismatch".into()));
        }
        Ok(())
    }

    /// Chosen points in order, initial design included.
    pub fn evaluated_points(&self) -> Vec<&Point> {
        self.initial.points.iter().chain(self.steps.iter().map(|s| &s.x)).collect()
    }

    pub fn final_regret(&self) -> Option<f64> {
        self.regret.last().copied()
    }

    /// The record with wall-clock fields zeroed, resealed.
    pub fn without_timestamps(&self) -> Result<Self> {
        let mut r = self.clone();
        r.started_unix_ms = 0;
        r.finished_unix_ms = 0;
        for s in &mut r.steps {
            s.wall_ms = 0;
        }
        r.seal()?;
        Ok(r)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let r: Self = serde_json::from_str(s).map_err(|e| Error::Record(format!("malformed run record: {e}")))?;
        r.verify()?;
        Ok(r)
    }
}

pub fn save_run(record: &RunRecord, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, record.to_json()?)?;
    Ok(())
}

pub fn load_run(path: impl AsRef<Path>) -> Result<RunRecord> {
    RunRecord::from_json(&std::fs::read_to_string(path)?)
}

/// Answers with the recorded choices, checking that each presented pair
/// matches the recorded one exactly.
struct ReplayOracle {
    answers: VecDeque<(Point, Point, Choice)>,
    human: bool,
    aborted: bool,
    asked: usize,
}

impl ChoiceOracle for ReplayOracle {
    fn choose(&mut self, _task: &BlackBoxTask, x1: &[f64], x2: &[f64]) -> Result<Choice> {
        let Some((r1, r2, c)) = self.answers.pop_front() else {
            if self.aborted {
                return Err(Error::ElicitationAborted { partial: Box::default() });
            }
            return Err(Error::Record(format!("replay asked for answer {} beyond the recorded ones", self.asked + 1)));
        };
        self.asked += 1;
        if r1 != x1 || r2 != x2 {
            return Err(Error::Record(format!("replay diverged at question {}", self.asked)));
        }
        Ok(c)
    }

    fn is_human(&self) -> bool {
        self.human
    }
}

/// Re-runs a recorded session with its recorded answers.
pub fn replay(record: &RunRecord, model: &Arc<TnpModel>) -> Result<RunRecord> {
    record.verify()?;
    let mut answers: VecDeque<(Point, Point, Choice)> = record
        .preferences
        .pairs
        .iter()
        .map(|p| (p.x1.clone(), p.x2.clone(), if p.y == 1 { Choice::First } else { Choice::Second }))
        .collect();
    if record.config.method.uses_expert() {
        answers.extend(record.steps.iter().map(|s| (s.pair.x1.clone(), s.pair.x2.clone(), s.choice)));
    }
    let mut oracle = ReplayOracle {
        answers,
        human: record.preferences.pairs.iter().any(|p| p.source == PrefSource::Human),
        aborted: record.phase == Phase::Aborted,
        asked: 0,
    };
    let mut out = run_with(record.config.clone(), model, &mut oracle, None)?;
    if out.phase == Phase::Aborted {
        out.abort_reason = record.abort_reason.clone();
        out.seal()?;
    }
    Ok(out)
}

/// Replays `record` and fails unless the result matches it up to wall-clock
/// fields.
pub fn verify_replay(record: &RunRecord, model: &Arc<TnpModel>) -> Result<RunRecord> {
    let again = replay(record, model)?;
    if again.without_timestamps()? != record.without_timestamps()? {
        return Err(Error::Record("replay does not reproduce the record".into()));
    }
    Ok(again)
}
