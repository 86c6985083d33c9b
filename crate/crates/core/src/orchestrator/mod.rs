//! The optimization loop: initial design, preference elicitation, then
//! `budget` rounds of propose, explain, choose, evaluate.
//!
//! [`Session`] is the single implementation of the loop. Batch runs drive it
//! with oracles, the HTTP service drives it one request at a time, and replay
//! drives it with recorded answers.

mod manager;
mod record;
mod session;

use serde::{Deserialize, Serialize};

use crate::acquisition::{DecaySchedule, EiConfig, SearchConfig};
use crate::error::{Error, Result};
use crate::explain::ExplainConfig;
use crate::preference::{Hypothesis, HypothesisKind, PreferenceConfig};
use crate::task::BlackBoxTask;

pub use manager::{ChooseRequest, SessionManager};
pub use record::{load_run, replay, save_run, verify_replay, RunRecord, RECORD_VERSION};
pub use session::{run_hlmbo, run_baseline, run_simulated, run_with, Phase, Proposal, Session, SessionState, StepRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodKind {
    /// Combined EI over surrogate and preference posteriors.
    HlmboEi,
    /// Surrogate-only EI; `x1` is accepted without asking the expert.
    TnpEi,
    /// UCB over surrogate and combined posteriors.
    McoexboUcb,
}

impl MethodKind {
    pub const ALL: [MethodKind; 3] = [MethodKind::HlmboEi, MethodKind::TnpEi, MethodKind::McoexboUcb];

    pub fn label(self) -> &'static str {
        match self {
            MethodKind::HlmboEi => "hlmbo_ei",
            MethodKind::TnpEi => "tnp_ei",
            MethodKind::McoexboUcb => "mcoexbo_ucb",
        }
    }

    pub fn uses_expert(self) -> bool {
        self != MethodKind::TnpEi
    }
}

impl std::str::FromStr for MethodKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.label() == s)
            .ok_or_else(|| Error::Config(format!("unknown method {s:?}")))
    }
}

/// Where preference pairs are drawn from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HypothesisSpec {
    Kind(HypothesisKind),
    Boxes(Hypothesis),
}

/// Which points a query is compared against when reducing the pairwise
/// model to a per-point signal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Reference {
    /// The best observation so far.
    Incumbent,
    /// Up to `max` of the points the expert compared, evenly subsampled.
    Elicited { max: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferenceSetup {
    /// Number of labeled pairs `M`.
    pub pairs: usize,
    pub hypothesis: HypothesisSpec,
    pub slices: usize,
    pub per_slice: usize,
    pub model: PreferenceConfig,
    pub reference: Reference,
}

impl Default for PreferenceSetup {
    fn default() -> Self {
        Self {
            pairs: 40,
            hypothesis: HypothesisSpec::Kind(HypothesisKind::Expert),
            slices: 10,
            per_slice: 100,
            model: PreferenceConfig::default(),
            reference: Reference::Elicited { max: 12 },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum ExpertMode {
    /// Answers come from `f + N(0, sigma_pref_sq)`. With `label_accuracy`
    /// set, elicitation labels are instead the true ordering flipped with
    /// probability `1 - label_accuracy`.
    Simulated {
        sigma_pref_sq: f64,
        #[serde(default)]
        label_accuracy: Option<f64>,
    },
    Interactive,
}

impl Default for ExpertMode {
    fn default() -> Self {
        ExpertMode::Simulated { sigma_pref_sq: 0.1, label_accuracy: None }
    }
}

fn default_budget() -> usize {
    10
}
fn default_initial() -> usize {
    1
}
fn default_gamma() -> f64 {
    DecaySchedule::DEFAULT_GAMMA
}
fn default_zeta() -> f64 {
    EiConfig::DEFAULT_ZETA
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    pub task: BlackBoxTask,
    /// Registry name of the surrogate (service only).
    #[serde(default)]
    pub model: Option<String>,
    /// When set, the surrogate's fingerprint must match.
    #[serde(default)]
    pub model_fingerprint: Option<String>,
    #[serde(default = "default_method")]
    pub method: MethodKind,
    #[serde(default = "default_budget")]
    pub budget: usize,
    #[serde(default = "default_initial")]
    pub initial: usize,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_zeta")]
    pub zeta: f64,
    #[serde(default)]
    pub preference: PreferenceSetup,
    #[serde(default)]
    pub expert: ExpertMode,
    #[serde(default)]
    pub search: SearchConfig,
    #[serde(default = "default_true")]
    pub explain: bool,
    #[serde(default)]
    pub explain_config: ExplainConfig,
    #[serde(default)]
    pub seed: u64,
}

fn default_method() -> MethodKind {
    MethodKind::HlmboEi
}

impl SessionConfig {
    pub fn new(task: BlackBoxTask, seed: u64) -> Self {
        Self {
            task,
            model: None,
            model_fingerprint: None,
            method: MethodKind::HlmboEi,
            budget: default_budget(),
            initial: default_initial(),
            gamma: default_gamma(),
            zeta: default_zeta(),
            preference: PreferenceSetup::default(),
            expert: ExpertMode::default(),
            search: SearchConfig::default(),
            explain: true,
            explain_config: ExplainConfig::default(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.budget == 0 || self.initial == 0 {
            return Err(Error::Config("budget and initial samples must be at least 1".into()));
        }
        DecaySchedule::new(self.gamma, 0)?;
        EiConfig::new(self.zeta)?;
        if self.method.uses_expert() && self.preference.pairs == 0 {
            return Err(Error::Config("preference elicitation needs at least one pair".into()));
        }
        if let ExpertMode::Simulated { sigma_pref_sq, label_accuracy } = &self.expert {
            if !(*sigma_pref_sq >= 0.0) {
                return Err(Error::Config("sigma_pref_sq must be >= 0".into()));
            }
            if let Some(a) = label_accuracy {
                if !(0.0..=1.0).contains(a) {
                    return Err(Error::Config("label_accuracy must lie in [0, 1]".into()));
                }
            }
        }
        if let HypothesisSpec::Boxes(h) = &self.preference.hypothesis {
            h.validate(&self.task.space)?;
        }
        if self.search.candidates == 0 || self.search.top_k == 0 {
            return Err(Error::Config("search needs candidates and top_k >= 1".into()));
        }
        Ok(())
    }
}
