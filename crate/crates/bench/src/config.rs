use std::path::{Path, PathBuf};

use hlmbo::acquisition::EiConfig;
use hlmbo::orchestrator::{ExpertMode, MethodKind, SessionConfig};
use hlmbo::preference::HypothesisKind;
use hlmbo::task::{make_synthetic_family, BlackBoxTask, FamilyConfig, TaskFamily};
use hlmbo::tnp::TnpConfig;
use hlmbo::{Error, Result};
use serde::{Deserialize, Serialize};

/// File the zeta sweep leaves in the output directory.
pub const SELECTED_ZETA_FILE: &str = "selected_zeta.json";

/// Everything a bench command needs. Missing fields take the desk defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub family: FamilyConfig,
    pub family_seed: u64,
    pub tnp: TnpConfig,
    pub train_seed: u64,
    /// Defaults to `model.ckpt` in the output directory.
    pub checkpoint: Option<PathBuf>,
    pub methods: Vec<MethodKind>,
    pub seeds: Vec<u64>,
    pub budget: usize,
    pub initial: usize,
    /// `None` keeps the session default.
    pub gamma: Option<f64>,
    /// `None` uses the sweep's selection when one exists, else the session default.
    pub zeta: Option<f64>,
    pub zeta_grid: Vec<f64>,
    pub hypotheses: Vec<HypothesisKind>,
    pub accuracies: Vec<f64>,
    pub sigma_pref_sq: f64,
    pub pairs: usize,
    pub explain: bool,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            family: FamilyConfig::default(),
            family_seed: 0,
            tnp: TnpConfig::desk(),
            train_seed: 1,
            checkpoint: None,
            methods: MethodKind::ALL.to_vec(),
            seeds: (0..10).collect(),
            budget: 10,
            initial: 1,
            gamma: None,
            zeta: None,
            zeta_grid: vec![0.1, 0.3, 0.5],
            hypotheses: HypothesisKind::ALL.to_vec(),
            accuracies: vec![0.5, 0.75, 1.0],
            sigma_pref_sq: 0.1,
            pairs: 40,
            explain: false,
        }
    }
}

impl BenchConfig {
    /// Reads TOML (`.toml`) or JSON (anything else).
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let cfg: Self = if path.extension().is_some_and(|e| e == "toml") {
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        } else {
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.into()));
        if self.seeds.is_empty() {
            return fail("seeds must be nonempty");
        }
        if self.methods.is_empty() {
            return fail("at least one method is required");
        }
        if self.budget == 0 || self.initial == 0 {
            return fail("budget and initial design size must be positive");
        }
        if self.pairs == 0 {
            return fail("pairs must be positive");
        }
        if !(self.sigma_pref_sq > 0.0 && self.sigma_pref_sq.is_finite()) {
            return fail("sigma_pref_sq must be positive");
        }
        if self.zeta_grid.is_empty() || self.zeta_grid.iter().any(|z| !(*z >= 0.0 && z.is_finite())) {
            return fail("zeta_grid must hold nonnegative values");
        }
        if self.zeta.is_some_and(|z| !(z >= 0.0 && z.is_finite())) {
            return fail("zeta must be nonnegative");
        }
        if self.hypotheses.is_empty() {
            return fail("at least one hypothesis kind is required");
        }
        if self.accuracies.is_empty() || self.accuracies.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return fail("accuracies must lie in [0, 1]");
        }
        self.tnp.validate()
    }

    pub fn with_seed_count(mut self, n: usize) -> Self {
        self.seeds = (0..n as u64).collect();
        self
    }

    pub fn family(&self) -> Result<TaskFamily> {
        make_synthetic_family(&self.family, self.family_seed)
    }

    pub fn checkpoint_path(&self, out: &Path) -> PathBuf {
        self.checkpoint.clone().unwrap_or_else(|| out.join("model.ckpt"))
    }

    /// Explicit zeta, else the sweep's pick stored in `out`, else the default.
    pub fn resolve_zeta(&self, out: &Path) -> Result<f64> {
        if let Some(z) = self.zeta {
            return Ok(z);
        }
        let path = out.join(SELECTED_ZETA_FILE);
        if path.exists() {
            let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path)?)?;
            return v["zeta"].as_f64().ok_or_else(|| Error::Config(format!("{} has no zeta", path.display())));
        }
        Ok(EiConfig::DEFAULT_ZETA)
    }

    /// Session template for one run: simulated expert, no explanations.
    pub fn session(&self, task: BlackBoxTask, seed: u64, zeta: f64) -> SessionConfig {
        let mut c = SessionConfig::new(task, seed);
        c.budget = self.budget;
        c.initial = self.initial;
        if let Some(g) = self.gamma {
            c.gamma = g;
        }
        c.zeta = zeta;
        c.preference.pairs = self.pairs;
        c.expert = ExpertMode::Simulated { sigma_pref_sq: self.sigma_pref_sq, label_accuracy: None };
        c.explain = self.explain;
        c
    }
}
