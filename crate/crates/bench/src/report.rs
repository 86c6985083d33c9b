use std::collections::BTreeMap;
use std::fmt::Write;
use std::path::Path;

use hlmbo::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::plot::{bar_chart, line_chart, Series};
use crate::stats::{mean, median, sign_test, std_dev, SignTest};

/// Experiment kinds in report order.
pub const KINDS: [&str; 4] = ["compare", "ablate_hypothesis", "ablate_accuracy", "sweep_zeta"];

/// One CSV line. The column set is fixed: method, seed, step, regret, wall_ms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    /// Method or variant label.
    pub method: String,
    pub seed: u64,
    pub step: usize,
    pub regret: f64,
    pub wall_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Meta {
    pub kind: String,
    pub title: String,
    /// Variant labels in presentation order; the first is the reference.
    pub variants: Vec<String>,
    #[serde(default)]
    pub notes: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub meta: Meta,
    pub rows: Vec<Row>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VariantSummary {
    pub label: String,
    pub runs: usize,
    pub final_mean: f64,
    pub final_std: f64,
    pub final_median: f64,
}

fn record_err(e: impl std::fmt::Display) -> Error {
    Error::Record(e.to_string())
}

impl BenchReport {
    pub fn seeds(&self) -> Vec<u64> {
        let mut s: Vec<u64> = self.rows.iter().map(|r| r.seed).collect();
        s.sort_unstable();
        s.dedup();
        s
    }

    pub fn steps(&self) -> usize {
        self.rows.iter().map(|r| r.step + 1).max().unwrap_or(0)
    }

    /// Every (variant, seed, step) cell present exactly once.
    pub fn check_dense(&self) -> Result<()> {
        let (seeds, steps) = (self.seeds(), self.steps());
        let expected = self.meta.variants.len() * seeds.len() * steps;
        let mut cells: Vec<(&str, u64, usize)> = self.rows.iter().map(|r| (r.method.as_str(), r.seed, r.step)).collect();
        cells.sort_unstable();
        cells.dedup();
        if cells.len() != self.rows.len() || self.rows.len() != expected {
            return Err(Error::Record(format!("{} report has {} rows, expected {expected} distinct cells", self.meta.kind, self.rows.len())));
        }
        if let Some(r) = self.rows.iter().find(|r| !self.meta.variants.contains(&r.method)) {
            return Err(Error::Record(format!("row for unlisted variant {}", r.method)));
        }
        Ok(())
    }

    pub fn trace(&self, variant: &str, seed: u64) -> Vec<f64> {
        let mut rows: Vec<&Row> = self.rows.iter().filter(|r| r.method == variant && r.seed == seed).collect();
        rows.sort_by_key(|r| r.step);
        rows.iter().map(|r| r.regret).collect()
    }

    /// Final regret per seed, in ascending seed order.
    pub fn final_regrets(&self, variant: &str) -> Vec<f64> {
        self.seeds().into_iter().filter_map(|s| self.trace(variant, s).last().copied()).collect()
    }

    /// Per-step mean and standard deviation across seeds.
    pub fn aggregate(&self, variant: &str) -> (Vec<f64>, Vec<f64>) {
        let traces: Vec<Vec<f64>> = self.seeds().into_iter().map(|s| self.trace(variant, s)).collect();
        (0..self.steps())
            .map(|t| {
                let col: Vec<f64> = traces.iter().filter_map(|tr| tr.get(t).copied()).collect();
                (mean(&col), std_dev(&col))
            })
            .unzip()
    }

    pub fn summary(&self) -> Vec<VariantSummary> {
        self.meta
            .variants
            .iter()
            .map(|v| {
                let f = self.final_regrets(v);
                VariantSummary { label: v.clone(), runs: f.len(), final_mean: mean(&f), final_std: std_dev(&f), final_median: median(&f) }
            })
            .collect()
    }

    /// Paired sign test of the reference variant against `other`.
    pub fn sign_test_against(&self, other: &str) -> SignTest {
        sign_test(&self.final_regrets(&self.meta.variants[0]), &self.final_regrets(other))
    }

    /// Variant with the lowest mean final regret; ties go to the earlier one.
    pub fn best_variant(&self) -> Option<String> {
        self.summary().into_iter().fold(None, |best: Option<VariantSummary>, s| match best {
            Some(b) if b.final_mean <= s.final_mean => Some(b),
            _ => Some(s),
        }).map(|s| s.label)
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            w.serialize(r).map_err(record_err)?;
        }
        String::from_utf8(w.into_inner().map_err(record_err)?).map_err(record_err)
    }

    pub fn from_csv(meta: Meta, text: &str) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(text.as_bytes());
        let header: Vec<String> = rd.headers().map_err(record_err)?.iter().map(str::to_string).collect();
        if header != ["method", "seed", "step", "regret", "wall_ms"] {
            return Err(Error::Record(format!("unexpected CSV columns {header:?}")));
        }
        let rows = rd.deserialize().collect::<std::result::Result<Vec<Row>, _>>().map_err(record_err)?;
        let report = Self { meta, rows };
        report.check_dense()?;
        Ok(report)
    }

    /// Writes `<kind>.csv`, `<kind>.json` and `<kind>.svg` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let kind = &self.meta.kind;
        std::fs::write(dir.join(format!("{kind}.csv")), self.to_csv()?)?;
        std::fs::write(dir.join(format!("{kind}.json")), serde_json::to_string_pretty(&self.meta)? + "\n")?;
        std::fs::write(dir.join(format!("{kind}.svg")), self.curves_svg())?;
        Ok(())
    }

    pub fn read(dir: &Path, kind: &str) -> Result<Self> {
        let meta: Meta = serde_json::from_str(&std::fs::read_to_string(dir.join(format!("{kind}.json")))?)?;
        Self::from_csv(meta, &std::fs::read_to_string(dir.join(format!("{kind}.csv")))?)
    }

    pub fn curves_svg(&self) -> String {
        let aggs: Vec<(String, (Vec<f64>, Vec<f64>))> = self.meta.variants.iter().map(|v| (v.clone(), self.aggregate(v))).collect();
        let series: Vec<Series> = aggs.iter().map(|(l, (m, s))| Series { label: l, mean: m, std: s }).collect();
        line_chart(&self.meta.title, "step", "simple regret", &series)
    }

    pub fn finals_svg(&self) -> String {
        let summary = self.summary();
        let bars: Vec<(&str, f64, f64)> = summary.iter().map(|s| (s.label.as_str(), s.final_mean, s.final_std)).collect();
        bar_chart(&format!("{}: final regret", self.meta.title), "final simple regret", &bars)
    }

    /// Markdown section: summary table, sign tests and notes.
    pub fn markdown(&self) -> String {
        let mut out = String::new();
        let kind = &self.meta.kind;
        let _ = writeln!(out, "## {}\n", self.meta.title);
        let _ = writeln!(out, "{} seeds, {} steps per run.\n", self.seeds().len(), self.steps());
        let _ = writeln!(out, "| variant | runs | final mean ± std | final median |");
        let _ = writeln!(out, "|---|---|---|---|");
        for s in self.summary() {
            let _ = writeln!(out, "| {} | {} | {:.4} ± {:.4} | {:.4} |", s.label, s.runs, s.final_mean, s.final_std, s.final_median);
        }
        if self.meta.variants.len() > 1 {
            let reference = &self.meta.variants[0];
            let _ = writeln!(out, "\nOne-sided paired sign tests, {reference} lower than:\n");
            let _ = writeln!(out, "| other | wins | losses | ties | p |");
            let _ = writeln!(out, "|---|---|---|---|---|");
            for other in &self.meta.variants[1..] {
                let t = self.sign_test_against(other);
                let _ = writeln!(out, "| {other} | {} | {} | {} | {:.4} |", t.wins, t.losses, t.ties, t.p_value);
            }
        }
        if !self.meta.notes.is_empty() {
            let _ = writeln!(out);
            for (k, v) in &self.meta.notes {
                let _ = writeln!(out, "- {k}: {v}");
            }
        }
        let _ = writeln!(out, "\n![{kind} regret]({kind}.svg)\n![{kind} final regret]({kind}_final.svg)\n");
        out
    }
}

/// Regenerates plots and `report.md` from the CSV/JSON pairs in `dir`.
pub fn write_summary(dir: &Path) -> Result<String> {
    let mut reports = Vec::new();
    for kind in KINDS {
        if dir.join(format!("{kind}.csv")).exists() {
            reports.push(BenchReport::read(dir, kind)?);
        }
    }
    if reports.is_empty() {
        return Err(Error::NothingToReport(dir.display().to_string()));
    }
    let mut md = String::from("# Benchmark report\n\n");
    for r in &reports {
        let kind = &r.meta.kind;
        std::fs::write(dir.join(format!("{kind}.svg")), r.curves_svg())?;
        std::fs::write(dir.join(format!("{kind}_final.svg")), r.finals_svg())?;
        md.push_str(&r.markdown());
    }
    std::fs::write(dir.join("report.md"), &md)?;
    Ok(md)
}
