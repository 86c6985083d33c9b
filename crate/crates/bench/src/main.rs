use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use hlmbo_bench::run::{write_selection, Outcome};
use hlmbo_bench::{exit_code, write_summary, BenchConfig};

#[derive(Parser)]
#[command(name = "bench", version, about = "Desk-scale benchmark harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Meta-train the surrogate and write the checkpoint and loss curve.
    Train(Common),
    /// Every configured method on the test tasks.
    Compare(Common),
    /// Expert, random and adversarial hypotheses.
    AblateHypothesis(Common),
    /// Elicitation label accuracy levels.
    AblateAccuracy(Common),
    /// Exploration margin grid on the validation tasks.
    SweepZeta(Common),
    /// Rebuild plots and report.md from the CSVs in --out.
    Report(Common),
}

#[derive(Args)]
struct Common {
    /// TOML or JSON bench configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "bench-out")]
    out: PathBuf,
    /// Use seeds 0..N instead of the configured list.
    #[arg(long)]
    seeds: Option<usize>,
    /// Checkpoint path; defaults to OUT/model.ckpt.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> hlmbo::Result<BenchConfig> {
        let mut cfg = match &self.config {
            Some(p) => BenchConfig::load(p)?,
            None => BenchConfig::default(),
        };
        if let Some(n) = self.seeds {
            cfg = cfg.with_seed_count(n);
        }
        if self.checkpoint.is_some() {
            cfg.checkpoint.clone_from(&self.checkpoint);
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn finish(outcome: &Outcome, common: &Common) -> hlmbo::Result<()> {
    outcome.write(&common.out)?;
    print!("{}", outcome.report.markdown());
    Ok(())
}

enum Experiment {
    Compare,
    Hypothesis,
    Accuracy,
    Zeta,
}

fn execute(cmd: Command) -> hlmbo::Result<()> {
    let (c, experiment) = match cmd {
        Command::Report(c) => {
            print!("{}", write_summary(&c.out)?);
            return Ok(());
        }
        Command::Train(c) => {
            let t = hlmbo_bench::train(&c.load()?, &c.out)?;
            println!("checkpoint {} ({})", t.checkpoint.display(), t.fingerprint);
            println!("loss curve {}", t.loss_csv.display());
            return Ok(());
        }
        Command::Compare(c) => (c, Experiment::Compare),
        Command::AblateHypothesis(c) => (c, Experiment::Hypothesis),
        Command::AblateAccuracy(c) => (c, Experiment::Accuracy),
        Command::SweepZeta(c) => (c, Experiment::Zeta),
    };
    let cfg = c.load()?;
    let model = Arc::new(hlmbo_bench::load_checkpoint(&cfg, &c.out)?);
    let outcome = match experiment {
        Experiment::Zeta => {
            let (outcome, sel) = hlmbo_bench::sweep_zeta(&cfg, &model)?;
            write_selection(&c.out, &sel)?;
            outcome
        }
        Experiment::Compare => hlmbo_bench::compare(&cfg, &model, cfg.resolve_zeta(&c.out)?)?,
        Experiment::Hypothesis => hlmbo_bench::ablate_hypothesis(&cfg, &model, cfg.resolve_zeta(&c.out)?)?,
        Experiment::Accuracy => hlmbo_bench::ablate_accuracy(&cfg, &model, cfg.resolve_zeta(&c.out)?)?,
    };
    finish(&outcome, &c)
}

fn main() -> ExitCode {
    match execute(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
