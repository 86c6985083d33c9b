use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use hlmbo::orchestrator::SessionManager;
use hlmbo::task::{make_synthetic_family, FamilyConfig, TaskFamily};
use hlmbo::tnp::load_model;
use hlmbo_server::{router, AppState};

/// Serve interactive optimization sessions over HTTP.
#[derive(Parser)]
#[command(version)]
struct Args {
    /// Surrogate checkpoint as NAME=PATH; repeat for several.
    #[arg(long = "model", required = true, value_parser = parse_model)]
    models: Vec<(String, PathBuf)>,
    /// Task family JSON whose tasks sessions may name by id.
    #[arg(long)]
    family: Option<PathBuf>,
    /// Without --family, serve the default synthetic family built from this seed.
    #[arg(long, default_value_t = 0)]
    family_seed: u64,
    /// Directory sessions are persisted to and restored from.
    #[arg(long)]
    persist: Option<PathBuf>,
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: String,
}

fn parse_model(s: &str) -> Result<(String, PathBuf), String> {
    let (name, path) = s.split_once('=').ok_or("expected NAME=PATH")?;
    Ok((name.to_string(), PathBuf::from(path)))
}

fn setup(args: &Args) -> hlmbo::Result<AppState> {
    let sessions = match &args.persist {
        Some(dir) => SessionManager::with_persistence(dir)?,
        None => SessionManager::new(),
    };
    for (name, path) in &args.models {
        let fp = sessions.register_model(name.clone(), load_model(path)?)?;
        eprintln!("model {name}: {fp}");
    }
    let restored = sessions.restore_all()?;
    if restored > 0 {
        eprintln!("restored {restored} sessions");
    }
    let family = match &args.family {
        Some(path) => TaskFamily::from_json(&std::fs::read_to_string(path)?)?,
        None => make_synthetic_family(&FamilyConfig::default(), args.family_seed)?,
    };
    Ok(AppState::new(sessions, family.tasks().cloned()))
}

#[tokio::main]
async fn main() -> ExitCode {
    let args = Args::parse();
    let state = match setup(&args) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let listener = match tokio::net::TcpListener::bind(&args.addr).await {
        Ok(l) => l,
        Err(e) => {
            eprintln!("error: cannot bind {}: {e}", args.addr);
            return ExitCode::from(3);
        }
    };
    eprintln!("listening on http://{}", args.addr);
    if let Err(e) = axum::serve(listener, router(state)).await {
        eprintln!("error: {e}");
        return ExitCode::from(3);
    }
    ExitCode::SUCCESS
}
