//! Orchestration layer: typed study configs, dispatch to the numerical
//! modules, and checksummed artifacts.

pub mod artifacts;
pub mod config;
pub mod plot;
pub mod studies;

use std::path::PathBuf;

use artifacts::{ArtifactError, ArtifactWriter, CheckOutcome, RunManifest, RunStatus, SCHEMA_VERSION};
use config::{ConfigError, StudyConfig, StudyKind};
use studies::{StudyContext, StudyError};

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("cannot prepare output directory: {0}")]
    Output(#[from] ArtifactError),
    #[error("cannot build worker pool: {0}")]
    Pool(String),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 2,
            _ => 1,
        }
    }
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

/// Run a validated study, writing artifacts and `manifest.json` under
/// `cfg.run.output`. Module errors do not return `Err`; they produce a
/// manifest with status `aborted` and the failing stage.
pub fn run_study(cfg: &StudyConfig, study: StudyKind) -> Result<RunManifest, RunError> {
    config::validate(cfg, study)?;
    let started = now();
    let out = ArtifactWriter::create(&cfg.run.output)?;
    let field = cfg.field().map_err(|e| ConfigError::Invalid {
        path: "kernel".into(),
        reason: e.to_string(),
    })?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.run.workers)
        .build()
        .map_err(|e| RunError::Pool(e.to_string()))?;
    let workers = pool.current_num_threads();

    let mut ctx = StudyContext::new(cfg, field, &out, cfg.run.workers);
    let outcome: Result<(), StudyError> = pool.install(|| studies::dispatch(&mut ctx, study));
    let first_failed = ctx.checks.iter().find(|c| !c.passed).map(|c| c.name.clone());
    let (status, failure_point) = match outcome {
        Err(e) => (RunStatus::Aborted, Some(format!("{}: {e}", ctx.stage))),
        Ok(()) if first_failed.is_some() => (RunStatus::Failed, first_failed),
        Ok(()) => (RunStatus::Passed, None),
    };
    let checks: Vec<CheckOutcome> = ctx.checks;
    let mut manifest = RunManifest {
        schema_version: SCHEMA_VERSION,
        study: study.name().into(),
        config_hash: cfg.hash(),
        code_version: env!("CARGO_PKG_VERSION").into(),
        seed: cfg.run.seed,
        started,
        finished: String::new(),
        workers,
        status,
        failure_point,
        checks,
        artifacts: Vec::new(),
    };
    manifest.artifacts = out.listing()?;
    manifest.finished = now();
    out.write_manifest(&manifest)?;
    Ok(manifest)
}

/// Load, validate and run; the usual entry point for tools and tests.
pub fn run_from_file(
    path: &std::path::Path,
    study: StudyKind,
    overrides: &config::Overrides,
) -> Result<RunManifest, RunError> {
    let cfg = config::load_config(path, study, overrides)?;
    run_study(&cfg, study)
}

/// Default output directory for a study kind under a base directory.
pub fn study_dir(base: &std::path::Path, study: StudyKind) -> PathBuf {
    base.join(study.name())
}
