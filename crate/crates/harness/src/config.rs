//! Study configuration: TOML ingestion with typo-safe key checking and
//! dry-run validation of every downstream precondition.

use std::fmt;
use std::path::{Path, PathBuf};

use chaoslab_core::concentration::PsiEntry;
use chaoslab_core::kernel::{build_kernel, KernelField, KernelSpec};
use chaoslab_core::liouville::LiouvilleSolver;
use chaoslab_core::meanfield::{MeanFieldSolver, PeriodicGrid};
use chaoslab_core::metrics::ChaosStudyConfig;
use chaoslab_core::particles::{EnsembleConfig, ForceEvaluator, SdeScheme};
use chaoslab_core::profile::InitialProfile;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use toml::{Table, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum StudyKind {
    PdeSolve,
    ParticlesRun,
    LiouvilleRun,
    ChaosStudy,
    VerifyInequalities,
    BenchForces,
}

impl StudyKind {
    pub fn name(self) -> &'static str {
        match self {
            StudyKind::PdeSolve => "pde-solve",
            StudyKind::ParticlesRun => "particles-run",
            StudyKind::LiouvilleRun => "liouville-run",
            StudyKind::ChaosStudy => "chaos-study",
            StudyKind::VerifyInequalities => "verify-inequalities",
            StudyKind::BenchForces => "bench-forces",
        }
    }

    /// Section holding this study's parameters.
    fn section(self) -> &'static str {
        match self {
            StudyKind::PdeSolve => "pde",
            StudyKind::ParticlesRun => "particles",
            StudyKind::LiouvilleRun => "liouville",
            StudyKind::ChaosStudy => "chaos",
            StudyKind::VerifyInequalities => "inequalities",
            StudyKind::BenchForces => "bench",
        }
    }

    /// Whether the study section may be omitted (all keys defaulted).
    fn section_optional(self) -> bool {
        matches!(self, StudyKind::VerifyInequalities | StudyKind::BenchForces)
    }

    /// Benchmarks measure wall-clock time and are exempt from checksum
    /// reproducibility.
    pub fn deterministic(self) -> bool {
        self != StudyKind::BenchForces
    }
}

impl fmt::Display for StudyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub workers: usize,
    #[serde(default = "default_output")]
    pub output: PathBuf,
}

fn default_output() -> PathBuf {
    PathBuf::from("chaoslab-out")
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            seed: 0,
            workers: 0,
            output: default_output(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PdeSection {
    pub grid: usize,
    pub dt: f64,
    pub horizon: f64,
    #[serde(default)]
    pub snapshots: Vec<f64>,
}

fn default_drift_factor() -> f64 {
    2.0
}

fn default_bins() -> usize {
    32
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParticlesSection {
    pub n_particles: usize,
    pub replicas: usize,
    pub dt: f64,
    pub horizon: f64,
    #[serde(default)]
    pub snapshots: Vec<f64>,
    #[serde(default)]
    pub evaluator: ForceEvaluator,
    #[serde(default = "default_drift_factor")]
    pub drift_factor: f64,
    #[serde(default = "default_bins")]
    pub bins: usize,
    /// Grid of an optional mean-field reference solve for an L1 check.
    #[serde(default)]
    pub reference_grid: Option<usize>,
    #[serde(default = "default_particle_l1_tol")]
    pub l1_tolerance: f64,
}

fn default_particle_l1_tol() -> f64 {
    0.05
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LiouvilleRunSpec {
    pub particles: usize,
    pub grid: usize,
    pub dt: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrossCheckSection {
    pub replicas: usize,
    pub horizon: f64,
    pub dt: f64,
    #[serde(default = "default_bins")]
    pub bins: usize,
    pub grid: usize,
    pub liouville_dt: f64,
    #[serde(default = "default_drift_factor")]
    pub drift_factor: f64,
    /// Deliberately wrong drift factor that the comparison must reject.
    #[serde(default = "default_control_factor")]
    pub control_drift_factor: f64,
}

fn default_control_factor() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LiouvilleSection {
    pub horizon: f64,
    pub runs: Vec<LiouvilleRunSpec>,
    #[serde(default = "default_stride")]
    pub stride: usize,
    #[serde(default = "default_residual_tol")]
    pub residual_tolerance: f64,
    #[serde(default = "default_envelope")]
    pub envelope_ratio: f64,
    #[serde(default)]
    pub crosscheck: Option<CrossCheckSection>,
}

fn default_stride() -> usize {
    100
}

fn default_residual_tol() -> f64 {
    1e-4
}

fn default_envelope() -> f64 {
    5.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChaosSection {
    pub ladder: Vec<usize>,
    pub replicas: usize,
    pub dt: f64,
    pub horizon: f64,
    #[serde(default = "default_chaos_bins")]
    pub bins: usize,
    pub grid: usize,
    /// Repeat the ladder with the constant kernel `lambda0 Id`.
    #[serde(default = "default_true")]
    pub control: bool,
    #[serde(default)]
    pub evaluator: ForceEvaluator,
}

fn default_chaos_bins() -> usize {
    16
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InequalitySection {
    #[serde(default = "default_instances")]
    pub instances: usize,
    #[serde(default = "default_outcomes")]
    pub max_outcomes: usize,
    #[serde(default = "default_max_particles")]
    pub max_particles: usize,
    #[serde(default = "default_psi_grid")]
    pub grid: usize,
    /// Kernel entry: `[i, j]` for a diffusion entry, `[i]` for a drift entry.
    #[serde(default = "default_entry")]
    pub entry: Vec<usize>,
    #[serde(default = "default_moment_ladder")]
    pub moment_ladder: Vec<usize>,
    #[serde(default = "default_moment_samples")]
    pub moment_samples: usize,
    #[serde(default = "default_true")]
    pub negative_control: bool,
    #[serde(default = "default_control_samples")]
    pub control_samples: usize,
}

fn default_instances() -> usize {
    1000
}
fn default_outcomes() -> usize {
    5
}
fn default_max_particles() -> usize {
    4
}
fn default_psi_grid() -> usize {
    64
}
fn default_entry() -> Vec<usize> {
    vec![0, 0]
}
fn default_moment_ladder() -> Vec<usize> {
    vec![10, 100, 1000, 10000]
}
fn default_moment_samples() -> usize {
    100_000
}
fn default_control_samples() -> usize {
    2000
}

impl Default for InequalitySection {
    fn default() -> Self {
        Self {
            instances: default_instances(),
            max_outcomes: default_outcomes(),
            max_particles: default_max_particles(),
            grid: default_psi_grid(),
            entry: default_entry(),
            moment_ladder: default_moment_ladder(),
            moment_samples: default_moment_samples(),
            negative_control: true,
            control_samples: default_control_samples(),
        }
    }
}

impl InequalitySection {
    pub fn psi_entry(&self) -> Option<PsiEntry> {
        match self.entry.as_slice() {
            [i, j] => Some(PsiEntry::A(*i, *j)),
            [i] => Some(PsiEntry::B(*i)),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchSection {
    #[serde(default = "default_bench_particles")]
    pub particles: usize,
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    #[serde(default = "default_speedup")]
    pub min_speedup: f64,
}

fn default_bench_particles() -> usize {
    10_000
}
fn default_repeats() -> usize {
    3
}
fn default_speedup() -> f64 {
    10.0
}

impl Default for BenchSection {
    fn default() -> Self {
        Self {
            particles: default_bench_particles(),
            repeats: default_repeats(),
            min_speedup: default_speedup(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    pub kernel: KernelSpec,
    #[serde(default)]
    pub initial: Option<InitialProfile>,
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub pde: Option<PdeSection>,
    #[serde(default)]
    pub particles: Option<ParticlesSection>,
    #[serde(default)]
    pub liouville: Option<LiouvilleSection>,
    #[serde(default)]
    pub chaos: Option<ChaosSection>,
    #[serde(default)]
    pub inequalities: Option<InequalitySection>,
    #[serde(default)]
    pub bench: Option<BenchSection>,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub output: Option<PathBuf>,
    pub workers: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ConfigError {
    Io { path: PathBuf, reason: String },
    Syntax(String),
    UnknownKey { path: String, suggestion: Option<String> },
    MissingKeys(Vec<String>),
    Invalid { path: String, reason: String },
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfigError::Io { path, reason } => write!(f, "cannot read {}: {reason}", path.display()),
            ConfigError::Syntax(msg) => write!(f, "malformed config: {msg}"),
            ConfigError::UnknownKey { path, suggestion } => {
                write!(f, "unknown key `{path}`")?;
                if let Some(s) = suggestion {
                    write!(f, " (did you mean `{s}`?)")?;
                }
                Ok(())
            }
            ConfigError::MissingKeys(keys) => {
                write!(f, "missing required keys: ")?;
                for (i, k) in keys.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "`{k}`")?;
                }
                Ok(())
            }
            ConfigError::Invalid { path, reason } => write!(f, "invalid `{path}`: {reason}"),
        }
    }
}

impl std::error::Error for ConfigError {}

fn invalid(path: &str, reason: impl fmt::Display) -> ConfigError {
    ConfigError::Invalid {
        path: path.to_string(),
        reason: reason.to_string(),
    }
}

/// Expected shape of the TOML document.
enum Node {
    Leaf,
    Table(&'static [(&'static str, bool, Node)]),
    TableArray(&'static [(&'static str, bool, Node)]),
}

const KERNEL_MODE: &[(&str, bool, Node)] = &[("k", true, Node::Leaf), ("A", true, Node::Leaf)];
const PROFILE_MODE: &[(&str, bool, Node)] = &[
    ("k", true, Node::Leaf),
    ("amplitude", true, Node::Leaf),
    ("phase", false, Node::Leaf),
];
const KERNEL: &[(&str, bool, Node)] = &[
    ("dimension", true, Node::Leaf),
    ("lambda0", true, Node::Leaf),
    ("modes", false, Node::TableArray(KERNEL_MODE)),
];
const INITIAL: &[(&str, bool, Node)] = &[
    ("dimension", true, Node::Leaf),
    ("modes", false, Node::TableArray(PROFILE_MODE)),
];
const RUN: &[(&str, bool, Node)] = &[
    ("seed", false, Node::Leaf),
    ("workers", false, Node::Leaf),
    ("output", false, Node::Leaf),
];
const PDE: &[(&str, bool, Node)] = &[
    ("grid", true, Node::Leaf),
    ("dt", true, Node::Leaf),
    ("horizon", true, Node::Leaf),
    ("snapshots", false, Node::Leaf),
];
const PARTICLES: &[(&str, bool, Node)] = &[
    ("n_particles", true, Node::Leaf),
    ("replicas", true, Node::Leaf),
    ("dt", true, Node::Leaf),
    ("horizon", true, Node::Leaf),
    ("snapshots", false, Node::Leaf),
    ("evaluator", false, Node::Leaf),
    ("drift_factor", false, Node::Leaf),
    ("bins", false, Node::Leaf),
    ("reference_grid", false, Node::Leaf),
    ("l1_tolerance", false, Node::Leaf),
];
const LIOUVILLE_RUN: &[(&str, bool, Node)] = &[
    ("particles", true, Node::Leaf),
    ("grid", true, Node::Leaf),
    ("dt", true, Node::Leaf),
];
const CROSSCHECK: &[(&str, bool, Node)] = &[
    ("replicas", true, Node::Leaf),
    ("horizon", true, Node::Leaf),
    ("dt", true, Node::Leaf),
    ("bins", false, Node::Leaf),
    ("grid", true, Node::Leaf),
    ("liouville_dt", true, Node::Leaf),
    ("drift_factor", false, Node::Leaf),
    ("control_drift_factor", false, Node::Leaf),
];
const LIOUVILLE: &[(&str, bool, Node)] = &[
    ("horizon", true, Node::Leaf),
    ("runs", true, Node::TableArray(LIOUVILLE_RUN)),
    ("stride", false, Node::Leaf),
    ("residual_tolerance", false, Node::Leaf),
    ("envelope_ratio", false, Node::Leaf),
    ("crosscheck", false, Node::Table(CROSSCHECK)),
];
const CHAOS: &[(&str, bool, Node)] = &[
    ("ladder", true, Node::Leaf),
    ("replicas", true, Node::Leaf),
    ("dt", true, Node::Leaf),
    ("horizon", true, Node::Leaf),
    ("bins", false, Node::Leaf),
    ("grid", true, Node::Leaf),
    ("control", false, Node::Leaf),
    ("evaluator", false, Node::Leaf),
];
const INEQUALITIES: &[(&str, bool, Node)] = &[
    ("instances", false, Node::Leaf),
    ("max_outcomes", false, Node::Leaf),
    ("max_particles", false, Node::Leaf),
    ("grid", false, Node::Leaf),
    ("entry", false, Node::Leaf),
    ("moment_ladder", false, Node::Leaf),
    ("moment_samples", false, Node::Leaf),
    ("negative_control", false, Node::Leaf),
    ("control_samples", false, Node::Leaf),
];
const BENCH: &[(&str, bool, Node)] = &[
    ("particles", false, Node::Leaf),
    ("repeats", false, Node::Leaf),
    ("min_speedup", false, Node::Leaf),
];
const ROOT: &[(&str, bool, Node)] = &[
    ("kernel", true, Node::Table(KERNEL)),
    ("initial", false, Node::Table(INITIAL)),
    ("run", false, Node::Table(RUN)),
    ("pde", false, Node::Table(PDE)),
    ("particles", false, Node::Table(PARTICLES)),
    ("liouville", false, Node::Table(LIOUVILLE)),
    ("chaos", false, Node::Table(CHAOS)),
    ("inequalities", false, Node::Table(INEQUALITIES)),
    ("bench", false, Node::Table(BENCH)),
];

fn join(prefix: &str, key: &str) -> String {
    if prefix.is_empty() {
        key.to_string()
    } else {
        format!("{prefix}.{key}")
    }
}

fn nearest(key: &str, candidates: &[(&'static str, bool, Node)]) -> Option<String> {
    candidates
        .iter()
        .map(|(name, _, _)| (strsim::damerau_levenshtein(key, name), *name))
        .filter(|(d, name)| *d <= 2.max(name.len() / 3))
        .min()
        .map(|(_, name)| name.to_string())
}

/// Walk the document: first unknown key aborts; missing required keys are
/// collected into `missing`.
fn check_table(
    table: &Table,
    schema: &'static [(&'static str, bool, Node)],
    prefix: &str,
    missing: &mut Vec<String>,
) -> Result<(), ConfigError> {
    let mut keys: Vec<&String> = table.keys().collect();
    keys.sort();
    for key in keys {
        let path = join(prefix, key);
        let Some((_, _, node)) = schema.iter().find(|(name, _, _)| name == key) else {
            return Err(ConfigError::UnknownKey {
                suggestion: nearest(key, schema).map(|s| join(prefix, &s)),
                path,
            });
        };
        match (node, &table[key.as_str()]) {
            (Node::Leaf, _) => {}
            (Node::Table(inner), Value::Table(t)) => check_table(t, inner, &path, missing)?,
            (Node::TableArray(inner), Value::Array(items)) => {
                for (i, item) in items.iter().enumerate() {
                    let item_path = format!("{path}[{i}]");
                    match item {
                        Value::Table(t) => check_table(t, inner, &item_path, missing)?,
                        _ => return Err(invalid(&item_path, "expected a table")),
                    }
                }
            }
            (Node::Table(_), _) => return Err(invalid(&path, "expected a table")),
            (Node::TableArray(_), _) => return Err(invalid(&path, "expected an array of tables")),
        }
    }
    for (name, required, _) in schema {
        if *required && !table.contains_key(*name) {
            missing.push(join(prefix, name));
        }
    }
    Ok(())
}

/// Parse and validate configuration text for `study`.
pub fn parse_config(text: &str, study: StudyKind, overrides: &Overrides) -> Result<StudyConfig, ConfigError> {
    let doc: Table = toml::from_str(text).map_err(|e| ConfigError::Syntax(e.message().to_string()))?;
    let mut missing = Vec::new();
    check_table(&doc, ROOT, "", &mut missing)?;
    let section = study.section();
    if !doc.contains_key(section) && !study.section_optional() {
        missing.push(section.to_string());
    }
    if !missing.is_empty() {
        return Err(ConfigError::MissingKeys(missing));
    }
    let mut cfg: StudyConfig =
        StudyConfig::deserialize(doc).map_err(|e| ConfigError::Syntax(e.message().to_string()))?;
    if let Some(seed) = overrides.seed {
        cfg.run.seed = seed;
    }
    if let Some(out) = &overrides.output {
        cfg.run.output = out.clone();
    }
    if let Some(w) = overrides.workers {
        cfg.run.workers = w;
    }
    if study == StudyKind::VerifyInequalities && cfg.inequalities.is_none() {
        cfg.inequalities = Some(InequalitySection::default());
    }
    if study == StudyKind::BenchForces && cfg.bench.is_none() {
        cfg.bench = Some(BenchSection::default());
    }
    validate(&cfg, study)?;
    Ok(cfg)
}

pub fn load_config(path: &Path, study: StudyKind, overrides: &Overrides) -> Result<StudyConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    parse_config(&text, study, overrides)
}

impl StudyConfig {
    pub fn field(&self) -> chaoslab_core::Result<KernelField> {
        build_kernel(&self.kernel)
    }

    pub fn initial_profile(&self) -> InitialProfile {
        self.initial
            .clone()
            .unwrap_or_else(|| InitialProfile::uniform(self.kernel.dimension))
    }

    /// SHA-256 of the effective configuration, excluding the output
    /// location and worker count (neither may influence results).
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.run.output = PathBuf::new();
        canonical.run.workers = 0;
        let json = serde_json::to_string(&canonical).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

fn check_grid(path: &str, dim: usize, n: usize, field: &KernelField) -> Result<PeriodicGrid, ConfigError> {
    let grid = PeriodicGrid::new(dim, n).map_err(|e| invalid(path, e))?;
    grid.check_resolves(field).map_err(|e| invalid(path, e))?;
    Ok(grid)
}

fn check_dt(path: &str, dt: f64, limit: f64) -> Result<(), ConfigError> {
    if !(dt > 0.0) {
        return Err(invalid(path, format!("must be positive, got {dt}")));
    }
    if dt > limit * (1.0 + 1e-12) {
        return Err(invalid(path, format!("{dt} exceeds the stability limit {limit:.4e}")));
    }
    Ok(())
}

fn check_horizon(path: &str, t: f64) -> Result<(), ConfigError> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(invalid(path, format!("must be a finite nonnegative time, got {t}")));
    }
    Ok(())
}

/// Dry-run check of every precondition the study will hit.
pub fn validate(cfg: &StudyConfig, study: StudyKind) -> Result<(), ConfigError> {
    let field = cfg.field().map_err(|e| invalid("kernel", e))?;
    let dim = field.dim();
    let profile = cfg.initial_profile();
    profile.validate().map_err(|e| invalid("initial", e))?;
    if profile.dimension != dim {
        return Err(invalid(
            "initial.dimension",
            format!("{} does not match kernel dimension {dim}", profile.dimension),
        ));
    }
    match study {
        StudyKind::PdeSolve => {
            let p = cfg.pde.as_ref().expect("checked by schema");
            if dim > 2 {
                return Err(invalid("kernel.dimension", "mean-field solves support d = 1, 2"));
            }
            let grid = check_grid("pde.grid", dim, p.grid, &field)?;
            if 2 * profile.max_wave() >= p.grid as i64 {
                return Err(invalid("pde.grid", "too coarse for the initial profile"));
            }
            let solver = MeanFieldSolver::new(&field, grid).map_err(|e| invalid("pde.grid", e))?;
            check_dt("pde.dt", p.dt, solver.max_stable_dt())?;
            check_horizon("pde.horizon", p.horizon)?;
        }
        StudyKind::ParticlesRun => {
            let p = cfg.particles.as_ref().expect("checked by schema");
            particles_config(cfg, p)
                .validate()
                .map_err(|e| invalid("particles", e))?;
            if p.bins < 4 {
                return Err(invalid("particles.bins", "need at least 4 bins"));
            }
            if let Some(n) = p.reference_grid {
                if dim > 2 {
                    return Err(invalid("particles.reference_grid", "reference solves support d = 1, 2"));
                }
                check_grid("particles.reference_grid", dim, n, &field)?;
                if 2 * p.bins > n {
                    return Err(invalid(
                        "particles.bins",
                        "bin width must cover at least two grid spacings",
                    ));
                }
            }
        }
        StudyKind::LiouvilleRun => {
            let l = cfg.liouville.as_ref().expect("checked by schema");
            if dim != 1 {
                return Err(invalid("kernel.dimension", "Liouville solves need d = 1"));
            }
            check_horizon("liouville.horizon", l.horizon)?;
            if l.runs.is_empty() {
                return Err(invalid("liouville.runs", "need at least one run"));
            }
            if l.stride == 0 {
                return Err(invalid("liouville.stride", "must be >= 1"));
            }
            for (i, r) in l.runs.iter().enumerate() {
                let path = format!("liouville.runs[{i}]");
                let solver = LiouvilleSolver::new(&field, r.particles, r.grid).map_err(|e| invalid(&path, e))?;
                let grid = check_grid(&format!("{path}.grid"), 1, r.grid, &field)?;
                let mf = MeanFieldSolver::new(&field, grid).map_err(|e| invalid(&path, e))?;
                check_dt(
                    &format!("{path}.dt"),
                    r.dt,
                    solver.max_stable_dt().min(mf.max_stable_dt()),
                )?;
                if 2 * profile.max_wave() >= r.grid as i64 {
                    return Err(invalid(&format!("{path}.grid"), "too coarse for the initial profile"));
                }
            }
            if let Some(c) = &l.crosscheck {
                let solver =
                    LiouvilleSolver::new(&field, 2, c.grid).map_err(|e| invalid("liouville.crosscheck.grid", e))?;
                let grid = check_grid("liouville.crosscheck.grid", 1, c.grid, &field)?;
                let mf = MeanFieldSolver::new(&field, grid).map_err(|e| invalid("liouville.crosscheck", e))?;
                check_dt(
                    "liouville.crosscheck.liouville_dt",
                    c.liouville_dt,
                    solver.max_stable_dt().min(mf.max_stable_dt()),
                )?;
                check_horizon("liouville.crosscheck.horizon", c.horizon)?;
                if c.replicas == 0 || !(c.dt > 0.0) || c.bins < 4 || 2 * c.bins > c.grid {
                    return Err(invalid(
                        "liouville.crosscheck",
                        "need replicas >= 1, dt > 0 and 4 <= bins <= grid/2",
                    ));
                }
            }
        }
        StudyKind::ChaosStudy => {
            let c = cfg.chaos.as_ref().expect("checked by schema");
            if dim > 2 {
                return Err(invalid("kernel.dimension", "chaos studies support d = 1, 2"));
            }
            let grid = check_grid("chaos.grid", dim, c.grid, &field)?;
            MeanFieldSolver::new(&field, grid).map_err(|e| invalid("chaos.grid", e))?;
            check_horizon("chaos.horizon", c.horizon)?;
            if !(c.dt > 0.0) {
                return Err(invalid("chaos.dt", "must be positive"));
            }
            chaos_config(cfg, c, cfg.run.seed)
                .validate(dim)
                .map_err(|e| invalid("chaos", e))?;
        }
        StudyKind::VerifyInequalities => {
            let q = cfg.inequalities.as_ref().expect("defaulted");
            if dim > 2 {
                return Err(invalid(
                    "kernel.dimension",
                    "test functions are built on d = 1, 2 grids",
                ));
            }
            check_grid("inequalities.grid", dim, q.grid, &field)?;
            match q.psi_entry() {
                Some(PsiEntry::A(i, j)) if i < dim && j < dim => {}
                Some(PsiEntry::B(i)) if i < dim => {}
                _ => {
                    return Err(invalid(
                        "inequalities.entry",
                        "expected [i, j] or [i] within the dimension",
                    ))
                }
            }
            if q.moment_ladder.is_empty() || q.moment_ladder.contains(&0) || q.moment_samples < 2 {
                return Err(invalid(
                    "inequalities",
                    "need a ladder of N >= 1 and at least 2 samples",
                ));
            }
            if q.max_outcomes == 0 || q.max_particles == 0 || q.max_outcomes.pow(q.max_particles as u32) > 1 << 22 {
                return Err(invalid(
                    "inequalities",
                    "discrete instance sizes must be positive and enumerable",
                ));
            }
        }
        StudyKind::BenchForces => {
            let b = cfg.bench.as_ref().expect("defaulted");
            if b.particles < 2 || b.repeats == 0 {
                return Err(invalid("bench", "need at least 2 particles and 1 repeat"));
            }
        }
    }
    Ok(())
}

pub fn particles_config(cfg: &StudyConfig, p: &ParticlesSection) -> EnsembleConfig {
    EnsembleConfig {
        replicas: p.replicas,
        n_particles: p.n_particles,
        dt: p.dt,
        horizon: p.horizon,
        initial: cfg.initial_profile(),
        master_seed: cfg.run.seed,
        snapshot_times: p.snapshots.clone(),
        scheme: SdeScheme {
            evaluator: p.evaluator,
            drift_factor: p.drift_factor,
        },
    }
}

pub fn chaos_config(cfg: &StudyConfig, c: &ChaosSection, seed: u64) -> ChaosStudyConfig {
    ChaosStudyConfig {
        ladder: c.ladder.clone(),
        replicas: c.replicas,
        dt: c.dt,
        horizon: c.horizon,
        bins: c.bins,
        grid_n: c.grid,
        initial: cfg.initial_profile(),
        master_seed: seed,
        scheme: SdeScheme {
            evaluator: c.evaluator,
            ..SdeScheme::default()
        },
        config_hash: cfg.hash(),
    }
}
