//! Study runners. Each one writes its artifacts and records named checks;
//! module errors abort the study with the current stage as failure point.

use std::f64::consts::PI;
use std::time::Instant;

use chaoslab_core::concentration::{
    build_psi, change_of_measure_check, exp_moment_check, psi_threshold, random_instance, ExpMomentReport,
};
use chaoslab_core::kernel::{build_kernel, wrap, KernelField, KernelSpec};
use chaoslab_core::liouville::{
    evolve_coupled, relative_entropy_to_tensor, LiouvilleDensity, LiouvilleSolver, GIBBS_TOL,
};
use chaoslab_core::meanfield::{log_gradient_bound, DensityField, MeanFieldSolver, PeriodicGrid, MASS_TOL};
use chaoslab_core::metrics::{
    ckp_audit_grid, histogram, l1_distance, marginal_error_study, nh_boundedness_check, noise_floor, BinnedMasses,
    ChaosRow, ChaosStudyReport, NhSeries,
};
use chaoslab_core::particles::{forces_naive, forces_spectral, run_ensemble, EnsembleConfig, SdeScheme};
use chaoslab_core::profile::InitialProfile;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::artifacts::{ArtifactError, ArtifactWriter, CheckOutcome, SCHEMA_VERSION};
use crate::config::{chaos_config, particles_config, CrossCheckSection, StudyConfig, StudyKind};
use crate::plot::{inverse_sqrt_reference, Plot, Series};

#[derive(Debug, thiserror::Error)]
pub enum StudyError {
    #[error(transparent)]
    Core(#[from] chaoslab_core::Error),
    #[error(transparent)]
    Artifact(#[from] ArtifactError),
}

pub type StudyResult<T> = std::result::Result<T, StudyError>;

pub struct StudyContext<'a> {
    pub cfg: &'a StudyConfig,
    pub field: KernelField,
    pub out: &'a ArtifactWriter,
    pub workers: usize,
    pub checks: Vec<CheckOutcome>,
    pub stage: String,
}

impl<'a> StudyContext<'a> {
    pub fn new(cfg: &'a StudyConfig, field: KernelField, out: &'a ArtifactWriter, workers: usize) -> Self {
        Self {
            cfg,
            field,
            out,
            workers,
            checks: Vec::new(),
            stage: "setup".into(),
        }
    }

    fn stage(&mut self, s: impl Into<String>) {
        self.stage = s.into();
    }

    fn check(&mut self, name: impl Into<String>, passed: bool, detail: impl Into<String>) {
        self.checks.push(CheckOutcome {
            name: name.into(),
            passed,
            detail: detail.into(),
        });
    }
}

pub fn dispatch(ctx: &mut StudyContext<'_>, study: StudyKind) -> StudyResult<()> {
    match study {
        StudyKind::PdeSolve => pde_solve(ctx),
        StudyKind::ParticlesRun => particles_run(ctx),
        StudyKind::LiouvilleRun => liouville_run(ctx),
        StudyKind::ChaosStudy => chaos_study(ctx),
        StudyKind::VerifyInequalities => verify_inequalities(ctx),
        StudyKind::BenchForces => bench_forces(ctx),
    }
}

/// `f0` evolved by `d_t f = lambda Lap f`, mode by mode.
pub fn heat_solution(profile: &InitialProfile, lambda: f64, t: f64, v: &[f64]) -> f64 {
    1.0 + profile
        .modes
        .iter()
        .map(|m| {
            let k2: f64 = m.k.iter().map(|&k| (k * k) as f64).sum();
            let dot: f64 = m.k.iter().zip(v).map(|(&k, &x)| k as f64 * x).sum();
            m.amplitude * (2.0 * PI * dot + m.phase).cos() * (-4.0 * PI * PI * lambda * k2 * t).exp()
        })
        .sum::<f64>()
}

#[derive(Serialize)]
struct DensityRow {
    schema_version: u32,
    time: f64,
    node: usize,
    v1: f64,
    v2: Option<f64>,
    density: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct PdeSnapshotSummary {
    pub time: f64,
    pub mass: f64,
    pub min: f64,
    pub max: f64,
    pub entropy: f64,
    pub log_gradient_bound: f64,
    /// Sup distance to the closed-form heat solution (constant kernels).
    pub heat_error: Option<f64>,
}

fn pde_solve(ctx: &mut StudyContext<'_>) -> StudyResult<()> {
    let p = ctx.cfg.pde.clone().expect("validated");
    let profile = ctx.cfg.initial_profile();
    let dim = ctx.field.dim();
    ctx.stage("pde: initial density");
    let grid = PeriodicGrid::new(dim, p.grid)?;
    let f0 = DensityField::from_profile(grid, &profile)?;
    ctx.stage("pde: solve");
    let mut solver = MeanFieldSolver::new(&ctx.field, grid)?;
    let mut snaps = vec![f0.clone()];
    snaps.extend(solver.solve(&f0, p.horizon, p.dt, &p.snapshots)?);
    if p.horizon == 0.0 {
        snaps.truncate(1);
    }

    ctx.stage("pde: diagnostics");
    let mut rows = Vec::new();
    let mut summary = Vec::new();
    for f in &snaps {
        for (idx, &density) in f.values().iter().enumerate() {
            let v = grid.node(idx);
            rows.push(DensityRow {
                schema_version: SCHEMA_VERSION,
                time: f.time(),
                node: idx,
                v1: v[0],
                v2: (dim == 2).then_some(v[1]),
                density,
            });
        }
        let heat_error = ctx.field.is_constant().then(|| {
            f.values()
                .iter()
                .enumerate()
                .map(|(idx, &x)| {
                    let v = grid.node(idx);
                    (x - heat_solution(&profile, ctx.field.lambda0(), f.time(), &v[..dim])).abs()
                })
                .fold(0.0, f64::max)
        });
        summary.push(PdeSnapshotSummary {
            time: f.time(),
            mass: f.mass(),
            min: f.min(),
            max: f.max(),
            entropy: f.entropy(),
            log_gradient_bound: log_gradient_bound(f)?,
            heat_error,
        });
    }
    let mass_err = summary.iter().map(|s| (s.mass - 1.0).abs()).fold(0.0, f64::max);
    ctx.check(
        "mass conserved",
        mass_err <= MASS_TOL,
        format!("max |mass - 1| = {mass_err:.3e}"),
    );
    let min = summary.iter().map(|s| s.min).fold(f64::INFINITY, f64::min);
    ctx.check("density positive", min > 0.0, format!("min f = {min:.6e}"));
    let finite = summary
        .iter()
        .all(|s| s.entropy.is_finite() && s.log_gradient_bound.is_finite());
    ctx.check("entropy and log-gradient finite", finite, "");
    if ctx.field.is_constant() {
        let err = summary.iter().filter_map(|s| s.heat_error).fold(0.0, f64::max);
        ctx.check("heat oracle", err <= 1e-6, format!("max sup error = {err:.3e}"));
    }

    ctx.stage("pde: artifacts");
    ctx.out.csv("pde_density.csv", &rows)?;
    ctx.out.json("pde_summary.json", "pde-solve", &summary)?;
    let mut plot = Plot::new(
        "Mean-field density",
        if dim == 1 { "v" } else { "t" },
        if dim == 1 { "f" } else { "entropy" },
    );
    if dim == 1 {
        for f in &snaps {
            let pts = f
                .values()
                .iter()
                .enumerate()
                .map(|(i, &x)| (grid.node(i)[0], x))
                .collect();
            plot = plot.with(Series::line(format!("t = {}", f.time()), pts));
        }
    } else {
        plot = plot.with(Series::line("int f log f", summary.iter().map(|s| (s.time, s.entropy)).collect()).markers());
    }
    ctx.out.text("pde_density.svg", &plot.render())?;
    Ok(())
}

#[derive(Serialize)]
struct HistogramRow {
    schema_version: u32,
    time: f64,
    cell: usize,
    mass: f64,
    reference_mass: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ParticleSnapshotSummary {
    pub time: f64,
    pub samples: usize,
    pub l1_to_reference: Option<f64>,
    pub noise_floor: Option<f64>,
}

fn particles_run(ctx: &mut StudyContext<'_>) -> StudyResult<()> {
    let p = ctx.cfg.particles.clone().expect("validated");
    let ens = particles_config(ctx.cfg, &p);
    let dim = ctx.field.dim();
    ctx.stage("particles: ensemble");
    let out = run_ensemble(&ens, &ctx.field, ctx.workers)?;

    let reference: Option<Vec<BinnedMasses>> = match p.reference_grid {
        Some(n) => {
            ctx.stage("particles: mean-field reference");
            let grid = PeriodicGrid::new(dim, n)?;
            let f0 = DensityField::from_profile(grid, &ens.initial)?;
            let mut solver = MeanFieldSolver::new(&ctx.field, grid)?;
            let dt = p.dt.min(0.5 * solver.max_stable_dt());
            let times: Vec<f64> = out.snapshots.iter().map(|s| s.time).collect();
            let mut fs = vec![f0.clone()];
            fs.extend(solver.solve(&f0, p.horizon, dt, &times)?);
            let masses = out
                .snapshots
                .iter()
                .map(|s| {
                    let f = fs
                        .iter()
                        .find(|f| (f.time() - s.time).abs() < 1e-12)
                        .expect("solve hits every snapshot time");
                    BinnedMasses::from_density(f, p.bins)
                })
                .collect::<chaoslab_core::Result<_>>()?;
            Some(masses)
        }
        None => None,
    };

    ctx.stage("particles: histograms");
    let mut rows = Vec::new();
    let mut summary = Vec::new();
    let mut in_range = true;
    for (s, snap) in out.snapshots.iter().enumerate() {
        let pooled = snap.pooled();
        in_range &= pooled.iter().all(|x| x.is_finite() && (0.0..1.0).contains(x));
        let hist = histogram(&pooled, dim, p.bins)?;
        let refm = reference.as_ref().map(|r| &r[s]);
        for (cell, &mass) in hist.cells.masses.iter().enumerate() {
            rows.push(HistogramRow {
                schema_version: SCHEMA_VERSION,
                time: snap.time,
                cell,
                mass,
                reference_mass: refm.map(|r| r.masses[cell]),
            });
        }
        summary.push(ParticleSnapshotSummary {
            time: snap.time,
            samples: hist.samples,
            l1_to_reference: refm.map(|r| l1_distance(&hist.cells, r)).transpose()?,
            noise_floor: refm.map(|r| noise_floor(&r.masses, hist.samples)),
        });
    }
    ctx.check("positions finite and wrapped", in_range, "");
    if reference.is_some() {
        let worst = summary.iter().filter_map(|s| s.l1_to_reference).fold(0.0, f64::max);
        ctx.check(
            "marginal matches mean-field reference",
            worst <= p.l1_tolerance,
            format!("max L1 = {worst:.4e}, tolerance {}", p.l1_tolerance),
        );
    }

    ctx.stage("particles: artifacts");
    ctx.out.csv("particles_histogram.csv", &rows)?;
    ctx.out.json("particles_summary.json", "particles-run", &summary)?;
    if dim == 1 {
        let term = out.terminal();
        let hist = histogram(&term.pooled(), 1, p.bins)?;
        let b = p.bins as f64;
        let centers = |m: &[f64]| -> Vec<(f64, f64)> {
            m.iter()
                .enumerate()
                .map(|(i, &x)| ((i as f64 + 0.5) / b, x * b))
                .collect()
        };
        let mut plot = Plot::new("Pooled particle histogram", "v", "density")
            .with(Series::line("particles", centers(&hist.cells.masses)).markers());
        if let Some(r) = &reference {
            plot = plot.with(Series::line("mean field", centers(&r[r.len() - 1].masses)).dashed());
        }
        ctx.out.text("particles_histogram.svg", &plot.render())?;
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct LiouvilleRow {
    pub schema_version: u32,
    pub particles: usize,
    pub grid: usize,
    pub time: f64,
    pub mass: f64,
    pub relative_entropy: f64,
    pub marginal_entropy: f64,
    pub pair_entropy: Option<f64>,
    pub marginal_l1: f64,
    pub ckp_bound: f64,
    pub exchange_asymmetry: f64,
    pub i1: f64,
    pub i2: f64,
    pub i3: f64,
    pub i1_bound: f64,
    pub i23_bound: f64,
    pub entropy_residual: f64,
}

/// One coupled Liouville/mean-field run with every per-snapshot audit.
pub fn liouville_rows(
    field: &KernelField,
    profile: &InitialProfile,
    particles: usize,
    grid_n: usize,
    horizon: f64,
    dt: f64,
    stride: usize,
) -> chaoslab_core::Result<Vec<LiouvilleRow>> {
    let grid = PeriodicGrid::new(1, grid_n)?;
    let f0 = DensityField::from_profile(grid, profile)?;
    let traj = evolve_coupled(field, &f0, particles, horizon, dt, stride)?;
    let solver = LiouvilleSolver::new(field, particles, grid_n)?;
    let mf = MeanFieldSolver::new(field, grid)?;
    let residuals = solver.entropy_solution_residual(&traj.liouville)?;
    traj.liouville
        .iter()
        .zip(&traj.meanfield)
        .zip(&residuals)
        .map(|((fl, fm), res)| {
            let m1 = fl.marginal(1)?;
            let h1 = relative_entropy_to_tensor(m1.values(), grid_n, 1, fm)?;
            let pair_entropy = if particles > 2 {
                Some(relative_entropy_to_tensor(fl.marginal(2)?.values(), grid_n, 2, fm)?)
            } else {
                None
            };
            let ckp = ckp_audit_grid(&m1, fm, 1)?;
            let eb = solver.entropy_balance(fl, fm, &mf)?;
            Ok(LiouvilleRow {
                schema_version: SCHEMA_VERSION,
                particles,
                grid: grid_n,
                time: fl.time(),
                mass: fl.mass(),
                relative_entropy: eb.relative_entropy,
                marginal_entropy: h1,
                pair_entropy,
                marginal_l1: ckp.l1,
                ckp_bound: (2.0 * h1.max(0.0)).sqrt(),
                exchange_asymmetry: fl.exchange_asymmetry(),
                i1: eb.i1,
                i2: eb.i2,
                i3: eb.i3,
                i1_bound: eb.i1_bound,
                i23_bound: eb.i23_bound,
                entropy_residual: res.residual,
            })
        })
        .collect()
}

/// Named audits over the rows of one run; `(name, passed, detail)`.
pub fn liouville_audits(rows: &[LiouvilleRow], residual_tol: f64) -> Vec<(String, bool, String)> {
    let tag = format!("N={} n={}", rows[0].particles, rows[0].grid);
    let mut out = Vec::new();
    let h0 = rows[0].relative_entropy;
    out.push((
        format!("{tag}: tensor initial data has H_N(0) = 0"),
        h0.abs() <= 1e-10,
        format!("H_N(0) = {h0:.3e}"),
    ));
    let hmin = rows.iter().map(|r| r.relative_entropy).fold(f64::INFINITY, f64::min);
    out.push((
        format!("{tag}: H_N nonnegative"),
        hmin >= -GIBBS_TOL,
        format!("min H_N = {hmin:.3e}"),
    ));
    let sub = rows.iter().all(|r| {
        r.marginal_entropy <= r.relative_entropy + GIBBS_TOL
            && r.pair_entropy
                .is_none_or(|h2| r.marginal_entropy <= h2 + GIBBS_TOL && h2 <= r.relative_entropy + GIBBS_TOL)
    });
    out.push((format!("{tag}: marginal entropies subadditive"), sub, String::new()));
    let ckp_gap = rows
        .iter()
        .map(|r| r.marginal_l1 - r.ckp_bound)
        .fold(f64::NEG_INFINITY, f64::max);
    out.push((
        format!("{tag}: marginal L1 within sqrt(2 H_1)"),
        ckp_gap <= 1e-10,
        format!("max(L1 - bound) = {ckp_gap:.3e}"),
    ));
    let mass = rows.iter().map(|r| (r.mass - 1.0).abs()).fold(0.0, f64::max);
    out.push((
        format!("{tag}: mass conserved"),
        mass <= MASS_TOL,
        format!("max |mass - 1| = {mass:.3e}"),
    ));
    let asym = rows.iter().map(|r| r.exchange_asymmetry).fold(0.0, f64::max);
    out.push((
        format!("{tag}: exchangeable"),
        asym <= 1e-10,
        format!("max asymmetry = {asym:.3e}"),
    ));
    let slack = |v: f64, bound: f64| v - bound - 1e-9 * (1.0 + v.abs().max(bound.abs()));
    let eb_ok = rows
        .iter()
        .all(|r| slack(r.i1, r.i1_bound) <= 0.0 && slack(r.i2 + r.i3, r.i23_bound) <= 0.0);
    out.push((
        format!("{tag}: entropy balance terms within bounds"),
        eb_ok,
        String::new(),
    ));
    let res = rows.iter().map(|r| r.entropy_residual.abs()).fold(0.0, f64::max);
    out.push((
        format!("{tag}: entropy-solution residual"),
        res <= residual_tol,
        format!("max |residual| = {res:.3e}, tolerance {residual_tol:e}"),
    ));
    out
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct DistanceCheck {
    pub drift_factor: f64,
    pub samples: usize,
    pub l1: f64,
    pub noise_floor: f64,
    /// `l1 <= 3 * noise_floor`.
    pub within: bool,
}

/// Monte Carlo pair ensembles against the exact two-particle law: the
/// one-particle marginal and the law of the separation `v^1 - v^2`, each
/// for the model drift factor and for a deliberately wrong one.
#[derive(Debug, Clone, Serialize)]
pub struct FactorCrossCheck {
    pub horizon: f64,
    pub bins: usize,
    pub marginal: DistanceCheck,
    pub marginal_control: DistanceCheck,
    pub separation: DistanceCheck,
    pub separation_control: DistanceCheck,
    pub exact_marginal: Vec<f64>,
    pub exact_separation: Vec<f64>,
}

impl FactorCrossCheck {
    /// Model drift accepted and wrong drift rejected by the marginal test.
    pub fn marginal_discriminates(&self) -> bool {
        self.marginal.within && !self.marginal_control.within
    }

    pub fn separation_discriminates(&self) -> bool {
        self.separation.within && !self.separation_control.within
    }
}

pub fn factor_crosscheck(
    field: &KernelField,
    profile: &InitialProfile,
    cc: &CrossCheckSection,
    seed: u64,
    workers: usize,
) -> chaoslab_core::Result<FactorCrossCheck> {
    let grid = PeriodicGrid::new(1, cc.grid)?;
    let f0 = DensityField::from_profile(grid, profile)?;
    let solver = LiouvilleSolver::new(field, 2, cc.grid)?;
    let exact = solver
        .solve(
            &LiouvilleDensity::tensor(&f0, 2)?,
            cc.horizon,
            cc.liouville_dt,
            usize::MAX,
        )?
        .pop()
        .expect("solve keeps the final state");
    let marginal = BinnedMasses::from_density(&exact.marginal(1)?, cc.bins)?;
    let separation = BinnedMasses::from_density(&exact.separation_law()?, cc.bins)?;

    let run = |factor: f64| -> chaoslab_core::Result<(DistanceCheck, DistanceCheck)> {
        let ens = EnsembleConfig {
            replicas: cc.replicas,
            n_particles: 2,
            dt: cc.dt,
            horizon: cc.horizon,
            initial: profile.clone(),
            master_seed: seed,
            snapshot_times: Vec::new(),
            scheme: SdeScheme {
                drift_factor: factor,
                ..SdeScheme::default()
            },
        };
        let out = run_ensemble(&ens, field, workers)?;
        let term = out.terminal();
        let pooled = term.pooled();
        let h1 = histogram(&pooled, 1, cc.bins)?;
        let seps: Vec<f64> = term.replicas.iter().map(|r| wrap(r[0] - r[1])).collect();
        let hs = histogram(&seps, 1, cc.bins)?;
        let judge = |h: &chaoslab_core::metrics::EmpiricalDensity,
                     exact: &BinnedMasses|
         -> chaoslab_core::Result<DistanceCheck> {
            let l1 = l1_distance(&h.cells, exact)?;
            let floor = noise_floor(&exact.masses, h.samples);
            Ok(DistanceCheck {
                drift_factor: factor,
                samples: h.samples,
                l1,
                noise_floor: floor,
                within: l1 <= 3.0 * floor,
            })
        };
        Ok((judge(&h1, &marginal)?, judge(&hs, &separation)?))
    };
    let (m, s) = run(cc.drift_factor)?;
    let (mc, sc) = run(cc.control_drift_factor)?;
    Ok(FactorCrossCheck {
        horizon: cc.horizon,
        bins: cc.bins,
        marginal: m,
        marginal_control: mc,
        separation: s,
        separation_control: sc,
        exact_marginal: marginal.masses,
        exact_separation: separation.masses,
    })
}

#[derive(Serialize)]
struct LiouvilleSummary<'a> {
    envelope_ratio: f64,
    envelope_limit: f64,
    max_scaled: &'a [(usize, f64)],
    growth_fit: Option<(f64, f64)>,
    crosscheck: Option<&'a FactorCrossCheck>,
}

fn liouville_run(ctx: &mut StudyContext<'_>) -> StudyResult<()> {
    let l = ctx.cfg.liouville.clone().expect("validated");
    let profile = ctx.cfg.initial_profile();
    let mut all = Vec::new();
    let mut series = Vec::new();
    for r in &l.runs {
        ctx.stage(format!("liouville: N={} n={}", r.particles, r.grid));
        let rows = liouville_rows(&ctx.field, &profile, r.particles, r.grid, l.horizon, r.dt, l.stride)?;
        for (name, ok, detail) in liouville_audits(&rows, l.residual_tolerance) {
            ctx.check(name, ok, detail);
        }
        series.push(NhSeries {
            n_particles: r.particles,
            points: rows.iter().map(|x| (x.time, x.relative_entropy)).collect(),
        });
        all.extend(rows);
    }
    ctx.stage("liouville: N H_N envelope");
    let nh = nh_boundedness_check(&series)?;
    ctx.check(
        "N H_N envelope across particle numbers",
        nh.envelope_ratio.is_finite() && nh.envelope_ratio <= l.envelope_ratio,
        format!("ratio = {:.4}, limit {}", nh.envelope_ratio, l.envelope_ratio),
    );
    let crosscheck = match &l.crosscheck {
        Some(cc) => {
            ctx.stage("liouville: drift-factor cross-validation");
            let x = factor_crosscheck(&ctx.field, &profile, cc, ctx.cfg.run.seed, ctx.workers)?;
            let d = |c: &DistanceCheck| {
                format!(
                    "factor {}: L1 = {:.4e}, 3 x floor = {:.4e}",
                    c.drift_factor,
                    c.l1,
                    3.0 * c.noise_floor
                )
            };
            ctx.check("pair marginal matches exact law", x.marginal.within, d(&x.marginal));
            ctx.check(
                "pair marginal rejects wrong drift factor",
                !x.marginal_control.within,
                d(&x.marginal_control),
            );
            ctx.check(
                "pair separation matches exact law",
                x.separation.within,
                d(&x.separation),
            );
            ctx.check(
                "pair separation rejects wrong drift factor",
                !x.separation_control.within,
                d(&x.separation_control),
            );
            Some(x)
        }
        None => None,
    };

    ctx.stage("liouville: artifacts");
    ctx.out.csv("liouville_entropy.csv", &all)?;
    ctx.out.json(
        "liouville_summary.json",
        "liouville-run",
        &LiouvilleSummary {
            envelope_ratio: nh.envelope_ratio,
            envelope_limit: l.envelope_ratio,
            max_scaled: &nh.max_scaled,
            growth_fit: nh.c1.zip(nh.c2),
            crosscheck: crosscheck.as_ref(),
        },
    )?;
    let mut plot = Plot::new("Scaled relative entropy N H_N(t)", "t", "N H_N");
    for s in &series {
        let pts = s.points.iter().map(|&(t, h)| (t, s.n_particles as f64 * h)).collect();
        plot = plot.with(Series::line(format!("N = {}", s.n_particles), pts));
    }
    ctx.out.text("liouville_entropy.svg", &plot.render())?;
    Ok(())
}

#[derive(Serialize)]
struct ChaosCsvRow<'a> {
    schema_version: u32,
    kernel: &'a str,
    n_particles: usize,
    replicas: usize,
    horizon: f64,
    l1_error: f64,
    statistical_error: f64,
    seed: u64,
    config_hash: &'a str,
    included: bool,
    note: &'a str,
}

fn csv_rows<'a>(kernel: &'a str, rows: &'a [ChaosRow]) -> impl Iterator<Item = ChaosCsvRow<'a>> {
    rows.iter().map(move |r| ChaosCsvRow {
        schema_version: SCHEMA_VERSION,
        kernel,
        n_particles: r.n_particles,
        replicas: r.replicas,
        horizon: r.horizon,
        l1_error: r.l1_error,
        statistical_error: r.statistical_error,
        seed: r.seed,
        config_hash: &r.config_hash,
        included: r.included,
        note: &r.note,
    })
}

/// A ladder shows a significant trend when a fit exists and its slope is
/// more than two standard errors (or 0.3 with no error estimate) from 0.
pub fn shows_trend(report: &ChaosStudyReport) -> bool {
    match report.fit {
        None => false,
        Some(f) => match f.slope_stderr {
            Some(se) => f.slope.abs() > 2.0 * se,
            None => f.slope.abs() >= 0.3,
        },
    }
}

#[derive(Serialize)]
struct ChaosSummary<'a> {
    model: &'a ChaosStudyReport,
    control: Option<&'a ChaosStudyReport>,
    slope_band: (f64, f64),
}

fn chaos_study(ctx: &mut StudyContext<'_>) -> StudyResult<()> {
    let c = ctx.cfg.chaos.clone().expect("validated");
    let dim = ctx.field.dim();
    ctx.stage("chaos: model ladder");
    let cc = chaos_config(ctx.cfg, &c, ctx.cfg.run.seed);
    let report = marginal_error_study(&cc, &ctx.field, ctx.workers)?;
    let fit_detail = |r: &ChaosStudyReport| match r.fit {
        Some(f) => format!(
            "slope = {:.3} (stderr {}), {} of {} rows kept",
            f.slope,
            f.slope_stderr.map_or("n/a".into(), |s| format!("{s:.3}")),
            f.points,
            r.rows.len()
        ),
        None => format!(
            "no fit: {} of {} rows excluded by the noise budget",
            r.excluded().count(),
            r.rows.len()
        ),
    };
    ctx.check(
        "marginal error slope within band",
        report.slope_in_band == Some(true),
        fit_detail(&report),
    );
    let control = if c.control {
        ctx.stage("chaos: constant-kernel control ladder");
        let flat = build_kernel(&KernelSpec::constant(dim, ctx.field.lambda0()))?;
        let r = marginal_error_study(&cc, &flat, ctx.workers)?;
        ctx.check(
            "constant-kernel control shows no trend",
            !shows_trend(&r),
            fit_detail(&r),
        );
        Some(r)
    } else {
        None
    };

    ctx.stage("chaos: artifacts");
    let mut rows: Vec<ChaosCsvRow> = csv_rows("model", &report.rows).collect();
    if let Some(r) = &control {
        rows.extend(csv_rows("control", &r.rows));
    }
    ctx.out.csv("chaos_rows.csv", &rows)?;
    ctx.out.json(
        "chaos_summary.json",
        "chaos-study",
        &ChaosSummary {
            model: &report,
            control: control.as_ref(),
            slope_band: chaoslab_core::metrics::SLOPE_BAND,
        },
    )?;
    let pts: Vec<(f64, f64)> = report.rows.iter().map(|r| (r.n_particles as f64, r.l1_error)).collect();
    let xs: Vec<f64> = pts.iter().map(|p| p.0).collect();
    let mut plot = Plot::new("Marginal L1 error vs particle number", "N", "L1 error")
        .log_log()
        .with(Series::line("measured", pts.clone()).markers())
        .with(Series::line(
            "noise floor",
            report
                .rows
                .iter()
                .map(|r| (r.n_particles as f64, r.statistical_error))
                .collect(),
        ));
    if let Some(&first) = pts.first() {
        plot = plot.with(Series::line("N^(-1/2)", inverse_sqrt_reference(&xs, first)).dashed());
    }
    if let Some(r) = &control {
        plot = plot.with(
            Series::line(
                "constant kernel",
                r.rows.iter().map(|r| (r.n_particles as f64, r.l1_error)).collect(),
            )
            .markers(),
        );
    }
    ctx.out.text("chaos_scaling.svg", &plot.render())?;
    Ok(())
}

#[derive(Serialize)]
struct InstanceRow {
    schema_version: u32,
    instance: usize,
    outcomes: usize,
    particles: usize,
    eta: f64,
    lhs: f64,
    rhs: f64,
    relative_entropy: f64,
    holds: bool,
}

#[derive(Serialize)]
struct InequalitySummary<'a> {
    instances: usize,
    violations: usize,
    psi_sup_norm: f64,
    psi_threshold: f64,
    psi_eta: f64,
    psi_centering_residual: f64,
    moments: &'a ExpMomentReport,
    /// Same sampling with the test function rescaled past the threshold.
    control: Option<&'a ExpMomentReport>,
}

fn verify_inequalities(ctx: &mut StudyContext<'_>) -> StudyResult<()> {
    let q = ctx.cfg.inequalities.clone().expect("defaulted");
    let seed = ctx.cfg.run.seed;
    ctx.stage("inequalities: change of measure");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(q.instances);
    for i in 0..q.instances {
        let (space, eta) = random_instance(&mut rng, q.max_outcomes, q.max_particles);
        let r = change_of_measure_check(&space, eta)?;
        rows.push(InstanceRow {
            schema_version: SCHEMA_VERSION,
            instance: i,
            outcomes: space.outcomes,
            particles: space.n_particles,
            eta,
            lhs: r.lhs,
            rhs: r.rhs,
            relative_entropy: r.relative_entropy,
            holds: r.holds,
        });
    }
    let violations = rows.iter().filter(|r| !r.holds).count();
    ctx.check(
        "change-of-measure inequality on every instance",
        violations == 0,
        format!("{violations} violations in {} instances", q.instances),
    );

    ctx.stage("inequalities: test function");
    let dim = ctx.field.dim();
    let profile = ctx.cfg.initial_profile();
    let f = DensityField::from_profile(PeriodicGrid::new(dim, q.grid)?, &profile)?;
    let psi = build_psi(&ctx.field, &f, q.psi_entry().expect("validated"))?;
    ctx.check(
        "certified sup-norm below 1/(2e)",
        psi.sup_norm < psi_threshold(),
        format!(
            "sup = {:.6}, threshold {:.6}, eta = {}",
            psi.sup_norm,
            psi_threshold(),
            psi.eta
        ),
    );
    ctx.check(
        "test function centered",
        psi.centering_residual <= 1e-10,
        format!("residual = {:.3e}", psi.centering_residual),
    );
    ctx.stage("inequalities: exponential moments");
    let moments = exp_moment_check(&psi, &profile, &q.moment_ladder, q.moment_samples, seed)?;
    ctx.check(
        "exponential moment bounded in N",
        moments.no_growth,
        moments
            .rows
            .iter()
            .map(|r| format!("N={}: {:.5} +- {:.1e}", r.n_particles, r.mean, r.standard_error))
            .collect::<Vec<_>>()
            .join("; "),
    );
    ctx.check("exponential moment at least one", moments.jensen_ok, "");
    let control = if q.negative_control {
        ctx.stage("inequalities: rescaled control");
        let big = psi.rescaled_to(3.0);
        Some(exp_moment_check(
            &big,
            &profile,
            &q.moment_ladder,
            q.control_samples,
            seed ^ 0x0c04_7201,
        )?)
    } else {
        None
    };

    ctx.stage("inequalities: artifacts");
    ctx.out.csv("change_of_measure.csv", &rows)?;
    let mut moment_rows: Vec<_> = moments.rows.iter().map(|r| ("bounded", *r)).collect();
    if let Some(c) = &control {
        moment_rows.extend(c.rows.iter().map(|r| ("rescaled", *r)));
    }
    #[derive(Serialize)]
    struct MomentCsv {
        schema_version: u32,
        test_function: &'static str,
        n_particles: usize,
        samples: usize,
        mean: f64,
        standard_error: f64,
    }
    let moment_rows: Vec<MomentCsv> = moment_rows
        .into_iter()
        .map(|(tag, r)| MomentCsv {
            schema_version: SCHEMA_VERSION,
            test_function: tag,
            n_particles: r.n_particles,
            samples: r.samples,
            mean: r.mean,
            standard_error: r.standard_error,
        })
        .collect();
    ctx.out.csv("exp_moments.csv", &moment_rows)?;
    ctx.out.json(
        "inequalities_summary.json",
        "verify-inequalities",
        &InequalitySummary {
            instances: q.instances,
            violations,
            psi_sup_norm: psi.sup_norm,
            psi_threshold: psi_threshold(),
            psi_eta: psi.eta,
            psi_centering_residual: psi.centering_residual,
            moments: &moments,
            control: control.as_ref(),
        },
    )?;
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchRow {
    pub schema_version: u32,
    pub evaluator: &'static str,
    pub repeat: usize,
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchSummary {
    pub particles: usize,
    pub modes: usize,
    pub naive_seconds: f64,
    pub spectral_seconds: f64,
    pub speedup: f64,
    pub max_abs_diff: f64,
}

/// Best-of-`repeats` timings of both force evaluators on one random state.
pub fn bench_evaluators(
    field: &KernelField,
    particles: usize,
    repeats: usize,
    seed: u64,
) -> (Vec<BenchRow>, BenchSummary) {
    let dim = field.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pos: Vec<f64> = (0..particles * dim).map(|_| rng.random::<f64>()).collect();
    let mut rows = Vec::new();
    let mut time = |name: &'static str, f: &dyn Fn() -> chaoslab_core::particles::DriftDiffusion| {
        let mut best = f64::INFINITY;
        let mut last = None;
        for repeat in 0..repeats {
            let t = Instant::now();
            let out = f();
            let s = t.elapsed().as_secs_f64();
            best = best.min(s);
            rows.push(BenchRow {
                schema_version: SCHEMA_VERSION,
                evaluator: name,
                repeat,
                seconds: s,
            });
            last = Some(out);
        }
        (best, last.expect("at least one repeat"))
    };
    let (naive_s, naive) = time("naive", &|| forces_naive(&pos, dim, field));
    let (spec_s, spec) = time("spectral", &|| forces_spectral(&pos, dim, field));
    let summary = BenchSummary {
        particles,
        modes: field.modes().len(),
        naive_seconds: naive_s,
        spectral_seconds: spec_s,
        speedup: naive_s / spec_s,
        max_abs_diff: naive.max_abs_diff(&spec),
    };
    (rows, summary)
}

fn bench_forces(ctx: &mut StudyContext<'_>) -> StudyResult<()> {
    let b = ctx.cfg.bench.clone().expect("defaulted");
    ctx.stage("bench: timing");
    let (rows, summary) = bench_evaluators(&ctx.field, b.particles, b.repeats, ctx.cfg.run.seed);
    ctx.check(
        "evaluators agree",
        summary.max_abs_diff <= 1e-10,
        format!("max |spectral - naive| = {:.3e}", summary.max_abs_diff),
    );
    ctx.check(
        "spectral speedup",
        summary.speedup >= b.min_speedup,
        format!(
            "naive {:.4} s, spectral {:.4} s, ratio {:.1} (need {})",
            summary.naive_seconds, summary.spectral_seconds, summary.speedup, b.min_speedup
        ),
    );
    ctx.stage("bench: artifacts");
    ctx.out.csv("bench_timings.csv", &rows)?;
    ctx.out.json("bench_summary.json", "bench-forces", &summary)?;
    Ok(())
}
