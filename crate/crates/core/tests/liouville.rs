use std::f64::consts::PI;

use chaoslab_core::kernel::{build_kernel, KernelSpec};
use chaoslab_core::liouville::{
    evolve_coupled, relative_entropy_to_tensor, LiouvilleDensity, LiouvilleSolver, GIBBS_TOL,
};
use chaoslab_core::meanfield::{DensityField, MeanFieldSolver, PeriodicGrid};
use chaoslab_core::metrics::{ckp_audit_grid, grid_l1};
use chaoslab_core::profile::InitialProfile;

fn initial(n: usize) -> DensityField {
    DensityField::from_profile(PeriodicGrid::new(1, n).unwrap(), &InitialProfile::cosine_1d(1, 0.45)).unwrap()
}

#[test]
fn exchange_symmetry_is_preserved() {
    let field = build_kernel(&KernelSpec::canonical_1d()).unwrap();
    for (np, n) in [(2, 32), (3, 16)] {
        let tr = evolve_coupled(&field, &initial(n), np, 0.05, 2e-4, 50).unwrap();
        for f in &tr.liouville {
            assert!(f.exchange_asymmetry() <= 1e-12, "N = {np}: {}", f.exchange_asymmetry());
            assert!((f.mass() - 1.0).abs() <= 1e-12);
        }
    }
}

#[test]
fn entropy_balance_identity_and_bounds() {
    let field = build_kernel(&KernelSpec::canonical_1d()).unwrap();
    let n = 32;
    let dt = 2e-5;
    let stride = 50;
    let tr = evolve_coupled(&field, &initial(n), 2, 0.05, dt, stride).unwrap();
    let solver = LiouvilleSolver::new(&field, 2, n).unwrap();
    let mf = MeanFieldSolver::new(&field, PeriodicGrid::new(1, n).unwrap()).unwrap();
    let balances: Vec<_> = tr
        .liouville
        .iter()
        .zip(&tr.meanfield)
        .map(|(fl, fm)| solver.entropy_balance(fl, fm, &mf).unwrap())
        .collect();
    let scale = balances.iter().map(|b| b.rate().abs()).fold(0.0, f64::max);
    let mut worst: f64 = 0.0;
    for k in 1..balances.len() - 1 {
        let dh = (balances[k + 1].relative_entropy - balances[k - 1].relative_entropy)
            / (balances[k + 1].time - balances[k - 1].time);
        worst = worst.max((dh - balances[k].rate()).abs());
    }
    eprintln!("balance defect {worst:e}, rate scale {scale:e}");
    assert!(worst <= 2e-2 * scale, "defect {worst} vs scale {scale}");
    for b in &balances {
        assert!(b.relative_entropy >= -GIBBS_TOL);
        assert!(b.i1 <= b.i1_bound + 1e-12);
        assert!(b.i2 + b.i3 <= b.i23_bound + 1e-12);
    }
}

#[test]
fn subadditivity_gibbs_and_pinsker_on_snapshots() {
    let field = build_kernel(&KernelSpec::canonical_1d()).unwrap();
    for (np, n) in [(2usize, 32usize), (3, 16)] {
        let tr = evolve_coupled(&field, &initial(n), np, 0.1, 1e-4, 100).unwrap();
        for (fl, fm) in tr.liouville.iter().zip(&tr.meanfield) {
            let h_n = fl.relative_entropy(fm).unwrap();
            let m1 = fl.marginal(1).unwrap();
            let h_1 = relative_entropy_to_tensor(m1.values(), n, 1, fm).unwrap();
            assert!(h_1 >= -GIBBS_TOL && h_n >= -GIBBS_TOL);
            assert!(h_1 <= h_n + 1e-12, "N = {np}: H1 {h_1} > HN {h_n}");
            if np == 3 {
                let m2 = fl.marginal(2).unwrap();
                let h_2 = relative_entropy_to_tensor(m2.values(), n, 2, fm).unwrap();
                assert!(h_1 <= h_2 + 1e-12 && h_2 <= h_n + 1e-12);
            }
            let audit = ckp_audit_grid(&m1, fm, 1).unwrap();
            assert!(audit.holds);
            assert!((audit.l1 - grid_l1(&m1, fm).unwrap()).abs() < 1e-15);
        }
    }
}

#[test]
fn constant_kernel_relative_entropy_stays_small() {
    let lambda = 1.0;
    let field = build_kernel(&KernelSpec::constant(1, lambda)).unwrap();
    let n = 32;
    let tr = evolve_coupled(&field, &initial(n), 2, 0.05, 1e-4, 50).unwrap();
    let solver = LiouvilleSolver::new(&field, 2, n).unwrap();
    let mf = MeanFieldSolver::new(&field, PeriodicGrid::new(1, n).unwrap()).unwrap();
    for (fl, fm) in tr.liouville.iter().zip(&tr.meanfield) {
        let b = solver.entropy_balance(fl, fm, &mf).unwrap();
        assert!(b.i3.abs() <= 1e-14);
        assert!(b.i1 <= 1e-15);
        // tensorized law with diffusivity lambda/2 against lambda: O((t/N)^2)
        let t = fl.time();
        let bound = (0.45f64 * 2.0 * PI * PI * lambda * t).powi(2);
        assert!(b.relative_entropy <= bound + 1e-14, "t = {t}: {}", b.relative_entropy);
    }
}

fn residual_at(n: usize, dt: f64) -> f64 {
    let field = build_kernel(&KernelSpec::constant(1, 1.0)).unwrap();
    let solver = LiouvilleSolver::new(&field, 2, n).unwrap();
    let f0 = LiouvilleDensity::from_fn(2, n, |v| {
        (1.0 + 0.4 * (2.0 * PI * v[0]).cos()) * (1.0 + 0.3 * (2.0 * PI * v[1]).sin())
    })
    .unwrap();
    let tr = solver.solve(&f0, 0.05, dt, 10).unwrap();
    let res = solver.entropy_solution_residual(&tr).unwrap();
    res.iter().map(|r| r.residual.abs()).fold(0.0, f64::max)
}

#[test]
fn entropy_solution_residual_shrinks_under_refinement() {
    let coarse = residual_at(32, 4e-5);
    let fine = residual_at(32, 1e-5);
    eprintln!("residuals {coarse:e} {fine:e}");
    assert!(fine <= 1e-4);
    assert!(fine < coarse);
}

#[test]
fn uniform_residual_vanishes_for_constant_kernel() {
    let field = build_kernel(&KernelSpec::constant(1, 1.0)).unwrap();
    let solver = LiouvilleSolver::new(&field, 2, 16).unwrap();
    let u = LiouvilleDensity::uniform(2, 16).unwrap();
    let tr = solver.solve(&u, 0.01, 1e-3, 1).unwrap();
    for r in solver.entropy_solution_residual(&tr).unwrap() {
        assert!(r.residual.abs() <= 1e-14);
    }
}
