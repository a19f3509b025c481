use chaoslab_core::concentration::{change_of_measure_check, random_instance};
use chaoslab_core::kernel::{build_kernel, KernelField, KernelMode, KernelSpec, BOUND_TOL};
use chaoslab_core::linalg::{self, Matrix, MAX_DIM, PSD_TOL, ZERO_MATRIX};
use chaoslab_core::metrics::{ckp_audit, kl_divergence, l1_distance, BinnedMasses};
use chaoslab_core::particles::{forces_naive, forces_spectral};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn kernel_strategy(max_dim: usize, max_k: i64) -> impl Strategy<Value = KernelSpec> {
    (1..=max_dim)
        .prop_flat_map(move |d| {
            let mode = (
                prop::collection::vec(-max_k..=max_k, d),
                prop::collection::vec(-1.0f64..1.0, d * d),
            );
            (Just(d), prop::collection::vec(mode, 1..=3), 0.05f64..2.0)
        })
        .prop_filter_map("zero wave vector", |(d, raw, margin)| {
            let mut modes = Vec::new();
            let mut norm_sum = 0.0;
            for (k, c) in raw {
                if k.iter().all(|&x| x == 0) {
                    return None;
                }
                let mut m: Matrix = ZERO_MATRIX;
                for i in 0..d {
                    for j in 0..d {
                        m[i][j] = 0.5 * (c[i * d + j] + c[j * d + i]);
                    }
                }
                norm_sum += linalg::symmetric_norm(&m, d);
                let coeff = (0..d * d).map(|x| m[x / d][x % d]).collect();
                modes.push(KernelMode { k, coeff });
            }
            Some(KernelSpec {
                dimension: d,
                lambda0: norm_sum + margin,
                modes,
            })
        })
}

fn point(d: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..1.0, d)
}

fn five_point<F: Fn(&[f64]) -> f64>(f: F, z: &[f64], axis: usize, h: f64) -> f64 {
    let at = |s: f64| {
        let mut w = z.to_vec();
        w[axis] += s;
        f(&w)
    };
    (-at(2.0 * h) + 8.0 * at(h) - 8.0 * at(-h) + at(-2.0 * h)) / (12.0 * h)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn kernel_parity_symmetry_and_bounds(spec in kernel_strategy(3, 3), z in point(3)) {
        let field = build_kernel(&spec).unwrap();
        let d = field.dim();
        let z = &z[..d];
        let minus: Vec<f64> = z.iter().map(|x| -x).collect();
        let a = field.eval_a(z);
        let am = field.eval_a(&minus);
        let b = field.eval_b(z);
        let bm = field.eval_b(&minus);
        prop_assert!(linalg::asymmetry(&a, d) <= 1e-12);
        prop_assert!(linalg::frobenius_distance(&a, &am, d) <= 1e-12);
        for i in 0..d {
            prop_assert!((b[i] + bm[i]).abs() <= 1e-12);
        }
        let (lo, hi) = linalg::eigen_range(&a, d);
        prop_assert!(lo >= field.lower_bound() - BOUND_TOL);
        prop_assert!(hi <= field.upper_bound() + BOUND_TOL);
    }

    #[test]
    fn drift_is_divergence_of_diffusion(spec in kernel_strategy(3, 3), z in point(3)) {
        let field = build_kernel(&spec).unwrap();
        let d = field.dim();
        let z = &z[..d];
        let h = 1e-4;
        let b = field.eval_b(z);
        for alpha in 0..d {
            let fd: f64 = (0..d)
                .map(|beta| five_point(|w| field.eval_a(w)[alpha][beta], z, beta, h))
                .sum();
            prop_assert!((fd - b[alpha]).abs() <= 1e-6, "alpha {alpha}: {fd} vs {}", b[alpha]);
        }
        let fd_div: f64 = (0..d).map(|a| five_point(|w| field.eval_b(w)[a], z, a, h)).sum();
        prop_assert!((fd_div - field.eval_div_b(z)).abs() <= 1e-6);
    }

    #[test]
    fn spectral_forces_match_pairwise_sum(
        spec in kernel_strategy(2, 3),
        n in 2usize..40,
        seed in any::<u64>(),
    ) {
        let field = build_kernel(&spec).unwrap();
        let d = field.dim();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pos: Vec<f64> = (0..n * d).map(|_| rand::Rng::random::<f64>(&mut rng)).collect();
        let naive = forces_naive(&pos, d, &field);
        let fast = forces_spectral(&pos, d, &field);
        prop_assert!(naive.max_abs_diff(&fast) <= 1e-10);
    }

    #[test]
    fn psd_square_root_contract(
        d in 1usize..=MAX_DIM,
        entries in prop::collection::vec(-1.0f64..1.0, 9),
        rank in 0usize..=MAX_DIM,
    ) {
        // A = G G^T with G of the given column rank
        let mut a: Matrix = ZERO_MATRIX;
        for i in 0..d {
            for j in 0..d {
                a[i][j] = (0..rank.min(d)).map(|c| entries[i * 3 + c] * entries[j * 3 + c]).sum();
            }
        }
        let s = linalg::sqrt_psd(&a, d, PSD_TOL).unwrap();
        prop_assert!(linalg::asymmetry(&s, d) <= 1e-12);
        let s2 = linalg::mat_mul(&s, &s, d);
        prop_assert!(linalg::frobenius_distance(&s2, &a, d) <= 1e-12);
        let (lo, _) = linalg::eigen_range(&s, d);
        prop_assert!(lo >= -1e-12);
        // independent oracle: eigen-decomposition square root
        let m = DMatrix::from_fn(d, d, |i, j| a[i][j]);
        let eig = m.symmetric_eigen();
        let roots = eig.eigenvalues.map(|x| x.max(0.0).sqrt());
        let oracle = &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose();
        for i in 0..d {
            for j in 0..d {
                prop_assert!((oracle[(i, j)] - s[i][j]).abs() <= 1e-6);
            }
        }
    }

    #[test]
    fn change_of_measure_never_fails(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (space, eta) = random_instance(&mut rng, 5, 4);
        let r = change_of_measure_check(&space, eta).unwrap();
        prop_assert!(r.holds, "lhs {} rhs {}", r.lhs, r.rhs);
        prop_assert!(r.relative_entropy >= -1e-12);
    }

    #[test]
    fn pinsker_on_random_mass_pairs(
        raw in prop::collection::vec((0.0f64..1.0, 0.01f64..1.0), 4..64),
    ) {
        let sp: f64 = raw.iter().map(|x| x.0).sum();
        let sq: f64 = raw.iter().map(|x| x.1).sum();
        prop_assume!(sp > 0.0);
        let p: Vec<f64> = raw.iter().map(|x| x.0 / sp).collect();
        let q: Vec<f64> = raw.iter().map(|x| x.1 / sq).collect();
        let g1 = BinnedMasses::new(1, p.len(), p.clone()).unwrap();
        let g2 = BinnedMasses::new(1, q.len(), q.clone()).unwrap();
        let l1 = l1_distance(&g1, &g2).unwrap();
        let direct: f64 = p.iter().zip(&q).map(|(a, b)| (a - b).abs()).sum();
        prop_assert!((l1 - direct).abs() <= 1e-12);
        prop_assert!((0.0..=2.0 + 1e-12).contains(&l1));
        let audit = ckp_audit(l1, kl_divergence(&p, &q).unwrap(), 1);
        prop_assert!(audit.holds);
    }
}

#[test]
fn sqrt_contract_is_exact_for_rank_deficient_and_scaled_inputs() {
    let field: KernelField = build_kernel(&KernelSpec::constant(3, 4.0)).unwrap();
    let a = field.eval_a(&[0.1, 0.2, 0.3]);
    let s = linalg::sqrt_psd(&a, 3, PSD_TOL).unwrap();
    for i in 0..3 {
        assert!((s[i][i] - 2.0).abs() < 1e-15);
    }
}
