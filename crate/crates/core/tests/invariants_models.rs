//! Properties of scaling, kernels, the SVR solver, the benchmarks and the
//! evaluation layer on random inputs.

mod common;

use chrono::Duration;
use csvr::benchmarks::forest::{rf_predict, rf_train, RfConfig};
use csvr::benchmarks::lars::lars_path;
use csvr::benchmarks::naive_forecast;
use csvr::evaluate::{arithmetic_average, dm_test, rmae, weighted_average, AveragingWeights};
use csvr::features::ColumnKind;
use csvr::kernels::{
    gaussian_width, kernel_matrix, kernel_value, laplace_width, pairwise_distances, pairwise_squared_differences,
    KernelKind, KernelSpec,
};
use csvr::market_data::{DeliveryId, GRID_LEN};
use csvr::preprocessing::{Trajectory, TrajectoryKind};
use csvr::scaling::{correlation_filter, mean_std, standardize_features};
use csvr::svr::{dual_objective, train_svr, train_svr_traced, SvrConfig};
use proptest::prelude::*;

use common::*;

fn matrix(rows: std::ops::Range<usize>, cols: std::ops::Range<usize>) -> impl Strategy<Value = Vec<Vec<f64>>> {
    (rows, cols).prop_flat_map(|(n, p)| prop::collection::vec(prop::collection::vec(-5.0f64..5.0, n), p))
}

fn to_rows(columns: &[Vec<f64>]) -> Vec<Vec<f64>> {
    (0..columns[0].len())
        .map(|i| columns.iter().map(|c| c[i]).collect())
        .collect()
}

fn standardised(columns: Vec<Vec<f64>>) -> csvr::scaling::FeatureMatrix {
    let p = columns.len();
    let names = (0..p).map(|j| format!("x{j}")).collect();
    let kinds = (0..p)
        .map(|j| {
            if j % 5 == 4 {
                ColumnKind::Exogenous
            } else {
                ColumnKind::Other
            }
        })
        .collect();
    standardize_features(names, kinds, columns).unwrap()
}

// ---------------------------------------------------------------------------
// Scaling.

proptest! {
    #[test]
    fn standardisation_is_deterministic(cols in matrix(3..30, 1..8)) {
        prop_assert_eq!(standardised(cols.clone()), standardised(cols));
    }

    #[test]
    fn standardised_columns_have_zero_mean_unit_sd(cols in matrix(3..30, 1..8)) {
        let m = standardised(cols);
        for c in &m.columns {
            let (mu, sd) = mean_std(c);
            prop_assert!(mu.abs() < 1e-12);
            prop_assert!((sd - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn filter_leaves_no_pair_above_threshold(cols in matrix(4..30, 2..10), strict in any::<bool>()) {
        let thr = if strict { 0.8 } else { 0.95 };
        let m = correlation_filter(standardised(cols), thr);
        for i in 0..m.n_cols() {
            for j in i + 1..m.n_cols() {
                if m.kinds[i] != ColumnKind::Exogenous && m.kinds[j] != ColumnKind::Exogenous {
                    prop_assert!(m.correlation(i, j).abs() <= thr + 1e-12);
                }
            }
        }
        prop_assert_eq!(m.kinds.iter().filter(|k| **k == ColumnKind::Exogenous).count(),
            m.names.iter().filter(|n| n[1..].parse::<usize>().unwrap() % 5 == 4).count());
    }

    #[test]
    fn scaling_is_affine_invariant(
        cols in matrix(3..30, 1..8),
        scale in prop::collection::vec(0.01f64..100.0, 8),
        shift in prop::collection::vec(-1e3f64..1e3, 8),
    ) {
        let moved: Vec<Vec<f64>> = cols
            .iter()
            .enumerate()
            .map(|(j, c)| c.iter().map(|v| scale[j] * v + shift[j]).collect())
            .collect();
        let a = correlation_filter(standardised(cols), 0.8);
        let b = correlation_filter(standardised(moved), 0.8);
        prop_assert_eq!(&a.names, &b.names);
        for (x, y) in a.columns.iter().flatten().zip(b.columns.iter().flatten()) {
            prop_assert!((x - y).abs() < 1e-9, "{} vs {}", x, y);
        }
    }
}

// ---------------------------------------------------------------------------
// Kernels.

fn spec_for(kind: KernelKind, rows: &[Vec<f64>], naive: &[f64]) -> Option<KernelSpec> {
    KernelSpec::fit(kind, rows, naive).ok()
}

fn kind() -> impl Strategy<Value = KernelKind> {
    prop_oneof![
        Just(KernelKind::Corrected),
        Just(KernelKind::LaplaceL2),
        Just(KernelKind::LaplaceL1)
    ]
}

proptest! {
    #[test]
    fn median_kernel_value_is_one_half(
        half in 0usize..8,
        p in 1usize..6,
        seed in any::<u64>(),
        l1 in any::<bool>(),
    ) {
        // n(n-1)/2 is odd for n = 2, 3, 6, 7, 10, 11, ...
        let n = [2, 3, 6, 7, 10, 11, 14, 15][half];
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..p).map(|_| rand::Rng::random_range(&mut rng, -3.0..3.0)).collect()).collect();
        let kind = if l1 { KernelKind::LaplaceL1 } else { KernelKind::LaplaceL2 };
        let Some(spec) = spec_for(kind, &rows, &vec![0.0; n]) else { return Ok(()) };
        let mut values: Vec<f64> = pairwise_distances(kind, &rows).iter().map(|d| (-spec.laplace_width * d).exp()).collect();
        values.sort_by(f64::total_cmp);
        prop_assert!((values[values.len() / 2] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn kernel_values_lie_in_unit_interval(
        k in kind(),
        rows in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 3), 4..12),
        naive in prop::collection::vec(-3.0f64..3.0, 12),
    ) {
        let naive = &naive[..rows.len()];
        let Some(spec) = spec_for(k, &rows, naive) else { return Ok(()) };
        for i in 0..rows.len() {
            for j in 0..rows.len() {
                let v = kernel_value(&spec, &rows[i], &rows[j], naive[i], naive[j]).unwrap();
                prop_assert!(v > 0.0 && v <= 1.0);
                let same = rows[i] == rows[j] && (k != KernelKind::Corrected || naive[i] == naive[j]);
                prop_assert_eq!(v == 1.0, same, "K = {} at ({}, {})", v, i, j);
            }
        }
    }

    #[test]
    fn widths_ignore_row_order(
        k in kind(),
        rows in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 2), 4..12),
        naive in prop::collection::vec(-3.0f64..3.0, 12),
        shuffle_seed in any::<u64>(),
    ) {
        let naive = naive[..rows.len()].to_vec();
        let Some(a) = spec_for(k, &rows, &naive) else { return Ok(()) };
        let mut order: Vec<usize> = (0..rows.len()).collect();
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(shuffle_seed);
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
        let rows2: Vec<Vec<f64>> = order.iter().map(|&i| rows[i].clone()).collect();
        let naive2: Vec<f64> = order.iter().map(|&i| naive[i]).collect();
        let b = spec_for(k, &rows2, &naive2).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn widths_ignore_a_common_price_shift(
        rows in matrix(4..12, 1..4),
        naive in prop::collection::vec(20.0f64..80.0, 12),
        shift in -50.0f64..50.0,
    ) {
        let n = rows[0].len();
        let naive = &naive[..n];
        // Standardising features and naive forecasts removes any common level.
        let st = |c: &[f64]| { let (m, s) = mean_std(c); c.iter().map(|v| (v - m) / s).collect::<Vec<f64>>() };
        let shifted: Vec<Vec<f64>> = rows.iter().map(|c| c.iter().map(|v| v + shift).collect()).collect();
        let naive_shifted: Vec<f64> = naive.iter().map(|v| v + shift).collect();
        let a_rows = to_rows(&rows.iter().map(|c| st(c)).collect::<Vec<_>>());
        let b_rows = to_rows(&shifted.iter().map(|c| st(c)).collect::<Vec<_>>());
        let (a_naive, b_naive) = (st(naive), st(&naive_shifted));
        let (Ok(la), Ok(lb)) = (
            laplace_width(&pairwise_distances(KernelKind::LaplaceL2, &a_rows)),
            laplace_width(&pairwise_distances(KernelKind::LaplaceL2, &b_rows)),
        ) else { return Ok(()) };
        prop_assert!((la - lb).abs() <= 1e-9 * la);
        let (Ok(ga), Ok(gb)) = (
            gaussian_width(&pairwise_squared_differences(&a_naive)),
            gaussian_width(&pairwise_squared_differences(&b_naive)),
        ) else { return Ok(()) };
        prop_assert!((ga - gb).abs() <= 1e-9 * ga);
    }
}

// ---------------------------------------------------------------------------
// SVR.

fn svr_problem() -> impl Strategy<Value = (csvr::kernels::KernelMatrix, Vec<f64>, SvrConfig)> {
    (2usize..20, 1usize..5, any::<u64>(), -1.0f64..1.0, 0.0f64..0.5).prop_map(|(n, p, seed, log_c, eps)| {
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
        let mut draw = || rand::Rng::random_range(&mut rng, -2.0f64..2.0);
        let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..p).map(|_| draw()).collect()).collect();
        let naive: Vec<f64> = (0..n).map(|_| draw()).collect();
        let y: Vec<f64> = (0..n).map(|_| draw()).collect();
        let spec = KernelSpec::fit(KernelKind::Corrected, &rows, &naive).unwrap_or(KernelSpec {
            kind: KernelKind::Corrected,
            laplace_width: 1.0,
            gaussian_width: 1.0,
        });
        let k = kernel_matrix(&spec, &rows, &naive).unwrap();
        let cfg = SvrConfig {
            c: 10f64.powf(log_c),
            epsilon: eps,
            ..SvrConfig::default()
        };
        (k, y, cfg)
    })
}

proptest! {
    #[test]
    fn svr_coefficients_sum_to_zero((k, y, cfg) in svr_problem()) {
        if let Ok(sol) = train_svr(&k, &y, &cfg) {
            prop_assert!(sol.beta.iter().sum::<f64>().abs() <= 1e-12);
            prop_assert!(sol.beta.iter().all(|b| b.abs() <= cfg.c));
        }
    }

    #[test]
    fn svr_objective_never_increases((k, y, cfg) in svr_problem()) {
        let (res, trace) = train_svr_traced(&k, &y, &cfg);
        for w in trace.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-12 * w[0].abs().max(1.0), "{} then {}", w[0], w[1]);
        }
        if let (Ok(sol), Some(last)) = (res, trace.last()) {
            let direct = dual_objective(&k, &y, &sol.beta, cfg.epsilon);
            prop_assert!((direct - last).abs() <= 1e-9 * direct.abs().max(1.0));
        }
    }

    #[test]
    fn rows_inside_the_tube_carry_no_weight((k, y, cfg) in svr_problem()) {
        if let Ok(sol) = train_svr(&k, &y, &cfg) {
            for i in 0..y.len() {
                let r = y[i] - sol.predict_from_kernel(k.row(i));
                if r.abs() < cfg.epsilon - cfg.tol {
                    prop_assert_eq!(sol.beta[i], 0.0, "row {} residual {}", i, r);
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// LASSO path.

fn correlations(columns: &[Vec<f64>], y: &[f64], coef: &[f64]) -> Vec<f64> {
    let r: Vec<f64> = (0..y.len())
        .map(|i| y[i] - columns.iter().zip(coef).map(|(c, b)| c[i] * b).sum::<f64>())
        .collect();
    columns
        .iter()
        .map(|c| c.iter().zip(&r).map(|(a, b)| a * b).sum())
        .collect()
}

fn check_kkt(columns: &[Vec<f64>], y: &[f64], coef: &[f64], lambda: f64, tol: f64) -> Result<(), TestCaseError> {
    for (j, cj) in correlations(columns, y, coef).into_iter().enumerate() {
        if coef[j] != 0.0 {
            prop_assert!(
                (cj - lambda * coef[j].signum()).abs() <= tol,
                "active {}: {} vs {}",
                j,
                cj,
                lambda
            );
        } else {
            prop_assert!(cj.abs() <= lambda + tol, "inactive {}: {} vs {}", j, cj, lambda);
        }
    }
    Ok(())
}

proptest! {
    #[test]
    fn lasso_path_satisfies_kkt(cols in matrix(5..25, 1..8), y in prop::collection::vec(-5.0f64..5.0, 25)) {
        let y = &y[..cols[0].len()];
        let path = lars_path(&cols, y).unwrap();
        let scale = correlations(&cols, y, &vec![0.0; cols.len()]).iter().fold(1.0f64, |a, c| a.max(c.abs()));
        let tol = 1e-8 * scale;
        for (l, b) in path.lambdas.iter().zip(&path.coefs) {
            check_kkt(&cols, y, b, *l, tol)?;
        }
        // Between breakpoints the interpolated coefficients stay optimal.
        for w in path.lambdas.windows(2) {
            let mid = 0.5 * (w[0] + w[1]);
            check_kkt(&cols, y, &path.coef_at(mid), mid, tol)?;
        }
        for (l, b) in path.lambdas.iter().zip(&path.coefs) {
            prop_assert_eq!(&path.coef_at(*l), b);
        }
    }
}

// ---------------------------------------------------------------------------
// Random forest and naive forecast.

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn forest_is_deterministic_and_averages_its_trees(
        cols in matrix(4..30, 1..5),
        seed in any::<u64>(),
        query in prop::collection::vec(-5.0f64..5.0, 5),
    ) {
        let rows = to_rows(&cols);
        let y: Vec<f64> = rows.iter().map(|r| r.iter().sum::<f64>().sin()).collect();
        let cfg = RfConfig { n_trees: 16, seed, ..RfConfig::default() };
        let a = rf_train(&rows, &y, &cfg);
        let b = rf_train(&rows, &y, &cfg);
        prop_assert_eq!(&a, &b);
        let q = &query[..cols.len()];
        let per_tree = a.predict_per_tree(q);
        let mean = per_tree.iter().sum::<f64>() / per_tree.len() as f64;
        prop_assert!((rf_predict(&a, q) - mean).abs() <= 1e-12 * mean.abs().max(1.0));
        prop_assert!(per_tree.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn naive_forecast_ignores_unpublished_minutes(
        values in prop::collection::vec(-50.0f64..200.0, GRID_LEN),
        m in 0i64..GRID_LEN as i64,
    ) {
        let d = DeliveryId::new(date(2021, 6, 1) + Duration::days(0), 96).unwrap();
        let full = Trajectory::from_values(d, TrajectoryKind::Price, values.clone(), 42.0);
        let mut hidden = values;
        for v in hidden.iter_mut().skip((m - 19).max(0) as usize) {
            *v = f64::NAN;
        }
        let cut = Trajectory::from_values(d, TrajectoryKind::Price, hidden, 42.0);
        prop_assert_eq!(naive_forecast(&full, m).to_bits(), naive_forecast(&cut, m).to_bits());
    }
}

// ---------------------------------------------------------------------------
// Averaging and evaluation.

proptest! {
    #[test]
    fn weights_form_a_convex_combination(maes in prop::array::uniform4(0.0f64..10.0)) {
        let w = AveragingWeights::from_maes(&maes).0;
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        prop_assert!(w.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn equal_maes_give_the_plain_average(f in prop::array::uniform4(-100.0f64..300.0), mae in 0.01f64..10.0) {
        prop_assert_eq!(weighted_average(&f, &[mae; 4]).to_bits(), arithmetic_average(&f).to_bits());
    }

    #[test]
    fn rmae_of_the_naive_model_is_zero(x in 1e-6f64..1e3) {
        prop_assert_eq!(rmae(x, x).unwrap(), 0.0);
    }

    #[test]
    fn dm_statistic_is_antisymmetric(
        a in prop::collection::vec(0.0f64..10.0, 30..120),
        b in prop::collection::vec(0.0f64..10.0, 120),
    ) {
        let b = &b[..a.len()];
        let ab = dm_test(&a, b, None).unwrap();
        let ba = dm_test(b, &a, None).unwrap();
        prop_assert!((ab.statistic + ba.statistic).abs() <= 1e-9 * ab.statistic.abs().max(1.0));
    }
}
