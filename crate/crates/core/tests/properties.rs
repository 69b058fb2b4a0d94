use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use clearner::constrained::solve_constrained_ols;
use clearner::datagen::{gen_kang_schafer, make_folds, Dataset, KsConfig};
use clearner::estimators::{
    crossfit, estimate_aipw, estimate_aipw_sn, estimate_direct, estimate_ipw, estimate_ipw_sn, estimate_tmle, fit_fold,
    NuisanceFit, NuisanceSpec, Recipe, RieszSpec, SplitMode,
};
use clearner::gbrt::{clearner_boost, BoostData, BoostParams, BoostSplit};
use clearner::harness::{
    read_raw_csv, render_report, run_monte_carlo, summarize, DgpSpec, ExperimentConfig, ReplicationRecord, ReportFormat, RunStatus,
};
use clearner::models::{fit_logistic, fit_ols, Predictor};

fn ks(n: usize, seed: u64) -> Dataset {
    gen_kang_schafer(&KsConfig {
        n,
        c: 1.0,
        misspecified: true,
        flipped: false,
        seed,
    })
    .unwrap()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

const LINEAR_RECIPES: [Recipe; 9] = [
    Recipe::Direct,
    Recipe::Ipw,
    Recipe::IpwSn,
    Recipe::Aipw,
    Recipe::AipwSn,
    Recipe::Tmle,
    Recipe::ClearnerLinear,
    Recipe::DualClearner,
    Recipe::ParamFluc,
];

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn folds_partition_rows(n in 2usize..300, k in 2usize..12, seed in any::<u64>()) {
        prop_assume!(k <= n);
        let plan = make_folds(n, k, seed).unwrap();
        let mut seen = vec![0usize; n];
        for f in 0..k {
            let rows = plan.fold_rows(f);
            prop_assert!(!rows.is_empty());
            for r in rows {
                seen[r] += 1;
            }
        }
        prop_assert!(seen.iter().all(|&c| c == 1));
        let sizes = plan.sizes();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        prop_assert_eq!(make_folds(n, k, seed).unwrap().assignments, plan.assignments);
    }

    #[test]
    fn well_and_misspecified_draws_are_paired(n in 5usize..200, seed in any::<u64>(), c in 0.25f64..1.75) {
        let cfg = |misspecified| KsConfig { n, c, misspecified, flipped: false, seed };
        let a = gen_kang_schafer(&cfg(true)).unwrap();
        let b = gen_kang_schafer(&cfg(false)).unwrap();
        prop_assert_eq!(&a.a, &b.a);
        prop_assert_eq!(&a.y, &b.y);
        prop_assert_eq!(&a.true_pi, &b.true_pi);
        prop_assert_ne!(&a.x, &b.x);
        prop_assert_eq!(gen_kang_schafer(&cfg(true)).unwrap().fingerprint(), a.fingerprint());
    }

    #[test]
    fn ols_refit_on_fitted_values_is_idempotent(seed in any::<u64>(), n in 8usize..60, d in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::<f64>::from_fn(n, d, |_, _| rng.random_range(-3.0..3.0));
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(-10.0..10.0)).collect();
        let first = fit_ols(&x, &y, None, true).unwrap();
        let fitted = first.predict(&x);
        let second = fit_ols(&x, &fitted, None, true).unwrap();
        let scale = first.coef.amax().max(1.0);
        prop_assert!((&first.coef - &second.coef).amax() <= 1e-10 * scale);
    }

    #[test]
    fn logistic_probability_rises_with_its_covariate(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 80;
        let x = DMatrix::<f64>::from_fn(n, 1, |_, _| rng.random_range(-2.0..2.0));
        let a: Vec<bool> = (0..n).map(|i| rng.random::<f64>() < 1.0 / (1.0 + (-1.5 * x[(i, 0)]).exp())).collect();
        prop_assume!(a.iter().any(|&t| t) && a.iter().any(|&t| !t));
        let m = fit_logistic(&x, &a, true, 0.0);
        prop_assume!(m.is_ok());
        let m = m.unwrap();
        let grid = DMatrix::<f64>::from_fn(21, 1, |i, _| -2.0 + 0.2 * i as f64);
        let p = m.predict(&grid);
        let slope = m.coef[1];
        for w in p.windows(2) {
            if slope > 0.0 { prop_assert!(w[1] >= w[0]) } else { prop_assert!(w[1] <= w[0]) }
        }
        prop_assert!(p.iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn constrained_ols_is_ols_on_pseudo_labels(seed in any::<u64>(), n in 10usize..80, d in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::<f64>::from_fn(n, d, |_, j| if j == 0 { 1.0 } else { rng.random_range(-2.0..2.0) });
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..20.0)).collect();
        let h: Vec<f64> = (0..n).map(|_| 1.0 / rng.random_range(0.05..1.0)).collect();
        let fit = solve_constrained_ols(&x, &y, &x, &y, &h).unwrap();
        let pseudo: Vec<f64> = (0..n).map(|i| y[i] + fit.multiplier * h[i]).collect();
        let ols = fit_ols(&x, &pseudo, None, false).unwrap();
        let theta = DVector::from_vec(fit.model.predict(&DMatrix::identity(d, d)));
        prop_assert!((&theta - &ols.coef).amax() <= 1e-10 * theta.amax().max(1.0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn boosted_prediction_is_base_plus_scaled_trees(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 60;
        let x = DMatrix::<f64>::from_fn(n, 3, |_, _| rng.random_range(-1.0..1.0));
        let y: Vec<f64> = (0..n).map(|i| 3.0 * x[(i, 0)] - x[(i, 1)].powi(2) + rng.random_range(-0.3..0.3)).collect();
        let pi: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..0.9)).collect();
        let split = BoostSplit { x: &x, y: &y, pi: &pi, n_rows: n };
        let params = BoostParams { max_trees_j: 40, max_trees_k: 100, seed, ..BoostParams::default() };
        let (model, diag) = clearner_boost(split, split, BoostData { x: &x, y: &y }, &params).unwrap();
        let pred = model.predict(&x);
        for i in 0..n {
            let manual = model.base_score + model.eta * model.trees.iter().map(|(t, _)| t.predict_row(&x, i)).sum::<f64>();
            prop_assert!((pred[i] - manual).abs() <= 1e-12 * manual.abs().max(1.0));
        }
        for w in diag.residual_history.windows(2) {
            prop_assert!(w[1].abs() <= w[0].abs());
        }
    }

    #[test]
    fn plug_in_invariance_and_interval_symmetry(seed in any::<u64>(), n in 120usize..300) {
        let ds = ks(n, seed);
        let rows: Vec<usize> = (0..n).collect();
        let spec = NuisanceSpec::default();
        let riesz = RieszSpec::MeanMissingOutcome;
        for recipe in [Recipe::ClearnerLinear, Recipe::ClearnerL] {
            let f = fit_fold(&ds, &rows, &rows, recipe, &spec, &riesz, seed, None);
            prop_assume!(f.is_ok());
            let f = f.unwrap();
            let plug = f.nuisance.mu1.iter().sum::<f64>() / n as f64;
            prop_assert!(rel(f.result.psi_hat, plug) <= 1e-12, "{}: {} vs {}", recipe, f.result.psi_hat, plug);
        }
        for recipe in LINEAR_RECIPES {
            let e = crossfit(&ds, None, recipe, &spec, &riesz, seed);
            prop_assume!(e.is_ok());
            let e = e.unwrap();
            let (up, down) = (e.ci_high - e.psi_hat, e.psi_hat - e.ci_low);
            prop_assert!((up - down).abs() <= 1e-12 * e.psi_hat.abs().max(1.0));
            prop_assert!(e.ci_low <= e.psi_hat && e.psi_hat <= e.ci_high);
        }
    }

    #[test]
    fn raising_truncation_never_raises_inverse_weights(seed in any::<u64>(), lo in 0.0f64..0.2, step in 0.0f64..0.2) {
        let ds = ks(200, seed);
        let plan = SplitMode::CrossFit { k: 2 }.plan(ds.n(), seed).unwrap();
        let run = |eta: f64| {
            let spec = NuisanceSpec { truncation: (eta > 0.0).then_some(eta), ..NuisanceSpec::default() };
            crossfit(&ds, plan.as_ref(), Recipe::Aipw, &spec, &RieszSpec::MeanMissingOutcome, seed)
                .map(|e| e.diagnostics.max_inv_pi)
        };
        let (a, b) = (run(lo), run(lo + step));
        prop_assume!(a.is_ok() && b.is_ok());
        prop_assert!(b.unwrap() <= a.unwrap() * (1.0 + 1e-12));
    }

    #[test]
    fn full_overlap_estimators_agree_on_the_sample_mean(seed in any::<u64>(), n in 3usize..40) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::<f64>::from_fn(n, 2, |_, j| if j == 0 { 1.0 } else { rng.random_range(-1.0..1.0) });
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(-50.0..250.0)).collect();
        let ds = Dataset::new(x, vec![true; n], y.clone(), None, None).unwrap();
        let ybar = y.iter().sum::<f64>() / n as f64;
        let spec = RieszSpec::MeanMissingOutcome;
        let direct = NuisanceFit::new(vec![1.0; n], vec![ybar; n], None).unwrap();
        prop_assert!(rel(estimate_direct(&ds, &direct, &spec).unwrap().psi_hat, ybar) <= 1e-12);
        let other: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..100.0)).collect();
        let fit = NuisanceFit::new(vec![1.0; n], other, None).unwrap();
        for est in [estimate_ipw, estimate_ipw_sn, estimate_aipw, estimate_aipw_sn, estimate_tmle] {
            prop_assert!(rel(est(&ds, &fit, &spec).unwrap().psi_hat, ybar) <= 1e-12);
        }
        let rows: Vec<usize> = (0..n).collect();
        let c = fit_fold(&ds, &rows, &rows, Recipe::ClearnerLinear, &NuisanceSpec::default(), &spec, seed, None);
        if let Ok(c) = c {
            prop_assert!(rel(c.result.psi_hat, ybar) <= 1e-9);
        }
    }

    #[test]
    fn aggregate_identities(errors in prop::collection::vec((-300.0f64..300.0, 0.0f64..40.0, any::<bool>()), 1..80)) {
        let raw: Vec<ReplicationRecord> = errors
            .iter()
            .enumerate()
            .map(|(i, &(e, w, ok))| ReplicationRecord {
                replication: i + 1,
                seed: i as u64,
                dataset_hash: String::new(),
                recipe: Recipe::Aipw,
                status: if ok || i == 0 { RunStatus::Ok } else { RunStatus::Failed },
                psi_hat: 210.0 + e,
                variance: w,
                ci_low: 210.0 + e - w,
                ci_high: 210.0 + e + w,
                truth: 210.0,
                max_residual: f64::NAN,
                min_pi: 0.1,
                max_inv_pi: 10.0,
                message: String::new(),
            })
            .collect();
        let s = &summarize(&raw, &[Recipe::Aipw], 100.0)[0];
        let max_abs = raw.iter().filter(|r| r.is_ok()).map(|r| r.error().abs()).fold(0.0, f64::max);
        prop_assert!(s.rmse.value * s.rmse.value >= s.bias.value * s.bias.value * (1.0 - 1e-12));
        prop_assert!(s.median_ae.value <= max_abs + 1e-9);
        prop_assert!((0.0..=1.0).contains(&s.coverage.value));
        prop_assert_eq!(s.completed + s.failures, raw.len());
    }
}

#[test]
fn runs_are_deterministic_and_paired() {
    let cfg = ExperimentConfig::new(
        "det",
        DgpSpec::KangSchafer {
            c: 1.0,
            misspecified: true,
            flipped: false,
        },
        150,
        12,
        vec![Recipe::Direct, Recipe::Aipw, Recipe::ClearnerLinear, Recipe::Tmle],
    );
    let dir = tempfile::tempdir().unwrap();
    let a = run_monte_carlo(&cfg).unwrap();
    let b = run_monte_carlo(&cfg).unwrap();
    render_report(&a, &[ReportFormat::Csv], &dir.path().join("a")).unwrap();
    render_report(&b, &[ReportFormat::Csv], &dir.path().join("b")).unwrap();
    let read = |d: &str| std::fs::read(dir.path().join(d).join("det_raw.csv")).unwrap();
    assert_eq!(read("a"), read("b"));
    assert_eq!(read_raw_csv(&dir.path().join("a/det_raw.csv")).unwrap().len(), 12 * 4);
    for r in 1..=12 {
        let hashes: Vec<&str> = a.raw.iter().filter(|x| x.replication == r).map(|x| x.dataset_hash.as_str()).collect();
        assert_eq!(hashes.len(), 4);
        assert!(hashes.iter().all(|h| *h == hashes[0] && !h.is_empty()));
    }
}
