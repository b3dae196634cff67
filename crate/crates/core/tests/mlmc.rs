use benchsim_core::mlmc::*;
use benchsim_core::pricing::VolOption;
use benchsim_core::processes::MmmParams;
use benchsim_core::randkit::RngStream;
use benchsim_core::Error;
use proptest::prelude::*;

fn near_money() -> VolPayoff {
    VolPayoff::put(0.22, 1.0)
}

#[test]
fn correction_variances_decay_geometrically() {
    let p = MmmParams::stylized();
    let cfg = MlmcConfig::default();
    let v: Vec<f64> = (2..=6).map(|l| level_statistics(&p, &near_money(), &cfg, l, 10_000, 21).variance).collect();
    for l in 1..=3 {
        let ratio = v[l + 1] / v[l];
        assert!(ratio < 0.9, "V_{}/V_{} = {ratio}", l + 3, l + 2);
    }
    let m2 = level_statistics(&p, &near_money(), &cfg, 2, 10_000, 22).mean;
    let m6 = level_statistics(&p, &near_money(), &cfg, 6, 10_000, 22).mean;
    assert!(m6.abs() < m2.abs(), "{m6} vs {m2}");
}

#[test]
fn level_means_telescope_to_the_fine_estimator() {
    let p = MmmParams::stylized();
    let cfg = MlmcConfig::default();
    let top = 4;
    let n = 40_000;
    let levels: Vec<LevelStats> = (0..=top).map(|l| level_statistics(&p, &near_money(), &cfg, l, n, 23)).collect();
    let sum: f64 = levels.iter().map(|l| l.mean).sum();
    let se_sum = levels.iter().map(|l| l.variance / n as f64).sum::<f64>().sqrt();
    let fine = single_level_estimate(&p, &near_money(), &cfg, top, n, 24);
    let se = (se_sum.powi(2) + fine.std_error.powi(2)).sqrt();
    assert!((sum - fine.value).abs() < 3.0 * se, "{sum} vs {fine:?}");
}

#[test]
fn single_level_run_matches_plain_euler() {
    let p = MmmParams::stylized();
    let cfg = MlmcConfig { l_max: 0, eps: 2e-4, ..MlmcConfig::default() };
    let out = mlmc_run(&p, &near_money(), &cfg, 25).unwrap();
    assert_eq!(out.levels.len(), 1);
    let n = out.levels[0].n_assigned;
    let plain = single_level_estimate(&p, &near_money(), &cfg, 0, n, 25);
    assert_eq!(out.estimate.value, plain.value);
    assert_eq!(out.estimate.std_error, plain.std_error);
}

#[test]
fn halving_the_tolerance_raises_the_cost_at_least_threefold() {
    let p = MmmParams::stylized();
    let cfg = MlmcConfig { eps: 5e-5, ..MlmcConfig::default() };
    let coarse = mlmc_run(&p, &near_money(), &cfg, 26).unwrap();
    let fine = mlmc_run(&p, &near_money(), &MlmcConfig { eps: 2.5e-5, ..cfg }, 26).unwrap();
    let ratio = fine.total_cost / coarse.total_cost;
    assert!(ratio >= 3.0, "cost ratio {ratio}");
    assert!(fine.estimate.std_error < coarse.estimate.std_error);
    assert!(fine.levels.len() >= coarse.levels.len());
}

#[test]
fn runs_are_reproducible() {
    let p = MmmParams::stylized();
    let cfg = MlmcConfig { eps: 2e-4, ..MlmcConfig::default() };
    let a = mlmc_run(&p, &near_money(), &cfg, 27).unwrap();
    let b = mlmc_run(&p, &near_money(), &cfg, 27).unwrap();
    assert_eq!(a, b);
    let c = mlmc_run(&p, &near_money(), &cfg, 28).unwrap();
    assert_ne!(a.estimate.value, c.estimate.value);
}

#[test]
fn unattainable_tolerance_reports_the_levels_reached() {
    let p = MmmParams::stylized();
    let cfg = MlmcConfig { eps: 1e-5, l_max: 1, ..MlmcConfig::default() };
    match mlmc_run(&p, &near_money(), &cfg, 29) {
        Err(Error::MlmcNotConverged { max_level, levels }) => {
            assert_eq!(max_level, 1);
            assert_eq!(levels.len(), 2);
            assert!(levels.iter().all(|l| l.n_assigned >= cfg.pilot_n));
        }
        other => panic!("expected non-convergence, got {other:?}"),
    }
}

#[test]
fn level_stats_csv_has_one_row_per_level() {
    let p = MmmParams::stylized();
    let out = mlmc_run(&p, &near_money(), &MlmcConfig { eps: 2e-4, ..MlmcConfig::default() }, 30).unwrap();
    let mut buf = Vec::new();
    write_level_stats_csv(&mut buf, &out.levels).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), out.levels.len() + 1);
    assert!(lines[0].starts_with("level,"));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn coupled_paths_stay_nonnegative_and_finite(seed in any::<u64>(), coarse in 1usize..16, y0 in 0.01f64..30.0) {
        let p = MmmParams::new(y0 * 0.05, 0.05, 0.05, 0.03).unwrap();
        let sr = p.square_root();
        let (f, c) = coupled_vol_paths(&mut RngStream::new(seed, 0), &sr, 1.0, coarse);
        for s in [f, c] {
            prop_assert!(s.y_t >= 0.0 && s.y_t.is_finite());
            prop_assert!(s.integral >= 0.0 && s.integral.is_finite());
        }
    }

    #[test]
    fn payoffs_are_nonnegative_and_put_is_monotone(v in 0.0f64..10.0, y in 0.0f64..50.0, k in 0.0f64..1.0) {
        let p = MmmParams::stylized();
        let lo = VolPayoff { kind: VolOption::Put, strike: k, maturity: 1.0 }.benchmarked(&p, y, v);
        let hi = VolPayoff { kind: VolOption::Put, strike: k + 0.1, maturity: 1.0 }.benchmarked(&p, y, v);
        prop_assert!(lo >= 0.0 && lo.is_finite());
        prop_assert!(hi >= lo);
    }
}
