use std::time::Instant;

use benchsim_core::liesym::*;
use benchsim_core::processes::{besq_laplace, cir_euler_step, cir_sample_transition, cir_transition_density, SquareRootParams};
use benchsim_core::randkit::{domains, par_sample, RngStream};
use benchsim_core::stats::mean_and_se;
use proptest::prelude::*;

fn uniform_points(seed: u64, n: usize, lo: [f64; 2], hi: [f64; 2]) -> Vec<(f64, f64)> {
    let mut s = RngStream::new(seed, 0);
    (0..n).map(|_| (lo[0] + (hi[0] - lo[0]) * s.uniform(), lo[1] + (hi[1] - lo[1]) * s.uniform())).collect()
}

#[test]
fn symmetry_images_solve_the_pde() {
    let besq = DriftProblem::besq(4.0);
    let s = SymmetryCase1::from_problem(&besq, 0.0, 0.0);
    let pts = uniform_points(1, 20, [0.2, 0.1], [5.0, 2.0]);
    let solutions: [&dyn Fn(f64, f64) -> f64; 2] = [&|_, _| 1.0, &|x, t| x + 4.0 * t];
    for u in solutions {
        for &(x, t) in &pts {
            let w = |x: f64, t: f64| case1_symmetry(&besq, &s, u, 0.3, x, t);
            let r = cauchy_residual(&besq, &w, x, t, 1e-4).unwrap();
            assert!(r.abs() < 1e-5, "x={x} t={t}: {r}");
        }
    }

    // Constant potential g = A puts the drift in the first family with that A.
    let a = 0.4;
    let killed = DriftProblem::new(1.0, 2.0, |_| 3.0).unwrap().with_derivative(|_| 0.0).with_potential(move |_| a);
    let c = classify_drift(&killed, &(1..=10).map(|i| 0.5 * i as f64).collect::<Vec<_>>()).unwrap().unwrap();
    assert_eq!(c.case, RicattiCase::One);
    assert!((c.constants[0] - a).abs() < 1e-10);
    let s = SymmetryCase1::from_problem(&killed, c.constants[0], c.constants[1]);
    for &(x, t) in &pts {
        let w = |x: f64, t: f64| case1_symmetry(&killed, &s, &|_, t| (-a * t).exp(), 0.2, x, t);
        assert!(cauchy_residual(&killed, &w, x, t, 1e-4).unwrap().abs() < 1e-5);
    }

    // γ = 0: the heat equation u_t = b u_xx.
    let heat = DriftProblem::new(0.0, 0.7, |_| 0.0).unwrap().with_derivative(|_| 0.0);
    let s = SymmetryCase1::from_problem(&heat, 0.0, 0.0);
    for &(x, t) in &pts {
        let w = |x: f64, t: f64| case1_symmetry(&heat, &s, &|_, _| 1.0, 0.15, x, t);
        assert!(cauchy_residual(&heat, &w, x, t, 1e-4).unwrap().abs() < 1e-5);
    }
}

#[test]
fn heat_symmetry_is_the_gaussian_transform_of_the_square() {
    // With γ = 0, U_λ(x,t) = E[e^{−λX²}] for X ~ N(x, 2bt).
    let b = 0.7;
    let heat = DriftProblem::new(0.0, b, |_| 0.0).unwrap().with_derivative(|_| 0.0);
    let s = SymmetryCase1::from_problem(&heat, 0.0, 0.0);
    let (nodes, weights) = benchsim_core::quad::gauss_hermite(80);
    for &(x, t, l) in &[(0.5, 1.0, 0.3), (2.0, 0.2, 1.5), (1.0, 3.0, 0.05)] {
        let u = symmetry_transform(&heat, &s, &|_| 1.0, l, x, t).unwrap();
        let sd = (2.0 * b * t).sqrt();
        let gh: f64 = nodes.iter().zip(&weights).map(|(z, w)| w * (-l * (x + sd * 2f64.sqrt() * z).powi(2)).exp()).sum::<f64>()
            / std::f64::consts::PI.sqrt();
        assert!((u - gh).abs() < 1e-12, "{u} vs {gh}");
    }
}

#[test]
fn joint_transform_at_zero_mu_matches_cir_sampler() {
    let (x, t, eta) = (1.0, 1.0, 0.1);
    let p = SquareRootParams::new(1.0, eta, 1.0, x).unwrap();
    let draws = par_sample(3, domains::VALIDATION, 100_000, |s, _| cir_sample_transition(s, &p, x, t)).unwrap();
    for lambda in [0.2, 0.5, 2.0] {
        let e: Vec<f64> = draws.iter().map(|y| (-lambda * y).exp()).collect();
        let (m, se) = mean_and_se(&e);
        let v = joint_laplace(x, t, lambda, 0.0, eta).unwrap();
        assert!((m - v).abs() < 3.0 * se, "lambda {lambda}: {m} ± {se} vs {v}");
    }
}

#[test]
fn joint_transform_matches_path_simulation() {
    let (x, t, eta, lambda, mu) = (1.0, 1.0, 0.1, 0.5, 0.5);
    let p = SquareRootParams::new(1.0, eta, 1.0, x).unwrap();
    let steps = 2000;
    let dt = t / steps as f64;
    let samples = par_sample(4, domains::CIR_PATH, 100_000, |s, _| {
        let mut y = x;
        let mut v = 0.5 / y;
        for k in 0..steps {
            y = cir_euler_step(s, &p, y, dt);
            let w = if k + 1 == steps { 0.5 } else { 1.0 };
            v += w / y.max(1e-10);
        }
        Ok((-lambda * y.max(0.0) - mu * v * dt).exp())
    })
    .unwrap();
    let (m, se) = mean_and_se(&samples);
    let q = joint_laplace(x, t, lambda, mu, eta).unwrap();
    assert!((m - q).abs() < 3.0 * se, "{m} ± {se} vs {q}");
    assert!(((joint_laplace_closed_form(x, t, lambda, mu, eta).unwrap() - q) / q).abs() < 1e-9);
}

#[test]
fn kernel_normalizes_at_zero_mu() {
    for &(x, t, eta) in &[(1.0, 1.0, 0.1), (20.0, 1.0, 0.05), (0.3, 4.0, 0.5)] {
        let mass = joint_laplace(x, t, 0.0, 0.0, eta).unwrap();
        assert!((mass - 1.0).abs() < 1e-6, "{mass}");
    }
}

fn stylized_density(cfg: &InversionConfig) -> JointDensityGrid {
    let (yg, vg) = default_grids(20.0, 1.0, 0.05, 121, 121).unwrap();
    invert_joint_density(20.0, 1.0, 0.05, cfg, &yg, &vg).unwrap()
}

fn rel_gap(a: &JointDensityGrid, b: &JointDensityGrid) -> f64 {
    let peak = a.values.iter().cloned().fold(0.0, f64::max);
    a.values
        .iter()
        .zip(&b.values)
        .filter(|(x, _)| **x > 1e-3 * peak)
        .map(|(x, y)| ((x - y) / x).abs())
        .fold(0.0, f64::max)
}

#[test]
fn inverted_density_is_a_valid_joint_law() {
    let start = Instant::now();
    let g = stylized_density(&InversionConfig::default());
    eprintln!("inversion: {:?}", start.elapsed());
    assert!(g.values.iter().all(|&v| v >= 0.0));
    let mass = g.total_mass();
    assert!((mass - 1.0).abs() < 2e-3, "mass {mass}");

    let p = SquareRootParams::new(1.0, 0.05, 1.0, 20.0).unwrap();
    let marg = g.y_marginal();
    let exact: Vec<f64> = g.y_grid.iter().map(|&y| cir_transition_density(&p, 20.0, y, 1.0).unwrap()).collect();
    let peak = exact.iter().cloned().fold(0.0, f64::max);
    let mut worst = 0.0f64;
    for (m, e) in marg.iter().zip(&exact) {
        if *e > 1e-3 * peak {
            worst = worst.max(((m - e) / e).abs());
        }
    }
    eprintln!("mass {mass} marginal {worst}");
    assert!(worst < 2e-3, "marginal rel err {worst}");

    let doubled = stylized_density(&InversionConfig::default().with_nodes(52));
    let gap = rel_gap(&g, &doubled);
    eprintln!("doubling gap {gap}");
    assert!(gap < 1e-6, "doubling changed density by {gap}");
}

#[test]
fn talbot_agrees_where_its_contour_is_stable_and_reports_where_not() {
    // V_T is of order a few here, so the left half-plane excursion is benign.
    let (x, t, eta) = (0.5, 4.0, 0.5);
    let (yg, vg) = default_grids(x, t, eta, 41, 41).unwrap();
    let e = invert_joint_density(x, t, eta, &InversionConfig::euler(), &yg, &vg).unwrap();
    let t = invert_joint_density(x, t, eta, &InversionConfig::talbot(), &yg, &vg);
    match t {
        Ok(t) => {
            let gap = rel_gap(&e, &t);
            eprintln!("talbot vs euler {gap}");
            assert!(gap < 1e-5, "{gap}");
        }
        Err(err) => panic!("talbot failed at moderate v: {err}"),
    }
    let (yg, vg) = default_grids(20.0, 1.0, 0.05, 21, 21).unwrap();
    assert!(matches!(
        invert_joint_density(20.0, 1.0, 0.05, &InversionConfig::talbot(), &yg, &vg),
        Err(benchsim_core::Error::InversionDiagnostic { .. })
    ));
}

#[test]
fn density_files_round_trip() {
    let (yg, vg) = default_grids(2.0, 0.5, 0.2, 12, 10).unwrap();
    let g = invert_joint_density(2.0, 0.5, 0.2, &InversionConfig::default(), &yg, &vg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (h, d) = (dir.path().join("density.json"), dir.path().join("density.bin"));
    g.write_binary(&h, &d, serde_json::json!({"seed": null})).unwrap();
    let back = JointDensityGrid::read_binary(&h).unwrap();
    assert_eq!(back, g);
    let mut csv = Vec::new();
    g.write_csv(&mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    assert!(text.starts_with("y,v,density,weight\n"));
    assert_eq!(text.lines().count(), 1 + 12 * 10);
    assert!(invert_joint_density(2.0, 0.5, 0.2, &InversionConfig::default(), &[1.0, 0.5], &vg).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn symmetry_transform_is_the_besq_laplace_transform(delta in 0.5f64..8.0, x in 0.01f64..10.0, t in 0.01f64..5.0, l in 0.0f64..5.0) {
        let p = DriftProblem::besq(delta);
        // F(x) = δ ln x exactly.
        let s = SymmetryCase1::new(0.0, 0.5 * delta * delta - 2.0 * delta, move |x: f64| delta * x.ln());
        let u = symmetry_transform(&p, &s, &|_| 1.0, l, x, t).unwrap();
        let v = besq_laplace(x, t, l, delta);
        prop_assert!((u - v).abs() <= 1e-12 * v.max(1e-300) + 1e-300, "{} vs {}", u, v);
    }

    #[test]
    fn heat_mgf_agrees(g in 0.1f64..2.0, a in 0.1f64..2.0, x in 0.1f64..2.0, t in 0.1f64..2.0) {
        let (l, r) = heat_mgf_check(g, a, x, t).unwrap();
        prop_assert!(((l - r) / r).abs() < 1e-10);
    }
}
