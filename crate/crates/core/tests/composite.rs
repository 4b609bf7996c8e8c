mod common;

use common::*;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rvc_core::objective::{self, Objective};
use rvc_core::sim;
use rvc_core::*;

fn both_losses(ds: &Dataset, spec: &ModelSpec, beta: &DVector<f64>, gamma: &DVector<f64>) -> (f64, f64) {
    let rho = RhoConfig::default();
    (
        objective::loss_tau(ds, spec, beta, gamma, &rho).unwrap(),
        objective::loss_s(ds, spec, beta, gamma, &rho).unwrap(),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn regression_shift_leaves_losses_unchanged(seed in any::<u64>(), d in prop::collection::vec(-5.0f64..5.0, 3)) {
        let (ds, spec, beta, gamma) = random_problem(seed);
        let delta = DVector::from_vec(d);
        let y = DMatrix::from_fn(ds.n(), ds.p(), |i, j| ds.y()[(i, j)] + (ds.x()[i].row(j) * &delta)[0]);
        let shifted = ds.with_responses(y).unwrap();
        let a = both_losses(&ds, &spec, &beta, &gamma);
        let b = both_losses(&shifted, &spec, &(&beta + &delta), &gamma);
        prop_assert!(rel(a.0, b.0) < 1e-9 && rel(a.1, b.1) < 1e-9);
    }

    #[test]
    fn affine_design_map_leaves_losses_unchanged(seed in any::<u64>(), entries in prop::collection::vec(-2.0f64..2.0, 9)) {
        let (ds, spec, beta, gamma) = random_problem(seed);
        let bmat = DMatrix::from_row_slice(3, 3, &entries) + DMatrix::identity(3, 3) * 3.0;
        let binv = bmat.clone().try_inverse().unwrap();
        let xs: Vec<DMatrix<f64>> = ds.x().iter().map(|x| x * &bmat).collect();
        let mapped = Dataset::new(ds.y().clone(), xs).unwrap();
        let a = both_losses(&ds, &spec, &beta, &gamma);
        let b = both_losses(&mapped, &spec, &(&binv * &beta), &gamma);
        prop_assert!(rel(a.0, b.0) < 1e-9 && rel(a.1, b.1) < 1e-9);
    }

    #[test]
    fn response_scaling_is_quadratic(seed in any::<u64>(), zeta in 0.01f64..100.0) {
        let (ds, spec, beta, gamma) = random_problem(seed);
        let scaled = ds.with_responses(ds.y() * zeta).unwrap();
        let a = both_losses(&ds, &spec, &beta, &gamma);
        let b = both_losses(&scaled, &spec, &(&beta * zeta), &gamma);
        let z2 = zeta * zeta;
        prop_assert!(rel(z2 * a.0, b.0) < 1e-9 && rel(z2 * a.1, b.1) < 1e-9);
    }
}

#[test]
fn constant_weights_give_stacked_pair_least_squares() {
    // residual magnitudes in [1, 2] keep every scaled distance on the
    // quadratic piece when b is small, so all weights coincide
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let (n, p, k) = (25, 3, 2);
    let xs: Vec<DMatrix<f64>> = (0..n).map(|_| DMatrix::from_fn(p, k, |_, _| normal(&mut rng))).collect();
    let beta = DVector::from_vec(vec![0.5, -1.0]);
    let y = DMatrix::from_fn(n, p, |i, j| {
        let e = 1.0 + (normal(&mut rng).abs() % 1.0);
        (xs[i].row(j) * &beta)[0] + if normal(&mut rng) > 0.0 { e } else { -e }
    });
    let ds = Dataset::new(y, xs).unwrap();
    let spec = ModelSpec::new(vec![DMatrix::from_element(p, p, 1.0)]).unwrap();
    let rho = RhoConfig::new(1.0, 1.0, 0.1).unwrap();
    let gamma = DVector::zeros(1);
    let step = objective::beta_step(&ds, &spec, &beta, &gamma, &rho).unwrap();

    let mut lhs = DMatrix::zeros(k, k);
    let mut rhs = DVector::zeros(k);
    for pair in PairIndex::all(p) {
        for i in 0..n {
            for row in [pair.j, pair.l] {
                let xr = ds.x()[i].row(row).transpose();
                lhs += &xr * xr.transpose();
                rhs += &xr * ds.y()[(i, row)];
            }
        }
    }
    let ols = lhs.lu().solve(&rhs).unwrap();
    assert!((step - ols).abs().max() < 1e-10);
}

#[test]
fn fit_is_scale_and_shift_equivariant() {
    let mut rng = sim::rep_rng(41, 0, 0);
    let (ds, spec, _) = sim::gen_clean(&stated_scenario(), &mut rng).unwrap();
    let cfg = tau_cfg();
    let base = fit::fit_composite_tau(&ds, &spec, &cfg).unwrap();

    let zeta = 3.7;
    let scaled = fit::fit_composite_tau(&ds.with_responses(ds.y() * zeta).unwrap(), &spec, &cfg).unwrap();
    assert!(max_rel(&(&base.beta * zeta), &scaled.beta) < 1e-6);
    assert!(max_rel(&base.gamma, &scaled.gamma) < 1e-6);
    assert!(rel(base.eta * zeta * zeta, scaled.eta) < 1e-6);

    let delta = DVector::from_fn(ds.k(), |i, _| 0.5 - 0.25 * i as f64);
    let y = DMatrix::from_fn(ds.n(), ds.p(), |i, j| ds.y()[(i, j)] + (ds.x()[i].row(j) * &delta)[0]);
    let shifted = fit::fit_composite_tau(&ds.with_responses(y).unwrap(), &spec, &cfg).unwrap();
    assert!(max_rel(&(&base.beta + &delta), &shifted.beta) < 1e-6);
    assert!(max_rel(&base.gamma, &shifted.gamma) < 1e-6);
    assert!(rel(base.eta, shifted.eta) < 1e-6);
}

#[test]
fn equal_rhos_make_tau_and_s_agree() {
    let mut rng = sim::rep_rng(42, 0, 0);
    let (ds, spec, _) = sim::gen_clean(&stated_scenario(), &mut rng).unwrap();
    let rho = RhoConfig::new(1.0, 1.0, 0.5).unwrap().calibrated().unwrap();
    let cfg = FitConfig { rho, tol: 1e-9, ..Default::default() };
    let t = fit::fit_composite_tau(&ds, &spec, &cfg).unwrap();
    let s = fit::fit_composite_s(&ds, &spec, &cfg).unwrap();
    assert!((t.loss - rho.b * s.loss).abs() < 1e-8 * s.loss);
    assert!(max_rel(&t.beta, &s.beta) < 1e-5, "{} vs {}", t.beta, s.beta);
    assert!(max_rel(&t.gamma, &s.gamma) < 1e-4, "{} vs {}", t.gamma, s.gamma);
}

#[test]
fn gradient_vanishes_at_the_fit() {
    let mut rng = sim::rep_rng(43, 0, 0);
    let (ds, spec, _) = sim::gen_clean(&stated_scenario(), &mut rng).unwrap();
    let cfg = FitConfig { tol: 1e-9, ..tau_cfg() };
    let fit = fit::fit_composite_tau(&ds, &spec, &cfg).unwrap();
    assert!(fit.converged);
    let (gb, gg) = objective::composite_gradient(&ds, &spec, &fit.beta, &fit.gamma, &cfg.rho, Objective::Tau).unwrap();
    assert!(gb.norm() < 1e-4 * fit.loss.max(1.0), "{gb}");
    assert!(gg.norm() < 1e-2 * (1.0 + fit.gamma.norm()), "{gg}");
    for w in fit.trace.windows(2) {
        assert!(w[1].loss <= w[0].loss * (1.0 + 1e-12));
    }
}

#[test]
fn initializer_recovers_beta_on_clean_data() {
    let scn = sim::SimScenario { n: 200, ..stated_scenario() };
    let mut rng = sim::rep_rng(44, 0, 0);
    let (ds, spec, truth) = sim::gen_clean(&scn, &mut rng).unwrap();
    let (beta0, gamma0) = init::initial_estimates(&ds, &spec, &Default::default(), 0).unwrap();
    assert!((beta0 - &truth.beta).norm() < 0.2);
    assert!(model::assemble_sigma(&spec, 1.0, &gamma0).is_ok());
}

#[test]
fn composite_estimators_resist_cellwise_outliers() {
    let scn = sim::SimScenario {
        contamination: sim::Contamination::Icm,
        eps: 0.1,
        leverage: 1.0,
        omega0: 8.0,
        ..stated_scenario()
    };
    let mut rng = sim::rep_rng(45, 0, 0);
    let (ds, spec, truth) = sim::gen_clean(&scn, &mut rng).unwrap();
    let dirty = sim::contaminate(&ds, &scn, &mut sim::rep_rng(45, 0, 1)).unwrap().data;
    for est in [Estimator::CompositeTau, Estimator::CompositeS] {
        let fit = sim::fit_with(est, &dirty, &spec, &tau_cfg()).unwrap();
        assert!((&fit.beta - &truth.beta).norm() < 1.0, "{est:?}: {}", fit.beta);
    }
}

#[test]
fn invalid_problems_are_rejected() {
    let (ds, spec, _, _) = random_problem(1);
    let cfg = FitConfig { tol: -1.0, ..Default::default() };
    assert!(fit::fit_composite_tau(&ds, &spec, &cfg).is_err());
    let wrong = model::build_crossed_design(2, 2, 3).unwrap();
    assert!(fit::fit_composite_tau(&ds, &wrong, &FitConfig::default()).is_err());
    let bad_start = fit::fit_composite_from(
        &ds,
        &spec,
        &FitConfig::default(),
        Objective::Tau,
        DVector::zeros(2),
        DVector::zeros(2),
    );
    assert!(bad_start.is_err());
}
