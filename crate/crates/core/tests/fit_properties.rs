use cascade_eit::fitting::{fit, resolve_init, synthetic_target, FitParam, FitProblem, FitResult};
use cascade_eit::presets;
use cascade_eit::spectrum::{simulate, uniform_grid, Signal};

/// Fits a noisy ρ33 target made at b3 = 0.2 while the model assumes `b3`.
fn refit(b3: f64, points: usize) -> FitResult {
    let mut cfg = presets::get("li2_fig4").unwrap().unwrap();
    cfg.scan.delta1 = uniform_grid(-3000.0, 3000.0, points);
    let fc = cfg.fit.clone().unwrap();
    let truth = simulate(&cfg.scenario, &cfg.scenario.channels().unwrap(), &cfg.scan).unwrap();
    let target = synthetic_target(&truth, Signal::Rho33, Some((0.01, 11)));
    let mut scn = cfg.scenario.clone();
    scn.system.b3 = b3;
    let fp = FitProblem::new(scn, cfg.scan.clone(), &target, Signal::Rho33, fc.free.clone(), fc.bounds.clone()).unwrap();
    let init = resolve_init(&fp, &fc.init).unwrap();
    fit(&fp, &init).unwrap()
}

#[test]
fn branching_ratio_moves_dipole_by_under_two_percent() {
    let reference = refit(0.2, 201);
    let mu0 = reference.value(FitParam::MuCoupling).unwrap();
    assert!((mu0 - 1.45).abs() < 0.02 * 1.45);
    for b3 in [0.1, 0.5] {
        let r = refit(b3, 201);
        assert!(r.converged);
        let mu = r.value(FitParam::MuCoupling).unwrap();
        assert!((mu - mu0).abs() < 0.02 * mu0, "b3 = {b3}: {mu} vs {mu0}");
    }
}

#[test]
#[ignore = "fails: across b3 in [0.1, 0.5] the recovered dipole moves by 7 to 17 times its curvature sensitivity"]
fn branching_ratio_within_sensitivity() {
    let reference = refit(0.2, 801);
    let mu0 = reference.value(FitParam::MuCoupling).unwrap();
    for b3 in [0.1, 0.5] {
        let r = refit(b3, 801);
        let mu = r.value(FitParam::MuCoupling).unwrap();
        let sigma = r.sensitivity(FitParam::MuCoupling).unwrap();
        assert!((mu - mu0).abs() < sigma, "b3 = {b3}: shift {} vs sensitivity {sigma}", mu - mu0);
    }
}
