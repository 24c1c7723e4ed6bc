use cascade_eit::parallel::with_threads;
use cascade_eit::presets;
use cascade_eit::spectrum::{
    extract_features, per_m_components, predict_dip_position, simulate, uniform_grid, Engine, ScanConfig, Signal,
    SublevelMode,
};
use cascade_eit::Scenario;
use proptest::prelude::*;

fn scan(points: usize, delta2: f64, doppler: bool, sublevels: SublevelMode) -> ScanConfig {
    ScanConfig {
        delta1: uniform_grid(-3000.0, 3000.0, points),
        doppler,
        sublevels,
        ..ScanConfig::new(delta2)
    }
}

fn weak_probe() -> Scenario {
    let mut s = presets::li2_scenario();
    s.lasers.probe_power = 1e-9;
    s
}

#[test]
fn components_add_up_to_the_sum() {
    let scn = presets::li2_scenario();
    let cs = scn.channels().unwrap();
    let sc = scan(41, 420.0, true, SublevelMode::Sum);
    let total = simulate(&scn, &cs, &sc).unwrap();
    let comps = per_m_components(&scn, &cs, &sc).unwrap();
    assert_eq!(comps.len(), 15);
    for i in 0..sc.delta1.len() {
        let s22: f64 = comps.iter().map(|c| c.rho22[i]).sum();
        let s33: f64 = comps.iter().map(|c| c.rho33[i]).sum();
        assert!((s22 - total.rho22[i]).abs() <= 1e-12 * total.rho22[i].abs());
        assert!((s33 - total.rho33[i]).abs() <= 1e-12 * total.rho33[i].abs().max(1e-300));
    }
}

#[test]
fn thread_count_does_not_change_bits() {
    let scn = presets::li2_scenario();
    let cs = scn.channels().unwrap();
    let sc = scan(61, 1000.0, true, SublevelMode::Sum);
    let one = with_threads(1, || simulate(&scn, &cs, &sc).unwrap());
    let many = with_threads(5, || simulate(&scn, &cs, &sc).unwrap());
    assert_eq!(one.to_csv().unwrap(), many.to_csv().unwrap());
}

#[test]
fn engines_agree_for_weak_probe_with_doppler() {
    let scn = weak_probe();
    let cs = scn.channels().unwrap();
    let mut sc = scan(50, 0.0, true, SublevelMode::Sum);
    let analytic = simulate(&scn, &cs, &sc).unwrap();
    sc.engine = Engine::Oracle;
    let oracle = simulate(&scn, &cs, &sc).unwrap();
    for (a, o) in analytic.rho22.iter().zip(&oracle.rho22).chain(analytic.rho33.iter().zip(&oracle.rho33)) {
        assert!((a - o).abs() <= 1e-4 * o.abs(), "{a} vs {o}");
    }
}

#[test]
fn doppler_average_lowers_the_peak() {
    // averaging a positive profile cannot raise its maximum
    let scn = presets::li2_scenario();
    let cs = scn.channels().unwrap();
    let sharp = simulate(&scn, &cs, &scan(201, 0.0, false, SublevelMode::Single(5))).unwrap();
    let smooth = simulate(&scn, &cs, &scan(201, 0.0, true, SublevelMode::Single(5))).unwrap();
    let max = |v: &[f64]| v.iter().cloned().fold(0.0, f64::max);
    assert!(max(&smooth.rho22) < max(&sharp.rho22));
}

#[test]
fn dip_follows_two_photon_law() {
    let scn = presets::li2_scenario();
    let cs = scn.channels().unwrap();
    for delta2 in [0.0, 420.0, 1000.0] {
        let sc = ScanConfig::new(delta2);
        let step = sc.delta1[1] - sc.delta1[0];
        let s = simulate(&scn, &cs, &sc).unwrap();
        let f = extract_features(&s, Signal::Rho22).unwrap();
        let expected = predict_dip_position(delta2, scn.system.omega21, scn.system.omega32, true);
        assert!((f.dip_position - expected).abs() <= 2.0 * step, "{delta2}: {} vs {expected}", f.dip_position);
    }
}

#[test]
fn doppler_free_splitting_tracks_coupling_rabi_frequency() {
    let scn = presets::li2_scenario();
    let cs = scn.channels().unwrap();
    let gamma = scn.system.gamma2.max(scn.system.gamma3);
    let mut checked = 0;
    for c in cs.channels.iter().filter(|c| c.g2 >= 10.0 * gamma) {
        let mut sc = scan(24001, 0.0, false, SublevelMode::Single(c.abs_m));
        sc.rho22 = false;
        let f = extract_features(&simulate(&scn, &cs, &sc).unwrap(), Signal::Rho33).unwrap();
        let g2_mhz = c.g2 / (2.0 * std::f64::consts::PI);
        assert!((f.at_splitting - g2_mhz).abs() <= 0.1 * g2_mhz, "|M| = {}: {} vs {g2_mhz}", c.abs_m, f.at_splitting);
        checked += 1;
    }
    assert!(checked > 0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn populations_nonnegative(
        delta2 in -2000.0f64..2000.0,
        power in 0.0f64..1.0,
        m in 0u32..15,
    ) {
        let mut scn = presets::li2_scenario();
        scn.lasers.coupling_power = power;
        let cs = scn.channels().unwrap();
        let s = simulate(&scn, &cs, &scan(81, delta2, false, SublevelMode::Single(m))).unwrap();
        prop_assert!(s.rho22.iter().chain(&s.rho33).all(|&v| v >= 0.0 && v.is_finite()));
    }

    #[test]
    fn upper_level_needs_coupling(delta2 in -2000.0f64..2000.0, m in 0u32..15) {
        let mut scn = presets::li2_scenario();
        scn.lasers.coupling_power = 0.0;
        let cs = scn.channels().unwrap();
        let s = simulate(&scn, &cs, &scan(31, delta2, false, SublevelMode::Single(m))).unwrap();
        prop_assert!(s.rho33.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn weak_probe_scales_quadratically(factor in 1.5f64..20.0, delta2 in -500.0f64..500.0) {
        // both populations are linear in probe power in the weak-probe regime
        let base = weak_probe();
        let mut brighter = base.clone();
        brighter.lasers.probe_power *= factor;
        let sc = scan(21, delta2, false, SublevelMode::Single(9));
        let a = simulate(&base, &base.channels().unwrap(), &sc).unwrap();
        let b = simulate(&brighter, &brighter.channels().unwrap(), &sc).unwrap();
        for (x, y) in a.rho22.iter().zip(&b.rho22) {
            prop_assert!((y / x - factor).abs() <= 1e-9 * factor);
        }
    }
}
