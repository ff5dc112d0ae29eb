use darnwalk::diffusion::{BoundarySet, DarnedState, Domain, SimulationOptions, Simulator};
use darnwalk::geometry::{level_radius, radial_g, Configuration, Defaults, Orientation, Shell};
use darnwalk::harmonic::{
    gauss_legendre, harmonicity_test_at_x0, mean_value_check, solve_dirichlet, BoundaryValues,
    FnField, ShellLevelField, DEFAULT_QUADRATURE,
};
use darnwalk::measures::{make_parametric_family, SphereMeasure};
use darnwalk::StreamKey;
use proptest::prelude::*;

fn reference() -> Configuration {
    let a = Shell::new(1, vec![0.0; 2], 1.0, 2.0, Orientation::Outward).unwrap();
    let b = Shell::new(2, vec![0.0; 3], 1.0, 2.0, Orientation::Outward).unwrap();
    Configuration::new(vec![a, b], vec![0.4, 0.6], Defaults::default()).unwrap()
}

fn level_field(cfg: &Configuration, at_x0: f64) -> ShellLevelField<'_> {
    // 0.4 * 1.5 - 0.6 * 1 = 0 and 0.4 * 0.2 + 0.6 * 0.7 = 0.5
    ShellLevelField {
        config: cfg,
        offsets: vec![0.2, 0.7],
        slopes: vec![1.5, -1.0],
        at_x0,
    }
}

#[test]
fn balanced_level_field_is_harmonic_at_x0() {
    let cfg = reference();
    let family = make_parametric_family(&cfg, &[0.4, 0.6]).unwrap();
    let radii = [0.1, 0.3, 0.7];
    let good = harmonicity_test_at_x0(
        &cfg,
        &family,
        &level_field(&cfg, 0.5),
        &radii,
        0,
        DEFAULT_QUADRATURE,
        StreamKey::new(1),
    )
    .unwrap();
    assert!(good.pass, "{good:?}");
    let bad = harmonicity_test_at_x0(
        &cfg,
        &family,
        &level_field(&cfg, 0.6),
        &radii,
        0,
        DEFAULT_QUADRATURE,
        StreamKey::new(1),
    )
    .unwrap();
    assert!(!bad.pass && !bad.mixed, "{bad:?}");
    // the wrong family breaks it too
    let swapped = make_parametric_family(&cfg, &[0.6, 0.4]).unwrap();
    let off = harmonicity_test_at_x0(
        &cfg,
        &swapped,
        &level_field(&cfg, 0.5),
        &radii,
        0,
        DEFAULT_QUADRATURE,
        StreamKey::new(1),
    )
    .unwrap();
    assert!(!off.pass, "{off:?}");
}

#[test]
fn level_field_satisfies_the_mean_value_property() {
    let cfg = reference();
    let mut centers = vec![(1, vec![0.0, 1.5]), (2, vec![1.0, 1.0, 0.3])];
    let rows = mean_value_check(
        &cfg,
        &level_field(&cfg, 0.5),
        &centers,
        &[0.05, 0.1],
        DEFAULT_QUADRATURE,
    )
    .unwrap();
    assert!(rows.iter().all(|r| r.report.pass), "{rows:?}");
    centers.push((2, vec![6.0, 0.0, 0.0]));
    // |x|² is subharmonic: its spherical means exceed the center value
    let square = FnField(|s: &DarnedState| match s {
        DarnedState::AtPoint { position, .. } => Ok(position.iter().map(|x| x * x).sum()),
        DarnedState::AtDarned => Ok(0.0),
    });
    let rows = mean_value_check(&cfg, &square, &centers, &[0.1], DEFAULT_QUADRATURE).unwrap();
    assert!(
        rows.iter().all(|r| !r.report.pass && r.deficit > 0.0),
        "{rows:?}"
    );
}

#[test]
fn dirichlet_values_obey_the_maximum_principle() {
    let cfg = reference();
    let sigma = SphereMeasure::Parametric {
        level: 1e-2,
        weights: vec![0.4, 0.6],
    };
    let opts = SimulationOptions {
        r0: 1e-2,
        ..SimulationOptions::from_config(&cfg)
    };
    let sim = Simulator::new(&cfg, &sigma, &Domain::Darned { t: 0.5 }, opts).unwrap();
    let points = vec![
        DarnedState::AtDarned,
        DarnedState::point(1, vec![1.2, 0.0]),
        DarnedState::point(2, vec![0.0, 0.0, 1.1]),
    ];
    let constant = solve_dirichlet(
        &sim,
        &BoundaryValues::constant(2.5),
        &points,
        500,
        StreamKey::new(2),
    )
    .unwrap();
    assert!(
        constant
            .iter()
            .all(|v| v.value == 2.5 && v.std_error == 0.0),
        "{constant:?}"
    );
    let mut data = BoundaryValues::indicator(BoundarySet::LevelSphere { shell: 0, t: 0.5 });
    data.terms
        .push((BoundarySet::LevelSphere { shell: 1, t: 0.5 }, -1.0));
    let values = solve_dirichlet(&sim, &data, &points, 4_000, StreamKey::new(3)).unwrap();
    for v in &values {
        assert!((-1.0..=1.0).contains(&v.value), "{v:?}");
    }
    // from x0 the exit law is sigma_t: 0.4 - 0.6
    assert!(
        (values[0].value + 0.2).abs() <= 3.0 * values[0].std_error,
        "{:?}",
        values[0]
    );
}

#[test]
fn hitting_x0_grows_with_the_domain() {
    let cfg = reference();
    let sigma = SphereMeasure::Parametric {
        level: 1e-2,
        weights: vec![0.4, 0.6],
    };
    let shell = &cfg.shells()[1];
    let y = vec![0.0, level_radius(shell, 0.1).unwrap(), 0.0];
    assert!((radial_g(shell, y[1]).unwrap() - 0.1).abs() < 1e-12);
    let start = [DarnedState::point(2, y)];
    let n = 20_000;
    let mut last = 0.0;
    for t in [0.2, 0.4, 0.8] {
        let opts = SimulationOptions {
            r0: 1e-2,
            ..SimulationOptions::from_config(&cfg)
        };
        let sim = Simulator::new(&cfg, &sigma, &Domain::Level { t }, opts).unwrap();
        let v = &solve_dirichlet(
            &sim,
            &BoundaryValues::indicator(BoundarySet::Darned),
            &start,
            n,
            StreamKey::new(4),
        )
        .unwrap()[0];
        let exact = 1.0 - 0.1 / t;
        assert!(
            (v.value - exact).abs() <= 3.0 * v.std_error,
            "t = {t}: {v:?} vs {exact}"
        );
        assert!(v.value > last);
        last = v.value;
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 60, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn gauss_legendre_is_exact_to_degree_2m_minus_1(m in 1usize..80, k in 0usize..160) {
        let (x, w) = gauss_legendre(m);
        prop_assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-13);
        prop_assert!(x.windows(2).all(|p| p[0] > p[1]));
        let k = k % (2 * m);
        let integral: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(k as i32)).sum();
        let exact = if k % 2 == 1 { 0.0 } else { 2.0 / (k as f64 + 1.0) };
        prop_assert!((integral - exact).abs() < 1e-12, "m {} k {}: {}", m, k, integral);
    }
}
