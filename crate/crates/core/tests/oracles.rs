use burgers_lab::oracle::{cole_hopf_1d, reference_fd_1d, ColeHopf, FdOptions, OracleQuery};
use burgers_lab::velocity::{make_prototype, DirectionMap, FieldKind, VelocityFieldSpec};
use proptest::prelude::*;

fn spec(kind: FieldKind) -> VelocityFieldSpec {
    VelocityFieldSpec::new(1, 2.0, 1.0, (1.0, 1.0, 1.0), 1.0, 0.0, kind).unwrap()
}

/// `sup |fd − ch| / max(|ch|, 0.1)` over `|x| ≤ 10`.
fn fd_vs_cole_hopf(u0: &VelocityFieldSpec, t: f64) -> f64 {
    let fd = reference_fd_1d(u0, &FdOptions::new(-20.0, 20.0, 0.01), t).unwrap();
    let ch = ColeHopf::new(u0).unwrap();
    let mut worst: f64 = 0.0;
    for k in 0..=200 {
        let x = -10.0 + 0.1 * k as f64;
        let reference = ch.eval(&OracleQuery::new(t, x)).unwrap();
        let candidate = fd.at(x).unwrap();
        worst = worst.max((candidate - reference).abs() / reference.abs().max(0.1));
    }
    worst
}

#[test]
fn finite_differences_agree_with_cole_hopf_on_acceptance_fields() {
    let fields = [
        ("prototype", make_prototype(1, 1.0, 2.0, DirectionMap::Identity).unwrap()),
        ("linear", spec(FieldKind::LinearProfile { slope: 1.0 })),
        ("shock", spec(FieldKind::Shock { amplitude: 1.0, eta: 1.0 })),
    ];
    for (name, u0) in &fields {
        for t in [0.25, 0.5, 1.0] {
            let err = fd_vs_cole_hopf(u0, t);
            assert!(err <= 0.01, "{name} t={t}: interior relative difference {err}");
        }
    }
}

#[test]
fn viscosity_convention_pinned() {
    let u0 = spec(FieldKind::LinearProfile { slope: 1.0 });
    let v = cole_hopf_1d(&u0, &OracleQuery::new(1.0, 2.0)).unwrap();
    assert!((v - 1.0).abs() < 1e-8, "{v}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn constant_data_is_preserved(c in -3.0f64..3.0, t in 0.05f64..4.0, x in -20.0f64..20.0) {
        let u0 = spec(FieldKind::Constant { value: vec![c] });
        let v = cole_hopf_1d(&u0, &OracleQuery::new(t, x)).unwrap();
        prop_assert!((v - c).abs() < 1e-7, "u = {v}, c = {c}");
    }

    #[test]
    fn linear_profile_matches_exact(t in 0.05f64..4.0, x in -15.0f64..15.0) {
        let u0 = spec(FieldKind::LinearProfile { slope: 1.0 });
        let v = cole_hopf_1d(&u0, &OracleQuery::new(t, x)).unwrap();
        let exact = x / (1.0 + t);
        prop_assert!((v - exact).abs() <= 1e-7 * (1.0 + exact.abs()), "{v} vs {exact}");
    }

    #[test]
    fn shock_is_stationary(t in 0.05f64..4.0, x in -10.0f64..10.0) {
        let u0 = spec(FieldKind::Shock { amplitude: 1.0, eta: 1.0 });
        let v = cole_hopf_1d(&u0, &OracleQuery::new(t, x)).unwrap();
        prop_assert!((v + (x / 2.0).tanh()).abs() < 1e-7);
    }

    #[test]
    fn prototype_solution_is_odd(t in 0.05f64..2.0, x in 0.0f64..10.0) {
        let u0 = make_prototype(1, 1.0, 2.0, DirectionMap::Identity).unwrap();
        let a = cole_hopf_1d(&u0, &OracleQuery::new(t, x)).unwrap();
        let b = cole_hopf_1d(&u0, &OracleQuery::new(t, -x)).unwrap();
        prop_assert!((a + b).abs() < 1e-7);
    }
}
