use std::collections::BTreeSet;

use burgers_lab::harness::{anchors, CheckId, Experiment, ExperimentConfig, Status};
use burgers_lab::picard::SchemeState;

fn experiment(text: &str) -> Experiment {
    Experiment::new(ExperimentConfig::from_toml(text).expect("config parses")).expect("config valid")
}

fn prototype(u: f64, extra: &str) -> String {
    format!(
        r#"
[field]
dim = 1
kappa = 2.0
U = {u}
kind = {{ type = "prototype" }}

[iteration]
m_max = 3
mc_samples = 256
sde_steps = 32
horizon = 1.0
viscous = true
gradients = true
seed = 17
grid = {{ dim = 1, half_width = 6.0, nodes = 61, slices = [0.0, 0.5, 1.0] }}
{extra}
"#
    )
}

const CONSTANT: &str = r#"
[field]
dim = 1
kappa = 2.0
U = 1.0
K0 = 1.0
K1 = 1.0
K2 = 1.0
kind = { type = "constant", value = [0.5] }

[iteration]
m_max = 4
mc_samples = 64
sde_steps = 16
horizon = 0.03125
viscous = true
gradients = true
seed = 2
grid = { dim = 1, half_width = 4.0, nodes = 41, slices = [0.0, 0.015625, 0.03125] }

[checks]
enabled = ["v_decay", "uniform_bounds"]
"#;

#[test]
fn constant_field_differences_are_noise_dominated() {
    let mut exp = experiment(CONSTANT);
    let r = exp.run(CheckId::VDecay).unwrap();
    assert_eq!(r.status, Status::NoiseDominated);
    assert!(!r.pass);
}

#[test]
fn constant_field_derivative_constants_vanish() {
    let mut exp = experiment(CONSTANT);
    let r = exp.run(CheckId::UniformBounds).unwrap();
    let g = r.details["gradient_constants"].as_array().unwrap();
    let h = r.details["hessian_constants"].as_array().unwrap();
    assert!(g.iter().chain(h).all(|v| v.as_f64() == Some(0.0)), "{g:?} {h:?}");
    assert!(r.pass);
}

#[test]
fn zero_noise_running_max_is_degenerate() {
    let mut exp = experiment(&prototype(1.0, "[checks]\nenabled = [\"mt_tail\"]\nmt_variance_rate = 0.0\nmt_paths = 100\n"));
    let r = exp.run(CheckId::MtTail).unwrap();
    assert_eq!(r.status, Status::Degenerate);
    assert_eq!(r.details["constant_value"], 1.0);
}

#[test]
fn running_max_tail_rate_near_one_quarter() {
    let mut exp = experiment(&prototype(1.0, "[checks]\nenabled = [\"mt_tail\"]\nmt_paths = 20000\n"));
    let r = exp.run(CheckId::MtTail).unwrap();
    assert!(r.pass, "{}", r.to_json());
    assert!((0.12..=0.4).contains(&r.fitted_constant), "{}", r.fitted_constant);
}

#[test]
fn abnormal_frequency_drops_when_velocity_doubles() {
    let extra = "[checks]\nenabled = [\"displacement\"]\ndisplacement_paths = 2000\ndisplacement_times = [1.0]\n";
    let freq = |u: f64| {
        let mut exp = experiment(&prototype(u, extra));
        let r = exp.run(CheckId::Displacement).unwrap();
        r.details["abnormal_frequency"].as_f64().unwrap()
    };
    let (f1, f2) = (freq(1.0), freq(2.0));
    assert!(f2 < f1, "U=1: {f1}, U=2: {f2}");
}

#[test]
fn fixed_point_lemma_holds_on_random_draws() {
    let mut exp = experiment(&prototype(1.0, "[checks]\nenabled = [\"fixed_point\"]\nlemma_samples = 300\n"));
    let r = exp.run(CheckId::FixedPoint).unwrap();
    assert!(r.pass);
    assert_eq!(r.details["failures"], 0);
}

#[test]
fn iterates_do_not_depend_on_thread_count() {
    let cfg = ExperimentConfig::from_toml(&prototype(1.0, "")).unwrap();
    let field = cfg.field.build().unwrap();
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let mut s = SchemeState::new(&field, cfg.iteration.clone()).unwrap();
            s.run_to(3).unwrap();
            s
        })
    };
    let (a, b) = (run(1), run(3));
    for m in 0..=3 {
        assert_eq!(a.iterates[m], b.iterates[m], "iterate {m}");
        assert_eq!(a.stderr[m], b.stderr[m]);
        assert_eq!(a.gradients[m], b.gradients[m]);
    }
}

fn shipped(name: &str) -> String {
    std::fs::read_to_string(format!("{}/../../configs/{name}", env!("CARGO_MANIFEST_DIR"))).unwrap()
}

#[test]
fn report_anchors_cover_required_set() {
    let mut seen = BTreeSet::new();
    let extra = r#"
[checks]
enabled = ["hyp1", "uniform_bounds", "displacement", "mt_tail", "fixed_point", "oracle"]
displacement_paths = 200
mt_paths = 2000
lemma_samples = 20
"#;
    let mut exp = experiment(&prototype(1.0, extra));
    for r in exp.run_enabled().unwrap() {
        seen.extend(r.anchors().into_iter().map(str::to_string));
    }
    // The decay region t ≤ θ T_min and the safe-zone field need their own
    // configurations.
    for (file, id) in [("linear_decay.toml", CheckId::VDecay), ("safe_zones.toml", CheckId::SafeZones)] {
        let mut exp = experiment(&shipped(file));
        seen.extend(exp.run(id).unwrap().anchors().into_iter().map(str::to_string));
    }
    for a in anchors::REQUIRED {
        assert!(seen.contains(a), "anchor {a} never emitted; saw {seen:?}");
    }
}

#[test]
fn shipped_configs_enable_every_check() {
    let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs");
    let mut enabled = BTreeSet::new();
    for e in std::fs::read_dir(dir).unwrap().flatten() {
        let text = std::fs::read_to_string(e.path()).unwrap();
        let cfg = ExperimentConfig::from_toml(&text).unwrap_or_else(|err| panic!("{}: {err}", e.path().display()));
        cfg.validate().unwrap_or_else(|err| panic!("{}: {err}", e.path().display()));
        enabled.extend(cfg.checks.enabled);
    }
    assert_eq!(enabled, CheckId::ALL.into_iter().collect());
}
