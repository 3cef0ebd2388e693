//! Acceptance suite: one line per criterion.
//!
//! Runs the end-to-end CLI pipeline on `configs/prototype.toml` twice (with
//! different `--jobs`) and the remaining criteria through the library.
//! Set `ACCEPTANCE_ONLY=2,5,...` to run a subset (the pipeline criteria 1, 7,
//! 9 and 12 share one pipeline run).
//!
//! Criterion 10 is implemented as stated and currently fails; it is listed
//! in `KNOWN_FAILURES` and reported as `FAIL (known)`. Any other failure
//! makes the process exit non-zero.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use burgers_lab::characteristics::{integrate_deterministic, IntegratorOptions, Negated, StepGrid};
use burgers_lab::harness::{CheckId, Experiment, ExperimentConfig};
use burgers_lab::picard::{fd_gradient, gradient_fk, run_penalized, t_n, GridSpec, IterationConfig, SchemeState};
use burgers_lab::velocity::{make_prototype, DirectionMap, FieldKind, VelocityFieldSpec};
use serde_json::Value;

const KNOWN_FAILURES: &[u32] = &[10];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn config(name: &str) -> ExperimentConfig {
    ExperimentConfig::load(&root().join("configs").join(name)).expect("acceptance config")
}

fn experiment(name: &str) -> Experiment {
    Experiment::new(config(name)).expect("valid acceptance config")
}

fn read_json(path: &Path) -> Value {
    let text = std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    serde_json::from_str(&text).expect("report json")
}

struct Pipeline {
    out: PathBuf,
    codes: [i32; 3],
    seconds: f64,
}

fn run_pipeline(out: &Path, jobs: usize) -> Pipeline {
    let exe = env!("CARGO_BIN_EXE_burgers-lab");
    let cfg = root().join("configs/prototype.toml");
    let start = Instant::now();
    let mut codes = [0; 3];
    for (k, cmd) in ["simulate", "verify", "oracle"].iter().enumerate() {
        let status = Command::new(exe)
            .arg("--config")
            .arg(&cfg)
            .arg("--out")
            .arg(out)
            .arg("--jobs")
            .arg(jobs.to_string())
            .arg(cmd)
            .stdout(std::process::Stdio::null())
            .status()
            .expect("spawn burgers-lab");
        codes[k] = status.code().unwrap_or(-1);
        if codes[k] != 0 {
            break;
        }
    }
    Pipeline {
        out: out.to_path_buf(),
        codes,
        seconds: start.elapsed().as_secs_f64(),
    }
}

/// Criterion 1 plus the end-to-end pipeline exit status.
fn cole_hopf(p: &Pipeline) -> Outcome {
    if p.codes != [0, 0, 0] {
        return outcome(false, format!("pipeline exit codes {:?}", p.codes));
    }
    let r = read_json(&p.out.join("reports/oracle.json"));
    let err = r["fitted_constant"].as_f64().unwrap_or(f64::INFINITY);
    let pass = r["pass"] == true && err <= 0.05 && p.seconds <= 300.0;
    outcome(
        pass,
        format!("sup relative error {err:.4} (≤ 0.05); simulate+verify+oracle {:.0}s (≤ 300s)", p.seconds),
    )
}

fn mt_tail(p: &Pipeline) -> Outcome {
    let r = read_json(&p.out.join("reports/mt_tail.json"));
    let c = r["fitted_constant"].as_f64().unwrap_or(f64::NAN);
    let slope = r["details"]["slope"].as_f64().unwrap_or(f64::NAN);
    let r2 = r["details"]["r2"].as_f64().unwrap_or(f64::NAN);
    let paths = r["details"]["paths"].as_u64().unwrap_or(0);
    let pass = paths >= 100_000 && slope < 0.0 && r2 >= 0.95 && (0.15..=0.35).contains(&c);
    outcome(pass, format!("paths {paths}, slope {slope:.4}, R² {r2:.4}, c {c:.4} ∈ [0.15, 0.35]"))
}

fn fixed_point(p: &Pipeline) -> Outcome {
    let r = read_json(&p.out.join("reports/fixed_point.json"));
    let failures = r["details"]["failures"].as_u64().unwrap_or(u64::MAX);
    let samples = r["samples"].as_u64().unwrap_or(0);
    let steps = r["details"]["steps"].as_u64().unwrap_or(0);
    outcome(
        failures == 0 && samples >= 1000 && steps >= 200,
        format!("{failures} failures over {samples} draws × {steps} steps"),
    )
}

fn files_under(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        let Ok(entries) = std::fs::read_dir(&d) else { continue };
        for e in entries.flatten() {
            let p = e.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).expect("under dir").to_path_buf();
                out.insert(rel, std::fs::read(&p).expect("readable output"));
            }
        }
    }
    out
}

fn determinism(a: &Pipeline, b: &Pipeline) -> Outcome {
    if b.codes != [0, 0, 0] {
        return outcome(false, format!("second run exit codes {:?}", b.codes));
    }
    let mut compared = 0;
    let mut differing = Vec::new();
    for sub in ["reports", "curves", "fields"] {
        let fa = files_under(&a.out.join(sub));
        let fb = files_under(&b.out.join(sub));
        if fa.keys().ne(fb.keys()) {
            differing.push(format!("{sub}: file sets differ"));
            continue;
        }
        for (k, v) in &fa {
            compared += 1;
            if fb[k] != *v {
                differing.push(format!("{sub}/{}", k.display()));
            }
        }
    }
    outcome(
        differing.is_empty() && compared > 0,
        if differing.is_empty() {
            format!("{compared} output files byte-identical (--jobs 1 vs --jobs 3)")
        } else {
            format!("differing: {}", differing.join(", "))
        },
    )
}

fn linear_profile() -> Outcome {
    let mut exp = experiment("linear_profile.toml");
    let s = exp.state().expect("iterates");
    let spec = &s.config.grid;
    let j = spec.slice_index(1.0).expect("t = 1 slice");
    let u = &s.iterates[5];
    let mut worst: f64 = 0.0;
    for n in 0..spec.node_count() {
        let x = spec.node(n)[0];
        if x.abs() <= 5.0 {
            let excess = (u.node_value(j, n)[0] - x / 2.0).abs() / (0.02 * (1.0 + x.abs()));
            worst = worst.max(excess);
        }
    }
    outcome(worst <= 1.0, format!("max |u⁽⁵⁾(1,x) − x/2| / (0.02(1+|x|)) = {worst:.3} (≤ 1)"))
}

fn stationary_shock() -> Outcome {
    let mut exp = experiment("shock.toml");
    let field = exp.field.clone();
    let s = exp.state().expect("iterates");
    let spec = &s.config.grid;
    let j = spec.slice_index(1.0).expect("t = 1 slice");
    let u = &s.iterates[4];
    let mut worst: f64 = 0.0;
    let mut u0 = [0.0];
    for n in 0..spec.node_count() {
        let x = spec.node(n);
        if x[0].abs() <= 5.0 {
            field.eval(&x, &mut u0);
            worst = worst.max((u.node_value(j, n)[0] - u0[0]).abs());
        }
    }
    outcome(worst <= 0.03, format!("sup |u⁽⁴⁾(1,x) − u₀(x)| = {worst:.4} (≤ 0.03)"))
}

fn closed_form_flow() -> Outcome {
    // Drift −u₀ with u₀ = −U(x_min + |x|)^{1/κ}: the characteristic from 0
    // follows (x_min + y)^{1/2}; the tiny cut-off selects the maximal
    // solution out of the non-Lipschitz origin.
    let u0 = VelocityFieldSpec::new(
        1,
        2.0,
        1.0,
        (1.0, 1.0, 1.0),
        0.0,
        0.0,
        FieldKind::Comparison {
            x_min: 1e-16,
            direction: vec![-1.0],
        },
    )
    .expect("comparison field");
    let opts = IntegratorOptions {
        grid: StepGrid::Graded { power: 4.0 },
        ..Default::default()
    };
    let mut worst: f64 = 0.0;
    for t in [1.0, 2.0, 4.0] {
        let r = integrate_deterministic(&Negated(&u0), t, &[0.0], 1000, &opts).expect("flow");
        let exact = (t / 2.0) * (t / 2.0);
        worst = worst.max((r.endpoint_y()[0] - exact).abs() / exact);
    }
    outcome(worst <= 1e-6, format!("max relative error {worst:.2e} (≤ 1e-6)"))
}

fn safe_zones() -> Outcome {
    let mut exp = experiment("safe_zones.toml");
    let r = exp.run(CheckId::SafeZones).expect("safe zone check");
    let starts = r.details["starts"].as_u64().unwrap_or(0);
    let viol: u64 = r.details["violations_by_m"]
        .as_array()
        .map(|a| a.iter().filter_map(Value::as_u64).sum())
        .unwrap_or(u64::MAX);
    outcome(
        r.pass && viol == 0 && starts >= 1000,
        format!("{viol} violations over {starts} starts × m = 0..={}", exp.config.iteration.m_max),
    )
}

fn displacement() -> Outcome {
    let mut exp = experiment("displacement.toml");
    let r = exp.run(CheckId::Displacement).expect("displacement check");
    let ratio = r.details["fitted_c_kappa_ratio"].as_f64().unwrap_or(f64::INFINITY);
    let v = r.details["violation_fraction_at_first_fit"].as_f64().unwrap_or(1.0);
    outcome(
        ratio < 2.0 && v <= 0.01,
        format!("C_κ ratio over m = 1..4: {ratio:.3} (< 2); violations at m = 1 fit {v:.4} (≤ 0.01)"),
    )
}

fn v_decay() -> Outcome {
    let mut exp = experiment("linear_decay.toml");
    let r = exp.run(CheckId::VDecay).expect("decay check");
    let slope = r.details["slope"].as_f64().unwrap_or(f64::NAN);
    let ms: Vec<u64> = r.details["iterates"]
        .as_array()
        .map(|a| a.iter().filter_map(Value::as_u64).collect())
        .unwrap_or_default();
    let value_ok = r.regimes.get("value").is_some_and(|s| s.pass);
    outcome(
        value_ok && slope <= -0.4 && ms == [2, 3, 4, 5],
        format!("slope of ln sup|v⁽ᵐ⁾| over m = {ms:?}: {slope:.3} (≤ −0.4)"),
    )
}

fn penalized() -> Outcome {
    let u0 = make_prototype(1, 1.0, 2.0, DirectionMap::Identity).expect("prototype");
    let c = burgers_lab::constants::BoundConstants::default().c;
    let ns = [4u32, 5, 6];
    let mut slices: Vec<f64> = ns.iter().map(|&n| t_n(&u0, c, n)).collect();
    slices.push(0.0);
    slices.sort_by(f64::total_cmp);
    let horizon = *slices.last().expect("slices");
    let cfg = IterationConfig {
        m_max: 2,
        mc_samples: 2000,
        sde_steps: 50,
        grid: GridSpec {
            dim: 1,
            half_width: 8.0,
            nodes: 161,
            slices,
        },
        horizon,
        viscous: true,
        seed: 10,
        gamma: 0.5,
        gradients: false,
        se_ceiling: None,
        extrapolation: Default::default(),
        blowup_factor: 4.0,
    };
    let mut s = SchemeState::new(&u0, cfg).expect("scheme");
    s.run_to(2).expect("iterates");
    let spec = s.config.grid.clone();
    let mut sups = Vec::new();
    for &n in &ns {
        let (pen, _) = run_penalized(&s, 2, n, c).expect("penalized iterate");
        let under = s.iterates[2].difference(&pen).expect("difference");
        let tn = t_n(&u0, c, n);
        let radius = 2f64.powi(n as i32 - 3);
        let mut sup: f64 = 0.0;
        for (j, &t) in spec.slices.iter().enumerate() {
            if t > 0.0 && t <= tn * (1.0 + 1e-12) {
                if let Some((v, _)) = under.sup_norm_where(j, |_, x| x[0].abs() <= radius) {
                    sup = sup.max(v);
                }
            }
        }
        sups.push(sup);
    }
    let decreasing = sups.windows(2).all(|w| w[1] < w[0]);
    let shown: Vec<String> = sups.iter().map(|v| format!("{v:.3e}")).collect();
    outcome(
        decreasing,
        format!("sup |u⁽²⁾ − u⁽²'ⁿ⁾| for n = 4, 5, 6: [{}] (strictly decreasing)", shown.join(", ")),
    )
}

fn gradient_cross_check() -> Outcome {
    let mut exp = experiment("gradient.toml");
    let s = exp.state().expect("iterates");
    let spec = &s.config.grid;
    let n_nodes = spec.node_count();
    let interior: Vec<usize> = (1..n_nodes - 1).collect();
    let mut agree = 0usize;
    let mut total = 0usize;
    for m in 1..=3 {
        let fk = gradient_fk(s, m, Some(&interior)).expect("gradient estimate");
        let fd = fd_gradient(&s.iterates[m]).expect("finite differences");
        for (j, &t) in spec.slices.iter().enumerate() {
            if t == 0.0 {
                continue;
            }
            for (k, &node) in interior.iter().enumerate() {
                let g = fk.at(j, k)[0];
                let se = fk.se_at(j, k)[0];
                let d = fd.node_value(j, node)[0];
                let tol = (5.0 * se).max(0.03 * d.abs());
                total += 1;
                if (g - d).abs() <= tol {
                    agree += 1;
                }
            }
        }
    }
    let frac = agree as f64 / total.max(1) as f64;
    outcome(frac >= 0.95, format!("{agree}/{total} interior nodes agree ({:.2}% ≥ 95%)", 100.0 * frac))
}

fn selected() -> Option<Vec<u32>> {
    std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect())
}

fn main() {
    // `cargo test` passes harness flags (e.g. `--nocapture`); ignore them,
    // but honour `--list` so test discovery stays cheap.
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let only = selected();
    let want = |k: u32| only.as_ref().is_none_or(|s| s.contains(&k));
    let mut results: Vec<(u32, &str, Outcome)> = Vec::new();
    let mut record = |k: u32, name: &'static str, f: &mut dyn FnMut() -> Outcome| {
        let start = Instant::now();
        let o = f();
        let tag = match (o.pass, KNOWN_FAILURES.contains(&k)) {
            (true, _) => "PASS",
            (false, true) => "FAIL (known)",
            (false, false) => "FAIL",
        };
        println!("criterion {k:>2} {name:<28} {tag:<12} {} [{:.1}s]", o.detail, start.elapsed().as_secs_f64());
        results.push((k, name, o));
    };

    let dir = tempfile::tempdir().expect("tempdir");
    let first = [1, 7, 9, 12]
        .iter()
        .any(|&k| want(k))
        .then(|| run_pipeline(&dir.path().join("run1"), 1));
    let pipe = || first.as_ref().expect("pipeline ran");
    if want(1) {
        record(1, "cole-hopf equivalence", &mut || cole_hopf(pipe()));
    }
    if want(2) {
        record(2, "linear-profile exactness", &mut linear_profile);
    }
    if want(3) {
        record(3, "stationary shock", &mut stationary_shock);
    }
    if want(4) {
        record(4, "closed-form flow", &mut closed_form_flow);
    }
    if want(5) {
        record(5, "safe-zone stability", &mut safe_zones);
    }
    if want(6) {
        record(6, "displacement uniformity", &mut displacement);
    }
    if want(7) {
        record(7, "running-max gaussian tail", &mut || mt_tail(pipe()));
    }
    if want(8) {
        record(8, "difference contraction", &mut v_decay);
    }
    if want(9) {
        record(9, "fixed-point lemma", &mut || fixed_point(pipe()));
    }
    if want(10) {
        record(10, "penalized smallness", &mut penalized);
    }
    if want(11) {
        record(11, "gradient cross-check", &mut gradient_cross_check);
    }
    if want(12) {
        let second = run_pipeline(&dir.path().join("run2"), 3);
        record(12, "determinism", &mut || determinism(pipe(), &second));
    }

    let unexpected: Vec<u32> = results
        .iter()
        .filter(|(k, _, o)| !o.pass && !KNOWN_FAILURES.contains(k))
        .map(|(k, _, _)| *k)
        .collect();
    let passed = results.iter().filter(|(_, _, o)| o.pass).count();
    println!("acceptance: {passed}/{} criteria pass", results.len());
    if !unexpected.is_empty() {
        println!("unexpected failures: {unexpected:?}");
        std::process::exit(1);
    }
}
