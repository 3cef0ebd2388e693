//! Verification suites. Each maps one family of bounds onto sampled
//! measurements and a pass/fail decision against configured thresholds.
//!
//! All randomness is keyed by sample index (never by worker), and parallel
//! results are collected in index order, so reports do not depend on the
//! thread count.

use rand::Rng;
use rayon::prelude::*;

use super::config::{layout_hash, AbnormalForm, ExperimentConfig};
use super::report::{fraction, linear_fit, wilson_interval, BoundReport, Status, SubReport};
use super::{anchors, CheckId};
use crate::characteristics::{
    check_displacement, integrate_deterministic, integrate_stochastic, normal_envelope, sample_brownian,
    sample_brownian_scaled, Drift, IntegratorOptions, Negated, PathRecord, ZeroDrift,
};
use crate::error::{LabError, LabResult};
use crate::oracle::{compare, ColeHopf, Norm, OracleQuery, Region};
use crate::picard::{bracket_x_t, restricted_sup, t_min, t_min_tilde, GridField, SchemeState};
use crate::rng::{stream, stream_seed, tags};
use crate::scalar_flows::{bracket, classify_regime, fixed_point_bound, FlowParams, Regime};
use crate::velocity::{check_apriori, norm, sample_ball, FieldKind, VelocityFieldSpec};
use crate::zones::{safe_interval, stability_violations};

/// A validated configuration with its field, flow and (lazily) iterates.
pub struct Experiment {
    pub config: ExperimentConfig,
    pub field: VelocityFieldSpec,
    pub flow: FlowParams,
    state: Option<SchemeState>,
}

impl Experiment {
    pub fn new(config: ExperimentConfig) -> LabResult<Self> {
        config.validate()?;
        let field = config.field.build()?;
        let flow = config.flow.params(&config.field)?;
        Ok(Experiment {
            config,
            field,
            flow,
            state: None,
        })
    }

    /// Supplies precomputed iterates (must match the configuration).
    pub fn set_state(&mut self, state: SchemeState) -> LabResult<()> {
        if state.config != self.config.iteration {
            return Err(LabError::Validation("iterates were computed with a different iteration config".into()));
        }
        if state.latest() != Some(self.config.iteration.m_max) {
            return Err(LabError::Validation(format!(
                "stored iterates end at {:?}, configuration wants m_max = {}",
                state.latest(),
                self.config.iteration.m_max
            )));
        }
        self.state = Some(state);
        Ok(())
    }

    pub fn has_state(&self) -> bool {
        self.state.is_some()
    }

    /// Iterates `0..=m_max`, computed on first use.
    pub fn state(&mut self) -> LabResult<&SchemeState> {
        if self.state.is_none() {
            let mut s = SchemeState::new(&self.field, self.config.iteration.clone())?;
            s.run_to(self.config.iteration.m_max)?;
            self.state = Some(s);
        }
        Ok(self.state.as_ref().expect("just computed"))
    }

    pub fn run(&mut self, id: CheckId) -> LabResult<BoundReport> {
        if id.needs_iterates() {
            self.state()?;
        }
        let cfg = &self.config;
        let field = &self.field;
        let flow = &self.flow;
        let state = self.state.as_ref();
        let need = || state.ok_or_else(|| LabError::Sequencing("iterates not computed".into()));
        let mut report = match id {
            CheckId::Hyp1 => verify_hyp1(cfg, field)?,
            CheckId::UniformBounds => verify_uniform_bounds(cfg, field, need()?)?,
            CheckId::Displacement => verify_displacement(cfg, flow, need()?)?,
            CheckId::SafeZones => verify_safe_zones(cfg, field, flow, need()?)?,
            CheckId::VDecay => verify_v_decay(cfg, field, need()?)?,
            CheckId::MtTail => verify_mt_tail(cfg)?,
            CheckId::FixedPoint => verify_fixed_point_lemma(cfg)?,
            CheckId::Oracle => verify_oracle(cfg, field, need()?)?,
        };
        if report.layout_hash.is_none() {
            report.layout_hash = cfg.layout().as_ref().map(layout_hash);
        }
        Ok(report)
    }

    /// Runs the enabled checks in their configured order.
    pub fn run_enabled(&mut self) -> LabResult<Vec<BoundReport>> {
        let ids = self.config.checks.enabled.clone();
        ids.into_iter().map(|id| self.run(id)).collect()
    }
}

fn seed(cfg: &ExperimentConfig) -> u64 {
    cfg.iteration.seed
}

/// Sampled `|u_0(x)| ≤ U (1+|x|)^{1/κ}` plus the a priori derivative bounds.
pub fn verify_hyp1(cfg: &ExperimentConfig, field: &VelocityFieldSpec) -> LabResult<BoundReport> {
    let c = &cfg.checks;
    let d = field.dim;
    let points = sample_ball(d, c.hyp1_samples.max(1), c.hyp1_radius, stream_seed(seed(cfg), tags::HYP1, 0));
    let mut u = vec![0.0; d];
    let mut worst: f64 = 0.0;
    let mut violations = 0;
    for x in &points {
        field.eval(x, &mut u);
        let ratio = norm(&u) / (1.0 + norm(x)).powf(1.0 / field.kappa);
        worst = worst.max(ratio);
        if ratio > field.u_scale {
            violations += 1;
        }
    }
    let mut r = BoundReport::new(CheckId::Hyp1, anchors::SUBLINEAR_GROWTH);
    r.samples = points.len();
    r.violation_fraction = fraction(violations, points.len());
    r.fitted_constant = worst;
    let apriori = check_apriori(field, c.hyp1_samples.max(1), c.hyp1_radius)?;
    for (name, rep) in [
        ("value", &apriori.value),
        ("gradient", &apriori.gradient),
        ("hessian", &apriori.hessian),
    ] {
        let status = Status::from_pass(rep.pass);
        r.regimes.insert(
            format!("apriori_{name}"),
            SubReport::new(None, points.len(), usize::from(!rep.pass), rep.sup_ratio, status),
        );
    }
    r.detail("U", field.u_scale);
    r.detail("radius", c.hyp1_radius);
    r.detail("worst_point", &apriori.value.worst_point);
    r.set_status(Status::from_pass(violations == 0 && apriori.pass()));
    Ok(r)
}

/// `max/min` of a fitted-constant sequence; an all-zero sequence counts as 1.
fn stability(seq: &[f64]) -> f64 {
    let max = seq.iter().cloned().fold(0.0, f64::max);
    let min = seq.iter().cloned().fold(f64::INFINITY, f64::min);
    if max == 0.0 {
        1.0
    } else if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

fn stability_sub(anchor: &str, seq: &[f64], ratio_max: f64) -> SubReport {
    let min = seq.iter().cloned().fold(f64::INFINITY, f64::min);
    let over = seq.iter().filter(|&&c| c > ratio_max * min).count();
    let max = seq.iter().cloned().fold(0.0, f64::max);
    let pass = stability(seq) <= ratio_max;
    SubReport::new(Some(anchor), seq.len(), if pass { 0 } else { over.max(1) }, max, Status::from_pass(pass))
}

/// Per-iterate sup-ratio constants of the value, gradient and hessian bounds.
pub fn verify_uniform_bounds(
    cfg: &ExperimentConfig,
    field: &VelocityFieldSpec,
    state: &SchemeState,
) -> LabResult<BoundReport> {
    if state.gradients.len() != state.iterates.len() {
        return Err(LabError::Precondition("uniform bounds need gradient iterates".into()));
    }
    let spec = &state.config.grid;
    let n = spec.nodes;
    let interior = |node: usize| spec.multi_index(node).iter().all(|&i| i > 0 && i + 1 < n);
    let e0 = field.u_exponent();
    let e1 = field.grad_exponent();
    let e2 = 3.0 * field.u_exponent();
    let fit = |f: &GridField, k: f64, e: f64, interior_only: bool| -> f64 {
        let mut best: f64 = 0.0;
        for (j, &t) in spec.slices.iter().enumerate() {
            for node in 0..spec.node_count() {
                if interior_only && !interior(node) {
                    continue;
                }
                let x = norm(&spec.node(node));
                let w = k * bracket_x_t(field, t, x).powf(e);
                best = best.max(norm(f.node_value(j, node)) / w);
            }
        }
        best
    };
    let first = usize::from(state.iterates.len() > 1);
    let ms: Vec<usize> = (first..state.iterates.len()).collect();
    let c0: Vec<f64> = ms.iter().map(|&m| fit(&state.iterates[m], field.k0, e0, false)).collect();
    let c1: Vec<f64> = ms.iter().map(|&m| fit(&state.gradients[m], field.k1, e1, false)).collect();
    let c2: Vec<f64> = ms.iter().map(|&m| fit(&state.hessians[m], field.k2, e2, true)).collect();
    let ratio = cfg.checks.stability_ratio;
    let mut r = BoundReport::new(CheckId::UniformBounds, anchors::UNIFORM_VELOCITY);
    let subs = [
        ("value", stability_sub(anchors::UNIFORM_VELOCITY, &c0, ratio)),
        ("gradient", stability_sub(anchors::GRADIENT, &c1, ratio)),
        ("hessian", stability_sub(anchors::HESSIAN, &c2, ratio)),
    ];
    let pass = subs.iter().all(|(_, s)| s.pass);
    let violations: usize = subs.iter().map(|(_, s)| usize::from(!s.pass)).sum();
    for (k, s) in subs {
        r.regimes.insert(k.to_string(), s);
    }
    r.samples = ms.len() * spec.node_count() * spec.slices.len();
    r.violation_fraction = fraction(violations, 3);
    r.fitted_constant = c0.iter().cloned().fold(0.0, f64::max);
    r.detail("iterates", &ms);
    r.detail("value_constants", &c0);
    r.detail("gradient_constants", &c1);
    r.detail("hessian_constants", &c2);
    r.detail("stability_ratio", ratio);
    r.set_status(Status::from_pass(pass));
    Ok(r)
}

struct DisplacementSample {
    m: usize,
    regime: Regime,
    /// `displacement / normal_envelope` (`∞` for escaped paths).
    normal_scaled: f64,
    /// `displacement / abnormal bound shape` (without `C_abn`).
    abnormal_scaled: f64,
}

fn integrate_or_escape<D: Drift + ?Sized>(
    drift: &D,
    t: f64,
    x: &[f64],
    noise: Option<&crate::characteristics::BrownianPath>,
    steps: usize,
    opts: &IntegratorOptions,
) -> LabResult<Option<PathRecord>> {
    let res = match noise {
        Some(b) => integrate_stochastic(drift, t, x, b, opts),
        None => integrate_deterministic(drift, t, x, steps, opts),
    };
    match res {
        Ok(rec) => Ok(Some(rec)),
        Err(LabError::Divergence { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

fn start_point(d: usize, r: f64, sign: f64) -> Vec<f64> {
    let mut x = vec![0.0; d];
    x[0] = sign * r;
    x
}

/// Displacement of stochastic characteristics of every viscous iterate,
/// split by regime.
pub fn verify_displacement(cfg: &ExperimentConfig, flow: &FlowParams, state: &SchemeState) -> LabResult<BoundReport> {
    let it = &state.config;
    if !it.viscous {
        return Err(LabError::Precondition("displacement check needs viscous iterates".into()));
    }
    let c = &cfg.checks;
    let consts = &cfg.constants;
    let t_lo = 1.0 / flow.u_scale;
    let times: Vec<f64> = match &c.displacement_times {
        Some(ts) => ts.clone(),
        None => it.grid.slices.iter().cloned().filter(|&t| t >= t_lo * (1.0 - 1e-12)).collect(),
    };
    if times.is_empty() || times.iter().any(|&t| !(t > 0.0 && t <= it.horizon)) {
        return Err(LabError::Precondition(format!(
            "displacement times {times:?} must be non-empty and lie in (0, {}]",
            it.horizon
        )));
    }
    if c.displacement_radii.is_empty() {
        return Err(LabError::Precondition("no displacement start radii".into()));
    }
    let combos: Vec<(f64, f64)> = times
        .iter()
        .flat_map(|&t| c.displacement_radii.iter().map(move |&r| (t, r)))
        .collect();
    let d = state.dim();
    let opts = IntegratorOptions {
        blowup_radius: Some(it.blowup()),
        flow: Some(*flow),
        ..Default::default()
    };
    let m_max = state.latest().unwrap_or(0);
    let mut samples: Vec<DisplacementSample> = Vec::new();
    for m in 1..=m_max {
        let drift = Negated(&state.iterates[m - 1]);
        let batch: Vec<LabResult<DisplacementSample>> = (0..c.displacement_paths)
            .into_par_iter()
            .map(|p| {
                let (t, r) = combos[p % combos.len()];
                let sign = if (p / combos.len()).is_multiple_of(2) { 1.0 } else { -1.0 };
                let x = start_point(d, r, sign);
                let noise = sample_brownian(stream_seed(seed(cfg), tags::DISPLACEMENT, p as u64), d, t, it.steps_for(t))?;
                let mt_sqrt_t = noise.m_t() * t.sqrt();
                let abnormal_shape = match c.abnormal_form {
                    AbnormalForm::Power => mt_sqrt_t.powf(consts.kappa_prime),
                    AbnormalForm::Rescaled => (mt_sqrt_t / bracket(flow.u_scale * t)).powf(flow.kappa),
                };
                let env = normal_envelope(flow, t, r);
                let sample = match integrate_or_escape(&drift, t, &x, Some(&noise), 0, &opts)? {
                    Some(rec) => {
                        let chk = check_displacement(&rec, flow, consts);
                        DisplacementSample {
                            m,
                            regime: chk.regime,
                            normal_scaled: chk.displacement / env,
                            abnormal_scaled: chk.displacement / abnormal_shape,
                        }
                    }
                    None => DisplacementSample {
                        m,
                        regime: classify_regime(flow, t, r, Some(mt_sqrt_t)),
                        normal_scaled: f64::INFINITY,
                        abnormal_scaled: f64::INFINITY,
                    },
                };
                Ok(sample)
            })
            .collect();
        for s in batch {
            samples.push(s?);
        }
    }
    let normal: Vec<&DisplacementSample> = samples.iter().filter(|s| !s.regime.is_abnormal()).collect();
    let abnormal: Vec<&DisplacementSample> = samples.iter().filter(|s| s.regime.is_abnormal()).collect();
    let fitted_by_m: Vec<f64> = (1..=m_max)
        .map(|m| {
            1.0 + normal
                .iter()
                .filter(|s| s.m == m)
                .map(|s| s.normal_scaled)
                .fold(0.0, f64::max)
        })
        .collect();
    let allowed = consts.c_kappa - 1.0;
    let normal_viol = normal.iter().filter(|s| s.normal_scaled > allowed).count();
    let fit1 = fitted_by_m.first().copied().unwrap_or(1.0);
    let viol_at_fit1 = normal.iter().filter(|s| s.normal_scaled > fit1 - 1.0).count();
    let ratio = stability(&fitted_by_m.iter().map(|c| c - 1.0).collect::<Vec<_>>());
    let c_ratio = stability(&fitted_by_m);
    let vmax = c.violation_max;
    let normal_pass = fraction(normal_viol, normal.len()) <= vmax && c_ratio <= c.stability_ratio;
    let normal_status = if normal.is_empty() {
        Status::Insufficient
    } else {
        Status::from_pass(normal_pass)
    };
    let abn_viol = abnormal.iter().filter(|s| s.abnormal_scaled > consts.c_abn).count();
    let abn_fit = abnormal.iter().map(|s| s.abnormal_scaled).fold(0.0, f64::max);
    let abn_status = if abnormal.is_empty() {
        Status::Insufficient
    } else {
        Status::from_pass(fraction(abn_viol, abnormal.len()) <= vmax)
    };
    let mut r = BoundReport::new(CheckId::Displacement, anchors::DISPLACEMENT_NORMAL);
    r.regimes.insert(
        "normal".into(),
        SubReport::new(Some(anchors::DISPLACEMENT_NORMAL), normal.len(), normal_viol, fitted_by_m.iter().cloned().fold(0.0, f64::max), normal_status),
    );
    r.regimes.insert(
        "abnormal".into(),
        SubReport::new(Some(anchors::DISPLACEMENT_ABNORMAL), abnormal.len(), abn_viol, abn_fit, abn_status),
    );
    r.samples = samples.len();
    r.violation_fraction = fraction(normal_viol + abn_viol, samples.len());
    r.fitted_constant = fit1;
    r.detail("times", &times);
    r.detail("radii", &c.displacement_radii);
    r.detail("fitted_c_kappa_by_m", &fitted_by_m);
    r.detail("fitted_c_kappa_ratio", c_ratio);
    r.detail("fitted_excess_ratio", ratio);
    r.detail("violation_fraction_at_first_fit", fraction(viol_at_fit1, normal.len()));
    r.detail("configured_c_kappa", consts.c_kappa);
    r.detail("abnormal_form", c.abnormal_form);
    r.detail("abnormal_frequency", fraction(abnormal.len(), samples.len()));
    r.detail("abnormal_frequency_prediction", (-consts.c_tail * flow.u_scale).exp());
    r.detail(
        "escaped",
        samples.iter().filter(|s| s.normal_scaled.is_infinite()).count(),
    );
    let pass = normal_status != Status::Fail && abn_status != Status::Fail;
    r.set_status(if normal.is_empty() && abnormal.is_empty() {
        Status::Insufficient
    } else {
        Status::from_pass(pass)
    });
    Ok(r)
}

fn random_direction<R: Rng>(rng: &mut R, d: usize) -> Vec<f64> {
    if d == 1 {
        return vec![if rng.random::<bool>() { 1.0 } else { -1.0 }];
    }
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        let n = norm(&v);
        if n > 1e-3 && n <= 1.0 {
            return v.into_iter().map(|c| c / n).collect();
        }
    }
}

/// Starts uniform in radius on `[lo, hi]`, random directions.
fn radial_starts(seed: u64, tag_offset: u64, d: usize, count: usize, lo: f64, hi: f64) -> Vec<Vec<f64>> {
    (0..count)
        .map(|k| {
            let mut rng = stream(seed, tags::STARTS, tag_offset + k as u64);
            let r = lo + (hi - lo) * rng.random::<f64>();
            random_direction(&mut rng, d).into_iter().map(|c| c * r).collect()
        })
        .collect()
}

struct SafeOutcome {
    normal: bool,
    violated: bool,
}

/// Stability of the safe interval `I_i(t)` under the characteristics of
/// every iterate.
pub fn verify_safe_zones(
    cfg: &ExperimentConfig,
    field: &VelocityFieldSpec,
    flow: &FlowParams,
    state: &SchemeState,
) -> LabResult<BoundReport> {
    let FieldKind::AnnularPerturbed { layout, .. } = &field.kind else {
        return Err(LabError::Precondition("safe-zone check needs an annular field".into()));
    };
    let c = &cfg.checks;
    let it = &state.config;
    let viscous = it.viscous;
    let i = c.safe_zone_index;
    let t = c.safe_zone_time.unwrap_or(1.0 / field.u_scale);
    let cc = cfg.constants.c;
    let u = field.u_scale;
    if !(t > 0.0 && t <= it.horizon) {
        return Err(LabError::Precondition(format!("safe-zone time {t} outside (0, {}]", it.horizon)));
    }
    let iv = safe_interval(layout, i, t, u, cc, viscous)?;
    if iv.empty {
        return Err(LabError::Precondition(format!(
            "I_{i}({t}) is empty ([{}, {}]); choose a smaller time",
            iv.lower, iv.upper
        )));
    }
    let d = state.dim();
    let opts = IntegratorOptions {
        blowup_radius: Some(it.blowup()),
        ..Default::default()
    };
    let steps = c.safe_zone_steps;
    let starts = radial_starts(seed(cfg), 0, d, c.safe_zone_starts, iv.lower, iv.upper);
    let m_max = state.latest().unwrap_or(0);
    let zero = ZeroDrift(d);
    let drift_for = |m: usize| -> Box<dyn Drift + '_> {
        if m == 0 {
            Box::new(Negated(&zero))
        } else {
            Box::new(Negated(&state.iterates[m - 1]))
        }
    };
    let trace = |drift: &(dyn Drift + '_), k: usize, x: &[f64], tt: f64| -> LabResult<(Option<PathRecord>, f64)> {
        if viscous {
            let noise = sample_brownian(stream_seed(seed(cfg), tags::SAFE_ZONE_NOISE, k as u64), d, tt, steps)?;
            let mt = noise.m_t() * tt.sqrt();
            Ok((integrate_or_escape(drift, tt, x, Some(&noise), steps, &opts)?, mt))
        } else {
            Ok((integrate_or_escape(drift, tt, x, None, steps, &opts)?, 0.0))
        }
    };
    let mut outcomes = Vec::new();
    let mut per_m = Vec::new();
    for m in 0..=m_max {
        let drift = drift_for(m);
        let batch: Vec<LabResult<SafeOutcome>> = starts
            .par_iter()
            .enumerate()
            .map(|(k, x)| {
                let (rec, mt_sqrt_t) = trace(drift.as_ref(), k, x, t)?;
                let normal = !viscous || !classify_regime(flow, t, norm(x), Some(mt_sqrt_t)).is_abnormal();
                let violated = match rec {
                    Some(rec) => stability_violations(layout, &rec, i, t, u, cc, viscous)?.count > 0,
                    None => true,
                };
                Ok(SafeOutcome { normal, violated })
            })
            .collect();
        let mut count = 0;
        for o in batch {
            let o = o?;
            count += usize::from(o.normal && o.violated);
            outcomes.push(o);
        }
        per_m.push(count);
    }
    let normal_n = outcomes.iter().filter(|o| o.normal).count();
    let viol = outcomes.iter().filter(|o| o.normal && o.violated).count();
    let (lo, hi) = wilson_interval(viol, normal_n, 1.96);
    let pass = if viscous {
        fraction(viol, normal_n) <= c.violation_max
    } else {
        viol == 0
    };
    let mut r = BoundReport::new(CheckId::SafeZones, anchors::SAFE_ZONE);
    r.samples = normal_n;
    r.violation_fraction = fraction(viol, normal_n);
    r.fitted_constant = 0.0;
    r.regimes.insert(
        "safe_interval".into(),
        SubReport::new(Some(anchors::SAFE_ZONE), normal_n, viol, 0.0, Status::from_pass(pass)),
    );
    // Starts inside the adjacent dangerous zone: measured displacement in
    // units of `U t |x|^{1/κ}`; informational.
    if let Some((a, b)) = layout.dangerous(i).filter(|(a, b)| b > a) {
        let dstarts = radial_starts(seed(cfg), 1 << 32, d, (c.safe_zone_starts / 10).max(1), a, b);
        let mut worst: f64 = 0.0;
        let mut total = 0;
        for m in 0..=m_max {
            let drift = drift_for(m);
            let res: Vec<LabResult<f64>> = dstarts
                .par_iter()
                .enumerate()
                .map(|(k, x)| {
                    let (rec, _) = trace(drift.as_ref(), k, x, t)?;
                    let env = u * t * norm(x).powf(1.0 / field.kappa);
                    Ok(rec.map_or(f64::INFINITY, |r| r.max_displacement / env))
                })
                .collect();
            for v in res {
                worst = worst.max(v?);
                total += 1;
            }
        }
        r.regimes
            .insert("dangerous_start".into(), SubReport::new(None, total, 0, worst, Status::Pass));
    }
    r.detail("zone", i);
    r.detail("time", t);
    r.detail("interval", [iv.lower, iv.upper]);
    r.detail("viscous", viscous);
    r.detail("violations_by_m", &per_m);
    r.detail("starts", starts.len());
    r.detail("wilson_95", [lo, hi]);
    r.layout_hash = Some(layout_hash(layout));
    r.set_status(Status::from_pass(pass));
    Ok(r)
}

struct DecayFit {
    sups: Vec<f64>,
    floors: Vec<f64>,
    slope: Option<f64>,
    noise_dominated: bool,
}

fn decay_fit<K: Fn(f64, f64) -> bool>(
    ms: &[usize],
    diff: impl Fn(usize) -> LabResult<GridField>,
    se: impl Fn(usize) -> Option<f64>,
    keep: K,
) -> LabResult<DecayFit> {
    let mut sups = Vec::new();
    let mut floors = Vec::new();
    for &m in ms {
        let v = diff(m)?;
        let s = restricted_sup(&v, &keep).ok_or_else(|| {
            LabError::Precondition("decay region t <= theta * T_min is empty; shorten the horizon or grid".into())
        })?;
        sups.push(s);
        floors.push(3.0 * (se(m).unwrap_or(0.0) + se(m - 1).unwrap_or(0.0)));
    }
    let noise_dominated = sups.iter().zip(&floors).any(|(s, f)| s <= f);
    let slope = if noise_dominated {
        None
    } else {
        let xs: Vec<f64> = ms.iter().map(|&m| m as f64).collect();
        let ys: Vec<f64> = sups.iter().map(|s| s.ln()).collect();
        linear_fit(&xs, &ys).map(|f| f.0)
    };
    Ok(DecayFit {
        sups,
        floors,
        slope,
        noise_dominated,
    })
}

fn decay_sub(anchor: &str, fit: &DecayFit, threshold: f64) -> SubReport {
    let n = fit.sups.len().saturating_sub(1);
    let factor = threshold.exp();
    let viol = fit.sups.windows(2).filter(|w| w[1] > factor * w[0]).count();
    let (status, fitted) = match fit.slope {
        _ if fit.noise_dominated => (Status::NoiseDominated, 0.0),
        Some(s) => (Status::from_pass(s <= threshold), s.exp()),
        None => (Status::Insufficient, 0.0),
    };
    SubReport::new(Some(anchor), n, viol, fitted, status)
}

/// Geometric decay of `v^{(m)}` (and `∇v^{(m)}`) on the short-time region.
pub fn verify_v_decay(cfg: &ExperimentConfig, field: &VelocityFieldSpec, state: &SchemeState) -> LabResult<BoundReport> {
    let c = &cfg.checks;
    let m_max = state.latest().unwrap_or(0);
    let m_min = c.v_decay_m_min.max(1);
    if m_max < 3 || m_min + 1 > m_max {
        return Err(LabError::Precondition(format!(
            "decay regression needs at least two iterates in [{m_min}, {m_max}] and m_max >= 3"
        )));
    }
    let ms: Vec<usize> = (m_min..=m_max).collect();
    let theta = c.theta;
    let cc = cfg.constants.c;
    let se_sup = |fields: &[GridField], m: usize, keep: &dyn Fn(f64, f64) -> bool| -> Option<f64> {
        fields.get(m).and_then(|f| restricted_sup(f, keep))
    };
    let keep_v = |t: f64, x: f64| t <= theta * t_min(field, cc, t, x);
    let value = decay_fit(&ms, |m| Ok(state.diffs[m].clone()), |m| se_sup(&state.stderr, m, &keep_v), keep_v)?;
    let threshold = theta.ln() + c.slope_slack;
    let mut r = BoundReport::new(CheckId::VDecay, anchors::DIFFERENCE_DECAY);
    let vsub = decay_sub(anchors::DIFFERENCE_DECAY, &value, threshold);
    let gamma = state.config.gamma;
    let gthreshold = 0.5 * gamma * theta.ln() + c.slope_slack;
    let gsub = if state.gradients.len() == state.iterates.len() {
        let keep_g = |t: f64, x: f64| t <= theta * t_min_tilde(field, cc, t, x);
        let grad = decay_fit(
            &ms,
            |m| state.gradients[m].difference(&state.gradients[m - 1]),
            |m| se_sup(&state.gradient_stderr, m, &keep_g),
            keep_g,
        )?;
        r.detail("gradient_sups", &grad.sups);
        r.detail("gradient_noise_floors", &grad.floors);
        r.detail("gradient_slope", grad.slope);
        decay_sub(anchors::GRADIENT_DIFFERENCE_DECAY, &grad, gthreshold)
    } else {
        SubReport::new(Some(anchors::GRADIENT_DIFFERENCE_DECAY), 0, 0, 0.0, Status::Insufficient)
    };
    r.samples = ms.len();
    r.violation_fraction = vsub.violation_fraction;
    r.fitted_constant = vsub.fitted_constant;
    r.detail("iterates", &ms);
    r.detail("sups", &value.sups);
    r.detail("noise_floors", &value.floors);
    r.detail("slope", value.slope);
    r.detail("threshold", threshold);
    r.detail("gradient_threshold", gthreshold);
    r.detail("theta", theta);
    let status = match (vsub.status, gsub.status) {
        (Status::Fail, _) | (_, Status::Fail) => Status::Fail,
        (Status::NoiseDominated, _) => Status::NoiseDominated,
        (s, _) => s,
    };
    r.regimes.insert("value".into(), vsub);
    r.regimes.insert("gradient".into(), gsub);
    r.set_status(status);
    Ok(r)
}

/// Gaussian tail of the rescaled running maximum `M_t`.
pub fn verify_mt_tail(cfg: &ExperimentConfig) -> LabResult<BoundReport> {
    let c = &cfg.checks;
    let n = c.mt_paths;
    let t = c.mt_time;
    if n < 2 {
        return Err(LabError::Precondition("running-maximum check needs at least two paths".into()));
    }
    if !(c.mt_a_min > 0.0 && c.mt_a_max > c.mt_a_min) {
        return Err(LabError::Config("[checks] need 0 < mt_a_min < mt_a_max".into()));
    }
    let ms: Vec<LabResult<f64>> = (0..n)
        .into_par_iter()
        .map(|p| {
            let b = sample_brownian_scaled(
                stream_seed(seed(cfg), tags::MT_TAIL, p as u64),
                c.mt_dim,
                t,
                c.mt_steps,
                c.mt_variance_rate,
            )?;
            Ok(b.m_t())
        })
        .collect();
    let ms: Vec<f64> = ms.into_iter().collect::<LabResult<_>>()?;
    let mut r = BoundReport::new(CheckId::MtTail, anchors::RUNNING_MAX_TAIL);
    r.samples = n;
    r.detail("paths", n);
    r.detail("time", t);
    r.detail("dim", c.mt_dim);
    let first = ms[0];
    if ms.iter().all(|&m| m == first) {
        r.detail("constant_value", first);
        r.set_status(Status::Degenerate);
        return Ok(r);
    }
    let mut sorted = ms.clone();
    sorted.sort_by(f64::total_cmp);
    const GRID: usize = 31;
    let mut a2 = Vec::new();
    let mut log_s = Vec::new();
    for k in 0..GRID {
        let a = c.mt_a_min + (c.mt_a_max - c.mt_a_min) * k as f64 / (GRID - 1) as f64;
        let above = n - sorted.partition_point(|&m| m <= a);
        if above > 0 {
            a2.push(a * a);
            log_s.push((above as f64 / n as f64).ln());
        }
    }
    let fit = linear_fit(&a2, &log_s);
    let half = n / 2;
    let m4 = |s: &[f64]| s.iter().map(|m| m.powi(4)).sum::<f64>() / s.len() as f64;
    let (m4a, m4b) = (m4(&ms[..half]), m4(&ms[half..]));
    let m4_rel = (m4a - m4b).abs() / (0.5 * (m4a + m4b));
    let moment_ok = m4_rel <= 0.2;
    r.regimes.insert(
        "fourth_moment".into(),
        SubReport::new(None, n, usize::from(!moment_ok), 0.5 * (m4a + m4b), Status::from_pass(moment_ok)),
    );
    r.detail("fourth_moment_halves", [m4a, m4b]);
    r.detail("fourth_moment_relative_difference", m4_rel);
    r.detail("fit_points", a2.len());
    match fit {
        Some((slope, intercept, r2)) if a2.len() >= 3 => {
            let outliers = a2
                .iter()
                .zip(&log_s)
                .filter(|(x, y)| (intercept + slope * **x - **y).abs() > 0.5)
                .count();
            let tail_ok = slope < 0.0 && r2 >= c.mt_r2_min;
            r.fitted_constant = (-slope).max(0.0);
            r.violation_fraction = fraction(outliers, a2.len());
            r.regimes.insert(
                "tail".into(),
                SubReport::new(Some(anchors::RUNNING_MAX_TAIL), a2.len(), outliers, (-slope).max(0.0), Status::from_pass(tail_ok)),
            );
            r.detail("slope", slope);
            r.detail("intercept", intercept);
            r.detail("r2", r2);
            r.set_status(Status::from_pass(tail_ok && moment_ok));
        }
        _ => {
            r.regimes.insert(
                "tail".into(),
                SubReport::new(Some(anchors::RUNNING_MAX_TAIL), a2.len(), 0, 0.0, Status::Insufficient),
            );
            r.set_status(Status::Insufficient);
        }
    }
    Ok(r)
}

fn log_uniform<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    (lo.ln() + (hi.ln() - lo.ln()) * rng.random::<f64>()).exp()
}

/// Random parameter sets of `B_{n+1} = c1 + c2 B_n^α`: every iterate must
/// stay below the uniform bound.
pub fn verify_fixed_point_lemma(cfg: &ExperimentConfig) -> LabResult<BoundReport> {
    let c = &cfg.checks;
    let results: Vec<LabResult<(bool, f64)>> = (0..c.lemma_samples)
        .into_par_iter()
        .map(|k| {
            let mut rng = stream(seed(cfg), tags::LEMMA, k as u64);
            let c1 = log_uniform(&mut rng, 1e-3, 1e3);
            let c2 = log_uniform(&mut rng, 1e-3, 1e3);
            let alpha = 0.05 + 0.9 * rng.random::<f64>();
            let a0 = log_uniform(&mut rng, 1e-3, 1e3);
            let bound = fixed_point_bound(c1, c2, alpha, a0)?;
            let mut b = a0;
            let mut worst: f64 = b / bound;
            let mut ok = b <= bound;
            for _ in 0..c.lemma_steps {
                b = c1 + c2 * b.powf(alpha);
                ok &= b.is_finite() && b <= bound;
                worst = worst.max(b / bound);
            }
            Ok((ok, worst))
        })
        .collect();
    let mut failures = 0;
    let mut worst: f64 = 0.0;
    for res in results {
        let (ok, w) = res?;
        failures += usize::from(!ok);
        worst = worst.max(w);
    }
    let mut r = BoundReport::new(CheckId::FixedPoint, anchors::FIXED_POINT);
    r.samples = c.lemma_samples;
    r.violation_fraction = fraction(failures, c.lemma_samples);
    r.fitted_constant = worst;
    r.detail("failures", failures);
    r.detail("steps", c.lemma_steps);
    r.detail("max_iterate_over_bound", worst);
    r.set_status(Status::from_pass(failures == 0));
    Ok(r)
}

/// Sup relative error of a viscous iterate against the Cole-Hopf solution.
pub fn verify_oracle(cfg: &ExperimentConfig, field: &VelocityFieldSpec, state: &SchemeState) -> LabResult<BoundReport> {
    let o = &cfg.checks.oracle;
    let spec = &state.config.grid;
    let m = o.m.unwrap_or(state.latest().unwrap_or(0));
    let u = state
        .iterates
        .get(m)
        .ok_or_else(|| LabError::Sequencing(format!("iterate {m} not computed")))?;
    let times: Vec<f64> = match &o.times {
        Some(ts) => ts.clone(),
        None => spec.slices.iter().cloned().filter(|&t| t > 0.0).collect(),
    };
    let ch = ColeHopf::new(field)?;
    let region = Region {
        lower: o.lower,
        upper: o.upper,
        min_reference: o.min_reference,
        relative: true,
    };
    let mut r = BoundReport::new(CheckId::Oracle, anchors::COLE_HOPF);
    let mut worst: f64 = 0.0;
    let mut points = 0;
    let mut fails = 0;
    let mut per_time = Vec::new();
    for &t in &times {
        let j = spec
            .slice_index(t)
            .ok_or_else(|| LabError::Config(format!("oracle time {t} is not a grid slice")))?;
        let reference = |x: f64| {
            ch.eval(&OracleQuery {
                t,
                x,
                eta: o.eta,
                tol: o.quadrature_tol,
            })
            .map(Some)
        };
        let rep = compare(reference, u, state.stderr.get(m), j, &region, Norm::Sup)?;
        let ok = rep.value <= o.tolerance;
        fails += usize::from(!ok);
        points += rep.points;
        worst = worst.max(rep.value);
        r.regimes.insert(
            format!("t={t}"),
            SubReport::new(None, rep.points, usize::from(!ok), rep.value, Status::from_pass(ok)),
        );
        per_time.push(rep);
    }
    r.samples = points;
    r.violation_fraction = fraction(fails, times.len());
    r.fitted_constant = worst;
    r.detail("iterate", m);
    r.detail("tolerance", o.tolerance);
    r.detail("comparisons", &per_time);
    r.set_status(Status::from_pass(fails == 0));
    Ok(r)
}
