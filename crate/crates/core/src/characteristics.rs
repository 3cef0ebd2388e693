//! Backward-time characteristics `dy/ds = v(t − s, y)`, deterministic and
//! noise-decomposed (`Y = X − B`), with full path recording.

use std::io::Write;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::constants::BoundConstants;
use crate::error::{LabError, LabResult};
use crate::scalar_flows::{bracket, classify_regime, FlowParams, Regime};
use crate::velocity::{norm, VelocityFieldSpec};

/// A time-dependent vector field `v(τ, y)`.
pub trait Drift: Sync {
    fn dim(&self) -> usize;
    fn eval(&self, tau: f64, y: &[f64], out: &mut [f64]);
}

pub struct ZeroDrift(pub usize);

impl Drift for ZeroDrift {
    fn dim(&self) -> usize {
        self.0
    }
    fn eval(&self, _: f64, _: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
    }
}

/// Wraps a closure `(τ, y, out)`.
pub struct FnDrift<F> {
    pub dim: usize,
    pub f: F,
}

impl<F: Fn(f64, &[f64], &mut [f64]) + Sync> Drift for FnDrift<F> {
    fn dim(&self) -> usize {
        self.dim
    }
    fn eval(&self, tau: f64, y: &[f64], out: &mut [f64]) {
        (self.f)(tau, y, out)
    }
}

impl Drift for VelocityFieldSpec {
    fn dim(&self) -> usize {
        self.dim
    }
    fn eval(&self, _: f64, y: &[f64], out: &mut [f64]) {
        VelocityFieldSpec::eval(self, y, out)
    }
}

/// `−v`: Burgers characteristics run against the velocity when traced
/// backwards in time.
pub struct Negated<'a, D: ?Sized>(pub &'a D);

impl<D: Drift + ?Sized> Drift for Negated<'_, D> {
    fn dim(&self) -> usize {
        self.0.dim()
    }
    fn eval(&self, tau: f64, y: &[f64], out: &mut [f64]) {
        self.0.eval(tau, y, out);
        out.iter_mut().for_each(|v| *v = -*v);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BrownianPath {
    pub seed: u64,
    pub dim: usize,
    pub horizon: f64,
    pub steps: usize,
    /// `steps × dim` increments, step-major.
    pub increments: Vec<f64>,
    pub running_max_abs: f64,
}

impl BrownianPath {
    /// `B` at sample `k` (`k = 0..=steps`).
    pub fn value_at(&self, k: usize, out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for step in 0..k {
            for (o, inc) in out.iter_mut().zip(&self.increments[step * self.dim..]) {
                *o += inc;
            }
        }
    }

    /// All `steps + 1` sample values, sample-major.
    pub fn cumulative(&self) -> Vec<f64> {
        let d = self.dim;
        let mut out = vec![0.0; (self.steps + 1) * d];
        for k in 0..self.steps {
            for j in 0..d {
                out[(k + 1) * d + j] = out[k * d + j] + self.increments[k * d + j];
            }
        }
        out
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    /// `M_t = 1 + sup |B_s| / √t`.
    pub fn m_t(&self) -> f64 {
        1.0 + self.running_max_abs / self.horizon.sqrt()
    }
}

/// Brownian path with per-component variance `2 s` at time `s`.
pub fn sample_brownian(seed: u64, d: usize, t: f64, steps: usize) -> LabResult<BrownianPath> {
    sample_brownian_scaled(seed, d, t, steps, 2.0)
}

/// Brownian path with per-component variance `variance_rate · s`; a rate of 0
/// gives the zero-noise stub.
pub fn sample_brownian_scaled(
    seed: u64,
    d: usize,
    t: f64,
    steps: usize,
    variance_rate: f64,
) -> LabResult<BrownianPath> {
    if steps == 0 {
        return Err(LabError::param("steps", 0.0, "must be >= 1"));
    }
    if !(t > 0.0 && t.is_finite()) {
        return Err(LabError::param("t", t, "must be finite and > 0"));
    }
    if d == 0 {
        return Err(LabError::param("d", 0.0, "must be >= 1"));
    }
    if !(variance_rate >= 0.0) {
        return Err(LabError::param("variance_rate", variance_rate, "must be >= 0"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sd = (variance_rate * t / steps as f64).sqrt();
    let mut increments = Vec::with_capacity(steps * d);
    let mut pos = vec![0.0; d];
    let mut running = 0.0f64;
    for _ in 0..steps {
        for p in pos.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            let inc = sd * z;
            increments.push(inc);
            *p += inc;
        }
        running = running.max(norm(&pos));
    }
    Ok(BrownianPath {
        seed,
        dim: d,
        horizon: t,
        steps,
        increments,
        running_max_abs: running,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathRecord {
    pub t: f64,
    pub x: Vec<f64>,
    pub times: Vec<f64>,
    /// Noise-removed positions `Y(s)`, sample-major.
    pub y: Vec<f64>,
    /// `B_s` at the sample times, when noise is present.
    pub noise: Option<Vec<f64>>,
    pub m_t: f64,
    pub regime: Option<Regime>,
    pub max_displacement: f64,
}

impl PathRecord {
    pub fn dim(&self) -> usize {
        self.x.len()
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn y_at(&self, k: usize) -> &[f64] {
        let d = self.dim();
        &self.y[k * d..(k + 1) * d]
    }

    pub fn y_norm(&self, k: usize) -> f64 {
        norm(self.y_at(k))
    }

    /// `X(s) = Y(s) + B_s`.
    pub fn x_at(&self, k: usize) -> Vec<f64> {
        let d = self.dim();
        let mut out = self.y_at(k).to_vec();
        if let Some(b) = &self.noise {
            for (o, bv) in out.iter_mut().zip(&b[k * d..(k + 1) * d]) {
                *o += bv;
            }
        }
        out
    }

    pub fn endpoint_y(&self) -> &[f64] {
        self.y_at(self.len() - 1)
    }

    /// CSV with columns `s, y_0.., b_0.., running_m`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> LabResult<()> {
        let d = self.dim();
        let mut header = vec!["s".to_string()];
        header.extend((0..d).map(|j| format!("y{j}")));
        header.extend((0..d).map(|j| format!("b{j}")));
        header.push("running_m".into());
        writeln!(w, "{}", header.join(","))?;
        let mut running: f64 = 0.0;
        let sqrt_t = self.t.sqrt();
        for k in 0..self.len() {
            let mut row = vec![format!("{}", self.times[k])];
            row.extend(self.y_at(k).iter().map(|v| format!("{v}")));
            let b: Vec<f64> = match &self.noise {
                Some(b) => b[k * d..(k + 1) * d].to_vec(),
                None => vec![0.0; d],
            };
            running = running.max(norm(&b));
            row.extend(b.iter().map(|v| format!("{v}")));
            let m = if sqrt_t > 0.0 { 1.0 + running / sqrt_t } else { 1.0 };
            row.push(format!("{m}"));
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Sample times of the one-step scheme.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum StepGrid {
    #[default]
    Uniform,
    /// `s_k = t (k/N)^power`: clusters steps near `s = 0`, where flows started
    /// at a non-Lipschitz point (e.g. the origin of `|x|^{1/κ}`) are stiff.
    Graded { power: f64 },
}

impl StepGrid {
    pub fn times(&self, t: f64, steps: usize) -> Vec<f64> {
        let n = steps as f64;
        (0..=steps)
            .map(|k| {
                let f = k as f64 / n;
                match self {
                    StepGrid::Uniform => t * f,
                    StepGrid::Graded { power } => t * f.powf(*power),
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct IntegratorOptions {
    pub grid: StepGrid,
    /// Escapes beyond this radius are divergence errors.
    pub blowup_radius: Option<f64>,
    /// Used to tag the record with its regime.
    pub flow: Option<FlowParams>,
}

struct Rk4Scratch {
    k: [Vec<f64>; 4],
    arg: Vec<f64>,
}

impl Rk4Scratch {
    fn new(d: usize) -> Self {
        Rk4Scratch {
            k: [vec![0.0; d], vec![0.0; d], vec![0.0; d], vec![0.0; d]],
            arg: vec![0.0; d],
        }
    }
}

/// One classical RK4 step of `dy/ds = v(t − s, y + b(s))` with the noise
/// offsets at `s`, `s + h/2`, `s + h` supplied.
#[allow(clippy::too_many_arguments)]
fn rk4_step<D: Drift + ?Sized>(
    drift: &D,
    t: f64,
    s: f64,
    h: f64,
    y: &mut [f64],
    b: [&[f64]; 3],
    scratch: &mut Rk4Scratch,
) {
    let d = y.len();
    let Rk4Scratch { k, arg } = scratch;
    for j in 0..d {
        arg[j] = y[j] + b[0][j];
    }
    drift.eval(t - s, arg, &mut k[0]);
    for j in 0..d {
        arg[j] = y[j] + 0.5 * h * k[0][j] + b[1][j];
    }
    drift.eval(t - s - 0.5 * h, arg, &mut k[1]);
    for j in 0..d {
        arg[j] = y[j] + 0.5 * h * k[1][j] + b[1][j];
    }
    drift.eval(t - s - 0.5 * h, arg, &mut k[2]);
    for j in 0..d {
        arg[j] = y[j] + h * k[2][j] + b[2][j];
    }
    drift.eval(t - s - h, arg, &mut k[3]);
    for j in 0..d {
        y[j] += h / 6.0 * (k[0][j] + 2.0 * k[1][j] + 2.0 * k[2][j] + k[3][j]);
    }
}

fn check_start(d: usize, x: &[f64], t: f64, steps: usize) -> LabResult<()> {
    if x.len() != d {
        return Err(LabError::Precondition(format!(
            "start has {} components, drift has {d}",
            x.len()
        )));
    }
    if steps == 0 {
        return Err(LabError::param("steps", 0.0, "must be >= 1"));
    }
    if !(t >= 0.0 && t.is_finite()) {
        return Err(LabError::param("t", t, "must be finite and >= 0"));
    }
    Ok(())
}

fn check_escape(y: &[f64], s: f64, limit: Option<f64>) -> LabResult<()> {
    let r = norm(y);
    if !r.is_finite() {
        return Err(LabError::Divergence {
            time: s,
            radius: r,
            limit: limit.unwrap_or(f64::INFINITY),
        });
    }
    if let Some(limit) = limit {
        if r > limit {
            return Err(LabError::Divergence {
                time: s,
                radius: r,
                limit,
            });
        }
    }
    Ok(())
}

/// Solves `dy/ds = v(t − s, y)`, `y(0) = x` on `[0, t]`.
pub fn integrate_deterministic<D: Drift + ?Sized>(
    drift: &D,
    t: f64,
    x: &[f64],
    steps: usize,
    opts: &IntegratorOptions,
) -> LabResult<PathRecord> {
    let d = drift.dim();
    check_start(d, x, t, steps)?;
    let times = opts.grid.times(t, steps);
    let zero = vec![0.0; d];
    let mut scratch = Rk4Scratch::new(d);
    let mut y = x.to_vec();
    let mut ys = Vec::with_capacity((steps + 1) * d);
    ys.extend_from_slice(&y);
    let mut max_disp: f64 = 0.0;
    for k in 0..steps {
        let (s, h) = (times[k], times[k + 1] - times[k]);
        rk4_step(drift, t, s, h, &mut y, [&zero, &zero, &zero], &mut scratch);
        check_escape(&y, times[k + 1], opts.blowup_radius)?;
        max_disp = max_disp.max(dist(&y, x));
        ys.extend_from_slice(&y);
    }
    let regime = opts.flow.map(|p| classify_regime(&p, t, norm(x), None));
    Ok(PathRecord {
        t,
        x: x.to_vec(),
        times,
        y: ys,
        noise: None,
        m_t: 1.0,
        regime,
        max_displacement: max_disp,
    })
}

/// Solves `dY/ds = v(t − s, Y + B_s)`, `Y(0) = x`, one step per noise
/// increment; the noise at stage midpoints is the linear interpolant.
pub fn integrate_stochastic<D: Drift + ?Sized>(
    drift: &D,
    t: f64,
    x: &[f64],
    noise: &BrownianPath,
    opts: &IntegratorOptions,
) -> LabResult<PathRecord> {
    let d = drift.dim();
    check_start(d, x, t, noise.steps)?;
    if noise.dim != d {
        return Err(LabError::Precondition(format!(
            "noise dimension {} differs from drift dimension {d}",
            noise.dim
        )));
    }
    if noise.horizon < t * (1.0 - 1e-12) {
        return Err(LabError::Precondition(format!(
            "noise horizon {} shorter than t = {t}",
            noise.horizon
        )));
    }
    // Run over [0, t] with the path's own step count.
    let steps = noise.steps;
    let h = t / steps as f64;
    let cum = noise.cumulative();
    // If the noise horizon exceeds t, resample B on the integration grid by
    // linear interpolation of the stored samples.
    let b_at = |s: f64, out: &mut [f64]| {
        let pos = (s / noise.dt()).min(steps as f64);
        let i = (pos.floor() as usize).min(steps - 1);
        let f = pos - i as f64;
        for j in 0..d {
            out[j] = (1.0 - f) * cum[i * d + j] + f * cum[(i + 1) * d + j];
        }
    };
    let mut scratch = Rk4Scratch::new(d);
    let mut y = x.to_vec();
    let mut ys = Vec::with_capacity((steps + 1) * d);
    let mut bs = Vec::with_capacity((steps + 1) * d);
    let mut times = Vec::with_capacity(steps + 1);
    let (mut b0, mut bm, mut b1) = (vec![0.0; d], vec![0.0; d], vec![0.0; d]);
    ys.extend_from_slice(&y);
    bs.extend_from_slice(&b0);
    times.push(0.0);
    let mut max_disp: f64 = 0.0;
    let mut running: f64 = 0.0;
    for k in 0..steps {
        let s = k as f64 * h;
        b_at(s, &mut b0);
        b_at(s + 0.5 * h, &mut bm);
        b_at(s + h, &mut b1);
        rk4_step(drift, t, s, h, &mut y, [&b0, &bm, &b1], &mut scratch);
        let s1 = (k + 1) as f64 * h;
        check_escape(&y, s1, opts.blowup_radius)?;
        max_disp = max_disp.max(dist(&y, x));
        running = running.max(norm(&b1));
        ys.extend_from_slice(&y);
        bs.extend_from_slice(&b1);
        times.push(s1);
    }
    let m_t = if t > 0.0 { 1.0 + running / t.sqrt() } else { 1.0 };
    let regime = opts
        .flow
        .map(|p| classify_regime(&p, t, norm(x), Some(m_t * t.sqrt())));
    Ok(PathRecord {
        t,
        x: x.to_vec(),
        times,
        y: ys,
        noise: Some(bs),
        m_t,
        regime,
        max_displacement: max_disp,
    })
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(p, q)| (p - q) * (p - q))
        .sum::<f64>()
        .sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DisplacementCheck {
    pub regime: Regime,
    pub displacement: f64,
    /// `max_displacement / ((C_κ−1)⟨Ut⟩ max(⟨Ut⟩^{κ/(κ−1)}, |x|)^{1/κ})`
    pub normal_ratio: f64,
    pub normal_ok: bool,
    /// `max_displacement / (C_abn (M_t √t)^{κ′})`
    pub abnormal_ratio: f64,
    pub abnormal_ok: bool,
}

/// Constant-free normal-regime envelope `⟨Ut⟩ max(⟨Ut⟩^{κ/(κ−1)}, |x|)^{1/κ}`.
pub fn normal_envelope(p: &FlowParams, t: f64, x: f64) -> f64 {
    let but = bracket(p.u_scale * t);
    but * but
        .powf(p.kappa / (p.kappa - 1.0))
        .max(x.abs())
        .powf(1.0 / p.kappa)
}

pub fn check_displacement(
    record: &PathRecord,
    p: &FlowParams,
    constants: &BoundConstants,
) -> DisplacementCheck {
    let x = norm(&record.x);
    let t = record.t;
    let mt_sqrt_t = record.m_t * t.sqrt();
    let regime = classify_regime(p, t, x, Some(mt_sqrt_t));
    let disp = record.max_displacement;
    let normal_ratio = disp / ((constants.c_kappa - 1.0) * normal_envelope(p, t, x));
    let abnormal_bound = constants.c_abn * mt_sqrt_t.powf(constants.kappa_prime);
    let abnormal_ratio = if abnormal_bound > 0.0 {
        disp / abnormal_bound
    } else if disp == 0.0 {
        0.0
    } else {
        f64::INFINITY
    };
    DisplacementCheck {
        regime,
        displacement: disp,
        normal_ratio,
        normal_ok: normal_ratio <= 1.0,
        abnormal_ratio,
        abnormal_ok: abnormal_ratio <= 1.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar_flows::phi_flow;
    use crate::velocity::{make_prototype, DirectionMap};

    #[test]
    fn zero_drift_stays_put() {
        let r = integrate_deterministic(&ZeroDrift(2), 1.5, &[1.0, -2.0], 10, &Default::default()).unwrap();
        for k in 0..r.len() {
            assert_eq!(r.y_at(k), &[1.0, -2.0]);
        }
        assert_eq!(r.m_t, 1.0);
        assert_eq!(r.max_displacement, 0.0);
    }

    #[test]
    fn linear_ode_reaches_e() {
        let v = FnDrift {
            dim: 1,
            f: |_: f64, y: &[f64], o: &mut [f64]| o[0] = y[0],
        };
        let r = integrate_deterministic(&v, 1.0, &[1.0], 1000, &Default::default()).unwrap();
        let e = std::f64::consts::E;
        assert!((r.endpoint_y()[0] - e).abs() / e <= 1e-8);
    }

    #[test]
    fn rk4_order() {
        let v = FnDrift {
            dim: 1,
            f: |_: f64, y: &[f64], o: &mut [f64]| o[0] = y[0],
        };
        let e = std::f64::consts::E;
        let mut prev = None;
        for steps in [4, 8, 16, 32] {
            let r = integrate_deterministic(&v, 1.0, &[1.0], steps, &Default::default()).unwrap();
            let err = (r.endpoint_y()[0] - e).abs();
            if let Some(p) = prev {
                assert!(p / err >= 2f64.powf(3.5), "ratio {}", p / err);
            }
            prev = Some(err);
        }
    }

    #[test]
    fn prototype_flow_matches_closed_form() {
        let u0 = make_prototype(1, 1.0, 2.0, DirectionMap::Identity).unwrap();
        // Start just off the origin on the positive branch, where the blend
        // and the power law coincide once y ≥ 1.
        let p = FlowParams::new(2.0, 1.0, 0.0).unwrap();
        let x0 = 1.0;
        let r = integrate_deterministic(&u0, 2.0, &[x0], 1000, &Default::default()).unwrap();
        let exact = phi_flow(&p, 2.0, x0).unwrap();
        assert!((r.endpoint_y()[0] - exact).abs() < 1e-9 * exact);
    }

    #[test]
    fn blowup_reported() {
        let v = FnDrift {
            dim: 1,
            f: |_: f64, y: &[f64], o: &mut [f64]| o[0] = y[0] * y[0],
        };
        let opts = IntegratorOptions {
            blowup_radius: Some(100.0),
            ..Default::default()
        };
        let err = integrate_deterministic(&v, 2.0, &[1.0], 1000, &opts).unwrap_err();
        match err {
            LabError::Divergence { time, .. } => assert!(time > 0.98 && time < 1.0),
            e => panic!("{e:?}"),
        }
    }

    #[test]
    fn brownian_reproducible_and_stub() {
        let a = sample_brownian(7, 2, 1.0, 50).unwrap();
        let b = sample_brownian(7, 2, 1.0, 50).unwrap();
        assert_eq!(a, b);
        let z = sample_brownian_scaled(7, 1, 1.0, 50, 0.0).unwrap();
        assert_eq!(z.m_t(), 1.0);
        assert!(matches!(sample_brownian(1, 1, 1.0, 0), Err(LabError::Parameter { .. })));
    }

    #[test]
    fn stochastic_constant_drift_exact_and_doss_sussmann() {
        let c = FnDrift {
            dim: 2,
            f: |_: f64, _: &[f64], o: &mut [f64]| {
                o[0] = 0.5;
                o[1] = -1.0;
            },
        };
        let noise = sample_brownian(3, 2, 1.0, 64).unwrap();
        let r = integrate_stochastic(&c, 1.0, &[1.0, 1.0], &noise, &Default::default()).unwrap();
        let cum = noise.cumulative();
        for k in 0..r.len() {
            let s = r.times[k];
            assert!((r.y_at(k)[0] - (1.0 + 0.5 * s)).abs() < 1e-12);
            assert!((r.y_at(k)[1] - (1.0 - s)).abs() < 1e-12);
            let b = &r.noise.as_ref().unwrap()[k * 2..k * 2 + 2];
            assert_eq!(b, &cum[k * 2..k * 2 + 2]);
            let x = r.x_at(k);
            for j in 0..2 {
                assert_eq!(x[j], r.y_at(k)[j] + b[j]);
            }
        }
        assert!((r.m_t - noise.m_t()).abs() < 1e-12);
    }

    #[test]
    fn regime_tag_matches_classifier() {
        let p = FlowParams::new(2.0, 1.0, 0.0).unwrap();
        let opts = IntegratorOptions {
            flow: Some(p),
            ..Default::default()
        };
        for seed in 0..20 {
            let noise = sample_brownian(seed, 1, 1.0, 32).unwrap();
            let r = integrate_stochastic(&ZeroDrift(1), 1.0, &[0.5], &noise, &opts).unwrap();
            assert_eq!(r.regime, Some(classify_regime(&p, 1.0, 0.5, Some(r.m_t))));
        }
    }

    #[test]
    fn displacement_checks() {
        let p = FlowParams::new(2.0, 1.0, 0.0).unwrap();
        let k = BoundConstants::default();
        let r = integrate_deterministic(&ZeroDrift(1), 1.0, &[3.0], 4, &Default::default()).unwrap();
        let c = check_displacement(&r, &p, &k);
        assert!(c.normal_ok && c.abnormal_ok && c.displacement == 0.0);
        let mut synthetic = r.clone();
        let env = (k.c_kappa - 1.0) * normal_envelope(&p, 1.0, 3.0);
        synthetic.max_displacement = 10.0 * env;
        let c = check_displacement(&synthetic, &p, &k);
        assert!(!c.normal_ok && (c.normal_ratio - 10.0).abs() < 1e-12);
    }

    #[test]
    fn csv_export() {
        let noise = sample_brownian(1, 1, 1.0, 4).unwrap();
        let r = integrate_stochastic(&ZeroDrift(1), 1.0, &[0.0], &noise, &Default::default()).unwrap();
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("s,y0,b0,running_m\n"));
        assert_eq!(text.lines().count(), 6);
    }
}
