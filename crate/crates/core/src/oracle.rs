//! Reference solutions for one-dimensional viscous Burgers
//! `∂_t u + u ∂_x u = η ∂_x² u`.
//!
//! * [`ColeHopf`]: the exact solution through the logarithmic substitution
//!   `u = −2η ∂_x ln φ`, `φ` solving the heat equation. The heat kernel has
//!   variance `2ηt`, so `η = 1` matches the `2 dt` noise convention of the
//!   characteristics. Integrals use adaptive Gauss-Kronrod quadrature.
//! * [`reference_fd_1d`]: a semi-implicit finite-difference solver with
//!   boundary values taken from the Cole-Hopf solution.
//! * [`compare`]: error reports of a grid field against reference samples.

use std::cell::RefCell;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{check_finite, LabError, LabResult};
use crate::picard::GridField;
use crate::velocity::{FieldKind, VelocityFieldSpec};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleQuery {
    pub t: f64,
    pub x: f64,
    #[serde(default = "default_eta")]
    pub eta: f64,
    #[serde(default = "default_tol")]
    pub tol: f64,
}

fn default_eta() -> f64 {
    1.0
}

fn default_tol() -> f64 {
    1e-10
}

impl OracleQuery {
    pub fn new(t: f64, x: f64) -> Self {
        OracleQuery {
            t,
            x,
            eta: default_eta(),
            tol: default_tol(),
        }
    }

    pub fn validate(&self) -> LabResult<()> {
        check_finite("x", self.x)?;
        if !(self.t > 0.0 && self.t.is_finite()) {
            return Err(LabError::param("t", self.t, "must be finite and > 0"));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(LabError::param("eta", self.eta, "must be finite and > 0"));
        }
        if !(self.tol > 0.0 && self.tol <= 1e-2) {
            return Err(LabError::param("tol", self.tol, "must lie in (0, 1e-2]"));
        }
        Ok(())
    }
}

// Gauss-Kronrod 7/15 abscissae and weights on [−1, 1].
const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// One GK15 panel of a vector integrand; returns `(kronrod, |kronrod − gauss|)`
/// per component.
fn gk15<const N: usize, F: FnMut(f64) -> [f64; N]>(f: &mut F, a: f64, b: f64) -> ([f64; N], [f64; N]) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = [0.0; N];
    let mut g = [0.0; N];
    for n in 0..N {
        k[n] = WGK[7] * fc[n];
        g[n] = WG[3] * fc[n];
    }
    for i in 0..7 {
        let f1 = f(c - h * XGK[i]);
        let f2 = f(c + h * XGK[i]);
        for n in 0..N {
            let s = f1[n] + f2[n];
            k[n] += WGK[i] * s;
            if i % 2 == 1 {
                g[n] += WG[i / 2] * s;
            }
        }
    }
    let mut err = [0.0; N];
    for n in 0..N {
        k[n] *= h;
        err[n] = (k[n] - g[n] * h).abs();
    }
    (k, err)
}

const MAX_DEPTH: u32 = 40;

/// Adaptive bisection; `accept(value, err, width)` decides whether a panel
/// is converged. Returns the integral and the summed error estimate.
fn adaptive<const N: usize, F, A>(f: &mut F, a: f64, b: f64, accept: &A) -> LabResult<([f64; N], f64)>
where
    F: FnMut(f64) -> [f64; N],
    A: Fn(&[f64; N], &[f64; N], f64) -> bool,
{
    let mut total = [0.0; N];
    let mut err_total = 0.0f64;
    let mut stack = vec![(a, b, 0u32)];
    while let Some((lo, hi, depth)) = stack.pop() {
        let (v, e) = gk15(f, lo, hi);
        if accept(&v, &e, (hi - lo) / (b - a)) || depth >= MAX_DEPTH {
            if depth >= MAX_DEPTH && !accept(&v, &e, (hi - lo) / (b - a)) {
                return Err(LabError::Oracle {
                    achieved: e.iter().cloned().fold(0.0, f64::max),
                    wanted: 0.0,
                });
            }
            for n in 0..N {
                total[n] += v[n];
            }
            err_total += e.iter().cloned().fold(0.0, f64::max);
        } else {
            let mid = 0.5 * (lo + hi);
            stack.push((mid, hi, depth + 1));
            stack.push((lo, mid, depth + 1));
        }
    }
    Ok((total, err_total))
}

/// Cumulative primitive `P(y) = ∫_0^y u_0`, tabulated lazily at multiples of
/// `h` in both directions.
struct Primitive<'a> {
    u0: &'a VelocityFieldSpec,
    h: f64,
    pos: Vec<f64>,
    neg: Vec<f64>,
}

impl<'a> Primitive<'a> {
    fn new(u0: &'a VelocityFieldSpec) -> Self {
        Primitive {
            u0,
            h: 0.25,
            pos: vec![0.0],
            neg: vec![0.0],
        }
    }

    fn panel(&self, a: f64, b: f64) -> f64 {
        let mut f = |y: f64| [self.u0.eval1(y)];
        let (v, _) = gk15(&mut f, a, b);
        v[0]
    }

    fn at(&mut self, y: f64) -> f64 {
        let k = (y.abs() / self.h).floor() as usize;
        let table = if y >= 0.0 { &self.pos } else { &self.neg };
        let missing = (k + 1).saturating_sub(table.len());
        let sgn = if y >= 0.0 { 1.0 } else { -1.0 };
        for _ in 0..missing {
            let table = if y >= 0.0 { &self.pos } else { &self.neg };
            let j = table.len();
            let (a, b) = (sgn * (j - 1) as f64 * self.h, sgn * j as f64 * self.h);
            let next = table[j - 1] + self.panel(a, b);
            if y >= 0.0 {
                self.pos.push(next);
            } else {
                self.neg.push(next);
            }
        }
        let table = if y >= 0.0 { &self.pos } else { &self.neg };
        let base = sgn * k as f64 * self.h;
        table[k] + if y == base { 0.0 } else { self.panel(base, y) }
    }
}

/// Exact 1D solution by the Cole-Hopf substitution,
///
/// ```text
/// u(t,x) = ∫ K(x−y) u_0(y) φ_0(y) dy / ∫ K(x−y) φ_0(y) dy,
/// φ_0(y) = exp(−P(y)/(2η)),  K(z) ∝ exp(−z²/(4ηt)).
/// ```
///
/// The primitive `P` is cached across queries on the same instance.
pub struct ColeHopf<'a> {
    u0: &'a VelocityFieldSpec,
    primitive: RefCell<Primitive<'a>>,
}

/// Scan range, in kernel standard deviations, beyond which the search for the
/// integrand's support gives up.
const MAX_SCAN_SIGMAS: f64 = 1e5;

impl<'a> ColeHopf<'a> {
    pub fn new(u0: &'a VelocityFieldSpec) -> LabResult<Self> {
        if u0.dim != 1 {
            return Err(LabError::Precondition(format!(
                "the Cole-Hopf oracle is one-dimensional, field has d = {}",
                u0.dim
            )));
        }
        Ok(ColeHopf {
            u0,
            primitive: RefCell::new(Primitive::new(u0)),
        })
    }

    fn log_weight(&self, q: &OracleQuery, y: f64) -> f64 {
        let z = q.x - y;
        -z * z / (4.0 * q.eta * q.t) - self.primitive.borrow_mut().at(y) / (2.0 * q.eta)
    }

    /// Peak of the log-weight and the interval outside which the weight is
    /// below `tol × peak`.
    fn support(&self, q: &OracleQuery) -> LabResult<(f64, f64, f64)> {
        let sigma = (2.0 * q.eta * q.t).sqrt();
        let step = 0.25 * sigma;
        let cut = q.tol.ln();
        let mut peak = self.log_weight(q, q.x);
        let mut ends = [q.x, q.x];
        for (side, dir) in [(0usize, -1.0), (1, 1.0)] {
            let mut y = q.x;
            let mut prev = peak;
            loop {
                y += dir * step;
                if (y - q.x).abs() > MAX_SCAN_SIGMAS * sigma {
                    return Err(LabError::Oracle {
                        achieved: (prev - peak).exp(),
                        wanted: q.tol,
                    });
                }
                let w = self.log_weight(q, y);
                peak = peak.max(w);
                // Stop once the weight is negligible and still falling.
                if w < peak + cut - 2.0 && w < prev {
                    ends[side] = y;
                    break;
                }
                prev = w;
            }
        }
        Ok((peak, ends[0], ends[1]))
    }

    pub fn eval(&self, q: &OracleQuery) -> LabResult<f64> {
        q.validate()?;
        let (peak, a, b) = self.support(q)?;
        let sigma = (2.0 * q.eta * q.t).sqrt();
        let mut f = |y: f64| {
            let w = (self.log_weight(q, y) - peak).exp();
            [w * self.u0.eval1(y), w]
        };
        let tol = q.tol;
        let accept = |v: &[f64; 2], e: &[f64; 2], frac: f64| {
            let _ = v;
            // Panel errors scaled by the panel's share of the interval, so
            // the summed error stays near `tol` relative to the peak mass.
            let budget = tol * sigma * frac.max(1e-3);
            e[1] <= budget && e[0] <= budget * (1.0 + v[0].abs() / v[1].abs().max(f64::MIN_POSITIVE))
        };
        let pieces = ((b - a) / sigma).ceil().max(1.0) as usize;
        let width = (b - a) / pieces as f64;
        let mut num = 0.0;
        let mut den = 0.0;
        for p in 0..pieces {
            let lo = a + p as f64 * width;
            let (v, _) = adaptive(&mut f, lo, lo + width, &|v: &[f64; 2], e: &[f64; 2], frac: f64| {
                accept(v, e, frac / pieces as f64)
            })
            .map_err(|e| match e {
                LabError::Oracle { achieved, .. } => LabError::Oracle { achieved, wanted: tol },
                other => other,
            })?;
            num += v[0];
            den += v[1];
        }
        if !(den > 0.0) {
            return Err(LabError::Oracle {
                achieved: f64::INFINITY,
                wanted: tol,
            });
        }
        Ok(num / den)
    }

    /// Samples `u(t, ·)` at `xs`.
    pub fn curve(&self, t: f64, xs: &[f64], eta: f64, tol: f64) -> LabResult<Vec<f64>> {
        xs.iter()
            .map(|&x| self.eval(&OracleQuery { t, x, eta, tol }))
            .collect()
    }
}

/// One-shot Cole-Hopf evaluation.
pub fn cole_hopf_1d(u0: &VelocityFieldSpec, q: &OracleQuery) -> LabResult<f64> {
    ColeHopf::new(u0)?.eval(q)
}

/// Closed-form solutions where one is known: constants, linear profiles
/// `x/(1/a + t)` and stationary shocks whose width matches `eta`.
pub fn closed_form(u0: &VelocityFieldSpec, t: f64, x: f64, eta: f64) -> Option<f64> {
    if u0.dim != 1 {
        return None;
    }
    match &u0.kind {
        FieldKind::Constant { value } => Some(value[0]),
        FieldKind::LinearProfile { slope } => {
            let den = 1.0 + slope * t;
            (den > 0.0).then(|| slope * x / den)
        }
        FieldKind::Shock { eta: e, .. } if (e - eta).abs() <= 1e-15 * eta => Some(u0.eval1(x)),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FdOptions {
    pub lower: f64,
    pub upper: f64,
    pub dx: f64,
    /// Defaults to the largest stable step `0.4·dx²/(2η)`, shortened so that
    /// it divides `t`.
    pub dt: Option<f64>,
    pub eta: f64,
    /// Number of Cole-Hopf boundary evaluations per unit time; boundary
    /// values are interpolated linearly in between.
    pub boundary_samples: usize,
}

impl FdOptions {
    pub fn new(lower: f64, upper: f64, dx: f64) -> Self {
        FdOptions {
            lower,
            upper,
            dx,
            dt: None,
            eta: 1.0,
            boundary_samples: 400,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FdSolution {
    pub t: f64,
    pub x: Vec<f64>,
    pub u: Vec<f64>,
}

impl FdSolution {
    /// Linear interpolation; `None` outside the box.
    pub fn at(&self, x: f64) -> Option<f64> {
        let (a, b) = (self.x[0], *self.x.last()?);
        if !(x >= a && x <= b) {
            return None;
        }
        let h = (b - a) / (self.x.len() - 1) as f64;
        let s = (x - a) / h;
        let i = (s.floor() as usize).min(self.x.len() - 2);
        let w = s - i as f64;
        Some((1.0 - w) * self.u[i] + w * self.u[i + 1])
    }
}

const CFL_SAFETY: f64 = 0.4;

/// Semi-implicit finite differences: explicit central convection of the
/// flux `u²/2`, backward-Euler diffusion, Dirichlet data from Cole-Hopf.
pub fn reference_fd_1d(u0: &VelocityFieldSpec, opts: &FdOptions, t: f64) -> LabResult<FdSolution> {
    if u0.dim != 1 {
        return Err(LabError::Precondition("finite-difference reference is one-dimensional".into()));
    }
    if !(opts.upper > opts.lower) {
        return Err(LabError::param("upper", opts.upper, "must exceed lower"));
    }
    if !(opts.dx > 0.0 && opts.dx < opts.upper - opts.lower) {
        return Err(LabError::param("dx", opts.dx, "must be positive and smaller than the box"));
    }
    if !(opts.eta > 0.0) {
        return Err(LabError::param("eta", opts.eta, "must be > 0"));
    }
    if !(t >= 0.0 && t.is_finite()) {
        return Err(LabError::param("t", t, "must be finite and >= 0"));
    }
    let dt_max = CFL_SAFETY * opts.dx * opts.dx / (2.0 * opts.eta);
    let dt_req = opts.dt.unwrap_or(dt_max);
    if !(dt_req > 0.0 && dt_req <= dt_max * (1.0 + 1e-12)) {
        return Err(LabError::param("dt", dt_req, "violates dt <= 0.4*dx^2/(2*eta)"));
    }
    let n = ((opts.upper - opts.lower) / opts.dx).round() as usize + 1;
    let dx = (opts.upper - opts.lower) / (n - 1) as f64;
    let x: Vec<f64> = (0..n).map(|i| opts.lower + i as f64 * dx).collect();
    let mut u: Vec<f64> = x.iter().map(|&xi| u0.eval1(xi)).collect();
    if t == 0.0 {
        return Ok(FdSolution { t, x, u });
    }
    let steps = (t / dt_req).ceil() as usize;
    let dt = t / steps as f64;

    // Boundary data on a coarse time grid.
    let oracle = ColeHopf::new(u0)?;
    let nb = ((opts.boundary_samples as f64 * t).ceil() as usize).max(2);
    let mut bl = Vec::with_capacity(nb + 1);
    let mut br = Vec::with_capacity(nb + 1);
    for k in 0..=nb {
        let s = t * k as f64 / nb as f64;
        if k == 0 {
            bl.push(u[0]);
            br.push(u[n - 1]);
        } else {
            let q = |xb| OracleQuery {
                t: s,
                x: xb,
                eta: opts.eta,
                tol: 1e-10,
            };
            bl.push(oracle.eval(&q(x[0]))?);
            br.push(oracle.eval(&q(x[n - 1]))?);
        }
    }
    let boundary = |s: f64, b: &[f64]| {
        let p = s / t * nb as f64;
        let k = (p.floor() as usize).min(nb - 1);
        let w = p - k as f64;
        (1.0 - w) * b[k] + w * b[k + 1]
    };

    // Tridiagonal (−r, 1+2r, −r) on interior nodes, Thomas algorithm with
    // the constant forward sweep precomputed.
    let r = opts.eta * dt / (dx * dx);
    let m = n - 2;
    let mut cprime = vec![0.0; m];
    let mut denom = vec![0.0; m];
    for i in 0..m {
        let d = 1.0 + 2.0 * r - if i > 0 { -r * cprime[i - 1] } else { 0.0 };
        denom[i] = d;
        cprime[i] = -r / d;
    }
    let mut rhs = vec![0.0; m];
    let mut next = vec![0.0; n];
    for k in 0..steps {
        let s1 = (k + 1) as f64 * dt;
        let (ul, ur) = (boundary(s1, &bl), boundary(s1, &br));
        for i in 1..n - 1 {
            let flux = (u[i + 1] * u[i + 1] - u[i - 1] * u[i - 1]) / (4.0 * dx);
            rhs[i - 1] = u[i] - dt * flux;
        }
        rhs[0] += r * ul;
        rhs[m - 1] += r * ur;
        // Forward elimination then back substitution.
        rhs[0] /= denom[0];
        for i in 1..m {
            rhs[i] = (rhs[i] + r * rhs[i - 1]) / denom[i];
        }
        for i in (0..m - 1).rev() {
            rhs[i] -= cprime[i] * rhs[i + 1];
        }
        next[0] = ul;
        next[n - 1] = ur;
        next[1..n - 1].copy_from_slice(&rhs);
        std::mem::swap(&mut u, &mut next);
        if u.iter().any(|v| !v.is_finite()) {
            return Err(LabError::Divergence {
                time: s1,
                radius: f64::INFINITY,
                limit: f64::MAX,
            });
        }
    }
    Ok(FdSolution { t, x, u })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Norm {
    Sup,
    L2,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub lower: f64,
    pub upper: f64,
    /// Nodes where `|reference| ≤ min_reference` are skipped.
    pub min_reference: f64,
    /// Divide errors by `|reference|`.
    pub relative: bool,
}

impl Region {
    pub fn absolute(lower: f64, upper: f64) -> Self {
        Region {
            lower,
            upper,
            min_reference: 0.0,
            relative: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub norm: Norm,
    pub value: f64,
    pub worst_x: f64,
    pub worst_reference: f64,
    pub worst_candidate: f64,
    /// Monte Carlo standard error of the candidate at the worst point.
    pub candidate_se: Option<f64>,
    pub points: usize,
}

/// Compares slice `j` of a 1D field to reference values at its nodes.
/// `reference(x)` returns `None` outside its domain.
pub fn compare<R>(
    reference: R,
    candidate: &GridField,
    stderr: Option<&GridField>,
    j: usize,
    region: &Region,
    norm: Norm,
) -> LabResult<ErrorReport>
where
    R: Fn(f64) -> LabResult<Option<f64>>,
{
    let spec = &candidate.spec;
    if spec.dim != 1 {
        return Err(LabError::Precondition("compare works on one-dimensional fields".into()));
    }
    if j >= spec.slices.len() {
        return Err(LabError::Index {
            index: j,
            len: spec.slices.len(),
        });
    }
    let mut rep = ErrorReport {
        norm,
        value: 0.0,
        worst_x: f64::NAN,
        worst_reference: f64::NAN,
        worst_candidate: f64::NAN,
        candidate_se: None,
        points: 0,
    };
    let mut worst = -1.0;
    let mut sumsq = 0.0;
    for node in 0..spec.node_count() {
        let x = spec.node(node)[0];
        if x < region.lower || x > region.upper {
            continue;
        }
        let Some(r) = reference(x)? else { continue };
        if r.abs() <= region.min_reference {
            continue;
        }
        let c = candidate.node_value(j, node)[0];
        let mut e = (c - r).abs();
        if region.relative {
            e /= r.abs();
        }
        rep.points += 1;
        sumsq += e * e;
        if e > worst {
            worst = e;
            rep.worst_x = x;
            rep.worst_reference = r;
            rep.worst_candidate = c;
            rep.candidate_se = stderr.map(|s| s.node_value(j, node)[0]);
        }
    }
    if rep.points == 0 {
        return Err(LabError::param("region", region.lower, "contains no comparable nodes"));
    }
    rep.value = match norm {
        Norm::Sup => worst,
        Norm::L2 => (sumsq * spec.spacing()).sqrt(),
    };
    Ok(rep)
}

/// Writes `x,u` rows for one time.
pub fn write_curve_csv<W: Write>(mut w: W, t: f64, xs: &[f64], us: &[f64]) -> LabResult<()> {
    writeln!(w, "# t = {t:e}")?;
    writeln!(w, "x,u")?;
    for (x, u) in xs.iter().zip(us) {
        writeln!(w, "{x:e},{u:e}")?;
    }
    Ok(())
}
