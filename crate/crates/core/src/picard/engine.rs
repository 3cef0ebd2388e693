//! The Feynman-Kac Monte Carlo kernel shared by every scheme variant.
//!
//! For one time slice `t` and a set of start points it integrates, per
//! antithetic noise pair `(B, −B)`,
//!
//! ```text
//! dY/ds = −u^{(m−1)}(t − s, Y + B_s),           Y(0) = x
//! dG/ds = −G · ∇u^{(m−1)}(t − s, Y + B_s),      G(0) = I   (optional)
//! ```
//!
//! by Heun's predictor-corrector with the Brownian path sampled on the
//! step grid, and
//! averages `u_0(X_t)·w`, `G·∇u_0(X_t)` with `X = Y + B` and an optional
//! penalty weight `w = exp(−∫ F_n(X))`.
//!
//! Paths are keyed by `(seed, slice key, pair index)` and reduced in index
//! order, so results do not depend on the thread count.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::grid::GridField;
use crate::error::{LabError, LabResult};
use crate::rng::{stream, tags};
use crate::velocity::{PenaltySpec, VelocityFieldSpec};

const CHUNK_PAIRS: usize = 32;
const BATCH_CHUNKS: usize = 64;

#[derive(Clone, Copy)]
pub(crate) struct McJob<'a> {
    pub u0: &'a VelocityFieldSpec,
    pub drift: Option<&'a GridField>,
    pub drift_grad: Option<&'a GridField>,
    pub t: f64,
    pub stream_key: u64,
    /// Start points, `n × d`.
    pub starts: &'a [f64],
    pub pairs: usize,
    pub steps: usize,
    pub seed: u64,
    /// Zero noise turns the kernel into the deterministic characteristic solver.
    pub noise: bool,
    pub penalty: Option<&'a PenaltySpec>,
    pub want_gradient: bool,
    pub blowup: f64,
}

#[derive(Debug, Clone, Default)]
pub(crate) struct McOutput {
    pub value: Vec<f64>,
    pub value_se: Vec<f64>,
    pub grad: Vec<f64>,
    pub grad_se: Vec<f64>,
}

pub(crate) fn run(job: &McJob) -> LabResult<McOutput> {
    match job.u0.dim {
        1 => run_dim::<1>(job),
        2 => run_dim::<2>(job),
        3 => run_dim::<3>(job),
        d => Err(LabError::param("d", d as f64, "the Monte Carlo kernel supports d in 1..=3")),
    }
}

/// Per-chunk running mean and centred sum of squares (Welford), merged in
/// chunk order so the result does not depend on scheduling.
struct Partial {
    count: f64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Partial {
    fn merge(&mut self, other: &Partial) {
        if other.count == 0.0 {
            return;
        }
        let n = self.count + other.count;
        let w = other.count / n;
        for k in 0..self.mean.len() {
            let delta = other.mean[k] - self.mean[k];
            self.mean[k] += delta * w;
            self.m2[k] += other.m2[k] + delta * delta * self.count * w;
        }
        self.count = n;
    }
}

type Mat<const D: usize> = [[f64; D]; D];

fn identity<const D: usize>() -> Mat<D> {
    let mut m = [[0.0; D]; D];
    for (i, row) in m.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    m
}

#[inline]
fn matmul<const D: usize>(a: &Mat<D>, b: &Mat<D>) -> Mat<D> {
    let mut c = [[0.0; D]; D];
    for i in 0..D {
        for k in 0..D {
            let aik = a[i][k];
            for j in 0..D {
                c[i][j] += aik * b[k][j];
            }
        }
    }
    c
}

#[inline]
fn axpy_mat<const D: usize>(g: &Mat<D>, h: f64, k: &Mat<D>) -> Mat<D> {
    let mut out = *g;
    for i in 0..D {
        for j in 0..D {
            out[i][j] += h * k[i][j];
        }
    }
    out
}

#[inline]
fn neg<const D: usize>(mut m: Mat<D>) -> Mat<D> {
    m.iter_mut().flatten().for_each(|v| *v = -*v);
    m
}

/// Largest frozen table (in doubles) built before falling back to
/// evaluating the time blend on the fly.
const FROZEN_LIMIT: usize = 1 << 24;

/// A grid field blended to the time of every step, so that each
/// evaluation is a plain multilinear lookup in one table.
struct Frozen {
    table: Vec<f64>,
    slice_len: usize,
    comps: usize,
    nodes: usize,
    half_width: f64,
    inv_h: f64,
}

impl Frozen {
    fn build(field: &GridField, brackets: &[(usize, f64)]) -> Option<Frozen> {
        let sl = field.slice_len();
        if sl.checked_mul(brackets.len())? > FROZEN_LIMIT {
            return None;
        }
        let mut table = Vec::with_capacity(sl * brackets.len());
        for &(j0, w) in brackets {
            let s0 = field.slice(j0);
            if w == 0.0 || j0 + 1 >= field.spec.slices.len() {
                table.extend_from_slice(s0);
            } else {
                let s1 = field.slice(j0 + 1);
                table.extend(s0.iter().zip(s1).map(|(a, b)| (1.0 - w) * a + w * b));
            }
        }
        let n = field.spec.nodes;
        Some(Frozen {
            table,
            slice_len: sl,
            comps: field.components,
            nodes: n,
            half_width: field.spec.half_width,
            inv_h: (n - 1) as f64 / (2.0 * field.spec.half_width),
        })
    }

    #[inline(always)]
    fn table(&self, q: usize) -> &[f64] {
        &self.table[q * self.slice_len..(q + 1) * self.slice_len]
    }

    /// Scalar 1D lookup in a table returned by [`Frozen::table`].
    #[inline(always)]
    fn lerp1(&self, t: &[f64], y: f64) -> Option<f64> {
        let pos = (y + self.half_width) * self.inv_h;
        let last = (self.nodes - 1) as f64;
        if !(pos >= 0.0 && pos <= last) {
            return None;
        }
        let i = (pos as usize).min(self.nodes - 2);
        let f = pos - i as f64;
        let (v0, v1) = (t[i], t[i + 1]);
        Some(v0 + f * (v1 - v0))
    }

    #[inline(always)]
    fn eval<const D: usize>(&self, q: usize, y: &[f64; D], out: &mut [f64]) -> bool {
        let n = self.nodes;
        let mut base = 0usize;
        let mut frac = [0.0; D];
        let mut stride = [0usize; D];
        let mut st = 1usize;
        for a in (0..D).rev() {
            stride[a] = st;
            st *= n;
        }
        for a in 0..D {
            let pos = (y[a] + self.half_width) * self.inv_h;
            if !(pos >= 0.0 && pos <= (n - 1) as f64) {
                return false;
            }
            let i = (pos as usize).min(n - 2);
            frac[a] = pos - i as f64;
            base += i * stride[a];
        }
        let c = self.comps;
        let t = &self.table[q * self.slice_len..(q + 1) * self.slice_len];
        if D == 1 && c == 1 {
            let (v0, v1) = (t[base], t[base + 1]);
            out[0] = v0 + frac[0] * (v1 - v0);
            return true;
        }
        out[..c].iter_mut().for_each(|o| *o = 0.0);
        for corner in 0..(1usize << D) {
            let mut wt = 1.0;
            let mut flat = base;
            for a in 0..D {
                if (corner >> a) & 1 == 1 {
                    wt *= frac[a];
                    flat += stride[a];
                } else {
                    wt *= 1.0 - frac[a];
                }
            }
            let idx = flat * c;
            for k in 0..c {
                out[k] += wt * t[idx + k];
            }
        }
        true
    }
}

struct Ctx<'a, const D: usize> {
    job: &'a McJob<'a>,
    brackets: Vec<(usize, f64)>,
    frozen_drift: Option<Frozen>,
    frozen_grad: Option<Frozen>,
    h: f64,
    comps: usize,
}

impl<const D: usize> Ctx<'_, D> {
    #[inline(always)]
    fn drift_at(&self, q: usize, x: &[f64; D]) -> LabResult<[f64; D]> {
        let mut out = [0.0; D];
        if let Some(f) = self.job.drift {
            let (j0, w) = self.brackets[q];
            let hit = matches!(&self.frozen_drift, Some(fr) if fr.eval::<D>(q, x, &mut out));
            if !hit && !f.eval_bracket::<D>(j0, w, x, &mut out) {
                return Err(self.escape(q, x));
            }
            out.iter_mut().for_each(|v| *v = -*v);
        }
        Ok(out)
    }

    #[inline]
    fn grad_at(&self, q: usize, x: &[f64; D]) -> LabResult<Mat<D>> {
        let mut flat = [0.0; 9];
        let f = self.job.drift_grad.expect("gradient transport needs a gradient drift");
        let (j0, w) = self.brackets[q];
        let hit = matches!(&self.frozen_grad, Some(fr) if fr.eval::<D>(q, x, &mut flat[..D * D]));
        if !hit && !f.eval_bracket::<D>(j0, w, x, &mut flat[..D * D]) {
            return Err(self.escape(q, x));
        }
        let mut m = [[0.0; D]; D];
        for i in 0..D {
            for j in 0..D {
                m[i][j] = flat[i * D + j];
            }
        }
        Ok(m)
    }

    fn escape(&self, q: usize, x: &[f64; D]) -> LabError {
        LabError::Divergence {
            time: q as f64 * self.h,
            radius: x.iter().map(|v| v * v).sum::<f64>().sqrt(),
            limit: self.job.drift.map(|f| f.spec.half_width).unwrap_or(f64::INFINITY),
        }
    }

    fn penalty_at(&self, x: &[f64; D]) -> f64 {
        match self.job.penalty {
            Some(p) => p.eval_radius(x.iter().map(|v| v * v).sum::<f64>().sqrt()),
            None => 0.0,
        }
    }

    /// All characteristics of one noise realization `sign·B`, advanced
    /// together step by step so the drift tables of the current step stay
    /// in cache. Writes, per start, `u_0(X_t)·w` then (optionally)
    /// `G·∇u_0(X_t)` into `out` (`n × comps`).
    fn trace_all(&self, pair: usize, b: &[[f64; D]], sign: f64, st: &mut Scratch<D>, out: &mut [f64]) -> LabResult<()> {
        let job = self.job;
        let h = self.h;
        let n = st.y.len();
        let grad = job.want_gradient;
        let penalized = job.penalty.is_some();
        let add = |y: &[f64; D], q: usize| -> [f64; D] {
            let mut x = *y;
            for a in 0..D {
                x[a] += sign * b[q][a];
            }
            x
        };
        for i in 0..n {
            st.y[i].copy_from_slice(&job.starts[i * D..(i + 1) * D]);
            st.g[i] = identity::<D>();
            st.pen[i] = 0.0;
            if penalized {
                st.f_prev[i] = self.penalty_at(&add(&st.y[i], 0));
            }
        }
        let scalar = match &self.frozen_drift {
            Some(fr) if D == 1 && fr.comps == 1 && !grad && !penalized => Some(fr),
            _ => None,
        };
        if let Some(fr) = scalar {
            // Scalar fast path: same scheme as below with the per-step
            // tables hoisted out of the loop over start points.
            for k in 0..job.steps {
                let (t0, t1) = (fr.table(k), fr.table(k + 1));
                let (b0, b1) = (sign * b[k][0], sign * b[k + 1][0]);
                for i in 0..n {
                    let y = st.y[i][0];
                    let k1 = match fr.lerp1(t0, y + b0) {
                        Some(v) => -v,
                        None => self.drift_at(k, &st.y[i].map(|v| v + b0))?[0],
                    };
                    let y2 = y + h * k1;
                    let k2 = match fr.lerp1(t1, y2 + b1) {
                        Some(v) => -v,
                        None => self.drift_at(k + 1, &[y2 + b1; D])?[0],
                    };
                    let y = y + 0.5 * h * (k1 + k2);
                    if !(y.abs() <= job.blowup) {
                        return Err(LabError::Divergence {
                            time: (k + 1) as f64 * h,
                            radius: y.abs(),
                            limit: job.blowup,
                        });
                    }
                    st.y[i][0] = y;
                }
            }
        } else if job.drift.is_some() {
            for k in 0..job.steps {
                let (q0, q1) = (k, k + 1);
                for i in 0..n {
                    let y = st.y[i];
                    let x1 = add(&y, q0);
                    let k1 = self.drift_at(q0, &x1)?;
                    let mut y2 = y;
                    (0..D).for_each(|a| y2[a] += h * k1[a]);
                    let x2 = add(&y2, q1);
                    let k2 = self.drift_at(q1, &x2)?;
                    if grad {
                        let g = &mut st.g[i];
                        let a1 = self.grad_at(q0, &x1)?;
                        let a2 = self.grad_at(q1, &x2)?;
                        let g1 = neg(matmul(g, &a1));
                        let g2 = neg(matmul(&axpy_mat(g, h, &g1), &a2));
                        for r in 0..D {
                            for c in 0..D {
                                g[r][c] += 0.5 * h * (g1[r][c] + g2[r][c]);
                            }
                        }
                        let gn: f64 = g.iter().flatten().map(|v| v * v).sum::<f64>().sqrt();
                        if !(gn <= 50f64.exp()) {
                            return Err(LabError::ExponentialBlowup { path: pair, norm: gn });
                        }
                    }
                    let y = &mut st.y[i];
                    for a in 0..D {
                        y[a] += 0.5 * h * (k1[a] + k2[a]);
                    }
                    let r = y.iter().map(|v| v * v).sum::<f64>().sqrt();
                    if !(r <= job.blowup) {
                        return Err(LabError::Divergence {
                            time: (k + 1) as f64 * h,
                            radius: r,
                            limit: job.blowup,
                        });
                    }
                    if penalized {
                        let f_next = self.penalty_at(&add(y, q1));
                        st.pen[i] += 0.5 * h * (st.f_prev[i] + f_next);
                        st.f_prev[i] = f_next;
                    }
                }
            }
        } else if penalized {
            for i in 0..n {
                for k in 0..job.steps {
                    let f_next = self.penalty_at(&add(&st.y[i], k + 1));
                    st.pen[i] += 0.5 * h * (st.f_prev[i] + f_next);
                    st.f_prev[i] = f_next;
                }
            }
        }
        let c = self.comps;
        for i in 0..n {
            let o = &mut out[i * c..(i + 1) * c];
            let xt = add(&st.y[i], job.steps);
            let weight = if penalized { (-st.pen[i]).exp() } else { 1.0 };
            job.u0.eval(&xt, &mut o[..D]);
            o[..D].iter_mut().for_each(|v| *v *= weight);
            if grad {
                let mut flat = [0.0; 9];
                job.u0.gradient(&xt, &mut flat[..D * D]);
                let mut gu = [[0.0; D]; D];
                for r in 0..D {
                    for cc in 0..D {
                        gu[r][cc] = flat[r * D + cc];
                    }
                }
                let prod = matmul(&st.g[i], &gu);
                for r in 0..D {
                    for cc in 0..D {
                        o[D + r * D + cc] = prod[r][cc];
                    }
                }
            }
        }
        Ok(())
    }

    fn chunk(&self, chunk: usize) -> LabResult<Partial> {
        let job = self.job;
        let n = job.starts.len() / D;
        let c = self.comps;
        let mut part = Partial {
            count: 0.0,
            mean: vec![0.0; n * c],
            m2: vec![0.0; n * c],
        };
        let mut b = vec![[0.0; D]; job.steps + 1];
        let mut plus = vec![0.0; n * c];
        let mut minus = vec![0.0; n * c];
        let mut scratch = Scratch::<D>::new(n);
        let lo = chunk * CHUNK_PAIRS;
        let hi = (lo + CHUNK_PAIRS).min(job.pairs);
        let sd = (2.0 * self.h).sqrt();
        for pair in lo..hi {
            if job.noise {
                let mut rng = stream(job.seed, tags::PICARD_PATHS, (job.stream_key << 32) | pair as u64);
                for q in 0..job.steps {
                    let prev = b[q];
                    for (next, last) in b[q + 1].iter_mut().zip(prev) {
                        let z: f64 = rng.sample(StandardNormal);
                        *next = last + sd * z;
                    }
                }
            }
            self.trace_all(pair, &b, 1.0, &mut scratch, &mut plus)?;
            if job.noise {
                self.trace_all(pair, &b, -1.0, &mut scratch, &mut minus)?;
            } else {
                minus.copy_from_slice(&plus);
            }
            part.count += 1.0;
            for k in 0..n * c {
                let avg = 0.5 * (plus[k] + minus[k]);
                let delta = avg - part.mean[k];
                part.mean[k] += delta / part.count;
                part.m2[k] += delta * (avg - part.mean[k]);
            }
        }
        Ok(part)
    }
}

struct Scratch<const D: usize> {
    y: Vec<[f64; D]>,
    g: Vec<Mat<D>>,
    pen: Vec<f64>,
    f_prev: Vec<f64>,
}

impl<const D: usize> Scratch<D> {
    fn new(n: usize) -> Self {
        Scratch {
            y: vec![[0.0; D]; n],
            g: vec![identity::<D>(); n],
            pen: vec![0.0; n],
            f_prev: vec![0.0; n],
        }
    }
}

fn run_dim<const D: usize>(job: &McJob) -> LabResult<McOutput> {
    // Without noise every pair is identical; one suffices.
    let job = &McJob {
        pairs: if job.noise { job.pairs } else { 1.min(job.pairs) },
        ..*job
    };
    if !job.starts.len().is_multiple_of(D) {
        return Err(LabError::Precondition("start coordinates not a multiple of d".into()));
    }
    if job.pairs == 0 || job.steps == 0 {
        return Err(LabError::param("paths", job.pairs as f64, "need at least one path and one step"));
    }
    if job.want_gradient && job.drift.is_some() && job.drift_grad.is_none() {
        return Err(LabError::Sequencing("gradient transport needs the previous gradient field".into()));
    }
    let h = job.t / job.steps as f64;
    let brackets: Vec<(usize, f64)> = match job.drift {
        Some(f) => (0..=job.steps)
            .map(|q| f.time_bracket(job.t - q as f64 * h))
            .collect(),
        None => Vec::new(),
    };
    let comps = D + if job.want_gradient { D * D } else { 0 };
    let ctx = Ctx::<D> {
        job,
        frozen_drift: job.drift.and_then(|f| Frozen::build(f, &brackets)),
        frozen_grad: job
            .drift_grad
            .filter(|_| job.want_gradient)
            .and_then(|f| Frozen::build(f, &brackets)),
        brackets,
        h,
        comps,
    };
    let n = job.starts.len() / D;
    let pairs = job.pairs;
    let n_chunks = pairs.div_ceil(CHUNK_PAIRS);
    let mut acc = Partial {
        count: 0.0,
        mean: vec![0.0; n * comps],
        m2: vec![0.0; n * comps],
    };
    for batch in (0..n_chunks).step_by(BATCH_CHUNKS) {
        let end = (batch + BATCH_CHUNKS).min(n_chunks);
        let parts: Vec<LabResult<Partial>> = (batch..end).into_par_iter().map(|c| ctx.chunk(c)).collect();
        for p in parts {
            acc.merge(&p?);
        }
    }
    let pf = pairs as f64;
    let mut out = McOutput {
        value: vec![0.0; n * D],
        value_se: vec![0.0; n * D],
        grad: if job.want_gradient { vec![0.0; n * D * D] } else { Vec::new() },
        grad_se: if job.want_gradient { vec![0.0; n * D * D] } else { Vec::new() },
    };
    for i in 0..n {
        for k in 0..comps {
            let mean = acc.mean[i * comps + k];
            let se = if pairs > 1 {
                let var = (acc.m2[i * comps + k] / (pf - 1.0)).max(0.0);
                (var / pf).sqrt()
            } else {
                0.0
            };
            if k < D {
                out.value[i * D + k] = mean;
                out.value_se[i * D + k] = se;
            } else {
                out.grad[i * D * D + k - D] = mean;
                out.grad_se[i * D * D + k - D] = se;
            }
        }
    }
    Ok(out)
}
