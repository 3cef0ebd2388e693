//! The successive-approximation engine.
//!
//! Iterate `m` solves the linear transport problem with drift `u^{(m−1)}`:
//! viscous iterates are Feynman-Kac averages `u^{(m)}(t,x) = E[u_0(X_t)]`
//! over stochastic characteristics, non-viscous ones compose `u_0` with the
//! deterministic characteristic. Both trace characteristics backwards, so
//! the transported velocity enters with a minus sign:
//! `dX/ds = −u^{(m−1)}(t − s, X) + dB_s`. Iterate 0 uses zero drift.
//!
//! All iterates live on one [`GridSpec`]; the same noise stream (keyed by
//! slice and path index, not by `m`) is reused for every iterate so that
//! differences `v^{(m)}` are not swamped by independent sampling noise.

mod engine;
pub mod grid;
pub mod toe;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{check_positive, LabError, LabResult};
use crate::scalar_flows::bracket;
use crate::velocity::{PenaltySpec, VelocityFieldSpec};
use engine::{McJob, McOutput};
pub use grid::{Extrapolation, ExtrapolationKind, FieldRole, GridField, GridSpec};
pub use toe::{spectral_norm, time_ordered_exp};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationConfig {
    pub m_max: usize,
    /// Number of paths `N`, simulated as `⌈N/2⌉` antithetic pairs.
    pub mc_samples: usize,
    /// RK steps for a characteristic of length `horizon`; shorter slices
    /// use proportionally fewer (same step size).
    pub sde_steps: usize,
    pub grid: GridSpec,
    pub horizon: f64,
    pub viscous: bool,
    pub seed: u64,
    /// Hölder exponent for the gradient-difference decay check.
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    /// Also transport gradients (needed for gradient diagnostics).
    #[serde(default)]
    pub gradients: bool,
    /// Standard errors above this are flagged in the statistics.
    #[serde(default)]
    pub se_ceiling: Option<f64>,
    #[serde(default)]
    pub extrapolation: ExtrapolationKind,
    /// Escape radius as a multiple of the grid half-width.
    #[serde(default = "default_blowup")]
    pub blowup_factor: f64,
}

fn default_gamma() -> f64 {
    0.5
}

fn default_blowup() -> f64 {
    4.0
}

impl IterationConfig {
    pub fn validate(&self) -> LabResult<()> {
        self.grid.validate()?;
        if self.mc_samples == 0 {
            return Err(LabError::param("mc_samples", 0.0, "must be >= 1"));
        }
        if self.sde_steps == 0 {
            return Err(LabError::param("sde_steps", 0.0, "must be >= 1"));
        }
        check_positive("horizon", self.horizon)?;
        if self.grid.horizon() > self.horizon * (1.0 + 1e-12) {
            return Err(LabError::Validation(format!(
                "last time slice {} exceeds horizon {}",
                self.grid.horizon(),
                self.horizon
            )));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(LabError::param("gamma", self.gamma, "must lie in (0, 1)"));
        }
        if !(self.blowup_factor >= 1.0) {
            return Err(LabError::param("blowup_factor", self.blowup_factor, "must be >= 1"));
        }
        Ok(())
    }

    pub fn steps_for(&self, t: f64) -> usize {
        ((self.sde_steps as f64 * t / self.horizon - 1e-9).ceil() as usize).max(1)
    }

    pub fn pairs(&self) -> usize {
        self.mc_samples.div_ceil(2)
    }

    /// Escape radius of traced characteristics.
    pub fn blowup(&self) -> f64 {
        self.blowup_factor * self.grid.half_width * (self.grid.dim as f64).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterateStats {
    pub m: usize,
    pub sup_norm: f64,
    pub max_stderr: f64,
    /// Set when some node's standard error exceeds the configured ceiling.
    pub se_warning: bool,
    /// `sup |v^{(m)}|` over the whole grid.
    pub sup_v: f64,
}

/// Iterates `u^{(0..=m)}` and their derived fields.
#[derive(Debug, Clone)]
pub struct SchemeState {
    pub config: IterationConfig,
    pub u0: Arc<VelocityFieldSpec>,
    pub iterates: Vec<GridField>,
    pub stderr: Vec<GridField>,
    /// `v^{(0)} = u^{(0)}`, `v^{(m)} = u^{(m)} − u^{(m−1)}`.
    pub diffs: Vec<GridField>,
    pub gradients: Vec<GridField>,
    pub gradient_stderr: Vec<GridField>,
    /// Central differences of the gradient fields.
    pub hessians: Vec<GridField>,
    pub stats: Vec<IterateStats>,
}

/// Per-node estimates on a subset of grid nodes, all slices.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientEstimate {
    pub nodes: Vec<usize>,
    pub slices: usize,
    pub dim: usize,
    /// `[slice][selected node][d²]`
    pub values: Vec<f64>,
    pub stderr: Vec<f64>,
}

impl GradientEstimate {
    pub fn at(&self, j: usize, k: usize) -> &[f64] {
        let dd = self.dim * self.dim;
        let off = (j * self.nodes.len() + k) * dd;
        &self.values[off..off + dd]
    }

    pub fn se_at(&self, j: usize, k: usize) -> &[f64] {
        let dd = self.dim * self.dim;
        let off = (j * self.nodes.len() + k) * dd;
        &self.stderr[off..off + dd]
    }
}

struct IterateOutput {
    value: GridField,
    value_se: GridField,
    gradient: Option<(GridField, GridField)>,
}

impl SchemeState {
    pub fn new(u0: &VelocityFieldSpec, config: IterationConfig) -> LabResult<Self> {
        config.validate()?;
        u0.validate_invariants()?;
        if u0.dim != config.grid.dim {
            return Err(LabError::Validation(format!(
                "field dimension {} differs from grid dimension {}",
                u0.dim, config.grid.dim
            )));
        }
        Ok(SchemeState {
            config,
            u0: Arc::new(u0.clone()),
            iterates: Vec::new(),
            stderr: Vec::new(),
            diffs: Vec::new(),
            gradients: Vec::new(),
            gradient_stderr: Vec::new(),
            hessians: Vec::new(),
            stats: Vec::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.config.grid.dim
    }

    pub fn latest(&self) -> Option<usize> {
        self.iterates.len().checked_sub(1)
    }

    fn extrapolation(&self) -> Extrapolation {
        match self.config.extrapolation {
            ExtrapolationKind::Envelope => Extrapolation::Envelope(self.u0.clone()),
            ExtrapolationKind::Clamp => Extrapolation::Clamp,
            ExtrapolationKind::Error => Extrapolation::Error,
        }
    }

    fn drift_for(&self, m: usize, want_gradient: bool) -> LabResult<(Option<&GridField>, Option<&GridField>)> {
        if m == 0 {
            return Ok((None, None));
        }
        let drift = self
            .iterates
            .get(m - 1)
            .ok_or_else(|| LabError::Sequencing(format!("iterate {} is not available", m - 1)))?;
        let grad = if want_gradient {
            Some(self.gradients.get(m - 1).ok_or_else(|| {
                LabError::Sequencing(format!("gradient of iterate {} is not available", m - 1))
            })?)
        } else {
            None
        };
        Ok((Some(drift), grad))
    }

    /// Runs the kernel for iterate `m` on the given start points, slice by slice.
    fn run_slices(
        &self,
        m: usize,
        starts: &[f64],
        penalty: Option<&PenaltySpec>,
        want_gradient: bool,
    ) -> LabResult<Vec<McOutput>> {
        let (drift, drift_grad) = self.drift_for(m, want_gradient)?;
        let cfg = &self.config;
        let d = self.dim();
        let n = starts.len() / d;
        cfg.grid
            .slices
            .iter()
            .enumerate()
            .map(|(j, &t)| {
                if t == 0.0 {
                    let mut out = McOutput {
                        value: vec![0.0; n * d],
                        value_se: vec![0.0; n * d],
                        grad: vec![0.0; if want_gradient { n * d * d } else { 0 }],
                        grad_se: vec![0.0; if want_gradient { n * d * d } else { 0 }],
                    };
                    for i in 0..n {
                        let x = &starts[i * d..(i + 1) * d];
                        self.u0.eval(x, &mut out.value[i * d..(i + 1) * d]);
                        if want_gradient {
                            self.u0.gradient(x, &mut out.grad[i * d * d..(i + 1) * d * d]);
                        }
                    }
                    return Ok(out);
                }
                engine::run(&McJob {
                    u0: &self.u0,
                    drift,
                    drift_grad,
                    t,
                    stream_key: j as u64,
                    starts,
                    pairs: cfg.pairs(),
                    steps: cfg.steps_for(t),
                    seed: cfg.seed,
                    noise: cfg.viscous,
                    penalty,
                    want_gradient,
                    blowup: cfg.blowup(),
                })
            })
            .collect()
    }

    fn compute_iterate(&self, m: usize, penalty: Option<&PenaltySpec>, want_gradient: bool) -> LabResult<IterateOutput> {
        let spec = self.config.grid.clone();
        let starts = spec.node_coords();
        let outs = self.run_slices(m, &starts, penalty, want_gradient)?;
        let ex = self.extrapolation();
        let mut value = GridField::zeros(spec.clone(), FieldRole::Value, m, ex.clone());
        let mut value_se = GridField::zeros(spec.clone(), FieldRole::Value, m, ex.clone());
        let mut grads = want_gradient.then(|| {
            (
                GridField::zeros(spec.clone(), FieldRole::Gradient, m, ex.clone()),
                GridField::zeros(spec.clone(), FieldRole::Gradient, m, ex.clone()),
            )
        });
        for (j, out) in outs.into_iter().enumerate() {
            value.slice_mut(j).copy_from_slice(&out.value);
            value_se.slice_mut(j).copy_from_slice(&out.value_se);
            if let Some((g, gse)) = grads.as_mut() {
                g.slice_mut(j).copy_from_slice(&out.grad);
                gse.slice_mut(j).copy_from_slice(&out.grad_se);
            }
        }
        Ok(IterateOutput {
            value,
            value_se,
            gradient: grads,
        })
    }

    /// Computes the next iterate (and its gradient if configured).
    pub fn advance(&mut self) -> LabResult<usize> {
        let m = self.iterates.len();
        let out = self.compute_iterate(m, None, self.config.gradients)?;
        let v = match self.iterates.last() {
            Some(prev) => out.value.difference(prev)?,
            None => out.value.clone(),
        };
        let max_se = out.value_se.values.iter().cloned().fold(0.0, f64::max);
        self.stats.push(IterateStats {
            m,
            sup_norm: out.value.sup_norm(),
            max_stderr: max_se,
            se_warning: self.config.se_ceiling.is_some_and(|c| max_se > c),
            sup_v: v.sup_norm(),
        });
        if let Some((g, gse)) = out.gradient {
            self.hessians.push(fd_gradient(&g)?);
            self.gradients.push(g);
            self.gradient_stderr.push(gse);
        }
        self.iterates.push(out.value);
        self.stderr.push(out.value_se);
        self.diffs.push(v);
        Ok(m)
    }

    pub fn run_to(&mut self, m_max: usize) -> LabResult<()> {
        while self.iterates.len() <= m_max {
            self.advance()?;
        }
        Ok(())
    }

    /// Rebuilds a state from stored iterates (e.g. read back from disk);
    /// differences, hessians and statistics are recomputed.
    pub fn from_parts(
        u0: &VelocityFieldSpec,
        config: IterationConfig,
        values: Vec<(GridField, GridField)>,
        gradients: Option<Vec<(GridField, GridField)>>,
    ) -> LabResult<Self> {
        let mut s = SchemeState::new(u0, config)?;
        let ex = s.extrapolation();
        let check = |f: &GridField, role: FieldRole, m: usize| -> LabResult<()> {
            if f.spec != s.config.grid || f.role != role || f.m_index != m {
                return Err(LabError::Validation(format!(
                    "stored {role:?} field for iterate {m} does not match the configured grid"
                )));
            }
            Ok(())
        };
        if let Some(g) = &gradients {
            if g.len() != values.len() {
                return Err(LabError::Validation("gradient and value iterate counts differ".into()));
            }
        }
        let mut grads = gradients.map(|g| g.into_iter());
        for (m, (mut value, mut se)) in values.into_iter().enumerate() {
            check(&value, FieldRole::Value, m)?;
            check(&se, FieldRole::Value, m)?;
            value.extrapolation = ex.clone();
            se.extrapolation = ex.clone();
            let v = match s.iterates.last() {
                Some(prev) => value.difference(prev)?,
                None => value.clone(),
            };
            let max_se = se.values.iter().cloned().fold(0.0, f64::max);
            s.stats.push(IterateStats {
                m,
                sup_norm: value.sup_norm(),
                max_stderr: max_se,
                se_warning: s.config.se_ceiling.is_some_and(|c| max_se > c),
                sup_v: v.sup_norm(),
            });
            if let Some((mut g, mut gse)) = grads.as_mut().and_then(|it| it.next()) {
                check(&g, FieldRole::Gradient, m)?;
                check(&gse, FieldRole::Gradient, m)?;
                g.extrapolation = ex.clone();
                gse.extrapolation = ex.clone();
                s.hessians.push(fd_gradient(&g)?);
                s.gradients.push(g);
                s.gradient_stderr.push(gse);
            }
            s.iterates.push(value);
            s.stderr.push(se);
            s.diffs.push(v);
        }
        Ok(s)
    }
}

fn check_mode(cfg: &IterationConfig, viscous: bool) -> LabResult<()> {
    if cfg.viscous != viscous {
        return Err(LabError::Precondition(format!(
            "configuration has viscous = {}, this entry point needs {viscous}",
            cfg.viscous
        )));
    }
    Ok(())
}

/// `φ^{(m)}(t,x) = u_0(x^{(m)}(t,x))` for `m = 0..=m_max`.
pub fn run_nonviscous(u0: &VelocityFieldSpec, cfg: &IterationConfig) -> LabResult<SchemeState> {
    check_mode(cfg, false)?;
    let mut s = SchemeState::new(u0, cfg.clone())?;
    s.run_to(cfg.m_max)?;
    Ok(s)
}

/// `u^{(m)}(t,x) = E[u_0(X^{(m)}(t,x))]` for `m = 0..=m_max`.
pub fn run_viscous(u0: &VelocityFieldSpec, cfg: &IterationConfig) -> LabResult<SchemeState> {
    check_mode(cfg, true)?;
    let mut s = SchemeState::new(u0, cfg.clone())?;
    s.run_to(cfg.m_max)?;
    Ok(s)
}

/// Penalized iterate `u^{(m,n)}(t,x) = E[u_0(X_t) exp(−∫_0^t F_n(X_s) ds)]`
/// with `X` driven by `u^{(m−1)}` from `state`. Returns the field and its
/// standard errors.
pub fn run_penalized(state: &SchemeState, m: usize, n: u32, c: f64) -> LabResult<(GridField, GridField)> {
    let spec = PenaltySpec::new(n, c, &state.u0)?;
    let out = state.compute_iterate(m, Some(&spec), false)?;
    Ok((out.value, out.value_se))
}

/// `v^{(m)} = u^{(m)} − u^{(m−1)}` (and `v^{(0)} = u^{(0)}`).
pub fn compute_v(state: &SchemeState, m: usize) -> LabResult<GridField> {
    match m {
        _ if m >= state.iterates.len() => Err(LabError::Sequencing(format!(
            "iterate {m} not computed (have {})",
            state.iterates.len()
        ))),
        0 => Ok(state.iterates[0].clone()),
        _ => state.iterates[m].difference(&state.iterates[m - 1]),
    }
}

/// Gradient Feynman-Kac estimate `∇u^{(m)} = E[G_t ∇u_0(X_t)]` on a node
/// subset (all nodes when `nodes` is `None`). Uses the same noise as the
/// value iterates, so it coincides with the jointly computed gradients.
pub fn gradient_fk(state: &SchemeState, m: usize, nodes: Option<&[usize]>) -> LabResult<GradientEstimate> {
    let spec = &state.config.grid;
    let all: Vec<usize>;
    let nodes = match nodes {
        Some(n) => n,
        None => {
            all = (0..spec.node_count()).collect();
            &all
        }
    };
    if let Some(&bad) = nodes.iter().find(|&&i| i >= spec.node_count()) {
        return Err(LabError::Index {
            index: bad,
            len: spec.node_count(),
        });
    }
    let starts: Vec<f64> = nodes.iter().flat_map(|&i| spec.node(i)).collect();
    let outs = state.run_slices(m, &starts, None, true)?;
    let mut values = Vec::new();
    let mut stderr = Vec::new();
    for o in outs {
        values.extend(o.grad);
        stderr.extend(o.grad_se);
    }
    Ok(GradientEstimate {
        nodes: nodes.to_vec(),
        slices: spec.slices.len(),
        dim: spec.dim,
        values,
        stderr,
    })
}

/// Central differences of a value (or gradient) field along every axis,
/// one-sided on the box faces. Output component `k·C + c` is `∂_k` of input
/// component `c`.
pub fn fd_gradient(field: &GridField) -> LabResult<GridField> {
    let role = match field.role {
        FieldRole::Value => FieldRole::Gradient,
        FieldRole::Gradient => FieldRole::Hessian,
        FieldRole::Hessian => {
            return Err(LabError::Precondition("third derivatives are not tracked".into()))
        }
    };
    let spec = &field.spec;
    let d = spec.dim;
    let c = field.components;
    let h = spec.spacing();
    let n = spec.nodes;
    let mut out = GridField::zeros(spec.clone(), role, field.m_index, field.extrapolation.clone());
    let mut stride = vec![1usize; d];
    for a in (0..d.saturating_sub(1)).rev() {
        stride[a] = stride[a + 1] * n;
    }
    for j in 0..spec.slices.len() {
        for node in 0..spec.node_count() {
            let idx = spec.multi_index(node);
            for (k, &st) in stride.iter().enumerate() {
                let (lo, hi, span) = if idx[k] == 0 {
                    (node, node + st, h)
                } else if idx[k] == n - 1 {
                    (node - st, node, h)
                } else {
                    (node - st, node + st, 2.0 * h)
                };
                for comp in 0..c {
                    let dv = (field.node_value(j, hi)[comp] - field.node_value(j, lo)[comp]) / span;
                    out.node_mut(j, node)[k * c + comp] = dv;
                }
            }
        }
    }
    Ok(out)
}

/// `⟨x⟩_t = |x| + ⟨Ut⟩^{κ/(κ−1)}`.
pub fn bracket_x_t(u0: &VelocityFieldSpec, t: f64, x: f64) -> f64 {
    x.abs() + bracket(u0.u_scale * t).powf(u0.kappa / (u0.kappa - 1.0))
}

/// `T_min(t,x) = (C³ K1 ⟨x⟩_t^{α+2/κ})^{−1}`.
pub fn t_min(u0: &VelocityFieldSpec, c: f64, t: f64, x: f64) -> f64 {
    1.0 / (c.powi(3) * u0.k1 * bracket_x_t(u0, t, x).powf(u0.grad_exponent()))
}

/// `T̃_min(t,x) = (C³ K2^{2/3} ⟨x⟩_t^{α+2/κ})^{−1}`.
pub fn t_min_tilde(u0: &VelocityFieldSpec, c: f64, t: f64, x: f64) -> f64 {
    1.0 / (c.powi(3) * u0.k2.powf(2.0 / 3.0) * bracket_x_t(u0, t, x).powf(u0.grad_exponent()))
}

/// `T_n = (C³ K1 (2^n)^{α+2/κ})^{−1}`.
pub fn t_n(u0: &VelocityFieldSpec, c: f64, n: u32) -> f64 {
    1.0 / (c.powi(3) * u0.k1 * 2f64.powi(n as i32).powf(u0.grad_exponent()))
}

/// Sup of the component norm over nodes/slices with `t > 0` accepted by
/// `keep(t, |x|)`; `None` if no node qualifies.
pub fn restricted_sup<F: Fn(f64, f64) -> bool>(field: &GridField, keep: F) -> Option<f64> {
    let mut best: Option<f64> = None;
    for (j, &t) in field.spec.slices.iter().enumerate() {
        if t == 0.0 {
            continue;
        }
        if let Some((v, _)) = field.sup_norm_where(j, |_, x| keep(t, crate::velocity::norm(x))) {
            best = Some(best.map_or(v, |b: f64| b.max(v)));
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::velocity::{make_prototype, DirectionMap, FieldKind};

    fn linear(slope: f64) -> VelocityFieldSpec {
        VelocityFieldSpec::new(1, 2.0, 1.0, (1.0, 1.0, 1.0), 1.0, 0.0, FieldKind::LinearProfile { slope }).unwrap()
    }

    fn constant(c: f64) -> VelocityFieldSpec {
        VelocityFieldSpec::new(1, 2.0, 1.0, (1.0, 1.0, 1.0), 0.0, 0.0, FieldKind::Constant { value: vec![c] }).unwrap()
    }

    fn cfg(viscous: bool, slices: Vec<f64>, n: usize, steps: usize) -> IterationConfig {
        let horizon = *slices.last().unwrap();
        IterationConfig {
            m_max: 3,
            mc_samples: n,
            sde_steps: steps,
            grid: GridSpec {
                dim: 1,
                half_width: 6.0,
                nodes: 61,
                slices,
            },
            horizon,
            viscous,
            seed: 11,
            gamma: 0.5,
            gradients: false,
            se_ceiling: None,
            extrapolation: ExtrapolationKind::Envelope,
            blowup_factor: 4.0,
        }
    }

    #[test]
    fn constants_are_fixed_points() {
        for viscous in [false, true] {
            let s = if viscous {
                run_viscous(&constant(0.7), &cfg(true, vec![0.0, 0.5, 1.0], 64, 20)).unwrap()
            } else {
                run_nonviscous(&constant(0.7), &cfg(false, vec![0.0, 0.5, 1.0], 1, 20)).unwrap()
            };
            for f in &s.iterates {
                assert!(f.values.iter().all(|v| (v - 0.7).abs() < 1e-12));
            }
            for m in 1..=3 {
                assert!(compute_v(&s, m).unwrap().sup_norm() < 1e-12);
            }
        }
    }

    #[test]
    fn heat_evolution_of_linear_profile_is_exact_with_antithetic_pairs() {
        let s = run_viscous(&linear(1.0), &IterationConfig { m_max: 0, ..cfg(true, vec![0.0, 1.0], 100, 20) }).unwrap();
        for n in 0..61 {
            let x = s.config.grid.node(n)[0];
            assert!((s.iterates[0].node_value(1, n)[0] - x).abs() < 1e-12);
        }
    }

    #[test]
    fn nonviscous_linear_profile_converges_to_exact_solution() {
        let mut c = cfg(false, vec![0.0, 0.125, 0.25, 0.375, 0.5], 1, 64);
        c.m_max = 6;
        let s = run_nonviscous(&linear(1.0), &c).unwrap();
        let last = &s.iterates[6];
        for (j, &t) in c.grid.slices.iter().enumerate() {
            for n in 0..61 {
                let x = c.grid.node(n)[0];
                if x.abs() > 4.0 {
                    continue;
                }
                let exact = x / (1.0 + t);
                assert!((last.node_value(j, n)[0] - exact).abs() <= 0.01 * exact.abs().max(0.1));
            }
        }
    }

    #[test]
    fn sequencing_errors() {
        let s = SchemeState::new(&constant(1.0), cfg(true, vec![0.0, 1.0], 4, 4)).unwrap();
        assert!(matches!(compute_v(&s, 0), Err(LabError::Sequencing(_))));
        assert!(matches!(gradient_fk(&s, 1, None), Err(LabError::Sequencing(_))));
        assert!(matches!(
            run_nonviscous(&constant(1.0), &cfg(true, vec![0.0, 1.0], 4, 4)),
            Err(LabError::Precondition(_))
        ));
    }

    #[test]
    fn gradient_fk_joint_matches_subset() {
        let u0 = make_prototype(1, 1.0, 2.0, DirectionMap::Identity).unwrap();
        let mut c = cfg(true, vec![0.0, 0.25, 0.5], 200, 20);
        c.gradients = true;
        c.m_max = 1;
        let s = run_viscous(&u0, &c).unwrap();
        let est = gradient_fk(&s, 1, Some(&[10, 30, 45])).unwrap();
        for (k, &node) in est.nodes.iter().enumerate() {
            for j in 0..3 {
                assert_eq!(est.at(j, k), s.gradients[1].node_value(j, node));
            }
        }
    }

    #[test]
    fn gradient_of_zero_drift_is_heat_average() {
        // m = 0: G = I, so ∇u^(0) = E[∇u_0(x + B_t)]; for a linear profile
        // that is the slope exactly.
        let mut c = cfg(true, vec![0.0, 1.0], 50, 100);
        c.gradients = true;
        c.m_max = 2;
        let s = run_viscous(&linear(2.0), &c).unwrap();
        assert!(s.gradients[0].values.iter().all(|v| (v - 2.0).abs() < 1e-12));
        // With u^(0) = 2x the gradient transport is G' = −2G; Heun with
        // step h multiplies G by 1 − 2h + 2h² per step.
        let h = 0.01f64;
        let heun = 2.0 * (1.0 - 2.0 * h + 2.0 * h * h).powi(100);
        assert!((heun / (2.0 * (-2.0f64).exp()) - 1.0).abs() < 2e-4);
        for n in 0..61 {
            let g = s.gradients[1].node_value(1, n)[0];
            assert!((g - heun).abs() < 1e-12, "{g}");
        }
    }

    #[test]
    fn penalty_far_away_is_inert() {
        let u0 = make_prototype(1, 1.0, 2.0, DirectionMap::Identity).unwrap();
        let c = IterationConfig {
            m_max: 1,
            ..cfg(true, vec![0.0, 0.5], 100, 10)
        };
        let s = run_viscous(&u0, &c).unwrap();
        let (p, _) = run_penalized(&s, 1, 10, 2.0).unwrap();
        assert_eq!(p.values, s.iterates[1].values);
    }

    #[test]
    fn fd_gradient_of_linear_field() {
        let s = run_nonviscous(&linear(3.0), &IterationConfig { m_max: 0, ..cfg(false, vec![0.0, 1.0], 1, 1) }).unwrap();
        let g = fd_gradient(&s.iterates[0]).unwrap();
        assert!(g.values.iter().all(|v| (v - 3.0).abs() < 1e-12));
    }

    #[test]
    fn jobs_do_not_change_results() {
        let u0 = make_prototype(1, 1.0, 2.0, DirectionMap::Identity).unwrap();
        let c = IterationConfig {
            m_max: 1,
            ..cfg(true, vec![0.0, 0.5], 300, 10)
        };
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let three = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let a = one.install(|| run_viscous(&u0, &c).unwrap());
        let b = three.install(|| run_viscous(&u0, &c).unwrap());
        assert_eq!(a.iterates, b.iterates);
        assert_eq!(a.stderr, b.stderr);
    }

    #[test]
    fn t_min_values() {
        let u0 = linear(1.0);
        assert!((t_min(&u0, 2.0, 0.0, 0.0) - 1.0 / 8.0).abs() < 1e-15);
        assert!((t_n(&u0, 2.0, 0) - 1.0 / 8.0).abs() < 1e-15);
    }
}
