//! Initial velocity fields `u_0`, their a priori bound checks, and the
//! penalty functions `F_n` used by the dyadic penalized scheme.
//!
//! Gradients are stored as `J[i * d + j] = ∂_i u_j`; hessians as
//! `H[(k * d + i) * d + j] = ∂_k ∂_i u_j`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_finite, LabError, LabResult};
use crate::scalar_flows::fpow;
use crate::zones::ZoneLayout;

/// Orthogonal map of the unit sphere used by prototype fields.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum DirectionMap {
    #[default]
    Identity,
    Negate,
    /// Planar rotation by `angle` radians (d = 2 only).
    Rotation { angle: f64 },
    /// Row-major `d × d` matrix; must map unit vectors to unit vectors.
    Matrix { entries: Vec<f64> },
}

impl DirectionMap {
    fn matrix(&self, d: usize) -> LabResult<Vec<f64>> {
        let mut q = vec![0.0; d * d];
        match self {
            DirectionMap::Identity => (0..d).for_each(|i| q[i * d + i] = 1.0),
            DirectionMap::Negate => (0..d).for_each(|i| q[i * d + i] = -1.0),
            DirectionMap::Rotation { angle } => {
                if d != 2 {
                    return Err(LabError::Validation(format!(
                        "rotation direction map needs d = 2, got d = {d}"
                    )));
                }
                let (s, c) = angle.sin_cos();
                q.copy_from_slice(&[c, -s, s, c]);
            }
            DirectionMap::Matrix { entries } => {
                if entries.len() != d * d {
                    return Err(LabError::Validation(format!(
                        "direction matrix has {} entries, expected {}",
                        entries.len(),
                        d * d
                    )));
                }
                q.copy_from_slice(entries);
            }
        }
        Ok(q)
    }
}

/// Sampled check that `q` maps unit vectors to unit vectors.
fn validate_direction_matrix(q: &[f64], d: usize) -> LabResult<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x005e_edd1);
    let mut v = vec![0.0; d];
    for _ in 0..256 {
        random_unit(&mut rng, &mut v);
        let norm: f64 = (0..d)
            .map(|j| {
                let w: f64 = (0..d).map(|k| q[j * d + k] * v[k]).sum();
                w * w
            })
            .sum::<f64>()
            .sqrt();
        if (norm - 1.0).abs() > 1e-9 {
            return Err(LabError::Validation(format!(
                "direction map sends a unit vector to norm {norm}"
            )));
        }
    }
    Ok(())
}

fn random_unit<R: Rng>(rng: &mut R, v: &mut [f64]) {
    loop {
        let mut n2 = 0.0;
        for c in v.iter_mut() {
            *c = rng.sample(StandardNormal);
            n2 += *c * *c;
        }
        if n2 > 1e-20 {
            let n = n2.sqrt();
            v.iter_mut().for_each(|c| *c /= n);
            return;
        }
    }
}

/// C² quintic blend `s(r) = a r³ + b r⁴ + c r⁵` on `[0, 1]` matching `r^{1/κ}`
/// and its first two derivatives at `r = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct InnerBlend {
    a: f64,
    b: f64,
    c: f64,
}

impl InnerBlend {
    fn new(kappa: f64) -> Self {
        let q = 1.0 / kappa;
        let w = q * (q - 1.0);
        let c = (w - 6.0 * q + 12.0) / 2.0;
        let b = 7.0 * q - 15.0 - w;
        let a = 1.0 - b - c;
        InnerBlend { a, b, c }
    }
}

/// Radial profile helpers for `u(x) = g(r) Q x`.
#[derive(Debug, Clone, Copy)]
struct Radial {
    g: f64,
    /// `g'(r) / r`
    h: f64,
    /// `h'(r) / r`
    hp_over_r: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum FieldKind {
    /// `F(x/|x|) U s(|x|)` with `s(r) = r^{1/κ}` outside the unit ball.
    Prototype {
        #[serde(default)]
        direction: DirectionMap,
    },
    /// A prototype plus mollified radial bumps inside the dangerous zones.
    AnnularPerturbed {
        #[serde(default)]
        base_direction: DirectionMap,
        layout: ZoneLayout,
        amplitudes: Vec<f64>,
        /// Fixed unit vector the bumps point along.
        bump_direction: Vec<f64>,
    },
    /// `u_0(x) = slope · x`.
    LinearProfile { slope: f64 },
    Constant { value: Vec<f64> },
    /// Multilinear table on a box; gradients by central differences.
    TabulatedGrid {
        lower: Vec<f64>,
        upper: Vec<f64>,
        shape: Vec<usize>,
        values: Vec<f64>,
    },
    /// `-a tanh(a x / (2η))` along the first axis (d = 1 stationary shock).
    Shock { amplitude: f64, eta: f64 },
    /// `U (x_min + |x|)^{1/κ} e` with a fixed unit vector `e`.
    Comparison { x_min: f64, direction: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VelocityFieldSpec {
    pub dim: usize,
    pub kappa: f64,
    #[serde(rename = "U")]
    pub u_scale: f64,
    #[serde(rename = "K0")]
    pub k0: f64,
    #[serde(rename = "K1")]
    pub k1: f64,
    #[serde(rename = "K2")]
    pub k2: f64,
    pub alpha: f64,
    pub beta: f64,
    pub kind: FieldKind,
    #[serde(skip)]
    cache: Option<FieldCache>,
}

#[derive(Debug, Clone, PartialEq)]
struct FieldCache {
    q: Vec<f64>,
    blend: InnerBlend,
}

impl VelocityFieldSpec {
    /// Builds a spec and validates the growth-constant relations
    /// `K0 ≤ U^{β/2+1}`, `K0 ≤ √K1`, `U ≤ K1 ≤ K2^{2/3}`.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        dim: usize,
        kappa: f64,
        u_scale: f64,
        (k0, k1, k2): (f64, f64, f64),
        alpha: f64,
        beta: f64,
        kind: FieldKind,
    ) -> LabResult<Self> {
        let mut spec = VelocityFieldSpec {
            dim,
            kappa,
            u_scale,
            k0,
            k1,
            k2,
            alpha,
            beta,
            kind,
            cache: None,
        };
        spec.prepare()?;
        Ok(spec)
    }

    /// Re-derives cached data (after deserialization) and validates.
    pub fn prepare(&mut self) -> LabResult<()> {
        self.validate_invariants()?;
        let q = match &self.kind {
            FieldKind::Prototype { direction }
            | FieldKind::AnnularPerturbed {
                base_direction: direction,
                ..
            } => {
                let q = direction.matrix(self.dim)?;
                validate_direction_matrix(&q, self.dim)?;
                q
            }
            _ => Vec::new(),
        };
        self.validate_kind()?;
        self.cache = Some(FieldCache {
            q,
            blend: InnerBlend::new(self.kappa),
        });
        Ok(())
    }

    pub fn validate_invariants(&self) -> LabResult<()> {
        if self.dim == 0 {
            return Err(LabError::param("d", 0.0, "dimension must be >= 1"));
        }
        for (name, v) in [
            ("kappa", self.kappa),
            ("U", self.u_scale),
            ("K0", self.k0),
            ("K1", self.k1),
            ("K2", self.k2),
            ("alpha", self.alpha),
            ("beta", self.beta),
        ] {
            check_finite(name, v)?;
        }
        if self.kappa <= 1.0 {
            return Err(LabError::param("kappa", self.kappa, "must be > 1"));
        }
        if self.u_scale < 1.0 {
            return Err(LabError::param("U", self.u_scale, "must be >= 1"));
        }
        if self.alpha < 0.0 || self.beta < 0.0 {
            return Err(LabError::Validation("alpha and beta must be >= 0".into()));
        }
        let tol = 1e-12;
        let k0_cap = self.u_scale.powf(self.beta / 2.0 + 1.0);
        if self.k0 > k0_cap * (1.0 + tol) {
            return Err(LabError::Validation(format!(
                "K0 = {} exceeds U^(beta/2+1) = {k0_cap}",
                self.k0
            )));
        }
        if self.k0 > self.k1.sqrt() * (1.0 + tol) {
            return Err(LabError::Validation(format!(
                "K0 = {} exceeds sqrt(K1) = {}",
                self.k0,
                self.k1.sqrt()
            )));
        }
        if self.u_scale > self.k1 * (1.0 + tol) {
            return Err(LabError::Validation(format!(
                "U = {} exceeds K1 = {}",
                self.u_scale, self.k1
            )));
        }
        if self.k1 > self.k2.powf(2.0 / 3.0) * (1.0 + tol) {
            return Err(LabError::Validation(format!(
                "K1 = {} exceeds K2^(2/3) = {}",
                self.k1,
                self.k2.powf(2.0 / 3.0)
            )));
        }
        Ok(())
    }

    fn validate_kind(&self) -> LabResult<()> {
        let d = self.dim;
        match &self.kind {
            FieldKind::Constant { value } => {
                if value.len() != d {
                    return Err(LabError::Validation(format!(
                        "constant field has {} components, expected {d}",
                        value.len()
                    )));
                }
            }
            FieldKind::Comparison { x_min, direction } => {
                check_unit(direction, d)?;
                if !(*x_min >= 0.0) {
                    return Err(LabError::param("x_min", *x_min, "must be >= 0"));
                }
            }
            FieldKind::AnnularPerturbed {
                layout,
                amplitudes,
                bump_direction,
                ..
            } => {
                check_unit(bump_direction, d)?;
                if amplitudes.len() > layout.dangerous_count() {
                    return Err(LabError::Validation(format!(
                        "{} amplitudes for {} dangerous zones",
                        amplitudes.len(),
                        layout.dangerous_count()
                    )));
                }
                for (i, &amp) in amplitudes.iter().enumerate() {
                    check_finite("amplitude", amp)?;
                    let cap = self.annulus_cap(layout, i + 1);
                    if amp.abs() > cap {
                        return Err(LabError::AmplitudeCap {
                            zone: i + 1,
                            amplitude: amp,
                            cap,
                        });
                    }
                }
            }
            FieldKind::TabulatedGrid {
                lower,
                upper,
                shape,
                values,
            } => {
                if lower.len() != d || upper.len() != d || shape.len() != d {
                    return Err(LabError::Validation("tabulated grid dims mismatch".into()));
                }
                if shape.iter().any(|&n| n < 2) {
                    return Err(LabError::Validation("tabulated grid needs >= 2 nodes per axis".into()));
                }
                let count: usize = shape.iter().product();
                if values.len() != count * d {
                    return Err(LabError::Validation(format!(
                        "tabulated grid has {} values, expected {}",
                        values.len(),
                        count * d
                    )));
                }
            }
            FieldKind::Shock { eta, .. } => {
                if d != 1 {
                    return Err(LabError::Validation("shock profile is one-dimensional".into()));
                }
                if !(*eta > 0.0) {
                    return Err(LabError::param("eta", *eta, "must be > 0"));
                }
            }
            FieldKind::Prototype { .. } | FieldKind::LinearProfile { .. } => {}
        }
        Ok(())
    }

    /// Largest admissible bump amplitude in dangerous zone `i` (1-based):
    /// `K0 (1 + R_{2i})^{α/2 + 1/κ}`.
    pub fn annulus_cap(&self, layout: &ZoneLayout, i: usize) -> f64 {
        let outer = layout.dangerous(i).map(|(_, b)| b).unwrap_or(0.0);
        self.k0 * (1.0 + outer).powf(self.u_exponent())
    }

    /// `α/2 + 1/κ`
    pub fn u_exponent(&self) -> f64 {
        self.alpha / 2.0 + 1.0 / self.kappa
    }

    /// `α + 2/κ`
    pub fn grad_exponent(&self) -> f64 {
        self.alpha + 2.0 / self.kappa
    }

    /// `(3/2)(α/2 + 1/κ)`
    pub fn hess_exponent(&self) -> f64 {
        1.5 * self.u_exponent()
    }

    /// A priori magnitude cap `K0 (1 + |x|)^{α/2+1/κ}`.
    pub fn apriori_cap(&self, r: f64) -> f64 {
        self.k0 * (1.0 + r).powf(self.u_exponent())
    }

    fn cache(&self) -> &FieldCache {
        self.cache
            .as_ref()
            .expect("VelocityFieldSpec used before prepare()")
    }

    fn radial(&self, r: f64) -> Radial {
        let u = self.u_scale;
        let q = 1.0 / self.kappa;
        if r >= 1.0 {
            Radial {
                g: u * r.powf(q - 1.0),
                h: u * (q - 1.0) * r.powf(q - 3.0),
                hp_over_r: u * (q - 1.0) * (q - 3.0) * r.powf(q - 5.0),
            }
        } else {
            let InnerBlend { a, b, c } = self.cache().blend;
            let hp = u * (3.0 * b + 8.0 * c * r);
            Radial {
                g: u * r * r * (a + r * (b + c * r)),
                h: u * (2.0 * a + r * (3.0 * b + 4.0 * c * r)),
                hp_over_r: if r > 0.0 { hp / r } else { 0.0 },
            }
        }
    }

    pub fn eval(&self, x: &[f64], out: &mut [f64]) {
        let d = self.dim;
        match &self.kind {
            FieldKind::Prototype { .. } => self.prototype_eval(x, out),
            FieldKind::AnnularPerturbed { .. } => {
                self.annular_eval(x, out);
            }
            FieldKind::LinearProfile { slope } => {
                for j in 0..d {
                    out[j] = slope * x[j];
                }
            }
            FieldKind::Constant { value } => out[..d].copy_from_slice(value),
            FieldKind::TabulatedGrid { .. } => self.table_eval(x, out),
            FieldKind::Shock { amplitude, eta } => {
                out[0] = -amplitude * (amplitude * x[0] / (2.0 * eta)).tanh();
            }
            FieldKind::Comparison { x_min, direction } => {
                let mag = self.u_scale * fpow(x_min + norm(x), 1.0 / self.kappa);
                for j in 0..d {
                    out[j] = mag * direction[j];
                }
            }
        }
    }

    /// Convenience scalar evaluation for `d = 1`.
    pub fn eval1(&self, x: f64) -> f64 {
        let mut out = [0.0];
        self.eval(&[x], &mut out);
        out[0]
    }

    pub fn gradient(&self, x: &[f64], out: &mut [f64]) {
        let d = self.dim;
        match &self.kind {
            FieldKind::Prototype { .. } => self.prototype_gradient(x, out),
            FieldKind::AnnularPerturbed { .. } => {
                if !self.annular_gradient(x, out) {
                    self.fd_gradient(x, out);
                }
            }
            FieldKind::LinearProfile { slope } => {
                out[..d * d].iter_mut().for_each(|v| *v = 0.0);
                for i in 0..d {
                    out[i * d + i] = *slope;
                }
            }
            FieldKind::Constant { .. } => out[..d * d].iter_mut().for_each(|v| *v = 0.0),
            FieldKind::TabulatedGrid { .. } => self.fd_gradient(x, out),
            FieldKind::Shock { amplitude, eta } => {
                let k = amplitude / (2.0 * eta);
                let sech = 1.0 / (k * x[0]).cosh();
                out[0] = -amplitude * k * sech * sech;
            }
            FieldKind::Comparison { x_min, direction } => {
                let r = norm(x);
                let q = 1.0 / self.kappa;
                let dmag = if r > 0.0 {
                    self.u_scale * q * fpow(x_min + r, q - 1.0) / r
                } else {
                    0.0
                };
                for i in 0..d {
                    for j in 0..d {
                        out[i * d + j] = dmag * x[i] * direction[j];
                    }
                }
            }
        }
    }

    pub fn gradient1(&self, x: f64) -> f64 {
        let mut out = [0.0];
        self.gradient(&[x], &mut out);
        out[0]
    }

    pub fn hessian(&self, x: &[f64], out: &mut [f64]) {
        let d = self.dim;
        match &self.kind {
            FieldKind::Prototype { .. } => self.prototype_hessian(x, out),
            FieldKind::LinearProfile { .. } | FieldKind::Constant { .. } => {
                out[..d * d * d].iter_mut().for_each(|v| *v = 0.0)
            }
            FieldKind::Shock { amplitude, eta } => {
                let k = amplitude / (2.0 * eta);
                let th = (k * x[0]).tanh();
                let sech2 = 1.0 - th * th;
                out[0] = 2.0 * amplitude * k * k * sech2 * th;
            }
            _ => self.fd_hessian(x, out),
        }
    }

    fn prototype_eval(&self, x: &[f64], out: &mut [f64]) {
        let d = self.dim;
        let q = &self.cache().q;
        let g = self.radial(norm(x)).g;
        for j in 0..d {
            let qx: f64 = (0..d).map(|k| q[j * d + k] * x[k]).sum();
            out[j] = g * qx;
        }
    }

    fn prototype_gradient(&self, x: &[f64], out: &mut [f64]) {
        let d = self.dim;
        let q = &self.cache().q;
        let rad = self.radial(norm(x));
        let qx: Vec<f64> = (0..d)
            .map(|j| (0..d).map(|k| q[j * d + k] * x[k]).sum())
            .collect();
        for i in 0..d {
            for j in 0..d {
                out[i * d + j] = rad.h * x[i] * qx[j] + rad.g * q[j * d + i];
            }
        }
    }

    fn prototype_hessian(&self, x: &[f64], out: &mut [f64]) {
        let d = self.dim;
        let q = &self.cache().q;
        let rad = self.radial(norm(x));
        let qx: Vec<f64> = (0..d)
            .map(|j| (0..d).map(|k| q[j * d + k] * x[k]).sum())
            .collect();
        for k in 0..d {
            for i in 0..d {
                for j in 0..d {
                    let mut v = rad.hp_over_r * x[k] * x[i] * qx[j]
                        + rad.h * (x[i] * q[j * d + k] + x[k] * q[j * d + i]);
                    if i == k {
                        v += rad.h * qx[j];
                    }
                    out[(k * d + i) * d + j] = v;
                }
            }
        }
    }

    /// Returns `(zone, bump value, bump derivative)` when `r` lies strictly
    /// inside a nonempty dangerous zone with a nonzero amplitude.
    fn bump_at(&self, r: f64) -> Option<(f64, f64)> {
        let FieldKind::AnnularPerturbed {
            layout, amplitudes, ..
        } = &self.kind
        else {
            return None;
        };
        let (i, (a, b)) = layout.dangerous_containing(r)?;
        let amp = *amplitudes.get(i - 1)?;
        if amp == 0.0 {
            return None;
        }
        let z = (2.0 * r - a - b) / (b - a);
        let one_minus = 1.0 - z * z;
        if one_minus <= 0.0 {
            return None;
        }
        let bump = (1.0 - 1.0 / one_minus).exp();
        let dbump = bump * (-2.0 * z / (one_minus * one_minus)) * (2.0 / (b - a));
        Some((amp * bump, amp * dbump))
    }

    /// Returns whether the magnitude clip was active.
    fn annular_eval(&self, x: &[f64], out: &mut [f64]) -> bool {
        self.prototype_eval(x, out);
        let r = norm(x);
        let Some((bump, _)) = self.bump_at(r) else {
            return false;
        };
        let FieldKind::AnnularPerturbed { bump_direction, .. } = &self.kind else {
            unreachable!()
        };
        for (o, e) in out.iter_mut().zip(bump_direction) {
            *o += bump * e;
        }
        let cap = self.apriori_cap(r);
        let mag = norm(&out[..self.dim]);
        if mag > cap {
            let scale = cap / mag;
            out[..self.dim].iter_mut().for_each(|v| *v *= scale);
            return true;
        }
        false
    }

    /// Analytic gradient unless the clip is active; returns false in that case.
    fn annular_gradient(&self, x: &[f64], out: &mut [f64]) -> bool {
        let d = self.dim;
        let mut tmp = vec![0.0; d];
        if self.annular_eval(x, &mut tmp) {
            return false;
        }
        self.prototype_gradient(x, out);
        let r = norm(x);
        if let Some((_, dbump)) = self.bump_at(r) {
            let FieldKind::AnnularPerturbed { bump_direction, .. } = &self.kind else {
                unreachable!()
            };
            if r > 0.0 {
                for i in 0..d {
                    for j in 0..d {
                        out[i * d + j] += dbump * x[i] / r * bump_direction[j];
                    }
                }
            }
        }
        true
    }

    fn table_eval(&self, x: &[f64], out: &mut [f64]) {
        let FieldKind::TabulatedGrid {
            lower,
            upper,
            shape,
            values,
        } = &self.kind
        else {
            unreachable!()
        };
        let d = self.dim;
        let mut base = vec![0usize; d];
        let mut frac = vec![0.0; d];
        for a in 0..d {
            let h = (upper[a] - lower[a]) / (shape[a] - 1) as f64;
            let pos = ((x[a] - lower[a]) / h).clamp(0.0, (shape[a] - 1) as f64);
            let i = (pos.floor() as usize).min(shape[a] - 2);
            base[a] = i;
            frac[a] = pos - i as f64;
        }
        out[..d].iter_mut().for_each(|v| *v = 0.0);
        for corner in 0..(1usize << d) {
            let mut w = 1.0;
            let mut flat = 0usize;
            for a in 0..d {
                let bit = (corner >> a) & 1;
                w *= if bit == 1 { frac[a] } else { 1.0 - frac[a] };
                flat = flat * shape[a] + base[a] + bit;
            }
            if w == 0.0 {
                continue;
            }
            for j in 0..d {
                out[j] += w * values[flat * d + j];
            }
        }
    }

    fn fd_step(x: &[f64]) -> f64 {
        1e-4 * (1.0 + norm(x))
    }

    fn fd_gradient(&self, x: &[f64], out: &mut [f64]) {
        let d = self.dim;
        let h = Self::fd_step(x);
        let mut xp = x.to_vec();
        let mut up = vec![0.0; d];
        let mut um = vec![0.0; d];
        for i in 0..d {
            xp[i] = x[i] + h;
            self.eval(&xp, &mut up);
            xp[i] = x[i] - h;
            self.eval(&xp, &mut um);
            xp[i] = x[i];
            for j in 0..d {
                out[i * d + j] = (up[j] - um[j]) / (2.0 * h);
            }
        }
    }

    fn fd_hessian(&self, x: &[f64], out: &mut [f64]) {
        let d = self.dim;
        let h = Self::fd_step(x);
        let mut xp = x.to_vec();
        let mut gp = vec![0.0; d * d];
        let mut gm = vec![0.0; d * d];
        for k in 0..d {
            xp[k] = x[k] + h;
            self.gradient(&xp, &mut gp);
            xp[k] = x[k] - h;
            self.gradient(&xp, &mut gm);
            xp[k] = x[k];
            for ij in 0..d * d {
                out[k * d * d + ij] = (gp[ij] - gm[ij]) / (2.0 * h);
            }
        }
    }
}

fn check_unit(v: &[f64], d: usize) -> LabResult<()> {
    if v.len() != d {
        return Err(LabError::Validation(format!(
            "direction has {} components, expected {d}",
            v.len()
        )));
    }
    if (norm(v) - 1.0).abs() > 1e-9 {
        return Err(LabError::Validation(format!(
            "direction must be a unit vector (norm {})",
            norm(v)
        )));
    }
    Ok(())
}

#[inline]
pub(crate) fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Matrix (Frobenius) norm, used for gradient and hessian magnitudes.
#[inline]
pub(crate) fn mat_norm(m: &[f64]) -> f64 {
    norm(m)
}

/// Prototype field with growth constants fitted so the a priori checks pass.
pub fn make_prototype(
    d: usize,
    u_scale: f64,
    kappa: f64,
    direction: DirectionMap,
) -> LabResult<VelocityFieldSpec> {
    // Provisional constants large enough to pass the invariant gate; the
    // fitted values replace them below.
    let provisional = (u_scale, u_scale * u_scale, u_scale.powi(3));
    let mut spec = VelocityFieldSpec::new(
        d,
        kappa,
        u_scale,
        provisional,
        0.0,
        0.0,
        FieldKind::Prototype { direction },
    )?;
    let fitted = fit_constants(&spec, 4000, 200.0);
    spec.k0 = u_scale;
    spec.k1 = (fitted.1 * 1.01).max(u_scale).max(spec.k0 * spec.k0);
    spec.k2 = (fitted.2 * 1.01).max(spec.k1.powf(1.5));
    spec.prepare()?;
    Ok(spec)
}

/// Annular perturbation of a prototype `base`.
pub fn make_annular(
    base: &VelocityFieldSpec,
    layout: ZoneLayout,
    amplitudes: Vec<f64>,
    bump_direction: Vec<f64>,
) -> LabResult<VelocityFieldSpec> {
    let FieldKind::Prototype { direction } = &base.kind else {
        return Err(LabError::Validation("annular fields perturb a prototype base".into()));
    };
    layout.validate()?.into_result()?;
    VelocityFieldSpec::new(
        base.dim,
        base.kappa,
        base.u_scale,
        (base.k0, base.k1, base.k2),
        base.alpha,
        base.beta,
        FieldKind::AnnularPerturbed {
            base_direction: direction.clone(),
            layout,
            amplitudes,
            bump_direction,
        },
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupRatioReport {
    pub sup_ratio: f64,
    pub worst_point: Vec<f64>,
    pub bound: f64,
    pub pass: bool,
}

/// Deterministic sample points in the ball of radius `radius_max`
/// (uniform in radius, uniform in direction).
pub fn sample_ball(d: usize, count: usize, radius_max: f64, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v = vec![0.0; d];
    (0..count)
        .map(|_| {
            random_unit(&mut rng, &mut v);
            let r: f64 = rng.random::<f64>() * radius_max;
            v.iter().map(|c| c * r).collect()
        })
        .collect()
}

fn sup_ratio<F: FnMut(&[f64]) -> (f64, f64)>(points: &[Vec<f64>], mut f: F) -> (f64, Vec<f64>) {
    let mut worst = (0.0, points.first().cloned().unwrap_or_default());
    for p in points {
        let (num, den) = f(p);
        let ratio = num / den;
        if ratio > worst.0 {
            worst = (ratio, p.clone());
        }
    }
    worst
}

/// Sampled `sup |u_0(x)| / (1 + |x|)^{1/κ}` against `U`.
pub fn check_hyp1(field: &VelocityFieldSpec, sample_count: usize, radius_max: f64) -> SupRatioReport {
    let d = field.dim;
    let points = sample_ball(d, sample_count.max(1), radius_max, 0x4879_7031);
    let mut u = vec![0.0; d];
    let (sup, worst) = sup_ratio(&points, |x| {
        field.eval(x, &mut u);
        (norm(&u), (1.0 + norm(x)).powf(1.0 / field.kappa))
    });
    SupRatioReport {
        sup_ratio: sup,
        worst_point: worst,
        bound: field.u_scale,
        pass: sup <= field.u_scale,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AprioriReport {
    pub value: SupRatioReport,
    pub gradient: SupRatioReport,
    pub hessian: SupRatioReport,
}

impl AprioriReport {
    pub fn pass(&self) -> bool {
        self.value.pass && self.gradient.pass && self.hessian.pass
    }
}

/// Raw sampled suprema of `|u_0|`, `|∇u_0|`, `|∇²u_0|` divided by their
/// polynomial weights, i.e. the smallest admissible `(K0, K1, K2)`.
pub fn fit_constants(field: &VelocityFieldSpec, sample_count: usize, radius_max: f64) -> (f64, f64, f64) {
    let r = apriori_ratios(field, sample_count, radius_max);
    (r.0 .0, r.1 .0, r.2 .0)
}

type Ratio = (f64, Vec<f64>);

fn apriori_ratios(field: &VelocityFieldSpec, sample_count: usize, radius_max: f64) -> (Ratio, Ratio, Ratio) {
    let d = field.dim;
    let points = sample_ball(d, sample_count.max(1), radius_max, 0x4150_5249);
    let mut u = vec![0.0; d];
    let mut g = vec![0.0; d * d];
    let mut h = vec![0.0; d * d * d];
    let value = sup_ratio(&points, |x| {
        field.eval(x, &mut u);
        (norm(&u), (1.0 + norm(x)).powf(field.u_exponent()))
    });
    let gradient = sup_ratio(&points, |x| {
        field.gradient(x, &mut g);
        (mat_norm(&g), (1.0 + norm(x)).powf(field.grad_exponent()))
    });
    let hessian = sup_ratio(&points, |x| {
        field.hessian(x, &mut h);
        (mat_norm(&h), (1.0 + norm(x)).powf(field.hess_exponent()))
    });
    (value, gradient, hessian)
}

/// Sampled checks of the three a priori bounds against the field's own `K0, K1, K2`.
/// The constant relations are gated first.
pub fn check_apriori(field: &VelocityFieldSpec, sample_count: usize, radius_max: f64) -> LabResult<AprioriReport> {
    field.validate_invariants()?;
    let (v, g, h) = apriori_ratios(field, sample_count, radius_max);
    let mk = |(sup, worst): Ratio, bound: f64| SupRatioReport {
        sup_ratio: sup,
        worst_point: worst,
        bound,
        pass: sup <= bound,
    };
    Ok(AprioriReport {
        value: mk(v, field.k0),
        gradient: mk(g, field.k1),
        hessian: mk(h, field.k2),
    })
}

/// Quintic smoothstep: 0 below 1, 1 above 2, C² at both ends.
pub fn smoothstep(r: f64) -> f64 {
    if r <= 1.0 {
        0.0
    } else if r >= 2.0 {
        1.0
    } else {
        let z = r - 1.0;
        z * z * z * (10.0 + z * (-15.0 + 6.0 * z))
    }
}

fn smoothstep_derivative(r: f64) -> f64 {
    if r <= 1.0 || r >= 2.0 {
        0.0
    } else {
        let z = r - 1.0;
        30.0 * z * z * (1.0 - z) * (1.0 - z)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltySpec {
    pub n: u32,
    #[serde(rename = "C")]
    pub c: f64,
    #[serde(rename = "K1")]
    pub k1: f64,
    pub alpha: f64,
    pub kappa: f64,
}

impl PenaltySpec {
    pub fn new(n: u32, c: f64, field: &VelocityFieldSpec) -> LabResult<Self> {
        if !(c > 1.0) {
            return Err(LabError::param("C", c, "must be > 1"));
        }
        Ok(PenaltySpec {
            n,
            c,
            k1: field.k1,
            alpha: field.alpha,
            kappa: field.kappa,
        })
    }

    fn exponent(&self) -> f64 {
        self.alpha / 2.0 + 1.0 / self.kappa
    }

    fn prefactor(&self) -> f64 {
        2.0 * self.c * self.c * self.k1
    }

    pub fn radius(&self) -> f64 {
        2f64.powi(self.n as i32)
    }

    /// `F_n(x) = 2 C² K1 (2(1+|x|²))^{α/2+1/κ} χ(2^{-n} |x|)`.
    pub fn eval_radius(&self, r: f64) -> f64 {
        let chi = smoothstep(r / self.radius());
        if chi == 0.0 {
            return 0.0;
        }
        self.prefactor() * (2.0 * (1.0 + r * r)).powf(self.exponent()) * chi
    }

    /// Returns `F_n(x)` and writes `∇F_n(x)` into `grad`.
    pub fn eval(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let r = norm(x);
        let scale = self.radius();
        let chi = smoothstep(r / scale);
        if chi == 0.0 {
            grad.iter_mut().for_each(|g| *g = 0.0);
            return 0.0;
        }
        let e = self.exponent();
        let base = 2.0 * (1.0 + r * r);
        let w = base.powf(e);
        let dw_over_x = e * base.powf(e - 1.0) * 4.0; // ∂w/∂x_i = dw_over_x * x_i
        let dchi_over_x = if r > 0.0 {
            smoothstep_derivative(r / scale) / (scale * r)
        } else {
            0.0
        };
        let pre = self.prefactor();
        for (g, xi) in grad.iter_mut().zip(x) {
            *g = pre * (dw_over_x * chi + w * dchi_over_x) * xi;
        }
        pre * w * chi
    }
}

/// `F_n` at `x` (value only).
pub fn penalty_eval(spec: &PenaltySpec, x: &[f64]) -> f64 {
    spec.eval_radius(norm(x))
}
