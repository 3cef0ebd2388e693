//! Space-time sampled fields: the carriers of the Picard iterates.

use std::io::{Read, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::characteristics::Drift;
use crate::error::{LabError, LabResult};
use crate::velocity::{norm, VelocityFieldSpec};

/// Uniform tensor grid on `[−L, L]^d` with explicit time slices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub dim: usize,
    pub half_width: f64,
    pub nodes: usize,
    pub slices: Vec<f64>,
}

impl GridSpec {
    pub fn validate(&self) -> LabResult<()> {
        if !(1..=3).contains(&self.dim) {
            return Err(LabError::param("d", self.dim as f64, "grids support d in 1..=3"));
        }
        if !(self.half_width > 0.0 && self.half_width.is_finite()) {
            return Err(LabError::param("half_width", self.half_width, "must be finite and > 0"));
        }
        if self.nodes < 2 {
            return Err(LabError::param("nodes", self.nodes as f64, "must be >= 2"));
        }
        if self.slices.first() != Some(&0.0) {
            return Err(LabError::Validation("time slices must start at 0".into()));
        }
        if self.slices.windows(2).any(|w| !(w[1] > w[0])) || self.slices.iter().any(|t| !t.is_finite()) {
            return Err(LabError::Validation("time slices must be finite and strictly increasing".into()));
        }
        Ok(())
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.half_width / (self.nodes - 1) as f64
    }

    pub fn node_count(&self) -> usize {
        self.nodes.pow(self.dim as u32)
    }

    pub fn axis(&self, i: usize) -> f64 {
        -self.half_width + i as f64 * self.spacing()
    }

    /// Row-major multi-index of a flat node index (axis 0 slowest).
    pub fn multi_index(&self, mut flat: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dim];
        for a in (0..self.dim).rev() {
            idx[a] = flat % self.nodes;
            flat /= self.nodes;
        }
        idx
    }

    pub fn node(&self, flat: usize) -> Vec<f64> {
        self.multi_index(flat).into_iter().map(|i| self.axis(i)).collect()
    }

    /// All node coordinates, node-major.
    pub fn node_coords(&self) -> Vec<f64> {
        (0..self.node_count()).flat_map(|f| self.node(f)).collect()
    }

    pub fn slice_index(&self, t: f64) -> Option<usize> {
        self.slices.iter().position(|&s| (s - t).abs() <= 1e-12 * (1.0 + t.abs()))
    }

    pub fn horizon(&self) -> f64 {
        *self.slices.last().unwrap()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ExtrapolationKind {
    #[default]
    Envelope,
    Clamp,
    Error,
}

/// What to return outside the grid box.
#[derive(Debug, Clone)]
pub enum Extrapolation {
    /// Value at the box projection `y_b` plus `u_0(y) − u_0(y_b)` (or the
    /// gradient analogue), capped by the a priori growth bound.
    Envelope(Arc<VelocityFieldSpec>),
    Clamp,
    Error,
}

impl Extrapolation {
    pub fn kind(&self) -> ExtrapolationKind {
        match self {
            Extrapolation::Envelope(_) => ExtrapolationKind::Envelope,
            Extrapolation::Clamp => ExtrapolationKind::Clamp,
            Extrapolation::Error => ExtrapolationKind::Error,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldRole {
    /// `d` components.
    Value,
    /// `d²` components, `J[i·d + j] = ∂_i u_j`.
    Gradient,
    /// `d³` components, `H[(k·d + i)·d + j] = ∂_k ∂_i u_j`.
    Hessian,
}

impl FieldRole {
    pub fn components(self, d: usize) -> usize {
        match self {
            FieldRole::Value => d,
            FieldRole::Gradient => d * d,
            FieldRole::Hessian => d * d * d,
        }
    }

    fn code(self) -> u32 {
        self as u32
    }

    fn from_code(c: u32) -> Option<Self> {
        [FieldRole::Value, FieldRole::Gradient, FieldRole::Hessian]
            .into_iter()
            .find(|r| r.code() == c)
    }
}

/// A value, gradient or hessian field sampled on a grid.
#[derive(Debug, Clone)]
pub struct GridField {
    pub spec: GridSpec,
    pub role: FieldRole,
    pub components: usize,
    /// `[slice][node][component]`
    pub values: Vec<f64>,
    pub m_index: usize,
    pub extrapolation: Extrapolation,
}

impl PartialEq for GridField {
    fn eq(&self, other: &Self) -> bool {
        self.spec == other.spec
            && self.role == other.role
            && self.components == other.components
            && self.values == other.values
            && self.m_index == other.m_index
            && self.extrapolation.kind() == other.extrapolation.kind()
    }
}

const MAGIC: &[u8; 4] = b"BGRD";
const FORMAT_VERSION: u32 = 1;

impl GridField {
    pub fn zeros(spec: GridSpec, role: FieldRole, m_index: usize, extrapolation: Extrapolation) -> Self {
        let components = role.components(spec.dim);
        let len = spec.slices.len() * spec.node_count() * components;
        GridField {
            spec,
            role,
            components,
            values: vec![0.0; len],
            m_index,
            extrapolation,
        }
    }

    /// Samples `u_0` (components = d) or `∇u_0` (components = d²) at every
    /// node of every slice.
    pub fn from_initial(spec: GridSpec, u0: &Arc<VelocityFieldSpec>, gradient: bool) -> LabResult<Self> {
        spec.validate()?;
        if spec.dim != u0.dim {
            return Err(LabError::Validation(format!(
                "grid dimension {} differs from field dimension {}",
                spec.dim, u0.dim
            )));
        }
        let d = spec.dim;
        let role = if gradient { FieldRole::Gradient } else { FieldRole::Value };
        let comps = role.components(d);
        let mut f = GridField::zeros(spec, role, 0, Extrapolation::Envelope(u0.clone()));
        let nodes = f.spec.node_count();
        let mut out = vec![0.0; comps];
        for n in 0..nodes {
            let x = f.spec.node(n);
            if gradient {
                u0.gradient(&x, &mut out);
            } else {
                u0.eval(&x, &mut out);
            }
            for j in 0..f.spec.slices.len() {
                f.node_mut(j, n).copy_from_slice(&out);
            }
        }
        Ok(f)
    }

    pub fn slice_len(&self) -> usize {
        self.spec.node_count() * self.components
    }

    pub fn slice(&self, j: usize) -> &[f64] {
        let l = self.slice_len();
        &self.values[j * l..(j + 1) * l]
    }

    pub fn slice_mut(&mut self, j: usize) -> &mut [f64] {
        let l = self.slice_len();
        &mut self.values[j * l..(j + 1) * l]
    }

    pub fn node_value(&self, j: usize, n: usize) -> &[f64] {
        let c = self.components;
        &self.slice(j)[n * c..(n + 1) * c]
    }

    pub fn node_mut(&mut self, j: usize, n: usize) -> &mut [f64] {
        let c = self.components;
        &mut self.slice_mut(j)[n * c..(n + 1) * c]
    }

    /// `(j0, w)` with the value at `τ` equal to `(1−w)·slice j0 + w·slice j0+1`
    /// (τ clamped into the slice range).
    #[inline]
    pub fn time_bracket(&self, tau: f64) -> (usize, f64) {
        let s = &self.spec.slices;
        let last = s.len() - 1;
        if last == 0 || tau <= 0.0 {
            return (0, 0.0);
        }
        if tau >= s[last] {
            return (last - 1, 1.0);
        }
        // Slices are few; a linear scan beats a binary search here.
        let mut j = 0;
        while s[j + 1] < tau {
            j += 1;
        }
        (j, (tau - s[j]) / (s[j + 1] - s[j]))
    }

    /// Multilinear interpolation inside the box at time bracket `(j0, w)`.
    /// Returns `false` (leaving `out` untouched) if `y` is outside.
    #[inline]
    pub fn interp_inside<const D: usize>(&self, j0: usize, w: f64, y: &[f64; D], out: &mut [f64]) -> bool {
        let n = self.spec.nodes;
        let l = self.spec.half_width;
        let inv_h = (n - 1) as f64 / (2.0 * l);
        let mut base = 0usize;
        let mut frac = [0.0; D];
        let mut stride = [0usize; D];
        let mut st = 1usize;
        for a in (0..D).rev() {
            stride[a] = st;
            st *= n;
        }
        for a in 0..D {
            let pos = (y[a] + l) * inv_h;
            if !(pos >= 0.0 && pos <= (n - 1) as f64) {
                return false;
            }
            let i = (pos as usize).min(n - 2);
            frac[a] = pos - i as f64;
            base += i * stride[a];
        }
        let c = self.components;
        let sl = self.slice_len();
        let two_slices = w != 0.0 && j0 + 1 < self.spec.slices.len();
        let s0 = &self.values[j0 * sl..(j0 + 1) * sl];
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
            if two_slices {
                let s1 = &self.values[(j0 + 1) * sl..(j0 + 2) * sl];
                for k in 0..c {
                    out[k] += wt * ((1.0 - w) * s0[idx + k] + w * s1[idx + k]);
                }
            } else {
                for k in 0..c {
                    out[k] += wt * s0[idx + k];
                }
            }
        }
        true
    }

    /// Full evaluation with the extrapolation policy. Returns `false` only
    /// under the `Error` policy when `y` leaves the box.
    #[inline]
    pub fn eval_bracket<const D: usize>(&self, j0: usize, w: f64, y: &[f64; D], out: &mut [f64]) -> bool {
        if self.interp_inside(j0, w, y, out) {
            return true;
        }
        let l = self.spec.half_width;
        let mut yb = *y;
        yb.iter_mut().for_each(|v| *v = v.clamp(-l, l));
        match &self.extrapolation {
            Extrapolation::Error => false,
            Extrapolation::Clamp => self.interp_inside(j0, w, &yb, out),
            Extrapolation::Envelope(_) if self.role == FieldRole::Hessian => {
                self.interp_inside(j0, w, &yb, out)
            }
            Extrapolation::Envelope(u0) => {
                self.interp_inside(j0, w, &yb, out);
                let c = self.components;
                let mut a = [0.0; 9];
                let mut b = [0.0; 9];
                let r = norm(y);
                let cap = if self.role == FieldRole::Value {
                    u0.eval(y, &mut a[..c]);
                    u0.eval(&yb, &mut b[..c]);
                    u0.apriori_cap(r)
                } else {
                    u0.gradient(y, &mut a[..c]);
                    u0.gradient(&yb, &mut b[..c]);
                    u0.k1 * (1.0 + r).powf(u0.grad_exponent())
                };
                for k in 0..c {
                    out[k] += a[k] - b[k];
                }
                let mag = norm(&out[..c]);
                if mag > cap {
                    let s = cap / mag;
                    out[..c].iter_mut().for_each(|v| *v *= s);
                }
                true
            }
        }
    }

    /// Evaluation at arbitrary `(τ, y)`; errors under the `Error` policy.
    pub fn eval_at(&self, tau: f64, y: &[f64], out: &mut [f64]) -> LabResult<()> {
        let (j0, w) = self.time_bracket(tau);
        let ok = match self.spec.dim {
            1 => self.eval_bracket::<1>(j0, w, &[y[0]], out),
            2 => self.eval_bracket::<2>(j0, w, &[y[0], y[1]], out),
            3 => self.eval_bracket::<3>(j0, w, &[y[0], y[1], y[2]], out),
            d => return Err(LabError::param("d", d as f64, "grids support d in 1..=3")),
        };
        if ok {
            Ok(())
        } else {
            Err(LabError::Divergence {
                time: tau,
                radius: norm(y),
                limit: self.spec.half_width,
            })
        }
    }

    /// Nodewise `self − other`.
    pub fn difference(&self, other: &GridField) -> LabResult<GridField> {
        if self.spec != other.spec || self.role != other.role {
            return Err(LabError::Precondition("fields live on different grids".into()));
        }
        let mut out = self.clone();
        for (o, b) in out.values.iter_mut().zip(&other.values) {
            *o -= b;
        }
        Ok(out)
    }

    /// Largest component-vector norm over the slice-`j` nodes accepted by `keep`.
    pub fn sup_norm_where<F: Fn(usize, &[f64]) -> bool>(&self, j: usize, keep: F) -> Option<(f64, usize)> {
        let mut best: Option<(f64, usize)> = None;
        for n in 0..self.spec.node_count() {
            let x = self.spec.node(n);
            if !keep(n, &x) {
                continue;
            }
            let v = norm(self.node_value(j, n));
            if best.is_none_or(|(b, _)| v > b) {
                best = Some((v, n));
            }
        }
        best
    }

    pub fn sup_norm(&self) -> f64 {
        (0..self.spec.slices.len())
            .filter_map(|j| self.sup_norm_where(j, |_, _| true).map(|b| b.0))
            .fold(0.0, f64::max)
    }

    /// Binary container: magic, version, dims, box, resolution, slice times,
    /// then the row-major little-endian payload.
    pub fn write_binary<W: Write>(&self, mut w: W) -> LabResult<()> {
        w.write_all(MAGIC)?;
        for v in [
            FORMAT_VERSION,
            self.spec.dim as u32,
            self.role.code(),
            self.spec.nodes as u32,
            self.m_index as u32,
            self.spec.slices.len() as u32,
        ] {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&self.spec.half_width.to_le_bytes())?;
        for t in &self.spec.slices {
            w.write_all(&t.to_le_bytes())?;
        }
        for v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    /// Reads a container; the extrapolation policy is not stored and comes
    /// back as `Clamp`.
    pub fn read_binary<R: Read>(mut r: R) -> LabResult<GridField> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(LabError::Io("not a grid field container".into()));
        }
        let mut u = [0u32; 6];
        for v in u.iter_mut() {
            let mut b = [0u8; 4];
            r.read_exact(&mut b)?;
            *v = u32::from_le_bytes(b);
        }
        let [version, dim, role, nodes, m_index, n_slices] = u;
        let role = FieldRole::from_code(role).ok_or_else(|| LabError::Io(format!("unknown field role {role}")))?;
        if version != FORMAT_VERSION {
            return Err(LabError::Io(format!("unsupported container version {version}")));
        }
        let read_f64 = |r: &mut R| -> LabResult<f64> {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            Ok(f64::from_le_bytes(b))
        };
        let half_width = read_f64(&mut r)?;
        let slices = (0..n_slices).map(|_| read_f64(&mut r)).collect::<LabResult<Vec<_>>>()?;
        let spec = GridSpec {
            dim: dim as usize,
            half_width,
            nodes: nodes as usize,
            slices,
        };
        spec.validate()?;
        let components = role.components(spec.dim);
        let len = spec.slices.len() * spec.node_count() * components;
        let values = (0..len).map(|_| read_f64(&mut r)).collect::<LabResult<Vec<_>>>()?;
        Ok(GridField {
            spec,
            role,
            components,
            values,
            m_index: m_index as usize,
            extrapolation: Extrapolation::Clamp,
        })
    }

    /// One slice as CSV: node coordinates then components.
    pub fn write_csv_slice<W: Write>(&self, j: usize, mut w: W) -> LabResult<()> {
        if j >= self.spec.slices.len() {
            return Err(LabError::Index {
                index: j,
                len: self.spec.slices.len(),
            });
        }
        let d = self.spec.dim;
        let mut header: Vec<String> = (0..d).map(|a| format!("x{a}")).collect();
        header.extend((0..self.components).map(|k| format!("c{k}")));
        writeln!(w, "{}", header.join(","))?;
        for n in 0..self.spec.node_count() {
            let row: Vec<String> = self
                .spec
                .node(n)
                .iter()
                .chain(self.node_value(j, n))
                .map(|v| format!("{v}"))
                .collect();
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

impl Drift for GridField {
    fn dim(&self) -> usize {
        self.spec.dim
    }

    /// Panics under the `Error` policy outside the box; use
    /// [`GridField::eval_at`] to get the error instead.
    fn eval(&self, tau: f64, y: &[f64], out: &mut [f64]) {
        self.eval_at(tau, y, out)
            .expect("grid drift evaluated outside its box under the Error policy")
    }
}
