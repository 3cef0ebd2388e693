//! Closed-form comparison flows and the deterministic calculus around them.
//!
//! The comparison flow `Φ_{κ,U,x_min}(t, x)` solves the scalar ODE
//! `dx/dt = U (x_min + |x|)^{1/κ}`. For `x ≥ 0, t ≥ 0`:
//!
//! ```text
//! Φ(t, x) = ((x + x_min)^a + a U t)^{1/a} - x_min,      a = (κ - 1) / κ
//! ```
//!
//! Negative starting points first travel to the origin (in the crossing time)
//! and negative times follow from `Φ(-t, -x) = -Φ(t, x)`.

use serde::{Deserialize, Serialize};

use crate::error::{check_finite, LabError, LabResult};

/// Smallest base fed to fractional powers.
const POW_FLOOR: f64 = 1e-300;

/// `⟨t⟩ = max(1, t)`.
#[inline]
pub fn bracket(v: f64) -> f64 {
    v.max(1.0)
}

/// Fractional power of a nonnegative quantity, robust to negative roundoff.
#[inline]
pub(crate) fn fpow(base: f64, exponent: f64) -> f64 {
    if base <= 0.0 {
        if exponent > 0.0 {
            return 0.0;
        }
        return POW_FLOOR.powf(exponent);
    }
    base.max(POW_FLOOR).powf(exponent)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowParams {
    pub kappa: f64,
    #[serde(rename = "U")]
    pub u_scale: f64,
    pub x_min: f64,
}

impl FlowParams {
    pub fn new(kappa: f64, u_scale: f64, x_min: f64) -> LabResult<Self> {
        let p = FlowParams {
            kappa,
            u_scale,
            x_min,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> LabResult<()> {
        check_finite("kappa", self.kappa)?;
        if self.kappa <= 1.0 {
            return Err(LabError::param("kappa", self.kappa, "must be > 1"));
        }
        check_finite("U", self.u_scale)?;
        if self.u_scale < 1.0 {
            return Err(LabError::param("U", self.u_scale, "must be >= 1"));
        }
        check_finite("x_min", self.x_min)?;
        if self.x_min < 0.0 {
            return Err(LabError::param("x_min", self.x_min, "must be >= 0"));
        }
        Ok(())
    }

    /// `(κ - 1) / κ`
    #[inline]
    pub fn a(&self) -> f64 {
        (self.kappa - 1.0) / self.kappa
    }

    /// `κ / (κ - 1)`, the long-time growth exponent.
    #[inline]
    pub fn growth_exponent(&self) -> f64 {
        self.kappa / (self.kappa - 1.0)
    }

    /// `(U t)^{κ/(κ-1)}`
    #[inline]
    pub fn long_time_scale(&self, t: f64) -> f64 {
        fpow(self.u_scale * t.abs(), self.growth_exponent())
    }

    /// `⟨U t⟩^{κ/(κ-1)}`
    #[inline]
    pub fn long_time_scale_bracketed(&self, t: f64) -> f64 {
        bracket(self.u_scale * t.abs()).powf(self.growth_exponent())
    }
}

/// Time needed by the flow started at `x ≤ 0` to reach the origin.
pub fn crossing_time(p: &FlowParams, x: f64) -> LabResult<f64> {
    p.validate()?;
    check_finite("x", x)?;
    if x > 0.0 {
        return Err(LabError::Domain(format!(
            "crossing time needs x <= 0, got {x}"
        )));
    }
    let a = p.a();
    let t = (fpow(p.x_min + x.abs(), a) - fpow(p.x_min, a)) / (a * p.u_scale);
    Ok(t.max(0.0))
}

fn forward_nonneg(p: &FlowParams, t: f64, x: f64) -> f64 {
    let a = p.a();
    fpow(fpow(x + p.x_min, a) + a * p.u_scale * t, 1.0 / a) - p.x_min
}

/// `Φ_{κ,U,x_min}(t, x)` for any sign of `t` and `x`.
pub fn phi_flow(p: &FlowParams, t: f64, x: f64) -> LabResult<f64> {
    p.validate()?;
    check_finite("t", t)?;
    check_finite("x", x)?;
    if t == 0.0 {
        return Ok(x);
    }
    let value = if t < 0.0 {
        -phi_forward(p, -t, -x)?
    } else {
        phi_forward(p, t, x)?
    };
    if !value.is_finite() {
        return Err(LabError::Range {
            magnitude: value.abs(),
            context: format!("phi_flow(t = {t}, x = {x})"),
        });
    }
    Ok(value)
}

fn phi_forward(p: &FlowParams, t: f64, x: f64) -> LabResult<f64> {
    if x >= 0.0 {
        return Ok(forward_nonneg(p, t, x));
    }
    let tc = crossing_time(p, x)?;
    if t >= tc {
        return Ok(forward_nonneg(p, t - tc, 0.0));
    }
    // Still approaching the origin: |x| decreases along the reversed flow.
    let a = p.a();
    let w = (fpow(x.abs() + p.x_min, a) - a * p.u_scale * t).max(fpow(p.x_min, a));
    Ok(-(fpow(w, 1.0 / a) - p.x_min).max(0.0))
}

/// Constant-free displacement envelope `max((Ut)^{κ/(κ-1)}, U t |x|^{1/κ})`.
pub fn displacement_envelope(p: &FlowParams, t: f64, x: f64) -> LabResult<f64> {
    p.validate()?;
    if !(t >= 0.0) || !t.is_finite() {
        return Err(LabError::param("t", t, "must be finite and >= 0"));
    }
    let ut = p.u_scale * t;
    Ok(p.long_time_scale(t).max(ut * fpow(x.abs(), 1.0 / p.kappa)))
}

/// Bracketed envelope `max(⟨Ut⟩^{κ/(κ-1)}, ⟨Ut⟩ ⟨x⟩^{1/κ})`, which is also the
/// normal/abnormal regime threshold for `M_t √t`.
pub fn displacement_envelope_bracketed(p: &FlowParams, t: f64, x: f64) -> f64 {
    let but = bracket(p.u_scale * t.abs());
    p.long_time_scale_bracketed(t)
        .max(but * bracket(x.abs()).powf(1.0 / p.kappa))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Regime {
    LongTime,
    ShortTime,
    LargeCutoff,
    NormalConvective,
    AbnormalDiffusive,
}

impl Regime {
    pub fn is_abnormal(self) -> bool {
        matches!(self, Regime::AbnormalDiffusive)
    }
}

/// Classifies `(t, |x|)`; with a noise magnitude `M_t √t` the answer is one of
/// the two viscous regimes, otherwise one of the deterministic ones. A large
/// cut-off takes precedence over the long/short split.
pub fn classify_regime(p: &FlowParams, t: f64, x: f64, mt_sqrt_t: Option<f64>) -> Regime {
    match mt_sqrt_t {
        Some(noise) => {
            if noise > displacement_envelope_bracketed(p, t, x) {
                Regime::AbnormalDiffusive
            } else {
                Regime::NormalConvective
            }
        }
        None => {
            let scale = p.long_time_scale(t);
            if p.x_min > scale {
                Regime::LargeCutoff
            } else if x.abs() <= scale {
                Regime::LongTime
            } else {
                Regime::ShortTime
            }
        }
    }
}

/// Cut-off sequence of the generalized-flow induction:
/// `x⁰ = x¹ = 0`, `x² = C (Ut)^{κ/(κ-1)}`, `x^{m+1} = C² U t (x^m)^{1/κ}`.
pub fn cutoff_recursion(c: f64, p: &FlowParams, t: f64, m_max: usize) -> LabResult<Vec<f64>> {
    p.validate()?;
    if !(c > 1.0) || !c.is_finite() {
        return Err(LabError::param("C", c, "must be > 1"));
    }
    if !(t > 0.0) || !t.is_finite() {
        return Err(LabError::param("t", t, "must be > 0"));
    }
    let ut = p.u_scale * t;
    let mut seq = Vec::with_capacity(m_max + 1);
    for m in 0..=m_max {
        let next = match m {
            0 | 1 => 0.0,
            2 => c * p.long_time_scale(t),
            _ => c * c * ut * fpow(seq[m - 1], 1.0 / p.kappa),
        };
        seq.push(next);
    }
    Ok(seq)
}

/// Fixed point of the cut-off recursion, `(C² U t)^{κ/(κ-1)}`.
pub fn cutoff_fixed_point(c: f64, p: &FlowParams, t: f64) -> f64 {
    fpow(c * c * p.u_scale * t, p.growth_exponent())
}

/// Smallest `C ≥ 1` with `C - 1 - C^α ≥ 0`. Returns the upper end of the
/// final bisection bracket, so the inequality holds at the returned value.
pub fn minimal_c_alpha(alpha: f64) -> LabResult<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(LabError::Domain(format!("alpha must lie in (0,1), got {alpha}")));
    }
    let g = |c: f64| c - 1.0 - c.powf(alpha);
    let mut lo = 1.0;
    let mut hi = 2.0;
    while g(hi) < 0.0 {
        lo = hi;
        hi *= 2.0;
    }
    while hi - lo > 1e-12 * hi.max(1.0) {
        let mid = 0.5 * (lo + hi);
        if g(mid) >= 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Uniform bound on every iterate of `B_{n+1} = c1 + c2 B_n^α`, `B_0 = A0`.
pub fn fixed_point_bound(c1: f64, c2: f64, alpha: f64, a0: f64) -> LabResult<f64> {
    let c_alpha = minimal_c_alpha(alpha)?;
    for (name, v) in [("c1", c1), ("c2", c2), ("A0", a0)] {
        if !(v >= 0.0) || !v.is_finite() {
            return Err(LabError::param(name, v, "must be finite and >= 0"));
        }
    }
    let scale = c1.max(c2.powf(1.0 / (1.0 - alpha)));
    Ok(a0.max(c_alpha * scale))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx_eq::close;

    mod approx_eq {
        pub fn close(a: f64, b: f64, tol: f64) -> bool {
            (a - b).abs() <= tol * (1.0 + b.abs())
        }
    }

    fn p(kappa: f64, u: f64, x_min: f64) -> FlowParams {
        FlowParams::new(kappa, u, x_min).unwrap()
    }

    #[test]
    fn phi_flow_examples() {
        assert!(close(phi_flow(&p(2.0, 1.0, 0.0), 2.0, 0.0).unwrap(), 1.0, 1e-14));
        assert_eq!(phi_flow(&p(3.0, 2.0, 0.5), 0.0, 5.3).unwrap(), 5.3);
        assert!(phi_flow(&p(2.0, 1.0, 0.0), 2.0, -1.0).unwrap().abs() < 1e-14);
    }

    #[test]
    fn phi_flow_rejects_bad_params() {
        let bad = FlowParams {
            kappa: 1.0,
            u_scale: 1.0,
            x_min: 0.0,
        };
        assert!(matches!(phi_flow(&bad, 1.0, 1.0), Err(LabError::Parameter { .. })));
        assert!(FlowParams::new(2.0, 0.5, 0.0).is_err());
        assert!(FlowParams::new(2.0, 1.0, -1.0).is_err());
    }

    #[test]
    fn phi_flow_overflow_is_range_error() {
        let r = phi_flow(&p(1.0001, 1.0, 0.0), 1e300, 1e300);
        assert!(matches!(r, Err(LabError::Range { .. })), "{r:?}");
    }

    #[test]
    fn crossing_time_examples() {
        assert_eq!(crossing_time(&p(2.0, 1.0, 0.0), 0.0).unwrap(), 0.0);
        assert!(close(crossing_time(&p(2.0, 1.0, 0.0), -1.0).unwrap(), 2.0, 1e-14));
        let expected = 2.0 * (2.0 - 3f64.sqrt());
        assert!(close(crossing_time(&p(2.0, 1.0, 3.0), -1.0).unwrap(), expected, 1e-14));
        assert!(matches!(
            crossing_time(&p(2.0, 1.0, 0.0), 0.5),
            Err(LabError::Domain(_))
        ));
    }

    #[test]
    fn envelope_examples() {
        let q = p(2.0, 1.0, 0.0);
        assert_eq!(displacement_envelope(&q, 0.0, 17.0).unwrap(), 0.0);
        assert!(close(displacement_envelope(&q, 2.0, 0.0).unwrap(), 4.0, 1e-14));
        assert!(close(displacement_envelope(&q, 1.0, 100.0).unwrap(), 10.0, 1e-14));
    }

    #[test]
    fn regime_examples() {
        let q = p(2.0, 1.0, 0.0);
        assert_eq!(classify_regime(&q, 2.0, 3.0, None), Regime::LongTime);
        assert_eq!(classify_regime(&q, 2.0, 100.0, None), Regime::ShortTime);
        assert_eq!(classify_regime(&q, 1.0, 0.0, Some(5.0)), Regime::AbnormalDiffusive);
        assert_eq!(classify_regime(&q, 1.0, 0.0, Some(1.0)), Regime::NormalConvective);
        assert_eq!(classify_regime(&p(2.0, 1.0, 10.0), 1.0, 3.0, None), Regime::LargeCutoff);
    }

    #[test]
    fn cutoff_recursion_examples() {
        let q = p(2.0, 1.0, 0.0);
        assert_eq!(cutoff_recursion(3.0, &q, 0.7, 1).unwrap(), vec![0.0, 0.0]);
        let seq = cutoff_recursion(2.0, &q, 1.0, 3).unwrap();
        assert_eq!(&seq[..3], &[0.0, 0.0, 2.0]);
        assert!(close(seq[3], 4.0 * 2f64.sqrt(), 1e-14));
        let long = cutoff_recursion(2.0, &q, 1.0, 200).unwrap();
        assert!(close(long[200], 16.0, 1e-12));
        assert!(close(cutoff_fixed_point(2.0, &q, 1.0), 16.0, 1e-14));
        assert!(cutoff_recursion(1.0, &q, 1.0, 3).is_err());
    }

    #[test]
    fn fixed_point_examples() {
        // c1 -> 0+: B = sqrt(B) has fixed point 1.
        assert!(fixed_point_bound(1e-300, 1.0, 0.5, 1.0).unwrap() >= 1.0);
        let golden_sq = (3.0 + 5f64.sqrt()) / 2.0;
        let b = fixed_point_bound(1.0, 1.0, 0.5, 0.1).unwrap();
        assert!(b >= golden_sq);
        assert!(b - golden_sq < 1e-9);
        // Iterate 10^3 steps: monotone decrease from 100.
        let mut x = 100.0f64;
        for _ in 0..1000 {
            let next = 3.0 + 0.5 * x.powf(0.9);
            assert!(next <= x);
            x = next;
        }
        assert_eq!(fixed_point_bound(3.0, 0.5, 0.9, 100.0).unwrap(), 100.0);
        assert!(matches!(fixed_point_bound(1.0, 1.0, 1.0, 1.0), Err(LabError::Domain(_))));
    }

    #[test]
    fn c_alpha_is_minimal_root() {
        let c = minimal_c_alpha(0.5).unwrap();
        assert!(close(c, (3.0 + 5f64.sqrt()) / 2.0, 1e-11));
        assert!(c - 1.0 - c.sqrt() >= 0.0);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(1000))]

            #[test]
            fn semigroup(kappa in 1.2f64..5.0, u in 1.0f64..5.0, xm in 0.0f64..2.0,
                         x in 0.0f64..100.0, t in 0.0f64..5.0, s in 0.0f64..5.0) {
                let q = p(kappa, u, xm);
                let direct = phi_flow(&q, t + s, x).unwrap();
                let composed = phi_flow(&q, t, phi_flow(&q, s, x).unwrap()).unwrap();
                prop_assert!((direct - composed).abs() <= 1e-9 * (1.0 + direct.abs()));
            }

            #[test]
            fn monotone(kappa in 1.2f64..5.0, u in 1.0f64..5.0, xm in 0.0f64..2.0,
                        x in 0.0f64..100.0, t in 0.01f64..5.0, dt in 0.01f64..1.0, dx in 0.01f64..1.0) {
                let q = p(kappa, u, xm);
                let base = phi_flow(&q, t, x).unwrap();
                prop_assert!(phi_flow(&q, t + dt, x).unwrap() > base);
                prop_assert!(phi_flow(&q, t, x + dx).unwrap() > base);
            }

            #[test]
            fn antisymmetric(kappa in 1.2f64..5.0, u in 1.0f64..5.0, xm in 0.0f64..2.0,
                             x in -50.0f64..50.0, t in -5.0f64..5.0) {
                let q = p(kappa, u, xm);
                let lhs = phi_flow(&q, -t, -x).unwrap();
                let rhs = -phi_flow(&q, t, x).unwrap();
                prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + rhs.abs()));
            }

            #[test]
            fn fixed_point_dominates_iterates(c1 in 1e-3f64..1e3, c2 in 1e-3f64..1e3,
                                              alpha in 0.05f64..0.95, a0 in 1e-3f64..1e3) {
                let bound = fixed_point_bound(c1, c2, alpha, a0).unwrap();
                let mut b = a0;
                for _ in 0..200 {
                    prop_assert!(b <= bound);
                    b = c1 + c2 * b.powf(alpha);
                }
                prop_assert!(b <= bound);
            }

            #[test]
            fn cutoff_recursion_is_bounded(c in 1.1f64..4.0, kappa in 1.2f64..5.0,
                                           u in 1.0f64..4.0, t in 0.1f64..4.0) {
                let q = p(kappa, u, 0.0);
                let seq = cutoff_recursion(c, &q, t, 60).unwrap();
                let bound = fixed_point_bound(c * q.long_time_scale(t), c * c * u * t,
                                              1.0 / kappa, seq[2]).unwrap();
                for w in seq[2..].windows(2) {
                    prop_assert!(w[1] >= w[0] * (1.0 - 1e-12));
                }
                for v in &seq {
                    prop_assert!(*v <= bound * (1.0 + 1e-12));
                }
            }
        }
    }
}
