//! Safe/dangerous annuli: layout validation, subdivision of fat safe zones,
//! time-shrunken safe intervals and stability predicates.
//!
//! Radii are 1-based in the API (`R_1, R_2, …`). Dangerous zone `i` is the
//! open annulus `(R_{2i-1}, R_{2i})`; safe zone `i` is `[R_{2i}, R_{2i+1}]`.
//! Repeated radii encode empty dangerous zones.

use serde::{Deserialize, Serialize};

use crate::characteristics::PathRecord;
use crate::error::{LabError, LabResult};
use crate::scalar_flows::bracket;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZoneLayout {
    pub radii: Vec<f64>,
    pub kappa: f64,
    /// Thinness prefactor `C` in `R_{2i} − R_{2i−1} ≤ C R_{2i−1}^{1/κ}` (default 1).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thinness: Option<f64>,
    /// Fatness margin `ε` in `R_{2i+1} ≥ (1+ε) R_{2i}` (default 3).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fatness: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayoutRule {
    InnerRadius,
    Monotone,
    Thin,
    Fat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutViolation {
    pub rule: LayoutRule,
    /// Zone index `i` for thin/fat rules, radius index otherwise.
    pub index: usize,
    /// The offending radii pair.
    pub radii: (f64, f64),
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutReport {
    pub pass: bool,
    pub first_violation: Option<LayoutViolation>,
}

impl LayoutReport {
    pub fn into_result(self) -> LabResult<()> {
        match self.first_violation {
            None => Ok(()),
            Some(v) => Err(LabError::Validation(format!(
                "layout violates {:?} rule at index {} (radii {}, {}): {}",
                v.rule, v.index, v.radii.0, v.radii.1, v.detail
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Location {
    Core,
    Safe(usize),
    Dangerous(usize),
    /// Past the last stored radius when that radius closes a safe zone, so
    /// the next (unspecified) annulus would be dangerous.
    Beyond,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SafeInterval {
    pub i: usize,
    pub lower: f64,
    pub upper: f64,
    pub viscous: bool,
    pub empty: bool,
}

impl SafeInterval {
    pub fn contains(&self, r: f64) -> bool {
        !self.empty && r >= self.lower && r <= self.upper
    }
}

impl ZoneLayout {
    pub fn new(radii: Vec<f64>, kappa: f64) -> Self {
        ZoneLayout {
            radii,
            kappa,
            thinness: None,
            fatness: None,
        }
    }

    pub fn with_overrides(mut self, thinness: f64, fatness: f64) -> Self {
        self.thinness = Some(thinness);
        self.fatness = Some(fatness);
        self
    }

    fn thin_c(&self) -> f64 {
        self.thinness.unwrap_or(1.0)
    }

    fn fat_factor(&self) -> f64 {
        1.0 + self.fatness.unwrap_or(3.0)
    }

    /// `R_k`, 1-based.
    pub fn r(&self, k: usize) -> f64 {
        self.radii[k - 1]
    }

    pub fn dangerous_count(&self) -> usize {
        self.radii.len() / 2
    }

    pub fn safe_count(&self) -> usize {
        self.radii.len().saturating_sub(1) / 2
    }

    /// `(R_{2i−1}, R_{2i})`, 1-based `i`.
    pub fn dangerous(&self, i: usize) -> Option<(f64, f64)> {
        (i >= 1 && 2 * i <= self.radii.len()).then(|| (self.r(2 * i - 1), self.r(2 * i)))
    }

    /// `[R_{2i}, R_{2i+1}]`, 1-based `i`.
    pub fn safe(&self, i: usize) -> Option<(f64, f64)> {
        (i >= 1 && 2 * i < self.radii.len()).then(|| (self.r(2 * i), self.r(2 * i + 1)))
    }

    /// The dangerous zone whose open annulus contains `r`, if any.
    pub fn dangerous_containing(&self, r: f64) -> Option<(usize, (f64, f64))> {
        (1..=self.dangerous_count())
            .map(|i| (i, self.dangerous(i).unwrap()))
            .find(|&(_, (a, b))| a < r && r < b)
    }

    pub fn validate(&self) -> LabResult<LayoutReport> {
        validate_layout(self)
    }
}

pub fn validate_layout(layout: &ZoneLayout) -> LabResult<LayoutReport> {
    let radii = &layout.radii;
    if radii.len() < 2 {
        return Err(LabError::DegenerateLayout(format!(
            "need at least 2 radii, got {}",
            radii.len()
        )));
    }
    if let Some(bad) = radii.iter().find(|r| !r.is_finite()) {
        return Err(LabError::DegenerateLayout(format!("non-finite radius {bad}")));
    }
    if !(layout.kappa > 1.0) {
        return Err(LabError::param("kappa", layout.kappa, "must be > 1"));
    }
    let fail = |rule, index, radii: (f64, f64), detail: String| {
        Ok(LayoutReport {
            pass: false,
            first_violation: Some(LayoutViolation {
                rule,
                index,
                radii,
                detail,
            }),
        })
    };
    if radii[0] < 1.0 {
        return fail(LayoutRule::InnerRadius, 1, (radii[0], radii[0]), "R_1 must be >= 1".into());
    }
    for k in 1..radii.len() {
        if radii[k] < radii[k - 1] {
            return fail(
                LayoutRule::Monotone,
                k + 1,
                (radii[k - 1], radii[k]),
                "radii must be nondecreasing".into(),
            );
        }
    }
    let q = 1.0 / layout.kappa;
    // Walk radii in order so the first violation is the innermost one.
    for k in 2..=radii.len() {
        let (lo, hi) = (layout.r(k - 1), layout.r(k));
        if k % 2 == 0 {
            let allowed = layout.thin_c() * lo.powf(q);
            if hi - lo > allowed {
                return fail(
                    LayoutRule::Thin,
                    k / 2,
                    (lo, hi),
                    format!("width {} exceeds {allowed}", hi - lo),
                );
            }
        } else {
            let need = layout.fat_factor() * lo;
            if hi < need {
                return fail(
                    LayoutRule::Fat,
                    k / 2,
                    (lo, hi),
                    format!("outer radius {hi} below {need}"),
                );
            }
        }
    }
    Ok(LayoutReport {
        pass: true,
        first_violation: None,
    })
}

/// Splits every safe zone with `R_{2i+1} ≥ (1+ε)² R_{2i}` by inserting the
/// empty dangerous zone `((1+ε) R_{2i}, (1+ε) R_{2i})`, repeatedly.
pub fn subdivide(layout: &ZoneLayout) -> ZoneLayout {
    let f = layout.fat_factor();
    let mut radii = layout.radii.clone();
    // Safe zone i spans indices (2i−1, 2i) in 0-based storage.
    let mut k = 1;
    while k + 1 < radii.len() {
        let (lo, hi) = (radii[k], radii[k + 1]);
        if hi >= f * f * lo {
            radii.insert(k + 1, f * lo);
            radii.insert(k + 1, f * lo);
        }
        k += 2;
    }
    ZoneLayout {
        radii,
        ..layout.clone()
    }
}

pub fn safe_interval(
    layout: &ZoneLayout,
    i: usize,
    t: f64,
    u_scale: f64,
    c: f64,
    viscous: bool,
) -> LabResult<SafeInterval> {
    let (lo, hi) = layout.safe(i).ok_or(LabError::Index {
        index: i,
        len: layout.safe_count(),
    })?;
    if !(t >= 0.0) {
        return Err(LabError::param("t", t, "must be >= 0"));
    }
    let ut = u_scale * t;
    let w = if viscous {
        2.0 * (c - 1.0) * (bracket(ut) + ut)
    } else {
        4.0 * (c - 1.0) * ut
    };
    let q = 1.0 / layout.kappa;
    let lower = lo + w * lo.powf(q);
    let upper = hi - w * hi.powf(q);
    Ok(SafeInterval {
        i,
        lower,
        upper,
        viscous,
        empty: lower > upper,
    })
}

/// Default core radius `factor · (16 C ⟨Ut⟩)^{κ/(κ−1)}` (factor 32 by default).
pub fn core_threshold(kappa: f64, u_scale: f64, c: f64, t: f64, factor: f64) -> f64 {
    factor * (16.0 * c * bracket(u_scale * t)).powf(kappa / (kappa - 1.0))
}

pub fn locate(layout: &ZoneLayout, x: f64, threshold: f64) -> Location {
    if x <= threshold {
        return Location::Core;
    }
    let n = layout.radii.len();
    if n == 0 || x < layout.r(1) {
        return Location::Safe(0);
    }
    if let Some((i, _)) = layout.dangerous_containing(x) {
        return Location::Dangerous(i);
    }
    if let Some(i) = (1..=layout.safe_count()).find(|&i| {
        let (a, b) = layout.safe(i).unwrap();
        a <= x && x <= b
    }) {
        return Location::Safe(i);
    }
    if x >= layout.r(n) {
        if n.is_multiple_of(2) {
            // The last radius opens a safe zone with no stored outer edge.
            return Location::Safe(n / 2);
        }
        return Location::Beyond;
    }
    // Only reachable on the boundary of an empty dangerous zone.
    let i = (1..=layout.dangerous_count())
        .find(|&i| layout.dangerous(i).is_some_and(|(a, _)| a == x))
        .unwrap_or(1);
    Location::Safe(i)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub count: usize,
    pub samples: usize,
    /// Largest radial move between consecutive samples: a violation between
    /// sample times can exceed the interval by at most this much.
    pub margin: f64,
}

/// Counts samples `s` with `|Y(s)| ∉ I_i(t − s)`.
#[allow(clippy::too_many_arguments)]
pub fn stability_violations(
    layout: &ZoneLayout,
    trajectory: &PathRecord,
    i: usize,
    t: f64,
    u_scale: f64,
    c: f64,
    viscous: bool,
) -> LabResult<StabilityReport> {
    let start = safe_interval(layout, i, t, u_scale, c, viscous)?;
    let r0 = trajectory.y_norm(0);
    if !start.contains(r0) {
        return Err(LabError::Precondition(format!(
            "start radius {r0} outside I_{i}({t}) = [{}, {}]",
            start.lower, start.upper
        )));
    }
    let mut count = 0;
    let mut margin: f64 = 0.0;
    let mut prev = r0;
    for k in 0..trajectory.len() {
        let s = trajectory.times[k];
        let r = trajectory.y_norm(k);
        margin = margin.max((r - prev).abs());
        prev = r;
        let iv = safe_interval(layout, i, (t - s).max(0.0), u_scale, c, viscous)?;
        if !iv.contains(r) {
            count += 1;
        }
    }
    Ok(StabilityReport {
        count,
        samples: trajectory.len(),
        margin,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn layout(r: &[f64]) -> ZoneLayout {
        ZoneLayout::new(r.to_vec(), 2.0)
    }

    #[test]
    fn validate_examples() {
        assert!(validate_layout(&layout(&[4.0, 6.0, 24.0, 26.0, 104.0])).unwrap().pass);
        let r = validate_layout(&layout(&[4.0, 7.0, 28.0])).unwrap();
        let v = r.first_violation.unwrap();
        assert_eq!((v.rule, v.index), (LayoutRule::Thin, 1));
        let r = validate_layout(&layout(&[4.0, 6.0, 20.0])).unwrap();
        let v = r.first_violation.unwrap();
        assert_eq!((v.rule, v.radii), (LayoutRule::Fat, (6.0, 20.0)));
        assert!(matches!(
            validate_layout(&layout(&[4.0])),
            Err(LabError::DegenerateLayout(_))
        ));
    }

    #[test]
    fn overrides_relax_rules() {
        let l = layout(&[4.0, 7.0, 14.0]).with_overrides(2.0, 1.0);
        assert!(validate_layout(&l).unwrap().pass);
    }

    #[test]
    fn subdivide_examples() {
        let l = layout(&[4.0, 6.0, 200.0]);
        assert_eq!(subdivide(&l).radii, vec![4.0, 6.0, 24.0, 24.0, 200.0]);
        let l = layout(&[4.0, 6.0, 24.0, 26.0, 104.0]);
        assert_eq!(subdivide(&l), l);
        // Each pass of the rule multiplies by 4 until the ratio drops below 16.
        let l = subdivide(&layout(&[4.0, 6.0, 10000.0]));
        assert_eq!(
            l.radii,
            vec![4.0, 6.0, 24.0, 24.0, 96.0, 96.0, 384.0, 384.0, 1536.0, 1536.0, 10000.0]
        );
        for i in 1..=l.safe_count() {
            let (a, b) = l.safe(i).unwrap();
            assert!(b / a < 16.0);
        }
        assert!(validate_layout(&l).unwrap().pass);
    }

    #[test]
    fn safe_interval_examples() {
        let l = layout(&[90.0, 100.0, 400.0]);
        let iv = safe_interval(&l, 1, 0.25, 1.0, 2.0, false).unwrap();
        assert_eq!((iv.lower, iv.upper), (110.0, 380.0));
        let iv = safe_interval(&l, 1, 0.0, 1.0, 2.0, false).unwrap();
        assert_eq!((iv.lower, iv.upper), (100.0, 400.0));
        assert!(matches!(
            safe_interval(&l, 2, 0.0, 1.0, 2.0, false),
            Err(LabError::Index { .. })
        ));
    }

    #[test]
    fn safe_interval_nonempty_for_large_radii() {
        let (c, u, t, kappa) = (2.0, 1.0, 1.0, 2.0);
        let r2 = (16.0 * c * bracket(u * t)).powf(kappa / (kappa - 1.0));
        let l = ZoneLayout::new(vec![r2 - 1.0, r2, 4.0 * r2], kappa);
        for viscous in [false, true] {
            let iv = safe_interval(&l, 1, t, u, c, viscous).unwrap();
            assert!(iv.upper - iv.lower >= r2 / 2.0);
        }
    }

    #[test]
    fn locate_examples() {
        let l = layout(&[4.0, 6.0, 24.0, 26.0, 104.0]);
        assert_eq!(locate(&l, 0.0, 1.0), Location::Core);
        assert_eq!(locate(&l, 5.0, 1.0), Location::Dangerous(1));
        assert_eq!(locate(&l, 15.0, 1.0), Location::Safe(1));
        assert_eq!(locate(&l, 25.0, 1.0), Location::Dangerous(2));
        assert_eq!(locate(&l, 3.0, 1.0), Location::Safe(0));
        assert_eq!(locate(&l, 200.0, 1.0), Location::Beyond);
        assert_eq!(locate(&layout(&[4.0, 6.0]), 50.0, 1.0), Location::Safe(1));
        // Empty zones never classify a point as dangerous.
        assert_eq!(locate(&layout(&[4.0, 6.0, 24.0, 24.0, 96.0]), 24.0, 1.0), Location::Safe(1));
        let th = core_threshold(2.0, 1.0, 2.0, 1.0, 32.0);
        assert_eq!(th, 32.0 * 32.0 * 32.0);
    }

    fn valid_layout_strategy() -> impl Strategy<Value = ZoneLayout> {
        (1.0f64..50.0, prop::collection::vec((0.0f64..1.0, 4.0f64..200.0), 1..5)).prop_map(
            |(r1, steps)| {
                let mut radii = vec![r1];
                for (thin, fat) in steps {
                    let lo = *radii.last().unwrap();
                    let hi = lo + thin * lo.sqrt();
                    radii.push(hi);
                    radii.push(hi * fat);
                }
                ZoneLayout::new(radii, 2.0)
            },
        )
    }

    proptest! {
        #[test]
        fn subdivide_idempotent_and_valid(l in valid_layout_strategy()) {
            prop_assert!(validate_layout(&l).unwrap().pass);
            let s = subdivide(&l);
            prop_assert!(validate_layout(&s).unwrap().pass);
            prop_assert_eq!(subdivide(&s), s.clone());
            for i in 1..=s.safe_count() {
                let (a, b) = s.safe(i).unwrap();
                prop_assert!(b < 16.0 * a);
            }
            // The union of dangerous annuli is unchanged.
            let orig: Vec<(f64, f64)> = (1..=l.dangerous_count()).filter_map(|i| l.dangerous(i)).filter(|(a, b)| b > a).collect();
            let new: Vec<(f64, f64)> = (1..=s.dangerous_count()).filter_map(|i| s.dangerous(i)).filter(|(a, b)| b > a).collect();
            prop_assert_eq!(orig, new);
        }

        #[test]
        fn safe_intervals_nest(l in valid_layout_strategy(), s1 in 0.0f64..2.0, s2 in 0.0f64..2.0, viscous: bool) {
            let (a, b) = if s1 <= s2 { (s1, s2) } else { (s2, s1) };
            let t = 2.0;
            let early = safe_interval(&l, 1, t - a, 1.0, 2.0, viscous);
            let late = safe_interval(&l, 1, t - b, 1.0, 2.0, viscous);
            if let (Ok(early), Ok(late)) = (early, late) {
                // Less remaining time means a wider interval.
                prop_assert!(late.lower <= early.lower);
                prop_assert!(late.upper >= early.upper);
            }
        }
    }
}
