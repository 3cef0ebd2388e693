//! Experiment configuration: one TOML file with sections `[field]`,
//! `[flow]`, `[zones]`, `[iteration]`, `[constants]`, `[checks]`.
//!
//! Unknown keys are rejected, all of them listed in one error.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::CheckId;
use crate::constants::BoundConstants;
use crate::error::{LabError, LabResult};
use crate::picard::IterationConfig;
use crate::scalar_flows::FlowParams;
use crate::velocity::{make_prototype, FieldKind, VelocityFieldSpec};
use crate::zones::ZoneLayout;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// Output directory (overridden by `--out`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    pub field: FieldConfig,
    #[serde(default)]
    pub flow: FlowConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub zones: Option<ZonesConfig>,
    pub iteration: IterationConfig,
    #[serde(default)]
    pub constants: BoundConstants,
    #[serde(default)]
    pub checks: ChecksConfig,
}

/// `[field]`: the initial velocity. Growth constants may be omitted for
/// prototype and annular fields, in which case they are fitted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldConfig {
    pub dim: usize,
    pub kappa: f64,
    #[serde(rename = "U")]
    pub u_scale: f64,
    #[serde(rename = "K0", default, skip_serializing_if = "Option::is_none")]
    pub k0: Option<f64>,
    #[serde(rename = "K1", default, skip_serializing_if = "Option::is_none")]
    pub k1: Option<f64>,
    #[serde(rename = "K2", default, skip_serializing_if = "Option::is_none")]
    pub k2: Option<f64>,
    #[serde(default)]
    pub alpha: f64,
    #[serde(default)]
    pub beta: f64,
    pub kind: FieldKind,
}

impl FieldConfig {
    pub fn build(&self) -> LabResult<VelocityFieldSpec> {
        let (k0, k1, k2) = match (self.k0, self.k1, self.k2) {
            (Some(a), Some(b), Some(c)) => (a, b, c),
            (k0, k1, k2) => {
                let direction = match &self.kind {
                    FieldKind::Prototype { direction } => direction.clone(),
                    FieldKind::AnnularPerturbed { base_direction, .. } => base_direction.clone(),
                    _ => {
                        return Err(LabError::Config(
                            "[field] K0, K1 and K2 are required unless kind is prototype or annular_perturbed".into(),
                        ))
                    }
                };
                let fitted = make_prototype(self.dim, self.u_scale, self.kappa, direction)?;
                (k0.unwrap_or(fitted.k0), k1.unwrap_or(fitted.k1), k2.unwrap_or(fitted.k2))
            }
        };
        VelocityFieldSpec::new(
            self.dim,
            self.kappa,
            self.u_scale,
            (k0, k1, k2),
            self.alpha,
            self.beta,
            self.kind.clone(),
        )
    }
}

/// `[flow]`: scalar comparison flow. `kappa` and `U` default to the field's.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
    #[serde(rename = "U", default, skip_serializing_if = "Option::is_none")]
    pub u_scale: Option<f64>,
    #[serde(default)]
    pub x_min: f64,
    /// Times and start points tabulated by the `flows` command.
    #[serde(default = "defaults::flow_times")]
    pub times: Vec<f64>,
    #[serde(default = "defaults::flow_points")]
    pub points: Vec<f64>,
    /// Iterates of the cut-off recursion reported by `flows`.
    #[serde(default = "defaults::recursion_steps")]
    pub recursion_steps: usize,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig {
            kappa: None,
            u_scale: None,
            x_min: 0.0,
            times: defaults::flow_times(),
            points: defaults::flow_points(),
            recursion_steps: defaults::recursion_steps(),
        }
    }
}

impl FlowConfig {
    pub fn params(&self, field: &FieldConfig) -> LabResult<FlowParams> {
        FlowParams::new(
            self.kappa.unwrap_or(field.kappa),
            self.u_scale.unwrap_or(field.u_scale),
            self.x_min,
        )
    }
}

/// `[zones]`: explicit radii `R_1 ≤ R_2 ≤ …`; `kappa` defaults to the field's.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZonesConfig {
    pub radii: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thinness: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fatness: Option<f64>,
    /// Time at which the `zones` command prints safe intervals (default `1/U`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time: Option<f64>,
}

impl ZonesConfig {
    pub fn layout(&self, field: &FieldConfig) -> ZoneLayout {
        ZoneLayout {
            radii: self.radii.clone(),
            kappa: self.kappa.unwrap_or(field.kappa),
            thinness: self.thinness,
            fatness: self.fatness,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AbnormalForm {
    /// `C_abn (M_t √t)^{κ′}`.
    #[default]
    Power,
    /// `C_abn (M_t √t / ⟨Ut⟩)^κ`.
    Rescaled,
}

/// `[checks.oracle]`: comparison of the viscous iterate against Cole-Hopf.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleCheckConfig {
    /// Times compared (must be grid slices); default: every slice `t > 0`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub times: Option<Vec<f64>>,
    #[serde(default = "defaults::oracle_lower")]
    pub lower: f64,
    #[serde(default = "defaults::oracle_upper")]
    pub upper: f64,
    /// Nodes where `|u_oracle|` is at most this are skipped.
    #[serde(default = "defaults::min_reference")]
    pub min_reference: f64,
    /// Largest accepted sup relative error.
    #[serde(default = "defaults::oracle_tolerance")]
    pub tolerance: f64,
    #[serde(default = "defaults::eta")]
    pub eta: f64,
    #[serde(default = "defaults::quad_tol")]
    pub quadrature_tol: f64,
    /// Iterate compared (default: the last one).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
}

impl Default for OracleCheckConfig {
    fn default() -> Self {
        OracleCheckConfig {
            times: None,
            lower: defaults::oracle_lower(),
            upper: defaults::oracle_upper(),
            min_reference: defaults::min_reference(),
            tolerance: defaults::oracle_tolerance(),
            eta: defaults::eta(),
            quadrature_tol: defaults::quad_tol(),
            m: None,
        }
    }
}

/// `[checks]`: which verification suites run and their thresholds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChecksConfig {
    #[serde(default = "defaults::enabled")]
    pub enabled: Vec<CheckId>,
    /// Largest accepted violation fraction.
    #[serde(default = "defaults::violation_max")]
    pub violation_max: f64,
    /// Largest accepted max/min ratio of a fitted constant across iterates.
    #[serde(default = "defaults::stability_ratio")]
    pub stability_ratio: f64,
    /// Slack added to `log θ` in the decay-slope test.
    #[serde(default = "defaults::slope_slack")]
    pub slope_slack: f64,
    /// Decay region `t ≤ θ T_min(t,x)`.
    #[serde(default = "defaults::theta")]
    pub theta: f64,
    /// First iterate of the decay regression.
    #[serde(default = "defaults::v_decay_m_min")]
    pub v_decay_m_min: usize,
    #[serde(default = "defaults::hyp1_samples")]
    pub hyp1_samples: usize,
    #[serde(default = "defaults::hyp1_radius")]
    pub hyp1_radius: f64,
    #[serde(default = "defaults::displacement_paths")]
    pub displacement_paths: usize,
    /// Start radii (along the first axis, alternating sign).
    #[serde(default = "defaults::displacement_radii")]
    pub displacement_radii: Vec<f64>,
    /// Default: grid slices in `[1/U, T]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub displacement_times: Option<Vec<f64>>,
    #[serde(default)]
    pub abnormal_form: AbnormalForm,
    #[serde(default = "defaults::one")]
    pub safe_zone_index: usize,
    /// Default `1/U`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub safe_zone_time: Option<f64>,
    #[serde(default = "defaults::safe_zone_starts")]
    pub safe_zone_starts: usize,
    /// Steps per characteristic in the safe-zone check.
    #[serde(default = "defaults::safe_zone_steps")]
    pub safe_zone_steps: usize,
    #[serde(default = "defaults::mt_paths")]
    pub mt_paths: usize,
    #[serde(default = "defaults::one_f")]
    pub mt_time: f64,
    #[serde(default = "defaults::mt_steps")]
    pub mt_steps: usize,
    #[serde(default = "defaults::one")]
    pub mt_dim: usize,
    /// Noise variance per unit time (0 gives the degenerate stub).
    #[serde(default = "defaults::mt_variance_rate")]
    pub mt_variance_rate: f64,
    #[serde(default = "defaults::mt_a_min")]
    pub mt_a_min: f64,
    #[serde(default = "defaults::mt_a_max")]
    pub mt_a_max: f64,
    #[serde(default = "defaults::mt_r2_min")]
    pub mt_r2_min: f64,
    #[serde(default = "defaults::lemma_samples")]
    pub lemma_samples: usize,
    #[serde(default = "defaults::lemma_steps")]
    pub lemma_steps: usize,
    #[serde(default)]
    pub oracle: OracleCheckConfig,
}

impl Default for ChecksConfig {
    fn default() -> Self {
        toml::from_str("").expect("all check settings have defaults")
    }
}

mod defaults {
    use super::CheckId;

    pub fn flow_times() -> Vec<f64> {
        vec![0.5, 1.0, 2.0, 4.0]
    }
    pub fn flow_points() -> Vec<f64> {
        vec![0.0, 1.0, 10.0]
    }
    pub fn recursion_steps() -> usize {
        8
    }
    pub fn enabled() -> Vec<CheckId> {
        CheckId::ALL.to_vec()
    }
    pub fn violation_max() -> f64 {
        0.01
    }
    pub fn stability_ratio() -> f64 {
        2.0
    }
    pub fn slope_slack() -> f64 {
        0.3
    }
    pub fn theta() -> f64 {
        0.5
    }
    pub fn v_decay_m_min() -> usize {
        2
    }
    pub fn hyp1_samples() -> usize {
        4000
    }
    pub fn hyp1_radius() -> f64 {
        1e3
    }
    pub fn displacement_paths() -> usize {
        10_000
    }
    pub fn displacement_radii() -> Vec<f64> {
        vec![0.0, 0.5, 1.0, 2.0, 4.0]
    }
    pub fn one() -> usize {
        1
    }
    pub fn one_f() -> f64 {
        1.0
    }
    pub fn safe_zone_starts() -> usize {
        1000
    }
    pub fn safe_zone_steps() -> usize {
        400
    }
    pub fn mt_paths() -> usize {
        10_000
    }
    pub fn mt_steps() -> usize {
        1000
    }
    pub fn mt_variance_rate() -> f64 {
        2.0
    }
    pub fn mt_a_min() -> f64 {
        2.0
    }
    pub fn mt_a_max() -> f64 {
        5.0
    }
    pub fn mt_r2_min() -> f64 {
        0.95
    }
    pub fn lemma_samples() -> usize {
        1000
    }
    pub fn lemma_steps() -> usize {
        200
    }
    pub fn oracle_lower() -> f64 {
        -10.0
    }
    pub fn oracle_upper() -> f64 {
        10.0
    }
    pub fn min_reference() -> f64 {
        0.1
    }
    pub fn oracle_tolerance() -> f64 {
        0.05
    }
    pub fn eta() -> f64 {
        1.0
    }
    pub fn quad_tol() -> f64 {
        1e-10
    }
}

impl ExperimentConfig {
    /// Parses TOML, collecting every unrecognized key.
    pub fn from_toml(text: &str) -> LabResult<Self> {
        let de = toml::Deserializer::parse(text).map_err(|e| LabError::Config(e.to_string()))?;
        let mut unknown = BTreeSet::new();
        let cfg: ExperimentConfig = serde_ignored::deserialize(de, |path| {
            unknown.insert(path.to_string());
        })
        .map_err(|e| LabError::Config(e.to_string()))?;
        if !unknown.is_empty() {
            let keys: Vec<String> = unknown.into_iter().collect();
            return Err(LabError::Config(format!("unknown configuration keys: {}", keys.join(", "))));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> LabResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| LabError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration is serializable")
    }

    pub fn layout(&self) -> Option<ZoneLayout> {
        if let FieldKind::AnnularPerturbed { layout, .. } = &self.field.kind {
            return Some(layout.clone());
        }
        self.zones.as_ref().map(|z| z.layout(&self.field))
    }

    /// Semantic validation, including that every enabled check has its inputs.
    pub fn validate(&self) -> LabResult<()> {
        let as_config = |e: LabError| LabError::Config(e.to_string());
        let field = self.field.build().map_err(as_config)?;
        self.iteration.validate().map_err(as_config)?;
        self.constants.validate().map_err(as_config)?;
        let flow = self.flow.params(&self.field).map_err(as_config)?;
        if field.dim != self.iteration.grid.dim {
            return Err(LabError::Config(format!(
                "[field] dim = {} but [iteration.grid] dim = {}",
                field.dim, self.iteration.grid.dim
            )));
        }
        if let Some(layout) = self.layout() {
            let report = layout.validate().map_err(as_config)?;
            if let Some(v) = report.first_violation {
                return Err(LabError::Config(format!(
                    "zone layout violates the {:?} rule at index {}: radii {:?} ({})",
                    v.rule, v.index, v.radii, v.detail
                )));
            }
        }
        let c = &self.checks;
        for (name, v) in [
            ("violation_max", c.violation_max),
            ("theta", c.theta),
        ] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(LabError::Config(format!("[checks] {name} = {v} must lie in (0, 1]")));
            }
        }
        if !(c.stability_ratio >= 1.0) {
            return Err(LabError::Config("[checks] stability_ratio must be >= 1".into()));
        }
        for id in &c.enabled {
            match id {
                CheckId::UniformBounds if !self.iteration.gradients => {
                    return Err(LabError::Config(
                        "check uniform_bounds needs [iteration] gradients = true".into(),
                    ))
                }
                CheckId::SafeZones => {
                    if self.layout().is_none() {
                        return Err(LabError::Config("check safe_zones needs a zone layout".into()));
                    }
                    if !matches!(field.kind, FieldKind::AnnularPerturbed { .. }) {
                        return Err(LabError::Config(
                            "check safe_zones needs an annular_perturbed field".into(),
                        ));
                    }
                }
                CheckId::Displacement => {
                    if !self.iteration.viscous {
                        return Err(LabError::Config("check displacement needs [iteration] viscous = true".into()));
                    }
                    let it = &self.iteration;
                    let t_lo = 1.0 / flow.u_scale;
                    let times: Vec<f64> = match &c.displacement_times {
                        Some(ts) => ts.clone(),
                        None => it.grid.slices.iter().cloned().filter(|&t| t >= t_lo * (1.0 - 1e-12)).collect(),
                    };
                    if times.is_empty() || times.iter().any(|&t| !(t > 0.0 && t <= it.horizon)) {
                        return Err(LabError::Config(format!(
                            "check displacement needs times in (0, {}]; got {times:?} (default: grid slices t >= 1/U = {t_lo})",
                            it.horizon
                        )));
                    }
                }
                CheckId::VDecay if self.iteration.m_max < 3 => {
                    return Err(LabError::Config("check v_decay needs [iteration] m_max >= 3".into()))
                }
                CheckId::Oracle if field.dim != 1 || !self.iteration.viscous => {
                    return Err(LabError::Config(
                        "check oracle needs a one-dimensional viscous run".into(),
                    ))
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Hash of everything that determines the iterates.
    pub fn simulation_hash(&self) -> String {
        #[derive(Serialize)]
        struct Key<'a> {
            field: &'a FieldConfig,
            iteration: &'a IterationConfig,
        }
        let text = toml::to_string(&Key {
            field: &self.field,
            iteration: &self.iteration,
        })
        .expect("serializable");
        hex(&Sha256::digest(text.as_bytes()))
    }
}

pub fn layout_hash(layout: &ZoneLayout) -> String {
    let text = serde_json::to_string(layout).expect("serializable");
    hex(&Sha256::digest(text.as_bytes()))[..16].to_string()
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

struct KeyDoc {
    key: &'static str,
    kind: &'static str,
    default: &'static str,
    doc: &'static str,
}

const fn k(key: &'static str, kind: &'static str, default: &'static str, doc: &'static str) -> KeyDoc {
    KeyDoc { key, kind, default, doc }
}

const KEYS: &[KeyDoc] = &[
    k("output", "path", "out", "output directory (overridden by --out)"),
    k("field.dim", "int", "required", "spatial dimension d (1..=3 for Monte Carlo runs)"),
    k("field.kappa", "float", "required", "growth exponent κ > 1"),
    k("field.U", "float", "required", "velocity scale U >= 1"),
    k("field.K0", "float", "fitted", "value bound constant"),
    k("field.K1", "float", "fitted", "gradient bound constant"),
    k("field.K2", "float", "fitted", "second-derivative bound constant"),
    k("field.alpha", "float", "0", "polynomial growth exponent α of the a priori bounds"),
    k("field.beta", "float", "0", "exponent β in K0 <= U^(β/2+1)"),
    k("field.kind.type", "string", "required", "prototype | annular_perturbed | linear_profile | constant | tabulated_grid | shock | comparison"),
    k("field.kind.direction", "table", "identity", "prototype: direction map {type = identity|negate|rotation|matrix}"),
    k("field.kind.base_direction", "table", "identity", "annular_perturbed: direction map of the base prototype"),
    k("field.kind.layout", "table", "required", "annular_perturbed: zone layout {radii, kappa, thinness, fatness}"),
    k("field.kind.amplitudes", "float[]", "required", "annular_perturbed: bump amplitude per dangerous zone"),
    k("field.kind.bump_direction", "float[]", "required", "annular_perturbed: unit vector of the bumps"),
    k("field.kind.slope", "float", "required", "linear_profile: u_0(x) = slope·x"),
    k("field.kind.value", "float[]", "required", "constant: the constant vector"),
    k("field.kind.lower", "float[]", "required", "tabulated_grid: box lower corner"),
    k("field.kind.upper", "float[]", "required", "tabulated_grid: box upper corner"),
    k("field.kind.shape", "int[]", "required", "tabulated_grid: nodes per axis"),
    k("field.kind.values", "float[]", "required", "tabulated_grid: row-major node values"),
    k("field.kind.amplitude", "float", "required", "shock: u_0(x) = −a·tanh(a x/(2η))"),
    k("field.kind.eta", "float", "required", "shock: viscosity η of the stationary profile"),
    k("field.kind.x_min", "float", "required", "comparison: cut-off in U(x_min+|x|)^(1/κ)"),
    k("flow.kappa", "float", "field.kappa", "κ of the comparison flow"),
    k("flow.U", "float", "field.U", "U of the comparison flow"),
    k("flow.x_min", "float", "0", "cut-off x_min"),
    k("flow.times", "float[]", "[0.5, 1, 2, 4]", "times tabulated by `flows`"),
    k("flow.points", "float[]", "[0, 1, 10]", "start points tabulated by `flows`"),
    k("flow.recursion_steps", "int", "8", "cut-off recursion iterates printed by `flows`"),
    k("zones.radii", "float[]", "required", "radii R_1 <= R_2 <= ..."),
    k("zones.kappa", "float", "field.kappa", "κ of the thinness rule"),
    k("zones.thinness", "float", "1", "C in R_2i − R_2i−1 <= C·R_2i−1^(1/κ)"),
    k("zones.fatness", "float", "3", "ε in R_2i+1 >= (1+ε)·R_2i"),
    k("zones.time", "float", "1/U", "time at which `zones` prints safe intervals"),
    k("iteration.m_max", "int", "required", "last Picard iterate"),
    k("iteration.mc_samples", "int", "required", "Monte Carlo paths N (antithetic pairs)"),
    k("iteration.sde_steps", "int", "required", "integration steps over the full horizon"),
    k("iteration.horizon", "float", "required", "time horizon T"),
    k("iteration.viscous", "bool", "required", "viscous (Monte Carlo) or non-viscous scheme"),
    k("iteration.seed", "int", "required", "base seed (overridden by --seed)"),
    k("iteration.gamma", "float", "0.5", "Hölder exponent γ in (0,1) of the gradient decay check"),
    k("iteration.gradients", "bool", "false", "also transport gradients"),
    k("iteration.se_ceiling", "float", "none", "flag iterates whose standard error exceeds this"),
    k("iteration.extrapolation", "string", "envelope", "outside the grid: envelope | clamp | error"),
    k("iteration.blowup_factor", "float", "4", "escape radius in units of the grid half-width"),
    k("iteration.grid.dim", "int", "required", "grid dimension"),
    k("iteration.grid.half_width", "float", "required", "grid box [−L, L]^d"),
    k("iteration.grid.nodes", "int", "required", "nodes per axis"),
    k("iteration.grid.slices", "float[]", "required", "time slices, starting at 0, increasing"),
    k("constants.C", "float", "2", "induction constant C > 1"),
    k("constants.C_kappa", "float", "4", "displacement constant C_κ > 1"),
    k("constants.kappa_prime", "float", "2", "abnormal-regime exponent κ′ >= 1"),
    k("constants.C_abn", "float", "8", "abnormal-regime prefactor"),
    k("constants.c_tail", "float", "0.25", "Gaussian tail rate of M_t"),
    k("constants.core_threshold_factor", "float", "32", "core radius factor"),
    k("checks.enabled", "string[]", "all", "hyp1 | uniform_bounds | displacement | safe_zones | v_decay | mt_tail | fixed_point | oracle"),
    k("checks.violation_max", "float", "0.01", "largest accepted violation fraction"),
    k("checks.stability_ratio", "float", "2", "largest accepted max/min of a fitted constant over m"),
    k("checks.slope_slack", "float", "0.3", "slack added to log θ in decay-slope tests"),
    k("checks.theta", "float", "0.5", "decay region t <= θ·T_min(t,x)"),
    k("checks.v_decay_m_min", "int", "2", "first iterate of the decay regression"),
    k("checks.hyp1_samples", "int", "4000", "sample points of the growth check"),
    k("checks.hyp1_radius", "float", "1000", "sample ball radius of the growth check"),
    k("checks.displacement_paths", "int", "10000", "noise paths per iterate in the displacement check"),
    k("checks.displacement_radii", "float[]", "[0, 0.5, 1, 2, 4]", "start radii of the displacement check"),
    k("checks.displacement_times", "float[]", "slices in [1/U, T]", "times of the displacement check"),
    k("checks.abnormal_form", "string", "power", "abnormal bound: power (C_abn(M√t)^κ′) | rescaled (C_abn(M√t/⟨Ut⟩)^κ)"),
    k("checks.safe_zone_index", "int", "1", "safe zone i whose interval I_i(t) is tested"),
    k("checks.safe_zone_time", "float", "1/U", "time t of the safe-zone check"),
    k("checks.safe_zone_starts", "int", "1000", "start points in I_i(t)"),
    k("checks.safe_zone_steps", "int", "400", "integration steps per characteristic"),
    k("checks.mt_paths", "int", "10000", "paths of the running-maximum tail check"),
    k("checks.mt_time", "float", "1", "horizon t of M_t"),
    k("checks.mt_steps", "int", "1000", "steps per noise path"),
    k("checks.mt_dim", "int", "1", "noise dimension"),
    k("checks.mt_variance_rate", "float", "2", "noise variance per unit time (0: degenerate stub)"),
    k("checks.mt_a_min", "float", "2", "smallest A of the tail regression"),
    k("checks.mt_a_max", "float", "5", "largest A of the tail regression"),
    k("checks.mt_r2_min", "float", "0.95", "smallest accepted R² of the tail regression"),
    k("checks.lemma_samples", "int", "1000", "random parameter sets of the fixed-point check"),
    k("checks.lemma_steps", "int", "200", "recursion steps per parameter set"),
    k("checks.oracle.times", "float[]", "all slices > 0", "times compared against Cole-Hopf"),
    k("checks.oracle.lower", "float", "-10", "comparison region lower end"),
    k("checks.oracle.upper", "float", "10", "comparison region upper end"),
    k("checks.oracle.min_reference", "float", "0.1", "skip nodes with |u_oracle| <= this"),
    k("checks.oracle.tolerance", "float", "0.05", "largest accepted sup relative error"),
    k("checks.oracle.eta", "float", "1", "viscosity of the oracle"),
    k("checks.oracle.quadrature_tol", "float", "1e-10", "oracle quadrature tolerance"),
    k("checks.oracle.m", "int", "m_max", "iterate compared"),
];

/// Text listing of every configuration key.
pub fn help_config() -> String {
    let mut out = String::from("Configuration keys (TOML; dotted names are nested tables):\n\n");
    let mut section = "";
    for kd in KEYS {
        let s = kd.key.split('.').next().unwrap_or("");
        if s != section && kd.key.contains('.') {
            out.push_str(&format!("[{s}]\n"));
            section = s;
        }
        out.push_str(&format!("  {:<34} {:<9} default {:<18} {}\n", kd.key, kd.kind, kd.default, kd.doc));
    }
    out
}

/// Keys documented by [`help_config`].
pub fn documented_keys() -> Vec<&'static str> {
    KEYS.iter().map(|k| k.key).collect()
}
