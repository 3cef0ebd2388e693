use serde::{Deserialize, Serialize};

use crate::error::{LabError, LabResult};

/// Constants of the bounds under test. None is fixed by the theory beyond
/// its sign/size constraints, so all are configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundConstants {
    /// Induction constant `C > 1`.
    #[serde(rename = "C", default = "defaults::c")]
    pub c: f64,
    /// Displacement constant `C_κ > 1`.
    #[serde(rename = "C_kappa", default = "defaults::c_kappa")]
    pub c_kappa: f64,
    /// Abnormal-regime exponent `κ′ ≥ 1`.
    #[serde(default = "defaults::kappa_prime")]
    pub kappa_prime: f64,
    /// Abnormal-regime prefactor.
    #[serde(rename = "C_abn", default = "defaults::c_abn")]
    pub c_abn: f64,
    /// Gaussian tail rate in `P[M_t > A] ≲ e^{-c A²}`.
    #[serde(default = "defaults::c_tail")]
    pub c_tail: f64,
    /// Core radius multiplier in `factor · (16 C ⟨Ut⟩)^{κ/(κ−1)}`.
    #[serde(default = "defaults::core_threshold_factor")]
    pub core_threshold_factor: f64,
}

mod defaults {
    pub fn c() -> f64 {
        2.0
    }
    pub fn c_kappa() -> f64 {
        4.0
    }
    pub fn kappa_prime() -> f64 {
        2.0
    }
    pub fn c_abn() -> f64 {
        8.0
    }
    pub fn c_tail() -> f64 {
        0.25
    }
    pub fn core_threshold_factor() -> f64 {
        32.0
    }
}

impl Default for BoundConstants {
    fn default() -> Self {
        BoundConstants {
            c: defaults::c(),
            c_kappa: defaults::c_kappa(),
            kappa_prime: defaults::kappa_prime(),
            c_abn: defaults::c_abn(),
            c_tail: defaults::c_tail(),
            core_threshold_factor: defaults::core_threshold_factor(),
        }
    }
}

impl BoundConstants {
    pub fn validate(&self) -> LabResult<()> {
        let all = [
            ("C", self.c),
            ("C_kappa", self.c_kappa),
            ("kappa_prime", self.kappa_prime),
            ("C_abn", self.c_abn),
            ("c_tail", self.c_tail),
            ("core_threshold_factor", self.core_threshold_factor),
        ];
        for (name, v) in all {
            if !(v.is_finite() && v > 0.0) {
                return Err(LabError::param(name, v, "must be finite and > 0"));
            }
        }
        if self.c <= 1.0 {
            return Err(LabError::param("C", self.c, "must be > 1"));
        }
        if self.c_kappa <= 1.0 {
            return Err(LabError::param("C_kappa", self.c_kappa, "must be > 1"));
        }
        if self.kappa_prime < 1.0 {
            return Err(LabError::param("kappa_prime", self.kappa_prime, "must be >= 1"));
        }
        Ok(())
    }
}
