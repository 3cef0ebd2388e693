//! Experiment orchestration: configuration, verification suites, reports
//! and the command-line front end.

pub mod checks;
pub mod cli;
pub mod config;
pub mod report;

use serde::{Deserialize, Serialize};

pub use checks::Experiment;
pub use config::{help_config, AbnormalForm, ExperimentConfig};
pub use report::{BoundReport, Status, SubReport};

/// The verification suites.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckId {
    Hyp1,
    UniformBounds,
    Displacement,
    SafeZones,
    VDecay,
    MtTail,
    FixedPoint,
    Oracle,
}

impl CheckId {
    pub const ALL: [CheckId; 8] = [
        CheckId::Hyp1,
        CheckId::UniformBounds,
        CheckId::Displacement,
        CheckId::SafeZones,
        CheckId::VDecay,
        CheckId::MtTail,
        CheckId::FixedPoint,
        CheckId::Oracle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CheckId::Hyp1 => "hyp1",
            CheckId::UniformBounds => "uniform_bounds",
            CheckId::Displacement => "displacement",
            CheckId::SafeZones => "safe_zones",
            CheckId::VDecay => "v_decay",
            CheckId::MtTail => "mt_tail",
            CheckId::FixedPoint => "fixed_point",
            CheckId::Oracle => "oracle",
        }
    }

    /// Whether the check consumes Picard iterates.
    pub fn needs_iterates(self) -> bool {
        matches!(
            self,
            CheckId::UniformBounds | CheckId::Displacement | CheckId::SafeZones | CheckId::VDecay | CheckId::Oracle
        )
    }
}

/// Anchor strings naming the bound each report tests.
pub mod anchors {
    pub const SUBLINEAR_GROWTH: &str = "sublinear-growth";
    pub const UNIFORM_VELOCITY: &str = "uniform-velocity-bound";
    pub const GRADIENT: &str = "gradient-bound";
    pub const HESSIAN: &str = "hessian-bound";
    pub const DISPLACEMENT_NORMAL: &str = "displacement-normal-regime";
    pub const DISPLACEMENT_ABNORMAL: &str = "displacement-abnormal-regime";
    pub const SAFE_ZONE: &str = "safe-zone-stability";
    pub const DIFFERENCE_DECAY: &str = "difference-decay";
    pub const GRADIENT_DIFFERENCE_DECAY: &str = "gradient-difference-decay";
    pub const RUNNING_MAX_TAIL: &str = "running-max-tail";
    pub const FIXED_POINT: &str = "fixed-point-lemma";
    pub const COLE_HOPF: &str = "cole-hopf-reference";

    /// Anchors a full verification run must cover.
    pub const REQUIRED: [&str; 11] = [
        SUBLINEAR_GROWTH,
        UNIFORM_VELOCITY,
        GRADIENT,
        HESSIAN,
        DISPLACEMENT_NORMAL,
        DISPLACEMENT_ABNORMAL,
        SAFE_ZONE,
        DIFFERENCE_DECAY,
        GRADIENT_DIFFERENCE_DECAY,
        RUNNING_MAX_TAIL,
        FIXED_POINT,
    ];
}
