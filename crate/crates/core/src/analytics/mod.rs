//! Metrics, lifetime experiments, calibration and renderings.

pub mod calibrate;
pub mod lifetime;
pub mod metrics;
pub mod render;

pub use calibrate::{calibrate, CalibrationReport, CalibrationRequest, SearchSpace};
pub use lifetime::{
    check_lifetime_targets, lifetime_experiment, lifetime_experiment_unchecked, LifetimeEnd,
    LifetimeReport, TargetCheck,
};
pub use metrics::{
    attribution, attribution_of, classify, cons_gates, cons_gates_of, summarize, summary_table,
    AttributionSummary, PerformanceTier, Segmentation, SessionSummary, SummaryTable, Trial,
    TrialBreakdown, TrialEnd,
};
pub use render::{render_sequence, render_session_circle, render_tiers};
