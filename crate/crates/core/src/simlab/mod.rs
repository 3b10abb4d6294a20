//! Experiment harness: tree generators, input schedules, the seeded runner,
//! mode comparisons, rate sweeps and the post-hoc measurements (settling,
//! fidelity audit, equipoise).
//!
//! Every random quantity derives from the configured seed list. A seed fixes
//! the generated tree, and each mode of that seed draws selections, outcomes
//! and inputs from its own streams, so reruns are bit-identical no matter how
//! seeds are scheduled across threads.

mod analysis;
mod experiment;
mod generate;
pub mod output;
mod schedule;

pub use analysis::{
    equipoise_stat, fidelity_audit, measure_settling, AuditReport, DepthTally, SettlingCriterion, SettlingDetector,
    WeightSnapshot,
};
pub use experiment::{
    compare_modes, run_experiment, run_mode, run_seed, sweep_eta, Aggregate, ComparisonCell, EtaConfig,
    ExperimentConfig, ExperimentResult, Metric, ModeMetrics, ModeSelection, NodeSettling, SeedResult, Stat,
    SweepRow, SweepTable, Trajectory, TreeSource, SNAPSHOT_BUDGET,
};
pub use generate::{gen_flat_tree, gen_heterogeneous_tree, gen_uniform_tree, QualitySampler};
pub use schedule::{block_schedule, InputSchedule, ScheduleSpec};
