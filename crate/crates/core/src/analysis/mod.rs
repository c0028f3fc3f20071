//! Cost model, EM-view oracle, translation robustness, runtime scaling and
//! assignment-map export.

pub mod em;
pub mod flops;
pub mod maps;
pub mod scaling;
pub mod shift;

pub use em::{em_agreement, em_one_step_oracle, EmStep};
pub use flops::{crossover_n, flops_estimate, softmax_flops, FlopsBreakdown};
pub use maps::export_assignment_maps;
pub use scaling::{measure_scaling, Mechanism, ScalingReport, SlopeBand};
pub use shift::{shift_robustness, ShiftExperiment, ShiftMode, ShiftReport};
