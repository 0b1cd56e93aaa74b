//! Deterministic, executable form of the distributed linear iteration that
//! underlies the asynchronous runtime: communication schedules and their
//! assumption checks, the linear-model replay, agreement coefficients, and
//! the agreement sequence. This is the oracle the runtime is verified
//! against.

pub mod linear;
pub mod phi;
pub mod schedule;

pub use linear::{run_linear_model, LinearReplay, StepLog};
pub use phi::{
    agreement_coefficients, agreement_sequence, default_probes, disagreement_bound_sequence,
    limit_coefficients, AgreementCoefficients, AgreementTrajectory,
};
pub use schedule::{
    equal_neighbor_weights, random_valid_schedule, read_schedule, write_schedule, AgentRow,
    AssumptionCheck, CheckStatus, CommSchedule, MeasuredConstants, ScheduleConstants,
    ScheduleStep, ValidationReport, WeightEntry,
};
