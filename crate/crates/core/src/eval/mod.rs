//! Evaluation: accuracy against the oracle, closed-loop tracking, obstacle
//! clearance, latency and report files.

mod accuracy;
mod closed_loop;
mod latency;
mod report;

pub use accuracy::{
    accuracy_from, accuracy_sweep, compare, relative_accuracy, sample_states, sequence_cost, solve_state, AccuracyConfig,
    AccuracyMode, AccuracyReport, AccuracyRow, Comparison,
};
pub use closed_loop::{
    closed_loop_eval, obstacle_eval, run_closed_loop, ClearanceReport, ClosedLoopReport, Controller, OracleController,
    PolicyController, ReplayController, StepLog, DIVERGENCE_LATERAL,
};
pub use latency::{latency_bench, LatencyRow};
pub use report::{
    checkpoint_id, config_hash, emit_report, read_long_csv, write_long_csv, EvalReport, LongRow, Provenance, ACCURACY_HEADER,
    LATENCY_HEADER, LONG_HEADER, TRAJECTORY_HEADER,
};

/// Steps of a closed-loop evaluation run (17 s at 10 Hz).
pub const EVAL_STEPS: usize = 170;
