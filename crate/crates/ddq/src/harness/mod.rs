//! Run orchestration: configuration, the serial trainer, evaluation,
//! benchmark mode, and the CSV artifacts they emit.

pub mod bench;
pub mod config;
pub mod csv;
pub mod eval;
pub mod serial;

pub use bench::{bench_size, run_scaling, BenchRow, ScalingRun};
pub use config::{arch_to_string, parse_arch, RunConfig};
pub use eval::{evaluate, random_baseline, EvalReport};
pub use serial::{train_serial, CurvePoint, SerialOptions, SerialRun, REWARD_WINDOW};
