//! Synthetic task generators.

mod batch;
pub mod benchmark;
pub mod gp;
pub mod wheel;

pub use batch::TaskBatch;
pub use benchmark::BenchmarkFunction;
pub use gp::{
    kernel_matrix, sample_gp_batch, sample_gp_values, split_context_target, ContextRule,
    GpTaskConfig, KernelFamily, KernelSpec,
};
pub use wheel::{sample_disk, sample_wheel_batch, WheelOutcome, WheelProblem, WheelTaskConfig};
