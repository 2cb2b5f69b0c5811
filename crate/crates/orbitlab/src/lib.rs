//! orbitlab: a desk-scale lab for budget-conditioned reasoning policies.
//!
//! The pipeline trains a tiny autoregressive policy on a synthetic verifiable
//! task ("chain arithmetic") so that four prompt-triggered reasoning modes —
//! low / mid / high / xhigh — emit progressively longer scratchpads and reach
//! progressively higher accuracy. It has three phases:
//!
//! 1. **Exploration**: group-relative policy optimization under a shrinking
//!    output-length budget (one expansion stage, then halving compression
//!    stages), harvesting one frontier expert checkpoint per mode.
//! 2. **Merging**: uniform parameter averaging of the frontier experts into a
//!    student initialization.
//! 3. **Exploitation**: multi-teacher on-policy reverse-KL distillation that
//!    fuses the experts' mode-specific behavior into a single student.
//!
//! Everything runs on a self-contained f64 tensor/autodiff stack (`numeric`),
//! is deterministic given a global seed, and persists through the checkpoint,
//! JSONL-metrics and report formats used by the `orbitlab` CLI.

pub mod cli;
pub mod config;
pub mod distill;
pub mod eval;
pub mod grpo;
pub mod manifest;
pub mod merge;
pub mod metrics;
pub mod numeric;
pub mod policy;
pub mod scheduler;
pub mod seeding;
pub mod tasks;


pub use policy::{ModeId, ModeTag, ModelConfig, PolicyParams, Trajectory};
pub use tasks::{Instance, TaskDataset};
