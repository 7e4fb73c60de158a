//! Curriculum data planning: how many tokens to draw from each
//! (source, language) cell in a training stage, drawing them from a
//! document population, and the learning-rate schedule.
//!
//! Shares are token shares throughout.

mod plan;
mod sample;
mod schedule;

pub use plan::{plan_mixture, CurriculumError, MixturePlan, MixtureTarget, PlanCell, Stage, DEFAULT_MAX_REPEAT};
pub use sample::{sample_stage, RealizedStats, StageSample};
pub use schedule::{learning_rate, ScheduleConfig, ScheduleError};
