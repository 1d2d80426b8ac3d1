//! Driving-style quantification and style-guided adaptation of a toy
//! multi-proposal planner.
//!
//! The crate covers the whole loop: a seeded car-following world produces
//! per-driver trajectory logs, handcrafted indicators turn logs into style
//! vectors, MMD-based scores compare style distributions, a small MLP learns
//! to predict style from short trajectory segments, and that reward model
//! then steers head-only fine-tuning of the planner. [`pipeline`] chains the
//! stages with file-based handoffs.

pub mod closed_loop;
pub mod error;
pub mod finetune;
pub mod indicators;
pub mod io;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod planner;
pub mod reward;
pub mod seed;
pub mod trajectory;
pub mod world;

pub use closed_loop::{rollout, ControlCommand, Planner, RolloutConfig, RolloutMetrics};
pub use error::{Error, ErrorKind, Result};
pub use finetune::{FinetuneConfig, FinetuneReport, Variant};
pub use indicators::{IndicatorCatalog, IndicatorVector, SelectionResult};
pub use metrics::{mmd_squared, mmdss, SimilarityReport, StyleDistribution, StyleVector};
pub use pipeline::{Layout, PipelineConfig};
pub use planner::{PlannerInput, PlannerParams, ProposalSet};
pub use reward::{RewardModel, RewardNetParams};
pub use trajectory::{EgoState, LeadObservation, PlannedTrajectory, Pose, TrajectoryLog, Waypoint};
pub use world::{Corpus, DriverProfile, ScenarioSpec};
