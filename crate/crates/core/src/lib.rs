//! Harness for confidence-gated GUI agents.
//!
//! * [`action`]: the eleven-verb action grammar.
//! * [`trajectory`]: confidence-annotated trajectory datasets.
//! * [`engine`]: automated and gated interaction loops over trajectory replay.
//! * [`retrieval`]: step embeddings and cosine top-k.
//! * [`forge`]: preference-triplet construction for confidence correction.
//! * [`loss`]: SFT and DPO objectives on a tabular toy policy.
//! * [`metrics`]: gate taxonomy, HSR, IP, AIF, Type/SR, TSR, RE.
//! * [`queue`]: the human intervention queue.
//! * [`sweep`]: dataset-wide runs and the γ sweep.

pub mod action;
pub mod engine;
pub mod forge;
pub mod loss;
pub mod metrics;
pub mod queue;
pub mod retrieval;
pub mod score;
pub mod sweep;
pub mod trajectory;

pub use action::{parse_action, serialize_action, Action, ActionError, ActionKind, Direction, Point};
pub use engine::{AgentDecision, EpisodeLog, EpisodeStatus};
pub use forge::{build_dpo_dataset, farthest_score, DpoTriplet, ForgeConfig};
pub use metrics::{classify_step, compute_report, MatchRule, MetricsReport};
pub use score::{decision, Confidence, Gamma};
pub use trajectory::{dataset_stats, load_dataset, Dataset, DatasetStats, StepRef, Trajectory, TrajectoryStep};
