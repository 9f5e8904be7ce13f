//! Confidence-annotated trajectory datasets.
//!
//! On disk a dataset is JSONL: a header line
//! `{"schema":"aptus-v1","embedding_dim":N}` followed by one JSON object per
//! step. Steps of one trajectory are consecutive and indexed from zero.

use std::collections::BTreeSet;
use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::action::Action;
use crate::score::Confidence;

pub const SCHEMA: &str = "aptus-v1";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Schema { line: usize, message: String },
    #[error(
        "line {line}: trajectory {trajectory_id:?} step {step_index} has {history_len} history entries"
    )]
    InconsistentHistory {
        line: usize,
        trajectory_id: String,
        step_index: usize,
        history_len: usize,
    },
}

fn schema_err(line: usize, message: impl Into<String>) -> DatasetError {
    DatasetError::Schema {
        line,
        message: message.into(),
    }
}

/// Identifies one step across a dataset.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct StepRef {
    pub trajectory_id: String,
    pub step_index: usize,
}

impl StepRef {
    pub fn new(trajectory_id: impl Into<String>, step_index: usize) -> Self {
        StepRef {
            trajectory_id: trajectory_id.into(),
            step_index,
        }
    }
}

impl fmt::Display for StepRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}#{}", self.trajectory_id, self.step_index)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStep {
    pub trajectory_id: String,
    pub step_index: usize,
    /// The goal (user instruction).
    pub goal: String,
    /// Serialized actions executed before this step.
    pub history: Vec<String>,
    pub screenshot_ref: String,
    pub embedding: Option<Vec<f64>>,
    pub gt_action: Action,
    pub gt_confidence: Confidence,
    pub pred_action: Option<Action>,
    pub pred_confidence: Option<Confidence>,
}

impl TrajectoryStep {
    pub fn step_ref(&self) -> StepRef {
        StepRef::new(self.trajectory_id.clone(), self.step_index)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub trajectory_id: String,
    pub goal: String,
    pub steps: Vec<TrajectoryStep>,
}

impl Trajectory {
    /// Whether the recorded episode ends on COMPLETE or IMPOSSIBLE.
    pub fn terminates_normally(&self) -> bool {
        self.steps.last().is_some_and(|s| s.gt_action.is_terminal())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DatasetStats {
    pub trajectory_count: usize,
    pub screen_count: usize,
    pub goal_count: usize,
}

impl fmt::Display for DatasetStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {}", self.trajectory_count, self.screen_count, self.goal_count)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub embedding_dim: usize,
    pub trajectories: Vec<Trajectory>,
}

impl Dataset {
    pub fn steps(&self) -> impl Iterator<Item = &TrajectoryStep> {
        self.trajectories.iter().flat_map(|t| t.steps.iter())
    }

    pub fn trajectory(&self, id: &str) -> Option<&Trajectory> {
        self.trajectories.iter().find(|t| t.trajectory_id == id)
    }

    pub fn stats(&self) -> DatasetStats {
        dataset_stats(&self.trajectories)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    schema: String,
    embedding_dim: usize,
}

/// Reads and validates a dataset stream.
pub fn load_dataset<R: BufRead>(reader: R) -> Result<Dataset, DatasetError> {
    let mut lines = reader.lines().enumerate();

    let (header_line, header) = loop {
        match lines.next() {
            None => return Err(schema_err(1, "missing header line")),
            Some((i, line)) => {
                let line = line?;
                if !line.trim().is_empty() {
                    break (i + 1, line);
                }
            }
        }
    };
    let header: Header = serde_json::from_str(&header)
        .map_err(|e| schema_err(header_line, format!("bad header: {e}")))?;
    if header.schema != SCHEMA {
        return Err(schema_err(header_line, format!("unsupported schema {:?}", header.schema)));
    }
    if header.embedding_dim == 0 {
        return Err(schema_err(header_line, "embedding_dim must be positive"));
    }

    let mut trajectories: Vec<Trajectory> = Vec::new();
    let mut seen = BTreeSet::new();
    for (i, line) in lines {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let step: TrajectoryStep =
            serde_json::from_str(&line).map_err(|e| schema_err(line_no, e.to_string()))?;

        if let Some(e) = &step.embedding {
            if e.len() != header.embedding_dim {
                return Err(schema_err(
                    line_no,
                    format!("embedding has {} entries, header declares {}", e.len(), header.embedding_dim),
                ));
            }
            if e.iter().any(|v| !v.is_finite()) {
                return Err(schema_err(line_no, "embedding has non-finite entries"));
            }
        }
        if step.pred_action.is_some() != step.pred_confidence.is_some() {
            return Err(schema_err(line_no, "pred_action and pred_confidence must be given together"));
        }
        if step.history.len() != step.step_index {
            return Err(DatasetError::InconsistentHistory {
                line: line_no,
                trajectory_id: step.trajectory_id.clone(),
                step_index: step.step_index,
                history_len: step.history.len(),
            });
        }
        if let Some(bad) = step.history.iter().find(|h| crate::action::parse_action(h).is_err()) {
            return Err(schema_err(line_no, format!("history entry {bad:?} is not a valid action")));
        }

        let continues = trajectories
            .last()
            .is_some_and(|t| t.trajectory_id == step.trajectory_id);
        if continues {
            let current = trajectories.last_mut().expect("checked above");
            if step.step_index != current.steps.len() {
                return Err(schema_err(
                    line_no,
                    format!(
                        "trajectory {:?}: expected step {}, found {}",
                        step.trajectory_id,
                        current.steps.len(),
                        step.step_index
                    ),
                ));
            }
            if step.goal != current.goal {
                return Err(schema_err(line_no, format!("trajectory {:?} changes goal", step.trajectory_id)));
            }
            current.steps.push(step);
        } else {
            if !seen.insert(step.trajectory_id.clone()) {
                return Err(schema_err(
                    line_no,
                    format!("trajectory {:?} is not contiguous", step.trajectory_id),
                ));
            }
            if step.step_index != 0 {
                return Err(schema_err(
                    line_no,
                    format!("trajectory {:?} must start at step 0", step.trajectory_id),
                ));
            }
            trajectories.push(Trajectory {
                trajectory_id: step.trajectory_id.clone(),
                goal: step.goal.clone(),
                steps: vec![step],
            });
        }
    }

    Ok(Dataset {
        embedding_dim: header.embedding_dim,
        trajectories,
    })
}

pub fn load_dataset_file(path: impl AsRef<std::path::Path>) -> Result<Dataset, DatasetError> {
    let file = std::fs::File::open(path)?;
    load_dataset(std::io::BufReader::new(file))
}

/// Writes the header then every step, one JSON object per line.
pub fn write_dataset<W: Write>(mut out: W, dataset: &Dataset) -> Result<(), DatasetError> {
    let header = Header {
        schema: SCHEMA.to_string(),
        embedding_dim: dataset.embedding_dim,
    };
    serde_json::to_writer(&mut out, &header).map_err(std::io::Error::from)?;
    out.write_all(b"\n")?;
    for step in dataset.steps() {
        serde_json::to_writer(&mut out, step).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Counts trajectories, screens (steps) and distinct goal strings.
pub fn dataset_stats(trajectories: &[Trajectory]) -> DatasetStats {
    let goals: BTreeSet<&str> = trajectories.iter().map(|t| t.goal.as_str()).collect();
    DatasetStats {
        trajectory_count: trajectories.len(),
        screen_count: trajectories.iter().map(|t| t.steps.len()).sum(),
        goal_count: goals.len(),
    }
}
