//! Preference-triplet construction for confidence bias correction.
//!
//! For every anchor step whose predicted confidence lands on the other side
//! of γ from its annotated confidence, the anchor's nearest neighbours (by
//! cosine similarity) above the similarity threshold λ each yield one
//! triplet: the neighbour's ground truth is *chosen*, the model's prediction
//! for the neighbour is *rejected*. When the model already gates the
//! neighbour correctly its score is replaced by the score farthest from the
//! annotation, so the rejected half always carries a wrong confidence.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::action::Action;
use crate::retrieval::{RetrievalError, RetrievalIndex};
use crate::score::{decision, Confidence, Gamma};
use crate::trajectory::{StepRef, TrajectoryStep};

pub const DEFAULT_K: usize = 5;
pub const DEFAULT_LAMBDA: f64 = 0.5;

#[derive(Debug, Error)]
pub enum ForgeError {
    #[error("similarity threshold {0} outside [-1, 1]")]
    Lambda(f64),
    #[error("step {0} is not part of the dataset")]
    UnknownStep(StepRef),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForgeConfig {
    pub gamma: Gamma,
    pub lambda: f64,
    pub k: usize,
    /// Whether an anchor may retrieve itself.
    pub include_self: bool,
    /// Drop repeated `(context, rejected)` pairs reached from several anchors.
    pub dedupe: bool,
}

impl ForgeConfig {
    pub fn new(gamma: Gamma, lambda: f64, k: usize) -> Result<Self, ForgeError> {
        if !(-1.0..=1.0).contains(&lambda) {
            return Err(ForgeError::Lambda(lambda));
        }
        Ok(ForgeConfig {
            gamma,
            lambda,
            k,
            include_self: true,
            dedupe: true,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ScoredAction {
    pub action: Action,
    pub score: Confidence,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DpoTriplet {
    #[serde(flatten)]
    pub context_ref: StepRef,
    pub chosen: ScoredAction,
    pub rejected: ScoredAction,
}

impl DpoTriplet {
    fn sort_key(&self) -> (&StepRef, Confidence, &Action, &ScoredAction) {
        (&self.context_ref, self.rejected.score, &self.rejected.action, &self.chosen)
    }
}

/// The supervised model queried for `(a, c)` on a step.
pub trait StepPredictor {
    fn predict(&mut self, step: &TrajectoryStep) -> Result<ScoredAction, String>;
}

impl<P: StepPredictor + ?Sized> StepPredictor for &mut P {
    fn predict(&mut self, step: &TrajectoryStep) -> Result<ScoredAction, String> {
        (**self).predict(step)
    }
}

pub struct FnPredictor<F>(pub F);

impl<F> StepPredictor for FnPredictor<F>
where
    F: FnMut(&TrajectoryStep) -> Result<ScoredAction, String>,
{
    fn predict(&mut self, step: &TrajectoryStep) -> Result<ScoredAction, String> {
        (self.0)(step)
    }
}

/// Replays the `pred_action`/`pred_confidence` columns of the steps it is
/// asked about.
#[derive(Debug, Clone, Copy, Default)]
pub struct RecordedPredictor;

impl StepPredictor for RecordedPredictor {
    fn predict(&mut self, step: &TrajectoryStep) -> Result<ScoredAction, String> {
        match (&step.pred_action, step.pred_confidence) {
            (Some(action), Some(score)) => Ok(ScoredAction {
                action: action.clone(),
                score,
            }),
            _ => Err(format!("no recorded prediction for step {}", step.step_ref())),
        }
    }
}

/// Score in 1..=5 farthest from `c_sft`. At `c_sft = 3` both 1 and 5 are at
/// distance 2: the one whose gate decision under `gamma` differs from
/// `c_sft`'s wins; if both or neither differ, the smaller.
pub fn farthest_score(c_sft: Confidence, gamma: Gamma) -> Confidence {
    let distance = |s: Confidence| (s.get() as i32 - c_sft.get() as i32).abs();
    let best = Confidence::all().map(distance).max().expect("five candidates");
    let tied: Vec<Confidence> = Confidence::all().filter(|&s| distance(s) == best).collect();
    let reference = decision(c_sft, gamma);
    let flipping: Vec<Confidence> = tied.iter().copied().filter(|&s| decision(s, gamma) != reference).collect();
    match flipping.as_slice() {
        [only] => *only,
        _ => tied[0],
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnchorFailure {
    pub anchor: StepRef,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForgeOutput {
    pub triplets: Vec<DpoTriplet>,
    pub anchors: usize,
    /// Anchors whose predicted gate decision disagreed with the annotation.
    pub mismatched_anchors: usize,
    pub failures: Vec<AnchorFailure>,
}

/// Builds the preference dataset. Triplets come back ordered by context
/// step, then rejected score.
pub fn build_dpo_dataset<'a, P: StepPredictor>(
    steps: impl IntoIterator<Item = &'a TrajectoryStep>,
    model: &mut P,
    index: &RetrievalIndex,
    cfg: &ForgeConfig,
) -> Result<ForgeOutput, ForgeError> {
    let steps: Vec<&TrajectoryStep> = steps.into_iter().collect();
    let by_ref: HashMap<StepRef, &TrajectoryStep> = steps.iter().map(|s| (s.step_ref(), *s)).collect();
    let mut predictions: HashMap<StepRef, Result<ScoredAction, String>> = HashMap::new();
    let mut predict = |step: &TrajectoryStep| -> Result<ScoredAction, String> {
        predictions
            .entry(step.step_ref())
            .or_insert_with(|| model.predict(step))
            .clone()
    };

    let mut out = ForgeOutput {
        anchors: steps.len(),
        ..ForgeOutput::default()
    };
    let gamma = cfg.gamma;

    for anchor in &steps {
        let anchor_ref = anchor.step_ref();
        let predicted = match predict(anchor) {
            Ok(p) => p,
            Err(message) => {
                out.failures.push(AnchorFailure { anchor: anchor_ref, message });
                continue;
            }
        };
        if decision(anchor.gt_confidence, gamma) == decision(predicted.score, gamma) {
            continue;
        }
        out.mismatched_anchors += 1;

        let hits = index.neighbours(&anchor_ref, cfg.k, cfg.include_self)?;
        let mut pending = Vec::new();
        let mut failed = None;
        for hit in hits.iter().filter(|h| h.score > cfg.lambda) {
            let neighbour = *by_ref
                .get(&hit.step_ref)
                .ok_or_else(|| ForgeError::UnknownStep(hit.step_ref.clone()))?;
            let mut rejected = match predict(neighbour) {
                Ok(p) => p,
                Err(message) => {
                    failed = Some(message);
                    break;
                }
            };
            if decision(neighbour.gt_confidence, gamma) == decision(rejected.score, gamma) {
                rejected.score = farthest_score(neighbour.gt_confidence, gamma);
            }
            pending.push(DpoTriplet {
                context_ref: hit.step_ref.clone(),
                chosen: ScoredAction {
                    action: neighbour.gt_action.clone(),
                    score: neighbour.gt_confidence,
                },
                rejected,
            });
        }
        match failed {
            Some(message) => out.failures.push(AnchorFailure { anchor: anchor_ref, message }),
            None => out.triplets.extend(pending),
        }
    }

    out.triplets.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
    if cfg.dedupe {
        out.triplets
            .dedup_by(|a, b| a.context_ref == b.context_ref && a.rejected == b.rejected);
    }
    Ok(out)
}

pub fn write_triplets<W: Write>(mut out: W, triplets: &[DpoTriplet]) -> std::io::Result<()> {
    for t in triplets {
        serde_json::to_writer(&mut out, t)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_triplets<R: BufRead>(reader: R) -> Result<Vec<DpoTriplet>, ForgeError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| ForgeError::Format {
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}
