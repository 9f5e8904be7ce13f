//! Step embeddings and cosine-similarity top-k retrieval.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::io::BufRead;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trajectory::{Dataset, StepRef, TrajectoryStep};

pub const DEFAULT_HASH_DIM: usize = 64;

#[derive(Debug, Error, PartialEq)]
pub enum RetrievalError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },
    #[error("zero vector has no direction")]
    ZeroVector,
    #[error("embedding has non-finite entries")]
    NonFinite,
    #[error("empty embedding")]
    Empty,
    #[error("no embedding for step {0}")]
    MissingStep(StepRef),
    #[error("line {line}: {message}")]
    Sidecar { line: usize, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self, RetrievalError> {
        if values.is_empty() {
            return Err(RetrievalError::Empty);
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(RetrievalError::NonFinite);
        }
        Ok(EmbeddingVector(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scaled(&self, factor: f64) -> Result<Self, RetrievalError> {
        EmbeddingVector::new(self.0.iter().map(|v| v * factor).collect())
    }
}

/// `<u, v> / (|u| |v|)`.
pub fn cosine(u: &EmbeddingVector, v: &EmbeddingVector) -> Result<f64, RetrievalError> {
    if u.dim() != v.dim() {
        return Err(RetrievalError::DimMismatch {
            expected: u.dim(),
            found: v.dim(),
        });
    }
    let (nu, nv) = (u.norm(), v.norm());
    if nu == 0.0 || nv == 0.0 {
        return Err(RetrievalError::ZeroVector);
    }
    let dot: f64 = u.0.iter().zip(&v.0).map(|(a, b)| a * b).sum();
    Ok(dot / (nu * nv))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityHit {
    pub step_ref: StepRef,
    pub score: f64,
}

/// Exhaustive top-k: descending score, ties by step reference ascending.
pub fn top_k(
    query: &EmbeddingVector,
    index: &[(StepRef, EmbeddingVector)],
    k: usize,
) -> Result<Vec<SimilarityHit>, RetrievalError> {
    if k == 0 {
        return Ok(Vec::new());
    }
    let mut hits = index
        .iter()
        .map(|(r, v)| {
            Ok(SimilarityHit {
                step_ref: r.clone(),
                score: cosine(query, v)?,
            })
        })
        .collect::<Result<Vec<_>, RetrievalError>>()?;
    hits.sort_by(rank);
    hits.truncate(k);
    Ok(hits)
}

fn rank(a: &SimilarityHit, b: &SimilarityHit) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.step_ref.cmp(&b.step_ref))
}

/// Deterministic text encoder: hashed token counts over the goal, the
/// serialized ground-truth action and the history, L2-normalised.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashedTokenEncoder {
    pub dim: usize,
}

impl Default for HashedTokenEncoder {
    fn default() -> Self {
        HashedTokenEncoder { dim: DEFAULT_HASH_DIM }
    }
}

impl HashedTokenEncoder {
    pub fn new(dim: usize) -> Self {
        HashedTokenEncoder { dim }
    }

    pub fn encode_text(&self, text: &str) -> Result<EmbeddingVector, RetrievalError> {
        if self.dim == 0 {
            return Err(RetrievalError::Empty);
        }
        let mut counts = vec![0.0; self.dim];
        for token in tokens(text) {
            counts[(fnv1a(&token) % self.dim as u64) as usize] += 1.0;
        }
        let norm = counts.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(RetrievalError::ZeroVector);
        }
        counts.iter_mut().for_each(|v| *v /= norm);
        EmbeddingVector::new(counts)
    }

    pub fn encode_step(&self, step: &TrajectoryStep) -> Result<EmbeddingVector, RetrievalError> {
        let mut text = String::new();
        text.push_str(&step.goal);
        text.push(' ');
        text.push_str(&step.gt_action.to_string());
        for h in &step.history {
            text.push(' ');
            text.push_str(h);
        }
        self.encode_text(&text)
    }
}

fn tokens(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric() && c != '_')
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}

fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

/// Precomputed embedding when present, the hashed encoder otherwise. The
/// result must match `dim`.
pub fn encode(
    step: &TrajectoryStep,
    encoder: &HashedTokenEncoder,
    dim: usize,
) -> Result<EmbeddingVector, RetrievalError> {
    let v = match &step.embedding {
        Some(values) => EmbeddingVector::new(values.clone())?,
        None => encoder.encode_step(step)?,
    };
    if v.dim() != dim {
        return Err(RetrievalError::DimMismatch {
            expected: dim,
            found: v.dim(),
        });
    }
    Ok(v)
}

/// Immutable in-memory index over step embeddings.
#[derive(Debug, Clone, Default)]
pub struct RetrievalIndex {
    dim: usize,
    entries: Vec<(StepRef, EmbeddingVector)>,
    positions: HashMap<StepRef, usize>,
}

impl RetrievalIndex {
    pub fn from_entries(entries: Vec<(StepRef, EmbeddingVector)>) -> Result<Self, RetrievalError> {
        let dim = entries.first().map_or(0, |(_, v)| v.dim());
        let mut positions = HashMap::with_capacity(entries.len());
        for (i, (r, v)) in entries.iter().enumerate() {
            if v.dim() != dim {
                return Err(RetrievalError::DimMismatch {
                    expected: dim,
                    found: v.dim(),
                });
            }
            if v.norm() == 0.0 {
                return Err(RetrievalError::ZeroVector);
            }
            positions.insert(r.clone(), i);
        }
        Ok(RetrievalIndex {
            dim,
            entries,
            positions,
        })
    }

    /// Indexes every step of `steps`. When all steps lack precomputed
    /// embeddings the hashed encoder's dimension is used; otherwise `dim`.
    pub fn build<'a>(
        steps: impl IntoIterator<Item = &'a TrajectoryStep>,
        encoder: &HashedTokenEncoder,
        dim: usize,
    ) -> Result<Self, RetrievalError> {
        let steps: Vec<&TrajectoryStep> = steps.into_iter().collect();
        let dim = if steps.iter().all(|s| s.embedding.is_none()) {
            encoder.dim
        } else {
            dim
        };
        let entries = steps
            .into_iter()
            .map(|s| Ok((s.step_ref(), encode(s, encoder, dim)?)))
            .collect::<Result<Vec<_>, RetrievalError>>()?;
        RetrievalIndex::from_entries(entries)
    }

    pub fn from_dataset(dataset: &Dataset, encoder: &HashedTokenEncoder) -> Result<Self, RetrievalError> {
        RetrievalIndex::build(dataset.steps(), encoder, dataset.embedding_dim)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[(StepRef, EmbeddingVector)] {
        &self.entries
    }

    pub fn vector(&self, step: &StepRef) -> Option<&EmbeddingVector> {
        self.positions.get(step).map(|&i| &self.entries[i].1)
    }

    pub fn top_k(&self, query: &EmbeddingVector, k: usize) -> Result<Vec<SimilarityHit>, RetrievalError> {
        top_k(query, &self.entries, k)
    }

    /// Top-k neighbours of an indexed step, optionally leaving the step
    /// itself out of the candidate set.
    pub fn neighbours(
        &self,
        step: &StepRef,
        k: usize,
        include_self: bool,
    ) -> Result<Vec<SimilarityHit>, RetrievalError> {
        let query = self
            .vector(step)
            .ok_or_else(|| RetrievalError::MissingStep(step.clone()))?;
        if include_self {
            return self.top_k(query, k);
        }
        let others: Vec<(StepRef, EmbeddingVector)> =
            self.entries.iter().filter(|(r, _)| r != step).cloned().collect();
        top_k(query, &others, k)
    }
}

#[derive(Debug, Deserialize)]
struct SidecarHeader {
    embedding_dim: usize,
}

#[derive(Debug, Deserialize)]
struct SidecarRecord {
    trajectory_id: String,
    step_index: usize,
    embedding: Vec<f64>,
}

/// Reads a sidecar embedding file: `{"embedding_dim":N}` then JSONL of
/// `{"trajectory_id","step_index","embedding"}`.
pub fn load_sidecar<R: BufRead>(reader: R) -> Result<(usize, HashMap<StepRef, Vec<f64>>), RetrievalError> {
    let mut dim = None;
    let mut out = HashMap::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| RetrievalError::Sidecar {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |message: String| RetrievalError::Sidecar { line: line_no, message };
        match dim {
            None => {
                let h: SidecarHeader = serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?;
                if h.embedding_dim == 0 {
                    return Err(bad("embedding_dim must be positive".into()));
                }
                dim = Some(h.embedding_dim);
            }
            Some(d) => {
                let r: SidecarRecord = serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?;
                if r.embedding.len() != d {
                    return Err(bad(format!("expected {d} entries, found {}", r.embedding.len())));
                }
                out.insert(StepRef::new(r.trajectory_id, r.step_index), r.embedding);
            }
        }
    }
    let dim = dim.ok_or(RetrievalError::Sidecar {
        line: 1,
        message: "missing header".into(),
    })?;
    Ok((dim, out))
}

/// Installs sidecar embeddings into a dataset, replacing any inline vectors.
pub fn apply_sidecar(
    dataset: &mut Dataset,
    dim: usize,
    embeddings: &HashMap<StepRef, Vec<f64>>,
) -> Result<(), RetrievalError> {
    for t in &mut dataset.trajectories {
        for s in &mut t.steps {
            let key = s.step_ref();
            let v = embeddings.get(&key).ok_or(RetrievalError::MissingStep(key))?;
            s.embedding = Some(v.clone());
        }
    }
    dataset.embedding_dim = dim;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::action::Action;
    use crate::score::Confidence;

    fn ev(v: &[f64]) -> EmbeddingVector {
        EmbeddingVector::new(v.to_vec()).unwrap()
    }

    fn step(tid: &str, idx: usize, goal: &str, embedding: Option<Vec<f64>>) -> TrajectoryStep {
        TrajectoryStep {
            trajectory_id: tid.into(),
            step_index: idx,
            goal: goal.into(),
            history: vec!["WAIT".into(); idx],
            screenshot_ref: format!("{tid}/{idx}.png"),
            embedding,
            gt_action: Action::click(1, 2),
            gt_confidence: Confidence::new(3).unwrap(),
            pred_action: None,
            pred_confidence: None,
        }
    }

    #[test]
    fn cosine_examples() {
        let u = ev(&[1.0, 2.0, 2.0]);
        assert_eq!(cosine(&u, &u).unwrap(), 1.0);
        assert_eq!(cosine(&ev(&[1.0, 0.0]), &ev(&[0.0, 1.0])).unwrap(), 0.0);
        assert!((cosine(&u, &ev(&[2.0, 1.0, 2.0])).unwrap() - 8.0 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn cosine_errors() {
        assert_eq!(cosine(&ev(&[0.0, 0.0]), &ev(&[1.0, 0.0])), Err(RetrievalError::ZeroVector));
        assert!(matches!(cosine(&ev(&[1.0]), &ev(&[1.0, 0.0])), Err(RetrievalError::DimMismatch { .. })));
        assert_eq!(EmbeddingVector::new(vec![f64::NAN]), Err(RetrievalError::NonFinite));
    }

    #[test]
    fn top_k_edges_and_ties() {
        let index = vec![
            (StepRef::new("b", 0), ev(&[1.0, 0.0])),
            (StepRef::new("a", 1), ev(&[2.0, 0.0])),
            (StepRef::new("a", 0), ev(&[0.0, 1.0])),
        ];
        let q = ev(&[1.0, 0.0]);
        assert!(top_k(&q, &index, 0).unwrap().is_empty());
        let all = top_k(&q, &index, 10).unwrap();
        let refs: Vec<_> = all.iter().map(|h| h.step_ref.to_string()).collect();
        assert_eq!(refs, ["a#1", "b#0", "a#0"]);
    }

    #[test]
    fn precomputed_embedding_passes_through() {
        let s = step("t", 0, "g", Some(vec![0.5, -1.0, 2.0]));
        let v = encode(&s, &HashedTokenEncoder::default(), 3).unwrap();
        assert_eq!(v.values(), &[0.5, -1.0, 2.0]);
        assert!(matches!(encode(&s, &HashedTokenEncoder::default(), 4), Err(RetrievalError::DimMismatch { .. })));
    }

    #[test]
    fn hashed_encoder_is_deterministic_and_unit_norm() {
        let enc = HashedTokenEncoder::default();
        let a = enc.encode_step(&step("t", 1, "book a flight to Paris", None)).unwrap();
        let b = enc.encode_step(&step("u", 1, "book a flight to Paris", None)).unwrap();
        assert_eq!(a, b);
        let norm: f64 = a.values().iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-9);
    }

    #[test]
    fn neighbours_can_exclude_self() {
        let steps = [
            step("t", 0, "g", Some(vec![1.0, 0.0])),
            step("t", 1, "g", Some(vec![1.0, 0.1])),
        ];
        let idx = RetrievalIndex::build(&steps, &HashedTokenEncoder::default(), 2).unwrap();
        let with = idx.neighbours(&StepRef::new("t", 0), 1, true).unwrap();
        assert_eq!(with[0].step_ref, StepRef::new("t", 0));
        let without = idx.neighbours(&StepRef::new("t", 0), 5, false).unwrap();
        assert_eq!(without.len(), 1);
        assert_eq!(without[0].step_ref, StepRef::new("t", 1));
    }

    #[test]
    fn sidecar_roundtrip() {
        let text = "{\"embedding_dim\":2}\n{\"trajectory_id\":\"t\",\"step_index\":0,\"embedding\":[1.0,2.0]}\n";
        let (dim, map) = load_sidecar(text.as_bytes()).unwrap();
        assert_eq!(dim, 2);
        assert_eq!(map[&StepRef::new("t", 0)], vec![1.0, 2.0]);
        let bad = "{\"embedding_dim\":2}\n{\"trajectory_id\":\"t\",\"step_index\":0,\"embedding\":[1.0]}\n";
        assert!(load_sidecar(bad.as_bytes()).is_err());
    }
}
