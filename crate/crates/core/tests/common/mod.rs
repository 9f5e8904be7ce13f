//! Independent oracles and generators shared by the integration suites.
//! Nothing here calls into the code paths it is used to check.

#![allow(dead_code)]

use std::path::PathBuf;

use confgate_core::action::{Action, Direction, Point};
use confgate_core::forge::{DpoTriplet, ScoredAction};
use confgate_core::score::Confidence;
use confgate_core::trajectory::{StepRef, TrajectoryStep};
use rand::seq::IndexedRandom;
use rand::Rng;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

pub fn conf(v: i64) -> Confidence {
    Confidence::new(v).unwrap()
}

/// Gate written out longhand: autonomous iff the score is strictly above γ.
pub fn gate(score: u8, gamma: u8) -> bool {
    score > gamma
}

/// Hand-enumerated confusion label for one cell.
pub fn oracle_class(pred: u8, gt: u8, gamma: u8) -> &'static str {
    if pred > gamma && gt > gamma {
        "TP"
    } else if pred > gamma {
        "FP"
    } else if gt > gamma {
        "FN"
    } else {
        "TN"
    }
}

/// argmax over {1..5} of |s - c|, ties resolved toward the candidate whose
/// gate differs from c's, then toward the smaller candidate.
pub fn oracle_farthest(c: u8, gamma: u8) -> u8 {
    let mut best: Vec<u8> = Vec::new();
    let mut best_d = -1i32;
    for s in 1..=5u8 {
        let d = (s as i32 - c as i32).abs();
        if d > best_d {
            best_d = d;
            best = vec![s];
        } else if d == best_d {
            best.push(s);
        }
    }
    let flips: Vec<u8> = best.iter().copied().filter(|&s| gate(s, gamma) != gate(c, gamma)).collect();
    if flips.len() == 1 {
        flips[0]
    } else {
        *best.iter().min().unwrap()
    }
}

pub fn oracle_cosine(u: &[f64], v: &[f64]) -> f64 {
    let mut dot = 0.0;
    let mut uu = 0.0;
    let mut vv = 0.0;
    for i in 0..u.len() {
        dot += u[i] * v[i];
        uu += u[i] * u[i];
        vv += v[i] * v[i];
    }
    dot / (uu.sqrt() * vv.sqrt())
}

/// Top-k by repeated selection of the best remaining candidate.
pub fn oracle_top_k(query: &[f64], index: &[(StepRef, Vec<f64>)], k: usize) -> Vec<(StepRef, f64)> {
    let mut remaining: Vec<(StepRef, f64)> =
        index.iter().map(|(r, v)| (r.clone(), oracle_cosine(query, v))).collect();
    let mut out = Vec::new();
    while out.len() < k && !remaining.is_empty() {
        let mut best = 0;
        for i in 1..remaining.len() {
            let (ref r, s) = remaining[i];
            let (ref br, bs) = remaining[best];
            if s > bs || (s == bs && r < br) {
                best = i;
            }
        }
        out.push(remaining.remove(best));
    }
    out
}

/// Exhaustive preference-triplet enumeration over every (anchor, candidate)
/// pair. `predictions[i]` is the model output for `steps[i]`.
pub fn oracle_forge(
    steps: &[TrajectoryStep],
    predictions: &[(Action, u8)],
    gamma: u8,
    lambda: f64,
    k: usize,
    include_self: bool,
    dedupe: bool,
) -> Vec<DpoTriplet> {
    let vectors: Vec<Vec<f64>> = steps.iter().map(|s| s.embedding.clone().unwrap()).collect();
    let mut out: Vec<DpoTriplet> = Vec::new();
    for (ai, anchor) in steps.iter().enumerate() {
        let (_, c) = &predictions[ai];
        if gate(anchor.gt_confidence.get(), gamma) == gate(*c, gamma) {
            continue;
        }
        let candidates: Vec<(StepRef, Vec<f64>)> = steps
            .iter()
            .enumerate()
            .filter(|(ci, _)| include_self || *ci != ai)
            .map(|(ci, s)| (s.step_ref(), vectors[ci].clone()))
            .collect();
        for (r, sim) in oracle_top_k(&vectors[ai], &candidates, k) {
            if sim <= lambda {
                continue;
            }
            let ci = steps.iter().position(|s| s.step_ref() == r).unwrap();
            let neighbour = &steps[ci];
            let (a2, mut c2) = predictions[ci].clone();
            let c_sft = neighbour.gt_confidence.get();
            if gate(c_sft, gamma) == gate(c2, gamma) {
                c2 = oracle_farthest(c_sft, gamma);
            }
            let t = DpoTriplet {
                context_ref: r,
                chosen: ScoredAction {
                    action: neighbour.gt_action.clone(),
                    score: conf(c_sft as i64),
                },
                rejected: ScoredAction {
                    action: a2,
                    score: conf(c2 as i64),
                },
            };
            if dedupe && out.iter().any(|o| o.context_ref == t.context_ref && o.rejected == t.rejected) {
                continue;
            }
            out.push(t);
        }
    }
    out
}

pub fn canonical(mut ts: Vec<DpoTriplet>) -> Vec<String> {
    ts.sort_by(|a, b| {
        (&a.context_ref, &a.rejected, &a.chosen).cmp(&(&b.context_ref, &b.rejected, &b.chosen))
    });
    ts.iter().map(|t| serde_json::to_string(t).unwrap()).collect()
}

const WORDS: &[&str] = &["hotels", "in", "Paris", "Chrome", "a b", "[x]", "mañana", "7 am", "]", "x]y"];

pub fn random_text<R: Rng>(rng: &mut R) -> String {
    let n = rng.random_range(1..=4);
    (0..n).map(|_| *WORDS.choose(rng).unwrap()).collect::<Vec<_>>().join(" ")
}

pub fn random_action<R: Rng>(rng: &mut R) -> Action {
    let point = |rng: &mut R| Point::new(rng.random_range(0..=4000), rng.random_range(0..=4000));
    match rng.random_range(0..11) {
        0 => Action::Click(point(rng)),
        1 => Action::Type(random_text(rng)),
        2 => Action::Scroll(*Direction::ALL.choose(rng).unwrap()),
        3 => Action::PressBack,
        4 => Action::PressHome,
        5 => Action::Enter,
        6 => Action::OpenApp(random_text(rng)),
        7 => Action::Wait,
        8 => Action::LongPress(point(rng)),
        9 => Action::Complete,
        _ => Action::Impossible,
    }
}

/// Random single-trajectory-per-group dataset with small integer embeddings
/// so that similarity ties actually occur.
pub fn random_steps<R: Rng>(rng: &mut R, n: usize, dim: usize) -> (Vec<TrajectoryStep>, Vec<(Action, u8)>) {
    let mut steps = Vec::with_capacity(n);
    let mut preds = Vec::with_capacity(n);
    let mut traj = 0;
    let mut idx = 0;
    let mut history: Vec<String> = Vec::new();
    for _ in 0..n {
        if idx > 0 && rng.random_bool(0.3) {
            traj += 1;
            idx = 0;
            history.clear();
        }
        let mut emb: Vec<f64> = (0..dim).map(|_| rng.random_range(-2..=2) as f64).collect();
        if emb.iter().all(|&v| v == 0.0) {
            emb[0] = 1.0;
        }
        let gt = random_action(rng);
        steps.push(TrajectoryStep {
            trajectory_id: format!("t{traj:02}"),
            step_index: idx,
            goal: format!("goal {traj}"),
            history: history.clone(),
            screenshot_ref: format!("s/{traj}/{idx}.png"),
            embedding: Some(emb),
            gt_action: gt.clone(),
            gt_confidence: conf(rng.random_range(1..=5)),
            pred_action: None,
            pred_confidence: None,
        });
        preds.push((random_action(rng), rng.random_range(1..=5u8)));
        history.push(gt.to_string());
        idx += 1;
    }
    (steps, preds)
}
