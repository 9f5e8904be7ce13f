//! SFT and DPO objectives over a tabular categorical policy, with analytic
//! gradients and a finite-difference checker.
//!
//! The policy holds one logit vector per `(context, position)`. A sequence
//! is the action tokens followed by the confidence tokens, so the joint
//! log-probability splits into the action part and the score part
//! conditioned on the whole action.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::action::Action;
use crate::forge::{DpoTriplet, ScoredAction};
use crate::score::Confidence;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LossError {
    #[error("unknown token {0}")]
    UnknownToken(String),
    #[error("unknown context {0}")]
    UnknownContext(usize),
    #[error("sequence of {len} tokens exceeds the policy's {max} positions")]
    TooLong { len: usize, max: usize },
    #[error("policies have different shapes")]
    ShapeMismatch,
    #[error("empty batch")]
    EmptyBatch,
    #[error("beta must be positive, got {0}")]
    Beta(f64),
}

/// Token strings and their ids. Always contains the score tokens "1".."5".
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    ids: HashMap<String, usize>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        let mut v = Vocabulary {
            tokens: Vec::new(),
            ids: HashMap::new(),
        };
        for s in Confidence::all() {
            v.insert(&s.to_string());
        }
        v
    }
}

impl Vocabulary {
    pub fn insert(&mut self, token: &str) -> usize {
        if let Some(&id) = self.ids.get(token) {
            return id;
        }
        self.tokens.push(token.to_string());
        self.ids.insert(token.to_string(), self.tokens.len() - 1);
        self.tokens.len() - 1
    }

    pub fn id(&self, token: &str) -> Result<usize, LossError> {
        self.ids
            .get(token)
            .copied()
            .ok_or_else(|| LossError::UnknownToken(token.to_string()))
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }
}

/// Whitespace tokens of the serialized action.
pub fn action_tokens(action: &Action) -> Vec<String> {
    action.to_string().split_whitespace().map(str::to_string).collect()
}

pub fn score_tokens(score: Confidence) -> Vec<String> {
    vec![score.to_string()]
}

/// Token ids of an `(action, score)` response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Response {
    pub action: Vec<usize>,
    pub score: Vec<usize>,
}

impl Response {
    pub fn encode(vocab: &mut Vocabulary, scored: &ScoredAction) -> Response {
        Response {
            action: action_tokens(&scored.action).iter().map(|t| vocab.insert(t)).collect(),
            score: score_tokens(scored.score).iter().map(|t| vocab.insert(t)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.action.len() + self.score.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn tokens(&self) -> impl Iterator<Item = usize> + '_ {
        self.action.iter().chain(&self.score).copied()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyPolicy {
    contexts: usize,
    positions: usize,
    vocab_size: usize,
    logits: Vec<f64>,
}

impl ToyPolicy {
    pub fn uniform(contexts: usize, positions: usize, vocab_size: usize) -> Self {
        ToyPolicy {
            contexts,
            positions,
            vocab_size,
            logits: vec![0.0; contexts * positions * vocab_size],
        }
    }

    /// Logits drawn uniformly from `[-scale, scale]`.
    pub fn random(contexts: usize, positions: usize, vocab_size: usize, scale: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ToyPolicy::uniform(contexts, positions, vocab_size);
        p.logits.iter_mut().for_each(|l| *l = rng.random_range(-scale..=scale));
        p
    }

    pub fn from_logits(contexts: usize, positions: usize, vocab_size: usize, logits: Vec<f64>) -> Option<Self> {
        (logits.len() == contexts * positions * vocab_size).then_some(ToyPolicy {
            contexts,
            positions,
            vocab_size,
            logits,
        })
    }

    pub fn contexts(&self) -> usize {
        self.contexts
    }

    pub fn positions(&self) -> usize {
        self.positions
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn logits_mut(&mut self) -> &mut [f64] {
        &mut self.logits
    }

    fn offset(&self, context: usize, position: usize) -> usize {
        (context * self.positions + position) * self.vocab_size
    }

    pub fn set_logit(&mut self, context: usize, position: usize, token: usize, value: f64) {
        let o = self.offset(context, position);
        self.logits[o + token] = value;
    }

    fn row(&self, context: usize, position: usize) -> &[f64] {
        let o = self.offset(context, position);
        &self.logits[o..o + self.vocab_size]
    }

    /// Softmax at one position.
    pub fn probs(&self, context: usize, position: usize) -> Vec<f64> {
        let row = self.row(context, position);
        let lse = log_sum_exp(row);
        row.iter().map(|l| (l - lse).exp()).collect()
    }

    fn same_shape(&self, other: &ToyPolicy) -> bool {
        (self.contexts, self.positions, self.vocab_size) == (other.contexts, other.positions, other.vocab_size)
    }

    fn check(&self, context: usize, offset: usize, tokens: &[usize]) -> Result<(), LossError> {
        if context >= self.contexts {
            return Err(LossError::UnknownContext(context));
        }
        if offset + tokens.len() > self.positions {
            return Err(LossError::TooLong {
                len: offset + tokens.len(),
                max: self.positions,
            });
        }
        if let Some(t) = tokens.iter().find(|&&t| t >= self.vocab_size) {
            return Err(LossError::UnknownToken(format!("#{t}")));
        }
        Ok(())
    }
}

fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|l| (l - max).exp()).sum::<f64>().ln()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceLikelihood {
    pub logprob: f64,
    pub per_token: Vec<f64>,
}

/// Log-probability of `tokens` occupying positions `offset..` in `context`.
pub fn conditional_logprob(
    policy: &ToyPolicy,
    context: usize,
    offset: usize,
    tokens: &[usize],
) -> Result<SequenceLikelihood, LossError> {
    policy.check(context, offset, tokens)?;
    let per_token: Vec<f64> = tokens
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            let row = policy.row(context, offset + i);
            row[t] - log_sum_exp(row)
        })
        .collect();
    Ok(SequenceLikelihood {
        logprob: per_token.iter().sum(),
        per_token,
    })
}

/// `log P(a || c | x)`: action tokens first, then score tokens after the
/// full action.
pub fn joint_logprob(
    policy: &ToyPolicy,
    context: usize,
    action_tokens: &[usize],
    score_tokens: &[usize],
) -> Result<SequenceLikelihood, LossError> {
    let action = conditional_logprob(policy, context, 0, action_tokens)?;
    let score = conditional_logprob(policy, context, action_tokens.len(), score_tokens)?;
    let mut per_token = action.per_token;
    per_token.extend(score.per_token);
    Ok(SequenceLikelihood {
        logprob: per_token.iter().sum(),
        per_token,
    })
}

fn response_logprob(policy: &ToyPolicy, context: usize, r: &Response) -> Result<f64, LossError> {
    Ok(joint_logprob(policy, context, &r.action, &r.score)?.logprob)
}

/// Adds `weight * d log P(r | context) / d logits` into `grad`.
fn accumulate_logprob_grad(policy: &ToyPolicy, context: usize, r: &Response, weight: f64, grad: &mut [f64]) {
    for (pos, token) in r.tokens().enumerate() {
        let o = policy.offset(context, pos);
        for (j, p) in policy.probs(context, pos).into_iter().enumerate() {
            let indicator = if j == token { 1.0 } else { 0.0 };
            grad[o + j] += weight * (indicator - p);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SftExample {
    pub context: usize,
    pub response: Response,
}

/// Mean negative joint log-likelihood over the batch.
pub fn sft_loss(policy: &ToyPolicy, batch: &[SftExample]) -> Result<f64, LossError> {
    if batch.is_empty() {
        return Err(LossError::EmptyBatch);
    }
    let total = batch
        .iter()
        .map(|ex| response_logprob(policy, ex.context, &ex.response))
        .sum::<Result<f64, LossError>>()?;
    Ok(-total / batch.len() as f64)
}

/// Loss and its gradient with respect to every logit.
pub fn sft_loss_grad(policy: &ToyPolicy, batch: &[SftExample]) -> Result<(f64, Vec<f64>), LossError> {
    let loss = sft_loss(policy, batch)?;
    let mut grad = vec![0.0; policy.logits.len()];
    let weight = -1.0 / batch.len() as f64;
    for ex in batch {
        accumulate_logprob_grad(policy, ex.context, &ex.response, weight, &mut grad);
    }
    Ok((loss, grad))
}

/// `log πθ(r | x) − log π0(r | x)`.
pub fn dpo_reward(theta: &ToyPolicy, reference: &ToyPolicy, context: usize, r: &Response) -> Result<f64, LossError> {
    if !theta.same_shape(reference) {
        return Err(LossError::ShapeMismatch);
    }
    Ok(response_logprob(theta, context, r)? - response_logprob(reference, context, r)?)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub context: usize,
    pub chosen: Response,
    pub rejected: Response,
}

impl PreferencePair {
    pub fn from_triplet(triplet: &DpoTriplet, context: usize, vocab: &mut Vocabulary) -> Self {
        PreferencePair {
            context,
            chosen: Response::encode(vocab, &triplet.chosen),
            rejected: Response::encode(vocab, &triplet.rejected),
        }
    }
}

/// `β (r_chosen − r_rejected)`, the argument of the sigmoid.
pub fn dpo_margin(theta: &ToyPolicy, reference: &ToyPolicy, pair: &PreferencePair, beta: f64) -> Result<f64, LossError> {
    let chosen = dpo_reward(theta, reference, pair.context, &pair.chosen)?;
    let rejected = dpo_reward(theta, reference, pair.context, &pair.rejected)?;
    Ok(beta * (chosen - rejected))
}

/// `−log σ(x)`, evaluated without overflow.
pub fn neg_log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        (-x).exp().ln_1p()
    } else {
        -x + x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn check_dpo_args(pairs: &[PreferencePair], beta: f64) -> Result<(), LossError> {
    if pairs.is_empty() {
        return Err(LossError::EmptyBatch);
    }
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(LossError::Beta(beta));
    }
    Ok(())
}

/// Mean over pairs of `−log σ(β (r_chosen − r_rejected))`; minimised.
pub fn dpo_loss(theta: &ToyPolicy, reference: &ToyPolicy, pairs: &[PreferencePair], beta: f64) -> Result<f64, LossError> {
    check_dpo_args(pairs, beta)?;
    let total = pairs
        .iter()
        .map(|p| dpo_margin(theta, reference, p, beta).map(neg_log_sigmoid))
        .sum::<Result<f64, LossError>>()?;
    Ok(total / pairs.len() as f64)
}

/// DPO loss and its gradient with respect to θ's logits.
pub fn dpo_loss_grad(
    theta: &ToyPolicy,
    reference: &ToyPolicy,
    pairs: &[PreferencePair],
    beta: f64,
) -> Result<(f64, Vec<f64>), LossError> {
    let loss = dpo_loss(theta, reference, pairs, beta)?;
    let mut grad = vec![0.0; theta.logits.len()];
    let n = pairs.len() as f64;
    for p in pairs {
        let m = dpo_margin(theta, reference, p, beta)?;
        // d/dm −log σ(m) = −σ(−m)
        let w = -sigmoid(-m) * beta / n;
        accumulate_logprob_grad(theta, p.context, &p.chosen, w, &mut grad);
        accumulate_logprob_grad(theta, p.context, &p.rejected, -w, &mut grad);
    }
    Ok((loss, grad))
}

/// Central differences of `f` over every logit of `policy`.
pub fn finite_difference_grad<F>(policy: &ToyPolicy, h: f64, mut f: F) -> Result<Vec<f64>, LossError>
where
    F: FnMut(&ToyPolicy) -> Result<f64, LossError>,
{
    let mut probe = policy.clone();
    let mut grad = Vec::with_capacity(policy.logits.len());
    for i in 0..policy.logits.len() {
        let original = probe.logits[i];
        probe.logits[i] = original + h;
        let up = f(&probe)?;
        probe.logits[i] = original - h;
        let down = f(&probe)?;
        probe.logits[i] = original;
        grad.push((up - down) / (2.0 * h));
    }
    Ok(grad)
}

/// Below this magnitude both gradients count as zero and the comparison is
/// absolute.
pub const GRAD_CHECK_FLOOR: f64 = 1e-6;

/// `|a − n| / max(|a|, |n|, floor)`, maximised over entries.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(GRAD_CHECK_FLOOR))
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckTrial {
    pub seed: u64,
    pub sft_loss: f64,
    pub sft_max_rel_error: f64,
    pub dpo_loss: f64,
    pub dpo_max_rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub trials: Vec<GradCheckTrial>,
    pub h: f64,
    pub tolerance: f64,
    pub beta: f64,
    pub zero_margin_loss: f64,
    pub worst_sft: f64,
    pub worst_dpo: f64,
    pub passed: bool,
}

/// Gradient verification on `count` random policies: random shapes, random
/// sequences, random preference pairs.
pub fn run_gradient_check(count: usize, seed: u64, beta: f64, h: f64, tolerance: f64) -> Result<GradCheckReport, LossError> {
    let mut trials = Vec::with_capacity(count);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..count {
        let trial_seed: u64 = rng.random();
        let mut r = ChaCha8Rng::seed_from_u64(trial_seed);
        let contexts = r.random_range(1..=3);
        let positions = r.random_range(2..=5);
        let vocab = r.random_range(2..=6);
        let theta = ToyPolicy::random(contexts, positions, vocab, 1.5, r.random());
        let reference = ToyPolicy::random(contexts, positions, vocab, 1.5, r.random());
        let response = |r: &mut ChaCha8Rng| {
            let len = r.random_range(2..=positions);
            let split = r.random_range(1..len);
            let tokens: Vec<usize> = (0..len).map(|_| r.random_range(0..vocab)).collect();
            Response {
                action: tokens[..split].to_vec(),
                score: tokens[split..].to_vec(),
            }
        };
        let batch: Vec<SftExample> = (0..r.random_range(1..=4))
            .map(|_| SftExample {
                context: r.random_range(0..contexts),
                response: response(&mut r),
            })
            .collect();
        let pairs: Vec<PreferencePair> = (0..r.random_range(1..=4))
            .map(|_| PreferencePair {
                context: r.random_range(0..contexts),
                chosen: response(&mut r),
                rejected: response(&mut r),
            })
            .collect();

        let (sft, sft_grad) = sft_loss_grad(&theta, &batch)?;
        let sft_num = finite_difference_grad(&theta, h, |p| sft_loss(p, &batch))?;
        let (dpo, dpo_grad) = dpo_loss_grad(&theta, &reference, &pairs, beta)?;
        let dpo_num = finite_difference_grad(&theta, h, |p| dpo_loss(p, &reference, &pairs, beta))?;
        trials.push(GradCheckTrial {
            seed: trial_seed,
            sft_loss: sft,
            sft_max_rel_error: max_relative_error(&sft_grad, &sft_num),
            dpo_loss: dpo,
            dpo_max_rel_error: max_relative_error(&dpo_grad, &dpo_num),
        });
    }
    let worst_sft = trials.iter().map(|t| t.sft_max_rel_error).fold(0.0, f64::max);
    let worst_dpo = trials.iter().map(|t| t.dpo_max_rel_error).fold(0.0, f64::max);
    let zero_margin_loss = {
        let p = ToyPolicy::random(1, 2, 3, 1.0, seed);
        let pair = PreferencePair {
            context: 0,
            chosen: Response { action: vec![0], score: vec![1] },
            rejected: Response { action: vec![2], score: vec![0] },
        };
        dpo_loss(&p, &p, &[pair], beta)?
    };
    Ok(GradCheckReport {
        passed: worst_sft < tolerance && worst_dpo < tolerance && (zero_margin_loss - std::f64::consts::LN_2).abs() <= 1e-12,
        trials,
        h,
        tolerance,
        beta,
        zero_margin_loss,
        worst_sft,
        worst_dpo,
    })
}
