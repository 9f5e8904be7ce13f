mod common;

use std::cell::RefCell;
use std::collections::HashMap;

use common::*;
use confgate_core::action::{parse_action, serialize_action};
use confgate_core::engine::{
    run_adaptive, AgentOutput, EpisodeConfig, EpisodeLog, FnAgent, Observation, OracleIntervener, ReplayEnv,
};
use confgate_core::loss::{dpo_loss, sft_loss, PreferencePair, Response, SftExample, ToyPolicy};
use confgate_core::metrics::{compute_report, MatchRule, ScreenSize};
use confgate_core::retrieval::{cosine, top_k, EmbeddingVector};
use confgate_core::score::Gamma;
use confgate_core::trajectory::{load_dataset, write_dataset, Dataset, StepRef, Trajectory, TrajectoryStep};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn group(steps: Vec<TrajectoryStep>, dim: usize) -> Dataset {
    let mut trajectories: Vec<Trajectory> = Vec::new();
    for s in steps {
        match trajectories.last_mut() {
            Some(t) if t.trajectory_id == s.trajectory_id => t.steps.push(s),
            _ => trajectories.push(Trajectory {
                trajectory_id: s.trajectory_id.clone(),
                goal: s.goal.clone(),
                steps: vec![s],
            }),
        }
    }
    Dataset {
        embedding_dim: dim,
        trajectories,
    }
}

/// Recorded terminal actions only on the last step of each trajectory, as in
/// real recordings.
fn well_formed(mut ds: Dataset) -> Dataset {
    for t in &mut ds.trajectories {
        let last = t.steps.len() - 1;
        let mut history = Vec::new();
        for (i, s) in t.steps.iter_mut().enumerate() {
            if i < last && s.gt_action.is_terminal() {
                s.gt_action = confgate_core::Action::Wait;
            }
            s.history = history.clone();
            history.push(s.gt_action.to_string());
        }
    }
    ds
}

fn rule() -> MatchRule {
    MatchRule::with_screen(ScreenSize {
        width: 1080,
        height: 2400,
    })
}

/// Runs every trajectory through the gated loop with a fixed noisy output
/// table, recording the history each observation carried.
fn gated_run(dataset: &Dataset, outputs: &HashMap<StepRef, AgentOutput>, gamma: u8) -> (Vec<EpisodeLog>, Vec<Vec<String>>) {
    let seen = RefCell::new(Vec::new());
    let mut agent = FnAgent(|obs: &Observation<'_>| {
        seen.borrow_mut().push(obs.history.to_vec());
        Ok(outputs[obs.step_ref].clone())
    });
    let logs = dataset
        .trajectories
        .iter()
        .map(|t| {
            run_adaptive(
                &t.trajectory_id,
                &mut agent,
                &mut OracleIntervener,
                ReplayEnv::new(t),
                &t.goal,
                Gamma::new(gamma as i64).unwrap(),
                EpisodeConfig { step_cap: 64 },
            )
            .into_log()
        })
        .collect();
    (logs, seen.into_inner())
}

fn noisy_outputs(dataset: &Dataset, seed: u64) -> HashMap<StepRef, AgentOutput> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    dataset
        .steps()
        .map(|s| {
            let action = if rng.random_bool(0.6) {
                s.gt_action.clone()
            } else {
                random_action(&mut rng)
            };
            (s.step_ref(), AgentOutput::new(action.to_string(), rng.random_range(1..=5)))
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn serialized_actions_reparse(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..40 {
            let a = random_action(&mut rng);
            let s = serialize_action(&a);
            prop_assert_eq!(parse_action(&s).unwrap(), a);
        }
    }

    #[test]
    fn parsing_is_total(raw in "\\PC{0,40}") {
        // Never panics; anything accepted serializes to something that
        // parses back to the same action.
        if let Ok(a) = parse_action(&raw) {
            prop_assert_eq!(parse_action(&serialize_action(&a)).unwrap(), a);
        }
    }

    #[test]
    fn grammar_shaped_noise_is_total(verb in "(CLICK|TYPE|SCROLL|OPEN_APP|LONG_PRESS|WAIT|ENTER)", tail in "[ <>\\[\\],0-9a-zA-Z/-]{0,30}") {
        let raw = format!("{verb}{tail}");
        if let Ok(a) = parse_action(&raw) {
            prop_assert_eq!(parse_action(&serialize_action(&a)).unwrap(), a);
        }
    }

    #[test]
    fn dataset_rewrite_is_stable(seed in any::<u64>(), n in 1usize..40) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (steps, _) = random_steps(&mut rng, n, 3);
        let ds = group(steps, 3);
        let mut first = Vec::new();
        write_dataset(&mut first, &ds).unwrap();
        let reloaded = load_dataset(first.as_slice()).unwrap();
        prop_assert_eq!(&reloaded, &ds);
        let mut second = Vec::new();
        write_dataset(&mut second, &reloaded).unwrap();
        prop_assert_eq!(first, second);
    }

    #[test]
    fn stats_ignore_trajectory_order(seed in any::<u64>(), n in 1usize..40) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (steps, _) = random_steps(&mut rng, n, 2);
        let ds = group(steps, 2);
        let mut shuffled = ds.clone();
        shuffled.trajectories.reverse();
        let len = shuffled.trajectories.len();
        shuffled.trajectories.rotate_left(seed as usize % len);
        prop_assert_eq!(ds.stats(), shuffled.stats());
        prop_assert_eq!(ds.stats().screen_count as usize, n);
    }

    #[test]
    fn cosine_symmetric_and_scale_free(
        u in prop::collection::vec(-5.0f64..5.0, 4),
        v in prop::collection::vec(-5.0f64..5.0, 4),
        factor in 0.01f64..100.0,
    ) {
        prop_assume!(u.iter().any(|x| x.abs() > 1e-3) && v.iter().any(|x| x.abs() > 1e-3));
        let (eu, ev) = (EmbeddingVector::new(u.clone()).unwrap(), EmbeddingVector::new(v.clone()).unwrap());
        let uv = cosine(&eu, &ev).unwrap();
        prop_assert_eq!(uv, cosine(&ev, &eu).unwrap());
        prop_assert!((uv - oracle_cosine(&u, &v)).abs() < 1e-12);
        prop_assert!((cosine(&eu.scaled(factor).unwrap(), &ev).unwrap() - uv).abs() < 1e-12);
        prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&uv));
    }

    #[test]
    fn top_k_matches_selection(seed in any::<u64>(), n in 1usize..200, k in 0usize..15) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (steps, _) = random_steps(&mut rng, n, 3);
        let raw: Vec<(StepRef, Vec<f64>)> =
            steps.iter().map(|s| (s.step_ref(), s.embedding.clone().unwrap())).collect();
        let index: Vec<(StepRef, EmbeddingVector)> =
            raw.iter().map(|(r, v)| (r.clone(), EmbeddingVector::new(v.clone()).unwrap())).collect();
        let q = &raw[rng.random_range(0..n)].1;
        let got: Vec<(StepRef, f64)> = top_k(&EmbeddingVector::new(q.clone()).unwrap(), &index, k)
            .unwrap()
            .into_iter()
            .map(|h| (h.step_ref, h.score))
            .collect();
        prop_assert_eq!(got, oracle_top_k(q, &raw, k));
    }

    #[test]
    fn gate_routes_exactly_the_low_scores(seed in any::<u64>(), n in 1usize..40, gamma in 0u8..=5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (steps, _) = random_steps(&mut rng, n, 2);
        let ds = group(steps, 2);
        let outputs = noisy_outputs(&ds, seed);
        let (logs, seen) = gated_run(&ds, &outputs, gamma);
        let mut obs = seen.iter();
        for log in &logs {
            let mut executed: Vec<String> = Vec::new();
            for step in &log.steps {
                // The observation for this step carried exactly the executed prefix.
                prop_assert_eq!(obs.next().unwrap(), &executed);
                prop_assert_eq!(step.intervened, !gate(step.decision.confidence.get(), gamma));
                if step.intervened {
                    prop_assert_eq!(&step.executed_action, &step.gt_action);
                } else {
                    prop_assert_eq!(&step.executed_action, &step.decision.action);
                }
                executed.push(step.executed_action.to_string());
            }
        }
    }

    #[test]
    fn interventions_grow_with_gamma(seed in any::<u64>(), n in 1usize..40) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (steps, _) = random_steps(&mut rng, n, 2);
        let ds = well_formed(group(steps, 2));
        let outputs = noisy_outputs(&ds, seed);
        let counts: Vec<usize> = (0..=5)
            .map(|g| gated_run(&ds, &outputs, g).0.iter().map(|l| l.interventions()).sum())
            .collect();
        prop_assert!(counts.windows(2).all(|w| w[0] <= w[1]), "{:?}", counts);
        prop_assert_eq!(counts[0], 0);
    }

    #[test]
    fn runs_are_reproducible(seed in any::<u64>(), n in 1usize..30, gamma in 0u8..=5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (steps, _) = random_steps(&mut rng, n, 2);
        let ds = group(steps, 2);
        let a = gated_run(&ds, &noisy_outputs(&ds, seed), gamma);
        let b = gated_run(&ds, &noisy_outputs(&ds, seed), gamma);
        prop_assert_eq!(a, b);
    }

    #[test]
    fn step_success_never_exceeds_type_accuracy(seed in any::<u64>(), n in 1usize..40, gamma in 0u8..=5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (steps, _) = random_steps(&mut rng, n, 2);
        let ds = group(steps, 2);
        let (logs, _) = gated_run(&ds, &noisy_outputs(&ds, seed), gamma);
        let r = compute_report(&logs, Gamma::new(gamma as i64).unwrap(), None, &rule()).unwrap();
        prop_assert!(r.sr.unwrap() <= r.type_acc.unwrap());
        for rates in r.per_kind.values() {
            prop_assert!(rates.exact_matches <= rates.type_matches);
        }
        let hsr = r.hsr.unwrap();
        prop_assert!((0.0..=1.0).contains(&hsr));
        prop_assert!(r.tsr <= r.tsr_all_steps);
    }

    #[test]
    fn losses_match_naive_softmax(seed in any::<u64>(), beta in 0.01f64..5.0) {
        let theta = ToyPolicy::random(2, 4, 3, 1.0, seed);
        let reference = ToyPolicy::random(2, 4, 3, 1.0, seed ^ 0xABCD);
        let naive = |p: &ToyPolicy, ctx: usize, toks: &[usize]| -> f64 {
            toks.iter()
                .enumerate()
                .map(|(pos, &t)| {
                    let row: Vec<f64> = (0..3).map(|j| p.logits()[(ctx * 4 + pos) * 3 + j]).collect();
                    (row[t].exp() / row.iter().map(|l| l.exp()).sum::<f64>()).ln()
                })
                .sum()
        };
        let chosen = Response { action: vec![0, 2], score: vec![1] };
        let rejected = Response { action: vec![1], score: vec![2, 0] };
        let pair = PreferencePair { context: 1, chosen: chosen.clone(), rejected };
        let m = beta
            * ((naive(&theta, 1, &[0, 2, 1]) - naive(&reference, 1, &[0, 2, 1]))
                - (naive(&theta, 1, &[1, 2, 0]) - naive(&reference, 1, &[1, 2, 0])));
        let want = (1.0 + (-m).exp()).ln();
        let got = dpo_loss(&theta, &reference, &[pair], beta).unwrap();
        prop_assert!((got - want).abs() < 1e-9, "{} vs {}", got, want);

        let sft = sft_loss(&theta, &[SftExample { context: 0, response: chosen }]).unwrap();
        prop_assert!((sft + naive(&theta, 0, &[0, 2, 1])).abs() < 1e-12);
    }

    #[test]
    fn rejected_scores_sit_across_the_gate(seed in any::<u64>(), n in 1usize..40, gamma in 0u8..=5, k in 1usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (steps, preds) = random_steps(&mut rng, n, 2);
        let out = oracle_forge(&steps, &preds, gamma, 0.0, k, true, true);
        let index = confgate_core::retrieval::RetrievalIndex::build(
            &steps,
            &confgate_core::retrieval::HashedTokenEncoder::default(),
            2,
        )
        .unwrap();
        let table: HashMap<StepRef, (confgate_core::Action, u8)> =
            steps.iter().zip(&preds).map(|(s, p)| (s.step_ref(), p.clone())).collect();
        let mut model = confgate_core::forge::FnPredictor(|s: &TrajectoryStep| {
            let (a, c) = &table[&s.step_ref()];
            Ok(confgate_core::forge::ScoredAction { action: a.clone(), score: conf(*c as i64) })
        });
        let cfg = confgate_core::ForgeConfig::new(Gamma::new(gamma as i64).unwrap(), 0.0, k).unwrap();
        let got = confgate_core::build_dpo_dataset(&steps, &mut model, &index, &cfg).unwrap();
        prop_assert_eq!(canonical(got.triplets.clone()), canonical(out));
        if gamma == 0 || gamma == 5 {
            // Every score sits on the same side: nothing to correct.
            prop_assert!(got.triplets.is_empty());
        }
        for t in &got.triplets {
            let (c, r) = (t.chosen.score.get(), t.rejected.score.get());
            // The farthest score stays on the annotation's side only for
            // (2, γ=1) and (4, γ=4).
            if !matches!((c, gamma), (2, 1) | (4, 4)) {
                prop_assert_ne!(gate(c, gamma), gate(r, gamma), "{:?}", t);
            }
        }
    }
}
