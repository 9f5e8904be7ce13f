//! Whole-dataset runs and the γ sensitivity sweep.

use serde::{Deserialize, Serialize};

use crate::engine::{
    run_adaptive, run_automated, Agent, EpisodeConfig, EpisodeLog, EpisodeOutcome, Intervener, OracleIntervener,
    ReplayEnv, ReplayMode, ScriptedAgent,
};
use crate::metrics::{compute_report, MatchRule, MetricsError, MetricsReport};
use crate::score::Gamma;
use crate::trajectory::Dataset;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunSettings {
    pub config: EpisodeConfig,
    pub mode: ReplayMode,
    pub rule: MatchRule,
}

impl Default for RunSettings {
    fn default() -> Self {
        RunSettings {
            config: EpisodeConfig::default(),
            mode: ReplayMode::TeacherForcing,
            rule: MatchRule::default(),
        }
    }
}

/// One automated episode per trajectory; episode ids are trajectory ids.
pub fn run_dataset_automated<A: Agent>(dataset: &Dataset, agent: &mut A, settings: &RunSettings) -> Vec<EpisodeLog> {
    dataset
        .trajectories
        .iter()
        .map(|t| {
            let env = ReplayEnv::new(t).with_mode(settings.mode).with_rule(settings.rule);
            run_automated(&t.trajectory_id, agent, env, &t.goal, settings.config)
        })
        .collect()
}

/// One gated episode per trajectory.
pub fn run_dataset_adaptive<A: Agent, I: Intervener>(
    dataset: &Dataset,
    agent: &mut A,
    intervener: &mut I,
    gamma: Gamma,
    settings: &RunSettings,
) -> Vec<EpisodeOutcome> {
    dataset
        .trajectories
        .iter()
        .map(|t| {
            let env = ReplayEnv::new(t).with_mode(settings.mode).with_rule(settings.rule);
            run_adaptive(&t.trajectory_id, agent, intervener, env, &t.goal, gamma, settings.config)
        })
        .collect()
}

/// Offline scoring of recorded predictions: the dataset's prediction columns
/// act as the agent, ground truth answers every intervention, and every
/// recorded step is visited.
pub fn evaluate_predictions(dataset: &Dataset, gamma: Gamma, rule: MatchRule) -> Vec<EpisodeLog> {
    let longest = dataset.trajectories.iter().map(|t| t.steps.len()).max().unwrap_or(1);
    let settings = RunSettings {
        config: EpisodeConfig { step_cap: longest.max(1) },
        mode: ReplayMode::TeacherForcing,
        rule,
    };
    let mut agent = ScriptedAgent::from_dataset(dataset);
    run_dataset_adaptive(dataset, &mut agent, &mut OracleIntervener, gamma, &settings)
        .into_iter()
        .map(EpisodeOutcome::into_log)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub gamma: u8,
    pub episodes: u64,
    pub steps: u64,
    pub interventions: u64,
    pub aif: f64,
    pub hsr: Option<f64>,
    pub ip: Option<f64>,
    pub type_acc: Option<f64>,
    pub sr: Option<f64>,
    pub tsr: f64,
}

impl From<&MetricsReport> for SweepRow {
    fn from(r: &MetricsReport) -> Self {
        SweepRow {
            gamma: r.gamma.get(),
            episodes: r.episodes,
            steps: r.steps,
            interventions: r.interventions,
            aif: r.aif,
            hsr: r.hsr,
            ip: r.ip,
            type_acc: r.type_acc,
            sr: r.sr,
            tsr: r.tsr,
        }
    }
}

/// Runs the gated loop over the dataset at each γ with fresh agent and
/// intervener instances.
pub fn gamma_sweep<A, I>(
    dataset: &Dataset,
    gammas: impl IntoIterator<Item = Gamma>,
    mut make_agent: impl FnMut() -> A,
    mut make_intervener: impl FnMut() -> I,
    settings: &RunSettings,
) -> Result<Vec<(MetricsReport, Vec<EpisodeLog>)>, MetricsError>
where
    A: Agent,
    I: Intervener,
{
    gammas
        .into_iter()
        .map(|gamma| {
            let logs: Vec<EpisodeLog> =
                run_dataset_adaptive(dataset, &mut make_agent(), &mut make_intervener(), gamma, settings)
                    .into_iter()
                    .map(EpisodeOutcome::into_log)
                    .collect();
            let report = compute_report(&logs, gamma, None, &settings.rule)?;
            Ok((report, logs))
        })
        .collect()
}
