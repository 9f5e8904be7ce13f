//! The fully automated and the confidence-gated interaction loops, run
//! against a replay of a recorded trajectory.
//!
//! At every step the agent proposes `(a_t, c_t)`. In the automated loop
//! `a_t` is executed as is. In the adaptive loop `a_t` is executed only when
//! `c_t > γ`; otherwise an [`Intervener`] supplies the action. Whatever is
//! executed is appended to the history the agent sees next.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::action::{parse_action, Action};
use crate::metrics::MatchRule;
use crate::score::{decision, Confidence, Gamma};
use crate::trajectory::{Dataset, StepRef, Trajectory, TrajectoryStep};

pub const DEFAULT_STEP_CAP: usize = 10;

/// What the agent sees at one step.
#[derive(Debug, Clone, Copy)]
pub struct Observation<'a> {
    pub step_ref: &'a StepRef,
    pub screenshot_ref: &'a str,
    pub embedding: Option<&'a [f64]>,
    pub history: &'a [String],
    pub goal: &'a str,
}

/// Unparsed agent output: grammar text plus an integer score.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentOutput {
    pub action: String,
    pub confidence: i64,
}

impl AgentOutput {
    pub fn new(action: impl Into<String>, confidence: i64) -> Self {
        AgentOutput {
            action: action.into(),
            confidence,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AgentDecision {
    pub action: Action,
    pub confidence: Confidence,
}

impl TryFrom<&AgentOutput> for AgentDecision {
    type Error = String;

    fn try_from(out: &AgentOutput) -> Result<Self, Self::Error> {
        let action = parse_action(&out.action).map_err(|e| e.to_string())?;
        let confidence = Confidence::new(out.confidence).map_err(|e| e.to_string())?;
        Ok(AgentDecision { action, confidence })
    }
}

pub trait Agent {
    fn act(&mut self, obs: &Observation<'_>) -> Result<AgentOutput, String>;
}

impl<A: Agent + ?Sized> Agent for &mut A {
    fn act(&mut self, obs: &Observation<'_>) -> Result<AgentOutput, String> {
        (**self).act(obs)
    }
}

impl<A: Agent + ?Sized> Agent for Box<A> {
    fn act(&mut self, obs: &Observation<'_>) -> Result<AgentOutput, String> {
        (**self).act(obs)
    }
}

/// Adapts a closure into an [`Agent`].
pub struct FnAgent<F>(pub F);

impl<F> Agent for FnAgent<F>
where
    F: FnMut(&Observation<'_>) -> Result<AgentOutput, String>,
{
    fn act(&mut self, obs: &Observation<'_>) -> Result<AgentOutput, String> {
        (self.0)(obs)
    }
}

/// Replays a fixed table of outputs keyed by step; an unknown step is an
/// agent failure.
#[derive(Debug, Clone, Default)]
pub struct ScriptedAgent {
    outputs: HashMap<StepRef, AgentOutput>,
}

#[derive(Debug, Deserialize, Serialize)]
struct PredictionRecord {
    trajectory_id: String,
    step_index: usize,
    action: String,
    confidence: i64,
}

impl ScriptedAgent {
    pub fn new(outputs: HashMap<StepRef, AgentOutput>) -> Self {
        ScriptedAgent { outputs }
    }

    /// Uses the `pred_action`/`pred_confidence` columns of a dataset.
    pub fn from_dataset(dataset: &Dataset) -> Self {
        let outputs = dataset
            .steps()
            .filter_map(|s| {
                let (a, c) = (s.pred_action.as_ref()?, s.pred_confidence?);
                Some((s.step_ref(), AgentOutput::new(a.to_string(), c.get() as i64)))
            })
            .collect();
        ScriptedAgent { outputs }
    }

    /// Reads a prediction log: JSONL of
    /// `{"trajectory_id","step_index","action","confidence"}`. Action text is
    /// kept raw so that unparseable model output surfaces as an agent failure.
    pub fn from_prediction_log<R: BufRead>(reader: R) -> Result<Self, String> {
        let mut outputs = HashMap::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| e.to_string())?;
            if line.trim().is_empty() {
                continue;
            }
            let r: PredictionRecord =
                serde_json::from_str(&line).map_err(|e| format!("line {}: {e}", i + 1))?;
            outputs.insert(StepRef::new(r.trajectory_id, r.step_index), AgentOutput::new(r.action, r.confidence));
        }
        Ok(ScriptedAgent { outputs })
    }

    pub fn len(&self) -> usize {
        self.outputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outputs.is_empty()
    }

    pub fn get(&self, step: &StepRef) -> Option<&AgentOutput> {
        self.outputs.get(step)
    }
}

impl Agent for ScriptedAgent {
    fn act(&mut self, obs: &Observation<'_>) -> Result<AgentOutput, String> {
        self.outputs
            .get(obs.step_ref)
            .cloned()
            .ok_or_else(|| format!("no scripted output for step {}", obs.step_ref))
    }
}

/// Emits the recorded ground-truth action with its recorded confidence.
#[derive(Debug, Clone, Default)]
pub struct OracleAgent {
    truth: HashMap<StepRef, (Action, Confidence)>,
}

impl OracleAgent {
    pub fn from_dataset(dataset: &Dataset) -> Self {
        OracleAgent {
            truth: dataset
                .steps()
                .map(|s| (s.step_ref(), (s.gt_action.clone(), s.gt_confidence)))
                .collect(),
        }
    }
}

impl Agent for OracleAgent {
    fn act(&mut self, obs: &Observation<'_>) -> Result<AgentOutput, String> {
        let (a, c) = self
            .truth
            .get(obs.step_ref)
            .ok_or_else(|| format!("step {} not in dataset", obs.step_ref))?;
        Ok(AgentOutput::new(a.to_string(), c.get() as i64))
    }
}

/// Context handed to an intervener when the gate requests help.
#[derive(Debug, Clone, Copy)]
pub struct InterventionContext<'a> {
    pub episode_id: &'a str,
    pub step: &'a TrajectoryStep,
    pub history: &'a [String],
    pub goal: &'a str,
    pub proposed: &'a AgentDecision,
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
pub enum IntervenerError {
    #[error("intervener unavailable: {0}")]
    Unavailable(String),
}

pub trait Intervener {
    fn intervene(&mut self, ctx: &InterventionContext<'_>) -> Result<Action, IntervenerError>;
}

impl<I: Intervener + ?Sized> Intervener for &mut I {
    fn intervene(&mut self, ctx: &InterventionContext<'_>) -> Result<Action, IntervenerError> {
        (**self).intervene(ctx)
    }
}

impl<I: Intervener + ?Sized> Intervener for Box<I> {
    fn intervene(&mut self, ctx: &InterventionContext<'_>) -> Result<Action, IntervenerError> {
        (**self).intervene(ctx)
    }
}

/// Stand-in for the human: returns the step's ground-truth action.
pub fn oracle_intervener(step: &TrajectoryStep) -> Action {
    step.gt_action.clone()
}

#[derive(Debug, Clone, Copy, Default)]
pub struct OracleIntervener;

impl Intervener for OracleIntervener {
    fn intervene(&mut self, ctx: &InterventionContext<'_>) -> Result<Action, IntervenerError> {
        Ok(oracle_intervener(ctx.step))
    }
}

/// Replays pre-recorded human actions keyed by step.
#[derive(Debug, Clone, Default)]
pub struct ScriptedIntervener {
    actions: HashMap<StepRef, Action>,
}

impl ScriptedIntervener {
    pub fn new(actions: HashMap<StepRef, Action>) -> Self {
        ScriptedIntervener { actions }
    }
}

impl Intervener for ScriptedIntervener {
    fn intervene(&mut self, ctx: &InterventionContext<'_>) -> Result<Action, IntervenerError> {
        self.actions
            .get(&ctx.step.step_ref())
            .cloned()
            .ok_or_else(|| IntervenerError::Unavailable(format!("no scripted action for {}", ctx.step.step_ref())))
    }
}

/// Interveners that never answer.
#[derive(Debug, Clone, Copy, Default)]
pub struct AbsentIntervener;

impl Intervener for AbsentIntervener {
    fn intervene(&mut self, _: &InterventionContext<'_>) -> Result<Action, IntervenerError> {
        Err(IntervenerError::Unavailable("no intervener configured".into()))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReplayMode {
    /// A mismatch is logged and the recorded state still advances.
    #[default]
    TeacherForcing,
    /// A mismatch ends the episode.
    Strict,
}

/// Environment whose states are the recorded steps of one trajectory.
#[derive(Debug, Clone)]
pub struct ReplayEnv<'a> {
    trajectory: &'a Trajectory,
    cursor: usize,
    mode: ReplayMode,
    rule: MatchRule,
}

impl<'a> ReplayEnv<'a> {
    pub fn new(trajectory: &'a Trajectory) -> Self {
        ReplayEnv {
            trajectory,
            cursor: 0,
            mode: ReplayMode::default(),
            rule: MatchRule::default(),
        }
    }

    pub fn with_mode(mut self, mode: ReplayMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_rule(mut self, rule: MatchRule) -> Self {
        self.rule = rule;
        self
    }

    /// Positions the replay at a given recorded step (used when resuming).
    pub fn seek(mut self, cursor: usize) -> Self {
        self.cursor = cursor;
        self
    }

    pub fn trajectory(&self) -> &'a Trajectory {
        self.trajectory
    }

    pub fn mode(&self) -> ReplayMode {
        self.mode
    }

    pub fn current(&self) -> Option<&'a TrajectoryStep> {
        self.trajectory.steps.get(self.cursor)
    }

    /// Whether `action` reproduces the recorded step under the match rule.
    /// Coordinate actions without screen dimensions fall back to pixel
    /// equality.
    pub fn matches(&self, action: &Action) -> bool {
        match self.current() {
            Some(step) => self
                .rule
                .action_match(action, &step.gt_action)
                .map(|m| m.exact)
                .unwrap_or(action == &step.gt_action),
            None => false,
        }
    }

    fn advance(&mut self) {
        self.cursor += 1;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Source {
    Agent,
    Intervener,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EpisodeStatus {
    Running,
    Completed,
    Impossible,
    StepCap,
    EnvExhausted,
    AgentFailure,
    Suspended,
}

impl EpisodeStatus {
    pub fn is_final(self) -> bool {
        !matches!(self, EpisodeStatus::Running | EpisodeStatus::Suspended)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub episode_id: String,
    pub trajectory_id: String,
    pub step_index: usize,
    pub screenshot_ref: String,
    pub decision: AgentDecision,
    pub intervened: bool,
    pub executed_action: Action,
    pub source: Source,
    pub gt_action: Action,
    pub gt_confidence: Confidence,
    pub matched: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub episode_id: String,
    pub trajectory_id: String,
    pub goal: String,
    pub steps: Vec<StepRecord>,
    pub status: EpisodeStatus,
    /// First step whose executed action did not match the recording, or the
    /// step where the agent failed.
    pub failed_step: Option<usize>,
    pub failure: Option<String>,
}

impl EpisodeLog {
    pub fn interventions(&self) -> usize {
        self.steps.iter().filter(|s| s.intervened).count()
    }

    /// Executed actions so far, serialized; this is the agent's history.
    pub fn history(&self) -> Vec<String> {
        self.steps.iter().map(|s| s.executed_action.to_string()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeConfig {
    pub step_cap: usize,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        EpisodeConfig {
            step_cap: DEFAULT_STEP_CAP,
        }
    }
}

/// Everything needed to continue an episode whose intervention request went
/// unanswered.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuspendedEpisode {
    pub log: EpisodeLog,
    pub gamma: Gamma,
    pub config: EpisodeConfig,
    pub mode: ReplayMode,
    pub pending: AgentDecision,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum EpisodeOutcome {
    Finished(EpisodeLog),
    Suspended(SuspendedEpisode),
}

impl EpisodeOutcome {
    pub fn log(&self) -> &EpisodeLog {
        match self {
            EpisodeOutcome::Finished(log) => log,
            EpisodeOutcome::Suspended(s) => &s.log,
        }
    }

    pub fn into_log(self) -> EpisodeLog {
        match self {
            EpisodeOutcome::Finished(log) => log,
            EpisodeOutcome::Suspended(s) => s.log,
        }
    }
}

#[derive(Clone, Copy)]
enum Gate {
    Automated,
    Adaptive(Gamma),
}

/// One episode in progress. Generic over the observer notified after each
/// executed step.
struct Episode<'e, 'o> {
    log: EpisodeLog,
    history: Vec<String>,
    env: ReplayEnv<'e>,
    config: EpisodeConfig,
    gate: Gate,
    observer: &'o mut dyn FnMut(&StepRecord),
}

enum Next {
    Continue,
    Done,
    Suspend(AgentDecision, String),
}

impl Episode<'_, '_> {
    fn execute(&mut self, decision_: AgentDecision, executed: Action, intervened: bool) -> Next {
        let state = self.env.current().expect("execute called on a live state");
        let matched = self.env.matches(&executed);
        let record = StepRecord {
            episode_id: self.log.episode_id.clone(),
            trajectory_id: state.trajectory_id.clone(),
            step_index: self.log.steps.len(),
            screenshot_ref: state.screenshot_ref.clone(),
            decision: decision_,
            intervened,
            executed_action: executed.clone(),
            source: if intervened { Source::Intervener } else { Source::Agent },
            gt_action: state.gt_action.clone(),
            gt_confidence: state.gt_confidence,
            matched,
        };
        (self.observer)(&record);
        self.history.push(executed.to_string());
        self.log.steps.push(record);
        if !matched && self.log.failed_step.is_none() {
            self.log.failed_step = Some(self.log.steps.len() - 1);
        }

        match executed {
            Action::Complete => {
                self.log.status = EpisodeStatus::Completed;
                return Next::Done;
            }
            Action::Impossible => {
                self.log.status = EpisodeStatus::Impossible;
                return Next::Done;
            }
            _ => {}
        }
        if !matched && self.env.mode() == ReplayMode::Strict {
            self.log.status = EpisodeStatus::EnvExhausted;
            return Next::Done;
        }
        self.env.advance();
        Next::Continue
    }

    fn step<A: Agent, I: Intervener>(&mut self, agent: &mut A, intervener: &mut I) -> Next {
        if self.log.steps.len() >= self.config.step_cap {
            self.log.status = EpisodeStatus::StepCap;
            return Next::Done;
        }
        let Some(state) = self.env.current() else {
            self.log.status = EpisodeStatus::EnvExhausted;
            return Next::Done;
        };
        let step_ref = state.step_ref();
        let obs = Observation {
            step_ref: &step_ref,
            screenshot_ref: &state.screenshot_ref,
            embedding: state.embedding.as_deref(),
            history: &self.history,
            goal: &self.log.goal,
        };
        let proposed = match agent.act(&obs).and_then(|out| AgentDecision::try_from(&out)) {
            Ok(d) => d,
            Err(message) => {
                self.log.status = EpisodeStatus::AgentFailure;
                self.log.failed_step = Some(self.log.steps.len());
                self.log.failure = Some(message);
                return Next::Done;
            }
        };

        let autonomous = match self.gate {
            Gate::Automated => true,
            Gate::Adaptive(gamma) => decision(proposed.confidence, gamma),
        };
        if autonomous {
            let action = proposed.action.clone();
            return self.execute(proposed, action, false);
        }
        let ctx = InterventionContext {
            episode_id: &self.log.episode_id,
            step: state,
            history: &self.history,
            goal: &self.log.goal,
            proposed: &proposed,
        };
        match intervener.intervene(&ctx) {
            Ok(action) => self.execute(proposed, action, true),
            Err(IntervenerError::Unavailable(reason)) => Next::Suspend(proposed, reason),
        }
    }

    fn run<A: Agent, I: Intervener>(mut self, agent: &mut A, intervener: &mut I) -> EpisodeOutcome {
        loop {
            match self.step(agent, intervener) {
                Next::Continue => {}
                Next::Done => return EpisodeOutcome::Finished(self.log),
                Next::Suspend(pending, reason) => {
                    let Gate::Adaptive(gamma) = self.gate else {
                        unreachable!("automated episodes never request intervention")
                    };
                    self.log.status = EpisodeStatus::Suspended;
                    self.log.failure = Some(format!("IntervenerUnavailable: {reason}"));
                    return EpisodeOutcome::Suspended(SuspendedEpisode {
                        mode: self.env.mode(),
                        log: self.log,
                        gamma,
                        config: self.config,
                        pending,
                        reason,
                    });
                }
            }
        }
    }
}

fn new_episode<'e, 'o>(
    episode_id: &str,
    env: ReplayEnv<'e>,
    goal: &str,
    config: EpisodeConfig,
    gate: Gate,
    observer: &'o mut dyn FnMut(&StepRecord),
) -> Episode<'e, 'o> {
    Episode {
        log: EpisodeLog {
            episode_id: episode_id.to_string(),
            trajectory_id: env.trajectory().trajectory_id.clone(),
            goal: goal.to_string(),
            steps: Vec::new(),
            status: EpisodeStatus::Running,
            failed_step: None,
            failure: None,
        },
        history: Vec::new(),
        env,
        config,
        gate,
        observer,
    }
}

/// The fully automated loop: every proposed action is executed.
pub fn run_automated<A: Agent>(
    episode_id: &str,
    agent: &mut A,
    env: ReplayEnv<'_>,
    goal: &str,
    config: EpisodeConfig,
) -> EpisodeLog {
    let mut ignore = |_: &StepRecord| {};
    new_episode(episode_id, env, goal, config, Gate::Automated, &mut ignore)
        .run(agent, &mut AbsentIntervener)
        .into_log()
}

/// The gated loop: execute `a_t` if `c_t > γ`, otherwise ask the
/// intervener. An unavailable intervener suspends the episode.
pub fn run_adaptive<A: Agent, I: Intervener>(
    episode_id: &str,
    agent: &mut A,
    intervener: &mut I,
    env: ReplayEnv<'_>,
    goal: &str,
    gamma: Gamma,
    config: EpisodeConfig,
) -> EpisodeOutcome {
    run_adaptive_observed(episode_id, agent, intervener, env, goal, gamma, config, &mut |_| {})
}

/// [`run_adaptive`] with a callback invoked after each executed step.
#[allow(clippy::too_many_arguments)]
pub fn run_adaptive_observed<A: Agent, I: Intervener>(
    episode_id: &str,
    agent: &mut A,
    intervener: &mut I,
    env: ReplayEnv<'_>,
    goal: &str,
    gamma: Gamma,
    config: EpisodeConfig,
    observer: &mut dyn FnMut(&StepRecord),
) -> EpisodeOutcome {
    new_episode(episode_id, env, goal, config, Gate::Adaptive(gamma), observer).run(agent, intervener)
}

/// Continues a suspended episode: the late answer `resolved` is executed for
/// the pending step, then the loop carries on.
pub fn resume_adaptive<A: Agent, I: Intervener>(
    suspended: SuspendedEpisode,
    resolved: Action,
    agent: &mut A,
    intervener: &mut I,
    trajectory: &Trajectory,
    rule: MatchRule,
    observer: &mut dyn FnMut(&StepRecord),
) -> EpisodeOutcome {
    let SuspendedEpisode {
        mut log,
        gamma,
        config,
        mode,
        pending,
        ..
    } = suspended;
    log.status = EpisodeStatus::Running;
    log.failure = None;
    let cursor = log.steps.len();
    let history = log.history();
    let env = ReplayEnv::new(trajectory).with_mode(mode).with_rule(rule).seek(cursor);
    let mut episode = Episode {
        log,
        history,
        env,
        config,
        gate: Gate::Adaptive(gamma),
        observer,
    };
    match episode.execute(pending, resolved, true) {
        Next::Continue => episode.run(agent, intervener),
        _ => EpisodeOutcome::Finished(episode.log),
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum LogLine {
    Step(StepRecord),
    End {
        episode_id: String,
        trajectory_id: String,
        goal: String,
        status: EpisodeStatus,
        failed_step: Option<usize>,
        failure: Option<String>,
    },
}

/// Episode logs as JSONL: one `{"record":"step",...}` line per step, then a
/// `{"record":"end",...}` line per episode.
pub fn write_episode_logs<W: Write>(mut out: W, logs: &[EpisodeLog]) -> std::io::Result<()> {
    for log in logs {
        for step in &log.steps {
            serde_json::to_writer(&mut out, &LogLine::Step(step.clone()))?;
            out.write_all(b"\n")?;
        }
        write_episode_end(&mut out, log)?;
    }
    Ok(())
}

pub fn write_step_line<W: Write>(mut out: W, step: &StepRecord) -> std::io::Result<()> {
    serde_json::to_writer(&mut out, &LogLine::Step(step.clone()))?;
    out.write_all(b"\n")
}

pub fn write_episode_end<W: Write>(mut out: W, log: &EpisodeLog) -> std::io::Result<()> {
    let end = LogLine::End {
        episode_id: log.episode_id.clone(),
        trajectory_id: log.trajectory_id.clone(),
        goal: log.goal.clone(),
        status: log.status,
        failed_step: log.failed_step,
        failure: log.failure.clone(),
    };
    serde_json::to_writer(&mut out, &end)?;
    out.write_all(b"\n")
}

#[derive(Debug, Error)]
pub enum LogReadError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },
}

/// Reads logs written by [`write_episode_logs`]. Steps without a closing
/// `end` line form a log with status RUNNING.
pub fn read_episode_logs<R: BufRead>(reader: R) -> Result<Vec<EpisodeLog>, LogReadError> {
    let mut logs: Vec<EpisodeLog> = Vec::new();
    let mut open: Option<EpisodeLog> = None;
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: LogLine = serde_json::from_str(&line).map_err(|e| LogReadError::Format {
            line: i + 1,
            message: e.to_string(),
        })?;
        match parsed {
            LogLine::Step(step) => {
                if open.as_ref().is_some_and(|l| l.episode_id != step.episode_id) {
                    logs.extend(open.take());
                }
                let log = open.get_or_insert_with(|| EpisodeLog {
                    episode_id: step.episode_id.clone(),
                    trajectory_id: step.trajectory_id.clone(),
                    goal: String::new(),
                    steps: Vec::new(),
                    status: EpisodeStatus::Running,
                    failed_step: None,
                    failure: None,
                });
                log.steps.push(step);
            }
            LogLine::End {
                episode_id,
                trajectory_id,
                goal,
                status,
                failed_step,
                failure,
            } => {
                let steps = match open.take() {
                    Some(l) if l.episode_id == episode_id => l.steps,
                    Some(l) => {
                        logs.push(l);
                        Vec::new()
                    }
                    None => Vec::new(),
                };
                logs.push(EpisodeLog {
                    episode_id,
                    trajectory_id,
                    goal,
                    steps,
                    status,
                    failed_step,
                    failure,
                });
            }
        }
    }
    logs.extend(open);
    Ok(logs)
}
