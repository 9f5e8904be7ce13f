//! HTTP service: episode control, the intervention queue, reports, and a
//! server-sent event stream.

use std::collections::{BTreeMap, HashMap};
use std::convert::Infallible;
use std::fs::OpenOptions;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::StatusCode;
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use confgate_core::engine::{
    read_episode_logs, run_adaptive_observed, write_episode_end, write_step_line, Agent, AgentOutput, EpisodeConfig,
    EpisodeLog, EpisodeStatus, OracleAgent, ReplayEnv, ReplayMode, ScriptedAgent, StepRecord,
};
use confgate_core::metrics::{compute_report, MatchRule};
use confgate_core::queue::{InterventionQueue, InterventionRequest, QueueError, QueueEvent, QueueIntervener, RequestState};
use confgate_core::score::Gamma;
use confgate_core::trajectory::{Dataset, StepRef};
use futures::Stream;
use serde::{Deserialize, Serialize};
use tokio::sync::broadcast;

pub struct ServerConfig {
    pub dataset: Dataset,
    pub log_dir: PathBuf,
    pub ttl: Duration,
    pub default_gamma: Gamma,
    pub step_cap: usize,
    pub mode: ReplayMode,
    pub rule: MatchRule,
}

/// Everything pushed on `/events`. Clients deduplicate step events by
/// `(episode_id, step_index)` and request events by `(request_id, event)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum ServerEvent {
    Step(StepRecord),
    EpisodeEnd {
        episode_id: String,
        status: EpisodeStatus,
        failure: Option<String>,
    },
    Requested(InterventionRequest),
    Claimed(InterventionRequest),
    Resolved(InterventionRequest),
    Expired(InterventionRequest),
}

impl ServerEvent {
    fn name(&self) -> &'static str {
        match self {
            ServerEvent::Step(_) => "step",
            ServerEvent::EpisodeEnd { .. } => "episode_end",
            ServerEvent::Requested(_) => "requested",
            ServerEvent::Claimed(_) => "claimed",
            ServerEvent::Resolved(_) => "resolved",
            ServerEvent::Expired(_) => "expired",
        }
    }

    fn id(&self) -> String {
        match self {
            ServerEvent::Step(s) => format!("{}:{}", s.episode_id, s.step_index),
            ServerEvent::EpisodeEnd { episode_id, .. } => format!("{episode_id}:end"),
            ServerEvent::Requested(r)
            | ServerEvent::Claimed(r)
            | ServerEvent::Resolved(r)
            | ServerEvent::Expired(r) => format!("{}:{}", r.request_id, self.name()),
        }
    }
}

impl From<QueueEvent> for ServerEvent {
    fn from(e: QueueEvent) -> Self {
        match e {
            QueueEvent::Requested(r) => ServerEvent::Requested(r),
            QueueEvent::Claimed(r) => ServerEvent::Claimed(r),
            QueueEvent::Resolved(r) => ServerEvent::Resolved(r),
            QueueEvent::Expired(r) => ServerEvent::Expired(r),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EpisodeView {
    pub gamma: Gamma,
    #[serde(flatten)]
    pub log: EpisodeLog,
}

pub struct AppState {
    config: ServerConfig,
    queue: Arc<InterventionQueue>,
    episodes: Mutex<BTreeMap<String, EpisodeView>>,
    events: broadcast::Sender<ServerEvent>,
    next_episode: AtomicU64,
}

impl AppState {
    /// Creates the log directory and reloads any episode logs already in it.
    pub fn new(config: ServerConfig) -> std::io::Result<Arc<Self>> {
        std::fs::create_dir_all(&config.log_dir)?;
        let mut episodes = BTreeMap::new();
        for entry in std::fs::read_dir(&config.log_dir)? {
            let path = entry?.path();
            if path.extension().is_some_and(|e| e == "jsonl") {
                let logs = read_episode_logs(BufReader::new(std::fs::File::open(&path)?))
                    .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, format!("{}: {e}", path.display())))?;
                for log in logs {
                    let view = EpisodeView {
                        gamma: config.default_gamma,
                        log,
                    };
                    episodes.insert(view.log.episode_id.clone(), view);
                }
            }
        }
        let (events, _) = broadcast::channel(4096);
        let queue = Arc::new(InterventionQueue::new(config.ttl));
        let tx = events.clone();
        queue.subscribe(move |e| {
            let _ = tx.send(ServerEvent::from(e.clone()));
        });
        Ok(Arc::new(AppState {
            next_episode: AtomicU64::new(episodes.len() as u64),
            config,
            queue,
            episodes: Mutex::new(episodes),
            events,
        }))
    }

    pub fn queue(&self) -> &Arc<InterventionQueue> {
        &self.queue
    }

    fn episodes(&self) -> std::sync::MutexGuard<'_, BTreeMap<String, EpisodeView>> {
        self.episodes.lock().expect("episode table poisoned")
    }

    fn log_path(&self, episode_id: &str) -> PathBuf {
        episode_log_path(&self.config.log_dir, episode_id)
    }
}

#[derive(Debug)]
pub enum ApiError {
    NotFound(String),
    Conflict(String),
    MalformedAction(String),
    Invalid(String),
    Internal(String),
}

#[derive(Serialize)]
struct ErrorJson<'a> {
    error: &'a str,
    message: String,
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, kind, message) = match self {
            ApiError::NotFound(m) => (StatusCode::NOT_FOUND, "NotFound", m),
            ApiError::Conflict(m) => (StatusCode::CONFLICT, "Conflict", m),
            ApiError::MalformedAction(m) => (StatusCode::UNPROCESSABLE_ENTITY, "MalformedAction", m),
            ApiError::Invalid(m) => (StatusCode::BAD_REQUEST, "InvalidInput", m),
            ApiError::Internal(m) => (StatusCode::INTERNAL_SERVER_ERROR, "Internal", m),
        };
        (status, Json(ErrorJson { error: kind, message })).into_response()
    }
}

impl From<QueueError> for ApiError {
    fn from(e: QueueError) -> Self {
        match e {
            QueueError::NotFound(_) => ApiError::NotFound(e.to_string()),
            QueueError::Conflict { .. } => ApiError::Conflict(e.to_string()),
            QueueError::MalformedAction(_) => ApiError::MalformedAction(e.to_string()),
        }
    }
}

fn parse_body<T: for<'de> Deserialize<'de> + Default>(body: &Bytes) -> Result<T, ApiError> {
    if body.iter().all(u8::is_ascii_whitespace) {
        return Ok(T::default());
    }
    serde_json::from_slice(body).map_err(|e| ApiError::Invalid(format!("bad JSON body: {e}")))
}

/// One scripted agent output, for episodes driven by a caller-supplied script.
#[derive(Debug, Clone, Deserialize)]
pub struct ScriptStep {
    pub step_index: usize,
    pub action: String,
    pub confidence: i64,
}

#[derive(Debug, Default, Deserialize)]
pub struct StartEpisode {
    pub trajectory_id: String,
    pub episode_id: Option<String>,
    pub gamma: Option<i64>,
    pub step_cap: Option<usize>,
    /// `recorded` (default) or `oracle`; ignored when `script` is given.
    pub agent: Option<String>,
    pub script: Option<Vec<ScriptStep>>,
}

fn valid_episode_id(id: &str) -> bool {
    !id.is_empty() && id.len() <= 128 && id.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c)) && !id.starts_with('.')
}

async fn start_episode(State(state): State<Arc<AppState>>, body: Bytes) -> Result<(StatusCode, Json<EpisodeView>), ApiError> {
    let req: StartEpisode = parse_body(&body)?;
    let trajectory = state
        .config
        .dataset
        .trajectory(&req.trajectory_id)
        .cloned()
        .ok_or_else(|| ApiError::NotFound(format!("no trajectory {:?}", req.trajectory_id)))?;
    let gamma = match req.gamma {
        Some(g) => Gamma::new(g).map_err(|e| ApiError::Invalid(e.to_string()))?,
        None => state.config.default_gamma,
    };
    let step_cap = req.step_cap.unwrap_or(state.config.step_cap);
    if step_cap == 0 {
        return Err(ApiError::Invalid("step_cap must be positive".into()));
    }
    let agent: Box<dyn Agent + Send> = match (&req.script, req.agent.as_deref()) {
        (Some(script), _) => Box::new(ScriptedAgent::new(
            script
                .iter()
                .map(|s| {
                    (
                        StepRef::new(trajectory.trajectory_id.clone(), s.step_index),
                        AgentOutput::new(s.action.clone(), s.confidence),
                    )
                })
                .collect::<HashMap<_, _>>(),
        )),
        (None, None | Some("recorded")) => Box::new(ScriptedAgent::from_dataset(&state.config.dataset)),
        (None, Some("oracle")) => Box::new(OracleAgent::from_dataset(&state.config.dataset)),
        (None, Some(other)) => return Err(ApiError::Invalid(format!("unknown agent {other:?}"))),
    };

    let episode_id = match req.episode_id {
        Some(id) if valid_episode_id(&id) => id,
        Some(id) => return Err(ApiError::Invalid(format!("episode id {id:?} must be [A-Za-z0-9._-]"))),
        None => loop {
            let id = format!("ep-{}", state.next_episode.fetch_add(1, Ordering::Relaxed) + 1);
            if !state.episodes().contains_key(&id) {
                break id;
            }
        },
    };
    let view = EpisodeView {
        gamma,
        log: EpisodeLog {
            episode_id: episode_id.clone(),
            trajectory_id: trajectory.trajectory_id.clone(),
            goal: trajectory.goal.clone(),
            steps: Vec::new(),
            status: EpisodeStatus::Running,
            failed_step: None,
            failure: None,
        },
    };
    {
        let mut episodes = state.episodes();
        if episodes.contains_key(&episode_id) {
            return Err(ApiError::Conflict(format!("episode {episode_id:?} already exists")));
        }
        episodes.insert(episode_id.clone(), view.clone());
    }
    let file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(state.log_path(&episode_id))
        .map_err(|e| ApiError::Internal(e.to_string()))?;

    let runner = Arc::clone(&state);
    tokio::task::spawn_blocking(move || run_episode(runner, episode_id, trajectory, gamma, step_cap, agent, file));
    Ok((StatusCode::ACCEPTED, Json(view)))
}

fn run_episode(
    state: Arc<AppState>,
    episode_id: String,
    trajectory: confgate_core::trajectory::Trajectory,
    gamma: Gamma,
    step_cap: usize,
    mut agent: Box<dyn Agent + Send>,
    mut file: std::fs::File,
) {
    let env = ReplayEnv::new(&trajectory)
        .with_mode(state.config.mode)
        .with_rule(state.config.rule);
    let mut intervener = QueueIntervener::new(Arc::clone(&state.queue));
    let outcome = {
        let file = &mut file;
        let state = &state;
        let mut observer = |record: &StepRecord| {
            // Disk first, then the in-memory view, then the stream, so that
            // anything a client hears about is already readable.
            let _ = write_step_line(&mut *file, record).and_then(|_| file.flush());
            if let Some(v) = state.episodes().get_mut(&record.episode_id) {
                v.log.steps.push(record.clone());
            }
            let _ = state.events.send(ServerEvent::Step(record.clone()));
        };
        run_adaptive_observed(
            &episode_id,
            &mut agent,
            &mut intervener,
            env,
            &trajectory.goal,
            gamma,
            EpisodeConfig { step_cap },
            &mut observer,
        )
    };
    let log = outcome.into_log();
    let _ = write_episode_end(&mut file, &log).and_then(|_| file.flush());
    let end = ServerEvent::EpisodeEnd {
        episode_id: log.episode_id.clone(),
        status: log.status,
        failure: log.failure.clone(),
    };
    if let Some(v) = state.episodes().get_mut(&episode_id) {
        v.log = log;
    }
    let _ = state.events.send(end);
}

#[derive(Debug, Serialize)]
struct EpisodeSummary {
    episode_id: String,
    trajectory_id: String,
    gamma: Gamma,
    status: EpisodeStatus,
    steps: usize,
    interventions: usize,
}

async fn list_episodes(State(state): State<Arc<AppState>>) -> Json<Vec<EpisodeSummary>> {
    Json(
        state
            .episodes()
            .values()
            .map(|v| EpisodeSummary {
                episode_id: v.log.episode_id.clone(),
                trajectory_id: v.log.trajectory_id.clone(),
                gamma: v.gamma,
                status: v.log.status,
                steps: v.log.steps.len(),
                interventions: v.log.interventions(),
            })
            .collect(),
    )
}

async fn get_episode(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> Result<Json<EpisodeView>, ApiError> {
    state
        .episodes()
        .get(&id)
        .cloned()
        .map(Json)
        .ok_or_else(|| ApiError::NotFound(format!("no episode {id:?}")))
}

#[derive(Debug, Deserialize)]
struct StateFilter {
    state: Option<String>,
}

async fn list_interventions(
    State(state): State<Arc<AppState>>,
    Query(filter): Query<StateFilter>,
) -> Result<Json<Vec<InterventionRequest>>, ApiError> {
    let wanted = filter
        .state
        .map(|s| s.parse::<RequestState>().map_err(ApiError::Invalid))
        .transpose()?;
    Ok(Json(state.queue.list(wanted)))
}

async fn get_intervention(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
) -> Result<Json<InterventionRequest>, ApiError> {
    Ok(Json(state.queue.get(&id)?))
}

#[derive(Debug, Default, Deserialize)]
struct ClaimBody {
    operator: Option<String>,
}

async fn claim(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    body: Bytes,
) -> Result<Json<InterventionRequest>, ApiError> {
    let body: ClaimBody = parse_body(&body)?;
    let operator = body.operator.unwrap_or_else(|| "operator".to_string());
    Ok(Json(state.queue.claim(&id, &operator)?))
}

#[derive(Debug, Default, Deserialize)]
struct ResolveBody {
    action: Option<String>,
}

async fn resolve(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    body: Bytes,
) -> Result<Json<InterventionRequest>, ApiError> {
    let body: ResolveBody = parse_body(&body)?;
    let action = body.action.ok_or_else(|| ApiError::Invalid("missing \"action\"".into()))?;
    Ok(Json(state.queue.resolve(&id, &action)?))
}

#[derive(Debug, Deserialize)]
struct ReportQuery {
    human_steps: Option<u64>,
}

async fn report(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<ReportQuery>,
) -> Result<Response, ApiError> {
    let view = state
        .episodes()
        .get(&id)
        .cloned()
        .ok_or_else(|| ApiError::NotFound(format!("no episode {id:?}")))?;
    let report = compute_report(&[view.log], view.gamma, q.human_steps, &state.config.rule)
        .map_err(|e| ApiError::Invalid(e.to_string()))?;
    Ok(Json(report).into_response())
}

async fn events(State(state): State<Arc<AppState>>) -> Sse<impl Stream<Item = Result<Event, Infallible>>> {
    let rx = state.events.subscribe();
    let stream = futures::stream::unfold(rx, |mut rx| async move {
        loop {
            match rx.recv().await {
                Ok(ev) => {
                    let event = Event::default()
                        .event(ev.name())
                        .id(ev.id())
                        .json_data(&ev)
                        .unwrap_or_else(|_| Event::default().comment("unserializable event"));
                    return Some((Ok(event), rx));
                }
                // At-least-once is the contract; a lagging client refetches state.
                Err(broadcast::error::RecvError::Lagged(_)) => continue,
                Err(broadcast::error::RecvError::Closed) => return None,
            }
        }
    });
    Sse::new(stream).keep_alive(KeepAlive::default())
}

async fn health() -> &'static str {
    "ok"
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/episodes", post(start_episode).get(list_episodes))
        .route("/episodes/{id}", get(get_episode))
        .route("/interventions", get(list_interventions))
        .route("/interventions/{id}", get(get_intervention))
        .route("/interventions/{id}/claim", post(claim))
        .route("/interventions/{id}/resolve", post(resolve))
        .route("/reports/{id}", get(report))
        .route("/events", get(events))
        .with_state(state)
}

pub async fn serve(listener: tokio::net::TcpListener, state: Arc<AppState>) -> std::io::Result<()> {
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

/// Path of an episode's log file under `dir`.
pub fn episode_log_path(dir: &Path, episode_id: &str) -> PathBuf {
    dir.join(format!("{episode_id}.jsonl"))
}
