//! Shared intervention queue: the channel through which a human supplies
//! `a'_t` for gated steps.
//!
//! Requests move `PENDING → CLAIMED → RESOLVED`, or to `EXPIRED` from either
//! of the first two once their TTL passes. All transitions happen under one
//! lock, so claim and resolve are linearizable.

use std::collections::BTreeMap;
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::action::{parse_action, Action, ActionError};
use crate::engine::{AgentDecision, Intervener, IntervenerError, InterventionContext};

pub const DEFAULT_TTL: Duration = Duration::from_secs(300);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RequestState {
    Pending,
    Claimed,
    Resolved,
    Expired,
}

impl std::str::FromStr for RequestState {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "PENDING" => Ok(RequestState::Pending),
            "CLAIMED" => Ok(RequestState::Claimed),
            "RESOLVED" => Ok(RequestState::Resolved),
            "EXPIRED" => Ok(RequestState::Expired),
            other => Err(format!("unknown request state {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterventionRequest {
    pub request_id: String,
    pub episode_id: String,
    pub step_index: usize,
    pub screenshot_ref: String,
    pub goal: String,
    pub history: Vec<String>,
    pub proposed: AgentDecision,
    /// Unix epoch milliseconds.
    pub created_at: u64,
    pub state: RequestState,
    pub claimed_by: Option<String>,
    pub resolution: Option<Action>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QueueError {
    #[error("no intervention request {0:?}")]
    NotFound(String),
    #[error("request {id:?} is {state:?}")]
    Conflict { id: String, state: RequestState },
    #[error(transparent)]
    MalformedAction(#[from] ActionError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum QueueEvent {
    Requested(InterventionRequest),
    Claimed(InterventionRequest),
    Resolved(InterventionRequest),
    Expired(InterventionRequest),
}

type Listener = Box<dyn Fn(&QueueEvent) + Send + Sync>;

struct Entry {
    request: InterventionRequest,
    deadline: Instant,
}

#[derive(Default)]
struct Inner {
    next_id: u64,
    entries: BTreeMap<String, Entry>,
}

pub struct InterventionQueue {
    inner: Mutex<Inner>,
    resolved: Condvar,
    ttl: Duration,
    listeners: Mutex<Vec<Listener>>,
}

impl Default for InterventionQueue {
    fn default() -> Self {
        InterventionQueue::new(DEFAULT_TTL)
    }
}

impl std::fmt::Debug for InterventionQueue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("InterventionQueue").field("ttl", &self.ttl).finish_non_exhaustive()
    }
}

fn now_millis() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or_default()
}

impl InterventionQueue {
    pub fn new(ttl: Duration) -> Self {
        InterventionQueue {
            inner: Mutex::new(Inner::default()),
            resolved: Condvar::new(),
            ttl,
            listeners: Mutex::new(Vec::new()),
        }
    }

    pub fn ttl(&self) -> Duration {
        self.ttl
    }

    /// Registers a callback for every state transition. Callbacks run after
    /// the queue lock is released.
    pub fn subscribe(&self, listener: impl Fn(&QueueEvent) + Send + Sync + 'static) {
        self.listeners.lock().expect("listener lock").push(Box::new(listener));
    }

    fn emit(&self, event: QueueEvent) {
        for l in self.listeners.lock().expect("listener lock").iter() {
            l(&event);
        }
    }

    fn lock(&self) -> MutexGuard<'_, Inner> {
        self.inner.lock().expect("queue lock poisoned")
    }

    /// Expires overdue requests, returning the ones that changed.
    fn sweep(inner: &mut Inner, now: Instant) -> Vec<InterventionRequest> {
        let mut expired = Vec::new();
        for e in inner.entries.values_mut() {
            if matches!(e.request.state, RequestState::Pending | RequestState::Claimed) && now >= e.deadline {
                e.request.state = RequestState::Expired;
                expired.push(e.request.clone());
            }
        }
        expired
    }

    fn sweep_and_emit(&self, inner: MutexGuard<'_, Inner>, mut inner_guard_fn: impl FnMut(&mut Inner)) {
        let mut inner = inner;
        let expired = Self::sweep(&mut inner, Instant::now());
        inner_guard_fn(&mut inner);
        drop(inner);
        if !expired.is_empty() {
            self.resolved.notify_all();
        }
        for r in expired {
            self.emit(QueueEvent::Expired(r));
        }
    }

    pub fn submit(
        &self,
        episode_id: &str,
        step_index: usize,
        screenshot_ref: &str,
        goal: &str,
        history: &[String],
        proposed: AgentDecision,
    ) -> InterventionRequest {
        let mut inner = self.lock();
        inner.next_id += 1;
        let request = InterventionRequest {
            request_id: format!("req-{}", inner.next_id),
            episode_id: episode_id.to_string(),
            step_index,
            screenshot_ref: screenshot_ref.to_string(),
            goal: goal.to_string(),
            history: history.to_vec(),
            proposed,
            created_at: now_millis(),
            state: RequestState::Pending,
            claimed_by: None,
            resolution: None,
        };
        inner.entries.insert(
            request.request_id.clone(),
            Entry {
                request: request.clone(),
                deadline: Instant::now() + self.ttl,
            },
        );
        drop(inner);
        self.emit(QueueEvent::Requested(request.clone()));
        request
    }

    pub fn get(&self, id: &str) -> Result<InterventionRequest, QueueError> {
        let mut found = None;
        self.sweep_and_emit(self.lock(), |inner| {
            found = inner.entries.get(id).map(|e| e.request.clone());
        });
        found.ok_or_else(|| QueueError::NotFound(id.to_string()))
    }

    pub fn list(&self, state: Option<RequestState>) -> Vec<InterventionRequest> {
        let mut out = Vec::new();
        self.sweep_and_emit(self.lock(), |inner| {
            out = inner
                .entries
                .values()
                .filter(|e| state.is_none_or(|s| e.request.state == s))
                .map(|e| e.request.clone())
                .collect();
        });
        out.sort_by_key(|r| (r.created_at, r.request_id.len(), r.request_id.clone()));
        out
    }

    /// `PENDING → CLAIMED`. Exactly one of several concurrent claimers wins.
    pub fn claim(&self, id: &str, operator: &str) -> Result<InterventionRequest, QueueError> {
        let mut result = Err(QueueError::NotFound(id.to_string()));
        self.sweep_and_emit(self.lock(), |inner| {
            result = match inner.entries.get_mut(id) {
                None => Err(QueueError::NotFound(id.to_string())),
                Some(e) if e.request.state != RequestState::Pending => Err(QueueError::Conflict {
                    id: id.to_string(),
                    state: e.request.state,
                }),
                Some(e) => {
                    e.request.state = RequestState::Claimed;
                    e.request.claimed_by = Some(operator.to_string());
                    Ok(e.request.clone())
                }
            };
        });
        if let Ok(r) = &result {
            self.emit(QueueEvent::Claimed(r.clone()));
        }
        result
    }

    /// `CLAIMED → RESOLVED` with a parsed action. A malformed action leaves
    /// the request claimed.
    pub fn resolve(&self, id: &str, raw_action: &str) -> Result<InterventionRequest, QueueError> {
        let mut result = Err(QueueError::NotFound(id.to_string()));
        self.sweep_and_emit(self.lock(), |inner| {
            result = match inner.entries.get_mut(id) {
                None => Err(QueueError::NotFound(id.to_string())),
                Some(e) if e.request.state != RequestState::Claimed => Err(QueueError::Conflict {
                    id: id.to_string(),
                    state: e.request.state,
                }),
                Some(e) => parse_action(raw_action).map_err(QueueError::from).map(|action| {
                    e.request.state = RequestState::Resolved;
                    e.request.resolution = Some(action);
                    e.request.clone()
                }),
            };
        });
        if let Ok(r) = &result {
            // Announce before waking the episode so no step event can
            // overtake the resolution.
            self.emit(QueueEvent::Resolved(r.clone()));
            self.resolved.notify_all();
        }
        result
    }

    /// Blocks until the request is resolved or expires.
    pub fn wait(&self, id: &str) -> Result<Action, IntervenerError> {
        let mut inner = self.lock();
        loop {
            let expired = Self::sweep(&mut inner, Instant::now());
            if !expired.is_empty() {
                drop(inner);
                self.resolved.notify_all();
                for r in expired {
                    self.emit(QueueEvent::Expired(r));
                }
                inner = self.lock();
                continue;
            }
            let Some(entry) = inner.entries.get(id) else {
                return Err(IntervenerError::Unavailable(format!("request {id} vanished")));
            };
            match entry.request.state {
                RequestState::Resolved => {
                    return Ok(entry.request.resolution.clone().expect("resolved requests carry an action"));
                }
                RequestState::Expired => {
                    return Err(IntervenerError::Unavailable(format!("request {id} expired")));
                }
                RequestState::Pending | RequestState::Claimed => {
                    let timeout = entry.deadline.saturating_duration_since(Instant::now());
                    inner = self
                        .resolved
                        .wait_timeout(inner, timeout.max(Duration::from_millis(1)))
                        .expect("queue lock poisoned")
                        .0;
                }
            }
        }
    }
}

/// Intervener that posts each gated step to a shared queue and blocks for
/// the human's answer.
#[derive(Debug, Clone)]
pub struct QueueIntervener {
    queue: Arc<InterventionQueue>,
}

impl QueueIntervener {
    pub fn new(queue: Arc<InterventionQueue>) -> Self {
        QueueIntervener { queue }
    }
}

impl Intervener for QueueIntervener {
    fn intervene(&mut self, ctx: &InterventionContext<'_>) -> Result<Action, IntervenerError> {
        let request = self.queue.submit(
            ctx.episode_id,
            ctx.history.len(),
            &ctx.step.screenshot_ref,
            ctx.goal,
            ctx.history,
            ctx.proposed.clone(),
        );
        self.queue.wait(&request.request_id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::score::Confidence;
    use std::thread;

    fn proposed() -> AgentDecision {
        AgentDecision {
            action: Action::click(540, 1200),
            confidence: Confidence::new(2).unwrap(),
        }
    }

    fn submit(q: &InterventionQueue) -> String {
        q.submit("ep", 0, "s.png", "goal", &[], proposed()).request_id
    }

    #[test]
    fn happy_path() {
        let q = InterventionQueue::default();
        let id = submit(&q);
        assert_eq!(q.list(Some(RequestState::Pending)).len(), 1);
        q.claim(&id, "op").unwrap();
        let r = q.resolve(&id, "CLICK <point>[[10, 10]]</point>").unwrap();
        assert_eq!(r.state, RequestState::Resolved);
        assert_eq!(q.wait(&id).unwrap(), Action::click(10, 10));
    }

    #[test]
    fn state_machine_conflicts() {
        let q = InterventionQueue::default();
        let id = submit(&q);
        assert!(matches!(q.resolve(&id, "WAIT"), Err(QueueError::Conflict { state: RequestState::Pending, .. })));
        q.claim(&id, "a").unwrap();
        assert!(matches!(q.claim(&id, "b"), Err(QueueError::Conflict { .. })));
        assert!(matches!(q.resolve(&id, "JUMP"), Err(QueueError::MalformedAction(_))));
        assert_eq!(q.get(&id).unwrap().state, RequestState::Claimed);
        q.resolve(&id, "WAIT").unwrap();
        assert!(matches!(q.resolve(&id, "WAIT"), Err(QueueError::Conflict { state: RequestState::Resolved, .. })));
        assert!(matches!(q.claim("nope", "a"), Err(QueueError::NotFound(_))));
    }

    #[test]
    fn ttl_expiry() {
        let q = InterventionQueue::new(Duration::from_millis(30));
        let id = submit(&q);
        let err = q.wait(&id).unwrap_err();
        assert!(matches!(err, IntervenerError::Unavailable(_)));
        assert_eq!(q.get(&id).unwrap().state, RequestState::Expired);
        assert!(matches!(q.claim(&id, "late"), Err(QueueError::Conflict { state: RequestState::Expired, .. })));
    }

    #[test]
    fn concurrent_claims_have_one_winner() {
        for _ in 0..50 {
            let q = Arc::new(InterventionQueue::default());
            let id = submit(&q);
            let handles: Vec<_> = (0..8)
                .map(|i| {
                    let (q, id) = (q.clone(), id.clone());
                    thread::spawn(move || q.claim(&id, &format!("op{i}")).is_ok())
                })
                .collect();
            let wins = handles.into_iter().map(|h| h.join().unwrap()).filter(|&w| w).count();
            assert_eq!(wins, 1);
        }
    }

    #[test]
    fn waiting_thread_unblocks_on_resolve() {
        let q = Arc::new(InterventionQueue::default());
        let id = submit(&q);
        let waiter = {
            let (q, id) = (q.clone(), id.clone());
            thread::spawn(move || q.wait(&id))
        };
        thread::sleep(Duration::from_millis(20));
        q.claim(&id, "op").unwrap();
        q.resolve(&id, "PRESS_BACK").unwrap();
        assert_eq!(waiter.join().unwrap().unwrap(), Action::PressBack);
    }

    #[test]
    fn events_are_published() {
        let q = InterventionQueue::default();
        let seen = Arc::new(Mutex::new(Vec::new()));
        let sink = seen.clone();
        q.subscribe(move |e| {
            let tag = match e {
                QueueEvent::Requested(_) => "requested",
                QueueEvent::Claimed(_) => "claimed",
                QueueEvent::Resolved(_) => "resolved",
                QueueEvent::Expired(_) => "expired",
            };
            sink.lock().unwrap().push(tag);
        });
        let id = submit(&q);
        q.claim(&id, "op").unwrap();
        q.resolve(&id, "ENTER").unwrap();
        assert_eq!(*seen.lock().unwrap(), ["requested", "claimed", "resolved"]);
    }
}
