use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use confgate::server::{serve, AppState, ServerConfig};
use confgate_core::engine::ReplayMode;
use confgate_core::metrics::{MatchRule, ScreenSize};
use confgate_core::score::Gamma;
use confgate_core::trajectory::load_dataset_file;
use reqwest::StatusCode;
use serde_json::{json, Value};

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

fn state(log_dir: &Path, ttl: Duration) -> Arc<AppState> {
    AppState::new(ServerConfig {
        dataset: load_dataset_file(fixture("train.jsonl")).unwrap(),
        log_dir: log_dir.to_path_buf(),
        ttl,
        default_gamma: Gamma::new(3).unwrap(),
        step_cap: 10,
        mode: ReplayMode::TeacherForcing,
        rule: MatchRule::with_screen(ScreenSize {
            width: 1080,
            height: 2400,
        }),
    })
    .unwrap()
}

async fn start(state: Arc<AppState>) -> String {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let base = format!("http://{}", listener.local_addr().unwrap());
    tokio::spawn(serve(listener, state));
    base
}

/// kairos-001 replayed by a script: step 0 proposed with confidence 1, the
/// rest equal to the recording with confidence 5.
fn low_first_script() -> Value {
    json!([
        {"step_index": 0, "action": "WAIT", "confidence": 1},
        {"step_index": 1, "action": "CLICK <point>[[540, 210]]</point>", "confidence": 5},
        {"step_index": 2, "action": "TYPE [hotels in Paris]", "confidence": 5},
        {"step_index": 3, "action": "ENTER", "confidence": 5},
        {"step_index": 4, "action": "COMPLETE", "confidence": 5},
    ])
}

async fn start_episode(c: &reqwest::Client, base: &str, id: &str) {
    let r = c
        .post(format!("{base}/episodes"))
        .json(&json!({"trajectory_id": "kairos-001", "episode_id": id, "gamma": 3, "script": low_first_script()}))
        .send()
        .await
        .unwrap();
    assert_eq!(r.status(), StatusCode::ACCEPTED);
}

async fn pending_for(c: &reqwest::Client, base: &str, episode: &str) -> Value {
    for _ in 0..200 {
        let list: Vec<Value> = c
            .get(format!("{base}/interventions?state=PENDING"))
            .send()
            .await
            .unwrap()
            .json()
            .await
            .unwrap();
        if let Some(r) = list.into_iter().find(|r| r["episode_id"] == episode) {
            return r;
        }
        tokio::time::sleep(Duration::from_millis(10)).await;
    }
    panic!("no pending request for {episode}");
}

async fn episode_when(c: &reqwest::Client, base: &str, id: &str, status: &str) -> Value {
    for _ in 0..300 {
        let ep: Value = c.get(format!("{base}/episodes/{id}")).send().await.unwrap().json().await.unwrap();
        if ep["status"] == status {
            return ep;
        }
        tokio::time::sleep(Duration::from_millis(10)).await;
    }
    panic!("episode {id} never reached {status}");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn intervention_happy_path() {
    let dir = tempfile::tempdir().unwrap();
    let base = start(state(dir.path(), Duration::from_secs(30))).await;
    let c = reqwest::Client::new();
    start_episode(&c, &base, "happy").await;

    let req = pending_for(&c, &base, "happy").await;
    let id = req["request_id"].as_str().unwrap();
    assert_eq!(req["step_index"], 0);
    assert_eq!(req["proposed"]["action"], "WAIT");

    // Resolving before claiming is a state-machine conflict.
    let r = c
        .post(format!("{base}/interventions/{id}/resolve"))
        .json(&json!({"action": "WAIT"}))
        .send()
        .await
        .unwrap();
    assert_eq!(r.status(), StatusCode::CONFLICT);

    let r = c
        .post(format!("{base}/interventions/{id}/claim"))
        .json(&json!({"operator": "ana"}))
        .send()
        .await
        .unwrap();
    assert_eq!(r.status(), StatusCode::OK);
    let claimed: Value = r.json().await.unwrap();
    assert_eq!(claimed["state"], "CLAIMED");
    assert_eq!(claimed["claimed_by"], "ana");

    let r = c
        .post(format!("{base}/interventions/{id}/resolve"))
        .json(&json!({"action": "CLICK <point>[[10, -10]]</point>"}))
        .send()
        .await
        .unwrap();
    assert_eq!(r.status(), StatusCode::UNPROCESSABLE_ENTITY);
    let err: Value = r.json().await.unwrap();
    assert_eq!(err["error"], "MalformedAction");
    let still: Value = c.get(format!("{base}/interventions/{id}")).send().await.unwrap().json().await.unwrap();
    assert_eq!(still["state"], "CLAIMED");

    let r = c
        .post(format!("{base}/interventions/{id}/resolve"))
        .json(&json!({"action": "CLICK <point>[[10, 10]]</point>"}))
        .send()
        .await
        .unwrap();
    assert_eq!(r.status(), StatusCode::OK);
    let resolved: Value = r.json().await.unwrap();
    assert_eq!(resolved["state"], "RESOLVED");

    let r = c
        .post(format!("{base}/interventions/{id}/resolve"))
        .json(&json!({"action": "WAIT"}))
        .send()
        .await
        .unwrap();
    assert_eq!(r.status(), StatusCode::CONFLICT);

    let ep = episode_when(&c, &base, "happy", "COMPLETED").await;
    let steps = ep["steps"].as_array().unwrap();
    assert_eq!(steps.len(), 5);
    assert_eq!(steps[0]["source"], "INTERVENER");
    assert_eq!(steps[0]["executed_action"], "CLICK <point>[[10, 10]]</point>");
    assert!(steps[1..].iter().all(|s| s["source"] == "AGENT"));

    let report: Value = c.get(format!("{base}/reports/happy")).send().await.unwrap().json().await.unwrap();
    assert_eq!(report["interventions"], 1);
    assert_eq!(report["steps"], 5);

    // Append-only log: five step lines and one end line.
    let text = std::fs::read_to_string(dir.path().join("happy.jsonl")).unwrap();
    assert_eq!(text.lines().count(), 6);
    let logs = confgate_core::engine::read_episode_logs(text.as_bytes()).unwrap();
    assert_eq!(logs[0].status, confgate_core::EpisodeStatus::Completed);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 8)]
async fn concurrent_claims_have_one_winner() {
    let dir = tempfile::tempdir().unwrap();
    let base = start(state(dir.path(), Duration::from_secs(30))).await;
    let c = reqwest::Client::new();
    for round in 0..5 {
        let ep = format!("race-{round}");
        start_episode(&c, &base, &ep).await;
        let req = pending_for(&c, &base, &ep).await;
        let id = req["request_id"].as_str().unwrap().to_string();
        let claims = (0..8).map(|i| {
            let (c, url) = (c.clone(), format!("{base}/interventions/{id}/claim"));
            tokio::spawn(async move {
                c.post(url).json(&json!({"operator": format!("op{i}")})).send().await.unwrap().status()
            })
        });
        let mut statuses = Vec::new();
        for h in claims {
            statuses.push(h.await.unwrap());
        }
        assert_eq!(statuses.iter().filter(|s| **s == StatusCode::OK).count(), 1, "{statuses:?}");
        assert!(statuses.iter().all(|s| *s == StatusCode::OK || *s == StatusCode::CONFLICT));
        c.post(format!("{base}/interventions/{id}/resolve"))
            .json(&json!({"action": "WAIT"}))
            .send()
            .await
            .unwrap();
        episode_when(&c, &base, &ep, "COMPLETED").await;
    }
}

/// Reads server-sent events until `stop` says so.
async fn collect_events(mut resp: reqwest::Response, stop: impl Fn(&Value) -> bool) -> Vec<(String, Value)> {
    let mut buf = String::new();
    let mut out = Vec::new();
    while let Some(chunk) = tokio::time::timeout(Duration::from_secs(10), resp.chunk()).await.unwrap().unwrap() {
        buf.push_str(std::str::from_utf8(&chunk).unwrap());
        while let Some(end) = buf.find("\n\n") {
            let block: String = buf.drain(..end + 2).collect();
            let mut name = String::new();
            let mut data = String::new();
            for line in block.lines() {
                if let Some(v) = line.strip_prefix("event:") {
                    name = v.trim().to_string();
                } else if let Some(v) = line.strip_prefix("data:") {
                    data.push_str(v.trim_start());
                }
            }
            if data.is_empty() {
                continue;
            }
            let value: Value = serde_json::from_str(&data).unwrap();
            let done = stop(&value);
            out.push((name, value));
            if done {
                return out;
            }
        }
    }
    out
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn event_stream_orders_resolution_before_step() {
    let dir = tempfile::tempdir().unwrap();
    let base = start(state(dir.path(), Duration::from_secs(30))).await;
    let c = reqwest::Client::new();
    let stream = c.get(format!("{base}/events")).send().await.unwrap();
    assert_eq!(stream.status(), StatusCode::OK);
    let reader = tokio::spawn(collect_events(stream, |v| v["event"] == "episode_end" && v["episode_id"] == "sse"));

    start_episode(&c, &base, "sse").await;
    let req = pending_for(&c, &base, "sse").await;
    let id = req["request_id"].as_str().unwrap();
    c.post(format!("{base}/interventions/{id}/claim")).send().await.unwrap();
    c.post(format!("{base}/interventions/{id}/resolve"))
        .json(&json!({"action": "OPEN_APP [Chrome]"}))
        .send()
        .await
        .unwrap();

    let events = reader.await.unwrap();
    let names: Vec<&str> = events.iter().map(|(n, _)| n.as_str()).collect();
    let pos = |name: &str| names.iter().position(|n| *n == name).unwrap();
    assert!(pos("requested") < pos("claimed"));
    assert!(pos("claimed") < pos("resolved"));
    assert!(pos("resolved") < pos("step"), "{names:?}");
    let steps: Vec<&Value> = events.iter().filter(|(n, _)| n == "step").map(|(_, v)| v).collect();
    assert_eq!(steps.len(), 5);
    assert_eq!(steps[0]["executed_action"], "OPEN_APP [Chrome]");
    assert_eq!(steps[0]["source"], "INTERVENER");
    assert_eq!(events.last().unwrap().1["status"], "COMPLETED");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn unanswered_requests_expire() {
    let dir = tempfile::tempdir().unwrap();
    let base = start(state(dir.path(), Duration::from_millis(150))).await;
    let c = reqwest::Client::new();
    start_episode(&c, &base, "slow").await;
    let ep = episode_when(&c, &base, "slow", "SUSPENDED").await;
    assert!(ep["failure"].as_str().unwrap().starts_with("IntervenerUnavailable"));
    assert_eq!(ep["steps"].as_array().unwrap().len(), 0);
    let expired: Vec<Value> = c
        .get(format!("{base}/interventions?state=EXPIRED"))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    assert_eq!(expired.len(), 1);
    let id = expired[0]["request_id"].as_str().unwrap();
    let r = c.post(format!("{base}/interventions/{id}/claim")).send().await.unwrap();
    assert_eq!(r.status(), StatusCode::CONFLICT);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn errors_and_restart() {
    let dir = tempfile::tempdir().unwrap();
    let base = start(state(dir.path(), Duration::from_secs(30))).await;
    let c = reqwest::Client::new();

    let r = c.get(format!("{base}/episodes/none")).send().await.unwrap();
    assert_eq!(r.status(), StatusCode::NOT_FOUND);
    assert_eq!(r.json::<Value>().await.unwrap()["error"], "NotFound");
    let r = c.post(format!("{base}/interventions/req-99/claim")).send().await.unwrap();
    assert_eq!(r.status(), StatusCode::NOT_FOUND);
    let r = c.get(format!("{base}/interventions?state=SLEEPING")).send().await.unwrap();
    assert_eq!(r.status(), StatusCode::BAD_REQUEST);
    let r = c
        .post(format!("{base}/episodes"))
        .json(&json!({"trajectory_id": "missing"}))
        .send()
        .await
        .unwrap();
    assert_eq!(r.status(), StatusCode::NOT_FOUND);
    let r = c
        .post(format!("{base}/episodes"))
        .json(&json!({"trajectory_id": "kairos-002", "gamma": 7}))
        .send()
        .await
        .unwrap();
    assert_eq!(r.status(), StatusCode::BAD_REQUEST);
    let r = c
        .post(format!("{base}/episodes"))
        .json(&json!({"trajectory_id": "kairos-002", "episode_id": "../escape"}))
        .send()
        .await
        .unwrap();
    assert_eq!(r.status(), StatusCode::BAD_REQUEST);

    // Recorded predictions at γ=0 never ask for help.
    let r = c
        .post(format!("{base}/episodes"))
        .json(&json!({"trajectory_id": "kairos-002", "episode_id": "auto", "gamma": 0}))
        .send()
        .await
        .unwrap();
    assert_eq!(r.status(), StatusCode::ACCEPTED);
    let done = episode_when(&c, &base, "auto", "COMPLETED").await;
    let r = c
        .post(format!("{base}/episodes"))
        .json(&json!({"trajectory_id": "kairos-002", "episode_id": "auto"}))
        .send()
        .await
        .unwrap();
    assert_eq!(r.status(), StatusCode::CONFLICT);

    // A fresh service over the same directory sees the finished episode.
    let again = start(state(dir.path(), Duration::from_secs(30))).await;
    let reloaded: Value = c.get(format!("{again}/episodes/auto")).send().await.unwrap().json().await.unwrap();
    assert_eq!(reloaded["steps"], done["steps"]);
    assert_eq!(reloaded["status"], "COMPLETED");
}
