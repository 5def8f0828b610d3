//! HTTP-level service checks, shared by the property tests and the
//! acceptance run.

use std::collections::BTreeMap;
use std::sync::Arc;

use aeba_core::image_bank::Category;
use aeba_service::clock::{Clock, ManualClock};
use aeba_service::store::{FileLog, MemoryLog};
use aeba_service::{Service, ServiceConfig};
use chrono::{Duration, FixedOffset, NaiveDate};
use reqwest::{Method, StatusCode};
use serde_json::json;

use super::{field_names, start_time, test_config, Harness, Player};

#[derive(Debug, Clone)]
pub enum Op {
    Start(usize),
    Finish(usize),
    Wait(i64),
}

/// Game creation succeeds exactly when the player has not created a game
/// on the current local calendar day, and Retry-After points at the next
/// local midnight.
pub async fn daily_limit(offset_minutes: i32, ops: Vec<Op>) {
    let config = ServiceConfig { utc_offset_minutes: Some(offset_minutes), ..test_config() };
    let h = Harness::start_with(config, Box::new(MemoryLog::new()), ManualClock::new(start_time())).await;
    h.seed_bank(200, &Category::ALL).await;
    let mut players = Vec::new();
    for name in ["p0", "p1"] {
        let mut p = h.register(name).await;
        h.rate(&mut p, 72).await;
        players.push(p);
    }
    let offset = FixedOffset::east_opt(offset_minutes * 60).unwrap();
    let mut created: BTreeMap<(usize, NaiveDate), usize> = BTreeMap::new();
    let mut open: BTreeMap<usize, String> = BTreeMap::new();
    for op in ops {
        match op {
            Op::Start(i) => {
                let today = h.clock.now().with_timezone(&offset).date_naive();
                let r = h.start_session(&players[i], "game").await;
                let count = created.entry((i, today)).or_default();
                if *count == 0 {
                    assert_eq!(r.status, StatusCode::CREATED, "{}", r.text);
                    open.insert(i, r.json()["session_id"].as_str().unwrap().to_owned());
                } else {
                    assert_eq!(r.status, StatusCode::TOO_MANY_REQUESTS);
                    let wait: i64 = r.headers["retry-after"].to_str().unwrap().parse().unwrap();
                    let next = h.clock.now() + Duration::seconds(wait);
                    assert_eq!(next.with_timezone(&offset).date_naive(), today.succ_opt().unwrap());
                    let before = next - Duration::seconds(1);
                    assert_eq!(before.with_timezone(&offset).date_naive(), today);
                }
                *count += 1;
            }
            Op::Finish(i) => {
                if let Some(sid) = open.remove(&i) {
                    let p = &players[i];
                    let view = h.get(&format!("/sessions/{sid}/screens/1"), &p.token).await;
                    if view.status == StatusCode::OK {
                        h.play(p, &sid, |_, ids| p.favourites(ids)).await;
                    }
                }
            }
            Op::Wait(m) => h.advance(Duration::minutes(m)),
        }
    }
}

/// Sixteen simultaneous game requests yield exactly one session.
pub async fn concurrent_game_requests_create_one_session() {
    let h = Arc::new(Harness::start().await);
    h.seed_bank(200, &Category::ALL).await;
    let mut p = h.register("racer").await;
    h.rate(&mut p, 72).await;
    let p = Arc::new(p);
    let tasks: Vec<_> = (0..16)
        .map(|_| {
            let (h, p) = (h.clone(), p.clone());
            tokio::spawn(async move { h.start_session(&p, "game").await.status })
        })
        .collect();
    let mut statuses = Vec::new();
    for t in tasks {
        statuses.push(t.await.unwrap());
    }
    assert_eq!(statuses.iter().filter(|s| **s == StatusCode::CREATED).count(), 1);
    assert_eq!(statuses.iter().filter(|s| **s == StatusCode::TOO_MANY_REQUESTS).count(), 15);
}

/// Registers two players and drives every user-facing route once.
pub async fn full_tour(h: &Harness) -> (Player, Player) {
    h.seed_bank(240, &Category::ALL).await;
    let mut a = h.register("alice").await;
    let mut b = h.register("bruno").await;
    h.rate(&mut a, 80).await;
    h.rate(&mut b, 72).await;
    h.get("/preview", &a.token).await;
    h.get("/ratings", &a.token).await;
    h.get("/rating/progress", &a.token).await;
    let any = a.ratings.keys().next().unwrap().clone();
    h.call(Method::PATCH, &format!("/ratings/{any}"), Some(&a.token), Some(json!({"value": 10})))
        .await;
    for p in [&a, &b] {
        let sid = h.start_session(p, "game").await.json()["session_id"].as_str().unwrap().to_owned();
        h.play(p, &sid, |_, ids| p.favourites(ids)).await;
        h.get(&format!("/sessions/{sid}/result"), &p.token).await;
    }
    let r = h.start_session(&b, "adversarial").await;
    let sid = r.json()["session_id"].as_str().unwrap().to_owned();
    h.play(&b, &sid, |_, ids| ids[3..5].to_vec()).await;
    h.get(&format!("/sessions/{sid}/result"), &b.token).await;
    h.start_session(&a, "game").await;
    h.call(Method::GET, "/leaderboard?kind=game", None, None).await;
    h.call(Method::GET, "/leaderboard?kind=adversarial", None, None).await;
    (a, b)
}

/// No response body mentions keys or decoys, and screens carry exactly
/// three fields.
pub async fn key_secrecy() {
    let h = Harness::start().await;
    full_tour(&h).await;
    let transcript = h.transcript.lock().clone();
    assert!(transcript.len() > 180, "{}", transcript.len());
    for ex in &transcript {
        let lower = ex.body.to_lowercase();
        assert!(!lower.contains("key") && !lower.contains("decoy"), "{} {}: {}", ex.method, ex.path, ex.body);
        if ex.path.contains("/screens/") && ex.method == "GET" && ex.status == StatusCode::OK {
            let mut fields = Vec::new();
            field_names(&serde_json::from_str(&ex.body).unwrap(), &mut fields);
            fields.sort();
            assert_eq!(fields, ["image_ids", "screen_no", "session_id"]);
        }
    }
}

/// An adversarial replay shows the victim's screens byte for byte, and two
/// services with the same seed and script serve identical sessions.
pub async fn replay_identity() {
    let mut runs = Vec::new();
    for _ in 0..2 {
        let h = Harness::start().await;
        full_tour(&h).await;
        let sessions = h.service.with_state(|s| serde_json::to_vec(&s.sessions).unwrap());
        let transcript = h.transcript.lock().clone();
        let bodies: Vec<String> = transcript
            .iter()
            .filter(|ex| ex.path.contains("/sessions"))
            .map(|ex| format!("{} {} {}", ex.status, ex.path, ex.body))
            .collect();

        // the replay shows the victim's screens unchanged, byte for byte
        let (original, replay) = h.service.with_state(|s| {
            let replay = s.sessions.values().find(|r| r.spec.replay_of.is_some()).unwrap().clone();
            let original = s.sessions[replay.spec.replay_of.as_ref().unwrap()].clone();
            (original, replay)
        });
        assert_eq!(
            serde_json::to_vec(&original.spec.screens).unwrap(),
            serde_json::to_vec(&replay.spec.screens).unwrap()
        );
        let shown = |sid: &str| -> Vec<String> {
            transcript
                .iter()
                .filter(|ex| ex.method == "GET" && ex.path.starts_with(&format!("/sessions/{sid}/screens/")))
                .map(|ex| serde_json::from_str::<serde_json::Value>(&ex.body).unwrap()["image_ids"].to_string())
                .collect()
        };
        let victim_view = shown(original.spec.session_id.as_str());
        assert_eq!(victim_view.len(), 4);
        assert_eq!(victim_view, shown(replay.spec.session_id.as_str()));
        runs.push((sessions, bodies));
    }
    assert!(!runs[0].1.is_empty());
    assert_eq!(runs[0].0, runs[1].0);
    assert_eq!(runs[0].1, runs[1].1);
}

fn state_bytes(service: &Service) -> Vec<u8> {
    service.with_state(|s| serde_json::to_vec(s).unwrap())
}

/// Killing and reopening the service after every request loses nothing.
pub async fn restart_after_every_request() {
    for snapshot_every in [0, 3] {
        let dir = tempfile::tempdir().unwrap();
        let clock = ManualClock::new(start_time());
        let config = ServiceConfig { snapshot_every, ..test_config() };
        let h = Harness::start_on_disk(dir.path(), config.clone(), clock.clone()).await;
        h.seed_bank(150, &Category::ALL).await;
        let mut p = h.register("ann").await;
        let mut h = h;
        let mut steps = 0;
        h.rate(&mut p, 72).await;
        let script = [
            (Method::POST, "/sessions?kind=game"),
            (Method::GET, "/rating/next?n=3"),
            (Method::GET, "/rating/progress"),
        ];
        let mut session = None;
        for round in 0..3 {
            for (method, path) in &script {
                let r = h.call(method.clone(), path, Some(&p.token), None).await;
                if path.starts_with("/sessions") && r.status == StatusCode::CREATED {
                    session = Some(r.json()["session_id"].as_str().unwrap().to_owned());
                }
                let before = state_bytes(&h.service);
                h.crash().await;
                h = Harness::start_on_disk(dir.path(), config.clone(), clock.clone()).await;
                assert_eq!(before, state_bytes(&h.service), "round {round}");
                steps += 1;
            }
        }
        // finish the session one screen per process
        let sid = session.unwrap();
        for n in 1..=4 {
            let ids: Vec<String> = h.get(&format!("/sessions/{sid}/screens/{n}"), &p.token).await.json()["image_ids"]
                .as_array()
                .unwrap()
                .iter()
                .map(|v| v.as_str().unwrap().to_owned())
                .collect();
            let r = h
                .post(&format!("/sessions/{sid}/screens/{n}/selection"), &p.token, json!({"chosen": p.favourites(&ids)}))
                .await;
            assert_eq!(r.status, StatusCode::OK, "{}", r.text);
            let before = state_bytes(&h.service);
            h.crash().await;
            h = Harness::start_on_disk(dir.path(), config.clone(), clock.clone()).await;
            assert_eq!(before, state_bytes(&h.service));
        }
        let result = h.get(&format!("/sessions/{sid}/result"), &p.token).await.json();
        assert_eq!(result["total"], 8);
        assert_eq!(steps, 9);
        // the next day works after all those restarts, and the session id stream moved on
        h.advance(Duration::days(1));
        let r = h.start_session(&p, "game").await;
        assert_eq!(r.status, StatusCode::CREATED);
        assert_ne!(r.json()["session_id"].as_str().unwrap(), sid);
        assert_eq!(dir.path().join("snapshot.json").exists(), snapshot_every > 0);
    }
}

/// A torn final write is dropped; a corrupt middle line refuses to open.
pub async fn torn_tail() {
    use std::io::Write;
    let dir = tempfile::tempdir().unwrap();
    let clock = ManualClock::new(start_time());
    let h = Harness::start_on_disk(dir.path(), test_config(), clock.clone()).await;
    h.seed_bank(100, &Category::ALL).await;
    let mut p = h.register("ann").await;
    h.rate(&mut p, 10).await;
    let before = state_bytes(&h.service);
    let events = dir.path().join("events.jsonl");
    let clean_len = std::fs::metadata(&events).unwrap().len();
    h.crash().await;

    let mut f = std::fs::OpenOptions::new().append(true).open(&events).unwrap();
    f.write_all(br#"{"seq":999,"events":[{"type":"rating_rec"#).unwrap();
    drop(f);
    let service = Service::open(test_config(), Box::new(FileLog::open(dir.path()).unwrap()), Arc::new(clock.clone())).unwrap();
    assert_eq!(before, state_bytes(&service));
    assert_eq!(std::fs::metadata(&events).unwrap().len(), clean_len);
    // still writable after the truncation
    service.register("b@x.org", "bob", true).unwrap();
    drop(service);

    let mut text = std::fs::read_to_string(&events).unwrap();
    text.insert_str(text.find('\n').unwrap() + 1, "not json\n");
    std::fs::write(&events, text).unwrap();
    assert!(FileLog::open(dir.path())
        .map_err(aeba_service::ServiceError::from)
        .and_then(|log| Service::open(test_config(), Box::new(log), Arc::new(clock)))
        .is_err());
}
