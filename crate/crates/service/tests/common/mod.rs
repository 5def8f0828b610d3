//! Headless HTTP client and fixtures shared by the service test targets.
#![allow(dead_code)]

pub mod checks;

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::Path;
use std::sync::Arc;

use aeba_core::image_bank::Category;
use aeba_service::clock::ManualClock;
use aeba_service::store::{EventLog, FileLog, MemoryLog};
use aeba_service::{Service, ServiceConfig};
use chrono::{DateTime, Duration, TimeZone, Utc};
use parking_lot::Mutex;
use reqwest::{Method, StatusCode};
use serde_json::{json, Value};
use tokio::task::JoinHandle;

pub const ADMIN: &str = "admin-secret";

pub fn start_time() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2024, 6, 3, 9, 0, 0).unwrap()
}

pub fn test_config() -> ServiceConfig {
    ServiceConfig {
        admin_token: Some(ADMIN.into()),
        utc_offset_minutes: Some(0),
        rng_seed: Some(7),
        ..ServiceConfig::default()
    }
}

#[derive(Debug, Clone)]
pub struct Exchange {
    pub method: String,
    pub path: String,
    pub status: StatusCode,
    pub body: String,
}

pub struct Reply {
    pub status: StatusCode,
    pub headers: reqwest::header::HeaderMap,
    pub text: String,
}

impl Reply {
    pub fn json(&self) -> Value {
        serde_json::from_str(&self.text).unwrap_or(Value::Null)
    }
}

pub struct Harness {
    pub addr: SocketAddr,
    pub clock: ManualClock,
    pub service: Arc<Service>,
    handle: JoinHandle<()>,
    client: reqwest::Client,
    pub transcript: Arc<Mutex<Vec<Exchange>>>,
}

impl Harness {
    pub async fn start_with(config: ServiceConfig, log: Box<dyn EventLog>, clock: ManualClock) -> Self {
        let service = Arc::new(Service::open(config, log, Arc::new(clock.clone())).expect("service opens"));
        let (addr, handle) = aeba_service::spawn_local(service.clone()).await.expect("bind");
        Self {
            addr,
            clock,
            service,
            handle,
            client: reqwest::Client::new(),
            transcript: Arc::default(),
        }
    }

    pub async fn start() -> Self {
        Self::start_with(test_config(), Box::new(MemoryLog::new()), ManualClock::new(start_time())).await
    }

    pub async fn start_on_disk(dir: &Path, config: ServiceConfig, clock: ManualClock) -> Self {
        Self::start_with(config, Box::new(FileLog::open(dir).unwrap()), clock).await
    }

    /// Kills the server task and drops this handle's reference to the service.
    pub async fn crash(self) {
        self.handle.abort();
        let _ = self.handle.await;
    }

    pub async fn call(&self, method: Method, path: &str, token: Option<&str>, body: Option<Value>) -> Reply {
        let mut req = self.client.request(method.clone(), format!("http://{}{}", self.addr, path));
        if let Some(t) = token {
            req = req.bearer_auth(t);
        }
        if let Some(b) = body {
            req = req.json(&b);
        }
        self.send(method, path, req).await
    }

    pub async fn call_raw(&self, method: Method, path: &str, token: Option<&str>, body: String) -> Reply {
        let mut req = self.client.request(method.clone(), format!("http://{}{}", self.addr, path)).body(body);
        if let Some(t) = token {
            req = req.bearer_auth(t);
        }
        self.send(method, path, req).await
    }

    async fn send(&self, method: Method, path: &str, req: reqwest::RequestBuilder) -> Reply {
        let resp = req.send().await.expect("request sent");
        let status = resp.status();
        let headers = resp.headers().clone();
        let text = resp.text().await.expect("body");
        self.transcript.lock().push(Exchange {
            method: method.to_string(),
            path: path.to_owned(),
            status,
            body: text.clone(),
        });
        Reply { status, headers, text }
    }

    pub async fn get(&self, path: &str, token: &str) -> Reply {
        self.call(Method::GET, path, Some(token), None).await
    }

    pub async fn post(&self, path: &str, token: &str, body: Value) -> Reply {
        self.call(Method::POST, path, Some(token), Some(body)).await
    }

    /// Ingests `n` active images spread over `categories`.
    pub async fn seed_bank(&self, n: usize, categories: &[Category]) {
        let lines: Vec<String> = (0..n)
            .map(|i| {
                json!({
                    "uri": format!("https://images.example/{}/{i}.jpg", self.addr.port()),
                    "category": categories[i % categories.len()].as_str(),
                    "source": "fixture",
                })
                .to_string()
            })
            .collect();
        let r = self
            .call_raw(Method::POST, "/admin/bank/images?activate=true", Some(ADMIN), lines.join("\n"))
            .await;
        assert_eq!(r.status, StatusCode::CREATED, "{}", r.text);
    }

    pub async fn register(&self, nickname: &str) -> Player {
        let r = self
            .call(
                Method::POST,
                "/users",
                None,
                Some(json!({ "email": format!("{nickname}@study.example"), "nickname": nickname, "consent": true })),
            )
            .await;
        assert_eq!(r.status, StatusCode::CREATED, "{}", r.text);
        let v = r.json();
        Player {
            token: v["token"].as_str().unwrap().to_owned(),
            user_id: v["user_id"].as_str().unwrap().to_owned(),
            nickname: nickname.to_owned(),
            ratings: BTreeMap::new(),
        }
    }

    /// Serves and rates `n` images: the first 15 get 10, the next 13 get 6,
    /// the rest get 2. With 72 ratings this is eligible with the 10s as keys.
    pub async fn rate(&self, player: &mut Player, n: usize) {
        let r = self.get(&format!("/rating/next?n={n}"), &player.token).await;
        assert_eq!(r.status, StatusCode::OK, "{}", r.text);
        let images = r.json()["images"].as_array().unwrap().clone();
        for img in images {
            let id = img["image_id"].as_str().unwrap().to_owned();
            let value = match player.ratings.len() {
                0..15 => 10,
                15..28 => 6,
                _ => 2,
            };
            let r = self.post("/ratings", &player.token, json!({ "image_id": id, "value": value })).await;
            assert_eq!(r.status, StatusCode::CREATED, "{}", r.text);
            player.ratings.insert(id, value);
        }
    }

    pub async fn start_session(&self, player: &Player, kind: &str) -> Reply {
        self.call(Method::POST, &format!("/sessions?kind={kind}"), Some(&player.token), None)
            .await
    }

    /// Plays every screen of a session, picking with `pick`; returns the last reply.
    pub async fn play(&self, player: &Player, session_id: &str, mut pick: impl FnMut(usize, &[String]) -> Vec<String>) -> Reply {
        let mut last = None;
        for n in 1..=4 {
            let r = self.get(&format!("/sessions/{session_id}/screens/{n}"), &player.token).await;
            assert_eq!(r.status, StatusCode::OK, "{}", r.text);
            let ids: Vec<String> = r.json()["image_ids"]
                .as_array()
                .unwrap()
                .iter()
                .map(|v| v.as_str().unwrap().to_owned())
                .collect();
            let chosen = pick(n, &ids);
            let r = self
                .post(
                    &format!("/sessions/{session_id}/screens/{n}/selection"),
                    &player.token,
                    json!({ "chosen": chosen }),
                )
                .await;
            assert_eq!(r.status, StatusCode::OK, "{}", r.text);
            last = Some(r);
        }
        last.unwrap()
    }

    pub fn advance(&self, by: Duration) {
        self.clock.advance(by);
    }
}

#[derive(Debug, Clone)]
pub struct Player {
    pub token: String,
    pub user_id: String,
    pub nickname: String,
    pub ratings: BTreeMap<String, i64>,
}

impl Player {
    /// The two displayed images this player rated highest.
    pub fn favourites(&self, displayed: &[String]) -> Vec<String> {
        let mut ids: Vec<&String> = displayed.iter().collect();
        ids.sort_by_key(|id| (-self.ratings.get(*id).copied().unwrap_or(0), (*id).clone()));
        ids.into_iter().take(2).cloned().collect()
    }
}

/// Walks a JSON value and collects every object key.
pub fn field_names(v: &Value, out: &mut Vec<String>) {
    match v {
        Value::Object(map) => {
            for (k, inner) in map {
                out.push(k.clone());
                field_names(inner, out);
            }
        }
        Value::Array(items) => items.iter().for_each(|i| field_names(i, out)),
        _ => {}
    }
}
