#![allow(dead_code)]

use std::path::Path;
use std::sync::Arc;
use std::thread::JoinHandle;

use narrative_core::backend::{ChatBackend, RuleBackend};
use narrative_core::exemplars::Repository;
use narrative_core::prompts::PromptSet;
use narrative_core::{Engine, EngineConfig};
use narrative_service::{serve, AppState, ServiceOptions};
use serde::de::DeserializeOwned;
use serde_json::Value;
use tokio::sync::oneshot;

pub struct Server {
    pub base: String,
    stop: Option<oneshot::Sender<()>>,
    thread: Option<JoinHandle<()>>,
}

pub fn engine(seed: u64) -> Engine {
    let backend: Arc<dyn ChatBackend> = Arc::new(RuleBackend::new(seed));
    let repo = Repository::seed(&*backend).unwrap();
    Engine::new(
        backend,
        Arc::new(PromptSet::builtin()),
        Arc::new(repo),
        EngineConfig::default(),
    )
}

impl Server {
    pub fn start(dir: &Path) -> Server {
        Self::start_with(AppState::open(engine(1), dir, ServiceOptions::default()).unwrap())
    }

    pub fn start_with(app: AppState) -> Server {
        let (port_tx, port_rx) = std::sync::mpsc::channel();
        let (stop_tx, stop_rx) = oneshot::channel::<()>();
        let thread = std::thread::spawn(move || {
            let rt = tokio::runtime::Builder::new_multi_thread()
                .enable_all()
                .build()
                .unwrap();
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
                port_tx.send(listener.local_addr().unwrap().port()).unwrap();
                serve(listener, app, async {
                    let _ = stop_rx.await;
                })
                .await
                .unwrap();
            });
        });
        let port = port_rx.recv().unwrap();
        Server {
            base: format!("http://127.0.0.1:{port}"),
            stop: Some(stop_tx),
            thread: Some(thread),
        }
    }

    pub fn stop(mut self) {
        self.shutdown();
    }

    fn shutdown(&mut self) {
        if let Some(tx) = self.stop.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        self.shutdown();
    }
}

pub fn agent() -> ureq::Agent {
    ureq::Agent::config_builder()
        .http_status_as_error(false)
        .build()
        .into()
}

pub fn call(method: &str, url: &str, body: Option<Value>) -> (u16, Value) {
    let agent = agent();
    let mut resp = match (method, body) {
        ("GET", _) => agent.get(url).call().unwrap(),
        (_, Some(b)) => agent.post(url).send_json(&b).unwrap(),
        (_, None) => agent.post(url).send_empty().unwrap(),
    };
    let status = resp.status().as_u16();
    let text = resp.body_mut().read_to_string().unwrap();
    (
        status,
        serde_json::from_str(&text).unwrap_or(Value::String(text)),
    )
}

pub fn get<T: DeserializeOwned>(url: &str) -> T {
    let (status, v) = call("GET", url, None);
    assert_eq!(status, 200, "{url}: {v}");
    serde_json::from_value(v).unwrap()
}

pub fn post<T: DeserializeOwned>(url: &str, body: Value) -> T {
    let (status, v) = call("POST", url, Some(body));
    assert_eq!(status, 200, "{url}: {v}");
    serde_json::from_value(v).unwrap()
}
