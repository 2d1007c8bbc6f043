use std::collections::HashSet;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use axum::extract::State;
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::post;
use axum::{Json, Router};
use serde_json::{json, Value};
use tokio::sync::oneshot;
use tokio::task::JoinHandle;

use super::MockModel;
use crate::client::{FAMILY_HEADER, INSTANCE_HEADER, REPLICATE_HEADER};
use crate::error::{FestaError, Result};
use crate::transforms::{sha256_hex, SampleFamily};

struct ServerState {
    model: MockModel,
    served: AtomicUsize,
    faulted: Mutex<HashSet<String>>,
}

/// A running mock server. Dropping the handle also stops it.
pub struct MockServerHandle {
    addr: SocketAddr,
    state: Arc<ServerState>,
    stop: Option<oneshot::Sender<()>>,
    task: Option<JoinHandle<()>>,
}

impl MockServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Base URL to put in a model endpoint.
    pub fn base_url(&self) -> String {
        format!("http://{}/v1", self.addr)
    }

    /// Requests answered so far, including injected faults.
    pub fn requests_served(&self) -> usize {
        self.state.served.load(Ordering::Relaxed)
    }

    /// Stops accepting connections and waits for the server task. Safe to
    /// call more than once.
    pub async fn shutdown(&mut self) {
        if let Some(stop) = self.stop.take() {
            let _ = stop.send(());
        }
        if let Some(task) = self.task.take() {
            let _ = task.await;
        }
    }
}

impl Drop for MockServerHandle {
    fn drop(&mut self) {
        if let Some(stop) = self.stop.take() {
            let _ = stop.send(());
        }
    }
}

fn text_of(content: &Value) -> String {
    match content {
        Value::String(s) => s.clone(),
        Value::Array(parts) => parts
            .iter()
            .filter_map(|p| p.get("text").and_then(Value::as_str))
            .collect::<Vec<_>>()
            .join(""),
        _ => String::new(),
    }
}

fn error(status: u16, message: String) -> Response {
    let code = StatusCode::from_u16(status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
    (code, Json(json!({"error": {"message": message}}))).into_response()
}

async fn chat(State(state): State<Arc<ServerState>>, headers: HeaderMap, Json(body): Json<Value>) -> Response {
    state.served.fetch_add(1, Ordering::Relaxed);
    let header = |name: &str| headers.get(name).and_then(|v| v.to_str().ok()).map(str::to_string);
    let instance = header(INSTANCE_HEADER);
    let family = match header(FAMILY_HEADER) {
        Some(f) => match SampleFamily::parse(&f) {
            Some(f) => f,
            None => return error(400, format!("bad {FAMILY_HEADER} value {f:?}")),
        },
        None => SampleFamily::Original,
    };
    let replicate = header(REPLICATE_HEADER).unwrap_or_default();
    let Some(messages) = body.get("messages").and_then(Value::as_array) else {
        return error(400, "request has no messages".into());
    };
    let user_turns: Vec<String> = messages
        .iter()
        .filter(|m| m.get("role").and_then(Value::as_str) == Some("user"))
        .map(|m| text_of(m.get("content").unwrap_or(&Value::Null)))
        .collect();

    let fingerprint = format!(
        "{}|{}|{}|{}",
        instance.as_deref().unwrap_or(""),
        family.as_str(),
        replicate,
        sha256_hex(user_turns.join("\u{1f}").as_bytes())
    );
    if state.model.inject_fault(&fingerprint) {
        let first_time = state.faulted.lock().expect("fault set lock").insert(fingerprint);
        if first_time {
            return error(503, "injected fault".into());
        }
    }

    match state.model.reply(instance.as_deref(), family, &replicate, &user_turns) {
        Ok(content) => Json(json!({
            "object": "chat.completion",
            "model": body.get("model").cloned().unwrap_or(Value::Null),
            "choices": [{
                "index": 0,
                "message": {"role": "assistant", "content": content},
                "finish_reason": "stop",
            }],
        }))
        .into_response(),
        Err((status, message)) => error(status, message),
    }
}

/// Binds `addr` (port 0 picks a free port) and serves `model` until the
/// handle is shut down or dropped.
pub async fn serve_mock(model: MockModel, addr: SocketAddr) -> Result<MockServerHandle> {
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|e| FestaError::Config(format!("cannot bind mock server to {addr}: {e}")))?;
    let addr = listener.local_addr()?;
    let state = Arc::new(ServerState { model, served: AtomicUsize::new(0), faulted: Mutex::new(HashSet::new()) });
    let app = Router::new()
        .route("/v1/chat/completions", post(chat))
        .route("/chat/completions", post(chat))
        .with_state(state.clone());
    let (stop, stopped) = oneshot::channel::<()>();
    let task = tokio::spawn(async move {
        let served = axum::serve(listener, app).with_graceful_shutdown(async {
            let _ = stopped.await;
        });
        if let Err(e) = served.await {
            tracing::error!(error = %e, "mock server stopped with an error");
        }
    });
    tracing::info!(%addr, "mock server listening");
    Ok(MockServerHandle { addr, state, stop: Some(stop), task: Some(task) })
}
