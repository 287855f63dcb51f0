//! Local chat-completion server answering with the rule paraphraser, for
//! tests and offline rehearsal of the online path.

use std::collections::VecDeque;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::post;
use axum::{Json, Router};
use serde_json::{json, Value};
use tokio::task::JoinHandle;

use crate::prompt::question_of;
use crate::rule::{rule_paraphrase, Lexicon};

/// One scripted reply; once the script runs out every reply is `Answer`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StubReply {
    Answer,
    Status(u16),
    Malformed,
}

struct StubState {
    script: Mutex<VecDeque<StubReply>>,
    requests: AtomicU64,
    lexicon: Lexicon,
}

pub struct StubServer {
    addr: SocketAddr,
    state: Arc<StubState>,
    task: JoinHandle<()>,
}

impl StubServer {
    pub async fn start(script: Vec<StubReply>) -> std::io::Result<Self> {
        let state = Arc::new(StubState {
            script: Mutex::new(script.into()),
            requests: AtomicU64::new(0),
            lexicon: Lexicon::default(),
        });
        let app = Router::new()
            .route("/v1/chat/completions", post(complete))
            .with_state(state.clone());
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await?;
        let addr = listener.local_addr()?;
        let task = tokio::spawn(async move {
            if let Err(e) = axum::serve(listener, app).await {
                tracing::error!(%e, "stub server stopped");
            }
        });
        Ok(Self { addr, state, task })
    }

    pub fn url(&self) -> String {
        format!("http://{}/v1/chat/completions", self.addr)
    }

    pub fn requests(&self) -> u64 {
        self.state.requests.load(Ordering::SeqCst)
    }
}

impl Drop for StubServer {
    fn drop(&mut self) {
        self.task.abort();
    }
}

async fn complete(State(state): State<Arc<StubState>>, Json(body): Json<Value>) -> Response {
    state.requests.fetch_add(1, Ordering::SeqCst);
    let reply = state
        .script
        .lock()
        .map(|mut s| s.pop_front())
        .ok()
        .flatten()
        .unwrap_or(StubReply::Answer);
    match reply {
        StubReply::Status(code) => {
            let status = StatusCode::from_u16(code).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
            (status, "scripted failure").into_response()
        }
        StubReply::Malformed => (StatusCode::OK, "{\"choices\": [").into_response(),
        StubReply::Answer => {
            let prompt = body["messages"][0]["content"].as_str().unwrap_or_default();
            let Some(question) = question_of(prompt) else {
                return (StatusCode::BAD_REQUEST, "no question in prompt").into_response();
            };
            let answer = rule_paraphrase(question, &state.lexicon).full_text;
            Json(json!({
                "choices": [{"index": 0, "message": {"role": "assistant", "content": answer}}]
            }))
            .into_response()
        }
    }
}
