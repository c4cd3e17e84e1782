use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use anyhow::{Context as _, Result};
use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use clap::Args;
use phishguard_core::email::CleanEmail;
use phishguard_core::pipeline::{ClassifyOptions, Engine};
use serde_json::{json, Value};

use crate::setup::{engine, BackendChoice, EngineArgs};

#[derive(Args, Debug)]
pub struct ServeArgs {
    #[command(flatten)]
    pub engine: EngineArgs,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub listen: SocketAddr,
}

struct AppState {
    engine: Engine,
    options: ClassifyOptions,
    backend_kind: &'static str,
    next_id: AtomicU64,
}

type Shared = Arc<AppState>;

fn error(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(json!({ "error": message.into() }))).into_response()
}

fn required<'a>(body: &'a Value, field: &'static str) -> Result<&'a str, String> {
    match body.get(field) {
        Some(Value::String(s)) => Ok(s),
        Some(_) => Err(format!("field {field:?} must be a string")),
        None => Err(format!("missing field {field:?}")),
    }
}

fn parse_request(state: &AppState, bytes: &[u8]) -> Result<CleanEmail, String> {
    let body: Value = serde_json::from_slice(bytes).map_err(|e| format!("invalid JSON: {e}"))?;
    if !body.is_object() {
        return Err("request body must be a JSON object".into());
    }
    let subject = required(&body, "subject")?;
    let sender = required(&body, "sender")?;
    let text = required(&body, "body")?;
    let id = match body.get("id") {
        Some(Value::String(s)) if !s.is_empty() => s.clone(),
        _ => format!("request-{}", state.next_id.fetch_add(1, Ordering::Relaxed)),
    };
    CleanEmail::from_fields(id, subject, sender, text).map_err(|e| e.to_string())
}

async fn classify(State(state): State<Shared>, bytes: Bytes) -> Response {
    let email = match parse_request(&state, &bytes) {
        Ok(e) => e,
        Err(message) => return error(StatusCode::BAD_REQUEST, message),
    };
    let worker = state.clone();
    let outcome = tokio::task::spawn_blocking(move || worker.engine.classify(&email, &worker.options)).await;
    match outcome {
        Ok(Ok(result)) => (StatusCode::OK, Json(result)).into_response(),
        Ok(Err(e)) => error(StatusCode::BAD_GATEWAY, e.to_string()),
        Err(e) => error(
            StatusCode::INTERNAL_SERVER_ERROR,
            format!("classification task failed: {e}"),
        ),
    }
}

async fn healthz(State(state): State<Shared>) -> Json<Value> {
    Json(json!({
        "status": "ok",
        "index_size": state.engine.index().len(),
        "model": state.engine.model().key,
        "backend": state.backend_kind,
    }))
}

fn router(state: Shared) -> Router {
    Router::new()
        .route("/classify", post(classify))
        .route("/healthz", get(healthz))
        .with_state(state)
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let terminate = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let terminate = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = terminate => {},
    }
    tracing::info!("shutdown requested, draining in-flight requests");
}

pub fn run(args: &ServeArgs) -> Result<()> {
    // The engine owns blocking HTTP clients, which must be created outside
    // the async runtime.
    let state = Arc::new(AppState {
        engine: engine(&args.engine)?,
        options: args.engine.options(),
        backend_kind: match args.engine.backend.backend {
            BackendChoice::Remote => "remote",
            BackendChoice::Scripted(_) => "scripted",
        },
        next_id: AtomicU64::new(1),
    });
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(args.listen)
            .await
            .with_context(|| format!("binding {}", args.listen))?;
        let addr = listener.local_addr()?;
        println!("listening on http://{addr}");
        tracing::info!(%addr, index_size = state.engine.index().len(), "serving");
        axum::serve(listener, router(state))
            .with_graceful_shutdown(shutdown_signal())
            .await?;
        Ok(())
    })
}
