//! HTTP gateway: a chat-completions endpoint whose model choice is made
//! by the routing ladder, not the caller.
//!
//! `POST /v1/chat/completions` accepts the familiar wire shape, routes
//! the last user message through the cost ladder, answers with the chosen
//! model, and reports the decision in `X-Routed-Model`,
//! `X-Predicted-Grade`, and `X-Fallback` response headers (and a
//! `routing` object in the body). Every routed request leaves an audit
//! record in the store before the answer call, so even failed answers are
//! traceable. `GET /report-cards/{model}` renders a model's current card;
//! `GET /healthz` is for probes.

use axum::extract::{Path, Query as UrlQuery, State};
use axum::http::{HeaderName, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Json;
use chrono::Utc;
use prescore_core::corpus::{Corpus, QueryIndex};
use prescore_core::pipeline::{LiveRouter, Pipeline, PipelineError};
use prescore_core::prompt::TemplateSet;
use prescore_core::reportcard::{
    build_report_card, render_report_card, CardVariant, DatasetCatalog, ReportCardError,
};
use prescore_core::router::RouterError;
use prescore_core::scoreboard::{RecordStore, RoutingTrailEntry};
use serde::Deserialize;
use serde_json::json;
use std::sync::Arc;

struct GatewayState {
    router: LiveRouter,
    store: Arc<RecordStore>,
    corpus: Option<Corpus>,
    catalog: DatasetCatalog,
    templates: Arc<TemplateSet>,
    routed_ids: Vec<String>,
}

/// Builds the gateway application. Contextual routing renders its report
/// cards once, here, from the store as it stands at startup.
pub fn build(pipeline: &Pipeline) -> anyhow::Result<axum::Router> {
    let corpus = match pipeline.config().corpus {
        Some(_) => Some(pipeline.load_corpus()?),
        None => None,
    };
    let state = Arc::new(GatewayState {
        router: pipeline.router()?,
        store: Arc::clone(pipeline.store()),
        corpus,
        catalog: pipeline.config().catalog(),
        templates: Arc::clone(pipeline.templates()),
        routed_ids: pipeline
            .config()
            .routed_refs()
            .into_iter()
            .map(|m| m.id)
            .collect(),
    });
    Ok(axum::Router::new()
        .route("/healthz", get(healthz))
        .route("/v1/chat/completions", post(chat_completions))
        .route("/report-cards/{model}", get(report_card))
        .with_state(state))
}

/// Binds and serves until the process is stopped.
pub async fn serve(pipeline: &Pipeline, addr: &str) -> anyhow::Result<()> {
    let app = build(pipeline)?;
    let listener = tokio::net::TcpListener::bind(addr).await?;
    eprintln!("gateway listening on {}", listener.local_addr()?);
    axum::serve(listener, app).await?;
    Ok(())
}

async fn healthz() -> Json<serde_json::Value> {
    Json(json!({ "status": "ok" }))
}

#[derive(Deserialize)]
struct WireMessage {
    role: String,
    content: String,
}

#[derive(Deserialize)]
struct ChatRequest {
    /// Accepted for wire compatibility; the ladder picks the real model.
    #[serde(default)]
    #[allow(dead_code)]
    model: Option<String>,
    #[serde(default)]
    messages: Vec<WireMessage>,
    /// Optional query-family label recorded with the routing decision.
    #[serde(default)]
    dataset: Option<String>,
}

fn error_response(
    status: StatusCode,
    kind: &str,
    message: impl Into<String>,
    trail: Option<&[RoutingTrailEntry]>,
) -> Response {
    let mut error = json!({ "type": kind, "message": message.into() });
    if let Some(trail) = trail {
        error["trail"] = serde_json::to_value(trail).expect("trail entries always serialize");
    }
    (status, Json(json!({ "error": error }))).into_response()
}

fn header(response: &mut Response, name: &'static str, value: &str) {
    // Model ids and grade tokens are plain ASCII in practice; anything
    // exotic is dropped from the headers rather than failing the reply
    // (the body carries the same facts).
    if let Ok(value) = HeaderValue::from_str(value) {
        response
            .headers_mut()
            .insert(HeaderName::from_static(name), value);
    }
}

async fn chat_completions(
    State(state): State<Arc<GatewayState>>,
    body: axum::body::Bytes,
) -> Response {
    // Parse by hand so a malformed body yields the same machine-readable
    // error envelope as every other failure, not a plain-text rejection.
    let request: ChatRequest = match serde_json::from_slice(&body) {
        Ok(request) => request,
        Err(err) => {
            return error_response(
                StatusCode::BAD_REQUEST,
                "invalid_request_error",
                format!("request body is not a valid chat request: {err}"),
                None,
            );
        }
    };
    let text = request
        .messages
        .iter()
        .rev()
        .find(|m| m.role == "user" && !m.content.trim().is_empty())
        .map(|m| m.content.clone());
    let Some(text) = text else {
        return error_response(
            StatusCode::BAD_REQUEST,
            "invalid_request_error",
            "messages must include a non-empty user turn",
            None,
        );
    };
    match state.router.route(&text, request.dataset.as_deref()).await {
        Ok(reply) => {
            let predicted = reply
                .decision
                .predicted
                .map(|g| g.to_string())
                .unwrap_or_else(|| "none".into());
            let body = json!({
                "id": format!("routed-{}", reply.query_id),
                "object": "chat.completion",
                "created": Utc::now().timestamp(),
                "model": reply.decision.chosen.id,
                "choices": [{
                    "index": 0,
                    "message": { "role": "assistant", "content": reply.answer },
                    "finish_reason": "stop",
                }],
                "routing": {
                    "query_id": reply.query_id,
                    "predicted": reply.decision.predicted,
                    "fallback": reply.decision.fallback,
                    "trail": reply.decision.trail,
                    "record_seq": reply.seq,
                },
            });
            let mut response = (StatusCode::OK, Json(body)).into_response();
            header(&mut response, "x-routed-model", &reply.decision.chosen.id);
            header(&mut response, "x-predicted-grade", &predicted);
            header(
                &mut response,
                "x-fallback",
                if reply.decision.fallback { "true" } else { "false" },
            );
            response
        }
        Err(PipelineError::Router(RouterError::AnswerFailed {
            model,
            decision,
            source,
        })) => error_response(
            StatusCode::BAD_GATEWAY,
            "upstream_error",
            format!("routed model {model} failed to answer: {source}"),
            Some(&decision.trail),
        ),
        Err(other) => error_response(
            StatusCode::INTERNAL_SERVER_ERROR,
            "internal_error",
            other.to_string(),
            None,
        ),
    }
}

#[derive(Deserialize)]
struct CardParams {
    #[serde(default)]
    variant: Option<String>,
}

async fn report_card(
    State(state): State<Arc<GatewayState>>,
    Path(model): Path<String>,
    UrlQuery(params): UrlQuery<CardParams>,
) -> Response {
    let Some(corpus) = &state.corpus else {
        return error_response(
            StatusCode::NOT_FOUND,
            "not_found",
            "no corpus configured; report cards are unavailable",
            None,
        );
    };
    if !state.routed_ids.contains(&model) {
        return error_response(
            StatusCode::NOT_FOUND,
            "not_found",
            format!("no routed model named {model:?}"),
            None,
        );
    }
    let variant = match params.variant.as_deref() {
        None | Some("long") => CardVariant::Long,
        Some("short") => CardVariant::Short,
        Some(other) => {
            return error_response(
                StatusCode::BAD_REQUEST,
                "invalid_request_error",
                format!("unknown variant {other:?} (expected long or short)"),
                None,
            );
        }
    };
    let index = QueryIndex::from_corpus(corpus);
    let card = match build_report_card(
        &state.store,
        &index,
        &model,
        &corpus.datasets(),
        &state.catalog,
        None,
        Utc::now(),
    ) {
        Ok(card) => card,
        Err(ReportCardError::NoData { .. }) => {
            return error_response(
                StatusCode::NOT_FOUND,
                "not_found",
                format!("no graded responses recorded for {model:?}"),
                None,
            );
        }
        Err(err) => {
            return error_response(
                StatusCode::INTERNAL_SERVER_ERROR,
                "internal_error",
                err.to_string(),
                None,
            );
        }
    };
    let rendered = match render_report_card(&card, variant, &state.templates) {
        Ok(rendered) => rendered,
        Err(err) => {
            return error_response(
                StatusCode::INTERNAL_SERVER_ERROR,
                "internal_error",
                err.to_string(),
                None,
            );
        }
    };
    Json(json!({
        "variant": variant.to_string(),
        "rendered": rendered,
        "card": card.to_json(),
    }))
    .into_response()
}
