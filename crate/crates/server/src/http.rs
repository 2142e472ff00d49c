//! HTTP/JSON API and the WebSocket flavour of the stream bridge.
//!
//! | method | path               | body / query                  |
//! |--------|--------------------|-------------------------------|
//! | GET    | `/health`          |                               |
//! | GET    | `/api/session`     |                               |
//! | GET    | `/api/ticks`       | `?since=<session seconds>`    |
//! | POST   | `/api/classify`    | [`ClassifyRequest`]           |
//! | POST   | `/api/transitions` | [`TransitionsRequest`]        |
//! | POST   | `/api/flux`        | [`FluxRequest`]               |
//! | GET    | `/bridge`          | WebSocket, JSON text messages |

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};

use axum::extract::ws::{self, WebSocket, WebSocketUpgrade};
use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use ensemble_core::api::{
    ClassifyRequest, ClassifyResponse, ErrorBody, FluxRequest, FluxResponse, Health, SessionStatus,
    TicksResponse, TransitionsRequest, TransitionsResponse,
};
use ensemble_core::dynamics::{
    ensemble_matrix, flux, flux_or_zero, GestureSequence, TransitionMatrix,
};
use ensemble_core::features::features_from_events;
use ensemble_core::forest::ForestModel;
use ensemble_core::protocol::{encode_json, Message, PROTOCOL_VERSION};
use ensemble_core::session::Destination;
use futures::{SinkExt, StreamExt};
use serde::Deserialize;
use tokio::sync::mpsc;

use crate::transport::{decode_bridge_payload, Inbound, OUTBOUND_QUEUE};
use crate::{SessionClock, StatusBoard};

#[derive(Clone)]
pub struct AppState {
    pub(crate) status: Arc<RwLock<StatusBoard>>,
    pub(crate) model: Arc<ForestModel>,
    pub(crate) inbound: mpsc::Sender<Inbound>,
    pub(crate) conn_ids: Arc<AtomicU64>,
    pub(crate) clock: SessionClock,
}

pub struct ApiError(StatusCode, String);

impl ApiError {
    fn unprocessable(msg: impl Into<String>) -> Self {
        ApiError(StatusCode::UNPROCESSABLE_ENTITY, msg.into())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(ErrorBody { error: self.1 })).into_response()
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/api/session", get(session))
        .route("/api/ticks", get(ticks))
        .route("/api/classify", post(classify))
        .route("/api/transitions", post(transitions))
        .route("/api/flux", post(flux_of))
        .route("/bridge", get(bridge))
        .with_state(state)
}

async fn health() -> Json<Health> {
    Json(Health {
        status: "ok".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        protocol_version: PROTOCOL_VERSION,
    })
}

async fn session(State(st): State<AppState>) -> Json<SessionStatus> {
    let mut status = st.status.read().expect("status lock").status.clone();
    status.session_time = st.clock.now();
    Json(status)
}

#[derive(Debug, Deserialize)]
struct TicksQuery {
    since: Option<f64>,
}

async fn ticks(State(st): State<AppState>, Query(q): Query<TicksQuery>) -> Json<TicksResponse> {
    let since = q.since.unwrap_or(f64::NEG_INFINITY);
    let board = st.status.read().expect("status lock");
    Json(TicksResponse {
        ticks: board
            .recent
            .iter()
            .filter(|t| t.time > since)
            .cloned()
            .collect(),
    })
}

async fn classify(
    State(st): State<AppState>,
    Json(req): Json<ClassifyRequest>,
) -> Result<Json<ClassifyResponse>, ApiError> {
    let features = match req {
        ClassifyRequest::Features { features } => features,
        ClassifyRequest::Events {
            events,
            now,
            window_secs,
        } => {
            let w = window_secs.unwrap_or(
                st.status
                    .read()
                    .expect("status lock")
                    .status
                    .config
                    .window_secs,
            );
            if !(w > 0.0) || !w.is_finite() || !now.is_finite() {
                return Err(ApiError::unprocessable(
                    "window_secs must be positive and now finite",
                ));
            }
            for e in &events {
                e.validate()
                    .map_err(|e| ApiError::unprocessable(e.to_string()))?;
            }
            features_from_events(
                events.iter().filter(|e| e.time > now - w && e.time <= now),
                w,
            )
        }
    };
    if !features.is_finite() {
        return Err(ApiError::unprocessable("features must be finite"));
    }
    let p = st.model.predict(&features);
    Ok(Json(ClassifyResponse {
        gesture: p.gesture,
        code: p.gesture.code().to_string(),
        probability: p.probability(),
        probabilities: p.probabilities.to_vec(),
        features,
    }))
}

async fn transitions(
    Json(req): Json<TransitionsRequest>,
) -> Result<Json<TransitionsResponse>, ApiError> {
    if !(req.lo.is_finite() && req.hi.is_finite() && req.lo < req.hi) {
        return Err(ApiError::unprocessable("need finite lo < hi"));
    }
    let mut seqs = Vec::with_capacity(req.sequences.len());
    for (i, s) in req.sequences.iter().enumerate() {
        if s.iter().any(|(t, _)| !t.is_finite()) || s.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(ApiError::unprocessable(format!(
                "sequence {i}: times must be finite and strictly increasing"
            )));
        }
        seqs.push(GestureSequence::from_samples(
            format!("p{i}"),
            s.iter().copied(),
        ));
    }
    let refs: Vec<&GestureSequence> = seqs.iter().collect();
    let matrix = ensemble_matrix(&refs, req.lo, req.hi);
    let flux = flux_or_zero(&matrix);
    Ok(Json(TransitionsResponse { matrix, flux }))
}

async fn flux_of(Json(req): Json<FluxRequest>) -> Result<Json<FluxResponse>, ApiError> {
    if req
        .matrix
        .iter()
        .flatten()
        .any(|&p| !p.is_finite() || p < 0.0)
    {
        return Err(ApiError::unprocessable(
            "matrix entries must be finite and non-negative",
        ));
    }
    let value = flux(&TransitionMatrix::from_probs(req.matrix))
        .map_err(|e| ApiError::unprocessable(e.to_string()))?;
    Ok(Json(FluxResponse { flux: value }))
}

async fn bridge(State(st): State<AppState>, upgrade: WebSocketUpgrade) -> Response {
    upgrade.on_upgrade(move |socket| websocket_bridge(st, socket))
}

async fn websocket_bridge(st: AppState, socket: WebSocket) {
    let id = st.conn_ids.fetch_add(1, Ordering::Relaxed);
    let (out_tx, mut out_rx) = mpsc::channel::<Message>(OUTBOUND_QUEUE);
    if st
        .inbound
        .send(Inbound::BridgeOpened { id, tx: out_tx })
        .await
        .is_err()
    {
        return;
    }
    let (mut sink, mut stream) = socket.split();
    let writer = tokio::spawn(async move {
        while let Some(m) = out_rx.recv().await {
            let text = String::from_utf8(encode_json(&m)).expect("serde_json emits UTF-8");
            if sink.send(ws::Message::Text(text.into())).await.is_err() {
                break;
            }
        }
    });
    let from = Destination::Bridge(id);
    while let Some(Ok(msg)) = stream.next().await {
        let payload = match &msg {
            ws::Message::Text(t) => t.as_bytes(),
            ws::Message::Binary(b) => b.as_ref(),
            ws::Message::Close(_) => break,
            _ => continue,
        };
        let arrival = st.clock.now();
        let packet = Inbound::Packet {
            from,
            arrival,
            len: payload.len(),
            decoded: decode_bridge_payload(payload),
        };
        if st.inbound.send(packet).await.is_err() {
            break;
        }
    }
    writer.abort();
    let _ = st.inbound.send(Inbound::BridgeClosed { id }).await;
}
