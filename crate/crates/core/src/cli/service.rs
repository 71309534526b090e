//! JSON-over-HTTP embedding service.
//!
//! | method | path           | body                                         | reply                          |
//! |--------|----------------|----------------------------------------------|--------------------------------|
//! | POST   | `/v1/embed`    | `{"modality": "a"\|"b", "features": [[..]]}` | `{"embeddings": [[..]]}`       |
//! | POST   | `/v1/match`    | `{"feat_a": [..], "feat_b": [..]}`           | `{"score": s}`                 |
//! | POST   | `/v1/retrieve` | `{"modality", "features": [..], "k"}`        | `{"ids": [..], "scores": [..]}`|
//! | GET    | `/v1/health`   |                                              | `{"status": "ok"}`             |
//!
//! A retrieve query of modality `a` searches the corpus' `b` side and vice
//! versa. Client errors answer 400 with `{"error": message}`.

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::Modality;
use crate::data::PairDataset;
use crate::encoders::EncoderParams;
use crate::error::{Error, Result};
use crate::numkit;
use crate::retrieval::{build_index, RetrievalIndex};

/// Immutable state shared by all request handlers.
#[derive(Debug)]
pub struct ServiceState {
    encoder_a: EncoderParams,
    encoder_b: EncoderParams,
    /// `(index over a-side embeddings, index over b-side embeddings)`
    corpus: Option<(RetrievalIndex, RetrievalIndex)>,
}

impl ServiceState {
    /// Embeds `corpus` (if given) with the query towers up front.
    pub fn new(
        encoder_a: EncoderParams,
        encoder_b: EncoderParams,
        corpus: Option<&PairDataset>,
    ) -> Result<Self> {
        let corpus = match corpus {
            None => None,
            Some(ds) => {
                let ids: Vec<String> = ds.pairs().iter().map(|p| p.id.clone()).collect();
                let a: Vec<Vec<f64>> = ds.pairs().iter().map(|p| p.feat_a.clone()).collect();
                let b: Vec<Vec<f64>> = ds.pairs().iter().map(|p| p.feat_b.clone()).collect();
                Some((
                    build_index(ids.clone(), encoder_a.encode_batch(&a)?)?,
                    build_index(ids, encoder_b.encode_batch(&b)?)?,
                ))
            }
        };
        Ok(Self {
            encoder_a,
            encoder_b,
            corpus,
        })
    }

    fn encoder(&self, m: Modality) -> &EncoderParams {
        match m {
            Modality::A => &self.encoder_a,
            Modality::B => &self.encoder_b,
        }
    }
}

pub fn router(state: ServiceState) -> Router {
    Router::new()
        .route("/v1/health", get(health))
        .route("/v1/embed", post(embed))
        .route("/v1/match", post(match_pair))
        .route("/v1/retrieve", post(retrieve))
        .with_state(Arc::new(state))
}

struct ApiError(StatusCode, String);

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match root_cause(&e) {
            Error::ShapeMismatch { .. }
            | Error::Degenerate { .. }
            | Error::NonFinite(_)
            | Error::InvalidArgument(_) => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError(status, e.to_string())
    }
}

fn root_cause(e: &Error) -> &Error {
    match e {
        Error::AtIndex { source, .. } | Error::AtStep { source, .. } => root_cause(source),
        other => other,
    }
}

fn json_response<T: Serialize>(status: StatusCode, body: &T) -> Response {
    match serde_json::to_string(body) {
        Ok(text) => (status, [(header::CONTENT_TYPE, "application/json")], text).into_response(),
        Err(e) => (StatusCode::INTERNAL_SERVER_ERROR, e.to_string()).into_response(),
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        #[derive(Serialize)]
        struct Body {
            error: String,
        }
        json_response(self.0, &Body { error: self.1 })
    }
}

type ApiResult = std::result::Result<Response, ApiError>;

fn parse<T: DeserializeOwned>(body: &Bytes) -> std::result::Result<T, ApiError> {
    serde_json::from_slice(body)
        .map_err(|e| ApiError(StatusCode::BAD_REQUEST, format!("malformed request body: {e}")))
}

async fn health() -> Response {
    json_response(StatusCode::OK, &serde_json::json!({ "status": "ok" }))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EmbedRequest {
    modality: Modality,
    features: Vec<Vec<f64>>,
}

#[derive(Serialize)]
struct EmbedResponse {
    embeddings: Vec<Vec<f64>>,
}

async fn embed(State(st): State<Arc<ServiceState>>, body: Bytes) -> ApiResult {
    let req: EmbedRequest = parse(&body)?;
    let embeddings = st.encoder(req.modality).encode_batch(&req.features)?;
    Ok(json_response(StatusCode::OK, &EmbedResponse { embeddings }))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct MatchRequest {
    feat_a: Vec<f64>,
    feat_b: Vec<f64>,
}

#[derive(Serialize)]
struct MatchResponse {
    score: f64,
}

async fn match_pair(State(st): State<Arc<ServiceState>>, body: Bytes) -> ApiResult {
    let req: MatchRequest = parse(&body)?;
    let za = st.encoder_a.encode(&req.feat_a)?;
    let zb = st.encoder_b.encode(&req.feat_b)?;
    Ok(json_response(
        StatusCode::OK,
        &MatchResponse {
            score: numkit::dot(&za, &zb),
        },
    ))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RetrieveRequest {
    modality: Modality,
    features: Vec<f64>,
    k: usize,
}

#[derive(Serialize)]
pub(crate) struct RetrieveResponse {
    pub ids: Vec<String>,
    pub scores: Vec<f64>,
}

async fn retrieve(State(st): State<Arc<ServiceState>>, body: Bytes) -> ApiResult {
    let req: RetrieveRequest = parse(&body)?;
    let Some((index_a, index_b)) = &st.corpus else {
        return Err(ApiError(StatusCode::NOT_FOUND, "no corpus loaded".into()));
    };
    let q = st.encoder(req.modality).encode(&req.features)?;
    let target = match req.modality {
        Modality::A => index_b,
        Modality::B => index_a,
    };
    let hits = target.top_k(&q, req.k)?;
    Ok(json_response(
        StatusCode::OK,
        &RetrieveResponse {
            ids: hits.iter().map(|h| h.id.clone()).collect(),
            scores: hits.iter().map(|h| h.score).collect(),
        },
    ))
}
