//! Read-only JSON API over a loaded [`Project`].

use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use log2ns_core::cluster::ClusterSummary;
use log2ns_core::ingest::Token;
use log2ns_core::pipeline::Project;
use log2ns_core::query::{self, parse_query, QueryError};
use log2ns_core::ExecMode;

#[derive(Clone)]
pub struct AppState {
    pub project: Arc<Project>,
    pub mode: ExecMode,
}

pub fn router(project: Arc<Project>, mode: ExecMode) -> Router {
    Router::new()
        .route("/api/clusters", get(clusters))
        .route("/api/clusters/{id}", get(cluster))
        .route("/api/projection", get(projection))
        .route("/api/neighbors", get(neighbors))
        .route("/api/query", post(run_query))
        .route("/api/witness-check", post(witness_check))
        .route("/api/rules", get(rules))
        .route("/api/rules/{name}/effective-region", get(effective_region))
        .fallback(not_found)
        .with_state(AppState { project, mode })
}

/// JSON error body; `position` is set for query parse errors.
#[derive(Debug, Serialize, Deserialize)]
pub struct ApiError {
    pub error: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub position: Option<usize>,
}

type ApiResult<T> = Result<Json<T>, Response>;

fn fail(status: StatusCode, error: impl Into<String>) -> Response {
    (
        status,
        Json(ApiError {
            error: error.into(),
            position: None,
        }),
    )
        .into_response()
}

#[allow(clippy::result_large_err)]
fn require<'a, T>(item: Option<&'a T>, artifact: &str) -> Result<&'a T, Response> {
    item.ok_or_else(|| {
        fail(
            StatusCode::SERVICE_UNAVAILABLE,
            format!("the {artifact} artifact is not loaded"),
        )
    })
}

async fn clusters(State(s): State<AppState>) -> ApiResult<Vec<ClusterSummary>> {
    Ok(Json(
        require(s.project.clusters.as_ref(), "clusters")?
            .summaries
            .clone(),
    ))
}

async fn cluster(State(s): State<AppState>, Path(id): Path<usize>) -> ApiResult<ClusterSummary> {
    let c = require(s.project.clusters.as_ref(), "clusters")?;
    c.summaries
        .iter()
        .find(|x| x.cluster_id == id)
        .cloned()
        .map(Json)
        .ok_or_else(|| {
            fail(
                StatusCode::NOT_FOUND,
                format!("no cluster {id}; k = {}", c.model.k),
            )
        })
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ProjectionPoint {
    pub row_index: usize,
    pub x: f64,
    pub y: f64,
    pub cluster: usize,
}

async fn projection(State(s): State<AppState>) -> ApiResult<Vec<ProjectionPoint>> {
    let c = require(s.project.clusters.as_ref(), "clusters")?;
    Ok(Json(
        c.projection
            .iter()
            .map(|p| ProjectionPoint {
                row_index: p.row_index,
                x: p.x,
                y: p.y,
                cluster: c.model.assignments[p.row_index],
            })
            .collect(),
    ))
}

#[derive(Debug, Deserialize)]
struct NeighborParams {
    token: String,
    k: Option<usize>,
}

async fn neighbors(
    State(s): State<AppState>,
    Query(p): Query<NeighborParams>,
) -> ApiResult<Vec<log2ns_core::embedding::Neighbor>> {
    let model = require(s.project.embedding.as_ref(), "embedding")?;
    let token: Token = p
        .token
        .parse()
        .map_err(|e| fail(StatusCode::BAD_REQUEST, format!("bad token: {e}")))?;
    model
        .nearest_neighbors(&token, p.k.unwrap_or(10))
        .map(Json)
        .map_err(|e| fail(StatusCode::NOT_FOUND, e.to_string()))
}

#[derive(Debug, Deserialize)]
pub struct QueryBody {
    pub text: String,
}

async fn run_query(State(s): State<AppState>, Json(body): Json<QueryBody>) -> Response {
    let q = match parse_query(&body.text) {
        Ok(q) => q,
        Err(e) => {
            return (
                StatusCode::BAD_REQUEST,
                Json(ApiError {
                    error: e.message.clone(),
                    position: Some(e.position),
                }),
            )
                .into_response()
        }
    };
    let project = s.project.clone();
    let out =
        tokio::task::spawn_blocking(move || query::execute(&q, &project.artifacts(), s.mode)).await;
    match out {
        Ok(Ok(result)) => Json(result).into_response(),
        Ok(Err(e @ QueryError::MissingArtifact { .. })) => {
            fail(StatusCode::SERVICE_UNAVAILABLE, e.to_string())
        }
        Ok(Err(e)) => fail(StatusCode::BAD_REQUEST, e.to_string()),
        Err(e) => fail(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
}

#[derive(Debug, Deserialize)]
pub struct WitnessBody {
    pub n: usize,
    #[serde(default)]
    pub seed: u64,
}

async fn witness_check(State(s): State<AppState>, Json(body): Json<WitnessBody>) -> Response {
    let project = s.project.clone();
    if project.corpus.is_none() || project.firewall.is_none() {
        return fail(
            StatusCode::SERVICE_UNAVAILABLE,
            "witness checks need the logs and firewall artifacts",
        );
    }
    let out = tokio::task::spawn_blocking(move || {
        let corpus = project.corpus.as_ref().expect("checked");
        let fw = project.firewall.as_ref().expect("checked");
        query::witness_check(corpus, fw, body.n, body.seed, s.mode)
    })
    .await;
    match out {
        Ok(report) => Json(report).into_response(),
        Err(e) => fail(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
}

async fn rules(State(s): State<AppState>) -> ApiResult<Vec<log2ns_core::formal::RuleView>> {
    Ok(Json(require(s.project.rules.as_ref(), "firewall")?.clone()))
}

async fn effective_region(
    State(s): State<AppState>,
    Path(name): Path<String>,
) -> ApiResult<log2ns_core::formal::EffectiveRegion> {
    let fw = require(s.project.firewall.as_ref(), "firewall")?;
    fw.effective_region(&name)
        .map(Json)
        .map_err(|e| fail(StatusCode::NOT_FOUND, e.to_string()))
}

async fn not_found() -> Response {
    fail(StatusCode::NOT_FOUND, "no such endpoint")
}
