use std::sync::Arc;

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Path, Query, State};
use axum::http::{HeaderValue, Method, StatusCode};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::json;
use tower_http::cors::{AllowOrigin, Any, CorsLayer};

use melreject_core::rejection::{evaluate_with_rejection, RejectionEvaluation, SubsetStatus};

use crate::error::ApiError;
use crate::model::{
    final_metrics, uncertain_page, CreateRunRequest, FinalMetrics, MetricsDocument, ReliabilityDocument,
    ReliabilitySide, ReviewRecord, ReviewRequest, RunView, SweepDocument, UncertainPage,
};
use crate::store::{Run, Store};

pub const DEFAULT_PAGE_SIZE: usize = 50;
pub const MAX_PAGE_SIZE: usize = 1000;

type ApiResult<T> = Result<Json<T>, ApiError>;

#[derive(Debug, Default, Deserialize)]
pub struct ThresholdQuery {
    pub threshold: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
pub struct UncertainQuery {
    pub threshold: Option<f64>,
    pub page: Option<usize>,
    pub page_size: Option<usize>,
}

/// Routes under `/runs`, with CORS for `origins` (`"*"` allows any).
pub fn router(store: Arc<Store>, origins: &[String]) -> Router {
    let allow = if origins.iter().any(|o| o == "*") {
        AllowOrigin::from(Any)
    } else {
        AllowOrigin::list(origins.iter().filter_map(|o| HeaderValue::from_str(o).ok()))
    };
    let cors = CorsLayer::new()
        .allow_origin(allow)
        .allow_methods([Method::GET, Method::POST])
        .allow_headers([axum::http::header::CONTENT_TYPE]);
    Router::new()
        .route("/runs", post(create_run).get(list_runs))
        .route("/runs/{id}", get(get_run))
        .route("/runs/{id}/metrics", get(get_metrics))
        .route("/runs/{id}/sweep", get(get_sweep))
        .route("/runs/{id}/reliability", get(get_reliability))
        .route("/runs/{id}/uncertain", get(list_uncertain))
        .route("/runs/{id}/reviews", post(submit_review))
        .route("/runs/{id}/final", get(get_final))
        .fallback(|| async { ApiError::not_found("no such route") })
        .layer(cors)
        .with_state(store)
}

fn check_threshold(t: f64) -> Result<f64, ApiError> {
    if (0.0..=1.0).contains(&t) {
        Ok(t)
    } else {
        Err(ApiError::bad_request("threshold must be in [0, 1]").with_detail(json!({ "threshold": t })))
    }
}

/// The stored evaluation, or a fresh one at a what-if threshold.
fn evaluation_at(run: &Run, threshold: Option<f64>) -> Result<(RejectionEvaluation, bool), ApiError> {
    match threshold {
        None => Ok((run.output.evaluation.clone(), true)),
        Some(t) => {
            let t = check_threshold(t)?;
            let policy = run.output.policy.with_threshold(t);
            Ok((evaluate_with_rejection(&run.output.test, &policy)?, t == run.output.policy.threshold))
        }
    }
}

async fn create_run(
    State(store): State<Arc<Store>>,
    body: Result<Json<CreateRunRequest>, JsonRejection>,
) -> Result<(StatusCode, Json<RunView>), ApiError> {
    let Json(req) = body?;
    let handle = tokio::task::spawn_blocking(move || store.create_run(req))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))??;
    Ok((StatusCode::CREATED, Json(handle.view())))
}

async fn list_runs(State(store): State<Arc<Store>>) -> Json<Vec<RunView>> {
    Json(store.list())
}

async fn get_run(State(store): State<Arc<Store>>, Path(id): Path<String>) -> ApiResult<RunView> {
    Ok(Json(store.get(&id)?.view()))
}

async fn get_metrics(
    State(store): State<Arc<Store>>,
    Path(id): Path<String>,
    query: Result<Query<ThresholdQuery>, QueryRejection>,
) -> ApiResult<MetricsDocument> {
    let Query(q) = query?;
    let handle = store.get(&id)?;
    let run = handle.ready()?;
    let (evaluation, selected) = evaluation_at(run, q.threshold)?;
    if evaluation.after_status != SubsetStatus::Ok {
        return Err(ApiError::new(
            StatusCode::UNPROCESSABLE_ENTITY,
            "degenerate_subset",
            "accepted subset is empty or single-class",
        )
        .with_detail(json!({
            "threshold": evaluation.policy.threshold,
            "accepted": evaluation.partition.accepted.len(),
            "status": evaluation.after_status,
        })));
    }
    Ok(Json(MetricsDocument {
        run_id: id,
        selected,
        summary: evaluation.summary(),
    }))
}

async fn get_sweep(State(store): State<Arc<Store>>, Path(id): Path<String>) -> ApiResult<SweepDocument> {
    let handle = store.get(&id)?;
    let run = handle.ready()?;
    Ok(Json(SweepDocument {
        run_id: id,
        selected_threshold: run.output.policy.threshold,
        max_reject_fraction: run.output.policy.max_reject_fraction,
        points: run.output.sweep.clone(),
    }))
}

async fn get_reliability(
    State(store): State<Arc<Store>>,
    Path(id): Path<String>,
    query: Result<Query<ThresholdQuery>, QueryRejection>,
) -> ApiResult<ReliabilityDocument> {
    let Query(q) = query?;
    let handle = store.get(&id)?;
    let run = handle.ready()?;
    let (evaluation, _) = evaluation_at(run, q.threshold)?;
    Ok(Json(ReliabilityDocument {
        run_id: id,
        threshold: evaluation.policy.threshold,
        before: ReliabilitySide::from_metrics(&evaluation.before),
        after: evaluation.after.as_ref().map(ReliabilitySide::from_metrics),
    }))
}

async fn list_uncertain(
    State(store): State<Arc<Store>>,
    Path(id): Path<String>,
    query: Result<Query<UncertainQuery>, QueryRejection>,
) -> ApiResult<UncertainPage> {
    let Query(q) = query?;
    let handle = store.get(&id)?;
    let run = handle.ready()?;
    let t = check_threshold(q.threshold.unwrap_or(run.output.policy.threshold))?;
    let page = q.page.unwrap_or(1);
    let page_size = q.page_size.unwrap_or(DEFAULT_PAGE_SIZE);
    if page == 0 || page_size == 0 || page_size > MAX_PAGE_SIZE {
        return Err(ApiError::bad_request(format!(
            "page must be at least 1 and page_size in 1..={MAX_PAGE_SIZE}"
        ))
        .with_detail(json!({ "page": page, "page_size": page_size })));
    }
    Ok(Json(uncertain_page(&id, &run.output.test, t, page, page_size, &handle.reviews())))
}

async fn submit_review(
    State(store): State<Arc<Store>>,
    Path(id): Path<String>,
    body: Result<Json<ReviewRequest>, JsonRejection>,
) -> ApiResult<ReviewRecord> {
    let Json(req) = body?;
    let handle = store.get(&id)?;
    tokio::task::spawn_blocking(move || handle.submit_review(req))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))?
        .map(Json)
}

async fn get_final(State(store): State<Arc<Store>>, Path(id): Path<String>) -> ApiResult<FinalMetrics> {
    let handle = store.get(&id)?;
    let run = handle.ready()?;
    Ok(Json(final_metrics(&id, &run.output.test, &run.output.policy, &handle.reviews())?))
}
