//! HTTP routes.

use std::sync::Arc;

use aeba_core::challenge::{SessionError, SessionKind, SessionStatus};
use aeba_core::enrollment::EnrollmentError;
use aeba_core::verification::VerificationError;
use aeba_core::{ImageId, SessionId, UserId};
use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{FromRequestParts, Path, Query, State};
use axum::http::request::Parts;
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, patch, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::json;

use crate::service::{Service, ServiceError};

pub type AppState = Arc<Service>;

pub struct ApiError(pub ServiceError);

impl<E: Into<ServiceError>> From<E> for ApiError {
    fn from(e: E) -> Self {
        ApiError(e.into())
    }
}

fn status_and_code(e: &ServiceError) -> (StatusCode, &'static str) {
    use ServiceError as S;
    match e {
        S::Unauthorized => (StatusCode::UNAUTHORIZED, "unauthorized"),
        S::Forbidden => (StatusCode::FORBIDDEN, "forbidden"),
        S::NotFound(_) => (StatusCode::NOT_FOUND, "not_found"),
        S::BadRequest(_) => (StatusCode::BAD_REQUEST, "bad_request"),
        S::ConsentRequired => (StatusCode::BAD_REQUEST, "consent_required"),
        S::InvalidEmail => (StatusCode::BAD_REQUEST, "invalid_email"),
        S::DuplicateNickname(_) => (StatusCode::CONFLICT, "duplicate_nickname"),
        S::RevisionDisabled => (StatusCode::FORBIDDEN, "revision_disabled"),
        S::MandatoryIncomplete { .. } => (StatusCode::FORBIDDEN, "mandatory_incomplete"),
        S::DailyLimit { .. } => (StatusCode::TOO_MANY_REQUESTS, "daily_limit"),
        S::Ineligible(_) => (StatusCode::UNPROCESSABLE_ENTITY, "ineligible"),
        S::EmptyPool => (StatusCode::CONFLICT, "empty_pool"),
        S::SessionIncomplete => (StatusCode::CONFLICT, "session_incomplete"),
        S::Enrollment(e) => match e {
            EnrollmentError::RatingOutOfRange(_) => (StatusCode::BAD_REQUEST, "rating_out_of_range"),
            EnrollmentError::NotServed(_) => (StatusCode::CONFLICT, "not_served"),
            EnrollmentError::AlreadyRated(_) => (StatusCode::CONFLICT, "already_rated"),
            EnrollmentError::NotRated(_) => (StatusCode::NOT_FOUND, "not_rated"),
            EnrollmentError::SessionInProgress => (StatusCode::CONFLICT, "session_in_progress"),
            _ => (StatusCode::BAD_REQUEST, "enrollment"),
        },
        S::Verification(e) => match e {
            VerificationError::WrongCardinality { .. } => (StatusCode::BAD_REQUEST, "wrong_cardinality"),
            VerificationError::NotOnScreen(_) => (StatusCode::BAD_REQUEST, "not_on_screen"),
            VerificationError::AlreadyScored(_) => (StatusCode::CONFLICT, "already_scored"),
            VerificationError::MissingScreens { .. } => (StatusCode::CONFLICT, "session_incomplete"),
            VerificationError::Session(SessionError::OutOfOrder { .. }) => (StatusCode::CONFLICT, "out_of_order"),
            VerificationError::Session(SessionError::NoSuchScreen(_)) => (StatusCode::NOT_FOUND, "no_such_screen"),
            VerificationError::Session(SessionError::NotOpen(SessionStatus::Expired)) => {
                (StatusCode::CONFLICT, "session_expired")
            }
            VerificationError::Session(SessionError::NotOpen(_)) => (StatusCode::CONFLICT, "session_closed"),
        },
        S::Bank(_) => (StatusCode::BAD_REQUEST, "bank"),
        S::Challenge(aeba_core::challenge::ChallengeError::Infeasible { .. }) => {
            (StatusCode::UNPROCESSABLE_ENTITY, "infeasible")
        }
        S::Challenge(_) | S::Store(_) | S::Apply(_) => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, code) = status_and_code(&self.0);
        let message = if status == StatusCode::INTERNAL_SERVER_ERROR {
            tracing::error!("{}", self.0);
            "internal error".to_owned()
        } else {
            self.0.to_string()
        };
        let mut body = json!({ "error": code, "message": message });
        match &self.0 {
            ServiceError::Ineligible(reasons) => body["reasons"] = json!(reasons),
            ServiceError::DailyLimit { retry_after_secs } => body["retry_after"] = json!(retry_after_secs),
            _ => {}
        }
        let mut response = (status, Json(body)).into_response();
        match &self.0 {
            ServiceError::DailyLimit { retry_after_secs } => {
                response
                    .headers_mut()
                    .insert(header::RETRY_AFTER, HeaderValue::from(*retry_after_secs));
            }
            ServiceError::Unauthorized => {
                response
                    .headers_mut()
                    .insert(header::WWW_AUTHENTICATE, HeaderValue::from_static("Bearer"));
            }
            _ => {}
        }
        response
    }
}

impl From<JsonRejection> for ServiceError {
    fn from(r: JsonRejection) -> Self {
        ServiceError::BadRequest(r.body_text())
    }
}

impl From<QueryRejection> for ServiceError {
    fn from(r: QueryRejection) -> Self {
        ServiceError::BadRequest(r.body_text())
    }
}

fn bearer(parts: &Parts) -> Option<&str> {
    parts
        .headers
        .get(header::AUTHORIZATION)?
        .to_str()
        .ok()?
        .strip_prefix("Bearer ")
        .map(str::trim)
}

/// The player behind the request's bearer token.
pub struct AuthUser(pub UserId);

impl FromRequestParts<AppState> for AuthUser {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &AppState) -> Result<Self, Self::Rejection> {
        let token = bearer(parts).ok_or(ServiceError::Unauthorized)?;
        Ok(AuthUser(state.authenticate(token)?))
    }
}

pub struct Admin;

impl FromRequestParts<AppState> for Admin {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &AppState) -> Result<Self, Self::Rejection> {
        let token = bearer(parts).ok_or(ServiceError::Forbidden)?;
        state.check_admin(token)?;
        Ok(Admin)
    }
}

type ApiResult<T> = Result<T, ApiError>;

#[derive(Deserialize)]
struct RegisterBody {
    email: String,
    nickname: String,
    #[serde(default)]
    consent: bool,
}

async fn register(
    State(svc): State<AppState>,
    body: Result<Json<RegisterBody>, JsonRejection>,
) -> ApiResult<impl IntoResponse> {
    let Json(body) = body?;
    let reg = svc.register(&body.email, &body.nickname, body.consent)?;
    Ok((StatusCode::CREATED, Json(reg)))
}

async fn preview(State(svc): State<AppState>, _user: AuthUser) -> impl IntoResponse {
    Json(svc.preview())
}

#[derive(Deserialize)]
struct BatchQuery {
    n: Option<usize>,
}

async fn next_ratings(
    State(svc): State<AppState>,
    AuthUser(user): AuthUser,
    query: Result<Query<BatchQuery>, QueryRejection>,
) -> ApiResult<impl IntoResponse> {
    let Query(q) = query?;
    let images = svc.next_ratings(&user, q.n.unwrap_or(1))?;
    Ok(Json(json!({ "images": images })))
}

#[derive(Deserialize)]
struct RatingBody {
    image_id: ImageId,
    value: i64,
}

async fn record_rating(
    State(svc): State<AppState>,
    AuthUser(user): AuthUser,
    body: Result<Json<RatingBody>, JsonRejection>,
) -> ApiResult<impl IntoResponse> {
    let Json(body) = body?;
    let view = svc.record_rating(&user, &body.image_id, body.value)?;
    Ok((StatusCode::CREATED, Json(view)))
}

#[derive(Deserialize)]
struct ReviseBody {
    value: i64,
}

async fn revise_rating(
    State(svc): State<AppState>,
    AuthUser(user): AuthUser,
    Path(image_id): Path<ImageId>,
    body: Result<Json<ReviseBody>, JsonRejection>,
) -> ApiResult<impl IntoResponse> {
    let Json(body) = body?;
    Ok(Json(svc.revise_rating(&user, &image_id, body.value)?))
}

async fn list_ratings(State(svc): State<AppState>, AuthUser(user): AuthUser) -> ApiResult<impl IntoResponse> {
    Ok(Json(json!({ "ratings": svc.ratings(&user)? })))
}

async fn progress(State(svc): State<AppState>, AuthUser(user): AuthUser) -> ApiResult<impl IntoResponse> {
    Ok(Json(svc.progress(&user)?))
}

#[derive(Deserialize)]
struct KindQuery {
    kind: Option<String>,
}

fn parse_kind(kind: Option<&str>, default: SessionKind) -> Result<SessionKind, ServiceError> {
    match kind {
        None => Ok(default),
        Some("game") => Ok(SessionKind::Game),
        Some("adversarial") => Ok(SessionKind::Adversarial),
        Some("auth") => Ok(SessionKind::Auth),
        Some(other) => Err(ServiceError::BadRequest(format!("unknown session kind {other:?}"))),
    }
}

async fn start_session(
    State(svc): State<AppState>,
    AuthUser(user): AuthUser,
    query: Result<Query<KindQuery>, QueryRejection>,
) -> ApiResult<impl IntoResponse> {
    let Query(q) = query?;
    let kind = parse_kind(q.kind.as_deref(), SessionKind::Game)?;
    Ok((StatusCode::CREATED, Json(svc.start_session(&user, kind)?)))
}

async fn screen(
    State(svc): State<AppState>,
    AuthUser(user): AuthUser,
    Path((id, n)): Path<(SessionId, usize)>,
) -> ApiResult<impl IntoResponse> {
    Ok(Json(svc.screen(&user, &id, n)?))
}

#[derive(Deserialize)]
struct SelectionBody {
    chosen: Vec<ImageId>,
}

async fn submit_selection(
    State(svc): State<AppState>,
    AuthUser(user): AuthUser,
    Path((id, n)): Path<(SessionId, usize)>,
    body: Result<Json<SelectionBody>, JsonRejection>,
) -> ApiResult<impl IntoResponse> {
    let Json(body) = body?;
    Ok(Json(svc.submit_selection(&user, &id, n, body.chosen)?))
}

async fn result(
    State(svc): State<AppState>,
    AuthUser(user): AuthUser,
    Path(id): Path<SessionId>,
) -> ApiResult<impl IntoResponse> {
    Ok(Json(svc.result(&user, &id)?))
}

async fn leaderboard(
    State(svc): State<AppState>,
    query: Result<Query<KindQuery>, QueryRejection>,
) -> ApiResult<impl IntoResponse> {
    let Query(q) = query?;
    let kind = parse_kind(q.kind.as_deref(), SessionKind::Game)?;
    if kind == SessionKind::Auth {
        return Err(ServiceError::BadRequest("no leaderboard for auth sessions".into()).into());
    }
    Ok(Json(svc.leaderboard(kind)))
}

async fn fpfn(State(svc): State<AppState>, _admin: Admin) -> ApiResult<impl IntoResponse> {
    let csv = svc.fpfn_csv()?;
    Ok(([(header::CONTENT_TYPE, "text/csv; charset=utf-8")], csv))
}

#[derive(Deserialize)]
struct IngestQuery {
    #[serde(default)]
    activate: bool,
}

async fn ingest(
    State(svc): State<AppState>,
    _admin: Admin,
    query: Result<Query<IngestQuery>, QueryRejection>,
    body: String,
) -> ApiResult<impl IntoResponse> {
    let Query(q) = query?;
    Ok((StatusCode::CREATED, Json(svc.ingest(&body, q.activate)?)))
}

async fn curate(State(svc): State<AppState>, _admin: Admin) -> ApiResult<impl IntoResponse> {
    Ok(Json(svc.curate()?))
}

async fn health() -> &'static str {
    "ok"
}

async fn reminders(State(svc): State<AppState>, _admin: Admin) -> ApiResult<impl IntoResponse> {
    Ok(Json(svc.send_reminders()))
}

pub fn router(service: AppState) -> Router {
    Router::new()
        .route("/healthz", get(health))
        .route("/users", post(register))
        .route("/preview", get(preview))
        .route("/rating/next", get(next_ratings))
        .route("/rating/progress", get(progress))
        .route("/ratings", post(record_rating).get(list_ratings))
        .route("/ratings/{image_id}", patch(revise_rating))
        .route("/sessions", post(start_session))
        .route("/sessions/{id}/screens/{n}", get(screen))
        .route("/sessions/{id}/screens/{n}/selection", post(submit_selection))
        .route("/sessions/{id}/result", get(result))
        .route("/leaderboard", get(leaderboard))
        .route("/admin/analytics/fpfn", get(fpfn))
        .route("/admin/bank/images", post(ingest))
        .route("/admin/bank/curate", post(curate))
        .route("/admin/reminders", post(reminders))
        .with_state(service)
}
