//! HTTP and WebSocket routes over a shared [`Mediator`].

use std::sync::{Arc, PoisonError, RwLock};

use axum::body::Bytes;
use axum::extract::rejection::JsonRejection;
use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{FromRequest, Path, Query, Request, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::{json, Value};

use mediator_core::{
    Condition, ConversationKind, DraftId, Error, GoalId, MeetingId, Mediator, Phase, QuestionnaireResponse,
    ReflectionId, SessionId, TeamId, UserId, VoiceActivityEvent, VoiceEventKind,
};

pub type Shared = Arc<RwLock<Mediator>>;

#[derive(Clone)]
pub struct AppState {
    pub mediator: Shared,
    pub auth_token: Arc<str>,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
    pending_phase: Option<Phase>,
}

pub fn status_for(err: &Error) -> StatusCode {
    match err {
        Error::Validation(_) | Error::Undefined(_) | Error::DegenerateSample(_) => StatusCode::UNPROCESSABLE_ENTITY,
        Error::NotFound { .. } => StatusCode::NOT_FOUND,
        Error::Conflict(_) | Error::State { .. } => StatusCode::CONFLICT,
        Error::Authorization(_) => StatusCode::FORBIDDEN,
        Error::GatewayUnavailable(_) => StatusCode::SERVICE_UNAVAILABLE,
        Error::Provider { .. } => StatusCode::BAD_GATEWAY,
        Error::Storage(_) | Error::CorruptLog(_) => StatusCode::INTERNAL_SERVER_ERROR,
    }
}

impl From<Error> for ApiError {
    fn from(err: Error) -> Self {
        let pending_phase = match &err {
            Error::State { pending, .. } => *pending,
            _ => None,
        };
        ApiError {
            status: status_for(&err),
            code: err.code(),
            message: err.to_string(),
            pending_phase,
        }
    }
}

impl ApiError {
    fn internal(message: impl Into<String>) -> Self {
        ApiError {
            status: StatusCode::INTERNAL_SERVER_ERROR,
            code: "internal",
            message: message.into(),
            pending_phase: None,
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        if self.status.is_server_error() {
            tracing::error!(code = self.code, message = %self.message, "request failed");
        }
        let mut body = json!({"error": self.code, "message": self.message});
        if let Some(p) = self.pending_phase {
            body["pending_phase"] = json!(p);
        }
        (self.status, Json(body)).into_response()
    }
}

/// JSON body whose parse errors use the service error format.
pub struct Body<T>(pub T);

impl<S: Send + Sync, T: DeserializeOwned> FromRequest<S> for Body<T> {
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, Self::Rejection> {
        match Json::<T>::from_request(req, state).await {
            Ok(Json(v)) => Ok(Body(v)),
            Err(rejection) => Err(Error::validation(body_error(&rejection)).into()),
        }
    }
}

fn body_error(rejection: &JsonRejection) -> String {
    format!("request body: {}", rejection.body_text())
}

type ApiResult<T> = Result<Json<T>, ApiError>;

/// Runs a mutation under the write lock on the blocking pool. Holding the
/// write guard serializes every command against the single event log.
async fn write<T, F>(state: &AppState, f: F) -> ApiResult<T>
where
    F: FnOnce(&mut Mediator) -> mediator_core::Result<T> + Send + 'static,
    T: Send + 'static,
{
    let shared = state.mediator.clone();
    let out = tokio::task::spawn_blocking(move || {
        let mut guard = shared.write().unwrap_or_else(PoisonError::into_inner);
        f(&mut guard)
    })
    .await
    .map_err(|e| ApiError::internal(format!("command aborted: {e}")))?;
    Ok(Json(out?))
}

async fn read<T, F>(state: &AppState, f: F) -> ApiResult<T>
where
    F: FnOnce(&Mediator) -> mediator_core::Result<T> + Send + 'static,
    T: Send + 'static,
{
    let shared = state.mediator.clone();
    let out = tokio::task::spawn_blocking(move || {
        let guard = shared.read().unwrap_or_else(PoisonError::into_inner);
        f(&guard)
    })
    .await
    .map_err(|e| ApiError::internal(format!("query aborted: {e}")))?;
    Ok(Json(out?))
}

pub fn router(state: AppState) -> Router {
    let protected = Router::new()
        .route("/teams", post(create_team))
        .route("/teams/{id}", get(get_team))
        .route("/teams/{id}/meetings", post(schedule_meeting))
        .route("/meetings/{id}", get(get_meeting))
        .route("/meetings/{id}/open", post(open_meeting))
        .route("/meetings/{id}/close", post(close_meeting))
        .route("/meetings/{id}/acknowledge", post(acknowledge))
        .route("/meetings/{id}/stats", get(meeting_stats))
        .route("/meetings/{id}/events", get(meeting_events))
        .route("/phases", get(get_phase))
        .route("/phases/advance", post(advance_phase))
        .route("/conversations", post(start_conversation))
        .route("/conversations/{id}", get(get_conversation))
        .route("/conversations/{id}/messages", post(post_message))
        .route("/conversations/{id}/transcript", get(get_transcript))
        .route("/drafts/{id}/approve", post(approve_draft))
        .route("/drafts/{id}/discard", post(discard_draft))
        .route("/goals/{id}/adopt", post(adopt_goal))
        .route("/reflections/{id}/approve", post(approve_reflection))
        .route("/users/{id}", get(get_user))
        .route("/users/{id}/outgoing", get(outgoing))
        .route("/users/{id}/inbox", get(inbox))
        .route("/users/{id}/goals", get(goal_panel))
        .route("/questionnaires", post(questionnaire))
        .route_layer(middleware::from_fn_with_state(state.clone(), require_token));
    Router::new()
        .route("/health", get(health))
        .merge(protected)
        .with_state(state)
}

fn token_matches(given: &[u8], expected: &[u8]) -> bool {
    given.len() == expected.len() && given.iter().zip(expected).fold(0u8, |acc, (a, b)| acc | (a ^ b)) == 0
}

/// Browsers cannot set headers on a WebSocket handshake, so upgrade
/// requests may carry the token as `?access_token=` instead.
fn query_token<'a>(headers: &HeaderMap, query: Option<&'a str>) -> Option<&'a str> {
    let upgrade = headers
        .get(header::UPGRADE)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.eq_ignore_ascii_case("websocket"));
    if !upgrade {
        return None;
    }
    query?.split('&').find_map(|kv| kv.strip_prefix("access_token="))
}

async fn require_token(State(state): State<AppState>, headers: HeaderMap, req: Request, next: Next) -> Response {
    let given = headers
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "))
        .or_else(|| query_token(&headers, req.uri().query()));
    match given {
        Some(t) if token_matches(t.as_bytes(), state.auth_token.as_bytes()) => next.run(req).await,
        _ => {
            let body = json!({"error": "unauthenticated", "message": "missing or invalid bearer token"});
            (StatusCode::UNAUTHORIZED, [(header::WWW_AUTHENTICATE, "Bearer")], Json(body)).into_response()
        }
    }
}

async fn health(State(state): State<AppState>) -> Json<Value> {
    let seq = state.mediator.try_read().map(|m| Some(m.state().seq)).unwrap_or(None);
    Json(json!({"status": "ok", "seq": seq}))
}

// ---- orchestrator ----

#[derive(Deserialize)]
struct CreateTeam {
    name: String,
    members: Vec<String>,
}

async fn create_team(State(s): State<AppState>, Body(body): Body<CreateTeam>) -> Result<(StatusCode, Json<Value>), ApiError> {
    let Json(v) = write(&s, move |m| {
        let team = m.create_team(&body.name, &body.members)?;
        let users: Vec<_> = team.member_ids.iter().map(|u| m.user(u).cloned()).collect::<Result<_, _>>()?;
        Ok(json!({"team": team, "users": users}))
    })
    .await?;
    Ok((StatusCode::CREATED, Json(v)))
}

async fn get_team(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<Value> {
    read(&s, move |m| {
        let team = m.team(&TeamId::from(id))?;
        let users: Vec<_> = team.member_ids.iter().map(|u| m.user(u).cloned()).collect::<Result<_, _>>()?;
        let meetings: Vec<_> = m.state().team_meetings(&team.team_id).map(|x| x.meeting_id.clone()).collect();
        Ok(json!({"team": team, "users": users, "meetings": meetings}))
    })
    .await
}

#[derive(Deserialize)]
struct ScheduleMeeting {
    condition: Condition,
    cycle_index: u32,
}

async fn schedule_meeting(
    State(s): State<AppState>,
    Path(id): Path<String>,
    Body(body): Body<ScheduleMeeting>,
) -> Result<(StatusCode, Json<mediator_core::Meeting>), ApiError> {
    let out = write(&s, move |m| m.schedule_meeting(&TeamId::from(id), body.condition, body.cycle_index)).await?;
    Ok((StatusCode::CREATED, out))
}

async fn get_meeting(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<Value> {
    read(&s, move |m| {
        let meeting = m.meeting(&MeetingId::from(id))?;
        let mut v = json!({"meeting": meeting});
        if meeting.condition == Condition::Control {
            v["control_message"] = json!(m.control_message());
        }
        Ok(v)
    })
    .await
}

#[derive(Deserialize)]
struct At {
    #[serde(default)]
    at_ms: Option<i64>,
}

/// The body is optional for open and close; an empty one means "now".
fn optional_at(body: &[u8]) -> Result<Option<i64>, ApiError> {
    if body.iter().all(u8::is_ascii_whitespace) {
        return Ok(None);
    }
    serde_json::from_slice::<At>(body)
        .map(|a| a.at_ms)
        .map_err(|e| Error::validation(format!("request body: {e}")).into())
}

async fn open_meeting(State(s): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult<mediator_core::Meeting> {
    let at = optional_at(&body)?;
    write(&s, move |m| m.open_meeting(&MeetingId::from(id), at)).await
}

async fn close_meeting(State(s): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult<mediator_core::Meeting> {
    let at = optional_at(&body)?;
    write(&s, move |m| m.close_meeting(&MeetingId::from(id), at)).await
}

#[derive(Deserialize)]
struct UserRef {
    user_id: UserId,
}

async fn acknowledge(
    State(s): State<AppState>,
    Path(id): Path<String>,
    Body(body): Body<UserRef>,
) -> ApiResult<mediator_core::PhaseState> {
    write(&s, move |m| m.acknowledge_control(&body.user_id, &MeetingId::from(id))).await
}

#[derive(Deserialize)]
struct Advance {
    user_id: UserId,
    meeting_id: MeetingId,
    #[serde(default)]
    phase: Option<Phase>,
}

async fn advance_phase(State(s): State<AppState>, Body(body): Body<Advance>) -> ApiResult<mediator_core::PhaseState> {
    write(&s, move |m| m.advance_phase(&body.user_id, &body.meeting_id, body.phase)).await
}

#[derive(Deserialize)]
struct PhaseQuery {
    user_id: UserId,
    meeting_id: MeetingId,
}

async fn get_phase(State(s): State<AppState>, Query(q): Query<PhaseQuery>) -> ApiResult<Value> {
    read(&s, move |m| {
        m.user(&q.user_id)?;
        m.meeting(&q.meeting_id)?;
        Ok(json!({"phase": m.phase_state(&q.user_id, &q.meeting_id)}))
    })
    .await
}

// ---- capture ----

async fn meeting_stats(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<mediator_core::MeetingStats> {
    read(&s, move |m| m.finalize_meeting_stats(&MeetingId::from(id))).await
}

#[derive(Debug, Deserialize)]
pub struct Frame {
    pub user_id: UserId,
    pub kind: VoiceEventKind,
    pub ts_ms: u64,
}

async fn meeting_events(
    State(s): State<AppState>,
    Path(id): Path<String>,
    ws: WebSocketUpgrade,
) -> Result<Response, ApiError> {
    let meeting_id = MeetingId::from(id);
    let probe = meeting_id.clone();
    let _ = read(&s, move |m| m.meeting(&probe).map(|_| ())).await?;
    Ok(ws.on_upgrade(move |socket| ingest_socket(s, meeting_id, socket)))
}

async fn ingest_socket(state: AppState, meeting_id: MeetingId, mut socket: WebSocket) {
    while let Some(msg) = socket.recv().await {
        let text = match msg {
            Ok(Message::Text(t)) => t,
            Ok(Message::Close(_)) | Err(_) => break,
            Ok(Message::Binary(_)) => {
                if reply(&mut socket, json!({"ok": false, "error": "validation"})).await.is_err() {
                    break;
                }
                continue;
            }
            Ok(_) => continue,
        };
        let answer = match serde_json::from_str::<Frame>(text.as_str()) {
            Err(e) => {
                tracing::debug!(error = %e, "malformed capture frame");
                json!({"ok": false, "error": "validation"})
            }
            Ok(frame) => {
                let ev = VoiceActivityEvent {
                    meeting_id: meeting_id.clone(),
                    user_id: frame.user_id,
                    kind: frame.kind,
                    ts_ms: frame.ts_ms,
                };
                match write(&state, move |m| m.ingest_event(&ev)).await {
                    Ok(_) => json!({"ok": true}),
                    Err(e) => json!({"ok": false, "error": e.code}),
                }
            }
        };
        if reply(&mut socket, answer).await.is_err() {
            break;
        }
    }
}

async fn reply(socket: &mut WebSocket, v: Value) -> Result<(), axum::Error> {
    socket.send(Message::Text(v.to_string().into())).await
}

// ---- conversations ----

#[derive(Deserialize)]
struct StartConversation {
    kind: ConversationKind,
    user_id: UserId,
    meeting_id: MeetingId,
}

async fn start_conversation(
    State(s): State<AppState>,
    Body(body): Body<StartConversation>,
) -> Result<(StatusCode, Json<mediator_core::ConversationSession>), ApiError> {
    let out = write(&s, move |m| match body.kind {
        ConversationKind::Solicitation => m.start_solicitation(&body.user_id, &body.meeting_id),
        ConversationKind::Ihp => m.start_ihp(&body.user_id, &body.meeting_id),
    })
    .await?;
    Ok((StatusCode::CREATED, out))
}

async fn get_conversation(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<mediator_core::ConversationSession> {
    read(&s, move |m| m.session(&SessionId::from(id)).cloned()).await
}

#[derive(Deserialize)]
struct UserMessage {
    text: String,
}

async fn post_message(
    State(s): State<AppState>,
    Path(id): Path<String>,
    Body(body): Body<UserMessage>,
) -> ApiResult<mediator_core::MessageOutcome> {
    write(&s, move |m| m.handle_user_message(&SessionId::from(id), &body.text)).await
}

async fn get_transcript(State(s): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let Json(text) = read(&s, move |m| m.session(&SessionId::from(id)).map(|x| x.transcript_jsonl())).await?;
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], text).into_response())
}

async fn approve_draft(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<mediator_core::FeedbackRecord> {
    write(&s, move |m| m.approve_feedback(&DraftId::from(id))).await
}

async fn discard_draft(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<mediator_core::DraftFeedback> {
    write(&s, move |m| m.discard_feedback(&DraftId::from(id))).await
}

async fn adopt_goal(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<mediator_core::Goal> {
    write(&s, move |m| m.adopt_goal(&GoalId::from(id))).await
}

async fn approve_reflection(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<mediator_core::Reflection> {
    write(&s, move |m| m.approve_reflection(&ReflectionId::from(id))).await
}

// ---- users ----

#[derive(Deserialize)]
struct MeetingQuery {
    meeting: MeetingId,
}

async fn get_user(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<mediator_core::User> {
    read(&s, move |m| m.user(&UserId::from(id)).cloned()).await
}

async fn outgoing(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<Value> {
    read(&s, move |m| Ok(json!({"items": m.outgoing(&UserId::from(id))?}))).await
}

async fn inbox(
    State(s): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<MeetingQuery>,
) -> ApiResult<mediator_core::DeliveryBundle> {
    read(&s, move |m| m.inbox(&UserId::from(id), &q.meeting)).await
}

async fn goal_panel(State(s): State<AppState>, Path(id): Path<String>, Query(q): Query<MeetingQuery>) -> ApiResult<Value> {
    read(&s, move |m| Ok(json!({"goals": m.goal_panel(&UserId::from(id), &q.meeting)?}))).await
}

async fn questionnaire(
    State(s): State<AppState>,
    Body(body): Body<QuestionnaireResponse>,
) -> Result<(StatusCode, Json<QuestionnaireResponse>), ApiError> {
    let out = write(&s, move |m| m.record_questionnaire(body)).await?;
    Ok((StatusCode::CREATED, out))
}

