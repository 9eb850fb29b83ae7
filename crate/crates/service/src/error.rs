use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::Serialize;
use vlab_core::session::SessionError;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ApiError {
    #[serde(skip)]
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub details: Vec<serde_json::Value>,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            code,
            message: message.into(),
            details: Vec::new(),
        }
    }

    pub fn unknown_session(id: &str) -> Self {
        ApiError::new(StatusCode::NOT_FOUND, "unknown_session", format!("no session \"{id}\""))
    }

    pub fn unknown_pack(id: &str) -> Self {
        ApiError::new(StatusCode::NOT_FOUND, "unknown_pack", format!("no pack \"{id}\""))
    }

    pub fn invalid_body(message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_body", message)
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        let (status, code) = match &e {
            SessionError::UnknownProcedure(_) => (StatusCode::NOT_FOUND, "unknown_procedure"),
            SessionError::ModeArgMismatch(_) => (StatusCode::UNPROCESSABLE_ENTITY, "mode_arg_mismatch"),
            SessionError::WrongMode(_) => (StatusCode::CONFLICT, "wrong_mode"),
            SessionError::SessionFinished => (StatusCode::CONFLICT, "session_finished"),
            SessionError::Engine(_) => (StatusCode::UNPROCESSABLE_ENTITY, "invalid_scene"),
            SessionError::Replay(_) => (StatusCode::INTERNAL_SERVER_ERROR, "inconsistent_log"),
        };
        ApiError::new(status, code, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(&self)).into_response()
    }
}
