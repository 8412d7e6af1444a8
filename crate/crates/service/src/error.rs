use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde_json::json;

use flexgrid_core::doms::{DomsError, SCHEMA};

/// Error body: `{schema, error: {code, message, ids}}`.
#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
    pub ids: Vec<String>,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        ApiError { status, code, message: message.into(), ids: Vec::new() }
    }

    pub fn with_ids(mut self, ids: impl IntoIterator<Item = impl ToString>) -> Self {
        self.ids = ids.into_iter().map(|i| i.to_string()).collect();
        self
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }

    pub fn internal(message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({
            "schema": SCHEMA,
            "error": { "code": self.code, "message": self.message, "ids": self.ids },
        });
        (self.status, Json(body)).into_response()
    }
}

impl From<DomsError> for ApiError {
    fn from(e: DomsError) -> Self {
        let message = e.to_string();
        match e {
            DomsError::MissingForecasts(ids) => {
                ApiError::new(StatusCode::CONFLICT, "missing_forecasts", message).with_ids(ids)
            }
            DomsError::NotControllable(s) => {
                ApiError::new(StatusCode::BAD_REQUEST, "not_controllable", message).with_ids([s])
            }
            DomsError::StepOutOfRange { series, .. } => {
                ApiError::new(StatusCode::BAD_REQUEST, "step_out_of_range", message).with_ids([series])
            }
            DomsError::InvalidDelta { series, .. } => {
                ApiError::new(StatusCode::BAD_REQUEST, "invalid_delta", message).with_ids([series])
            }
            DomsError::Store(_) => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "store_error", message),
            DomsError::Grid(_) | DomsError::Flex(_) | DomsError::Graph(_) => {
                ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "inference_failed", message)
            }
        }
    }
}
