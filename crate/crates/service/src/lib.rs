//! HTTP API over a running installation.
//!
//! The router is built around a shared [`flexgrid_sim::Runtime`]; blocking
//! work (inference, clock advances, ingestion) runs on the blocking pool.

mod api;
mod error;

pub use api::{router, AppState};
pub use error::ApiError;
