//! HTTP service and command-line front end for concept modeling sessions.

pub mod api;
pub mod cli;
mod error;
pub mod timing;

pub use error::{ApiError, ErrorCode};
