//! IO, file formats, pipeline orchestration and reporting around
//! `nudgenet-core`. The `nudgenet` binary is a thin layer over this crate.

pub mod config;
pub mod error;
pub mod formats;
pub mod hash;
pub mod pipeline;
pub mod report;

pub use error::{AppError, Result};
