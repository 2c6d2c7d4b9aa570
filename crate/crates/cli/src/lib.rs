//! Orchestration layer: configuration, cached staged execution, and export
//! of plot-ready data files.

pub mod config;
pub mod export;
pub mod formats;
pub mod pipeline;
