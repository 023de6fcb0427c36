//! File formats, file-backed training, evaluation, experiments and the
//! command line built on [`depthfuse_core`].

pub mod bench;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod eval;
pub mod experiments;
pub mod formats;
pub mod training;
