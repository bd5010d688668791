//! Turns emailed form requests into filled PDF forms.

pub mod eval;
pub mod cli;
pub mod extract;
pub mod form;
pub mod ingest;
pub mod pipeline;
pub mod plan;
pub mod reply;
pub mod util;
