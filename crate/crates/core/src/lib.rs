//! Normalized storage and analysis of MOOC behavioral logs.
//!
//! Raw click-stream, submission, forum and survey events are converted into a
//! relational schema organised by interaction mode, checked against its
//! invariants, exported as privacy-graded partitions, and queried through
//! time / cohort / space cuts.

pub mod analytics;
pub mod config;
pub mod export;
pub mod ingest;
pub mod privacy;
pub mod schema;
pub mod synthgen;
pub mod time;

pub use schema::{CourseStore, Table};
pub use time::{Duration, Timestamp};
