//! Statistics over time, cohort and space cuts, and the video/homework study.

pub mod cohort;
pub mod correlation;
pub mod stat;

use std::collections::HashMap;

pub use cohort::{select_cohort, CohortError, CohortPredicate};
pub use correlation::{
    pearson, video_homework_correlation, CorrelationError, CorrelationResult, Pearson, StudentPair, UndefinedReason,
};
pub use stat::{
    compute_statistic, Aggregation, Catalog, CutSpec, SpaceSpec, StatResult, StatValue, StatisticDef, Target,
    Window,
};

use crate::schema::{CourseStore, Id, Table};

/// A computation needs a table the caller's store or partition does not carry.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("`{what}` needs table `{table}`, which is not available at this access level")]
pub struct CapabilityError {
    pub what: String,
    pub table: Table,
}

impl CapabilityError {
    pub fn new(what: &str, table: Table) -> Self {
        CapabilityError {
            what: what.to_string(),
            table,
        }
    }
}

/// Highest assessment grade per submission id.
pub fn max_grades(store: &CourseStore) -> HashMap<Id, f64> {
    let mut best: HashMap<Id, f64> = HashMap::new();
    for a in &store.assessments {
        let e = best.entry(a.submission_id).or_insert(a.assessment_grade);
        if a.assessment_grade > *e {
            *e = a.assessment_grade;
        }
    }
    best
}
