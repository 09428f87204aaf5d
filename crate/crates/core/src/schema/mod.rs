//! The normalized course schema: one row type per table, grouped into the
//! four interaction modes (observing, submitting, collaborating, feedback)
//! plus the course-level identity tables.

mod io;
pub mod tree;
pub mod validate;

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use io::{columns, table_csv, StoreError, META_FILE};
pub(crate) use io::{read_table, write_file};
pub use tree::{
    number_problem_tree, reconstruct_problem_tree, reconstruct_thread, ProblemNode, ProblemTree,
    ThreadNode, TreeError,
};
pub use validate::{validate_store, ValidationReport, Violation, ViolationKind};

use crate::time::{Duration, Timestamp};

/// Dense per-table row key.
pub type Id = u64;

pub const SCHEMA_VERSION: &str = "moocdb-1.0";

/// Grader id reserved for automated assessment.
pub const AUTOMATED_GRADER: Id = 0;

/// Closed set of resource categories.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResourceKind {
    Book,
    Wiki,
    Forums,
    Exercises,
    Video,
    Problems,
    Tutorials,
    Lecture,
}

impl ResourceKind {
    pub const ALL: [ResourceKind; 8] = [
        ResourceKind::Book,
        ResourceKind::Wiki,
        ResourceKind::Forums,
        ResourceKind::Exercises,
        ResourceKind::Video,
        ResourceKind::Problems,
        ResourceKind::Tutorials,
        ResourceKind::Lecture,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ResourceKind::Book => "book",
            ResourceKind::Wiki => "wiki",
            ResourceKind::Forums => "forums",
            ResourceKind::Exercises => "exercises",
            ResourceKind::Video => "video",
            ResourceKind::Problems => "problems",
            ResourceKind::Tutorials => "tutorials",
            ResourceKind::Lecture => "lecture",
        }
    }

    /// Fixed dictionary id (1-based position in [`ResourceKind::ALL`]).
    pub fn type_id(self) -> Id {
        ResourceKind::ALL.iter().position(|k| *k == self).unwrap() as Id + 1
    }
}

impl fmt::Display for ResourceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ResourceKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ResourceKind::ALL
            .iter()
            .copied()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown resource type `{s}`"))
    }
}

/// Fixed collaboration type dictionary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum CollaborationKind {
    ForumQuestion,
    ForumReply,
    ForumVote,
    WikiEdit,
    WikiDeletion,
}

impl CollaborationKind {
    pub const ALL: [CollaborationKind; 5] = [
        CollaborationKind::ForumQuestion,
        CollaborationKind::ForumReply,
        CollaborationKind::ForumVote,
        CollaborationKind::WikiEdit,
        CollaborationKind::WikiDeletion,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CollaborationKind::ForumQuestion => "forum question",
            CollaborationKind::ForumReply => "forum reply",
            CollaborationKind::ForumVote => "forum vote",
            CollaborationKind::WikiEdit => "wiki edit",
            CollaborationKind::WikiDeletion => "wiki deletion",
        }
    }

    pub fn type_id(self) -> Id {
        CollaborationKind::ALL.iter().position(|k| *k == self).unwrap() as Id + 1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResourceType {
    pub resource_type_id: Id,
    pub resource_type_name: ResourceKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Resource {
    pub resource_id: Id,
    pub resource_name: String,
    pub resource_uri: String,
    pub resource_type_id: Id,
    pub resource_parent: Option<Id>,
    pub resource_child_number: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Url {
    pub url_id: Id,
    pub url: String,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ResourceUrl {
    pub resource_id: Id,
    pub url_id: Id,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservedEvent {
    pub observed_event_id: Id,
    pub user_id_observed: Id,
    pub resource_id: Id,
    pub url_id: Id,
    pub observed_event_timestamp: Timestamp,
    pub observed_event_duration: Duration,
    pub observed_event_ip: String,
    pub observed_event_os: String,
    pub observed_event_agent: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemType {
    pub problem_type_id: Id,
    pub problem_type_name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Problem {
    pub problem_id: Id,
    pub problem_parent_id: Option<Id>,
    pub order_id: Option<u32>,
    pub problem_name: String,
    pub problem_type_id: Id,
    pub problem_release_timestamp: Option<Timestamp>,
    pub problem_soft_deadline_timestamp: Option<Timestamp>,
    pub problem_hard_deadline_timestamp: Option<Timestamp>,
    pub problem_max_submission: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Submission {
    pub submission_id: Id,
    pub user_id: Id,
    pub problem_id: Id,
    pub submission_timestamp: Timestamp,
    pub submission_answer: String,
    pub submission_attempt_number: u32,
    pub submission_ip: String,
    pub submission_os: String,
    pub submission_agent: String,
    pub is_submitted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assessment {
    pub assessment_id: Id,
    pub submission_id: Id,
    pub assessment_grader_id: Id,
    pub assessment_grade: f64,
    pub assessment_feedback: String,
    pub assessment_timestamp: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollaborationType {
    pub collaboration_type_id: Id,
    pub collaboration_type_name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Collaboration {
    pub collaboration_id: Id,
    pub user_id: Id,
    pub collaboration_type_id: Id,
    pub collaboration_parent_id: Option<Id>,
    pub collaboration_timestamp: Timestamp,
    pub collaboration_content: String,
    pub collaboration_ip: String,
    pub collaboration_os: String,
    pub collaboration_agent: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Feedback {
    pub feedback_id: Id,
    pub user_id: Id,
    pub question_id: Id,
    pub answer_id: Id,
    pub feedback_timestamp: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Question {
    pub question_id: Id,
    pub question_content: String,
    pub question_type: String,
    pub question_reference: Option<Id>,
    pub survey_id: Option<Id>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Answer {
    pub answer_id: Id,
    pub answer_content: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Survey {
    pub survey_id: Id,
    pub survey_start_timestamp: Timestamp,
    pub survey_end_timestamp: Timestamp,
}

/// Course-level user row: links one course user id to its four mode-scoped ids.
///
/// `country` is the coarse location used for the space axis of statistics;
/// it is a course attribute, not the demographic record kept in the PII table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CourseUser {
    pub course_user_id: Id,
    pub final_grade: f64,
    pub user_type: String,
    pub certified: bool,
    pub country: String,
    pub observed_id: Id,
    pub submissions_id: Id,
    pub collaborations_id: Id,
    pub feedback_id: Id,
}

/// Maps a global user id to one course user id.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GlobalUser {
    pub global_user_id: Id,
    pub course_id: String,
    pub course_user_id: Id,
}

/// Interaction mode a table belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Observing,
    Submitting,
    Collaborating,
    Feedback,
    Identity,
}

/// Every table a store or partition can hold. The PII table is deliberately absent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Table {
    ResourceTypes,
    Resources,
    Urls,
    ResourceUrls,
    ObservedEvents,
    ProblemTypes,
    Problems,
    Submissions,
    Assessments,
    CollaborationTypes,
    Collaborations,
    Feedbacks,
    Questions,
    Answers,
    Surveys,
    CourseUser,
    GlobalUser,
}

/// Names that identify the demographic table; every lookup of these is refused.
pub const PII_TABLE_NAMES: [&str; 3] = ["user_pii", "user_pii_table", "pii"];

impl Table {
    pub const ALL: [Table; 17] = [
        Table::ResourceTypes,
        Table::Resources,
        Table::Urls,
        Table::ResourceUrls,
        Table::ObservedEvents,
        Table::ProblemTypes,
        Table::Problems,
        Table::Submissions,
        Table::Assessments,
        Table::CollaborationTypes,
        Table::Collaborations,
        Table::Feedbacks,
        Table::Questions,
        Table::Answers,
        Table::Surveys,
        Table::CourseUser,
        Table::GlobalUser,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Table::ResourceTypes => "resource_types",
            Table::Resources => "resources",
            Table::Urls => "urls",
            Table::ResourceUrls => "resource_urls",
            Table::ObservedEvents => "observed_events",
            Table::ProblemTypes => "problem_types",
            Table::Problems => "problems",
            Table::Submissions => "submissions",
            Table::Assessments => "assessments",
            Table::CollaborationTypes => "collaboration_types",
            Table::Collaborations => "collaborations",
            Table::Feedbacks => "feedbacks",
            Table::Questions => "questions",
            Table::Answers => "answers",
            Table::Surveys => "surveys",
            Table::CourseUser => "course_user",
            Table::GlobalUser => "global_user",
        }
    }

    pub fn mode(self) -> Mode {
        match self {
            Table::ResourceTypes
            | Table::Resources
            | Table::Urls
            | Table::ResourceUrls
            | Table::ObservedEvents => Mode::Observing,
            Table::ProblemTypes | Table::Problems | Table::Submissions | Table::Assessments => {
                Mode::Submitting
            }
            Table::CollaborationTypes | Table::Collaborations => Mode::Collaborating,
            Table::Feedbacks | Table::Questions | Table::Answers | Table::Surveys => Mode::Feedback,
            Table::CourseUser | Table::GlobalUser => Mode::Identity,
        }
    }

    /// Columns of this table that hold a user key.
    pub fn user_columns(self) -> &'static [&'static str] {
        match self {
            Table::ObservedEvents => &["user_id_observed"],
            Table::Submissions | Table::Collaborations | Table::Feedbacks => &["user_id"],
            Table::Assessments => &["assessment_grader_id"],
            _ => &[],
        }
    }

    pub fn file_name(self) -> String {
        format!("{}.csv", self.name())
    }
}

impl fmt::Display for Table {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TableNameError {
    #[error("the user PII table is never exported or queried")]
    PiiRefused,
    #[error("unknown table `{0}`")]
    Unknown(String),
}

impl FromStr for Table {
    type Err = TableNameError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if PII_TABLE_NAMES.contains(&s) {
            return Err(TableNameError::PiiRefused);
        }
        Table::ALL
            .iter()
            .copied()
            .find(|t| t.name() == s)
            .ok_or_else(|| TableNameError::Unknown(s.to_string()))
    }
}

/// All tables of one course plus its identity tables.
///
/// `present` records which tables this store actually carries: a full store
/// carries all of them, a partition only the subset its access level grants.
#[derive(Debug, Clone, PartialEq)]
pub struct CourseStore {
    pub course_id: String,
    pub schema_version: String,
    pub present: BTreeSet<Table>,
    pub resource_types: Vec<ResourceType>,
    pub resources: Vec<Resource>,
    pub urls: Vec<Url>,
    pub resource_urls: Vec<ResourceUrl>,
    pub observed_events: Vec<ObservedEvent>,
    pub problem_types: Vec<ProblemType>,
    pub problems: Vec<Problem>,
    pub submissions: Vec<Submission>,
    pub assessments: Vec<Assessment>,
    pub collaboration_types: Vec<CollaborationType>,
    pub collaborations: Vec<Collaboration>,
    pub feedbacks: Vec<Feedback>,
    pub questions: Vec<Question>,
    pub answers: Vec<Answer>,
    pub surveys: Vec<Survey>,
    pub course_users: Vec<CourseUser>,
    pub global_users: Vec<GlobalUser>,
}

impl CourseStore {
    /// An empty store carrying every table.
    pub fn new(course_id: impl Into<String>) -> Self {
        CourseStore {
            course_id: course_id.into(),
            schema_version: SCHEMA_VERSION.to_string(),
            present: Table::ALL.iter().copied().collect(),
            resource_types: Vec::new(),
            resources: Vec::new(),
            urls: Vec::new(),
            resource_urls: Vec::new(),
            observed_events: Vec::new(),
            problem_types: Vec::new(),
            problems: Vec::new(),
            submissions: Vec::new(),
            assessments: Vec::new(),
            collaboration_types: Vec::new(),
            collaborations: Vec::new(),
            feedbacks: Vec::new(),
            questions: Vec::new(),
            answers: Vec::new(),
            surveys: Vec::new(),
            course_users: Vec::new(),
            global_users: Vec::new(),
        }
    }

    /// Populates the two fixed dictionaries (resource and collaboration types).
    pub fn with_fixed_dictionaries(mut self) -> Self {
        self.resource_types = ResourceKind::ALL
            .iter()
            .map(|k| ResourceType {
                resource_type_id: k.type_id(),
                resource_type_name: *k,
            })
            .collect();
        self.collaboration_types = CollaborationKind::ALL
            .iter()
            .map(|k| CollaborationType {
                collaboration_type_id: k.type_id(),
                collaboration_type_name: k.name().to_string(),
            })
            .collect();
        self
    }

    pub fn has(&self, table: Table) -> bool {
        self.present.contains(&table)
    }

    pub fn row_count(&self, table: Table) -> usize {
        match table {
            Table::ResourceTypes => self.resource_types.len(),
            Table::Resources => self.resources.len(),
            Table::Urls => self.urls.len(),
            Table::ResourceUrls => self.resource_urls.len(),
            Table::ObservedEvents => self.observed_events.len(),
            Table::ProblemTypes => self.problem_types.len(),
            Table::Problems => self.problems.len(),
            Table::Submissions => self.submissions.len(),
            Table::Assessments => self.assessments.len(),
            Table::CollaborationTypes => self.collaboration_types.len(),
            Table::Collaborations => self.collaborations.len(),
            Table::Feedbacks => self.feedbacks.len(),
            Table::Questions => self.questions.len(),
            Table::Answers => self.answers.len(),
            Table::Surveys => self.surveys.len(),
            Table::CourseUser => self.course_users.len(),
            Table::GlobalUser => self.global_users.len(),
        }
    }

    /// Drops every table outside `keep`, emptying its rows.
    pub fn restrict_to(&mut self, keep: &BTreeSet<Table>) {
        for t in Table::ALL {
            if !keep.contains(&t) {
                self.clear_table(t);
                self.present.remove(&t);
            }
        }
    }

    fn clear_table(&mut self, table: Table) {
        match table {
            Table::ResourceTypes => self.resource_types.clear(),
            Table::Resources => self.resources.clear(),
            Table::Urls => self.urls.clear(),
            Table::ResourceUrls => self.resource_urls.clear(),
            Table::ObservedEvents => self.observed_events.clear(),
            Table::ProblemTypes => self.problem_types.clear(),
            Table::Problems => self.problems.clear(),
            Table::Submissions => self.submissions.clear(),
            Table::Assessments => self.assessments.clear(),
            Table::CollaborationTypes => self.collaboration_types.clear(),
            Table::Collaborations => self.collaborations.clear(),
            Table::Feedbacks => self.feedbacks.clear(),
            Table::Questions => self.questions.clear(),
            Table::Answers => self.answers.clear(),
            Table::Surveys => self.surveys.clear(),
            Table::CourseUser => self.course_users.clear(),
            Table::GlobalUser => self.global_users.clear(),
        }
    }

    /// Leaf problem ids in depth-first order: roots by id, children by `order_id`.
    pub fn leaf_problems_depth_first(&self) -> Vec<Id> {
        let mut children: std::collections::BTreeMap<Option<Id>, Vec<&Problem>> =
            std::collections::BTreeMap::new();
        for p in &self.problems {
            children.entry(p.problem_parent_id).or_default().push(p);
        }
        for v in children.values_mut() {
            v.sort_by_key(|p| (p.order_id, p.problem_id));
        }
        let mut out = Vec::new();
        let mut stack: Vec<Id> = children
            .get(&None)
            .map(|roots| {
                let mut r: Vec<Id> = roots.iter().map(|p| p.problem_id).collect();
                r.sort_unstable();
                r.into_iter().rev().collect()
            })
            .unwrap_or_default();
        let mut seen = BTreeSet::new();
        while let Some(id) = stack.pop() {
            if !seen.insert(id) {
                continue;
            }
            match children.get(&Some(id)) {
                Some(kids) if !kids.is_empty() => {
                    stack.extend(kids.iter().rev().map(|p| p.problem_id));
                }
                _ => out.push(id),
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pii_table_names_are_refused() {
        assert_eq!("user_pii".parse::<Table>(), Err(TableNameError::PiiRefused));
        assert_eq!("observed_events".parse::<Table>(), Ok(Table::ObservedEvents));
        assert!(matches!("nope".parse::<Table>(), Err(TableNameError::Unknown(_))));
    }

    #[test]
    fn fixed_dictionary_ids_are_dense() {
        let s = CourseStore::new("c").with_fixed_dictionaries();
        let ids: Vec<Id> = s.resource_types.iter().map(|r| r.resource_type_id).collect();
        assert_eq!(ids, (1..=8).collect::<Vec<_>>());
        assert_eq!(ResourceKind::Video.type_id(), 5);
        assert_eq!("video".parse::<ResourceKind>(), Ok(ResourceKind::Video));
        assert!("podcast".parse::<ResourceKind>().is_err());
    }

    #[test]
    fn depth_first_leaves() {
        let rows = number_problem_tree(
            &ProblemTree::new("hw")
                .with_children(vec![
                    ProblemTree::new("a").with_children(vec![
                        ProblemTree::new("a1"),
                        ProblemTree::new("a2"),
                    ]),
                    ProblemTree::new("b"),
                ]),
            1,
        )
        .unwrap();
        let mut store = CourseStore::new("c");
        store.problems = rows;
        let names: Vec<String> = store
            .leaf_problems_depth_first()
            .into_iter()
            .map(|id| store.problems.iter().find(|p| p.problem_id == id).unwrap().problem_name.clone())
            .collect();
        assert_eq!(names, ["a1", "a2", "b"]);
    }
}
