//! Course structure document: the authoritative list of resources, problem
//! modules, surveys and enrolled users for one course.
//!
//! ```json
//! {
//!   "course_id": "MITx/6.002x/2013_Spring",
//!   "resources": [{"uri": "i4x://c/video/w1v1", "name": "Week 1 video 1",
//!                  "type": "video", "parent": null, "child_number": null,
//!                  "urls": ["https://courses.example.org/c/courseware/w1/v1"]}],
//!   "problems": [{"name": "hw1", "type": "homework", "release": "2013-03-04",
//!                 "soft_deadline": "2013-03-10T23:00:00Z", "max_submissions": 3,
//!                 "children": [{"name": "hw1/p1"}]}],
//!   "surveys": [{"handle": "exit", "start": "...", "end": "...",
//!                "questions": [{"handle": "q1", "content": "...", "type": "rating",
//!                               "reference": null}]}],
//!   "roster": [{"user": "u0001", "user_type": "student", "final_grade": 0.8,
//!               "certified": true, "country": "US"}]
//! }
//! ```

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::schema::ResourceKind;
use crate::time::Timestamp;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResourceSpec {
    pub uri: String,
    pub name: String,
    #[serde(rename = "type")]
    pub kind: String,
    #[serde(default)]
    pub parent: Option<String>,
    #[serde(default)]
    pub child_number: Option<u32>,
    #[serde(default)]
    pub urls: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    /// Handle used by raw events; unique within the course.
    pub name: String,
    #[serde(rename = "type", default = "default_problem_type")]
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub order: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub release: Option<Timestamp>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub soft_deadline: Option<Timestamp>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hard_deadline: Option<Timestamp>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_submissions: Option<u32>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub children: Vec<ProblemSpec>,
}

fn default_problem_type() -> String {
    "homework".to_string()
}

impl ProblemSpec {
    pub fn walk<'a>(&'a self, out: &mut Vec<&'a ProblemSpec>) {
        out.push(self);
        for c in &self.children {
            c.walk(out);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionSpec {
    pub handle: String,
    pub content: String,
    #[serde(rename = "type", default)]
    pub kind: String,
    #[serde(default)]
    pub reference: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurveySpec {
    pub handle: String,
    pub start: Timestamp,
    pub end: Timestamp,
    #[serde(default)]
    pub questions: Vec<QuestionSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RosterEntry {
    pub user: String,
    #[serde(default = "default_user_type")]
    pub user_type: String,
    #[serde(default)]
    pub final_grade: f64,
    #[serde(default)]
    pub certified: bool,
    #[serde(default)]
    pub country: String,
}

fn default_user_type() -> String {
    "student".to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CourseStructure {
    pub course_id: String,
    #[serde(default)]
    pub resources: Vec<ResourceSpec>,
    #[serde(default)]
    pub problems: Vec<ProblemSpec>,
    #[serde(default)]
    pub surveys: Vec<SurveySpec>,
    #[serde(default)]
    pub roster: Vec<RosterEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum StructureError {
    #[error("resource uri `{0}` declared twice")]
    DuplicateUri(String),
    #[error("resource `{uri}` has type `{kind}`, which maps to no known resource type")]
    UnknownResourceType { uri: String, kind: String },
    #[error("resource `{uri}` names missing parent `{parent}`")]
    MissingParent { uri: String, parent: String },
    #[error("problem name `{0}` is not unique")]
    DuplicateProblem(String),
    #[error("question handle `{0}` is not unique")]
    DuplicateQuestion(String),
    #[error("question `{question}` references unknown resource `{uri}`")]
    UnknownQuestionReference { question: String, uri: String },
    #[error("roster entry `{0}` has a final grade outside [0,1]")]
    RosterGrade(String),
    #[error("roster lists `{0}` twice")]
    DuplicateRoster(String),
}

impl CourseStructure {
    pub fn empty(course_id: impl Into<String>) -> Self {
        CourseStructure {
            course_id: course_id.into(),
            resources: Vec::new(),
            problems: Vec::new(),
            surveys: Vec::new(),
            roster: Vec::new(),
        }
    }

    /// Checks internal consistency; `resolve_kind` maps raw type names.
    pub fn validate(
        &self,
        resolve_kind: impl Fn(&str) -> Option<ResourceKind>,
    ) -> Result<(), StructureError> {
        let mut uris = HashSet::new();
        for r in &self.resources {
            if !uris.insert(r.uri.as_str()) {
                return Err(StructureError::DuplicateUri(r.uri.clone()));
            }
            if resolve_kind(&r.kind).is_none() {
                return Err(StructureError::UnknownResourceType {
                    uri: r.uri.clone(),
                    kind: r.kind.clone(),
                });
            }
        }
        for r in &self.resources {
            if let Some(p) = &r.parent {
                if !uris.contains(p.as_str()) {
                    return Err(StructureError::MissingParent {
                        uri: r.uri.clone(),
                        parent: p.clone(),
                    });
                }
            }
        }
        let mut names = HashSet::new();
        for root in &self.problems {
            let mut all = Vec::new();
            root.walk(&mut all);
            for p in all {
                if !names.insert(p.name.as_str()) {
                    return Err(StructureError::DuplicateProblem(p.name.clone()));
                }
            }
        }
        let mut handles = HashSet::new();
        for s in &self.surveys {
            for q in &s.questions {
                if !handles.insert(q.handle.as_str()) {
                    return Err(StructureError::DuplicateQuestion(q.handle.clone()));
                }
                if let Some(uri) = &q.reference {
                    if !uris.contains(uri.as_str()) {
                        return Err(StructureError::UnknownQuestionReference {
                            question: q.handle.clone(),
                            uri: uri.clone(),
                        });
                    }
                }
            }
        }
        let mut seen = HashSet::new();
        for e in &self.roster {
            if !(0.0..=1.0).contains(&e.final_grade) {
                return Err(StructureError::RosterGrade(e.user.clone()));
            }
            if !seen.insert(e.user.as_str()) {
                return Err(StructureError::DuplicateRoster(e.user.clone()));
            }
        }
        Ok(())
    }

    pub fn roster_map(&self) -> BTreeMap<&str, &RosterEntry> {
        self.roster.iter().map(|e| (e.user.as_str(), e)).collect()
    }
}
