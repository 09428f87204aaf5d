use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;

use serde::Serialize;

use super::tree::{forest_defects, ForestDefect};
use super::{CourseStore, Id, Table};
use crate::time::Timestamp;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    DuplicateKey,
    DanglingReference,
    DanglingParent,
    Cycle,
    DuplicateSiblingOrder,
    DuplicateUri,
    DuplicateUrl,
    DuplicateLink,
    UnlinkedResourceUrl,
    TimestampOutOfRange,
    GradeOutOfRange,
    DeadlineOrder,
    NonPositiveMaxSubmission,
    SubmissionOnInnerProblem,
    AttemptOrder,
    MaxSubmissionsExceeded,
    AssessmentBeforeSubmission,
    ReplyBeforeParent,
    SurveyWindow,
    UnresolvedUser,
    NamespaceOverlap,
}

impl ViolationKind {
    /// Parent-pointer defects: a cycle or a link to a missing parent.
    pub fn is_forest_defect(self) -> bool {
        matches!(self, ViolationKind::Cycle | ViolationKind::DanglingParent)
    }

    pub fn describe(self) -> &'static str {
        match self {
            ViolationKind::DuplicateKey => "duplicate primary key",
            ViolationKind::DanglingReference => "foreign key does not resolve",
            ViolationKind::DanglingParent => "parent does not resolve",
            ViolationKind::Cycle => "parent links form a cycle",
            ViolationKind::DuplicateSiblingOrder => "siblings share an order number",
            ViolationKind::DuplicateUri => "resource uri not unique",
            ViolationKind::DuplicateUrl => "url not unique",
            ViolationKind::DuplicateLink => "resource/url pair not unique",
            ViolationKind::UnlinkedResourceUrl => "resource/url pair missing from resource_urls",
            ViolationKind::TimestampOutOfRange => "timestamp outside [2008-01-01, 2100-01-01)",
            ViolationKind::GradeOutOfRange => "grade out of [0,1]",
            ViolationKind::DeadlineOrder => "release <= soft deadline <= hard deadline violated",
            ViolationKind::NonPositiveMaxSubmission => "max submission must be positive",
            ViolationKind::SubmissionOnInnerProblem => "submission targets a non-leaf problem",
            ViolationKind::AttemptOrder => "attempt numbers not increasing with time",
            ViolationKind::MaxSubmissionsExceeded => "more submitted attempts than allowed",
            ViolationKind::AssessmentBeforeSubmission => "assessment precedes its submission",
            ViolationKind::ReplyBeforeParent => "reply precedes its parent",
            ViolationKind::SurveyWindow => "survey ends before it starts",
            ViolationKind::UnresolvedUser => "user key absent from course_user",
            ViolationKind::NamespaceOverlap => "user id namespaces overlap",
        }
    }
}

impl fmt::Display for ViolationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.describe())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub table: Table,
    pub row_key: String,
    pub kind: ViolationKind,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}[{}]: {}", self.table, self.row_key, self.kind)?;
        if !self.detail.is_empty() {
            write!(f, " ({})", self.detail)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn count(&self, kind: ViolationKind) -> usize {
        self.violations.iter().filter(|v| v.kind == kind).count()
    }

    pub fn forest_defects(&self) -> usize {
        self.violations.iter().filter(|v| v.kind.is_forest_defect()).count()
    }
}

struct Checker {
    out: Vec<Violation>,
}

impl Checker {
    fn push(&mut self, table: Table, key: impl ToString, kind: ViolationKind, detail: impl Into<String>) {
        self.out.push(Violation {
            table,
            row_key: key.to_string(),
            kind,
            detail: detail.into(),
        });
    }

    fn keys<'a>(&mut self, table: Table, ids: impl Iterator<Item = Id>) -> HashSet<Id> {
        let mut seen = HashSet::new();
        for id in ids {
            if !seen.insert(id) {
                self.push(table, id, ViolationKind::DuplicateKey, "");
            }
        }
        seen
    }

    fn resolve(&mut self, table: Table, key: Id, column: &str, target: Id, set: &HashSet<Id>) {
        if !set.contains(&target) {
            self.push(table, key, ViolationKind::DanglingReference, format!("{column}={target}"));
        }
    }

    fn timestamp(&mut self, table: Table, key: Id, column: &str, t: Timestamp) {
        if !t.in_event_range() {
            self.push(table, key, ViolationKind::TimestampOutOfRange, format!("{column}={t}"));
        }
    }

    fn forest(&mut self, table: Table, links: &BTreeMap<Id, Option<Id>>) {
        for d in forest_defects(links) {
            match d {
                ForestDefect::Dangling { id, parent } => {
                    self.push(table, id, ViolationKind::DanglingParent, format!("parent={parent}"))
                }
                ForestDefect::Cycle(id) => self.push(table, id, ViolationKind::Cycle, ""),
            }
        }
    }

    fn sibling_orders(&mut self, table: Table, rows: impl Iterator<Item = (Id, Option<Id>, Option<u32>)>) {
        let mut seen: HashMap<(Option<Id>, u32), Id> = HashMap::new();
        for (id, parent, order) in rows {
            let Some(order) = order else { continue };
            if parent.is_none() {
                continue;
            }
            if let Some(prev) = seen.insert((parent, order), id) {
                self.push(
                    table,
                    id,
                    ViolationKind::DuplicateSiblingOrder,
                    format!("order {order} also used by {prev}"),
                );
            }
        }
    }
}

/// Checks every referential and structural invariant of the schema.
///
/// Only tables the store carries are checked; references into a table the
/// store does not carry (a partition without `course_user`) are skipped.
pub fn validate_store(store: &CourseStore) -> ValidationReport {
    let mut c = Checker { out: Vec::new() };

    // Observing mode.
    let type_ids = c.keys(Table::ResourceTypes, store.resource_types.iter().map(|r| r.resource_type_id));
    let resource_ids = c.keys(Table::Resources, store.resources.iter().map(|r| r.resource_id));
    let mut uris = HashSet::new();
    for r in &store.resources {
        if !uris.insert(r.resource_uri.as_str()) {
            c.push(Table::Resources, r.resource_id, ViolationKind::DuplicateUri, r.resource_uri.clone());
        }
        if store.has(Table::ResourceTypes) {
            c.resolve(Table::Resources, r.resource_id, "resource_type_id", r.resource_type_id, &type_ids);
        }
    }
    let links: BTreeMap<Id, Option<Id>> =
        store.resources.iter().map(|r| (r.resource_id, r.resource_parent)).collect();
    c.forest(Table::Resources, &links);
    c.sibling_orders(
        Table::Resources,
        store.resources.iter().map(|r| (r.resource_id, r.resource_parent, r.resource_child_number)),
    );

    let url_ids = c.keys(Table::Urls, store.urls.iter().map(|u| u.url_id));
    let mut url_texts = HashSet::new();
    for u in &store.urls {
        if !url_texts.insert(u.url.as_str()) {
            c.push(Table::Urls, u.url_id, ViolationKind::DuplicateUrl, u.url.clone());
        }
    }
    let mut pairs = HashSet::new();
    for l in &store.resource_urls {
        let key = format!("{}/{}", l.resource_id, l.url_id);
        if !pairs.insert((l.resource_id, l.url_id)) {
            c.push(Table::ResourceUrls, &key, ViolationKind::DuplicateLink, "");
        }
        if !resource_ids.contains(&l.resource_id) {
            c.push(Table::ResourceUrls, &key, ViolationKind::DanglingReference, "resource_id");
        }
        if !url_ids.contains(&l.url_id) {
            c.push(Table::ResourceUrls, &key, ViolationKind::DanglingReference, "url_id");
        }
    }

    let users = UserIndex::new(store);
    c.keys(Table::ObservedEvents, store.observed_events.iter().map(|e| e.observed_event_id));
    for e in &store.observed_events {
        let k = e.observed_event_id;
        if store.has(Table::Resources) {
            c.resolve(Table::ObservedEvents, k, "resource_id", e.resource_id, &resource_ids);
        }
        if store.has(Table::Urls) {
            c.resolve(Table::ObservedEvents, k, "url_id", e.url_id, &url_ids);
        }
        if store.has(Table::ResourceUrls) && !pairs.contains(&(e.resource_id, e.url_id)) {
            c.push(
                Table::ObservedEvents,
                k,
                ViolationKind::UnlinkedResourceUrl,
                format!("({}, {})", e.resource_id, e.url_id),
            );
        }
        c.timestamp(Table::ObservedEvents, k, "observed_event_timestamp", e.observed_event_timestamp);
        users.check(&mut c, Table::ObservedEvents, k, e.user_id_observed, &users.observed);
    }

    // Submitting mode.
    let ptype_ids = c.keys(Table::ProblemTypes, store.problem_types.iter().map(|p| p.problem_type_id));
    let problem_ids = c.keys(Table::Problems, store.problems.iter().map(|p| p.problem_id));
    let mut inner: HashSet<Id> = HashSet::new();
    for p in &store.problems {
        let k = p.problem_id;
        if let Some(parent) = p.problem_parent_id {
            inner.insert(parent);
        }
        if store.has(Table::ProblemTypes) {
            c.resolve(Table::Problems, k, "problem_type_id", p.problem_type_id, &ptype_ids);
        }
        let stamps = [
            ("problem_release_timestamp", p.problem_release_timestamp),
            ("problem_soft_deadline_timestamp", p.problem_soft_deadline_timestamp),
            ("problem_hard_deadline_timestamp", p.problem_hard_deadline_timestamp),
        ];
        for (col, t) in stamps {
            if let Some(t) = t {
                c.timestamp(Table::Problems, k, col, t);
            }
        }
        let ordered = |a: Option<Timestamp>, b: Option<Timestamp>| match (a, b) {
            (Some(a), Some(b)) => a <= b,
            _ => true,
        };
        if !ordered(p.problem_soft_deadline_timestamp, p.problem_hard_deadline_timestamp)
            || !ordered(p.problem_release_timestamp, p.problem_soft_deadline_timestamp)
        {
            c.push(Table::Problems, k, ViolationKind::DeadlineOrder, "");
        }
        if p.problem_max_submission == Some(0) {
            c.push(Table::Problems, k, ViolationKind::NonPositiveMaxSubmission, "");
        }
    }
    let plinks: BTreeMap<Id, Option<Id>> =
        store.problems.iter().map(|p| (p.problem_id, p.problem_parent_id)).collect();
    c.forest(Table::Problems, &plinks);
    c.sibling_orders(
        Table::Problems,
        store.problems.iter().map(|p| (p.problem_id, p.problem_parent_id, p.order_id)),
    );

    let submission_ids = c.keys(Table::Submissions, store.submissions.iter().map(|s| s.submission_id));
    let max_by_problem: HashMap<Id, u32> = store
        .problems
        .iter()
        .filter_map(|p| p.problem_max_submission.map(|m| (p.problem_id, m)))
        .collect();
    let mut per_pair: BTreeMap<(Id, Id), Vec<(Timestamp, Id, u32, bool)>> = BTreeMap::new();
    for s in &store.submissions {
        let k = s.submission_id;
        if store.has(Table::Problems) {
            c.resolve(Table::Submissions, k, "problem_id", s.problem_id, &problem_ids);
            if inner.contains(&s.problem_id) {
                c.push(Table::Submissions, k, ViolationKind::SubmissionOnInnerProblem, format!("problem_id={}", s.problem_id));
            }
        }
        c.timestamp(Table::Submissions, k, "submission_timestamp", s.submission_timestamp);
        if s.submission_attempt_number == 0 {
            c.push(Table::Submissions, k, ViolationKind::AttemptOrder, "attempt number must be positive");
        }
        users.check(&mut c, Table::Submissions, k, s.user_id, &users.submissions);
        per_pair
            .entry((s.user_id, s.problem_id))
            .or_default()
            .push((s.submission_timestamp, k, s.submission_attempt_number, s.is_submitted));
    }
    for ((user, problem), mut rows) in per_pair {
        rows.sort_by_key(|r| (r.0, r.1));
        for w in rows.windows(2) {
            if w[1].2 <= w[0].2 {
                c.push(
                    Table::Submissions,
                    w[1].1,
                    ViolationKind::AttemptOrder,
                    format!("attempt {} after attempt {}", w[1].2, w[0].2),
                );
            }
        }
        if let Some(&max) = max_by_problem.get(&problem) {
            let submitted = rows.iter().filter(|r| r.3).count();
            if submitted > max as usize {
                c.push(
                    Table::Submissions,
                    format!("user {user}/problem {problem}"),
                    ViolationKind::MaxSubmissionsExceeded,
                    format!("{submitted} > {max}"),
                );
            }
        }
    }

    let submission_time: HashMap<Id, Timestamp> = store
        .submissions
        .iter()
        .map(|s| (s.submission_id, s.submission_timestamp))
        .collect();
    c.keys(Table::Assessments, store.assessments.iter().map(|a| a.assessment_id));
    for a in &store.assessments {
        let k = a.assessment_id;
        if store.has(Table::Submissions) {
            c.resolve(Table::Assessments, k, "submission_id", a.submission_id, &submission_ids);
        }
        if !(0.0..=1.0).contains(&a.assessment_grade) {
            c.push(Table::Assessments, k, ViolationKind::GradeOutOfRange, format!("grade={}", a.assessment_grade));
        }
        c.timestamp(Table::Assessments, k, "assessment_timestamp", a.assessment_timestamp);
        if let Some(&st) = submission_time.get(&a.submission_id) {
            if a.assessment_timestamp < st {
                c.push(Table::Assessments, k, ViolationKind::AssessmentBeforeSubmission, "");
            }
        }
    }

    // Collaborating mode.
    let ctype_ids = c.keys(
        Table::CollaborationTypes,
        store.collaboration_types.iter().map(|t| t.collaboration_type_id),
    );
    c.keys(Table::Collaborations, store.collaborations.iter().map(|x| x.collaboration_id));
    let collab_time: HashMap<Id, Timestamp> = store
        .collaborations
        .iter()
        .map(|x| (x.collaboration_id, x.collaboration_timestamp))
        .collect();
    for x in &store.collaborations {
        let k = x.collaboration_id;
        if store.has(Table::CollaborationTypes) {
            c.resolve(Table::Collaborations, k, "collaboration_type_id", x.collaboration_type_id, &ctype_ids);
        }
        c.timestamp(Table::Collaborations, k, "collaboration_timestamp", x.collaboration_timestamp);
        if let Some(parent_time) = x.collaboration_parent_id.and_then(|p| collab_time.get(&p)) {
            if x.collaboration_timestamp < *parent_time {
                c.push(Table::Collaborations, k, ViolationKind::ReplyBeforeParent, "");
            }
        }
        users.check(&mut c, Table::Collaborations, k, x.user_id, &users.collaborations);
    }
    let clinks: BTreeMap<Id, Option<Id>> = store
        .collaborations
        .iter()
        .map(|x| (x.collaboration_id, x.collaboration_parent_id))
        .collect();
    c.forest(Table::Collaborations, &clinks);

    // Feedback mode.
    let survey_ids = c.keys(Table::Surveys, store.surveys.iter().map(|s| s.survey_id));
    for s in &store.surveys {
        c.timestamp(Table::Surveys, s.survey_id, "survey_start_timestamp", s.survey_start_timestamp);
        c.timestamp(Table::Surveys, s.survey_id, "survey_end_timestamp", s.survey_end_timestamp);
        if s.survey_end_timestamp < s.survey_start_timestamp {
            c.push(Table::Surveys, s.survey_id, ViolationKind::SurveyWindow, "");
        }
    }
    let question_ids = c.keys(Table::Questions, store.questions.iter().map(|q| q.question_id));
    for q in &store.questions {
        if let (Some(r), true) = (q.question_reference, store.has(Table::Resources)) {
            c.resolve(Table::Questions, q.question_id, "question_reference", r, &resource_ids);
        }
        if let (Some(s), true) = (q.survey_id, store.has(Table::Surveys)) {
            c.resolve(Table::Questions, q.question_id, "survey_id", s, &survey_ids);
        }
    }
    let answer_ids = c.keys(Table::Answers, store.answers.iter().map(|a| a.answer_id));
    c.keys(Table::Feedbacks, store.feedbacks.iter().map(|f| f.feedback_id));
    for f in &store.feedbacks {
        let k = f.feedback_id;
        if store.has(Table::Questions) {
            c.resolve(Table::Feedbacks, k, "question_id", f.question_id, &question_ids);
        }
        if store.has(Table::Answers) {
            c.resolve(Table::Feedbacks, k, "answer_id", f.answer_id, &answer_ids);
        }
        c.timestamp(Table::Feedbacks, k, "feedback_timestamp", f.feedback_timestamp);
        users.check(&mut c, Table::Feedbacks, k, f.user_id, &users.feedback);
    }

    // Identity tables.
    let course_user_ids = c.keys(Table::CourseUser, store.course_users.iter().map(|u| u.course_user_id));
    for u in &store.course_users {
        if !(0.0..=1.0).contains(&u.final_grade) {
            c.push(Table::CourseUser, u.course_user_id, ViolationKind::GradeOutOfRange, format!("final_grade={}", u.final_grade));
        }
    }
    let namespaces: [(&str, &HashSet<Id>); 5] = [
        ("course", &course_user_ids),
        ("observed", &users.observed),
        ("submissions", &users.submissions),
        ("collaborations", &users.collaborations),
        ("feedback", &users.feedback),
    ];
    for i in 0..namespaces.len() {
        for j in i + 1..namespaces.len() {
            let (na, a) = namespaces[i];
            let (nb, b) = namespaces[j];
            if let Some(shared) = a.intersection(b).min() {
                c.push(Table::CourseUser, shared, ViolationKind::NamespaceOverlap, format!("{na} and {nb}"));
            }
        }
    }
    for g in &store.global_users {
        if g.course_id == store.course_id && store.has(Table::CourseUser) && !course_user_ids.contains(&g.course_user_id) {
            c.push(Table::GlobalUser, g.global_user_id, ViolationKind::DanglingReference, format!("course_user_id={}", g.course_user_id));
        }
    }

    ValidationReport { violations: c.out }
}

struct UserIndex {
    enabled: bool,
    observed: HashSet<Id>,
    submissions: HashSet<Id>,
    collaborations: HashSet<Id>,
    feedback: HashSet<Id>,
}

impl UserIndex {
    fn new(store: &CourseStore) -> Self {
        let cu = &store.course_users;
        UserIndex {
            enabled: store.has(Table::CourseUser) && !cu.is_empty(),
            observed: cu.iter().map(|u| u.observed_id).collect(),
            submissions: cu.iter().map(|u| u.submissions_id).collect(),
            collaborations: cu.iter().map(|u| u.collaborations_id).collect(),
            feedback: cu.iter().map(|u| u.feedback_id).collect(),
        }
    }

    fn check(&self, c: &mut Checker, table: Table, key: Id, user: Id, set: &HashSet<Id>) {
        if self.enabled && !set.contains(&user) {
            c.push(table, key, ViolationKind::UnresolvedUser, format!("user={user}"));
        }
    }
}
