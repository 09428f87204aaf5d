//! Second ETL pass: each raw event becomes rows in exactly one mode table
//! (forum activity additionally records a visit to the forum resource).

use std::collections::{BTreeMap, HashMap};

use serde_json::{json, Value};

use super::raw::{EventKind, RawEvent, RejectReason};
use super::references::Dictionaries;
use crate::privacy::identity::{CollisionGuard, CourseIdentity, IdentityError, IdNamespace, Pseudonymizer};
use crate::schema::{
    Answer, Assessment, Collaboration, CollaborationKind, CourseStore, CourseUser, Feedback,
    GlobalUser, Id, ObservedEvent, ResourceUrl, Submission, AUTOMATED_GRADER,
};
use crate::time::{Duration, Timestamp};

/// A raw event tagged with where it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct SequencedEvent {
    pub source: usize,
    pub line_no: u64,
    pub event: RawEvent,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PopulateReject {
    pub source: usize,
    pub line_no: u64,
    pub reason: RejectReason,
}

#[derive(Debug, Clone, Default)]
pub struct Populated {
    pub emitted: u64,
    pub rejects: Vec<PopulateReject>,
}

struct ResolvedResource {
    resource_id: Id,
    url_id: Id,
}

struct Populator<'d> {
    dicts: &'d Dictionaries,
    store: CourseStore,
    identities: HashMap<String, CourseIdentity>,
    /// (submissions id, problem) → (attempts so far, submitted so far)
    attempts: HashMap<(Id, Id), (u32, u32)>,
    max_submissions: HashMap<Id, u32>,
    /// Collaboration handle → (id, timestamp)
    posts: HashMap<String, (Id, Timestamp)>,
    answers: HashMap<String, Id>,
}

fn reject(code: impl Into<String>) -> RejectReason {
    RejectReason::new(code)
}

impl<'d> Populator<'d> {
    fn identity(&self, user: &str) -> &CourseIdentity {
        &self.identities[user]
    }

    fn resource(&self, e: &RawEvent) -> Result<ResolvedResource, RejectReason> {
        if e.uri.is_empty() {
            return Err(reject("missing_field:uri"));
        }
        if e.url.is_empty() {
            return Err(reject("missing_field:url"));
        }
        let resource_id = *self.dicts.resource_by_uri.get(&e.uri).ok_or_else(|| reject("unknown_resource"))?;
        let url_id = self.dicts.urls.get(&e.url).ok_or_else(|| reject("unknown_url"))?;
        Ok(ResolvedResource { resource_id, url_id })
    }

    fn push_observed(&mut self, e: &RawEvent, r: &ResolvedResource) {
        let id = self.store.observed_events.len() as Id + 1;
        let user = self.identity(&e.raw_user).modes.observed_id;
        self.store.observed_events.push(ObservedEvent {
            observed_event_id: id,
            user_id_observed: user,
            resource_id: r.resource_id,
            url_id: r.url_id,
            observed_event_timestamp: e.timestamp,
            observed_event_duration: Duration::ZERO,
            observed_event_ip: e.ip.clone(),
            observed_event_os: e.os.clone(),
            observed_event_agent: e.agent.clone(),
        });
    }

    fn grade(e: &RawEvent) -> Result<Option<f64>, RejectReason> {
        if let Some(v) = e.payload.get("correct") {
            return match v {
                Value::Bool(b) => Ok(Some(if *b { 1.0 } else { 0.0 })),
                _ => Err(reject("bad_field:correct")),
            };
        }
        let Some(v) = e.payload.get("grade") else {
            return Ok(None);
        };
        let raw = v.as_f64().ok_or_else(|| reject("bad_field:grade"))?;
        let max = match e.payload.get("max_grade") {
            None => 1.0,
            Some(m) => m.as_f64().filter(|m| *m > 0.0).ok_or_else(|| reject("bad_field:max_grade"))?,
        };
        let g = raw / max;
        if !(0.0..=1.0).contains(&g) || !g.is_finite() {
            return Err(reject("grade_out_of_range"));
        }
        Ok(Some(g))
    }

    fn submission(&mut self, e: &RawEvent, submitted: bool) -> Result<(), RejectReason> {
        if e.uri.is_empty() {
            return Err(reject("missing_field:uri"));
        }
        let problem_id = *self.dicts.problem_by_name.get(&e.uri).ok_or_else(|| reject("unknown_problem"))?;
        if self.dicts.inner_problems.contains(&problem_id) {
            return Err(reject("problem_not_leaf"));
        }
        let user = self.identity(&e.raw_user).modes.submissions_id;
        let (attempts, done) = self.attempts.get(&(user, problem_id)).copied().unwrap_or((0, 0));
        if submitted {
            if let Some(&max) = self.max_submissions.get(&problem_id) {
                if done >= max {
                    return Err(reject("max_submissions_exceeded"));
                }
            }
        }
        let assessment = if submitted {
            match Self::grade(e)? {
                Some(g) => {
                    let at = match e.payload_str("graded_at") {
                        Some(t) => super::raw::parse_timestamp(t).map_err(|_| reject("bad_field:graded_at"))?,
                        None => e.timestamp,
                    };
                    if at < e.timestamp {
                        return Err(reject("assessment_before_submission"));
                    }
                    let grader = match e.payload_str("grader").filter(|g| !g.is_empty()) {
                        Some(g) => self.identity(g).modes.submissions_id,
                        None => AUTOMATED_GRADER,
                    };
                    Some((g, at, grader))
                }
                None => None,
            }
        } else {
            None
        };

        let submission_id = self.store.submissions.len() as Id + 1;
        self.store.submissions.push(Submission {
            submission_id,
            user_id: user,
            problem_id,
            submission_timestamp: e.timestamp,
            submission_answer: e.payload_text("answer").unwrap_or_default(),
            submission_attempt_number: attempts + 1,
            submission_ip: e.ip.clone(),
            submission_os: e.os.clone(),
            submission_agent: e.agent.clone(),
            is_submitted: submitted,
        });
        self.attempts
            .insert((user, problem_id), (attempts + 1, done + u32::from(submitted)));
        if let Some((grade, at, grader)) = assessment {
            self.store.assessments.push(Assessment {
                assessment_id: self.store.assessments.len() as Id + 1,
                submission_id,
                assessment_grader_id: grader,
                assessment_grade: grade,
                assessment_feedback: e.payload_text("feedback").unwrap_or_default(),
                assessment_timestamp: at,
            });
        }
        Ok(())
    }

    fn parent(&self, e: &RawEvent, key: &str) -> Result<Option<Id>, RejectReason> {
        match e.payload_str(key).filter(|h| !h.is_empty()) {
            None => Ok(None),
            Some(h) => match self.posts.get(h) {
                Some(&(id, at)) if at <= e.timestamp => Ok(Some(id)),
                Some(_) => Err(reject("reply_before_parent")),
                None => Err(reject("dangling_parent")),
            },
        }
    }

    fn own_handle<'e>(&self, e: &'e RawEvent, key: &str, required: bool) -> Result<Option<&'e str>, RejectReason> {
        match e.payload_str(key).filter(|h| !h.is_empty()) {
            Some(h) if self.posts.contains_key(h) => Err(reject(format!("duplicate_{key}"))),
            Some(h) => Ok(Some(h)),
            None if required => Err(reject(format!("missing_field:{key}"))),
            None => Ok(None),
        }
    }

    fn collaboration(&mut self, e: &RawEvent) -> Result<(), RejectReason> {
        let (handle, parent, kind, content) = match e.event_kind {
            EventKind::ForumPost => {
                let handle = self.own_handle(e, "post_id", true)?;
                let parent = self.parent(e, "parent_id")?;
                let body = e.payload_text("body").unwrap_or_default();
                match parent {
                    None => {
                        let title = e.payload_text("title").unwrap_or_default();
                        let content = json!({ "title": title, "body": body }).to_string();
                        (handle, None, CollaborationKind::ForumQuestion, content)
                    }
                    Some(p) => (handle, Some(p), CollaborationKind::ForumReply, body),
                }
            }
            EventKind::ForumVote => {
                let handle = self.own_handle(e, "post_id", false)?;
                let target = self.parent(e, "target_id")?.ok_or_else(|| reject("missing_field:target_id"))?;
                let direction = e.payload_text("direction").unwrap_or_else(|| "up".to_string());
                if direction != "up" && direction != "down" {
                    return Err(reject("bad_field:direction"));
                }
                (handle, Some(target), CollaborationKind::ForumVote, direction)
            }
            EventKind::WikiEdit => {
                let handle = self.own_handle(e, "revision_id", false)?;
                let parent = self.parent(e, "parent_id")?;
                let deleted = matches!(e.payload.get("deleted"), Some(Value::Bool(true)));
                let kind = if deleted { CollaborationKind::WikiDeletion } else { CollaborationKind::WikiEdit };
                (handle, parent, kind, e.payload_text("body").unwrap_or_default())
            }
            _ => unreachable!("not a collaboration kind"),
        };

        let forum_visit = match e.event_kind {
            EventKind::ForumPost | EventKind::ForumVote => Some(self.resource(e)?),
            _ => None,
        };

        let id = self.store.collaborations.len() as Id + 1;
        self.store.collaborations.push(Collaboration {
            collaboration_id: id,
            user_id: self.identity(&e.raw_user).modes.collaborations_id,
            collaboration_type_id: kind.type_id(),
            collaboration_parent_id: parent,
            collaboration_timestamp: e.timestamp,
            collaboration_content: content,
            collaboration_ip: e.ip.clone(),
            collaboration_os: e.os.clone(),
            collaboration_agent: e.agent.clone(),
        });
        if let Some(h) = handle {
            self.posts.insert(h.to_string(), (id, e.timestamp));
        }
        if let Some(r) = forum_visit {
            self.push_observed(e, &r);
        }
        Ok(())
    }

    fn feedback(&mut self, e: &RawEvent) -> Result<(), RejectReason> {
        let q = e.payload_str("question").ok_or_else(|| reject("missing_field:question"))?;
        let question_id = *self.dicts.question_by_handle.get(q).ok_or_else(|| reject("unknown_question"))?;
        let text = e.payload_text("answer").ok_or_else(|| reject("missing_field:answer"))?;
        let answer_id = match self.answers.get(&text) {
            Some(&id) => id,
            None => {
                let id = self.store.answers.len() as Id + 1;
                self.store.answers.push(Answer {
                    answer_id: id,
                    answer_content: text.clone(),
                });
                self.answers.insert(text, id);
                id
            }
        };
        self.store.feedbacks.push(Feedback {
            feedback_id: self.store.feedbacks.len() as Id + 1,
            user_id: self.identity(&e.raw_user).modes.feedback_id,
            question_id,
            answer_id,
            feedback_timestamp: e.timestamp,
        });
        Ok(())
    }

    fn event(&mut self, e: &RawEvent) -> Result<(), RejectReason> {
        match e.event_kind {
            EventKind::PageView | EventKind::VideoPlay => {
                let r = self.resource(e)?;
                self.push_observed(e, &r);
                Ok(())
            }
            EventKind::ProblemCheck => self.submission(e, true),
            EventKind::ProblemSave => self.submission(e, false),
            EventKind::ForumPost | EventKind::ForumVote | EventKind::WikiEdit => self.collaboration(e),
            EventKind::SurveyAnswer => self.feedback(e),
        }
    }
}

/// Derives identities for every dictionary user and emits all mode-table rows.
///
/// Events must already be in merge order. Each event either produces its rows
/// or is rejected whole; nothing is dropped silently.
pub fn populate_tables(
    events: &[SequencedEvent],
    dicts: &Dictionaries,
    pseudonymizer: &Pseudonymizer,
) -> Result<(CourseStore, Populated), IdentityError> {
    let mut store = CourseStore::new(dicts.course_id.clone()).with_fixed_dictionaries();
    store.resources = dicts.resources.clone();
    store.urls = dicts.url_rows();
    store.resource_urls = dicts
        .resource_urls
        .iter()
        .map(|&(resource_id, url_id)| ResourceUrl { resource_id, url_id })
        .collect();
    store.problem_types = dicts.problem_type_rows();
    store.problems = dicts.problems.clone();
    store.surveys = dicts.surveys.clone();
    store.questions = dicts.questions.clone();

    let mut guard = CollisionGuard::default();
    let mut identities = HashMap::with_capacity(dicts.users.len());
    for (_, user) in dicts.users.iter() {
        let ci = pseudonymizer.course_identity(&dicts.course_id, user);
        guard.claim_course(&dicts.course_id, user, &ci)?;
        let global = pseudonymizer.global_id(user);
        guard.claim(IdNamespace::Global, global, user)?;
        let roster = dicts.roster.get(user);
        store.course_users.push(CourseUser {
            course_user_id: ci.course_user_id,
            final_grade: roster.map_or(0.0, |r| r.final_grade),
            user_type: roster.map_or_else(|| "student".to_string(), |r| r.user_type.clone()),
            certified: roster.is_some_and(|r| r.certified),
            country: roster.map(|r| r.country.clone()).unwrap_or_default(),
            observed_id: ci.modes.observed_id,
            submissions_id: ci.modes.submissions_id,
            collaborations_id: ci.modes.collaborations_id,
            feedback_id: ci.modes.feedback_id,
        });
        store.global_users.push(GlobalUser {
            global_user_id: global,
            course_id: dicts.course_id.clone(),
            course_user_id: ci.course_user_id,
        });
        identities.insert(user.to_string(), ci);
    }

    let max_submissions = dicts
        .problems
        .iter()
        .filter_map(|p| p.problem_max_submission.map(|m| (p.problem_id, m)))
        .collect();
    let mut p = Populator {
        dicts,
        store,
        identities,
        attempts: HashMap::new(),
        max_submissions,
        posts: HashMap::new(),
        answers: HashMap::new(),
    };
    let mut out = Populated::default();
    for se in events {
        match p.event(&se.event) {
            Ok(()) => out.emitted += 1,
            Err(reason) => out.rejects.push(PopulateReject {
                source: se.source,
                line_no: se.line_no,
                reason,
            }),
        }
    }
    Ok((p.store, out))
}

/// Row counts of the mode tables, keyed by table name.
pub fn mode_table_counts(store: &CourseStore) -> BTreeMap<String, u64> {
    use crate::schema::Table;
    [
        Table::ObservedEvents,
        Table::Submissions,
        Table::Assessments,
        Table::Collaborations,
        Table::Feedbacks,
        Table::Answers,
        Table::CourseUser,
    ]
    .iter()
    .map(|t| (t.name().to_string(), store.row_count(*t) as u64))
    .collect()
}
