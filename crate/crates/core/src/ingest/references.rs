//! First ETL pass: build the dictionaries (users, resources, urls, problems,
//! types, surveys) that every later row refers to.

use std::collections::{BTreeSet, HashMap, HashSet};

use super::raw::{EventKind, RawEvent};
use super::structure::{CourseStructure, ProblemSpec, RosterEntry, StructureError};
use crate::config::PipelineConfig;
use crate::schema::{
    number_problem_tree, Id, Problem, ProblemTree, ProblemType, Question, Resource, ResourceKind,
    Survey, TreeError, Url,
};

pub const ORPHAN_PROBLEM_TYPE: &str = "unspecified";

#[derive(Debug, thiserror::Error)]
pub enum ReferenceError {
    #[error(transparent)]
    Structure(#[from] StructureError),
    #[error(transparent)]
    Tree(#[from] TreeError),
}

/// Insertion-ordered string → dense id map (ids start at 1).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Interner {
    items: Vec<String>,
    index: HashMap<String, Id>,
}

impl Interner {
    pub fn intern(&mut self, s: &str) -> Id {
        if let Some(&id) = self.index.get(s) {
            return id;
        }
        self.items.push(s.to_string());
        let id = self.items.len() as Id;
        self.index.insert(s.to_string(), id);
        id
    }

    pub fn get(&self, s: &str) -> Option<Id> {
        self.index.get(s).copied()
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (Id, &str)> {
        self.items.iter().enumerate().map(|(i, s)| (i as Id + 1, s.as_str()))
    }
}

#[derive(Debug, Clone, Default)]
pub struct Dictionaries {
    pub course_id: String,
    pub users: Interner,
    pub roster: HashMap<String, RosterEntry>,
    pub resources: Vec<Resource>,
    pub resource_by_uri: HashMap<String, Id>,
    pub urls: Interner,
    pub resource_urls: BTreeSet<(Id, Id)>,
    pub problem_types: Interner,
    pub problems: Vec<Problem>,
    pub problem_by_name: HashMap<String, Id>,
    pub inner_problems: HashSet<Id>,
    pub surveys: Vec<Survey>,
    pub questions: Vec<Question>,
    pub question_by_handle: HashMap<String, Id>,
    /// Uris seen in events but missing from the structure, in first-seen order.
    pub orphan_resources: Vec<String>,
    pub orphan_problems: Vec<String>,
}

fn to_tree(spec: &ProblemSpec, types: &mut Interner) -> ProblemTree {
    ProblemTree {
        name: spec.name.clone(),
        problem_type_id: types.intern(&spec.kind),
        order: spec.order,
        release: spec.release,
        soft_deadline: spec.soft_deadline,
        hard_deadline: spec.hard_deadline,
        max_submissions: spec.max_submissions,
        children: spec.children.iter().map(|c| to_tree(c, types)).collect(),
    }
}

fn orphan_kind(kind: EventKind, config: &PipelineConfig) -> ResourceKind {
    match kind {
        EventKind::VideoPlay => ResourceKind::Video,
        EventKind::ForumPost | EventKind::ForumVote => ResourceKind::Forums,
        EventKind::WikiEdit => ResourceKind::Wiki,
        _ => config.orphan_page_type,
    }
}

impl Dictionaries {
    fn add_resource(&mut self, uri: &str, name: &str, kind: ResourceKind) -> Id {
        let id = self.resources.len() as Id + 1;
        self.resources.push(Resource {
            resource_id: id,
            resource_name: name.to_string(),
            resource_uri: uri.to_string(),
            resource_type_id: kind.type_id(),
            resource_parent: None,
            resource_child_number: None,
        });
        self.resource_by_uri.insert(uri.to_string(), id);
        id
    }

    fn add_root_problem(&mut self, tree: &ProblemTree) -> Result<(), TreeError> {
        let first = self.problems.len() as Id + 1;
        let rows = number_problem_tree(tree, first)?;
        for r in &rows {
            if let Some(p) = r.problem_parent_id {
                self.inner_problems.insert(p);
            }
            self.problem_by_name.insert(r.problem_name.clone(), r.problem_id);
        }
        self.problems.extend(rows);
        Ok(())
    }

    pub fn problem_type_rows(&self) -> Vec<ProblemType> {
        self.problem_types
            .iter()
            .map(|(id, name)| ProblemType {
                problem_type_id: id,
                problem_type_name: name.to_string(),
            })
            .collect()
    }

    pub fn url_rows(&self) -> Vec<Url> {
        self.urls
            .iter()
            .map(|(id, url)| Url {
                url_id: id,
                url: url.to_string(),
            })
            .collect()
    }
}

/// Builds every dictionary. The structure is authoritative: everything it
/// declares is present even if no event touches it. Ids follow first
/// appearance (structure first, then events in the given order).
pub fn generate_references<'a>(
    events: impl IntoIterator<Item = &'a RawEvent>,
    structure: &CourseStructure,
    config: &PipelineConfig,
) -> Result<Dictionaries, ReferenceError> {
    structure.validate(|k| config.resolve_resource_kind(k))?;
    let mut d = Dictionaries {
        course_id: structure.course_id.clone(),
        ..Dictionaries::default()
    };

    for r in &structure.roster {
        d.users.intern(&r.user);
        d.roster.insert(r.user.clone(), r.clone());
    }

    for r in &structure.resources {
        let kind = config.resolve_resource_kind(&r.kind).expect("validated above");
        let id = d.add_resource(&r.uri, &r.name, kind);
        for url in &r.urls {
            let u = d.urls.intern(url);
            d.resource_urls.insert((id, u));
        }
    }
    for r in &structure.resources {
        let id = d.resource_by_uri[&r.uri];
        let row = &mut d.resources[id as usize - 1];
        row.resource_parent = r.parent.as_ref().map(|p| d.resource_by_uri[p]);
        row.resource_child_number = r.child_number;
    }

    for spec in &structure.problems {
        let tree = to_tree(spec, &mut d.problem_types);
        d.add_root_problem(&tree)?;
    }

    for s in &structure.surveys {
        let survey_id = d.surveys.len() as Id + 1;
        d.surveys.push(Survey {
            survey_id,
            survey_start_timestamp: s.start,
            survey_end_timestamp: s.end,
        });
        for q in &s.questions {
            let question_id = d.questions.len() as Id + 1;
            d.questions.push(Question {
                question_id,
                question_content: q.content.clone(),
                question_type: q.kind.clone(),
                question_reference: q.reference.as_ref().map(|u| d.resource_by_uri[u]),
                survey_id: Some(survey_id),
            });
            d.question_by_handle.insert(q.handle.clone(), question_id);
        }
    }

    for e in events {
        d.users.intern(&e.raw_user);
        if let Some(grader) = e.payload_str("grader") {
            if !grader.is_empty() {
                d.users.intern(grader);
            }
        }
        match e.event_kind {
            k if k.is_observed() => {
                if e.uri.is_empty() {
                    continue;
                }
                let rid = match d.resource_by_uri.get(&e.uri) {
                    Some(&id) => id,
                    None => {
                        d.orphan_resources.push(e.uri.clone());
                        d.add_resource(&e.uri, &e.uri, orphan_kind(k, config))
                    }
                };
                if !e.url.is_empty() {
                    let u = d.urls.intern(&e.url);
                    d.resource_urls.insert((rid, u));
                }
            }
            EventKind::ProblemCheck | EventKind::ProblemSave => {
                if !e.uri.is_empty() && !d.problem_by_name.contains_key(&e.uri) {
                    d.orphan_problems.push(e.uri.clone());
                    let mut tree = ProblemTree::new(e.uri.clone());
                    tree.problem_type_id = d.problem_types.intern(ORPHAN_PROBLEM_TYPE);
                    d.add_root_problem(&tree)?;
                }
            }
            _ => {}
        }
    }
    Ok(d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::structure::ResourceSpec;
    use crate::time::Timestamp;

    fn ev(user: &str, kind: EventKind, uri: &str, url: &str) -> RawEvent {
        RawEvent {
            raw_user: user.into(),
            event_kind: kind,
            uri: uri.into(),
            url: url.into(),
            timestamp: Timestamp::from_ymd_hms(2013, 3, 4, 0, 0, 0),
            payload: Default::default(),
            ip: String::new(),
            os: String::new(),
            agent: String::new(),
        }
    }

    fn structure_with(n_resources: usize) -> CourseStructure {
        let mut s = CourseStructure::empty("c");
        s.resources = (0..n_resources)
            .map(|i| ResourceSpec {
                uri: format!("r{i}"),
                name: format!("resource {i}"),
                kind: "lecture".into(),
                parent: None,
                child_number: None,
                urls: vec![format!("https://x/{i}")],
            })
            .collect();
        s
    }

    #[test]
    fn users_counted_once() {
        let events = vec![
            ev("a", EventKind::PageView, "r0", "https://x/0"),
            ev("b", EventKind::PageView, "r0", "https://x/0"),
            ev("a", EventKind::PageView, "r1", "https://x/1"),
        ];
        let d = generate_references(&events, &structure_with(2), &PipelineConfig::default()).unwrap();
        assert_eq!(d.users.len(), 2);
    }

    #[test]
    fn structure_is_authoritative() {
        let events: Vec<RawEvent> = (0..5)
            .map(|i| ev("a", EventKind::PageView, &format!("r{i}"), &format!("https://x/{i}")))
            .collect();
        let d = generate_references(&events, &structure_with(8), &PipelineConfig::default()).unwrap();
        assert_eq!(d.resources.len(), 8);
        assert!(d.orphan_resources.is_empty());
    }

    #[test]
    fn orphan_uri_typed_from_event_kind() {
        let events = vec![ev("a", EventKind::VideoPlay, "mystery", "https://x/m")];
        let d = generate_references(&events, &structure_with(1), &PipelineConfig::default()).unwrap();
        assert_eq!(d.orphan_resources, vec!["mystery".to_string()]);
        let r = &d.resources[d.resource_by_uri["mystery"] as usize - 1];
        assert_eq!(r.resource_type_id, ResourceKind::Video.type_id());
        assert!(d.resource_urls.contains(&(r.resource_id, d.urls.get("https://x/m").unwrap())));
    }

    #[test]
    fn deterministic() {
        let events = vec![
            ev("z", EventKind::PageView, "q", "https://x/q"),
            ev("y", EventKind::ProblemCheck, "p9", ""),
        ];
        let a = generate_references(&events, &structure_with(3), &PipelineConfig::default()).unwrap();
        let b = generate_references(&events, &structure_with(3), &PipelineConfig::default()).unwrap();
        assert_eq!(a.resources, b.resources);
        assert_eq!(a.users, b.users);
        assert_eq!(a.problems, b.problems);
        assert_eq!(a.orphan_problems, vec!["p9".to_string()]);
    }
}
