//! Linkability audit of an exported partition, and the PII leak scan.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::identity::UserPii;
use super::partition::{load_partition, PartitionError};
use crate::schema::{CourseStore, Id, Mode, Table, AUTOMATED_GRADER};
use crate::time::Timestamp;

/// Union-find over id values.
#[derive(Default)]
struct Links {
    parent: HashMap<Id, Id>,
}

impl Links {
    fn find(&mut self, x: Id) -> Id {
        let mut root = x;
        while let Some(&p) = self.parent.get(&root) {
            if p == root {
                break;
            }
            root = p;
        }
        let mut cur = x;
        while cur != root {
            let next = self.parent.insert(cur, root).unwrap_or(root);
            cur = next;
        }
        self.parent.entry(root).or_insert(root);
        root
    }

    fn union(&mut self, a: Id, b: Id) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent.insert(hi, lo);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TablePair {
    pub left: String,
    pub right: String,
    pub joinable: bool,
    pub cross_mode: bool,
    pub cross_course: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct LinkabilityReport {
    pub pairs: Vec<TablePair>,
    pub cross_mode_joins: usize,
    pub cross_course_joins: usize,
    pub warnings: Vec<String>,
}

struct KeyedTable {
    label: String,
    course: usize,
    mode: Mode,
    keys: Vec<Id>,
}

fn user_keys(s: &CourseStore, t: Table) -> Vec<Id> {
    match t {
        Table::ObservedEvents => s.observed_events.iter().map(|e| e.user_id_observed).collect(),
        Table::Submissions => s.submissions.iter().map(|e| e.user_id).collect(),
        Table::Assessments => s
            .assessments
            .iter()
            .map(|a| a.assessment_grader_id)
            .filter(|&g| g != AUTOMATED_GRADER)
            .collect(),
        Table::Collaborations => s.collaborations.iter().map(|e| e.user_id).collect(),
        Table::Feedbacks => s.feedbacks.iter().map(|e| e.user_id).collect(),
        _ => Vec::new(),
    }
}

/// Audits stores as they would be seen by a partition holder.
pub fn audit_stores(stores: &[CourseStore], global: &[crate::schema::GlobalUser]) -> LinkabilityReport {
    let mut links = Links::default();
    for s in stores {
        if s.has(Table::CourseUser) {
            for u in &s.course_users {
                for m in [u.observed_id, u.submissions_id, u.collaborations_id, u.feedback_id] {
                    links.union(u.course_user_id, m);
                }
            }
        }
    }
    for g in global {
        links.union(g.global_user_id, g.course_user_id);
    }

    let mut tables = Vec::new();
    for (ci, s) in stores.iter().enumerate() {
        for t in s.present.iter().copied().filter(|t| !t.user_columns().is_empty()) {
            tables.push(KeyedTable {
                label: format!("{}/{}", s.course_id, t.name()),
                course: ci,
                mode: t.mode(),
                keys: user_keys(s, t),
            });
        }
    }
    let roots: Vec<HashSet<Id>> = tables
        .iter()
        .map(|t| t.keys.iter().map(|&k| links.find(k)).collect())
        .collect();

    let mut report = LinkabilityReport::default();
    for i in 0..tables.len() {
        for j in i + 1..tables.len() {
            let (small, large) = if roots[i].len() <= roots[j].len() { (i, j) } else { (j, i) };
            let joinable = roots[small].iter().any(|r| roots[large].contains(r));
            let cross_mode = tables[i].mode != tables[j].mode;
            let cross_course = tables[i].course != tables[j].course;
            if joinable && cross_mode {
                report.cross_mode_joins += 1;
            }
            if joinable && cross_course {
                report.cross_course_joins += 1;
            }
            report.pairs.push(TablePair {
                left: tables[i].label.clone(),
                right: tables[j].label.clone(),
                joinable,
                cross_mode,
                cross_course,
            });
        }
    }

    for s in stores {
        if !(s.has(Table::Collaborations) && s.has(Table::ObservedEvents)) || s.collaborations.is_empty() {
            continue;
        }
        let seen: HashSet<Timestamp> = s.observed_events.iter().map(|e| e.observed_event_timestamp).collect();
        let shared = s
            .collaborations
            .iter()
            .filter(|c| seen.contains(&c.collaboration_timestamp))
            .count();
        if shared > 0 {
            report.warnings.push(format!(
                "{}: {shared} of {} collaboration rows share an exact timestamp with an observed event; \
                 time correlation can link collaborating and observing pseudonyms",
                s.course_id,
                s.collaborations.len()
            ));
        }
    }
    report
}

/// Audits a partition directory.
pub fn audit_linkability(dir: &Path) -> Result<LinkabilityReport, PartitionError> {
    let (_, stores, global) = load_partition(dir)?;
    Ok(audit_stores(&stores, &global))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PiiLeak {
    pub file: PathBuf,
    pub value: String,
}

/// Values shorter than this are matched against whole CSV cells only, so
/// that e.g. an age of `34` does not match inside an unrelated number.
pub const SUBSTRING_MIN_LEN: usize = 8;

/// Scans every file under `dir` for PII values.
pub fn scan_for_pii(dir: &Path, pii: &[UserPii]) -> std::io::Result<Vec<PiiLeak>> {
    let mut values: BTreeSet<String> = BTreeSet::new();
    for p in pii {
        values.insert(p.age.to_string());
        values.insert(p.country.clone());
        values.insert(p.most_frequent_ip.clone());
    }
    values.remove("");
    let long: Vec<&String> = values.iter().filter(|v| v.len() >= SUBSTRING_MIN_LEN).collect();

    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d)? {
            let p = e?.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                files.push(p);
            }
        }
    }
    files.sort();

    let mut leaks = Vec::new();
    for f in files {
        let text = String::from_utf8_lossy(&fs::read(&f)?).into_owned();
        let mut found: BTreeSet<String> = BTreeSet::new();
        for v in &long {
            if text.contains(v.as_str()) {
                found.insert((*v).clone());
            }
        }
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .from_reader(text.as_bytes());
        for rec in rdr.records().flatten() {
            for cell in rec.iter() {
                if values.contains(cell) {
                    found.insert(cell.to_string());
                }
            }
        }
        for value in found {
            leaks.push(PiiLeak {
                file: f.clone(),
                value,
            });
        }
    }
    Ok(leaks)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn union_find_paths() {
        let mut l = Links::default();
        l.union(5, 9);
        l.union(9, 12);
        assert_eq!(l.find(12), l.find(5));
        assert_ne!(l.find(7), l.find(5));
    }

    #[test]
    fn scan_matches_cells_and_long_substrings() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a.csv"), "id,x\n1234,2001:db8::77 trailing\n").unwrap();
        std::fs::write(dir.path().join("b.csv"), "id,x\n34,ok\n").unwrap();
        let pii = vec![UserPii {
            global_user_id: 1,
            age: 34,
            country: "QZ".into(),
            most_frequent_ip: "2001:db8::77".into(),
        }];
        let leaks = scan_for_pii(dir.path(), &pii).unwrap();
        let vals: Vec<&str> = leaks.iter().map(|l| l.value.as_str()).collect();
        assert_eq!(vals, ["2001:db8::77", "34"]);
    }
}
