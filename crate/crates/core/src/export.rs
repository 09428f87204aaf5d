//! Study input files: knowledge-tracing sequences and item-response matrices.
//!
//! Both are CSV led by a format comment line:
//!
//! ```text
//! # moocdb-bkt v1
//! student_id,problem_id,attempt_index,first_attempt_correct,timestamp
//!
//! # moocdb-irt v1
//! student_id,<leaf problem id>,<leaf problem id>,...
//! ```
//!
//! A first attempt is the lowest-numbered submitted attempt that has at least
//! one assessment; it is correct when its best grade is 1.

use std::collections::{BTreeMap, HashMap};

use serde::Serialize;

use crate::analytics::max_grades;
use crate::schema::{CourseStore, Id};
use crate::time::Timestamp;

pub const BKT_HEADER: &str = "# moocdb-bkt v1";
pub const IRT_HEADER: &str = "# moocdb-irt v1";

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BktRow {
    pub student_id: Id,
    pub problem_id: Id,
    pub attempt_index: u32,
    pub first_attempt_correct: u8,
    pub timestamp: Timestamp,
}

/// First graded attempt per (student, problem).
pub fn first_graded_attempts(store: &CourseStore) -> Vec<BktRow> {
    let best = max_grades(store);
    let mut first: HashMap<(Id, Id), (u32, Timestamp, f64)> = HashMap::new();
    for s in &store.submissions {
        if !s.is_submitted {
            continue;
        }
        let Some(&g) = best.get(&s.submission_id) else {
            continue;
        };
        let key = (s.user_id, s.problem_id);
        let cand = (s.submission_attempt_number, s.submission_timestamp, g);
        match first.get(&key) {
            Some(cur) if (cur.0, cur.1) <= (cand.0, cand.1) => {}
            _ => {
                first.insert(key, cand);
            }
        }
    }
    let mut rows: Vec<BktRow> = first
        .into_iter()
        .map(|((student_id, problem_id), (attempt_index, timestamp, g))| BktRow {
            student_id,
            problem_id,
            attempt_index,
            first_attempt_correct: u8::from(g == 1.0),
            timestamp,
        })
        .collect();
    rows.sort_by_key(|r| (r.student_id, r.timestamp, r.problem_id));
    rows
}

pub fn export_bkt(store: &CourseStore) -> String {
    let mut out = format!("{BKT_HEADER}\nstudent_id,problem_id,attempt_index,first_attempt_correct,timestamp\n");
    for r in first_graded_attempts(store) {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.student_id,
            r.problem_id,
            r.attempt_index,
            r.first_attempt_correct,
            r.timestamp.to_iso()
        ));
    }
    out
}

/// Students (ascending id) × leaf problems (depth-first) with 0/1/blank cells.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IrtMatrix {
    pub problems: Vec<Id>,
    pub students: Vec<Id>,
    pub cells: Vec<Vec<Option<u8>>>,
}

impl IrtMatrix {
    pub fn get(&self, student: Id, problem: Id) -> Option<u8> {
        let i = self.students.binary_search(&student).ok()?;
        let j = self.problems.iter().position(|p| *p == problem)?;
        self.cells[i][j]
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{IRT_HEADER}\nstudent_id");
        for p in &self.problems {
            out.push_str(&format!(",{p}"));
        }
        out.push('\n');
        for (s, row) in self.students.iter().zip(&self.cells) {
            out.push_str(&s.to_string());
            for c in row {
                out.push(',');
                if let Some(v) = c {
                    out.push_str(&v.to_string());
                }
            }
            out.push('\n');
        }
        out
    }
}

pub fn irt_matrix(store: &CourseStore) -> IrtMatrix {
    let problems = store.leaf_problems_depth_first();
    let col: HashMap<Id, usize> = problems.iter().enumerate().map(|(i, p)| (*p, i)).collect();
    let mut by_student: BTreeMap<Id, Vec<Option<u8>>> = BTreeMap::new();
    for r in first_graded_attempts(store) {
        let Some(&j) = col.get(&r.problem_id) else {
            continue;
        };
        by_student
            .entry(r.student_id)
            .or_insert_with(|| vec![None; problems.len()])[j] = Some(r.first_attempt_correct);
    }
    let (students, cells) = by_student.into_iter().unzip();
    IrtMatrix {
        problems,
        students,
        cells,
    }
}

pub fn export_irt(store: &CourseStore) -> String {
    irt_matrix(store).to_csv()
}
