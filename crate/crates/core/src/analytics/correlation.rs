//! Weekly study: does video watch time during a homework's window go with
//! correct submissions on that homework?

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::{max_grades, CapabilityError};
use crate::schema::{CourseStore, Id, ResourceKind, Table};
use crate::time::Timestamp;

#[derive(Debug, thiserror::Error)]
pub enum CorrelationError {
    #[error(transparent)]
    Capability(#[from] CapabilityError),
    #[error("problem {0} does not exist")]
    UnknownProblem(Id),
    #[error("problem {0} has no release timestamp")]
    MissingRelease(Id),
    #[error("problem {0} has neither a soft nor a hard deadline")]
    MissingDeadline(Id),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UndefinedReason {
    ZeroVarianceVideo,
    ZeroVarianceCorrect,
    TooFewStudents,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pearson {
    Defined(f64),
    Undefined(UndefinedReason),
}

impl Pearson {
    pub fn value(self) -> Option<f64> {
        match self {
            Pearson::Defined(r) => Some(r),
            Pearson::Undefined(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudentPair {
    pub course_user_id: Id,
    pub video_seconds: f64,
    pub submissions: u64,
    pub correct_submissions: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationResult {
    pub problem_id: Id,
    /// 1-based position of the homework among root problems ordered by release.
    pub week: usize,
    pub window_start: Timestamp,
    pub window_end: Timestamp,
    pub pairs: Vec<StudentPair>,
    pub n: usize,
    pub r: Pearson,
}

/// Pearson r of two equal-length samples, with the undefined cases made explicit.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Pearson {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len();
    if n < 2 {
        return Pearson::Undefined(UndefinedReason::TooFewStudents);
    }
    let mx = xs.iter().sum::<f64>() / n as f64;
    let my = ys.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 {
        return Pearson::Undefined(UndefinedReason::ZeroVarianceVideo);
    }
    if syy == 0.0 {
        return Pearson::Undefined(UndefinedReason::ZeroVarianceCorrect);
    }
    Pearson::Defined((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

fn subtree(store: &CourseStore, root: Id) -> BTreeSet<Id> {
    let mut kids: HashMap<Id, Vec<Id>> = HashMap::new();
    for p in &store.problems {
        if let Some(parent) = p.problem_parent_id {
            kids.entry(parent).or_default().push(p.problem_id);
        }
    }
    let mut out = BTreeSet::new();
    let mut stack = vec![root];
    while let Some(id) = stack.pop() {
        if out.insert(id) {
            stack.extend(kids.get(&id).into_iter().flatten());
        }
    }
    out
}

/// Runs the study for one homework (any problem; its whole subtree counts).
///
/// The window is `[release, deadline]` with the soft deadline preferred.
/// Users enter the sample when they watched or submitted in the window.
pub fn video_homework_correlation(store: &CourseStore, problem_id: Id) -> Result<CorrelationResult, CorrelationError> {
    for t in [
        Table::Problems,
        Table::Resources,
        Table::ResourceUrls,
        Table::ObservedEvents,
        Table::Submissions,
        Table::Assessments,
        Table::CourseUser,
    ] {
        if !store.has(t) {
            return Err(CapabilityError::new("video_homework_correlation", t).into());
        }
    }
    let hw = store
        .problems
        .iter()
        .find(|p| p.problem_id == problem_id)
        .ok_or(CorrelationError::UnknownProblem(problem_id))?;
    let start = hw.problem_release_timestamp.ok_or(CorrelationError::MissingRelease(problem_id))?;
    let end = hw
        .problem_soft_deadline_timestamp
        .or(hw.problem_hard_deadline_timestamp)
        .ok_or(CorrelationError::MissingDeadline(problem_id))?;
    let in_window = |t: Timestamp| t >= start && t <= end;

    let mut roots: Vec<(Option<Timestamp>, Id)> = store
        .problems
        .iter()
        .filter(|p| p.problem_parent_id.is_none())
        .map(|p| (p.problem_release_timestamp, p.problem_id))
        .collect();
    roots.sort();
    let root_of_hw = {
        let parent: HashMap<Id, Option<Id>> =
            store.problems.iter().map(|p| (p.problem_id, p.problem_parent_id)).collect();
        let mut cur = problem_id;
        let mut steps = 0;
        while let Some(Some(p)) = parent.get(&cur) {
            cur = *p;
            steps += 1;
            if steps > parent.len() {
                break;
            }
        }
        cur
    };
    let week = roots.iter().position(|(_, id)| *id == root_of_hw).map_or(0, |i| i + 1);

    let linked: BTreeSet<Id> = store.resource_urls.iter().map(|l| l.resource_id).collect();
    let videos: BTreeSet<Id> = store
        .resources
        .iter()
        .filter(|r| r.resource_type_id == ResourceKind::Video.type_id() && linked.contains(&r.resource_id))
        .map(|r| r.resource_id)
        .collect();
    let problems = subtree(store, problem_id);
    let best = max_grades(store);

    let by_observed: HashMap<Id, Id> = store.course_users.iter().map(|u| (u.observed_id, u.course_user_id)).collect();
    let by_submissions: HashMap<Id, Id> =
        store.course_users.iter().map(|u| (u.submissions_id, u.course_user_id)).collect();

    // course user → (video ms, submissions, correct)
    let mut acc: BTreeMap<Id, (u64, u64, u64)> = BTreeMap::new();
    for e in &store.observed_events {
        if videos.contains(&e.resource_id) && in_window(e.observed_event_timestamp) {
            if let Some(&u) = by_observed.get(&e.user_id_observed) {
                acc.entry(u).or_default().0 += e.observed_event_duration.millis();
            }
        }
    }
    for s in &store.submissions {
        if s.is_submitted && problems.contains(&s.problem_id) && in_window(s.submission_timestamp) {
            if let Some(&u) = by_submissions.get(&s.user_id) {
                let a = acc.entry(u).or_default();
                a.1 += 1;
                if best.get(&s.submission_id) == Some(&1.0) {
                    a.2 += 1;
                }
            }
        }
    }

    let pairs: Vec<StudentPair> = acc
        .into_iter()
        .map(|(u, (ms, subs, correct))| StudentPair {
            course_user_id: u,
            video_seconds: ms as f64 / 1000.0,
            submissions: subs,
            correct_submissions: correct,
        })
        .collect();
    let xs: Vec<f64> = pairs.iter().map(|p| p.video_seconds).collect();
    let ys: Vec<f64> = pairs.iter().map(|p| p.correct_submissions as f64).collect();
    Ok(CorrelationResult {
        problem_id,
        week,
        window_start: start,
        window_end: end,
        n: pairs.len(),
        r: pearson(&xs, &ys),
        pairs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pearson_cases() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        let up = pearson(&xs, &[2.0, 4.0, 6.0, 8.0]).value().unwrap();
        let down = pearson(&xs, &[8.0, 6.0, 4.0, 2.0]).value().unwrap();
        assert!((up - 1.0).abs() < 1e-12 && (down + 1.0).abs() < 1e-12);
        assert_eq!(
            pearson(&[5.0; 4], &xs),
            Pearson::Undefined(UndefinedReason::ZeroVarianceVideo)
        );
        assert_eq!(pearson(&[1.0], &[1.0]), Pearson::Undefined(UndefinedReason::TooFewStudents));
    }
}
