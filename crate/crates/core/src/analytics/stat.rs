//! Statistics over time / cohort / space cuts.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::cohort::{CohortError, CohortPredicate};
use super::CapabilityError;
use crate::schema::{CourseStore, CourseUser, Id, Table};
use crate::time::Timestamp;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    Count,
    Sum,
    Mean,
    Distribution,
}

/// What is measured. `*PerUser` targets produce one value per user active in
/// the window (at least one contributing row); the others one value per row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    SubmissionsPerUser,
    CorrectSubmissionsPerUser,
    ObservedEventsPerUser,
    ObservedSecondsPerUser,
    CollaborationsPerUser,
    FeedbacksPerUser,
    ObservedDuration,
    AssessmentGrade,
    SubmissionAttempt,
}

impl Target {
    pub const ALL: [Target; 9] = [
        Target::SubmissionsPerUser,
        Target::CorrectSubmissionsPerUser,
        Target::ObservedEventsPerUser,
        Target::ObservedSecondsPerUser,
        Target::CollaborationsPerUser,
        Target::FeedbacksPerUser,
        Target::ObservedDuration,
        Target::AssessmentGrade,
        Target::SubmissionAttempt,
    ];

    pub fn per_user(self) -> bool {
        !matches!(self, Target::ObservedDuration | Target::AssessmentGrade | Target::SubmissionAttempt)
    }

    /// Tables read when no cohort or space cut applies.
    pub fn tables(self) -> &'static [Table] {
        match self {
            Target::SubmissionsPerUser | Target::SubmissionAttempt => &[Table::Submissions],
            Target::CorrectSubmissionsPerUser => &[Table::Submissions, Table::Assessments],
            Target::ObservedEventsPerUser | Target::ObservedSecondsPerUser | Target::ObservedDuration => {
                &[Table::ObservedEvents]
            }
            Target::CollaborationsPerUser => &[Table::Collaborations],
            Target::FeedbacksPerUser => &[Table::Feedbacks],
            Target::AssessmentGrade => &[Table::Assessments],
        }
    }

    /// Divisor from stored units to reported units (milliseconds → seconds).
    pub fn scale(self) -> f64 {
        match self {
            Target::ObservedSecondsPerUser | Target::ObservedDuration => 1000.0,
            _ => 1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Target::SubmissionsPerUser => "submissions_per_user",
            Target::CorrectSubmissionsPerUser => "correct_submissions_per_user",
            Target::ObservedEventsPerUser => "observed_events_per_user",
            Target::ObservedSecondsPerUser => "observed_seconds_per_user",
            Target::CollaborationsPerUser => "collaborations_per_user",
            Target::FeedbacksPerUser => "feedbacks_per_user",
            Target::ObservedDuration => "observed_duration",
            Target::AssessmentGrade => "assessment_grade",
            Target::SubmissionAttempt => "submission_attempt",
        }
    }
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Target {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Target::ALL
            .iter()
            .copied()
            .find(|t| t.name() == s)
            .ok_or_else(|| format!("unknown target `{s}`"))
    }
}

/// Half-open time window `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub start: Option<Timestamp>,
    pub end: Option<Timestamp>,
}

impl Window {
    pub fn contains(&self, t: Timestamp) -> bool {
        self.start.map_or(true, |s| t >= s) && self.end.map_or(true, |e| t < e)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SpaceSpec {
    pub countries: Option<BTreeSet<String>>,
    pub group_by_country: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CutSpec {
    pub window: Option<Window>,
    pub cohort: Option<CohortPredicate>,
    pub space: Option<SpaceSpec>,
}

impl CutSpec {
    /// `self` with every cut that `over` sets replaced by `over`'s.
    pub fn overlay(&self, over: &CutSpec) -> CutSpec {
        CutSpec {
            window: over.window.or(self.window),
            cohort: over.cohort.clone().or_else(|| self.cohort.clone()),
            space: over.space.clone().or_else(|| self.space.clone()),
        }
    }

    pub fn needs_users(&self) -> bool {
        self.cohort.is_some() || self.space.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatisticDef {
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub aggregation: Aggregation,
    pub target: Target,
    #[serde(default)]
    pub default_cuts: CutSpec,
}

impl StatisticDef {
    pub fn new(name: impl Into<String>, aggregation: Aggregation, target: Target) -> Self {
        StatisticDef {
            name: name.into(),
            description: String::new(),
            aggregation,
            target,
            default_cuts: CutSpec::default(),
        }
    }

    /// Every table this statistic reads under `cuts`.
    pub fn required_tables(&self, cuts: &CutSpec) -> BTreeSet<Table> {
        let mut t: BTreeSet<Table> = self.target.tables().iter().copied().collect();
        if cuts.needs_users() {
            t.insert(Table::CourseUser);
            if self.target == Target::AssessmentGrade {
                t.insert(Table::Submissions);
            }
        }
        t
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StatValue {
    Scalar(f64),
    Distribution(BTreeMap<String, u64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupStat {
    pub value: StatValue,
    /// Number of measured items (users or rows) in the group.
    pub n: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatResult {
    pub statistic: String,
    pub aggregation: Aggregation,
    pub target: Target,
    pub window: Option<Window>,
    pub cohort: Option<String>,
    pub cohort_size: Option<usize>,
    pub groups: BTreeMap<String, GroupStat>,
}

/// Group used when no space grouping is requested.
pub const ALL_GROUP: &str = "all";

fn format_value(v: f64) -> String {
    format!("{v}")
}

impl StatResult {
    /// `group,value,n` rows; distributions emit one row per bucket with its count.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("group,value,n\n");
        let q = |s: &str| {
            if s.contains([',', '"', '\n']) {
                format!("\"{}\"", s.replace('"', "\"\""))
            } else {
                s.to_string()
            }
        };
        for (g, s) in &self.groups {
            match &s.value {
                StatValue::Scalar(v) => out.push_str(&format!("{},{},{}\n", q(g), format_value(*v), s.n)),
                StatValue::Distribution(d) => {
                    for (bucket, count) in d {
                        out.push_str(&format!("{},{},{}\n", q(g), q(bucket), count));
                    }
                }
            }
        }
        out
    }
}

struct Users<'s> {
    by_mode_id: HashMap<Id, &'s CourseUser>,
}

impl<'s> Users<'s> {
    fn new(store: &'s CourseStore, pick: impl Fn(&CourseUser) -> Id) -> Self {
        Users {
            by_mode_id: store.course_users.iter().map(|u| (pick(u), u)).collect(),
        }
    }
}

/// Decides, per mode-scoped user id, whether a row counts and which group it lands in.
struct Gate<'s> {
    users: Option<Users<'s>>,
    cohort: Option<&'s CohortPredicate>,
    space: Option<&'s SpaceSpec>,
}

impl<'s> Gate<'s> {
    fn group(&self, user: Id) -> Option<String> {
        let Some(users) = &self.users else {
            return Some(ALL_GROUP.to_string());
        };
        let u = users.by_mode_id.get(&user)?;
        if let Some(c) = self.cohort {
            if !c.matches(u) {
                return None;
            }
        }
        match self.space {
            None => Some(ALL_GROUP.to_string()),
            Some(sp) => {
                if let Some(cs) = &sp.countries {
                    if !cs.contains(&u.country) {
                        return None;
                    }
                }
                Some(if sp.group_by_country { u.country.clone() } else { ALL_GROUP.to_string() })
            }
        }
    }
}

/// Runs `stat` under its default cuts overlaid with `cuts`.
pub fn compute_statistic(store: &CourseStore, stat: &StatisticDef, cuts: &CutSpec) -> Result<StatResult, CapabilityError> {
    let cuts = stat.default_cuts.overlay(cuts);
    for t in stat.required_tables(&cuts) {
        if !store.has(t) {
            return Err(CapabilityError::new(&stat.name, t));
        }
    }
    let window = cuts.window.unwrap_or(Window { start: None, end: None });
    let pick: fn(&CourseUser) -> Id = match stat.target {
        Target::ObservedEventsPerUser | Target::ObservedSecondsPerUser | Target::ObservedDuration => |u| u.observed_id,
        Target::CollaborationsPerUser => |u| u.collaborations_id,
        Target::FeedbacksPerUser => |u| u.feedback_id,
        _ => |u| u.submissions_id,
    };
    let gate = Gate {
        users: cuts.needs_users().then(|| Users::new(store, pick)),
        cohort: cuts.cohort.as_ref(),
        space: cuts.space.as_ref(),
    };

    // (group, value) items in stored units.
    let mut items: Vec<(String, f64)> = Vec::new();
    let mut per_user: BTreeMap<Id, (String, f64)> = BTreeMap::new();
    let mut bump = |user: Id, v: f64| {
        if let Some(g) = gate.group(user) {
            per_user.entry(user).or_insert((g, 0.0)).1 += v;
        }
    };
    match stat.target {
        Target::SubmissionsPerUser => {
            for s in store.submissions.iter().filter(|s| s.is_submitted && window.contains(s.submission_timestamp)) {
                bump(s.user_id, 1.0);
            }
        }
        Target::CorrectSubmissionsPerUser => {
            let best = super::max_grades(store);
            for s in store.submissions.iter().filter(|s| s.is_submitted && window.contains(s.submission_timestamp)) {
                if best.get(&s.submission_id) == Some(&1.0) {
                    bump(s.user_id, 1.0);
                }
            }
        }
        Target::ObservedEventsPerUser | Target::ObservedSecondsPerUser => {
            let secs = stat.target == Target::ObservedSecondsPerUser;
            for e in store.observed_events.iter().filter(|e| window.contains(e.observed_event_timestamp)) {
                bump(
                    e.user_id_observed,
                    if secs { e.observed_event_duration.millis() as f64 } else { 1.0 },
                );
            }
        }
        Target::CollaborationsPerUser => {
            for c in store.collaborations.iter().filter(|c| window.contains(c.collaboration_timestamp)) {
                bump(c.user_id, 1.0);
            }
        }
        Target::FeedbacksPerUser => {
            for f in store.feedbacks.iter().filter(|f| window.contains(f.feedback_timestamp)) {
                bump(f.user_id, 1.0);
            }
        }
        Target::ObservedDuration => {
            for e in store.observed_events.iter().filter(|e| window.contains(e.observed_event_timestamp)) {
                if let Some(g) = gate.group(e.user_id_observed) {
                    items.push((g, e.observed_event_duration.millis() as f64));
                }
            }
        }
        Target::SubmissionAttempt => {
            for s in store.submissions.iter().filter(|s| s.is_submitted && window.contains(s.submission_timestamp)) {
                if let Some(g) = gate.group(s.user_id) {
                    items.push((g, f64::from(s.submission_attempt_number)));
                }
            }
        }
        Target::AssessmentGrade => {
            let owner: HashMap<Id, Id> = if gate.users.is_some() {
                store.submissions.iter().map(|s| (s.submission_id, s.user_id)).collect()
            } else {
                HashMap::new()
            };
            for a in store.assessments.iter().filter(|a| window.contains(a.assessment_timestamp)) {
                let g = if gate.users.is_some() {
                    owner.get(&a.submission_id).and_then(|u| gate.group(*u))
                } else {
                    Some(ALL_GROUP.to_string())
                };
                if let Some(g) = g {
                    items.push((g, a.assessment_grade));
                }
            }
        }
    }
    items.extend(per_user.into_values());

    let scale = stat.target.scale();
    let mut grouped: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for (g, v) in items {
        grouped.entry(g).or_default().push(v);
    }
    let groups = grouped
        .into_iter()
        .map(|(g, vals)| {
            let n = vals.len() as u64;
            let sum: f64 = vals.iter().sum();
            let value = match stat.aggregation {
                Aggregation::Count => StatValue::Scalar(n as f64),
                Aggregation::Sum => StatValue::Scalar(sum / scale),
                Aggregation::Mean => StatValue::Scalar(sum / n as f64 / scale),
                Aggregation::Distribution => {
                    let mut d = BTreeMap::new();
                    for v in &vals {
                        *d.entry(format_value(v / scale)).or_insert(0) += 1;
                    }
                    StatValue::Distribution(d)
                }
            };
            (g, GroupStat { value, n })
        })
        .collect();

    let cohort_size = match (&cuts.cohort, store.has(Table::CourseUser)) {
        (Some(c), true) => Some(store.course_users.iter().filter(|u| c.matches(u)).count()),
        _ => None,
    };
    Ok(StatResult {
        statistic: stat.name.clone(),
        aggregation: stat.aggregation,
        target: stat.target,
        window: cuts.window,
        cohort: cuts.cohort.as_ref().map(|c| c.to_string()),
        cohort_size,
        groups,
    })
}

#[derive(Debug, thiserror::Error)]
pub enum CatalogError {
    #[error("{path}: {message}")]
    Read { path: String, message: String },
    #[error("statistic `{name}`: {source}")]
    Cohort {
        name: String,
        #[source]
        source: CohortError,
    },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct CatalogEntry {
    name: String,
    #[serde(default)]
    description: String,
    aggregation: Aggregation,
    target: Target,
    #[serde(default)]
    cohort: Option<String>,
    #[serde(default)]
    group_by_country: bool,
    #[serde(default)]
    countries: Option<Vec<String>>,
    #[serde(default)]
    from: Option<Timestamp>,
    #[serde(default)]
    to: Option<Timestamp>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CatalogFile {
    #[serde(default)]
    statistic: Vec<CatalogEntry>,
}

/// Named statistics available to `stat`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Catalog {
    pub stats: BTreeMap<String, StatisticDef>,
}

const BUILTIN: &str = include_str!("catalog.toml");

impl Catalog {
    pub fn builtin() -> Catalog {
        let mut c = Catalog::default();
        c.merge_toml(BUILTIN, "builtin catalog").expect("shipped catalog parses");
        c
    }

    /// Adds the statistics in `text`; an entry replaces a same-named one.
    pub fn merge_toml(&mut self, text: &str, origin: &str) -> Result<(), CatalogError> {
        let file: CatalogFile = toml::from_str(text).map_err(|e| CatalogError::Read {
            path: origin.to_string(),
            message: e.to_string(),
        })?;
        for e in file.statistic {
            let cohort = match &e.cohort {
                Some(c) => Some(c.parse::<CohortPredicate>().map_err(|source| CatalogError::Cohort {
                    name: e.name.clone(),
                    source,
                })?),
                None => None,
            };
            let space = (e.group_by_country || e.countries.is_some()).then(|| SpaceSpec {
                countries: e.countries.clone().map(|v| v.into_iter().collect()),
                group_by_country: e.group_by_country,
            });
            let window = (e.from.is_some() || e.to.is_some()).then_some(Window { start: e.from, end: e.to });
            self.stats.insert(
                e.name.clone(),
                StatisticDef {
                    name: e.name,
                    description: e.description,
                    aggregation: e.aggregation,
                    target: e.target,
                    default_cuts: CutSpec { window, cohort, space },
                },
            );
        }
        Ok(())
    }

    pub fn merge_file(&mut self, path: &Path) -> Result<(), CatalogError> {
        let text = std::fs::read_to_string(path).map_err(|e| CatalogError::Read {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        self.merge_toml(&text, &path.display().to_string())
    }

    pub fn get(&self, name: &str) -> Option<&StatisticDef> {
        self.stats.get(name)
    }
}
