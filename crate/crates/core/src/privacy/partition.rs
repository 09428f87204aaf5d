//! Access-level partitions: which tables a researcher receives, written as a
//! directory of CSV tables plus a checksummed manifest.
//!
//! Layout of a partition directory:
//!
//! ```text
//! manifest.json
//! global_user.csv            (multi_course only)
//! <course dir>/store.json
//! <course dir>/<table>.csv
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::identity::Pseudonymizer;
use crate::schema::{
    table_csv, write_file, CourseStore, GlobalUser, StoreError, Table, TableNameError, PII_TABLE_NAMES,
};
use crate::time::Timestamp;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const PARTITION_FORMAT: &str = "moocdb-partition-1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Linkage {
    MultiCourse,
    SingleCourse,
    TableLevel,
}

impl Linkage {
    pub const ALL: [Linkage; 3] = [Linkage::MultiCourse, Linkage::SingleCourse, Linkage::TableLevel];

    pub fn name(self) -> &'static str {
        match self {
            Linkage::MultiCourse => "multi_course",
            Linkage::SingleCourse => "single_course",
            Linkage::TableLevel => "table_level",
        }
    }
}

impl FromStr for Linkage {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Linkage::ALL
            .iter()
            .copied()
            .find(|l| l.name() == s)
            .ok_or_else(|| format!("unknown level `{s}` (expected multi_course, single_course or table_level)"))
    }
}

/// One of the six access levels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct AccessLevel {
    pub linkage: Linkage,
    pub collaboration: bool,
}

impl AccessLevel {
    pub fn new(linkage: Linkage, collaboration: bool) -> Self {
        AccessLevel { linkage, collaboration }
    }

    pub fn all() -> Vec<AccessLevel> {
        Linkage::ALL
            .iter()
            .flat_map(|&l| [AccessLevel::new(l, true), AccessLevel::new(l, false)])
            .collect()
    }

    /// Exactly the tables granted at this level.
    pub fn tables(self) -> BTreeSet<Table> {
        let mut t: BTreeSet<Table> = BASE_TABLES.iter().copied().collect();
        if self.collaboration {
            t.insert(Table::Collaborations);
            t.insert(Table::CollaborationTypes);
        }
        match self.linkage {
            Linkage::MultiCourse => {
                t.insert(Table::CourseUser);
                t.insert(Table::GlobalUser);
            }
            Linkage::SingleCourse => {
                t.insert(Table::CourseUser);
            }
            Linkage::TableLevel => {}
        }
        t
    }
}

impl fmt::Display for AccessLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = if self.collaboration { "with" } else { "no" };
        write!(f, "{}/{}-collaboration", self.linkage.name(), c)
    }
}

/// Mode and dictionary tables shared by every level.
pub const BASE_TABLES: [Table; 13] = [
    Table::ResourceTypes,
    Table::Resources,
    Table::Urls,
    Table::ResourceUrls,
    Table::ObservedEvents,
    Table::ProblemTypes,
    Table::Problems,
    Table::Submissions,
    Table::Assessments,
    Table::Feedbacks,
    Table::Questions,
    Table::Answers,
    Table::Surveys,
];

#[derive(Debug, thiserror::Error)]
pub enum PartitionError {
    #[error("the PII table is never exported")]
    PiiRefused,
    #[error("table `{table}` is not granted at level {level}")]
    NotGranted { table: Table, level: AccessLevel },
    #[error(transparent)]
    UnknownTable(TableNameError),
    #[error("course `{0}` appears twice")]
    DuplicateCourse(String),
    #[error("courses `{0}` and `{1}` map to the same directory name")]
    DirectoryClash(String, String),
    #[error("jitter requested without key material")]
    JitterNeedsKey,
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: manifest: {source}")]
    Manifest {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

#[derive(Debug, Clone, Default)]
pub struct PartitionOptions<'k> {
    /// Restrict to these table names (must be granted); `None` = everything granted.
    pub requested: Option<Vec<String>>,
    /// Shift all timestamps of each course by one keyed offset.
    pub jitter: Option<(&'k Pseudonymizer, i64)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestCourse {
    pub course_id: String,
    pub dir: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionManifest {
    pub format: String,
    pub level: AccessLevel,
    pub courses: Vec<ManifestCourse>,
    pub tables: Vec<String>,
    pub excluded_tables: Vec<String>,
    pub id_namespaces: BTreeMap<String, String>,
    pub jittered: bool,
    /// Relative path → SHA-256 of the file bytes.
    pub files: BTreeMap<String, String>,
    /// SHA-256 over the sorted `path:digest` lines.
    pub checksum: String,
}

impl PartitionManifest {
    pub fn load(dir: &Path) -> Result<PartitionManifest, PartitionError> {
        let path = dir.join(MANIFEST_FILE);
        let bytes = fs::read(&path).map_err(|source| PartitionError::Io {
            path: path.clone(),
            source,
        })?;
        serde_json::from_slice(&bytes).map_err(|source| PartitionError::Manifest { path, source })
    }

    pub fn table_set(&self) -> BTreeSet<Table> {
        self.tables.iter().filter_map(|t| t.parse().ok()).collect()
    }
}

fn namespace_notes(level: AccessLevel) -> BTreeMap<String, String> {
    let mut m = BTreeMap::new();
    let mode_note = |what: &str| format!("keyed pseudonym of the {what} mode; disjoint from every other namespace");
    m.insert("observed_events.user_id_observed".into(), mode_note("observing"));
    m.insert("submissions.user_id".into(), mode_note("submitting"));
    m.insert(
        "assessments.assessment_grader_id".into(),
        "submitting-mode pseudonym of a peer or staff grader; 0 = automated grader".into(),
    );
    if level.collaboration {
        m.insert("collaborations.user_id".into(), mode_note("collaborating"));
    }
    m.insert("feedbacks.user_id".into(), mode_note("feedback"));
    if level.linkage != Linkage::TableLevel {
        m.insert(
            "course_user.course_user_id".into(),
            "per-course pseudonym; the row links it to the four mode ids".into(),
        );
    }
    if level.linkage == Linkage::MultiCourse {
        m.insert(
            "global_user.global_user_id".into(),
            "cross-course pseudonym; links course_user ids of one person".into(),
        );
    }
    m
}

/// Directory name for a course id: path-unsafe characters become `_`.
pub fn course_dir_name(course_id: &str) -> String {
    let s: String = course_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '.' | '-' | '_') { c } else { '_' })
        .collect();
    if s.is_empty() || s.starts_with('.') {
        format!("_{s}")
    } else {
        s
    }
}

fn shift_store(s: &mut CourseStore, ms: i64) {
    let sh = |t: &mut Timestamp| *t = t.plus_millis(ms);
    let sho = |t: &mut Option<Timestamp>| {
        if let Some(t) = t {
            *t = t.plus_millis(ms)
        }
    };
    s.observed_events.iter_mut().for_each(|e| sh(&mut e.observed_event_timestamp));
    for p in &mut s.problems {
        sho(&mut p.problem_release_timestamp);
        sho(&mut p.problem_soft_deadline_timestamp);
        sho(&mut p.problem_hard_deadline_timestamp);
    }
    s.submissions.iter_mut().for_each(|x| sh(&mut x.submission_timestamp));
    s.assessments.iter_mut().for_each(|x| sh(&mut x.assessment_timestamp));
    s.collaborations.iter_mut().for_each(|x| sh(&mut x.collaboration_timestamp));
    s.feedbacks.iter_mut().for_each(|x| sh(&mut x.feedback_timestamp));
    for v in &mut s.surveys {
        sh(&mut v.survey_start_timestamp);
        sh(&mut v.survey_end_timestamp);
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Resolves the granted table set, honouring an optional request list.
pub fn granted_tables(level: AccessLevel, requested: Option<&[String]>) -> Result<BTreeSet<Table>, PartitionError> {
    let granted = level.tables();
    let Some(req) = requested else {
        return Ok(granted);
    };
    let mut out = BTreeSet::new();
    for name in req {
        if PII_TABLE_NAMES.contains(&name.as_str()) {
            return Err(PartitionError::PiiRefused);
        }
        let t: Table = name.parse().map_err(|e| match e {
            TableNameError::PiiRefused => PartitionError::PiiRefused,
            other => PartitionError::UnknownTable(other),
        })?;
        if !granted.contains(&t) {
            return Err(PartitionError::NotGranted { table: t, level });
        }
        out.insert(t);
    }
    Ok(out)
}

/// Writes the partition of `stores` for `level` into `out` (created; prior
/// contents of the same files are overwritten).
pub fn export_partition(
    stores: &[CourseStore],
    level: AccessLevel,
    out: &Path,
    opts: &PartitionOptions<'_>,
) -> Result<PartitionManifest, PartitionError> {
    let tables = granted_tables(level, opts.requested.as_deref())?;
    let mut seen_courses = BTreeSet::new();
    let mut dirs: BTreeMap<String, String> = BTreeMap::new();
    for s in stores {
        if !seen_courses.insert(s.course_id.clone()) {
            return Err(PartitionError::DuplicateCourse(s.course_id.clone()));
        }
        let d = course_dir_name(&s.course_id);
        if let Some(prev) = dirs.insert(d, s.course_id.clone()) {
            return Err(PartitionError::DirectoryClash(prev, s.course_id.clone()));
        }
    }
    fs::create_dir_all(out).map_err(|source| PartitionError::Io {
        path: out.to_path_buf(),
        source,
    })?;

    let per_course: BTreeSet<Table> = tables.iter().copied().filter(|t| *t != Table::GlobalUser).collect();
    let mut files = BTreeMap::new();
    let mut courses = Vec::new();
    let mut global_rows: Vec<GlobalUser> = Vec::new();
    for s in stores {
        let dir = course_dir_name(&s.course_id);
        let mut part = s.clone();
        part.restrict_to(&per_course);
        if let Some((p, range)) = opts.jitter {
            shift_store(&mut part, p.time_shift_ms(&s.course_id, range));
        }
        let course_path = out.join(&dir);
        part.save(&course_path)?;
        for name in fs::read_dir(&course_path)
            .map_err(|source| PartitionError::Io {
                path: course_path.clone(),
                source,
            })?
            .filter_map(|e| e.ok())
            .map(|e| e.file_name().to_string_lossy().into_owned())
        {
            let path = course_path.join(&name);
            let is_ours = name == crate::schema::META_FILE || per_course.iter().any(|t| t.file_name() == name);
            if !is_ours {
                // Left over from an earlier export of a wider level.
                fs::remove_file(&path).map_err(|source| PartitionError::Io { path, source })?;
                continue;
            }
            let bytes = fs::read(&path).map_err(|source| PartitionError::Io { path, source })?;
            files.insert(format!("{dir}/{name}"), sha256_hex(&bytes));
        }
        if tables.contains(&Table::GlobalUser) {
            global_rows.extend(s.global_users.iter().filter(|g| g.course_id == s.course_id).cloned());
        }
        courses.push(ManifestCourse {
            course_id: s.course_id.clone(),
            dir,
        });
    }
    let global_path = out.join(Table::GlobalUser.file_name());
    if tables.contains(&Table::GlobalUser) {
        global_rows.sort();
        let bytes = table_csv(Table::GlobalUser, &global_rows).map_err(|source| StoreError::Csv {
            path: global_path.clone(),
            source,
        })?;
        write_file(&global_path, &bytes)?;
        files.insert(Table::GlobalUser.file_name(), sha256_hex(&bytes));
    } else if global_path.exists() {
        fs::remove_file(&global_path).map_err(|source| PartitionError::Io {
            path: global_path.clone(),
            source,
        })?;
    }

    let listing: String = files.iter().map(|(p, h)| format!("{p}:{h}\n")).collect();
    let mut excluded: Vec<String> = Table::ALL
        .iter()
        .filter(|t| !tables.contains(t))
        .map(|t| t.name().to_string())
        .collect();
    excluded.push(PII_TABLE_NAMES[0].to_string());
    let manifest = PartitionManifest {
        format: PARTITION_FORMAT.to_string(),
        level,
        courses,
        tables: tables.iter().map(|t| t.name().to_string()).collect(),
        excluded_tables: excluded,
        id_namespaces: namespace_notes(level),
        jittered: opts.jitter.is_some(),
        files,
        checksum: sha256_hex(listing.as_bytes()),
    };
    let path = out.join(MANIFEST_FILE);
    let mut bytes = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    bytes.push(b'\n');
    write_file(&path, &bytes)?;
    Ok(manifest)
}

/// Loads every course of a partition (tables limited to what was exported)
/// plus the top-level global table when present.
pub fn load_partition(dir: &Path) -> Result<(PartitionManifest, Vec<CourseStore>, Vec<GlobalUser>), PartitionError> {
    let manifest = PartitionManifest::load(dir)?;
    let mut stores = Vec::new();
    for c in &manifest.courses {
        stores.push(CourseStore::load(&dir.join(&c.dir))?);
    }
    let global = if manifest.table_set().contains(&Table::GlobalUser) {
        crate::schema::read_table(dir, Table::GlobalUser)?
    } else {
        Vec::new()
    };
    Ok((manifest, stores, global))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn six_levels_and_matrix() {
        let all = AccessLevel::all();
        assert_eq!(all.len(), 6);
        let tl = AccessLevel::new(Linkage::TableLevel, false).tables();
        assert_eq!(tl.len(), 13);
        let mc = AccessLevel::new(Linkage::MultiCourse, true).tables();
        assert_eq!(mc.len(), 17);
        let sc = AccessLevel::new(Linkage::SingleCourse, false).tables();
        assert!(sc.contains(&Table::CourseUser) && !sc.contains(&Table::GlobalUser));
    }

    #[test]
    fn pii_and_ungranted_requests_refused() {
        let lvl = AccessLevel::new(Linkage::TableLevel, true);
        assert!(matches!(granted_tables(lvl, Some(&["user_pii".into()])), Err(PartitionError::PiiRefused)));
        assert!(matches!(
            granted_tables(lvl, Some(&["course_user".into()])),
            Err(PartitionError::NotGranted { .. })
        ));
        let ok = granted_tables(lvl, Some(&["submissions".into()])).unwrap();
        assert_eq!(ok.len(), 1);
    }

    #[test]
    fn dir_names() {
        assert_eq!(course_dir_name("MITx/6.002x/2013_Spring"), "MITx_6.002x_2013_Spring");
        assert_eq!(course_dir_name(".."), "_..");
    }
}
