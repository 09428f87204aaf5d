//! On-disk store: a directory holding `store.json` plus one RFC-4180 CSV file
//! per table, header row = field names.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{CourseStore, Table};

pub const META_FILE: &str = "store.json";

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("{path}: {source}")]
    Meta {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}: header {found:?} does not match {expected:?}")]
    Header {
        path: PathBuf,
        expected: Vec<String>,
        found: Vec<String>,
    },
    #[error("{path}: no store.json; not a store or partition directory")]
    NotAStore { path: PathBuf },
    #[error("{0}")]
    Table(#[from] super::TableNameError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> StoreError + '_ {
    move |source| StoreError::Csv {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct StoreMeta {
    course_id: String,
    schema_version: String,
    tables: Vec<String>,
}

/// Column names of a table, in file order.
pub fn columns(table: Table) -> &'static [&'static str] {
    match table {
        Table::ResourceTypes => &["resource_type_id", "resource_type_name"],
        Table::Resources => &[
            "resource_id",
            "resource_name",
            "resource_uri",
            "resource_type_id",
            "resource_parent",
            "resource_child_number",
        ],
        Table::Urls => &["url_id", "url"],
        Table::ResourceUrls => &["resource_id", "url_id"],
        Table::ObservedEvents => &[
            "observed_event_id",
            "user_id_observed",
            "resource_id",
            "url_id",
            "observed_event_timestamp",
            "observed_event_duration",
            "observed_event_ip",
            "observed_event_os",
            "observed_event_agent",
        ],
        Table::ProblemTypes => &["problem_type_id", "problem_type_name"],
        Table::Problems => &[
            "problem_id",
            "problem_parent_id",
            "order_id",
            "problem_name",
            "problem_type_id",
            "problem_release_timestamp",
            "problem_soft_deadline_timestamp",
            "problem_hard_deadline_timestamp",
            "problem_max_submission",
        ],
        Table::Submissions => &[
            "submission_id",
            "user_id",
            "problem_id",
            "submission_timestamp",
            "submission_answer",
            "submission_attempt_number",
            "submission_ip",
            "submission_os",
            "submission_agent",
            "is_submitted",
        ],
        Table::Assessments => &[
            "assessment_id",
            "submission_id",
            "assessment_grader_id",
            "assessment_grade",
            "assessment_feedback",
            "assessment_timestamp",
        ],
        Table::CollaborationTypes => &["collaboration_type_id", "collaboration_type_name"],
        Table::Collaborations => &[
            "collaboration_id",
            "user_id",
            "collaboration_type_id",
            "collaboration_parent_id",
            "collaboration_timestamp",
            "collaboration_content",
            "collaboration_ip",
            "collaboration_os",
            "collaboration_agent",
        ],
        Table::Feedbacks => &["feedback_id", "user_id", "question_id", "answer_id", "feedback_timestamp"],
        Table::Questions => &[
            "question_id",
            "question_content",
            "question_type",
            "question_reference",
            "survey_id",
        ],
        Table::Answers => &["answer_id", "answer_content"],
        Table::Surveys => &["survey_id", "survey_start_timestamp", "survey_end_timestamp"],
        Table::CourseUser => &[
            "course_user_id",
            "final_grade",
            "user_type",
            "certified",
            "country",
            "observed_id",
            "submissions_id",
            "collaborations_id",
            "feedback_id",
        ],
        Table::GlobalUser => &["global_user_id", "course_id", "course_user_id"],
    }
}

/// Serializes rows of one table to CSV bytes (header always present).
pub fn table_csv<T: Serialize>(table: Table, rows: &[T]) -> Result<Vec<u8>, csv::Error> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(columns(table))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| e.into_error().into())
}

pub(crate) fn read_table<T: DeserializeOwned>(dir: &Path, table: Table) -> Result<Vec<T>, StoreError> {
    let path = dir.join(table.file_name());
    let mut r = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(&path)
        .map_err(csv_err(&path))?;
    let found: Vec<String> = r.headers().map_err(csv_err(&path))?.iter().map(str::to_string).collect();
    let expected: Vec<String> = columns(table).iter().map(|c| c.to_string()).collect();
    if found != expected {
        return Err(StoreError::Header { path, expected, found });
    }
    r.deserialize().collect::<Result<Vec<T>, _>>().map_err(csv_err(&path))
}

impl CourseStore {
    /// Rendered CSV bytes of one table.
    pub fn table_bytes(&self, table: Table) -> Result<Vec<u8>, csv::Error> {
        match table {
            Table::ResourceTypes => table_csv(table, &self.resource_types),
            Table::Resources => table_csv(table, &self.resources),
            Table::Urls => table_csv(table, &self.urls),
            Table::ResourceUrls => table_csv(table, &self.resource_urls),
            Table::ObservedEvents => table_csv(table, &self.observed_events),
            Table::ProblemTypes => table_csv(table, &self.problem_types),
            Table::Problems => table_csv(table, &self.problems),
            Table::Submissions => table_csv(table, &self.submissions),
            Table::Assessments => table_csv(table, &self.assessments),
            Table::CollaborationTypes => table_csv(table, &self.collaboration_types),
            Table::Collaborations => table_csv(table, &self.collaborations),
            Table::Feedbacks => table_csv(table, &self.feedbacks),
            Table::Questions => table_csv(table, &self.questions),
            Table::Answers => table_csv(table, &self.answers),
            Table::Surveys => table_csv(table, &self.surveys),
            Table::CourseUser => table_csv(table, &self.course_users),
            Table::GlobalUser => table_csv(table, &self.global_users),
        }
    }

    /// Writes the present tables into `dir`; returns the number of bytes written.
    pub fn save(&self, dir: &Path) -> Result<u64, StoreError> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let mut total = 0u64;
        for table in &self.present {
            let path = dir.join(table.file_name());
            let bytes = self.table_bytes(*table).map_err(csv_err(&path))?;
            write_file(&path, &bytes)?;
            total += bytes.len() as u64;
        }
        let meta = StoreMeta {
            course_id: self.course_id.clone(),
            schema_version: self.schema_version.clone(),
            tables: self.present.iter().map(|t| t.name().to_string()).collect(),
        };
        let path = dir.join(META_FILE);
        let mut bytes = serde_json::to_vec_pretty(&meta).map_err(|source| StoreError::Meta {
            path: path.clone(),
            source,
        })?;
        bytes.push(b'\n');
        write_file(&path, &bytes)?;
        Ok(total + bytes.len() as u64)
    }

    /// Loads a store or a partition course directory. Tables not listed in
    /// `store.json` are absent from the result.
    pub fn load(dir: &Path) -> Result<CourseStore, StoreError> {
        let meta_path = dir.join(META_FILE);
        if !meta_path.is_file() {
            return Err(StoreError::NotAStore { path: dir.to_path_buf() });
        }
        let text = fs::read(&meta_path).map_err(io_err(&meta_path))?;
        let meta: StoreMeta = serde_json::from_slice(&text).map_err(|source| StoreError::Meta {
            path: meta_path.clone(),
            source,
        })?;
        let present: BTreeSet<Table> = meta
            .tables
            .iter()
            .map(|n| n.parse::<Table>())
            .collect::<Result<_, _>>()?;

        let mut s = CourseStore::new(meta.course_id);
        s.schema_version = meta.schema_version;
        s.present = present.clone();
        for t in present {
            match t {
                Table::ResourceTypes => s.resource_types = read_table(dir, t)?,
                Table::Resources => s.resources = read_table(dir, t)?,
                Table::Urls => s.urls = read_table(dir, t)?,
                Table::ResourceUrls => s.resource_urls = read_table(dir, t)?,
                Table::ObservedEvents => s.observed_events = read_table(dir, t)?,
                Table::ProblemTypes => s.problem_types = read_table(dir, t)?,
                Table::Problems => s.problems = read_table(dir, t)?,
                Table::Submissions => s.submissions = read_table(dir, t)?,
                Table::Assessments => s.assessments = read_table(dir, t)?,
                Table::CollaborationTypes => s.collaboration_types = read_table(dir, t)?,
                Table::Collaborations => s.collaborations = read_table(dir, t)?,
                Table::Feedbacks => s.feedbacks = read_table(dir, t)?,
                Table::Questions => s.questions = read_table(dir, t)?,
                Table::Answers => s.answers = read_table(dir, t)?,
                Table::Surveys => s.surveys = read_table(dir, t)?,
                Table::CourseUser => s.course_users = read_table(dir, t)?,
                Table::GlobalUser => s.global_users = read_table(dir, t)?,
            }
        }
        Ok(s)
    }
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
    let mut f = fs::File::create(path).map_err(io_err(path))?;
    f.write_all(bytes).map_err(io_err(path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::*;
    use crate::time::{Duration, Timestamp};

    #[test]
    fn save_load_round_trip_with_awkward_text() {
        let mut s = CourseStore::new("MITx/6.002x").with_fixed_dictionaries();
        s.resources.push(Resource {
            resource_id: 1,
            resource_name: "Lecture, \"intro\"\nline two".into(),
            resource_uri: "i4x://a".into(),
            resource_type_id: 1,
            resource_parent: None,
            resource_child_number: Some(3),
        });
        s.urls.push(Url { url_id: 1, url: "https://x/y?a=1,b=2".into() });
        s.resource_urls.push(ResourceUrl { resource_id: 1, url_id: 1 });
        s.observed_events.push(ObservedEvent {
            observed_event_id: 1,
            user_id_observed: 77,
            resource_id: 1,
            url_id: 1,
            observed_event_timestamp: Timestamp::from_ymd_hms(2013, 3, 4, 5, 6, 7),
            observed_event_duration: Duration::from_millis(1500),
            observed_event_ip: "10.0.0.1".into(),
            observed_event_os: "Linux".into(),
            observed_event_agent: "Mozilla/5.0 (X11; Linux x86_64)".into(),
        });
        s.assessments.push(Assessment {
            assessment_id: 1,
            submission_id: 1,
            assessment_grader_id: 0,
            assessment_grade: 0.1 + 0.2,
            assessment_feedback: String::new(),
            assessment_timestamp: Timestamp::from_ymd_hms(2013, 3, 4, 5, 6, 7),
        });
        let dir = tempfile::tempdir().unwrap();
        s.save(dir.path()).unwrap();
        let back = CourseStore::load(dir.path()).unwrap();
        assert_eq!(back, s);
        let header = std::fs::read_to_string(dir.path().join("surveys.csv")).unwrap();
        assert_eq!(header, "survey_id,survey_start_timestamp,survey_end_timestamp\n");
    }

    #[test]
    fn missing_meta_is_an_io_class_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            CourseStore::load(dir.path()),
            Err(StoreError::NotAStore { .. })
        ));
    }

    #[test]
    fn partial_store_loads_listed_tables_only() {
        let mut s = CourseStore::new("c").with_fixed_dictionaries();
        let keep: BTreeSet<Table> = [Table::ResourceTypes, Table::Urls].into_iter().collect();
        s.restrict_to(&keep);
        let dir = tempfile::tempdir().unwrap();
        s.save(dir.path()).unwrap();
        assert!(!dir.path().join("course_user.csv").exists());
        let back = CourseStore::load(dir.path()).unwrap();
        assert_eq!(back.present, keep);
        assert_eq!(back.resource_types.len(), 8);
    }
}
