//! Source adapters turn one raw log file into a stream of [`RawEvent`]s.
//!
//! Two adapters ship: the canonical JSON-lines format and the verbose
//! tracking-log dialect produced by the synthetic generator. Other platforms
//! plug in by implementing [`SourceAdapter`].

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde_json::{json, Map, Value};

use super::raw::{canonical_event, parse_kind, parse_timestamp, EventKind, RawEvent, RejectReason};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AdapterInfo {
    pub name: &'static str,
    pub version: &'static str,
}

/// Fatal failure while reading a source; the whole ingestion is abandoned.
#[derive(Debug, thiserror::Error)]
#[error("{source_name}:{line_no}: {message}")]
pub struct AdapterError {
    pub source_name: String,
    pub line_no: u64,
    pub message: String,
}

/// One non-blank input line after adaptation.
#[derive(Debug, Clone, PartialEq)]
pub enum LineOutcome {
    Event(RawEvent),
    Rejected(RejectReason),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SourceLine {
    pub line_no: u64,
    pub outcome: LineOutcome,
}

pub trait SourceAdapter: Send + Sync {
    fn describe(&self) -> AdapterInfo;

    /// Interprets one non-blank line. `Err` is fatal (the line is not even
    /// well-formed for this dialect); `Ok(Rejected)` is a recoverable reject.
    fn parse_line(&self, line: &str) -> Result<LineOutcome, String>;

    /// Reads a whole file. Blank lines are skipped and not counted.
    fn open(&self, path: &Path) -> Result<Vec<SourceLine>, AdapterError> {
        let name = path.display().to_string();
        let file = File::open(path).map_err(|e| AdapterError {
            source_name: name.clone(),
            line_no: 0,
            message: e.to_string(),
        })?;
        read_lines(self, BufReader::new(file), &name)
    }
}

/// Drives an adapter over any buffered reader.
pub fn read_lines<A: SourceAdapter + ?Sized>(
    adapter: &A,
    reader: impl BufRead,
    source_name: &str,
) -> Result<Vec<SourceLine>, AdapterError> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx as u64 + 1;
        let fail = |message: String| AdapterError {
            source_name: source_name.to_string(),
            line_no,
            message,
        };
        let line = line.map_err(|e| fail(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let outcome = adapter.parse_line(&line).map_err(fail)?;
        out.push(SourceLine { line_no, outcome });
    }
    Ok(out)
}

fn parse_json(line: &str) -> Result<Value, String> {
    serde_json::from_str(line).map_err(|e| format!("malformed JSON: {e}"))
}

fn outcome(r: Result<RawEvent, RejectReason>) -> LineOutcome {
    match r {
        Ok(e) => LineOutcome::Event(e),
        Err(reason) => LineOutcome::Rejected(reason),
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct CanonicalAdapter;

impl SourceAdapter for CanonicalAdapter {
    fn describe(&self) -> AdapterInfo {
        AdapterInfo {
            name: "canonical",
            version: "1",
        }
    }

    fn parse_line(&self, line: &str) -> Result<LineOutcome, String> {
        Ok(outcome(canonical_event(parse_json(line)?)))
    }
}

/// Tracking-log dialect with long field names and a nested context block.
#[derive(Debug, Clone, Copy, Default)]
pub struct VerboseAdapter;

const VERBOSE_KINDS: [(EventKind, &str); 8] = [
    (EventKind::PageView, "seq_goto"),
    (EventKind::VideoPlay, "play_video"),
    (EventKind::ProblemCheck, "problem_check"),
    (EventKind::ProblemSave, "problem_save"),
    (EventKind::ForumPost, "edx.forum.comment.created"),
    (EventKind::ForumVote, "edx.forum.thread.voted"),
    (EventKind::WikiEdit, "edx.wiki.page.edited"),
    (EventKind::SurveyAnswer, "edx.survey.response.submitted"),
];

fn verbose_name(kind: EventKind) -> &'static str {
    VERBOSE_KINDS.iter().find(|(k, _)| *k == kind).map(|(_, n)| *n).expect("all kinds mapped")
}

fn verbose_kind(name: &str) -> Result<EventKind, RejectReason> {
    VERBOSE_KINDS
        .iter()
        .find(|(_, n)| *n == name)
        .map(|(k, _)| Ok(*k))
        .unwrap_or_else(|| parse_kind(name))
}

fn str_at<'a>(v: &'a Value, path: &[&str]) -> Option<&'a str> {
    let mut cur = v;
    for p in path {
        cur = cur.get(p)?;
    }
    cur.as_str()
}

impl VerboseAdapter {
    fn convert(v: &Value) -> Result<RawEvent, RejectReason> {
        if !v.is_object() {
            return Err(RejectReason::new("not_an_object"));
        }
        let need = |path: &[&str], name: &str| {
            str_at(v, path).ok_or_else(|| RejectReason::new(format!("missing_field:{name}")))
        };
        let raw_user = need(&["username"], "username")?.to_string();
        if raw_user.is_empty() {
            return Err(RejectReason::new("missing_field:username"));
        }
        let event_kind = verbose_kind(need(&["event_type"], "event_type")?)?;
        let timestamp = parse_timestamp(need(&["time"], "time")?)?;
        let payload = match v.get("event").and_then(|e| e.get("event_payload_fields")) {
            None | Some(Value::Null) => Map::new(),
            Some(Value::Object(m)) => m.clone(),
            Some(_) => return Err(RejectReason::new("bad_field:event_payload_fields")),
        };
        let opt = |path: &[&str]| str_at(v, path).unwrap_or("").to_string();
        Ok(RawEvent {
            raw_user,
            event_kind,
            uri: opt(&["event", "resource_identifier_uri"]),
            url: opt(&["page"]),
            timestamp,
            payload,
            ip: opt(&["ip"]),
            os: opt(&["context", "client_operating_system_platform_description"]),
            agent: opt(&["agent"]),
        })
    }

    /// Renders an event in this dialect. `session` is any stable per-user token.
    pub fn render(event: &RawEvent, course_id: &str, session: &str) -> String {
        let org = course_id.split('/').next().unwrap_or(course_id);
        let path = event
            .url
            .split_once("://")
            .and_then(|(_, rest)| rest.split_once('/'))
            .map(|(_, p)| format!("/{p}"))
            .unwrap_or_default();
        let v = json!({
            "username": event.raw_user,
            "event_type": verbose_name(event.event_kind),
            "event_source": if event.event_kind.is_observed() { "browser" } else { "server" },
            "time": event.timestamp.to_iso(),
            "ip": event.ip,
            "agent": event.agent,
            "host": "courses.example.org",
            "referer": event.url,
            "accept_language": "en-US,en;q=0.8,fr;q=0.6",
            "session": session,
            "page": event.url,
            "context": {
                "course_id": course_id,
                "org_id": org,
                "path": path,
                "client_operating_system_platform_description": event.os,
                "module": { "usage_key": event.uri },
            },
            "event": {
                "resource_identifier_uri": event.uri,
                "event_payload_fields": event.payload,
            },
        });
        v.to_string()
    }
}

impl SourceAdapter for VerboseAdapter {
    fn describe(&self) -> AdapterInfo {
        AdapterInfo {
            name: "synthgen-verbose",
            version: "1",
        }
    }

    fn parse_line(&self, line: &str) -> Result<LineOutcome, String> {
        Ok(outcome(VerboseAdapter::convert(&parse_json(line)?)))
    }
}

/// Adapters addressable by name.
pub struct AdapterRegistry {
    adapters: BTreeMap<String, Box<dyn SourceAdapter>>,
}

impl Default for AdapterRegistry {
    fn default() -> Self {
        let mut r = AdapterRegistry {
            adapters: BTreeMap::new(),
        };
        r.register(Box::new(CanonicalAdapter));
        r.register(Box::new(VerboseAdapter));
        r
    }
}

impl AdapterRegistry {
    pub fn register(&mut self, adapter: Box<dyn SourceAdapter>) {
        self.adapters.insert(adapter.describe().name.to_string(), adapter);
    }

    pub fn get(&self, name: &str) -> Option<&dyn SourceAdapter> {
        self.adapters.get(name).map(|a| a.as_ref())
    }

    pub fn names(&self) -> Vec<&str> {
        self.adapters.keys().map(String::as_str).collect()
    }

    /// Default adapter for a file: `*.verbose.jsonl` → synthgen-verbose, else canonical.
    pub fn for_path(path: &Path) -> &'static str {
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
        if name.ends_with(".verbose.jsonl") {
            "synthgen-verbose"
        } else {
            "canonical"
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::time::Timestamp;

    fn sample() -> RawEvent {
        let mut payload = Map::new();
        payload.insert("answer".into(), json!("x=3"));
        payload.insert("correct".into(), json!(true));
        RawEvent {
            raw_user: "u7".into(),
            event_kind: EventKind::ProblemCheck,
            uri: "hw1/p1/a".into(),
            url: "https://courses.example.org/c/courseware/w1".into(),
            timestamp: Timestamp::from_ymd_hms(2013, 3, 5, 1, 2, 3),
            payload,
            ip: "10.0.0.9".into(),
            os: "Windows".into(),
            agent: "Mozilla/5.0".into(),
        }
    }

    #[test]
    fn verbose_round_trip() {
        let e = sample();
        let line = VerboseAdapter::render(&e, "MITx/6.002x/2013_Spring", "abc");
        assert_eq!(VerboseAdapter.parse_line(&line).unwrap(), LineOutcome::Event(e));
        assert!(line.len() > sample().to_json_line().len());
    }

    #[test]
    fn malformed_json_is_fatal_with_line_number() {
        let input = "\n{\"raw_user\":\"u\",\"event_kind\":\"page_view\",\"timestamp\":\"2013-03-04\"}\n{oops\n";
        let err = read_lines(&CanonicalAdapter, input.as_bytes(), "log.jsonl").unwrap_err();
        assert_eq!(err.line_no, 3);
        assert!(err.to_string().starts_with("log.jsonl:3:"));
    }

    #[test]
    fn blank_lines_skipped_and_rejects_kept() {
        let input = "{\"raw_user\":\"u\",\"event_kind\":\"nap\",\"timestamp\":\"2013-03-04\"}\n\n";
        let lines = read_lines(&CanonicalAdapter, input.as_bytes(), "x").unwrap();
        assert_eq!(lines.len(), 1);
        assert!(matches!(lines[0].outcome, LineOutcome::Rejected(_)));
    }

    #[test]
    fn registry_lookup() {
        let r = AdapterRegistry::default();
        assert_eq!(r.names(), ["canonical", "synthgen-verbose"]);
        assert!(r.get("canonical").is_some());
        assert_eq!(AdapterRegistry::for_path(Path::new("a/events.verbose.jsonl")), "synthgen-verbose");
        assert_eq!(AdapterRegistry::for_path(Path::new("a/events.jsonl")), "canonical");
    }
}
