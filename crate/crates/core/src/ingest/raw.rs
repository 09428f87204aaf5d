//! The canonical raw event: one JSON object per line.
//!
//! ```json
//! {"raw_user":"u0001","event_kind":"video_play","uri":"i4x://c/video/w1v1",
//!  "url":"https://courses.example.org/c/courseware/w1/v1",
//!  "timestamp":"2013-03-04T09:30:00.000Z","payload":{},
//!  "ip":"10.0.0.1","os":"Linux","agent":"Mozilla/5.0"}
//! ```

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::time::Timestamp;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    PageView,
    VideoPlay,
    ProblemCheck,
    ProblemSave,
    ForumPost,
    ForumVote,
    WikiEdit,
    SurveyAnswer,
}

impl EventKind {
    pub const ALL: [EventKind; 8] = [
        EventKind::PageView,
        EventKind::VideoPlay,
        EventKind::ProblemCheck,
        EventKind::ProblemSave,
        EventKind::ForumPost,
        EventKind::ForumVote,
        EventKind::WikiEdit,
        EventKind::SurveyAnswer,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EventKind::PageView => "page_view",
            EventKind::VideoPlay => "video_play",
            EventKind::ProblemCheck => "problem_check",
            EventKind::ProblemSave => "problem_save",
            EventKind::ForumPost => "forum_post",
            EventKind::ForumVote => "forum_vote",
            EventKind::WikiEdit => "wiki_edit",
            EventKind::SurveyAnswer => "survey_answer",
        }
    }

    /// Kinds that produce an observed-event row (a visit to a resource).
    pub fn is_observed(self) -> bool {
        matches!(
            self,
            EventKind::PageView | EventKind::VideoPlay | EventKind::ForumPost | EventKind::ForumVote
        )
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EventKind {
    type Err = ();
    fn from_str(s: &str) -> Result<Self, ()> {
        EventKind::ALL.iter().copied().find(|k| k.name() == s).ok_or(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawEvent {
    pub raw_user: String,
    pub event_kind: EventKind,
    #[serde(default)]
    pub uri: String,
    #[serde(default)]
    pub url: String,
    pub timestamp: Timestamp,
    #[serde(default)]
    pub payload: Map<String, Value>,
    #[serde(default)]
    pub ip: String,
    #[serde(default)]
    pub os: String,
    #[serde(default)]
    pub agent: String,
}

impl RawEvent {
    pub fn payload_str(&self, key: &str) -> Option<&str> {
        self.payload.get(key).and_then(Value::as_str)
    }

    /// Payload value as text: strings verbatim, anything else as compact JSON.
    pub fn payload_text(&self, key: &str) -> Option<String> {
        self.payload.get(key).map(|v| match v {
            Value::String(s) => s.clone(),
            other => other.to_string(),
        })
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("raw events always serialize")
    }
}

/// Why a well-formed JSON line could not become an event.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RejectReason(pub String);

impl RejectReason {
    pub fn new(code: impl Into<String>) -> Self {
        RejectReason(code.into())
    }
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

fn text_field(obj: &Map<String, Value>, key: &str, required: bool) -> Result<String, RejectReason> {
    match obj.get(key) {
        Some(Value::String(s)) => Ok(s.clone()),
        Some(Value::Null) | None if !required => Ok(String::new()),
        Some(Value::Number(n)) if !required => Ok(n.to_string()),
        Some(_) => Err(RejectReason::new(format!("bad_field:{key}"))),
        None => Err(RejectReason::new(format!("missing_field:{key}"))),
    }
}

pub(crate) fn parse_timestamp(text: &str) -> Result<Timestamp, RejectReason> {
    let t = Timestamp::parse(text).map_err(|_| RejectReason::new("bad_timestamp"))?;
    if !t.in_event_range() {
        return Err(RejectReason::new("timestamp_out_of_range"));
    }
    Ok(t)
}

pub(crate) fn parse_kind(text: &str) -> Result<EventKind, RejectReason> {
    text.parse()
        .map_err(|_| RejectReason::new(format!("unknown_event_kind:{text}")))
}

/// Converts one canonical JSON object into an event, naming the first problem found.
pub fn canonical_event(value: Value) -> Result<RawEvent, RejectReason> {
    let Value::Object(obj) = value else {
        return Err(RejectReason::new("not_an_object"));
    };
    let raw_user = text_field(&obj, "raw_user", true)?;
    if raw_user.is_empty() {
        return Err(RejectReason::new("missing_field:raw_user"));
    }
    let event_kind = parse_kind(&text_field(&obj, "event_kind", true)?)?;
    let timestamp = parse_timestamp(&text_field(&obj, "timestamp", true)?)?;
    let payload = match obj.get("payload") {
        None | Some(Value::Null) => Map::new(),
        Some(Value::Object(m)) => m.clone(),
        Some(_) => return Err(RejectReason::new("bad_field:payload")),
    };
    Ok(RawEvent {
        raw_user,
        event_kind,
        uri: text_field(&obj, "uri", false)?,
        url: text_field(&obj, "url", false)?,
        timestamp,
        payload,
        ip: text_field(&obj, "ip", false)?,
        os: text_field(&obj, "os", false)?,
        agent: text_field(&obj, "agent", false)?,
    })
}
