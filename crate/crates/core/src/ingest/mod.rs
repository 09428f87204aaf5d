//! Raw logs → validated course store.
//!
//! Sources are parsed in parallel, merged by timestamp, then run through two
//! passes: dictionaries first, rows second. The store is written only after
//! it validates, and every line read is accounted for as either an emitted
//! event or a reject.

pub mod adapter;
pub mod durations;
pub mod populate;
pub mod raw;
pub mod references;
pub mod structure;

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

pub use adapter::{
    AdapterError, AdapterInfo, AdapterRegistry, CanonicalAdapter, LineOutcome, SourceAdapter,
    SourceLine, VerboseAdapter,
};
pub use durations::compute_durations;
pub use populate::{populate_tables, SequencedEvent};
pub use raw::{EventKind, RawEvent, RejectReason};
pub use references::{generate_references, Dictionaries, ReferenceError};
pub use structure::CourseStructure;

use crate::config::PipelineConfig;
use crate::privacy::identity::{IdentityError, Pseudonymizer, SecretKey};
use crate::schema::{validate_store, CourseStore, StoreError, Table, ValidationReport, META_FILE};

pub const REJECTS_FILE: &str = "rejects.jsonl";
pub const REPORT_FILE: &str = "ingest_report.json";

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error(transparent)]
    Adapter(#[from] AdapterError),
    #[error("no adapter named `{0}`")]
    UnknownAdapter(String),
    #[error(transparent)]
    Reference(#[from] ReferenceError),
    #[error(transparent)]
    Identity(#[from] IdentityError),
    #[error("populated store violates {} invariant(s); first: {}", .0.violations.len(),
            .0.violations.first().map(|v| v.to_string()).unwrap_or_default())]
    Invalid(ValidationReport),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0} exists and is not a store directory; refusing to overwrite")]
    OutputOccupied(PathBuf),
}

/// One rejected input line, as written to the sidecar.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RejectRecord {
    pub source: String,
    pub line_no: u64,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct IngestReport {
    pub lines_read: u64,
    pub events_emitted: u64,
    pub lines_rejected: u64,
    pub table_counts: BTreeMap<String, u64>,
    pub orphan_resources: Vec<String>,
    pub orphan_problems: Vec<String>,
    pub input_bytes: u64,
    pub output_bytes: u64,
    pub duration_ms: u64,
    #[serde(skip)]
    pub rejects: Vec<RejectRecord>,
}

impl IngestReport {
    /// Every non-blank line is either emitted or rejected.
    pub fn is_conserved(&self) -> bool {
        self.lines_read == self.events_emitted + self.lines_rejected
    }

    /// Output bytes over input bytes.
    pub fn compaction_ratio(&self) -> f64 {
        if self.input_bytes == 0 {
            return 0.0;
        }
        self.output_bytes as f64 / self.input_bytes as f64
    }
}

/// A parsed source: its display name and adapted lines.
#[derive(Debug, Clone)]
pub struct ParsedSource {
    pub name: String,
    pub lines: Vec<SourceLine>,
}

/// Builds and validates a store from already-adapted sources. No I/O.
pub fn build_store(
    sources: Vec<ParsedSource>,
    structure: &CourseStructure,
    config: &PipelineConfig,
    key: &SecretKey,
) -> Result<(CourseStore, IngestReport), IngestError> {
    let started = Instant::now();
    let mut report = IngestReport::default();
    let names: Vec<String> = sources.iter().map(|s| s.name.clone()).collect();

    let mut events = Vec::new();
    for (source, parsed) in sources.into_iter().enumerate() {
        for line in parsed.lines {
            report.lines_read += 1;
            match line.outcome {
                LineOutcome::Event(event) => events.push(SequencedEvent {
                    source,
                    line_no: line.line_no,
                    event,
                }),
                LineOutcome::Rejected(reason) => report.rejects.push(RejectRecord {
                    source: names[source].clone(),
                    line_no: line.line_no,
                    reason: reason.0,
                }),
            }
        }
    }
    // Stable merge: ties keep source order, then line order.
    events.sort_by_key(|e| (e.event.timestamp, e.source, e.line_no));

    let dicts = generate_references(events.iter().map(|e| &e.event), structure, config)?;
    let pseudonymizer = Pseudonymizer::new(key.clone());
    let (mut store, populated) = populate_tables(&events, &dicts, &pseudonymizer)?;
    compute_durations(&mut store, config.duration_cap());

    let validation = validate_store(&store);
    if !validation.is_valid() {
        return Err(IngestError::Invalid(validation));
    }

    report.events_emitted = populated.emitted;
    report.rejects.extend(populated.rejects.into_iter().map(|r| RejectRecord {
        source: names[r.source].clone(),
        line_no: r.line_no,
        reason: r.reason.0,
    }));
    report.rejects.sort_by(|a, b| (&a.source, a.line_no).cmp(&(&b.source, b.line_no)));
    report.lines_rejected = report.rejects.len() as u64;
    report.table_counts = Table::ALL
        .iter()
        .map(|t| (t.name().to_string(), store.row_count(*t) as u64))
        .collect();
    report.orphan_resources = dicts.orphan_resources;
    report.orphan_problems = dicts.orphan_problems;
    report.duration_ms = started.elapsed().as_millis() as u64;
    Ok((store, report))
}

/// Parses every source file in parallel with the named adapter, or the
/// adapter chosen by file suffix when `adapter` is `None`.
pub fn parse_sources(
    paths: &[PathBuf],
    adapter: Option<&str>,
    registry: &AdapterRegistry,
) -> Result<(Vec<ParsedSource>, u64), IngestError> {
    for p in paths {
        let name = adapter.unwrap_or_else(|| AdapterRegistry::for_path(p));
        if registry.get(name).is_none() {
            return Err(IngestError::UnknownAdapter(name.to_string()));
        }
    }
    let parsed: Vec<Result<(ParsedSource, u64), IngestError>> = paths
        .par_iter()
        .map(|p| {
            let name = adapter.unwrap_or_else(|| AdapterRegistry::for_path(p));
            let a = registry.get(name).expect("checked above");
            let bytes = fs::metadata(p)
                .map_err(|source| IngestError::Io {
                    path: p.clone(),
                    source,
                })?
                .len();
            let lines = a.open(p)?;
            Ok((
                ParsedSource {
                    name: p.display().to_string(),
                    lines,
                },
                bytes,
            ))
        })
        .collect();
    let mut out = Vec::with_capacity(parsed.len());
    let mut total = 0;
    for r in parsed {
        let (s, b) = r?;
        total += b;
        out.push(s);
    }
    Ok((out, total))
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> IngestError + '_ {
    move |source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Full ingestion into `out`. The store appears at `out` only if every step
/// succeeds; a failed run leaves no partial store behind.
pub fn ingest(
    paths: &[PathBuf],
    structure: &CourseStructure,
    config: &PipelineConfig,
    key: &SecretKey,
    out: &Path,
) -> Result<(CourseStore, IngestReport), IngestError> {
    let started = Instant::now();
    if out.exists() {
        let empty = fs::read_dir(out).map_err(io(out))?.next().is_none();
        if !empty && !out.join(META_FILE).is_file() {
            return Err(IngestError::OutputOccupied(out.to_path_buf()));
        }
    }
    let registry = AdapterRegistry::default();
    let (sources, input_bytes) = parse_sources(paths, config.adapter.as_deref(), &registry)?;
    let (store, mut report) = build_store(sources, structure, config, key)?;
    report.input_bytes = input_bytes;

    let file_name = out.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let staging = out.with_file_name(format!(".{file_name}.staging-{}", std::process::id()));
    if staging.exists() {
        fs::remove_dir_all(&staging).map_err(io(&staging))?;
    }
    let result = (|| {
        report.output_bytes = store.save(&staging)?;
        write_rejects(&staging.join(REJECTS_FILE), &report.rejects)?;
        report.duration_ms = started.elapsed().as_millis() as u64;
        let path = staging.join(REPORT_FILE);
        let mut json = serde_json::to_vec_pretty(&report).expect("report serializes");
        json.push(b'\n');
        fs::write(&path, json).map_err(io(&path))?;
        if out.exists() {
            fs::remove_dir_all(out).map_err(io(out))?;
        }
        fs::rename(&staging, out).map_err(io(out))
    })();
    if result.is_err() {
        let _ = fs::remove_dir_all(&staging);
    }
    result?;
    Ok((store, report))
}

fn write_rejects(path: &Path, rejects: &[RejectRecord]) -> Result<(), IngestError> {
    let f = fs::File::create(path).map_err(io(path))?;
    let mut w = std::io::BufWriter::new(f);
    for r in rejects {
        serde_json::to_writer(&mut w, r).expect("reject serializes");
        w.write_all(b"\n").map_err(io(path))?;
    }
    w.flush().map_err(io(path))
}
