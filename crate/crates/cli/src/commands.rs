use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use moocdb::analytics::{
    compute_statistic, video_homework_correlation, CapabilityError, Catalog, CohortError, CohortPredicate,
    CorrelationError, CutSpec, SpaceSpec, Window,
};
use moocdb::config::PipelineConfig;
use moocdb::export::{export_bkt, export_irt};
use moocdb::ingest::structure::CourseStructure;
use moocdb::ingest::{ingest, IngestError};
use moocdb::privacy::identity::PiiProfile;
use moocdb::privacy::partition::{export_partition, load_partition, AccessLevel, Linkage, PartitionOptions, MANIFEST_FILE};
use moocdb::privacy::{audit_linkability, derive_identities, scan_for_pii, PartitionError, Pseudonymizer, SecretKey};
use moocdb::schema::{validate_store, CourseStore, Id, Table};
use moocdb::synthgen::{generate, GenSpec, EVENTS_FILE, STRUCTURE_FILE, VERBOSE_EVENTS_FILE};
use moocdb::time::Timestamp;
use serde_json::{json, Value};

use crate::{
    AuditArgs, Cli, Command, CorrelateArgs, ExportArgs, ExportFormat, GenArgs, InArg, IngestArgs, LevelArg, LevelArgs,
    PartitionArgs, StatArgs, EXIT_ACCESS, EXIT_INVALID, EXIT_IO, EXIT_OK, EXIT_USAGE,
};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Invalid(String),
    #[error("{0}")]
    Access(String),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Usage(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Invalid(_) => EXIT_INVALID,
            CliError::Access(_) => EXIT_ACCESS,
            CliError::Io(_) => EXIT_IO,
            CliError::Usage(_) => EXIT_USAGE,
        }
    }
}

impl From<CapabilityError> for CliError {
    fn from(e: CapabilityError) -> Self {
        CliError::Access(e.to_string())
    }
}

impl From<IngestError> for CliError {
    fn from(e: IngestError) -> Self {
        match e {
            IngestError::Invalid(_) | IngestError::Reference(_) => CliError::Invalid(e.to_string()),
            _ => CliError::Io(e.to_string()),
        }
    }
}

impl From<PartitionError> for CliError {
    fn from(e: PartitionError) -> Self {
        match e {
            PartitionError::PiiRefused | PartitionError::NotGranted { .. } | PartitionError::UnknownTable(_) => {
                CliError::Access(e.to_string())
            }
            _ => CliError::Io(e.to_string()),
        }
    }
}

impl From<CohortError> for CliError {
    fn from(e: CohortError) -> Self {
        match e {
            CohortError::PiiField(_) => CliError::Access(e.to_string()),
            CohortError::Syntax(_) => CliError::Io(e.to_string()),
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::Io(format!("{}: {e}", path.display()))
}

pub struct Output {
    pub code: u8,
    pub text: String,
    pub summary: Value,
}

fn ok(text: String, summary: Value) -> Result<Output, CliError> {
    Ok(Output {
        code: EXIT_OK,
        text,
        summary,
    })
}

pub fn run(cli: Cli) -> Result<Output, CliError> {
    let config = match &cli.config {
        Some(p) => PipelineConfig::load(p).map_err(|e| CliError::Io(e.to_string()))?,
        None => PipelineConfig::default(),
    };
    match cli.command {
        Command::Gen(a) => gen(a),
        Command::Ingest(a) => ingest_cmd(a, config),
        Command::Validate(a) => validate(a),
        Command::Partition(a) => partition(a, &config),
        Command::Audit(a) => audit(a, &config),
        Command::Stat(a) => stat(a, &config),
        Command::Correlate(a) => correlate(a),
        Command::Export(a) => export(a),
    }
}

fn key(config: &PipelineConfig) -> Result<SecretKey, CliError> {
    SecretKey::from_env(config.key_file.as_deref()).map_err(|e| CliError::Io(e.to_string()))
}

fn gen(a: GenArgs) -> Result<Output, CliError> {
    let mut spec = match &a.spec {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(io_err(p))?;
            if p.extension().map_or(false, |x| x == "json") {
                serde_json::from_str(&text).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?
            } else {
                toml::from_str(&text).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?
            }
        }
        None => GenSpec::default(),
    };
    if let Some(v) = a.seed {
        spec.seed = v;
    }
    if let Some(v) = a.users {
        spec.users = v;
    }
    if let Some(v) = a.events {
        spec.events = v;
    }
    if let Some(v) = a.weeks {
        spec.weeks = v;
    }
    if let Some(v) = a.course_id {
        spec.course_id = v;
    }
    if a.planted_r.is_some() {
        spec.planted_correlation = a.planted_r;
    }
    spec.verbose |= a.verbose;
    let out = generate(&spec).map_err(|e| CliError::Invalid(e.to_string()))?;
    let files = out.write(&a.out).map_err(io_err(&a.out))?;
    let text = format!(
        "generated {} lines for {} users into {}\n",
        out.truth.lines,
        out.truth.users,
        a.out.display()
    );
    ok(
        text,
        json!({
            "ok": true,
            "command": "gen",
            "seed": spec.seed,
            "lines": out.truth.lines,
            "users": out.truth.users,
            "files": {
                "structure": files.structure,
                "events": files.events,
                "pii": files.pii,
                "ground_truth": files.truth,
            },
        }),
    )
}

fn load_structure(path: &Path) -> Result<CourseStructure, CliError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    serde_json::from_slice(&bytes).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

/// Expands generator directories into their log file; returns the files and
/// the directory a default structure.json is looked up in.
fn expand_inputs(inputs: &[PathBuf]) -> Result<(Vec<PathBuf>, PathBuf), CliError> {
    let mut files = Vec::new();
    for p in inputs {
        if p.is_dir() {
            let found: Vec<PathBuf> = [EVENTS_FILE, VERBOSE_EVENTS_FILE]
                .iter()
                .map(|f| p.join(f))
                .filter(|f| f.is_file())
                .collect();
            if found.is_empty() {
                return Err(CliError::Io(format!("{}: no raw log file in directory", p.display())));
            }
            files.extend(found);
        } else {
            files.push(p.clone());
        }
    }
    let first = &inputs[0];
    let dir = if first.is_dir() {
        first.clone()
    } else {
        first.parent().map(Path::to_path_buf).unwrap_or_default()
    };
    Ok((files, dir))
}

fn ingest_cmd(a: IngestArgs, mut config: PipelineConfig) -> Result<Output, CliError> {
    let (files, dir) = expand_inputs(&a.inputs)?;
    let structure_path = a.structure.unwrap_or_else(|| dir.join(STRUCTURE_FILE));
    let structure = load_structure(&structure_path)?;
    if a.adapter.is_some() {
        config.adapter = a.adapter;
    }
    let key = key(&config)?;
    let (_, report) = ingest(&files, &structure, &config, &key, &a.out)?;
    let text = format!(
        "read {} lines: {} events, {} rejected; {} -> {} bytes into {}\n",
        report.lines_read,
        report.events_emitted,
        report.lines_rejected,
        report.input_bytes,
        report.output_bytes,
        a.out.display()
    );
    let mut summary = serde_json::to_value(&report).expect("report serializes");
    summary["ok"] = json!(true);
    summary["command"] = json!("ingest");
    summary["out"] = json!(a.out);
    ok(text, summary)
}

fn load_store(path: &Path) -> Result<CourseStore, CliError> {
    CourseStore::load(path).map_err(|e| CliError::Io(e.to_string()))
}

/// A store directory, or every course of a partition directory.
fn load_any(path: &Path) -> Result<Vec<CourseStore>, CliError> {
    if path.join(MANIFEST_FILE).is_file() {
        let (_, stores, _) = load_partition(path)?;
        Ok(stores)
    } else {
        Ok(vec![load_store(path)?])
    }
}

fn access_level(l: &LevelArgs) -> Option<AccessLevel> {
    let linkage = match l.level? {
        LevelArg::MultiCourse => Linkage::MultiCourse,
        LevelArg::SingleCourse => Linkage::SingleCourse,
        LevelArg::TableLevel => Linkage::TableLevel,
    };
    Some(AccessLevel::new(linkage, !l.no_collaboration))
}

/// Applies `--level` by dropping every table the level does not grant.
fn restrict(stores: &mut [CourseStore], l: &LevelArgs) {
    if let Some(level) = access_level(l) {
        let keep = level.tables();
        for s in stores {
            s.restrict_to(&keep);
        }
    }
}

fn validate(a: InArg) -> Result<Output, CliError> {
    let store = load_store(&a.input)?;
    let report = validate_store(&store);
    let mut text = String::new();
    for v in &report.violations {
        text.push_str(&format!("{v}\n"));
    }
    text.push_str(&format!(
        "{}: {} violation(s)\n",
        if report.is_valid() { "valid" } else { "INVALID" },
        report.violations.len()
    ));
    Ok(Output {
        code: if report.is_valid() { EXIT_OK } else { EXIT_INVALID },
        text,
        summary: json!({
            "ok": report.is_valid(),
            "command": "validate",
            "course_id": store.course_id,
            "violations": report.violations,
        }),
    })
}

fn partition(a: PartitionArgs, config: &PipelineConfig) -> Result<Output, CliError> {
    let level = access_level(&a.level).ok_or_else(|| CliError::Usage("partition needs --level".into()))?;
    let stores = a.inputs.iter().map(|p| load_store(p)).collect::<Result<Vec<_>, _>>()?;
    let pseudonymizer;
    let jitter = if a.jitter || config.jitter {
        pseudonymizer = Pseudonymizer::new(key(config)?);
        Some((&pseudonymizer, config.jitter_range_secs as i64 * 1000))
    } else {
        None
    };
    let opts = PartitionOptions {
        requested: a.tables,
        jitter,
    };
    let manifest = export_partition(&stores, level, &a.out, &opts)?;
    let text = format!(
        "{} partition of {} course(s) into {}: {}\nchecksum {}\n",
        level,
        manifest.courses.len(),
        a.out.display(),
        manifest.tables.join(", "),
        manifest.checksum
    );
    let mut summary = serde_json::to_value(&manifest).expect("manifest serializes");
    summary["ok"] = json!(true);
    summary["command"] = json!("partition");
    ok(text, summary)
}

fn audit(a: AuditArgs, config: &PipelineConfig) -> Result<Output, CliError> {
    let report = audit_linkability(&a.input)?;
    let mut text = String::new();
    for p in report.pairs.iter().filter(|p| p.joinable) {
        let mut tags = Vec::new();
        if p.cross_mode {
            tags.push("cross-mode");
        }
        if p.cross_course {
            tags.push("cross-course");
        }
        text.push_str(&format!("joinable {} ~ {} {}\n", p.left, p.right, tags.join(" ")));
    }
    text.push_str(&format!(
        "cross-mode joins: {}\ncross-course joins: {}\n",
        report.cross_mode_joins, report.cross_course_joins
    ));
    for w in &report.warnings {
        text.push_str(&format!("warning: {w}\n"));
    }
    let mut leaks = Vec::new();
    if let Some(pii_path) = &a.pii {
        let body = fs::read_to_string(pii_path).map_err(io_err(pii_path))?;
        let profiles: Vec<PiiProfile> = body
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<Result<_, _>>()
            .map_err(|e| CliError::Io(format!("{}: {e}", pii_path.display())))?;
        let (manifest, _, _) = load_partition(&a.input)?;
        let users: Vec<String> = profiles.iter().map(|p| p.raw_user.clone()).collect();
        let courses: Vec<String> = manifest.courses.iter().map(|c| c.course_id.clone()).collect();
        let ledger = derive_identities(&users, &courses, &key(config)?).map_err(|e| CliError::Io(e.to_string()))?;
        let pii: Vec<_> = profiles.iter().filter_map(|p| p.to_pii(&ledger)).collect();
        leaks = scan_for_pii(&a.input, &pii).map_err(io_err(&a.input))?;
        for l in &leaks {
            text.push_str(&format!("PII leak in {}: {}\n", l.file.display(), l.value));
        }
        text.push_str(&format!("PII scan: {} leak(s)\n", leaks.len()));
    }
    let clean = leaks.is_empty();
    Ok(Output {
        code: if clean { EXIT_OK } else { EXIT_INVALID },
        text,
        summary: json!({
            "ok": clean,
            "command": "audit",
            "linkability": report,
            "pii_leaks": leaks,
        }),
    })
}

fn parse_time(s: &Option<String>) -> Result<Option<Timestamp>, CliError> {
    s.as_deref()
        .map(|t| Timestamp::parse(t).map_err(|e| CliError::Io(format!("`{t}`: {e}"))))
        .transpose()
}

fn stat(a: StatArgs, config: &PipelineConfig) -> Result<Output, CliError> {
    let mut catalog = Catalog::builtin();
    if let Some(p) = &config.statistics_file {
        catalog.merge_file(p).map_err(|e| CliError::Io(e.to_string()))?;
    }
    if a.list {
        let mut text = String::new();
        for (name, d) in &catalog.stats {
            text.push_str(&format!("{name}\t{:?} of {}\t{}\n", d.aggregation, d.target, d.description));
        }
        return ok(text, json!({ "ok": true, "command": "stat", "catalog": catalog.stats }));
    }
    let input = a.input.as_ref().ok_or_else(|| CliError::Usage("stat needs --in".into()))?;
    let name = a.name.as_deref().unwrap_or_default();
    let def = catalog
        .get(name)
        .ok_or_else(|| CliError::Io(format!("unknown statistic `{name}`")))?
        .clone();
    let window = match (parse_time(&a.from)?, parse_time(&a.to)?) {
        (None, None) => None,
        (start, end) => Some(Window { start, end }),
    };
    let cohort = a.cohort.as_deref().map(str::parse::<CohortPredicate>).transpose()?;
    let space = (a.country.is_some() || a.group_by_country).then(|| SpaceSpec {
        countries: a.country.map(|c| c.into_iter().collect::<BTreeSet<_>>()),
        group_by_country: a.group_by_country,
    });
    let cuts = CutSpec { window, cohort, space };
    let mut stores = load_any(input)?;
    restrict(&mut stores, &a.level);
    let mut results = Vec::new();
    let mut text = String::new();
    for s in &stores {
        let r = compute_statistic(s, &def, &cuts)?;
        if stores.len() > 1 {
            text.push_str(&format!("# {}\n", s.course_id));
        }
        text.push_str(&r.to_csv());
        results.push(json!({ "course_id": s.course_id, "result": r }));
    }
    ok(text, json!({ "ok": true, "command": "stat", "results": results }))
}

fn correlation_err(e: CorrelationError) -> CliError {
    match e {
        CorrelationError::Capability(c) => c.into(),
        other => CliError::Invalid(other.to_string()),
    }
}

fn correlate(a: CorrelateArgs) -> Result<Output, CliError> {
    let mut stores = load_any(&a.input)?;
    restrict(&mut stores, &a.level);
    let mut text = String::from("course_id,problem_id,problem_name,week,window_start,window_end,n,r\n");
    let mut results = Vec::new();
    for s in &stores {
        if !s.has(Table::Problems) {
            return Err(CapabilityError::new("correlate", Table::Problems).into());
        }
        let targets: Vec<Id> = match &a.problem {
            Some(p) => {
                let by_id = p.parse::<Id>().ok().filter(|id| s.problems.iter().any(|q| q.problem_id == *id));
                let id = by_id
                    .or_else(|| s.problems.iter().find(|q| &q.problem_name == p).map(|q| q.problem_id))
                    .ok_or_else(|| CliError::Io(format!("{}: no problem `{p}`", s.course_id)))?;
                vec![id]
            }
            None => {
                let mut roots: Vec<_> = s
                    .problems
                    .iter()
                    .filter(|q| q.problem_parent_id.is_none() && q.problem_release_timestamp.is_some())
                    .map(|q| (q.problem_release_timestamp, q.problem_id))
                    .collect();
                roots.sort();
                roots.into_iter().map(|(_, id)| id).collect()
            }
        };
        for id in targets {
            let res = video_homework_correlation(s, id).map_err(correlation_err)?;
            let name = s
                .problems
                .iter()
                .find(|q| q.problem_id == id)
                .map(|q| q.problem_name.clone())
                .unwrap_or_default();
            let r = match res.r.value() {
                Some(r) => r.to_string(),
                None => serde_json::to_value(res.r).expect("serializes")["undefined"]
                    .as_str()
                    .map(|s| format!("undefined:{s}"))
                    .unwrap_or_default(),
            };
            text.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                s.course_id,
                id,
                name,
                res.week,
                res.window_start.to_iso(),
                res.window_end.to_iso(),
                res.n,
                r
            ));
            results.push(json!({ "course_id": s.course_id, "problem_name": name, "result": res }));
        }
    }
    ok(text, json!({ "ok": true, "command": "correlate", "results": results }))
}

fn export(a: ExportArgs) -> Result<Output, CliError> {
    let mut stores = load_any(&a.input)?;
    if stores.len() != 1 {
        return Err(CliError::Usage(format!(
            "export needs a single course; {} holds {}",
            a.input.display(),
            stores.len()
        )));
    }
    restrict(&mut stores, &a.level);
    let store = &stores[0];
    for t in [Table::Problems, Table::Submissions, Table::Assessments] {
        if !store.has(t) {
            return Err(CapabilityError::new("export", t).into());
        }
    }
    let body = match a.format {
        ExportFormat::Bkt => export_bkt(store),
        ExportFormat::Irt => export_irt(store),
    };
    let rows = body.lines().count().saturating_sub(2);
    let summary = json!({
        "ok": true,
        "command": "export",
        "format": format!("{:?}", a.format).to_lowercase(),
        "rows": rows,
        "out": a.out,
    });
    match &a.out {
        Some(p) => {
            fs::write(p, &body).map_err(io_err(p))?;
            ok(format!("wrote {rows} rows to {}\n", p.display()), summary)
        }
        None => ok(body, summary),
    }
}
