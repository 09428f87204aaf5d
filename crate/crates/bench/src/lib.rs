//! Shared fixtures for the benchmarks.

use moocdb::config::PipelineConfig;
use moocdb::ingest::{build_store, parse_sources, AdapterRegistry, IngestReport, ParsedSource};
use moocdb::privacy::SecretKey;
use moocdb::schema::CourseStore;
use moocdb::synthgen::{generate, GenOutput, GenSpec};

pub fn key() -> SecretKey {
    SecretKey::from_hex("0f1e2d3c4b5a69788796a5b4c3d2e1f0").expect("static key")
}

pub fn course(events: usize, verbose: bool) -> GenOutput {
    generate(&GenSpec {
        seed: 1,
        users: (events / 100).clamp(10, 1_000),
        events,
        verbose,
        ..GenSpec::default()
    })
    .expect("feasible spec")
}

/// Writes the raw log into `dir` and parses it back.
pub fn parsed(gen: &GenOutput, dir: &std::path::Path) -> Vec<ParsedSource> {
    let files = gen.write(dir).expect("write generator output");
    parse_sources(&[files.events], None, &AdapterRegistry::default())
        .expect("parse")
        .0
}

pub fn store(gen: &GenOutput, sources: Vec<ParsedSource>) -> (CourseStore, IngestReport) {
    build_store(sources, &gen.structure, &PipelineConfig::default(), &key()).expect("ingest")
}
