use std::collections::{BTreeMap, HashMap};

use moocdb::config::PipelineConfig;
use moocdb::ingest::ingest;
use moocdb::privacy::{derive_identities, SecretKey};
use moocdb::schema::{CourseStore, Table};
use moocdb::synthgen::{generate, GenSpec};

fn key() -> SecretKey {
    SecretKey::from_hex("00112233445566778899aabbccddeeff00112233445566778899aabbccddeeff").unwrap()
}

fn run(spec: &GenSpec) -> (moocdb::synthgen::GenOutput, CourseStore, moocdb::ingest::IngestReport) {
    let dir = tempfile::tempdir().unwrap();
    let g = generate(spec).unwrap();
    let files = g.write(&dir.path().join("gen")).unwrap();
    let (store, report) = ingest(
        &[files.events.clone()],
        &g.structure,
        &PipelineConfig::default(),
        &key(),
        &dir.path().join("store"),
    )
    .unwrap();
    (g, store, report)
}

fn counts(store: &CourseStore) -> BTreeMap<String, u64> {
    Table::ALL.iter().map(|t| (t.name().to_string(), store.row_count(*t) as u64)).collect()
}

#[test]
fn generated_course_ingests_to_ground_truth_counts() {
    for verbose in [false, true] {
        let spec = GenSpec {
            seed: 3,
            users: 40,
            events: 2_000,
            verbose,
            ..GenSpec::default()
        };
        let (g, store, report) = run(&spec);
        assert_eq!(report.lines_rejected, 0, "{:?}", report.rejects.first());
        assert!(report.is_conserved());
        assert_eq!(report.lines_read, 2_000);
        assert_eq!(counts(&store), g.truth.table_counts, "verbose={verbose}");
    }
}

#[test]
fn video_durations_equal_session_lengths() {
    let spec = GenSpec {
        seed: 11,
        users: 30,
        events: 1_500,
        planted_correlation: Some(1.0),
        ..GenSpec::default()
    };
    let (g, store, _) = run(&spec);
    let study = g.truth.study.as_ref().unwrap();
    let hw = store.problems.iter().find(|p| p.problem_name == "hw1").unwrap().problem_id;
    let res = moocdb::analytics::video_homework_correlation(&store, hw).unwrap();
    assert_eq!(res.n, study.pairs.len());
    let ledger = derive_identities(
        &g.structure.roster.iter().map(|r| r.user.clone()).collect::<Vec<_>>(),
        &[g.spec.course_id.clone()],
        &key(),
    )
    .unwrap();
    let by_cu: HashMap<_, _> = res.pairs.iter().map(|p| (p.course_user_id, p)).collect();
    for p in &study.pairs {
        let cu = ledger.course(&p.user, &g.spec.course_id).unwrap().course_user_id;
        let got = by_cu[&cu];
        assert_eq!((got.video_seconds * 1000.0).round() as u64, p.video_ms, "{}", p.user);
        assert_eq!(got.correct_submissions, p.correct, "{}", p.user);
    }
    let r = res.r.value().unwrap();
    assert!((r - 1.0).abs() < 1e-9, "{r}");
}
