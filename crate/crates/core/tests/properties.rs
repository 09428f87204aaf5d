use std::collections::{BTreeMap, BTreeSet, HashMap};

use moocdb::analytics::{compute_statistic, pearson, Aggregation, Catalog, CutSpec, StatValue, StatisticDef, Target, Window};
use moocdb::config::PipelineConfig;
use moocdb::export::first_graded_attempts;
use moocdb::ingest::{build_store, CanonicalAdapter, EventKind, ParsedSource, SourceAdapter};
use moocdb::privacy::partition::{AccessLevel, Linkage};
use moocdb::privacy::{derive_identities, IdNamespace, IdentityLedger, SecretKey};
use moocdb::schema::{validate_store, CourseStore, Id, ViolationKind};
use moocdb::synthgen::{generate, GenOutput, GenSpec};
use moocdb::time::{Duration, Timestamp};
use proptest::prelude::*;

fn key() -> SecretKey {
    SecretKey::from_hex("a1b2c3d4e5f60718293a4b5c6d7e8f90").unwrap()
}

fn ingest_in_memory(g: &GenOutput) -> CourseStore {
    let adapter = CanonicalAdapter;
    let lines = g
        .events
        .iter()
        .enumerate()
        .map(|(i, e)| moocdb::ingest::SourceLine {
            line_no: i as u64 + 1,
            outcome: adapter.parse_line(&e.to_json_line()).expect("canonical line"),
        })
        .collect();
    let (store, report) = build_store(
        vec![ParsedSource {
            name: "events.jsonl".into(),
            lines,
        }],
        &g.structure,
        &PipelineConfig::default(),
        &key(),
    )
    .expect("generated course ingests");
    assert_eq!(report.lines_rejected, 0, "{:?}", report.rejects.first());
    store
}

fn ledger(g: &GenOutput) -> IdentityLedger {
    let users: Vec<String> = g.structure.roster.iter().map(|r| r.user.clone()).collect();
    derive_identities(&users, &[g.spec.course_id.clone()], &key()).unwrap()
}

fn small_spec() -> impl Strategy<Value = GenSpec> {
    (any::<u64>(), 2usize..40, 1usize..4, 0usize..3, 0usize..3, 300usize..1500, prop::option::of(1u32..4)).prop_map(
        |(seed, users, weeks, problems, sub, events, max)| GenSpec {
            seed,
            users,
            weeks,
            problems_per_homework: problems,
            subproblems: sub,
            events,
            max_submissions: max,
            ..GenSpec::default()
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 12, ..ProptestConfig::default() })]

    #[test]
    fn generated_courses_ingest_cleanly_and_satisfy_invariants(spec in small_spec()) {
        let g = generate(&spec).unwrap();
        let store = ingest_in_memory(&g);
        let report = validate_store(&store);
        prop_assert!(report.is_valid(), "{:?}", report.violations.first());

        let cap = PipelineConfig::default().duration_cap();
        for e in &store.observed_events {
            prop_assert!(e.observed_event_duration <= cap);
        }
        for a in &store.assessments {
            prop_assert!((0.0..=1.0).contains(&a.assessment_grade));
        }

        // Attempt numbers follow timestamps within (user, problem).
        let mut by_pair: BTreeMap<(Id, Id), Vec<(Timestamp, u32)>> = BTreeMap::new();
        for s in &store.submissions {
            by_pair.entry((s.user_id, s.problem_id)).or_default().push((s.submission_timestamp, s.submission_attempt_number));
        }
        for v in by_pair.values_mut() {
            v.sort();
            prop_assert!(v.windows(2).all(|w| w[0].1 < w[1].1));
        }

        // Mode namespaces never intersect, and exports use submission ids only.
        let sets: Vec<BTreeSet<Id>> = vec![
            store.course_users.iter().map(|u| u.observed_id).collect(),
            store.course_users.iter().map(|u| u.submissions_id).collect(),
            store.course_users.iter().map(|u| u.collaborations_id).collect(),
            store.course_users.iter().map(|u| u.feedback_id).collect(),
            store.course_users.iter().map(|u| u.course_user_id).collect(),
            store.global_users.iter().map(|u| u.global_user_id).collect(),
        ];
        for i in 0..sets.len() {
            for j in i + 1..sets.len() {
                prop_assert!(sets[i].is_disjoint(&sets[j]));
            }
        }
        for r in first_graded_attempts(&store) {
            prop_assert_eq!(IdNamespace::of(r.student_id), Some(IdNamespace::Submissions));
        }
    }

    #[test]
    fn pearson_is_bounded(xs in prop::collection::vec(-1e6f64..1e6, 2..60), seed in any::<u64>()) {
        let ys: Vec<f64> = xs.iter().enumerate().map(|(i, x)| (x * 0.37 + ((seed >> (i % 60)) & 7) as f64).round()).collect();
        if let Some(r) = pearson(&xs, &ys).value() {
            prop_assert!((-1.0..=1.0).contains(&r));
        }
    }

    #[test]
    fn wider_windows_never_lower_counts(a in 0i64..35, b in 0i64..35, pad_lo in 0i64..5, pad_hi in 0i64..5) {
        let store = fixture();
        let day = 86_400_000;
        let start = Timestamp::from_ymd_hms(2013, 3, 4, 0, 0, 0).millis();
        let (lo, hi) = (a.min(b), a.max(b));
        let narrow = Window { start: Some(Timestamp::from_millis(start + lo * day)), end: Some(Timestamp::from_millis(start + hi * day)) };
        let wide = Window {
            start: Some(Timestamp::from_millis(start + (lo - pad_lo) * day)),
            end: Some(Timestamp::from_millis(start + (hi + pad_hi) * day)),
        };
        for target in Target::ALL {
            let def = StatisticDef::new("c", Aggregation::Count, target);
            let count = |w: Window| {
                let r = compute_statistic(store, &def, &CutSpec { window: Some(w), ..CutSpec::default() }).unwrap();
                match r.groups.get("all").map(|g| &g.value) {
                    Some(StatValue::Scalar(v)) => *v,
                    _ => 0.0,
                }
            };
            prop_assert!(count(wide) >= count(narrow), "{target}");
        }
    }
}

fn fixture() -> &'static CourseStore {
    use std::sync::OnceLock;
    static STORE: OnceLock<CourseStore> = OnceLock::new();
    STORE.get_or_init(|| {
        let g = generate(&GenSpec {
            seed: 17,
            users: 60,
            events: 3_000,
            ..GenSpec::default()
        })
        .unwrap();
        ingest_in_memory(&g)
    })
}

#[test]
fn every_event_is_recoverable_from_the_store() {
    let g = generate(&GenSpec {
        seed: 23,
        users: 40,
        events: 2_500,
        ..GenSpec::default()
    })
    .unwrap();
    let store = ingest_in_memory(&g);
    let ledger = ledger(&g);
    let mut owner: HashMap<Id, String> = HashMap::new();
    for r in &g.structure.roster {
        let c = ledger.course(&r.user, &g.spec.course_id).unwrap();
        for id in [c.modes.observed_id, c.modes.submissions_id, c.modes.collaborations_id, c.modes.feedback_id] {
            owner.insert(id, r.user.clone());
        }
    }
    let uri: HashMap<Id, &str> = store.resources.iter().map(|r| (r.resource_id, r.resource_uri.as_str())).collect();
    let url: HashMap<Id, &str> = store.urls.iter().map(|u| (u.url_id, u.url.as_str())).collect();
    let problem: HashMap<Id, &str> = store.problems.iter().map(|p| (p.problem_id, p.problem_name.as_str())).collect();

    let mut want_obs = Vec::new();
    let mut want_sub = Vec::new();
    let mut want_collab = Vec::new();
    let mut want_feedback = Vec::new();
    for e in &g.events {
        let who = e.raw_user.clone();
        match e.event_kind {
            EventKind::PageView | EventKind::VideoPlay | EventKind::ForumPost | EventKind::ForumVote => {
                want_obs.push((who.clone(), e.uri.clone(), e.url.clone(), e.timestamp));
            }
            _ => {}
        }
        match e.event_kind {
            EventKind::ProblemCheck | EventKind::ProblemSave => want_sub.push((
                who,
                e.uri.clone(),
                e.timestamp,
                e.payload["answer"].as_str().unwrap().to_string(),
                e.event_kind == EventKind::ProblemCheck,
            )),
            EventKind::ForumPost | EventKind::ForumVote | EventKind::WikiEdit => want_collab.push((who, e.timestamp)),
            EventKind::SurveyAnswer => want_feedback.push((who, e.timestamp)),
            _ => {}
        }
    }
    let mut got_obs: Vec<_> = store
        .observed_events
        .iter()
        .map(|o| {
            (
                owner[&o.user_id_observed].clone(),
                uri[&o.resource_id].to_string(),
                url[&o.url_id].to_string(),
                o.observed_event_timestamp,
            )
        })
        .collect();
    let mut got_sub: Vec<_> = store
        .submissions
        .iter()
        .map(|s| {
            (
                owner[&s.user_id].clone(),
                problem[&s.problem_id].to_string(),
                s.submission_timestamp,
                s.submission_answer.clone(),
                s.is_submitted,
            )
        })
        .collect();
    let mut got_collab: Vec<_> =
        store.collaborations.iter().map(|c| (owner[&c.user_id].clone(), c.collaboration_timestamp)).collect();
    let mut got_feedback: Vec<_> =
        store.feedbacks.iter().map(|f| (owner[&f.user_id].clone(), f.feedback_timestamp)).collect();
    for v in [&mut want_obs, &mut got_obs] {
        v.sort();
    }
    for v in [&mut want_sub, &mut got_sub] {
        v.sort();
    }
    for v in [&mut want_collab, &mut got_collab, &mut want_feedback, &mut got_feedback] {
        v.sort();
    }
    assert_eq!(got_obs, want_obs);
    assert_eq!(got_sub, want_sub);
    assert_eq!(got_collab, want_collab);
    assert_eq!(got_feedback, want_feedback);
}

#[test]
fn reply_structure_matches_generator_threads() {
    let g = generate(&GenSpec {
        seed: 29,
        users: 30,
        events: 3_000,
        ..GenSpec::default()
    })
    .unwrap();
    let store = ingest_in_memory(&g);
    let at: HashMap<Id, Timestamp> = store
        .collaborations
        .iter()
        .map(|c| (c.collaboration_id, c.collaboration_timestamp))
        .collect();
    let mut got: Vec<(Timestamp, Option<Timestamp>)> = store
        .collaborations
        .iter()
        .map(|c| (c.collaboration_timestamp, c.collaboration_parent_id.map(|p| at[&p])))
        .collect();
    got.sort();
    let want: Vec<(Timestamp, Option<Timestamp>)> =
        g.truth.threads.iter().map(|t| (t.timestamp, t.parent_timestamp)).collect();
    assert_eq!(got, want);
}

#[test]
fn one_corrupted_parent_is_exactly_one_forest_defect() {
    for (i, row) in [1usize, 4, 9].into_iter().enumerate() {
        let mut store = fixture().clone();
        store.problems[row].problem_parent_id = Some(9_000_000 + i as Id);
        let report = validate_store(&store);
        let forest: Vec<_> = report.violations.iter().filter(|v| v.kind.is_forest_defect()).collect();
        assert_eq!(forest.len(), 1, "{forest:?}");
        assert_eq!(forest[0].kind, ViolationKind::DanglingParent);
    }
    // A two-node cycle is one defect as well.
    let mut store = fixture().clone();
    let (a, b) = (store.problems[1].problem_id, store.problems[2].problem_id);
    store.problems[1].problem_parent_id = Some(b);
    store.problems[2].problem_parent_id = Some(a);
    let report = validate_store(&store);
    let forest: Vec<_> = report.violations.iter().filter(|v| v.kind.is_forest_defect()).collect();
    assert_eq!(forest.len(), 1, "{forest:?}");
    assert_eq!(forest[0].kind, ViolationKind::Cycle);
}

#[test]
fn store_survives_save_and_load() {
    let dir = tempfile::tempdir().unwrap();
    let store = fixture();
    store.save(dir.path()).unwrap();
    let back = CourseStore::load(dir.path()).unwrap();
    assert_eq!(&back, store);
}

#[test]
fn statistics_stay_runnable_at_wider_levels() {
    let store = fixture();
    let catalog = Catalog::builtin();
    let levels = AccessLevel::all();
    let restricted: Vec<(AccessLevel, CourseStore)> = levels
        .iter()
        .map(|l| {
            let mut s = store.clone();
            s.restrict_to(&l.tables());
            (*l, s)
        })
        .collect();
    let mut checked = 0;
    for def in catalog.stats.values() {
        for (narrow, ns) in &restricted {
            if compute_statistic(ns, def, &CutSpec::default()).is_err() {
                continue;
            }
            for (wide, ws) in &restricted {
                if narrow.tables().is_subset(&wide.tables()) {
                    assert!(compute_statistic(ws, def, &CutSpec::default()).is_ok(), "{} at {wide}", def.name);
                    checked += 1;
                }
            }
        }
    }
    assert!(checked > 0);
    // The cohort statistic is refused exactly where the course user table is absent.
    let def = catalog.get("avg_submissions_by_country").unwrap();
    for (level, s) in &restricted {
        let ok = compute_statistic(s, def, &CutSpec::default()).is_ok();
        assert_eq!(ok, level.linkage != Linkage::TableLevel, "{level}");
    }
}

#[test]
fn durations_never_exceed_cap_for_any_cap() {
    let g = generate(&GenSpec {
        seed: 31,
        users: 20,
        events: 1_000,
        ..GenSpec::default()
    })
    .unwrap();
    for cap_secs in [1, 60, 600, 1800] {
        let mut store = ingest_in_memory(&g);
        moocdb::ingest::compute_durations(&mut store, Duration::from_secs(cap_secs));
        let cap = Duration::from_secs(cap_secs);
        assert!(store.observed_events.iter().all(|e| e.observed_event_duration <= cap));
        assert!(store.observed_events.iter().any(|e| e.observed_event_duration == cap));
    }
}
