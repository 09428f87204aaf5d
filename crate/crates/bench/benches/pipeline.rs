use criterion::{black_box, criterion_group, criterion_main, BatchSize, Criterion, Throughput};
use moocdb::analytics::{compute_statistic, video_homework_correlation, Catalog, CutSpec};
use moocdb::export::{export_bkt, export_irt};
use moocdb::privacy::partition::{export_partition, AccessLevel, Linkage, PartitionOptions};
use moocdb::schema::validate_store;
use moocdb_bench::{course, parsed, store};

fn ingest(c: &mut Criterion) {
    let mut g = c.benchmark_group("ingest");
    g.sample_size(10);
    for verbose in [false, true] {
        let gen = course(20_000, verbose);
        let dir = tempfile::tempdir().unwrap();
        let sources = parsed(&gen, dir.path());
        g.throughput(Throughput::Elements(20_000));
        let name = if verbose { "build_store/verbose/20k" } else { "build_store/canonical/20k" };
        g.bench_function(name, |b| {
            b.iter_batched(|| sources.clone(), |s| store(&gen, s), BatchSize::LargeInput)
        });
    }
    g.finish();
}

fn downstream(c: &mut Criterion) {
    let gen = course(20_000, false);
    let dir = tempfile::tempdir().unwrap();
    let (s, _) = store(&gen, parsed(&gen, dir.path()));
    let mut g = c.benchmark_group("store");
    g.sample_size(20);
    g.bench_function("validate/20k", |b| b.iter(|| validate_store(black_box(&s))));
    let catalog = Catalog::builtin();
    g.bench_function("stat/builtin_catalog", |b| {
        b.iter(|| {
            for def in catalog.stats.values() {
                black_box(compute_statistic(&s, def, &CutSpec::default()).unwrap());
            }
        })
    });
    let hw = s.problems.iter().find(|p| p.problem_name == "hw1").unwrap().problem_id;
    g.bench_function("correlate/hw1", |b| b.iter(|| video_homework_correlation(&s, hw).unwrap()));
    g.bench_function("export/bkt", |b| b.iter(|| export_bkt(&s)));
    g.bench_function("export/irt", |b| b.iter(|| export_irt(&s)));
    let out = tempfile::tempdir().unwrap();
    let level = AccessLevel::new(Linkage::SingleCourse, true);
    g.bench_function("partition/single_course", |b| {
        b.iter(|| export_partition(std::slice::from_ref(&s), level, &out.path().join("p"), &PartitionOptions::default()).unwrap())
    });
    g.finish();
}

criterion_group!(benches, ingest, downstream);
criterion_main!(benches);
