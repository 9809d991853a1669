use criterion::{BenchmarkId, Criterion, Throughput};
use mlbddc::{
    assemble_global, build_hierarchy, pcg, random_zero_mean_rhs, BddcPreconditioner, CoarseSpace,
    Hierarchy, HierarchySpec, PcgOptions,
};

fn hierarchy(dim: usize, ratios: Vec<usize>, cs: CoarseSpace) -> Hierarchy {
    let spec = HierarchySpec::new(dim, ratios, cs);
    build_hierarchy(&spec, &spec.grid().unwrap()).unwrap()
}

fn cases() -> Vec<(&'static str, Hierarchy)> {
    vec![
        ("2d-L3-r3-C", hierarchy(2, vec![3, 3], CoarseSpace::C)),
        ("2d-L4-r3-CE", hierarchy(2, vec![3, 3, 3], CoarseSpace::CE)),
        ("3d-L2-r3-CEF", hierarchy(3, vec![3], CoarseSpace::CEF)),
        ("3d-L3-r3-E", hierarchy(3, vec![3, 3], CoarseSpace::E)),
    ]
}

pub fn setup(c: &mut Criterion) {
    let mut g = c.benchmark_group("setup");
    g.sample_size(10);
    for (name, h) in cases() {
        g.throughput(Throughput::Elements(h.n() as u64));
        g.bench_with_input(BenchmarkId::from_parameter(name), &h, |b, h| {
            b.iter(|| BddcPreconditioner::setup(h).unwrap())
        });
    }
    g.finish();
}

pub fn apply(c: &mut Criterion) {
    let mut g = c.benchmark_group("apply");
    for (name, h) in cases() {
        let p = BddcPreconditioner::setup(&h).unwrap();
        let r = random_zero_mean_rhs(h.n(), 0).unwrap();
        g.throughput(Throughput::Elements(h.n() as u64));
        g.bench_with_input(BenchmarkId::from_parameter(name), &r, |b, r| {
            b.iter(|| p.apply(r).unwrap())
        });
    }
    g.finish();
}

pub fn solve(c: &mut Criterion) {
    let mut g = c.benchmark_group("solve");
    g.sample_size(10);
    for (name, h) in cases() {
        let a = assemble_global(&h.grid).unwrap();
        let p = BddcPreconditioner::setup(&h).unwrap();
        let r = random_zero_mean_rhs(h.n(), 0).unwrap();
        g.bench_function(name, |b| {
            b.iter(|| pcg(&a, &p, &r, &PcgOptions::default()).unwrap())
        });
    }
    g.finish();
}
