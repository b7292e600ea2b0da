use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use regimix::ecme::{step2_hessian, JointMixture};
use regimix::exec::{self, Mode};
use regimix::grid::{CellGrid, ReturnsPanel};
use regimix::sim::{simulate_ruin, DecumulationPlan, Horizon, JointSampler, PortfolioSpec};
use regimix::stats::UnivariateMixture;

fn model() -> JointMixture {
    let m1 = UnivariateMixture::from_parts(&[0.7, 0.3], &[1.10, 0.80], &[0.06, 0.06]).unwrap();
    let m2 = UnivariateMixture::from_parts(&[0.6, 0.4], &[1.05, 0.85], &[0.04, 0.05]).unwrap();
    let m3 = UnivariateMixture::normal(1.03, 0.07).unwrap();
    let grid = CellGrid::new(&[2, 2, 1]).unwrap();
    JointMixture::from_correlations(
        grid,
        vec![m1, m2, m3],
        &[(0, 0.3), (2, 0.1), (3, 0.6)],
        &[vec![0.5, 0.1, 0.2], vec![0.0, 0.0, 0.0], vec![0.6, -0.1, 0.1]],
    )
    .unwrap()
}

fn modes() -> [(Mode, &'static str); 2] {
    [(Mode::Sequential, "sequential"), (Mode::Parallel, "parallel")]
}

fn bench_ruin(c: &mut Criterion) {
    let m = model();
    let plan = DecumulationPlan::new(0.05, Horizon::Fixed(30), PortfolioSpec::constant(vec![0.4, 0.3, 0.3], vec![0.0; 3]).unwrap()).unwrap();
    let mut group = c.benchmark_group("ruin_20k_paths");
    for (mode, name) in modes() {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            exec::set_mode(mode);
            b.iter(|| simulate_ruin(&plan, &m, 20_000, 1).unwrap())
        });
    }
    group.finish();
}

fn bench_hessian(c: &mut Criterion) {
    let m = model();
    let sampler = JointSampler::new(&m).unwrap();
    let mut rng = exec::stream_rng(2, 0);
    let panel = ReturnsPanel::new((0..2000).map(|_| sampler.sample(&mut rng).iter().copied().collect()).collect()).unwrap();
    let mut group = c.benchmark_group("step2_hessian_t2000");
    for (mode, name) in modes() {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            exec::set_mode(mode);
            b.iter(|| step2_hessian(&panel, &m).unwrap())
        });
    }
    group.finish();
    exec::set_mode(Mode::Parallel);
}

criterion_group!(benches, bench_ruin, bench_hessian);
criterion_main!(benches);
