use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use tfnewton::builders::{build_inversion_block, build_logreg_newton_step, inversion_prompt, width_depth_budget};
use tfnewton::harness::{gen_logreg_data, gen_spd, logistic_kappa, ExperimentConfig, Task};
use tfnewton::linalg::matmul;
use tfnewton::newton_inverse::{init_alpha, newton_step, DEFAULT_SAFETY};
use tfnewton::tf::model_forward;

fn dense(c: &mut Criterion) {
    let mut g = c.benchmark_group("dense");
    for d in [8, 32, 128] {
        let a = gen_spd(d, 100.0, 0).unwrap();
        g.bench_with_input(BenchmarkId::new("matmul", d), &a, |b, a| b.iter(|| matmul(black_box(a), a).unwrap()));
        let x = a.scale(init_alpha(&a, DEFAULT_SAFETY, 0).unwrap());
        g.bench_with_input(BenchmarkId::new("newton_step", d), &(x, a), |b, (x, a)| {
            b.iter(|| newton_step(black_box(x), a).unwrap())
        });
    }
    g.finish();
}

fn inversion_block(c: &mut Criterion) {
    let mut g = c.benchmark_group("inversion_block");
    for d in [8, 32] {
        let a = gen_spd(d, 100.0, 0).unwrap();
        let x0 = a.scale(init_alpha(&a, DEFAULT_SAFETY, 0).unwrap());
        let layers = build_inversion_block(d).unwrap();
        let h0 = inversion_prompt(&x0, &a).unwrap();
        g.bench_with_input(BenchmarkId::new("model_forward", d), &h0, |b, h0| {
            b.iter(|| model_forward(&layers, black_box(h0)).unwrap())
        });
    }
    g.finish();
}

fn logistic_step(c: &mut Criterion) {
    let cfg = ExperimentConfig::defaults(Task::Logreg);
    let (p, _) = gen_logreg_data(&cfg).unwrap();
    let budget = width_depth_budget(cfg.eps, cfg.mu, logistic_kappa(cfg.mu), cfg.d).unwrap();
    let mut g = c.benchmark_group("logistic_step");
    g.sample_size(20);
    g.bench_function("build", |b| b.iter(|| build_logreg_newton_step(black_box(&p), &budget).unwrap()));
    let stack = build_logreg_newton_step(&p, &budget).unwrap();
    let x = vec![0.0; cfg.d];
    g.bench_function("apply", |b| b.iter(|| stack.apply(black_box(&x)).unwrap()));
    g.finish();
}

criterion_group!(benches, dense, inversion_block, logistic_step);
criterion_main!(benches);
