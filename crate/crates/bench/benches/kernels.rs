use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rgns_bench::{points, random_matrix, stack_fixture};
use rgns_core::graph::build_radius_graph;
use rgns_core::numerics::{pseudo_inverse, DEFAULT_SIGMA_TOL};
use rgns_core::rrmp::{default_drift_guard, StackGrads};
use rgns_core::{Direction, Precision};

fn radius_graph(c: &mut Criterion) {
    let mut group = c.benchmark_group("radius_graph");
    for n in [1_000, 10_000] {
        let pos = points(n, 0);
        // about 20 neighbours per particle
        let r = (20.0 / (n as f64 * std::f64::consts::PI)).sqrt();
        group.bench_with_input(BenchmarkId::from_parameter(n), &pos, |b, pos| {
            b.iter(|| build_radius_graph(pos, 2, r).unwrap())
        });
    }
    group.finish();
}

fn stack(c: &mut Criterion) {
    let f = stack_fixture(500, 0.06, 64, 4);
    let mut group = c.benchmark_group("stack");
    group.sample_size(20);
    group.bench_function("forward", |b| b.iter(|| f.stack.forward(&f.nodes, &f.edges, &f.graph).unwrap()));
    group.bench_function("inverse", |b| b.iter(|| f.stack.inverse(&f.nodes, &f.edges, &f.graph).unwrap()));

    let (out, out_e) = f.stack.forward(&f.nodes, &f.edges, &f.graph).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let h = f.stack.half_width();
    let mut grad = StackGrads::zeros(f.graph.n_nodes, f.graph.n_edges(), h);
    grad.nodes.n1 = random_matrix(f.graph.n_nodes, h, &mut rng);
    grad.nodes.n2 = random_matrix(f.graph.n_nodes, h, &mut rng);
    let guard = default_drift_guard(Precision::Double);
    group.bench_function("backward_recompute", |b| {
        b.iter(|| {
            f.stack
                .backward(Direction::Forward, &out, &out_e, &grad, &f.graph, None, guard)
                .unwrap()
        })
    });
    group.bench_function("backward_stored", |b| {
        b.iter(|| {
            f.stack
                .backward_stored(Direction::Forward, &f.nodes, &f.edges, &grad, &f.graph)
                .unwrap()
        })
    });
    group.finish();
}

fn pinv(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut group = c.benchmark_group("pseudo_inverse");
    for (d, cols) in [(64, 17), (128, 32)] {
        let w = random_matrix(d, cols, &mut rng);
        group.bench_with_input(BenchmarkId::new("d", format!("{d}x{cols}")), &w, |b, w| {
            b.iter(|| pseudo_inverse(w, DEFAULT_SIGMA_TOL).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, radius_graph, stack, pinv);
criterion_main!(benches);
