//! Fixtures shared by the benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rgns_core::graph::build_radius_graph;
use rgns_core::rrmp::EdgeLatents;
use rgns_core::{Activation, EdgeMode, LatentNodes, Matrix, RadiusGraph, RrmpStack};

pub fn points(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..2 * n).map(|_| rng.random::<f64>()).collect()
}

pub fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix<f64> {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

/// A stack, a graph and latents of matching shapes.
pub struct StackFixture {
    pub stack: RrmpStack<f64>,
    pub graph: RadiusGraph,
    pub nodes: LatentNodes<f64>,
    pub edges: EdgeLatents<f64>,
}

pub fn stack_fixture(n: usize, radius: f64, latent: usize, n_layers: usize) -> StackFixture {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let pos = points(n, 2);
    let graph = build_radius_graph(&pos, 2, radius).expect("valid graph");
    let stack = RrmpStack::init(n_layers, latent, latent, 2, Activation::Relu, 0.1, EdgeMode::Fixed, &mut rng)
        .expect("valid stack");
    let h = latent / 2;
    let e = graph.n_edges();
    StackFixture {
        nodes: LatentNodes {
            n1: random_matrix(n, h, &mut rng),
            n2: random_matrix(n, h, &mut rng),
        },
        edges: EdgeLatents {
            e1: random_matrix(e, h, &mut rng),
            e2: random_matrix(e, h, &mut rng),
        },
        stack,
        graph,
    }
}
