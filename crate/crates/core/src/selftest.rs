//! Fast invariant checks runnable from the command line.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::eval::{assignment, assignment_cost, cost_matrix};
use crate::graph::{build_radius_graph, Normalizer};
use crate::ilp::IlpParams;
use crate::numerics::{pseudo_inverse, Activation, Matrix, MlpParams, DEFAULT_SIGMA_TOL};
use crate::particles::{decode_trajectory, encode_trajectory, generate_trajectory, StepState, ToyGenConfig};
use crate::rrmp::{EdgeLatents, EdgeMode, LatentNodes, RrmpStack};
use crate::simulator::{consistency_mse, ModelConfig, ModelParams};
use crate::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

type Check = fn(&mut ChaCha8Rng) -> Result<(bool, String)>;

/// Runs every check; errors count as failures.
pub fn run_selftest(seed: u64) -> Vec<CheckResult> {
    let checks: [(&'static str, Check); 8] = [
        ("pseudo-inverse Moore-Penrose", check_pinv),
        ("ILP reconstruction", check_ilp),
        ("cell list vs all pairs", check_graph),
        ("reversible stack roundtrip", check_rrmp),
        ("MLP gradient vs finite differences", check_mlp_grad),
        ("exact OT vs enumeration", check_ot),
        ("identity pipeline consistency", check_identity),
        ("trajectory format roundtrip", check_format),
    ];
    checks
        .iter()
        .map(|(name, f)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            match f(&mut rng) {
                Ok((passed, detail)) => CheckResult { name, passed, detail },
                Err(e) => CheckResult {
                    name,
                    passed: false,
                    detail: format!("error: {e}"),
                },
            }
        })
        .collect()
}

fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix<f64> {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

fn check_pinv(rng: &mut ChaCha8Rng) -> Result<(bool, String)> {
    let w = random_matrix(32, 8, rng);
    let p = pseudo_inverse(&w, DEFAULT_SIGMA_TOL)?;
    let wpw = w.matmul(&p).matmul(&w);
    let pwp = p.matmul(&w).matmul(&p);
    let err = wpw.max_abs_diff(&w).max(pwp.max_abs_diff(&p));
    Ok((err <= 1e-10, format!("max error {err:e}")))
}

fn check_ilp(rng: &mut ChaCha8Rng) -> Result<(bool, String)> {
    let ilp = IlpParams::<f64>::init(128, 32, rng)?;
    let chi = random_matrix(1000, 32, rng);
    let back = ilp.decode(&ilp.encode(&chi)?)?;
    let mut worst: f64 = 0.0;
    for i in 0..chi.rows() {
        let e: f64 = chi.row(i).iter().zip(back.row(i)).map(|(a, b)| (a - b) * (a - b)).sum();
        worst = worst.max(e);
    }
    Ok((worst < 1e-6, format!("worst squared error {worst:e}")))
}

fn check_graph(rng: &mut ChaCha8Rng) -> Result<(bool, String)> {
    for trial in 0..50 {
        let dims = 2 + trial % 2;
        let n = rng.random_range(1..120);
        let r = rng.random_range(0.05..0.3);
        let pos: Vec<f64> = (0..n * dims).map(|_| rng.random::<f64>()).collect();
        let g = build_radius_graph(&pos, dims, r)?;
        let mut brute = Vec::new();
        for i in 0..n {
            for j in 0..n {
                let d2: f64 = (0..dims).map(|a| (pos[i * dims + a] - pos[j * dims + a]).powi(2)).sum();
                if i != j && d2 <= r * r {
                    brute.push((i, j));
                }
            }
        }
        if brute != g.edges {
            return Ok((false, format!("mismatch in trial {trial}")));
        }
    }
    Ok((true, "50 configurations".into()))
}

fn check_rrmp(rng: &mut ChaCha8Rng) -> Result<(bool, String)> {
    let n = 60;
    let pos: Vec<f64> = (0..n * 2).map(|_| rng.random::<f64>()).collect();
    let graph = build_radius_graph(&pos, 2, 0.2)?;
    let stack = RrmpStack::<f64>::init(4, 32, 32, 2, Activation::Relu, 0.1, EdgeMode::Fixed, rng)?;
    let nodes = LatentNodes {
        n1: random_matrix(n, 16, rng),
        n2: random_matrix(n, 16, rng),
    };
    let edges = EdgeLatents {
        e1: random_matrix(graph.n_edges(), 16, rng),
        e2: random_matrix(graph.n_edges(), 16, rng),
    };
    let (out, out_e) = stack.forward(&nodes, &edges, &graph)?;
    let (back, _) = stack.inverse(&out, &out_e, &graph)?;
    let err = back.max_abs_diff(&nodes);
    Ok((err <= 1e-11, format!("max-abs roundtrip error {err:e}")))
}

fn check_mlp_grad(rng: &mut ChaCha8Rng) -> Result<(bool, String)> {
    let net = MlpParams::<f64>::init(&[3, 4, 2], Activation::Tanh, 1.0, rng);
    let x = random_matrix(2, 3, rng);
    let dy = random_matrix(2, 2, rng);
    let (_, cache) = net.forward(&x)?;
    let (_, grads) = net.backward(&cache, &dy)?;
    let objective = |net: &MlpParams<f64>| -> Result<f64> {
        let y = net.eval(&x)?;
        Ok(y.as_slice().iter().zip(dy.as_slice()).map(|(a, b)| a * b).sum())
    };
    let analytic: Vec<f64> = grads.tensors().concat();
    let mut worst: f64 = 0.0;
    let h = 1e-5;
    let count = analytic.len();
    for idx in 0..count {
        let mut plus = net.clone();
        let mut minus = net.clone();
        set_flat(&mut plus, idx, h);
        set_flat(&mut minus, idx, -h);
        let fd = (objective(&plus)? - objective(&minus)?) / (2.0 * h);
        let a = analytic[idx];
        let rel = (fd - a).abs() / a.abs().max(fd.abs()).max(1e-6);
        worst = worst.max(rel);
    }
    Ok((worst <= 1e-6, format!("worst relative error {worst:e}")))
}

fn set_flat(net: &mut MlpParams<f64>, mut idx: usize, delta: f64) {
    for t in net.tensors_mut() {
        if idx < t.len() {
            t[idx] += delta;
            return;
        }
        idx -= t.len();
    }
}

fn check_ot(rng: &mut ChaCha8Rng) -> Result<(bool, String)> {
    for trial in 0..20 {
        let n = 5;
        let a: Vec<f64> = (0..2 * n).map(|_| rng.random::<f64>()).collect();
        let b: Vec<f64> = (0..2 * n).map(|_| rng.random::<f64>()).collect();
        let cost = cost_matrix(&a, &b, 2);
        let exact = assignment_cost(&cost, n, &assignment(&cost, n));
        let mut best = f64::INFINITY;
        let mut perm: Vec<usize> = (0..n).collect();
        permutations(&mut perm, 0, &mut |p| best = best.min(assignment_cost(&cost, n, p)));
        if exact != best {
            return Ok((false, format!("trial {trial}: {exact} vs {best}")));
        }
    }
    Ok((true, "20 trials".into()))
}

fn permutations(p: &mut Vec<usize>, k: usize, f: &mut dyn FnMut(&[usize])) {
    if k == p.len() {
        f(p);
        return;
    }
    for i in k..p.len() {
        p.swap(k, i);
        permutations(p, k + 1, f);
        p.swap(k, i);
    }
}

fn check_identity(_: &mut ChaCha8Rng) -> Result<(bool, String)> {
    let cfg = ModelConfig {
        latent: 32,
        hidden: 8,
        n_layers: 2,
        ..ModelConfig::default()
    };
    let model = ModelParams::<f64>::identity(cfg, Normalizer::identity(2))?;
    let positions = vec![0.3, 0.4, 0.32, 0.41, 0.6, 0.7];
    let mut state = StepState::at_rest(2, positions, vec![0; 3], 5, 0);
    for f in &mut state.window {
        for (j, v) in f.iter_mut().enumerate() {
            *v = if j % 2 == 0 { 0.5 } else { -0.25 };
        }
    }
    let c = consistency_mse(&model, &state, 10)?;
    Ok((c == 0.0, format!("consistency {c:e}")))
}

fn check_format(rng: &mut ChaCha8Rng) -> Result<(bool, String)> {
    let cfg = ToyGenConfig {
        n_particles: 20,
        n_steps: 12,
        seed: rng.random(),
        ..ToyGenConfig::default()
    };
    let t = generate_trajectory(&cfg)?;
    let back = decode_trajectory(&encode_trajectory(&t))?;
    Ok((back == t, format!("{} bytes", encode_trajectory(&t).len())))
}
