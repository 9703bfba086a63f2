use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::WindowSample;
use crate::graph::{build_radius_graph, edge_features, node_physical, RadiusGraph};
use crate::numerics::{Matrix, Real};
use crate::rrmp::{default_drift_guard, Direction, EdgeLatents, LatentNodes, StackGrads};
use crate::simulator::ModelParams;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum LossMode {
    #[serde(rename = "forward-only")]
    ForwardOnly,
    #[default]
    #[serde(rename = "bidirectional")]
    Bidirectional,
}

impl std::str::FromStr for LossMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "forward-only" | "forward" => Ok(Self::ForwardOnly),
            "bidirectional" => Ok(Self::Bidirectional),
            other => Err(Error::Config(format!("unknown loss mode '{other}'"))),
        }
    }
}

/// How the stack gradient is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum BackwardMode {
    /// Rebuild activations from the stack output.
    #[default]
    Recompute,
    /// Keep every activation from the forward sweep.
    Stored,
}

/// Parameter-independent inputs of one sample: graph, edge geometry, noised
/// physical inputs for both directions and clean normalized targets.
#[derive(Debug, Clone)]
pub struct PreparedSample<T> {
    pub graph: RadiusGraph,
    pub geom: Matrix<T>,
    pub chi_forward: Matrix<T>,
    pub chi_inverse: Matrix<T>,
    /// `N x D` normalized `v^{t+1}`.
    pub target_forward: Matrix<T>,
    /// `N x D` normalized `v^{t-k+1}`.
    pub target_inverse: Matrix<T>,
}

/// Builds inputs for `sample`, adding Gaussian noise of `noise_std`
/// (normalized units) to every input velocity. A velocity frame shared by the
/// forward and the inverse window receives the same noise in both.
pub fn prepare_sample<T: Real, R: Rng + ?Sized>(
    model: &ModelParams<T>,
    sample: &WindowSample,
    noise_std: f64,
    rng: &mut R,
) -> Result<PreparedSample<T>> {
    let cfg = &model.config;
    let layout = cfg.layout();
    let bounds = cfg.bounds()?;
    let state = &sample.state;
    let k = state.history();
    let d = cfg.dims;
    let n = state.n_particles();
    if !(noise_std >= 0.0) {
        return Err(Error::Config("noise_std must be >= 0".into()));
    }

    let graph = build_radius_graph(&state.positions, d, cfg.radius)?;
    let geom = edge_features(&graph, &state.positions, d, cfg.radius).cast();

    // Frames v^{t-k+1} .. v^{t+1}, normalized, then noised.
    let mut frames: Vec<Vec<f64>> = Vec::with_capacity(k + 1);
    for f in state.window.iter().chain(std::iter::once(&sample.next_velocity)) {
        frames.push(normalize_frame(model, f, d));
    }
    if noise_std > 0.0 {
        let dist = Normal::new(0.0, noise_std).map_err(|e| Error::Config(e.to_string()))?;
        for f in &mut frames {
            for x in f.iter_mut() {
                *x += dist.sample(rng);
            }
        }
    }

    let base = node_physical(state, &state.positions, &bounds, cfg.radius, &model.normalizer, &layout)?;
    let mut chi_f = base.clone();
    let mut chi_i = base;
    for i in 0..n {
        for s in 0..k {
            let cols = layout.slot(s);
            chi_f.row_mut(i)[cols.clone()].copy_from_slice(&frames[s][i * d..(i + 1) * d]);
            chi_i.row_mut(i)[cols].copy_from_slice(&frames[s + 1][i * d..(i + 1) * d]);
        }
    }

    let target = |v: &[f64]| -> Matrix<T> {
        let z = normalize_frame(model, v, d);
        Matrix::from_fn(n, d, |i, a| T::from_f64(z[i * d + a]))
    };
    Ok(PreparedSample {
        graph,
        geom,
        chi_forward: chi_f.cast(),
        chi_inverse: chi_i.cast(),
        target_forward: target(&sample.next_velocity),
        target_inverse: target(&sample.oldest_velocity),
    })
}

fn normalize_frame<T: Real>(model: &ModelParams<T>, v: &[f64], d: usize) -> Vec<f64> {
    v.iter()
        .enumerate()
        .map(|(j, &x)| model.normalizer.normalize(j % d, x))
        .collect()
}

/// Loss terms of one sample.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossValue {
    pub total: f64,
    pub forward: f64,
    pub inverse: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossOptions {
    pub mode: LossMode,
    /// Weight of the inverse term.
    pub lambda: f64,
    pub backward: BackwardMode,
}

impl Default for LossOptions {
    fn default() -> Self {
        Self {
            mode: LossMode::Bidirectional,
            lambda: 1.0,
            backward: BackwardMode::Recompute,
        }
    }
}

/// `MSE(v^{t+1}) + lambda * MSE(v^{t-k+1})` in normalized units. With
/// `want_grad`, also returns the gradient with respect to every parameter.
pub fn sample_loss<T: Real>(
    model: &ModelParams<T>,
    prep: &PreparedSample<T>,
    opts: &LossOptions,
    want_grad: bool,
) -> Result<(LossValue, Option<ModelParams<T>>)> {
    let layout = model.config.layout();
    let (edge_joined, edge_cache) = model.edge_enc.forward(&prep.geom)?;
    let edges = EdgeLatents::split(&edge_joined)?;
    let mut grads = want_grad.then(|| model.zeros_like());
    let mut d_edges = Matrix::zeros(edge_joined.rows(), edge_joined.cols());

    let mut value = LossValue::default();
    let (fwd, d_e) = branch(
        model,
        prep,
        &prep.chi_forward,
        &prep.target_forward,
        layout.newest(),
        Direction::Forward,
        &edges,
        1.0,
        opts.backward,
        grads.as_mut(),
    )?;
    value.forward = fwd;
    if let Some(de) = d_e {
        d_edges.add_assign(&de);
    }
    if opts.mode == LossMode::Bidirectional {
        let (inv, d_e) = branch(
            model,
            prep,
            &prep.chi_inverse,
            &prep.target_inverse,
            layout.oldest(),
            Direction::Inverse,
            &edges,
            opts.lambda,
            opts.backward,
            grads.as_mut(),
        )?;
        value.inverse = inv;
        if let Some(de) = d_e {
            d_edges.add_assign(&de);
        }
    }
    value.total = value.forward + opts.lambda * value.inverse;
    if !value.total.is_finite() {
        return Err(Error::Numeric(format!("non-finite loss {}", value.total)));
    }
    if let Some(g) = grads.as_mut() {
        model
            .edge_enc
            .backward_into(&edge_cache, &d_edges, &mut g.edge_enc, false)?;
    }
    Ok((value, grads))
}

/// One direction: encode, stack, decode, MSE on the predicted slot.
/// Returns the unweighted MSE and, with gradients on, `dL/d(edge latents)`.
#[allow(clippy::too_many_arguments)]
fn branch<T: Real>(
    model: &ModelParams<T>,
    prep: &PreparedSample<T>,
    chi: &Matrix<T>,
    target: &Matrix<T>,
    slot: std::ops::Range<usize>,
    direction: Direction,
    edges: &EdgeLatents<T>,
    weight: f64,
    backward: BackwardMode,
    grads: Option<&mut ModelParams<T>>,
) -> Result<(f64, Option<Matrix<T>>)> {
    let graph = &prep.graph;
    let (n, enc_cache) = model.codec.encode_cached(chi)?;
    let nodes = LatentNodes::split(&n)?;
    let mut out_nodes = nodes.clone();
    let mut out_edges = edges.clone();
    model.stack.apply(direction, &mut out_nodes, &mut out_edges, graph)?;
    let (chi_out, dec_cache) = model.codec.decode_cached(&out_nodes.joined())?;

    let rows = chi_out.rows();
    let dims = target.cols();
    let count = (rows * dims).max(1) as f64;
    let mut sq = 0.0;
    let mut dchi = Matrix::zeros(rows, chi_out.cols());
    for i in 0..rows {
        let pred = &chi_out.row(i)[slot.clone()];
        for a in 0..dims {
            let diff = pred[a].to_f64() - target.get(i, a).to_f64();
            sq += diff * diff;
            dchi.set(i, slot.start + a, T::from_f64(2.0 * weight * diff / count));
        }
    }
    let mse = sq / count;
    let Some(grads) = grads else {
        return Ok((mse, None));
    };

    let dn_out = model.codec.decode_backward(&dec_cache, &dchi, &mut grads.codec)?;
    let half = nodes.half_width();
    let grad_out = StackGrads {
        nodes: LatentNodes::split(&dn_out)?,
        edges: EdgeLatents::zeros(graph.n_edges(), half),
    };
    let result = match backward {
        BackwardMode::Recompute => model.stack.backward(
            direction,
            &out_nodes,
            &out_edges,
            &grad_out,
            graph,
            Some((&nodes, edges)),
            default_drift_guard(T::PRECISION),
        )?,
        BackwardMode::Stored => model.stack.backward_stored(direction, &nodes, edges, &grad_out, graph)?,
    };
    for (dst, (_, src)) in grads.stack.tensors_mut().into_iter().zip(result.param_grads.named_tensors()) {
        for (d, s) in dst.iter_mut().zip(src) {
            *d += *s;
        }
    }
    model
        .codec
        .encode_backward(&enc_cache, &result.grad_input.nodes.joined(), &mut grads.codec)?;
    Ok((mse, Some(result.grad_input.edges.joined())))
}
