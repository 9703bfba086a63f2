//! Reversible message-passing coupling layers.
//!
//! Each layer is two additive couplings on the split latent `(n1, n2)`:
//!
//! ```text
//! n1' = n1 + f_node(n2, sum_j f_edge(n2_i, n2_j, e2_ij))
//! n2' = n2 + g_node(n1', sum_j g_edge(n1'_i, n1'_j, e1_ij))
//! ```
//!
//! The inverse subtracts the same residuals in reverse order. The backward
//! pass walks the couplings from the output, rebuilding each coupling's input
//! by subtraction, so only one coupling's activations are alive at a time.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::graph::RadiusGraph;
use crate::ilp::named_mlp;
use crate::numerics::{Activation, Matrix, MlpCache, MlpParams, Precision, Real};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum EdgeMode {
    /// Edge latents are fixed conditions for every layer.
    #[default]
    Fixed,
    /// The `g` coupling also adds its per-edge messages to `e2`.
    Updated,
}

impl std::str::FromStr for EdgeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fixed" => Ok(Self::Fixed),
            "updated" => Ok(Self::Updated),
            other => Err(Error::Config(format!("unknown edge mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Forward,
    Inverse,
}

impl Direction {
    fn sign<T: Real>(self) -> T {
        match self {
            Direction::Forward => T::ONE,
            Direction::Inverse => -T::ONE,
        }
    }
}

/// Latent node features split into two equal halves.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentNodes<T> {
    pub n1: Matrix<T>,
    pub n2: Matrix<T>,
}

impl<T: Real> LatentNodes<T> {
    pub fn zeros(n: usize, half: usize) -> Self {
        Self {
            n1: Matrix::zeros(n, half),
            n2: Matrix::zeros(n, half),
        }
    }

    /// Splits an `N x d` matrix into its first and last `d/2` columns.
    pub fn split(joined: &Matrix<T>) -> Result<Self> {
        let d = joined.cols();
        if !d.is_multiple_of(2) {
            return Err(Error::Config(format!("latent width {d} is odd")));
        }
        Ok(Self {
            n1: joined.columns(0, d / 2),
            n2: joined.columns(d / 2, d / 2),
        })
    }

    pub fn joined(&self) -> Matrix<T> {
        Matrix::hcat(&self.n1, &self.n2)
    }

    pub fn n_nodes(&self) -> usize {
        self.n1.rows()
    }

    pub fn half_width(&self) -> usize {
        self.n1.cols()
    }

    pub fn is_finite(&self) -> bool {
        self.n1.is_finite() && self.n2.is_finite()
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.n1.max_abs_diff(&other.n1).max(self.n2.max_abs_diff(&other.n2))
    }
}

/// Per-edge latent halves `(e1, e2)`, each `E x d/2`.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeLatents<T> {
    pub e1: Matrix<T>,
    pub e2: Matrix<T>,
}

impl<T: Real> EdgeLatents<T> {
    pub fn zeros(e: usize, half: usize) -> Self {
        Self {
            e1: Matrix::zeros(e, half),
            e2: Matrix::zeros(e, half),
        }
    }

    pub fn split(joined: &Matrix<T>) -> Result<Self> {
        let n = LatentNodes::split(joined)?;
        Ok(Self { e1: n.n1, e2: n.n2 })
    }

    pub fn joined(&self) -> Matrix<T> {
        Matrix::hcat(&self.e1, &self.e2)
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.e1.max_abs_diff(&other.e1).max(self.e2.max_abs_diff(&other.e2))
    }
}

/// Gradients with respect to the stack's node and edge inputs or outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct StackGrads<T> {
    pub nodes: LatentNodes<T>,
    pub edges: EdgeLatents<T>,
}

impl<T: Real> StackGrads<T> {
    pub fn zeros(n: usize, e: usize, half: usize) -> Self {
        Self {
            nodes: LatentNodes::zeros(n, half),
            edges: EdgeLatents::zeros(e, half),
        }
    }
}

/// Subnetworks of one reversible layer.
#[derive(Debug, Clone, PartialEq)]
pub struct RrmpLayer<T> {
    pub f_edge: MlpParams<T>,
    pub f_node: MlpParams<T>,
    pub g_edge: MlpParams<T>,
    pub g_node: MlpParams<T>,
}

fn subnet_widths(input: usize, hidden: usize, hidden_layers: usize, output: usize) -> Vec<usize> {
    let mut w = vec![input];
    w.extend(std::iter::repeat_n(hidden, hidden_layers));
    w.push(output);
    w
}

impl<T: Real> RrmpLayer<T> {
    pub fn init<R: Rng + ?Sized>(
        half: usize,
        hidden: usize,
        hidden_layers: usize,
        activation: Activation,
        out_scale: f64,
        rng: &mut R,
    ) -> Self {
        let ew = subnet_widths(3 * half, hidden, hidden_layers, half);
        let nw = subnet_widths(2 * half, hidden, hidden_layers, half);
        Self {
            f_edge: MlpParams::init(&ew, activation, 1.0, rng),
            f_node: MlpParams::init(&nw, activation, out_scale, rng),
            g_edge: MlpParams::init(&ew, activation, 1.0, rng),
            g_node: MlpParams::init(&nw, activation, out_scale, rng),
        }
    }

    pub fn zeros(half: usize, hidden: usize, hidden_layers: usize, activation: Activation) -> Self {
        let ew = subnet_widths(3 * half, hidden, hidden_layers, half);
        let nw = subnet_widths(2 * half, hidden, hidden_layers, half);
        Self {
            f_edge: MlpParams::zeros(&ew, activation),
            f_node: MlpParams::zeros(&nw, activation),
            g_edge: MlpParams::zeros(&ew, activation),
            g_node: MlpParams::zeros(&nw, activation),
        }
    }

    pub fn half_width(&self) -> usize {
        self.f_node.output_width()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            f_edge: self.f_edge.zeros_like(),
            f_node: self.f_node.zeros_like(),
            g_edge: self.g_edge.zeros_like(),
            g_node: self.g_node.zeros_like(),
        }
    }

    pub fn cast<U: Real>(&self) -> RrmpLayer<U> {
        RrmpLayer {
            f_edge: self.f_edge.cast(),
            f_node: self.f_node.cast(),
            g_edge: self.g_edge.cast(),
            g_node: self.g_node.cast(),
        }
    }

    fn subnets(&self) -> [(&'static str, &MlpParams<T>); 4] {
        [
            ("f_edge", &self.f_edge),
            ("f_node", &self.f_node),
            ("g_edge", &self.g_edge),
            ("g_node", &self.g_node),
        ]
    }

    fn subnets_mut(&mut self) -> [&mut MlpParams<T>; 4] {
        [&mut self.f_edge, &mut self.f_node, &mut self.g_edge, &mut self.g_node]
    }
}

/// Activations of one coupling, enough to backpropagate through it.
#[derive(Debug, Clone)]
struct CouplingCache<T> {
    edge: MlpCache<T>,
    node: MlpCache<T>,
}

impl<T: Real> CouplingCache<T> {
    fn retained(&self) -> usize {
        self.edge.retained() + self.node.retained()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Coupling {
    /// Updates `n1` from `(n2, e2)` with the `f` subnetworks.
    F,
    /// Updates `n2` (and `e2` in updated-edge mode) from `(n1, e1)` with `g`.
    G,
}

/// Storage accounting for a backward pass.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BackwardStats {
    /// Largest number of activation scalars held at any one time.
    pub peak_cached: usize,
    /// Max-abs gap between the rebuilt and the expected stack input (0 when
    /// no expected input was supplied or activations were stored).
    pub drift: f64,
}

#[derive(Debug, Clone)]
pub struct BackwardOutput<T> {
    pub grad_input: StackGrads<T>,
    pub param_grads: RrmpStack<T>,
    pub stats: BackwardStats,
}

/// Drift threshold used by [`RrmpStack::backward`] for precision `p`.
pub fn default_drift_guard(p: Precision) -> f64 {
    match p {
        Precision::Single => 1e-3,
        Precision::Double => 1e-9,
    }
}

/// `M` reversible layers sharing one edge mode.
#[derive(Debug, Clone, PartialEq)]
pub struct RrmpStack<T> {
    pub layers: Vec<RrmpLayer<T>>,
    pub edge_mode: EdgeMode,
}

impl<T: Real> RrmpStack<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn init<R: Rng + ?Sized>(
        n_layers: usize,
        latent: usize,
        hidden: usize,
        hidden_layers: usize,
        activation: Activation,
        out_scale: f64,
        edge_mode: EdgeMode,
        rng: &mut R,
    ) -> Result<Self> {
        check_shape(n_layers, latent)?;
        let layers = (0..n_layers)
            .map(|_| RrmpLayer::init(latent / 2, hidden, hidden_layers, activation, out_scale, rng))
            .collect();
        Ok(Self { layers, edge_mode })
    }

    /// Stack whose every subnetwork is identically zero: the identity map.
    pub fn zeros(
        n_layers: usize,
        latent: usize,
        hidden: usize,
        hidden_layers: usize,
        activation: Activation,
        edge_mode: EdgeMode,
    ) -> Result<Self> {
        check_shape(n_layers, latent)?;
        let layers = (0..n_layers)
            .map(|_| RrmpLayer::zeros(latent / 2, hidden, hidden_layers, activation))
            .collect();
        Ok(Self { layers, edge_mode })
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn half_width(&self) -> usize {
        self.layers[0].half_width()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self.layers.iter().map(|l| l.zeros_like()).collect(),
            edge_mode: self.edge_mode,
        }
    }

    pub fn cast<U: Real>(&self) -> RrmpStack<U> {
        RrmpStack {
            layers: self.layers.iter().map(|l| l.cast()).collect(),
            edge_mode: self.edge_mode,
        }
    }

    pub fn named_tensors(&self) -> Vec<(String, &[T])> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            for (name, net) in layer.subnets() {
                out.extend(named_mlp(&format!("stack.{i}.{name}"), net));
            }
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            for net in layer.subnets_mut() {
                out.extend(net.tensors_mut());
            }
        }
        out
    }

    /// Applies every layer in order (`Forward`) or undoes them in reverse
    /// order (`Inverse`), in place.
    pub fn apply(
        &self,
        direction: Direction,
        nodes: &mut LatentNodes<T>,
        edges: &mut EdgeLatents<T>,
        graph: &RadiusGraph,
    ) -> Result<()> {
        self.check_inputs(nodes, edges, graph)?;
        let s = direction.sign::<T>();
        for (l, c) in self.schedule(direction) {
            self.coupling(l, c, s, nodes, edges, graph, false)?;
        }
        Ok(())
    }

    pub fn forward(
        &self,
        nodes: &LatentNodes<T>,
        edges: &EdgeLatents<T>,
        graph: &RadiusGraph,
    ) -> Result<(LatentNodes<T>, EdgeLatents<T>)> {
        let (mut n, mut e) = (nodes.clone(), edges.clone());
        self.apply(Direction::Forward, &mut n, &mut e, graph)?;
        Ok((n, e))
    }

    pub fn inverse(
        &self,
        nodes: &LatentNodes<T>,
        edges: &EdgeLatents<T>,
        graph: &RadiusGraph,
    ) -> Result<(LatentNodes<T>, EdgeLatents<T>)> {
        let (mut n, mut e) = (nodes.clone(), edges.clone());
        self.apply(Direction::Inverse, &mut n, &mut e, graph)?;
        Ok((n, e))
    }

    /// Single layer `l` in the given direction.
    pub fn apply_layer(
        &self,
        l: usize,
        direction: Direction,
        nodes: &mut LatentNodes<T>,
        edges: &mut EdgeLatents<T>,
        graph: &RadiusGraph,
    ) -> Result<()> {
        if l >= self.layers.len() {
            return Err(Error::Config(format!("layer {l} out of range")));
        }
        self.check_inputs(nodes, edges, graph)?;
        let s = direction.sign::<T>();
        let order = match direction {
            Direction::Forward => [Coupling::F, Coupling::G],
            Direction::Inverse => [Coupling::G, Coupling::F],
        };
        for c in order {
            self.coupling(l, c, s, nodes, edges, graph, false)?;
        }
        Ok(())
    }

    /// Reversible backward pass starting from the stack output.
    ///
    /// Each coupling's input is rebuilt from its output by subtracting the
    /// re-evaluated residual; that same evaluation supplies the activations
    /// needed for its gradient. When `expected_input` is given, the rebuilt
    /// input is compared against it and a gap above `guard` is an error.
    #[allow(clippy::too_many_arguments)]
    pub fn backward(
        &self,
        direction: Direction,
        output_nodes: &LatentNodes<T>,
        output_edges: &EdgeLatents<T>,
        grad_output: &StackGrads<T>,
        graph: &RadiusGraph,
        expected_input: Option<(&LatentNodes<T>, &EdgeLatents<T>)>,
        guard: f64,
    ) -> Result<BackwardOutput<T>> {
        self.check_inputs(output_nodes, output_edges, graph)?;
        self.check_grads(grad_output, output_nodes, output_edges)?;
        let s = direction.sign::<T>();
        let mut nodes = output_nodes.clone();
        let mut edges = output_edges.clone();
        let mut grad = grad_output.clone();
        let mut params = self.zeros_like();
        let mut stats = BackwardStats::default();
        for (l, c) in self.schedule(direction).into_iter().rev() {
            let cache = self
                .coupling(l, c, -s, &mut nodes, &mut edges, graph, true)?
                .expect("cache requested");
            stats.peak_cached = stats.peak_cached.max(cache.retained());
            self.coupling_backward(l, c, s, &cache, graph, &mut grad, &mut params)?;
        }
        if let Some((n0, e0)) = expected_input {
            let drift = nodes.max_abs_diff(n0).max(edges.e2.max_abs_diff(&e0.e2));
            stats.drift = drift;
            let scale = max_abs(&n0.n1).max(max_abs(&n0.n2)).max(1.0);
            if !(drift <= guard * scale) {
                return Err(Error::Drift { drift, guard });
            }
        }
        Ok(BackwardOutput {
            grad_input: grad,
            param_grads: params,
            stats,
        })
    }

    /// Reference backward pass that stores every coupling's activations
    /// during a fresh forward sweep from the stack input.
    pub fn backward_stored(
        &self,
        direction: Direction,
        input_nodes: &LatentNodes<T>,
        input_edges: &EdgeLatents<T>,
        grad_output: &StackGrads<T>,
        graph: &RadiusGraph,
    ) -> Result<BackwardOutput<T>> {
        self.check_inputs(input_nodes, input_edges, graph)?;
        self.check_grads(grad_output, input_nodes, input_edges)?;
        let s = direction.sign::<T>();
        let mut nodes = input_nodes.clone();
        let mut edges = input_edges.clone();
        let schedule = self.schedule(direction);
        let mut caches = Vec::with_capacity(schedule.len());
        let mut held = 0usize;
        for &(l, c) in &schedule {
            let cache = self
                .coupling(l, c, s, &mut nodes, &mut edges, graph, true)?
                .expect("cache requested");
            held += cache.retained();
            caches.push(cache);
        }
        let mut grad = grad_output.clone();
        let mut params = self.zeros_like();
        for (&(l, c), cache) in schedule.iter().zip(&caches).rev() {
            self.coupling_backward(l, c, s, cache, graph, &mut grad, &mut params)?;
        }
        Ok(BackwardOutput {
            grad_input: grad,
            param_grads: params,
            stats: BackwardStats {
                peak_cached: held,
                drift: 0.0,
            },
        })
    }

    fn schedule(&self, direction: Direction) -> Vec<(usize, Coupling)> {
        let fwd: Vec<_> = (0..self.layers.len())
            .flat_map(|l| [(l, Coupling::F), (l, Coupling::G)])
            .collect();
        match direction {
            Direction::Forward => fwd,
            Direction::Inverse => fwd.into_iter().rev().collect(),
        }
    }

    fn check_inputs(&self, nodes: &LatentNodes<T>, edges: &EdgeLatents<T>, graph: &RadiusGraph) -> Result<()> {
        let h = self.half_width();
        if nodes.n1.cols() != h || nodes.n2.cols() != h || edges.e1.cols() != h || edges.e2.cols() != h {
            return Err(Error::Config(format!("latent halves must have width {h}")));
        }
        if nodes.n1.rows() != graph.n_nodes || nodes.n2.rows() != graph.n_nodes {
            return Err(Error::Config("node count does not match graph".into()));
        }
        if edges.e1.rows() != graph.n_edges() || edges.e2.rows() != graph.n_edges() {
            return Err(Error::Config("edge latent count does not match graph".into()));
        }
        Ok(())
    }

    fn check_grads(&self, g: &StackGrads<T>, nodes: &LatentNodes<T>, edges: &EdgeLatents<T>) -> Result<()> {
        if g.nodes.n1.shape() != nodes.n1.shape()
            || g.nodes.n2.shape() != nodes.n2.shape()
            || g.edges.e1.shape() != edges.e1.shape()
            || g.edges.e2.shape() != edges.e2.shape()
        {
            return Err(Error::Config("gradient shapes do not match the stack state".into()));
        }
        Ok(())
    }

    /// Adds `s` times the coupling residual to its target half.
    #[allow(clippy::too_many_arguments)]
    fn coupling(
        &self,
        l: usize,
        c: Coupling,
        s: T,
        nodes: &mut LatentNodes<T>,
        edges: &mut EdgeLatents<T>,
        graph: &RadiusGraph,
        keep: bool,
    ) -> Result<Option<CouplingCache<T>>> {
        let layer = &self.layers[l];
        match c {
            Coupling::F => {
                let (res, _, cache) = coupling_eval(&layer.f_edge, &layer.f_node, &nodes.n2, &edges.e2, graph, keep)?;
                axpy(&mut nodes.n1, s, &res);
                Ok(cache)
            }
            Coupling::G => {
                let (res, msg, cache) = coupling_eval(&layer.g_edge, &layer.g_node, &nodes.n1, &edges.e1, graph, keep)?;
                axpy(&mut nodes.n2, s, &res);
                if self.edge_mode == EdgeMode::Updated {
                    axpy(&mut edges.e2, s, &msg);
                }
                Ok(cache)
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn coupling_backward(
        &self,
        l: usize,
        c: Coupling,
        s: T,
        cache: &CouplingCache<T>,
        graph: &RadiusGraph,
        grad: &mut StackGrads<T>,
        params: &mut RrmpStack<T>,
    ) -> Result<()> {
        let layer = &self.layers[l];
        let pg = &mut params.layers[l];
        match c {
            Coupling::F => {
                let d_res = scaled(&grad.nodes.n1, s);
                coupling_grad(
                    &layer.f_edge,
                    &layer.f_node,
                    cache,
                    graph,
                    &d_res,
                    None,
                    &mut pg.f_edge,
                    &mut pg.f_node,
                    &mut grad.nodes.n2,
                    &mut grad.edges.e2,
                )
            }
            Coupling::G => {
                let d_res = scaled(&grad.nodes.n2, s);
                let d_msg = (self.edge_mode == EdgeMode::Updated).then(|| scaled(&grad.edges.e2, s));
                coupling_grad(
                    &layer.g_edge,
                    &layer.g_node,
                    cache,
                    graph,
                    &d_res,
                    d_msg.as_ref(),
                    &mut pg.g_edge,
                    &mut pg.g_node,
                    &mut grad.nodes.n1,
                    &mut grad.edges.e1,
                )
            }
        }
    }
}

fn check_shape(n_layers: usize, latent: usize) -> Result<()> {
    if n_layers == 0 {
        return Err(Error::Config("the stack needs at least one layer".into()));
    }
    if latent == 0 || !latent.is_multiple_of(2) {
        return Err(Error::Config(format!("latent width must be even and positive, got {latent}")));
    }
    Ok(())
}

/// `[x_i, x_j, e_ij]` for every edge.
fn edge_inputs<T: Real>(x: &Matrix<T>, e: &Matrix<T>, graph: &RadiusGraph) -> Matrix<T> {
    let h = x.cols();
    let he = e.cols();
    let mut z = Matrix::zeros(graph.n_edges(), 2 * h + he);
    for (k, &(i, j)) in graph.edges.iter().enumerate() {
        let row = z.row_mut(k);
        row[..h].copy_from_slice(x.row(i));
        row[h..2 * h].copy_from_slice(x.row(j));
        row[2 * h..].copy_from_slice(e.row(k));
    }
    z
}

/// Sum of messages over each node's incoming edges, in edge order.
fn aggregate<T: Real>(msg: &Matrix<T>, graph: &RadiusGraph) -> Matrix<T> {
    let mut agg = Matrix::zeros(graph.n_nodes, msg.cols());
    for i in 0..graph.n_nodes {
        let row = agg.row_mut(i);
        for k in graph.incoming(i) {
            for (a, m) in row.iter_mut().zip(msg.row(k)) {
                *a += *m;
            }
        }
    }
    agg
}

/// Residual `node([x, sum_j edge([x_i, x_j, e_ij])])` and the per-edge messages.
#[allow(clippy::type_complexity)]
fn coupling_eval<T: Real>(
    edge_net: &MlpParams<T>,
    node_net: &MlpParams<T>,
    x: &Matrix<T>,
    e: &Matrix<T>,
    graph: &RadiusGraph,
    keep: bool,
) -> Result<(Matrix<T>, Matrix<T>, Option<CouplingCache<T>>)> {
    let z = edge_inputs(x, e, graph);
    let (msg, edge_cache) = if keep {
        let (m, c) = edge_net.forward(&z)?;
        (m, Some(c))
    } else {
        (edge_net.eval(&z)?, None)
    };
    let agg = aggregate(&msg, graph);
    let node_in = Matrix::hcat(x, &agg);
    if keep {
        let (res, node_cache) = node_net.forward(&node_in)?;
        let cache = CouplingCache {
            edge: edge_cache.expect("edge cache kept"),
            node: node_cache,
        };
        Ok((res, msg, Some(cache)))
    } else {
        Ok((node_net.eval(&node_in)?, msg, None))
    }
}

#[allow(clippy::too_many_arguments)]
fn coupling_grad<T: Real>(
    edge_net: &MlpParams<T>,
    node_net: &MlpParams<T>,
    cache: &CouplingCache<T>,
    graph: &RadiusGraph,
    d_res: &Matrix<T>,
    d_msg_extra: Option<&Matrix<T>>,
    g_edge: &mut MlpParams<T>,
    g_node: &mut MlpParams<T>,
    d_x: &mut Matrix<T>,
    d_e: &mut Matrix<T>,
) -> Result<()> {
    let h = d_x.cols();
    let d_node_in = node_net
        .backward_into(&cache.node, d_res, g_node, true)?
        .expect("input gradient requested");
    let mut d_msg = match d_msg_extra {
        Some(m) => m.clone(),
        None => Matrix::zeros(graph.n_edges(), edge_net.output_width()),
    };
    for i in 0..graph.n_nodes {
        let d_agg = &d_node_in.row(i)[h..];
        for k in graph.incoming(i) {
            for (m, a) in d_msg.row_mut(k).iter_mut().zip(d_agg) {
                *m += *a;
            }
        }
        for (dx, g) in d_x.row_mut(i).iter_mut().zip(&d_node_in.row(i)[..h]) {
            *dx += *g;
        }
    }
    if graph.n_edges() == 0 {
        return Ok(());
    }
    let d_z = edge_net
        .backward_into(&cache.edge, &d_msg, g_edge, true)?
        .expect("input gradient requested");
    for (k, &(i, j)) in graph.edges.iter().enumerate() {
        let row = d_z.row(k);
        for (dx, g) in d_x.row_mut(i).iter_mut().zip(&row[..h]) {
            *dx += *g;
        }
        for (dx, g) in d_x.row_mut(j).iter_mut().zip(&row[h..2 * h]) {
            *dx += *g;
        }
        for (de, g) in d_e.row_mut(k).iter_mut().zip(&row[2 * h..]) {
            *de += *g;
        }
    }
    Ok(())
}

fn axpy<T: Real>(y: &mut Matrix<T>, s: T, x: &Matrix<T>) {
    for (a, b) in y.as_mut_slice().iter_mut().zip(x.as_slice()) {
        *a += s * *b;
    }
}

fn scaled<T: Real>(x: &Matrix<T>, s: T) -> Matrix<T> {
    let mut out = x.clone();
    out.scale(s);
    out
}

fn max_abs<T: Real>(m: &Matrix<T>) -> f64 {
    m.as_slice().iter().fold(0.0, |acc, x| acc.max(x.to_f64().abs()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_latents(n: usize, h: usize, rng: &mut ChaCha8Rng) -> Matrix<f64> {
        Matrix::from_fn(n, h, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn zero_stack_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let stack = RrmpStack::<f64>::zeros(3, 8, 16, 2, Activation::Relu, EdgeMode::Fixed).unwrap();
        let graph = RadiusGraph::from_edges(3, vec![(0, 1), (1, 0), (1, 2), (2, 1)]).unwrap();
        let nodes = LatentNodes {
            n1: random_latents(3, 4, &mut rng),
            n2: random_latents(3, 4, &mut rng),
        };
        let edges = EdgeLatents {
            e1: random_latents(4, 4, &mut rng),
            e2: random_latents(4, 4, &mut rng),
        };
        let (fwd, _) = stack.forward(&nodes, &edges, &graph).unwrap();
        assert_eq!(fwd, nodes);
        let (inv, _) = stack.inverse(&nodes, &edges, &graph).unwrap();
        assert_eq!(inv, nodes);
    }

    #[test]
    fn isolated_node_sees_zero_aggregate() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let stack = RrmpStack::<f64>::init(1, 4, 8, 2, Activation::Relu, 1.0, EdgeMode::Fixed, &mut rng).unwrap();
        let graph = RadiusGraph::from_edges(1, vec![]).unwrap();
        let nodes = LatentNodes {
            n1: random_latents(1, 2, &mut rng),
            n2: random_latents(1, 2, &mut rng),
        };
        let edges = EdgeLatents::zeros(0, 2);
        let (out, _) = stack.forward(&nodes, &edges, &graph).unwrap();

        let layer = &stack.layers[0];
        let zero = [0.0, 0.0];
        let f_in: Vec<f64> = nodes.n2.row(0).iter().chain(&zero).copied().collect();
        let (f, _) = layer.f_node.forward_vec(&f_in).unwrap();
        let n1: Vec<f64> = nodes.n1.row(0).iter().zip(&f).map(|(a, b)| a + b).collect();
        let g_in: Vec<f64> = n1.iter().chain(&zero).copied().collect();
        let (g, _) = layer.g_node.forward_vec(&g_in).unwrap();
        let n2: Vec<f64> = nodes.n2.row(0).iter().zip(&g).map(|(a, b)| a + b).collect();
        assert_eq!(out.n1.row(0), &n1[..]);
        assert_eq!(out.n2.row(0), &n2[..]);
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let stack = RrmpStack::<f64>::init(2, 4, 8, 2, Activation::Tanh, 1.0, EdgeMode::Fixed, &mut rng).unwrap();
        let graph = RadiusGraph::from_edges(2, vec![(0, 1), (1, 0)]).unwrap();
        let nodes = LatentNodes {
            n1: random_latents(2, 2, &mut rng),
            n2: random_latents(2, 2, &mut rng),
        };
        let edges = EdgeLatents {
            e1: random_latents(2, 2, &mut rng),
            e2: random_latents(2, 2, &mut rng),
        };
        let (out_n, out_e) = stack.forward(&nodes, &edges, &graph).unwrap();
        let g = StackGrads::zeros(2, 2, 2);
        let r = stack
            .backward(Direction::Forward, &out_n, &out_e, &g, &graph, Some((&nodes, &edges)), 1e-9)
            .unwrap();
        assert_eq!(r.grad_input, g);
        for layer in &r.param_grads.layers {
            for net in layer.subnets() {
                assert!(net.1.tensors().iter().all(|t| t.iter().all(|&x| x == 0.0)));
            }
        }
    }

    #[test]
    fn wrong_width_is_config_error() {
        let stack = RrmpStack::<f64>::zeros(1, 4, 4, 1, Activation::Relu, EdgeMode::Fixed).unwrap();
        let graph = RadiusGraph::from_edges(1, vec![]).unwrap();
        let nodes = LatentNodes::zeros(1, 3);
        let edges = EdgeLatents::zeros(0, 3);
        assert!(matches!(stack.forward(&nodes, &edges, &graph), Err(Error::Config(_))));
    }
}
