use std::collections::HashMap;

use crate::{Error, Result};

/// Directed radius graph. Edges `(receiver, sender)` are sorted
/// lexicographically, so each receiver's incoming edges are contiguous.
#[derive(Debug, Clone, PartialEq)]
pub struct RadiusGraph {
    pub n_nodes: usize,
    pub edges: Vec<(usize, usize)>,
    /// `offsets[i]..offsets[i + 1]` indexes the incoming edges of node `i`.
    pub offsets: Vec<usize>,
}

impl RadiusGraph {
    pub fn from_edges(n_nodes: usize, mut edges: Vec<(usize, usize)>) -> Result<Self> {
        edges.sort_unstable();
        edges.dedup();
        if edges.iter().any(|&(i, j)| i == j || i >= n_nodes || j >= n_nodes) {
            return Err(Error::Config("edge list has self-edges or out-of-range nodes".into()));
        }
        let mut offsets = vec![0usize; n_nodes + 1];
        for &(i, _) in &edges {
            offsets[i + 1] += 1;
        }
        for i in 0..n_nodes {
            offsets[i + 1] += offsets[i];
        }
        Ok(Self {
            n_nodes,
            edges,
            offsets,
        })
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn incoming(&self, i: usize) -> std::ops::Range<usize> {
        self.offsets[i]..self.offsets[i + 1]
    }

    /// Applies a node relabeling `new = perm[old]`, re-sorting edges.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let edges = self.edges.iter().map(|&(i, j)| (perm[i], perm[j])).collect();
        Self::from_edges(self.n_nodes, edges)
    }
}

/// All ordered pairs `(i, j)`, `i != j`, with `|p_i - p_j| <= r`, found by
/// binning into cubic cells of side `r` and scanning the 3^D stencil.
pub fn build_radius_graph(positions: &[f64], dims: usize, r: f64) -> Result<RadiusGraph> {
    if !(r > 0.0 && r.is_finite()) {
        return Err(Error::Config(format!("radius must be positive, got {r}")));
    }
    if dims == 0 || !positions.len().is_multiple_of(dims) {
        return Err(Error::Config("positions length is not a multiple of dims".into()));
    }
    if positions.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numeric("non-finite particle position".into()));
    }
    let n = positions.len() / dims;
    if n == 0 {
        return RadiusGraph::from_edges(0, Vec::new());
    }
    let mut origin = [f64::INFINITY; 3];
    for p in positions.chunks(dims) {
        for a in 0..dims {
            origin[a] = origin[a].min(p[a]);
        }
    }
    let cell_of = |p: &[f64]| -> [i64; 3] {
        let mut c = [0i64; 3];
        for a in 0..dims {
            c[a] = ((p[a] - origin[a]) / r).floor() as i64;
        }
        c
    };

    let mut cells: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
    for (i, p) in positions.chunks(dims).enumerate() {
        cells.entry(cell_of(p)).or_default().push(i);
    }

    let r2 = r * r;
    let reach: i64 = 1;
    let span = |a: usize| if a < dims { -reach..=reach } else { 0..=0 };
    let mut edges = Vec::new();
    for (i, pi) in positions.chunks(dims).enumerate() {
        let c = cell_of(pi);
        for dx in span(0) {
            for dy in span(1) {
                for dz in span(2) {
                    let key = [c[0] + dx, c[1] + dy, c[2] + dz];
                    let Some(members) = cells.get(&key) else {
                        continue;
                    };
                    for &j in members {
                        if j == i {
                            continue;
                        }
                        let pj = &positions[j * dims..(j + 1) * dims];
                        if squared_distance(pi, pj) <= r2 {
                            edges.push((i, j));
                        }
                    }
                }
            }
        }
    }
    RadiusGraph::from_edges(n, edges)
}

#[inline]
pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}
