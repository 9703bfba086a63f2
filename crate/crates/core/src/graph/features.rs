use serde::{Deserialize, Serialize};

use super::RadiusGraph;
use crate::numerics::Matrix;
use crate::particles::{Bounds, StepState};
use crate::{Error, Result};

/// Per-axis velocity statistics used to normalize model inputs and targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    pub fn identity(dims: usize) -> Self {
        Self {
            mean: vec![0.0; dims],
            std: vec![1.0; dims],
        }
    }

    /// Fits mean and standard deviation per axis over `N x D` velocity frames.
    pub fn fit<'a>(dims: usize, frames: impl IntoIterator<Item = &'a [f64]>) -> Result<Self> {
        let mut count = 0usize;
        let mut sum = vec![0.0; dims];
        let mut sq = vec![0.0; dims];
        for f in frames {
            for v in f.chunks(dims) {
                for a in 0..dims {
                    sum[a] += v[a];
                    sq[a] += v[a] * v[a];
                }
                count += 1;
            }
        }
        if count < 2 {
            return Err(Error::InsufficientData("normalizer needs at least two velocity samples".into()));
        }
        let n = count as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| (q / n - m * m).max(0.0).sqrt())
            .collect();
        let out = Self { mean, std };
        out.validate()?;
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        if self.mean.len() != self.std.len() {
            return Err(Error::Config("normalizer mean/std length mismatch".into()));
        }
        if self.mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::Config("normalizer mean must be finite".into()));
        }
        if self.std.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::Config("normalizer std must be finite and positive".into()));
        }
        Ok(())
    }

    #[inline]
    pub fn normalize(&self, axis: usize, v: f64) -> f64 {
        (v - self.mean[axis]) / self.std[axis]
    }

    #[inline]
    pub fn denormalize(&self, axis: usize, z: f64) -> f64 {
        z * self.std[axis] + self.mean[axis]
    }
}

/// Column layout of the physical node vector:
/// `[k velocity slots of D | 2D wall distances | one-hot material]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureLayout {
    pub dims: usize,
    pub history: usize,
    pub n_materials: usize,
}

impl FeatureLayout {
    pub fn width(&self) -> usize {
        self.history * self.dims + 2 * self.dims + self.n_materials
    }

    /// Columns of velocity slot `s` (0 = oldest).
    pub fn slot(&self, s: usize) -> std::ops::Range<usize> {
        s * self.dims..(s + 1) * self.dims
    }

    pub fn newest(&self) -> std::ops::Range<usize> {
        self.slot(self.history - 1)
    }

    pub fn oldest(&self) -> std::ops::Range<usize> {
        self.slot(0)
    }

    pub fn walls(&self) -> std::ops::Range<usize> {
        let s = self.history * self.dims;
        s..s + 2 * self.dims
    }

    pub fn materials(&self) -> std::ops::Range<usize> {
        let s = self.history * self.dims + 2 * self.dims;
        s..s + self.n_materials
    }
}

/// Per-edge `((p_i - p_j) / r, |p_i - p_j| / r)` as an `E x (D + 1)` matrix.
pub fn edge_features(graph: &RadiusGraph, positions: &[f64], dims: usize, r: f64) -> Matrix<f64> {
    let mut out = Matrix::zeros(graph.n_edges(), dims + 1);
    for (e, &(i, j)) in graph.edges.iter().enumerate() {
        let row = out.row_mut(e);
        let mut sq = 0.0;
        for a in 0..dims {
            let d = positions[i * dims + a] - positions[j * dims + a];
            row[a] = d / r;
            sq += d * d;
        }
        row[dims] = sq.sqrt() / r;
    }
    out
}

/// Assembles the `N x C` physical node matrix for the velocity window of
/// `state`, with wall distances measured from `positions`.
///
/// `positions` is passed separately because the inverse step conditions on
/// the recovered earlier positions rather than the state's own.
pub fn node_physical(
    state: &StepState,
    positions: &[f64],
    bounds: &Bounds,
    r: f64,
    normalizer: &Normalizer,
    layout: &FeatureLayout,
) -> Result<Matrix<f64>> {
    normalizer.validate()?;
    let d = layout.dims;
    if state.dims != d || bounds.dims() != d || normalizer.mean.len() != d {
        return Err(Error::Config("dimension mismatch in node features".into()));
    }
    if state.history() != layout.history {
        return Err(Error::Config(format!(
            "state carries {} velocity frames, model expects {}",
            state.history(),
            layout.history
        )));
    }
    let n = state.n_particles();
    if positions.len() != n * d {
        return Err(Error::Config("positions length mismatch".into()));
    }
    let mut out = Matrix::zeros(n, layout.width());
    for i in 0..n {
        let row = out.row_mut(i);
        for (s, frame) in state.window.iter().enumerate() {
            for a in 0..d {
                row[s * d + a] = normalizer.normalize(a, frame[i * d + a]);
            }
        }
        let w = layout.walls().start;
        for a in 0..d {
            let p = positions[i * d + a];
            row[w + 2 * a] = (p - bounds.lo[a]).clamp(0.0, r) / r;
            row[w + 2 * a + 1] = (bounds.hi[a] - p).clamp(0.0, r) / r;
        }
        let m = state.materials[i] as usize;
        if m >= layout.n_materials {
            return Err(Error::Config(format!(
                "material {m} out of range for {} material channels",
                layout.n_materials
            )));
        }
        row[layout.materials().start + m] = 1.0;
    }
    Ok(out)
}
