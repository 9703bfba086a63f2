use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::graph::{FeatureLayout, Normalizer};
use crate::ilp::{named_mlp, Codec, CodecMode, IlpParams};
use crate::numerics::{Activation, MlpParams, Real};
use crate::particles::{Bounds, Lattice, DEFAULT_HISTORY};
use crate::rrmp::{EdgeMode, RrmpStack};
use crate::{Error, Result};

/// Architecture and physical setting of a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub dims: usize,
    /// Velocity history length `k`.
    pub history: usize,
    pub n_materials: usize,
    /// Latent width `d` (even, larger than the physical width).
    pub latent: usize,
    /// Hidden width of every subnetwork.
    pub hidden: usize,
    /// Hidden layers per subnetwork.
    pub hidden_layers: usize,
    /// Reversible layers `M`.
    pub n_layers: usize,
    pub radius: f64,
    pub dt: f64,
    pub box_lo: Vec<f64>,
    pub box_hi: Vec<f64>,
    pub codec: CodecMode,
    pub edge_mode: EdgeMode,
    pub activation: Activation,
    /// Output-layer init scale of the node subnetworks.
    pub residual_scale: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            dims: 2,
            history: DEFAULT_HISTORY,
            n_materials: 1,
            latent: 128,
            hidden: 128,
            hidden_layers: 2,
            n_layers: 10,
            radius: 0.05,
            dt: 0.0025,
            box_lo: vec![0.0, 0.0],
            box_hi: vec![1.0, 1.0],
            codec: CodecMode::Ilp,
            edge_mode: EdgeMode::Fixed,
            activation: Activation::Relu,
            residual_scale: 0.1,
        }
    }
}

impl ModelConfig {
    pub fn layout(&self) -> FeatureLayout {
        FeatureLayout {
            dims: self.dims,
            history: self.history,
            n_materials: self.n_materials,
        }
    }

    pub fn physical_width(&self) -> usize {
        self.layout().width()
    }

    pub fn bounds(&self) -> Result<Bounds> {
        Bounds::new(self.box_lo.clone(), self.box_hi.clone())
    }

    pub fn lattice(&self) -> Result<Lattice> {
        Ok(Lattice::for_bounds(&self.bounds()?))
    }

    pub fn validate(&self) -> Result<()> {
        let b = self.bounds()?;
        if b.dims() != self.dims {
            return Err(Error::Config("box dimension does not match dims".into()));
        }
        if self.history == 0 {
            return Err(Error::Config("history must be >= 1".into()));
        }
        if self.n_materials == 0 {
            return Err(Error::Config("need at least one material channel".into()));
        }
        if !self.latent.is_multiple_of(2) || self.latent <= self.physical_width() {
            return Err(Error::Config(format!(
                "latent width {} must be even and exceed the physical width {}",
                self.latent,
                self.physical_width()
            )));
        }
        if self.hidden == 0 || self.n_layers == 0 {
            return Err(Error::Config("hidden width and layer count must be positive".into()));
        }
        if !(self.radius > 0.0 && self.radius.is_finite()) || !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Config("radius and dt must be positive".into()));
        }
        Ok(())
    }

    fn edge_widths(&self) -> Vec<usize> {
        let mut w = vec![self.dims + 1];
        w.extend(std::iter::repeat_n(self.hidden, self.hidden_layers));
        w.push(self.latent);
        w
    }
}

/// Every learnable tensor of the simulator. One instance serves both the
/// forward and the inverse direction.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    pub config: ModelConfig,
    pub normalizer: Normalizer,
    pub codec: Codec<T>,
    pub edge_enc: MlpParams<T>,
    pub stack: RrmpStack<T>,
}

impl<T: Real> ModelParams<T> {
    pub fn init<R: Rng + ?Sized>(config: ModelConfig, normalizer: Normalizer, rng: &mut R) -> Result<Self> {
        config.validate()?;
        normalizer.validate()?;
        let codec = Codec::init(
            config.codec,
            config.latent,
            config.physical_width(),
            config.hidden,
            config.activation,
            rng,
        )?;
        let edge_enc = MlpParams::init(&config.edge_widths(), config.activation, 1.0, rng);
        let stack = RrmpStack::init(
            config.n_layers,
            config.latent,
            config.hidden,
            config.hidden_layers,
            config.activation,
            config.residual_scale,
            config.edge_mode,
            rng,
        )?;
        Ok(Self {
            config,
            normalizer,
            codec,
            edge_enc,
            stack,
        })
    }

    /// Zero-padding linear codec and an all-zero stack: the decoded window
    /// equals the input window.
    pub fn identity(mut config: ModelConfig, normalizer: Normalizer) -> Result<Self> {
        config.codec = CodecMode::Ilp;
        config.validate()?;
        normalizer.validate()?;
        Ok(Self {
            codec: Codec::Ilp(IlpParams::padding(config.latent, config.physical_width())?),
            edge_enc: MlpParams::zeros(&config.edge_widths(), config.activation),
            stack: RrmpStack::zeros(
                config.n_layers,
                config.latent,
                config.hidden,
                config.hidden_layers,
                config.activation,
                config.edge_mode,
            )?,
            config,
            normalizer,
        })
    }

    /// Same shapes, all parameters zero. Used as a gradient record.
    pub fn zeros_like(&self) -> Self {
        Self {
            config: self.config.clone(),
            normalizer: self.normalizer.clone(),
            codec: self.codec.zeros_like(),
            edge_enc: self.edge_enc.zeros_like(),
            stack: self.stack.zeros_like(),
        }
    }

    /// Named registry of every trainable tensor, in a fixed order.
    pub fn named_tensors(&self) -> Vec<(String, &[T])> {
        let mut out = self.codec.named_tensors();
        out.extend(named_mlp("edge_enc", &self.edge_enc));
        out.extend(self.stack.named_tensors());
        out
    }

    /// Mutable views in the same order as [`Self::named_tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        let mut out = self.codec.tensors_mut();
        out.extend(self.edge_enc.tensors_mut());
        out.extend(self.stack.tensors_mut());
        out
    }

    pub fn param_count(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// `self += alpha * other`, tensor by tensor.
    pub fn axpy(&mut self, alpha: T, other: &Self) {
        for (dst, (_, src)) in self.tensors_mut().into_iter().zip(other.named_tensors()) {
            for (d, x) in dst.iter_mut().zip(src) {
                *d += alpha * *x;
            }
        }
    }

    /// Re-derives quantities that depend on the weights (the pseudo-inverse).
    pub fn after_update(&mut self) -> Result<()> {
        self.codec.after_update()
    }

    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        ModelParams {
            config: self.config.clone(),
            normalizer: self.normalizer.clone(),
            codec: self.codec.cast(),
            edge_enc: self.edge_enc.cast(),
            stack: self.stack.cast(),
        }
    }
}
