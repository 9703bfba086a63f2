//! Node codecs and the edge encoder.
//!
//! The default codec is the invertible linear projection `n = W chi + B`
//! with decoder `chi = W^+ (n - B)`. `W^+` is held in double precision and
//! refreshed after every change to `W`. An MLP encoder/decoder pair is
//! available as an ablation.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::numerics::{gemm, pseudo_inverse, svd_thin, Activation, Matrix, MlpCache, MlpParams, Real, DEFAULT_SIGMA_TOL};
use crate::{Error, Result};

/// Smallest admissible `sigma_min / sigma_max` for `W`.
pub const CONDITION_GUARD: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum CodecMode {
    #[default]
    Ilp,
    Mlp,
}

impl std::str::FromStr for CodecMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ilp" => Ok(Self::Ilp),
            "mlp" => Ok(Self::Mlp),
            other => Err(Error::Config(format!("unknown codec mode '{other}'"))),
        }
    }
}

/// Affine projection from `C` physical channels to `d > C` latent channels.
#[derive(Debug, Clone, PartialEq)]
pub struct IlpParams<T> {
    /// `d x C`.
    pub w: Matrix<T>,
    pub b: Vec<T>,
    pinv: Matrix<f64>,
    pinv_t: Matrix<T>,
    stale: bool,
}

impl<T: Real> IlpParams<T> {
    /// Gaussian `W` with standard deviation `1 / sqrt(C)`, zero bias.
    pub fn init<R: Rng + ?Sized>(latent: usize, physical: usize, rng: &mut R) -> Result<Self> {
        Self::check_dims(latent, physical)?;
        let std = 1.0 / (physical as f64).sqrt();
        let w = Matrix::from_fn(latent, physical, |_, _| {
            let z: f64 = StandardNormal.sample(rng);
            T::from_f64(z * std)
        });
        Self::from_parts(w, vec![T::ZERO; latent])
    }

    /// `W = [I; 0]`, `B = 0`: zero-padding embed.
    pub fn padding(latent: usize, physical: usize) -> Result<Self> {
        Self::check_dims(latent, physical)?;
        let w = Matrix::from_fn(latent, physical, |i, j| if i == j { T::ONE } else { T::ZERO });
        Self::from_parts(w, vec![T::ZERO; latent])
    }

    pub fn from_parts(w: Matrix<T>, b: Vec<T>) -> Result<Self> {
        if b.len() != w.rows() {
            return Err(Error::Config("ILP bias length must equal latent width".into()));
        }
        let (d, c) = w.shape();
        let mut out = Self {
            w,
            b,
            pinv: Matrix::zeros(c, d),
            pinv_t: Matrix::zeros(c, d),
            stale: true,
        };
        out.refresh_pinv()?;
        Ok(out)
    }

    fn check_dims(latent: usize, physical: usize) -> Result<()> {
        if physical == 0 || latent <= physical {
            return Err(Error::Config(format!(
                "ILP needs latent width d > physical width C, got d={latent}, C={physical}"
            )));
        }
        Ok(())
    }

    pub fn latent_width(&self) -> usize {
        self.w.rows()
    }

    pub fn physical_width(&self) -> usize {
        self.w.cols()
    }

    pub fn is_stale(&self) -> bool {
        self.stale
    }

    pub fn mark_stale(&mut self) {
        self.stale = true;
    }

    /// Double-precision `W^+`.
    pub fn pinv(&self) -> &Matrix<f64> {
        &self.pinv
    }

    /// Recomputes `W^+`; rejects `W` whose condition number exceeds `1 / CONDITION_GUARD`.
    pub fn refresh_pinv(&mut self) -> Result<()> {
        let w = self.w.cast::<f64>();
        let svd = svd_thin(&w)?;
        let smax = svd.s.first().copied().unwrap_or(0.0);
        let smin = svd.s.last().copied().unwrap_or(0.0);
        if !(smax > 0.0) || smin < CONDITION_GUARD * smax {
            return Err(Error::Degenerate(format!(
                "ILP weight is rank deficient: sigma_min/sigma_max = {:e}",
                if smax > 0.0 { smin / smax } else { 0.0 }
            )));
        }
        self.pinv = pseudo_inverse(&w, DEFAULT_SIGMA_TOL)?;
        self.pinv_t = self.pinv.cast();
        self.stale = false;
        Ok(())
    }

    /// Restores a pseudo-inverse saved alongside `W`.
    pub(crate) fn set_pinv(&mut self, pinv: Matrix<f64>) -> Result<()> {
        if pinv.shape() != (self.w.cols(), self.w.rows()) {
            return Err(Error::Config("stored pseudo-inverse has the wrong shape".into()));
        }
        self.pinv_t = pinv.cast();
        self.pinv = pinv;
        self.stale = false;
        Ok(())
    }

    /// Row-wise `n = W chi + B` for an `N x C` batch.
    pub fn encode(&self, chi: &Matrix<T>) -> Result<Matrix<T>> {
        if chi.cols() != self.physical_width() {
            return Err(Error::Config(format!(
                "encode expects {} channels, got {}",
                self.physical_width(),
                chi.cols()
            )));
        }
        let mut n = broadcast_rows(&self.b, chi.rows());
        gemm(T::ONE, chi, false, &self.w, true, T::ONE, &mut n);
        Ok(n)
    }

    /// Row-wise `chi = W^+ (n - B)` for an `N x d` batch.
    pub fn decode(&self, n: &Matrix<T>) -> Result<Matrix<T>> {
        if self.stale {
            return Err(Error::Contract("decode called with a stale pseudo-inverse".into()));
        }
        if n.cols() != self.latent_width() {
            return Err(Error::Config(format!(
                "decode expects {} latent channels, got {}",
                self.latent_width(),
                n.cols()
            )));
        }
        let mut centered = n.clone();
        for r in 0..centered.rows() {
            for (x, b) in centered.row_mut(r).iter_mut().zip(&self.b) {
                *x -= *b;
            }
        }
        let mut chi = Matrix::zeros(n.rows(), self.physical_width());
        gemm(T::ONE, &centered, false, &self.pinv_t, true, T::ZERO, &mut chi);
        Ok(chi)
    }

    fn zeros_like(&self) -> Self {
        let (d, c) = self.w.shape();
        Self {
            w: Matrix::zeros(d, c),
            b: vec![T::ZERO; d],
            pinv: Matrix::zeros(c, d),
            pinv_t: Matrix::zeros(c, d),
            stale: true,
        }
    }

    pub fn cast<U: Real>(&self) -> IlpParams<U> {
        IlpParams {
            w: self.w.cast(),
            b: self.b.iter().map(|x| U::from_f64(x.to_f64())).collect(),
            pinv: self.pinv.clone(),
            pinv_t: self.pinv.cast(),
            stale: self.stale,
        }
    }
}

/// MLP encoder/decoder pair used by the codec ablation.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpCodec<T> {
    pub enc: MlpParams<T>,
    pub dec: MlpParams<T>,
}

/// Maps physical node vectors to latents and back.
#[derive(Debug, Clone, PartialEq)]
pub enum Codec<T> {
    Ilp(IlpParams<T>),
    Mlp(MlpCodec<T>),
}

/// Record kept by the cached codec passes.
#[derive(Debug, Clone)]
pub enum CodecCache<T> {
    Ilp(Matrix<T>),
    Mlp(MlpCache<T>),
}

impl<T: Real> CodecCache<T> {
    pub fn retained(&self) -> usize {
        match self {
            CodecCache::Ilp(m) => m.rows() * m.cols(),
            CodecCache::Mlp(c) => c.retained(),
        }
    }
}

impl<T: Real> Codec<T> {
    pub fn init<R: Rng + ?Sized>(
        mode: CodecMode,
        latent: usize,
        physical: usize,
        hidden: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(match mode {
            CodecMode::Ilp => Codec::Ilp(IlpParams::init(latent, physical, rng)?),
            CodecMode::Mlp => Codec::Mlp(MlpCodec {
                enc: MlpParams::init(&[physical, hidden, latent], activation, 1.0, rng),
                dec: MlpParams::init(&[latent, hidden, physical], activation, 1.0, rng),
            }),
        })
    }

    pub fn mode(&self) -> CodecMode {
        match self {
            Codec::Ilp(_) => CodecMode::Ilp,
            Codec::Mlp(_) => CodecMode::Mlp,
        }
    }

    pub fn latent_width(&self) -> usize {
        match self {
            Codec::Ilp(p) => p.latent_width(),
            Codec::Mlp(m) => m.enc.output_width(),
        }
    }

    pub fn physical_width(&self) -> usize {
        match self {
            Codec::Ilp(p) => p.physical_width(),
            Codec::Mlp(m) => m.enc.input_width(),
        }
    }

    pub fn encode(&self, chi: &Matrix<T>) -> Result<Matrix<T>> {
        match self {
            Codec::Ilp(p) => p.encode(chi),
            Codec::Mlp(m) => m.enc.eval(chi),
        }
    }

    pub fn decode(&self, n: &Matrix<T>) -> Result<Matrix<T>> {
        match self {
            Codec::Ilp(p) => p.decode(n),
            Codec::Mlp(m) => m.dec.eval(n),
        }
    }

    pub fn encode_cached(&self, chi: &Matrix<T>) -> Result<(Matrix<T>, CodecCache<T>)> {
        match self {
            Codec::Ilp(p) => Ok((p.encode(chi)?, CodecCache::Ilp(chi.clone()))),
            Codec::Mlp(m) => {
                let (y, c) = m.enc.forward(chi)?;
                Ok((y, CodecCache::Mlp(c)))
            }
        }
    }

    pub fn decode_cached(&self, n: &Matrix<T>) -> Result<(Matrix<T>, CodecCache<T>)> {
        match self {
            Codec::Ilp(p) => Ok((p.decode(n)?, CodecCache::Ilp(Matrix::zeros(0, 0)))),
            Codec::Mlp(m) => {
                let (y, c) = m.dec.forward(n)?;
                Ok((y, CodecCache::Mlp(c)))
            }
        }
    }

    /// Accumulates parameter gradients of the encoder given `dL/dn`.
    pub fn encode_backward(&self, cache: &CodecCache<T>, dn: &Matrix<T>, grads: &mut Codec<T>) -> Result<()> {
        match (self, cache, grads) {
            (Codec::Ilp(_), CodecCache::Ilp(chi), Codec::Ilp(g)) => {
                gemm(T::ONE, dn, true, chi, false, T::ONE, &mut g.w);
                add_row_sums(&mut g.b, dn, T::ONE);
                Ok(())
            }
            (Codec::Mlp(m), CodecCache::Mlp(c), Codec::Mlp(g)) => {
                m.enc.backward_into(c, dn, &mut g.enc, false)?;
                Ok(())
            }
            _ => Err(Error::Contract("codec cache or gradient record of the wrong kind".into())),
        }
    }

    /// Accumulates decoder parameter gradients and returns `dL/dn`.
    ///
    /// For the linear codec `W^+` is a fixed linear map here; only the
    /// explicit bias term receives a gradient.
    pub fn decode_backward(&self, cache: &CodecCache<T>, dchi: &Matrix<T>, grads: &mut Codec<T>) -> Result<Matrix<T>> {
        match (self, cache, grads) {
            (Codec::Ilp(p), CodecCache::Ilp(_), Codec::Ilp(g)) => {
                if p.stale {
                    return Err(Error::Contract("decode gradient with a stale pseudo-inverse".into()));
                }
                let mut dn = Matrix::zeros(dchi.rows(), p.latent_width());
                gemm(T::ONE, dchi, false, &p.pinv_t, false, T::ZERO, &mut dn);
                add_row_sums(&mut g.b, &dn, -T::ONE);
                Ok(dn)
            }
            (Codec::Mlp(m), CodecCache::Mlp(c), Codec::Mlp(g)) => Ok(m
                .dec
                .backward_into(c, dchi, &mut g.dec, true)?
                .expect("input gradient requested")),
            _ => Err(Error::Contract("codec cache or gradient record of the wrong kind".into())),
        }
    }

    /// Re-derives dependent quantities after the parameters changed.
    pub fn after_update(&mut self) -> Result<()> {
        match self {
            Codec::Ilp(p) => p.refresh_pinv(),
            Codec::Mlp(_) => Ok(()),
        }
    }

    pub fn zeros_like(&self) -> Self {
        match self {
            Codec::Ilp(p) => Codec::Ilp(p.zeros_like()),
            Codec::Mlp(m) => Codec::Mlp(MlpCodec {
                enc: m.enc.zeros_like(),
                dec: m.dec.zeros_like(),
            }),
        }
    }

    pub fn named_tensors(&self) -> Vec<(String, &[T])> {
        match self {
            Codec::Ilp(p) => vec![("codec.w".into(), p.w.as_slice()), ("codec.b".into(), &p.b[..])],
            Codec::Mlp(m) => {
                let mut out = named_mlp("codec.enc", &m.enc);
                out.extend(named_mlp("codec.dec", &m.dec));
                out
            }
        }
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        match self {
            Codec::Ilp(p) => vec![p.w.as_mut_slice(), &mut p.b[..]],
            Codec::Mlp(m) => {
                let mut out = m.enc.tensors_mut();
                out.extend(m.dec.tensors_mut());
                out
            }
        }
    }

    pub fn cast<U: Real>(&self) -> Codec<U> {
        match self {
            Codec::Ilp(p) => Codec::Ilp(p.cast()),
            Codec::Mlp(m) => Codec::Mlp(MlpCodec {
                enc: m.enc.cast(),
                dec: m.dec.cast(),
            }),
        }
    }
}

/// Names an MLP's tensors as `prefix.l{i}.weight` / `prefix.l{i}.bias`.
pub(crate) fn named_mlp<'a, T: Real>(prefix: &str, mlp: &'a MlpParams<T>) -> Vec<(String, &'a [T])> {
    mlp.tensors()
        .into_iter()
        .enumerate()
        .map(|(i, t)| {
            let kind = if i % 2 == 0 { "weight" } else { "bias" };
            (format!("{prefix}.l{}.{kind}", i / 2), t)
        })
        .collect()
}

/// Edge latents for every edge, split into the two halves `(e1, e2)`.
pub fn encode_edges<T: Real>(net: &MlpParams<T>, edge_geom: &Matrix<T>) -> Result<(Matrix<T>, Matrix<T>)> {
    let e = net.eval(edge_geom)?;
    let d = e.cols();
    if d % 2 != 0 {
        return Err(Error::Config("edge latent width must be even".into()));
    }
    Ok((e.columns(0, d / 2), e.columns(d / 2, d / 2)))
}

fn broadcast_rows<T: Real>(row: &[T], rows: usize) -> Matrix<T> {
    let mut m = Matrix::zeros(rows, row.len());
    for r in 0..rows {
        m.row_mut(r).copy_from_slice(row);
    }
    m
}

fn add_row_sums<T: Real>(acc: &mut [T], m: &Matrix<T>, sign: T) {
    for r in 0..m.rows() {
        for (a, x) in acc.iter_mut().zip(m.row(r)) {
            *a += sign * *x;
        }
    }
}
