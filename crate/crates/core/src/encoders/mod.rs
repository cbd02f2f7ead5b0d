//! Document encoders mapping an embedded document to a set of support points.

pub mod batch_norm;
pub mod cnn;
pub mod lstm;
pub mod params;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embeddings::EmbeddedDoc;
use crate::error::{Error, Result};
use batch_norm::{batch_norm_infer, BatchNormAffine, RunningStats};
pub use cnn::{cnn_backward, cnn_forward, CnnParams};
pub use lstm::{bilstm_backward, bilstm_forward, lstm_backward, lstm_forward, LstmParams};
pub use params::{Parameters, TensorRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    Cnn,
    Lstm,
    Bilstm,
}

impl fmt::Display for EncoderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EncoderKind::Cnn => "cnn",
            EncoderKind::Lstm => "lstm",
            EncoderKind::Bilstm => "bilstm",
        })
    }
}

impl FromStr for EncoderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cnn" => Ok(EncoderKind::Cnn),
            "lstm" => Ok(EncoderKind::Lstm),
            "bilstm" => Ok(EncoderKind::Bilstm),
            other => Err(Error::Config(format!("unknown encoder kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub kind: EncoderKind,
    pub d_w: usize,
    pub d_h: usize,
    pub d_c: usize,
    /// `l` in a window of `2l + 1` tokens.
    pub half_window: usize,
    pub batch_norm: bool,
    /// Squash the LSTM cell update with a sigmoid.
    pub squashed_cell: bool,
    pub init_seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            kind: EncoderKind::Cnn,
            d_w: 300,
            d_h: 300,
            d_c: 300,
            half_window: 1,
            batch_norm: true,
            squashed_cell: false,
            init_seed: 0,
        }
    }
}

impl EncoderConfig {
    pub fn output_dim(&self) -> usize {
        match self.kind {
            EncoderKind::Cnn => self.d_c,
            EncoderKind::Lstm => self.d_h,
            EncoderKind::Bilstm => 2 * self.d_h,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let hidden = match self.kind {
            EncoderKind::Cnn => self.d_c,
            _ => self.d_h,
        };
        if self.d_w == 0 || hidden == 0 {
            return Err(Error::Config("encoder dimensions must be positive".into()));
        }
        Ok(())
    }
}

/// The trainable network without normalization.
#[allow(clippy::large_enum_variant)]
#[derive(Debug, Clone, PartialEq)]
pub enum EncoderNet {
    Cnn(CnnParams),
    Lstm(LstmParams),
    Bilstm { fwd: LstmParams, bwd: LstmParams },
}

/// Cached forward activations, one variant per network kind.
#[allow(clippy::large_enum_variant)]
#[derive(Debug, Clone)]
pub enum NetCache {
    Cnn(Array2<f64>),
    Lstm(lstm::LstmCache),
    Bilstm(lstm::BiLstmCache),
}

impl EncoderNet {
    pub fn random(config: &EncoderConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        match config.kind {
            EncoderKind::Cnn => EncoderNet::Cnn(CnnParams::random(
                config.d_w,
                config.d_c,
                config.half_window,
                &mut rng,
            )),
            EncoderKind::Lstm => {
                EncoderNet::Lstm(LstmParams::random(config.d_w, config.d_h, &mut rng))
            }
            EncoderKind::Bilstm => EncoderNet::Bilstm {
                fwd: LstmParams::random(config.d_w, config.d_h, &mut rng),
                bwd: LstmParams::random(config.d_w, config.d_h, &mut rng),
            },
        }
    }

    pub fn zeros_like(&self) -> Self {
        match self {
            EncoderNet::Cnn(p) => EncoderNet::Cnn(p.zeros_like()),
            EncoderNet::Lstm(p) => EncoderNet::Lstm(p.zeros_like()),
            EncoderNet::Bilstm { fwd, bwd } => EncoderNet::Bilstm {
                fwd: fwd.zeros_like(),
                bwd: bwd.zeros_like(),
            },
        }
    }

    pub fn forward(&self, x: ArrayView2<f64>, squashed_cell: bool) -> Result<Array2<f64>> {
        match self {
            EncoderNet::Cnn(p) => cnn_forward(x, p),
            EncoderNet::Lstm(p) => lstm_forward(x, p, squashed_cell),
            EncoderNet::Bilstm { fwd, bwd } => bilstm_forward(x, fwd, bwd, squashed_cell),
        }
    }

    pub fn forward_cached(
        &self,
        x: ArrayView2<f64>,
        squashed_cell: bool,
    ) -> Result<(Array2<f64>, NetCache)> {
        match self {
            EncoderNet::Cnn(p) => Ok((cnn_forward(x, p)?, NetCache::Cnn(x.to_owned()))),
            EncoderNet::Lstm(p) => {
                let c = lstm::lstm_forward_cached(x, p, squashed_cell)?;
                Ok((c.hidden().clone(), NetCache::Lstm(c)))
            }
            EncoderNet::Bilstm { fwd, bwd } => {
                let c = lstm::bilstm_forward_cached(x, fwd, bwd, squashed_cell)?;
                Ok((c.output(), NetCache::Bilstm(c)))
            }
        }
    }

    /// Parameter gradients and input gradient for upstream `dz`.
    pub fn backward(
        &self,
        cache: &NetCache,
        dz: ArrayView2<f64>,
    ) -> Result<(EncoderNet, Array2<f64>)> {
        match (self, cache) {
            (EncoderNet::Cnn(p), NetCache::Cnn(x)) => {
                let (g, dx) = cnn_backward(x.view(), p, dz)?;
                Ok((EncoderNet::Cnn(g), dx))
            }
            (EncoderNet::Lstm(p), NetCache::Lstm(c)) => {
                let (g, dx) = lstm_backward(c, p, dz)?;
                Ok((EncoderNet::Lstm(g), dx))
            }
            (EncoderNet::Bilstm { fwd, bwd }, NetCache::Bilstm(c)) => {
                let (gf, gb, dx) = bilstm_backward(c, fwd, bwd, dz)?;
                Ok((EncoderNet::Bilstm { fwd: gf, bwd: gb }, dx))
            }
            _ => Err(Error::Internal(
                "forward cache does not match the network kind".into(),
            )),
        }
    }
}

impl Parameters for EncoderNet {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&str, &[usize], &'a [f64])) {
        match self {
            EncoderNet::Cnn(p) => p.visit(f),
            EncoderNet::Lstm(p) => p.visit(f),
            EncoderNet::Bilstm { fwd, bwd } => {
                fwd.visit(&mut |n, s, d| f(&format!("fwd.{n}"), s, d));
                bwd.visit(&mut |n, s, d| f(&format!("bwd.{n}"), s, d));
            }
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        match self {
            EncoderNet::Cnn(p) => p.visit_mut(f),
            EncoderNet::Lstm(p) => p.visit_mut(f),
            EncoderNet::Bilstm { fwd, bwd } => {
                fwd.visit_mut(&mut |n, d| f(&format!("fwd.{n}"), d));
                bwd.visit_mut(&mut |n, d| f(&format!("bwd.{n}"), d));
            }
        }
    }
}

/// Convenience form of [`EncoderNet::backward`] that recomputes the forward pass.
pub fn encoder_backward(
    x: ArrayView2<f64>,
    net: &EncoderNet,
    squashed_cell: bool,
    upstream: ArrayView2<f64>,
) -> Result<(EncoderNet, Array2<f64>)> {
    let (out, cache) = net.forward_cached(x, squashed_cell)?;
    if out.dim() != upstream.dim() {
        return Err(Error::Internal(format!(
            "upstream gradient shape {:?} does not match encoder output {:?}",
            upstream.dim(),
            out.dim()
        )));
    }
    net.backward(&cache, upstream)
}

/// Everything the optimizer updates.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub net: EncoderNet,
    pub batch_norm: Option<BatchNormAffine>,
}

impl EncoderParams {
    pub fn zeros_like(&self) -> Self {
        EncoderParams {
            net: self.net.zeros_like(),
            batch_norm: self
                .batch_norm
                .as_ref()
                .map(|bn| BatchNormAffine::zeros(bn.gamma.len())),
        }
    }
}

impl Parameters for EncoderParams {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&str, &[usize], &'a [f64])) {
        self.net.visit(f);
        if let Some(bn) = &self.batch_norm {
            bn.visit(&mut |n, s, d| f(&format!("bn.{n}"), s, d));
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        self.net.visit_mut(f);
        if let Some(bn) = &mut self.batch_norm {
            bn.visit_mut(&mut |n, d| f(&format!("bn.{n}"), d));
        }
    }
}

/// Support points produced for one document.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderOutput {
    pub doc_id: String,
    /// `N x d_out`, one row per support point.
    pub support: Array2<f64>,
}

/// A configured encoder with its parameters and frozen normalization statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    pub config: EncoderConfig,
    pub params: EncoderParams,
    pub running: Option<RunningStats>,
}

impl Encoder {
    pub fn new(config: EncoderConfig) -> Result<Self> {
        config.validate()?;
        let net = EncoderNet::random(&config);
        let dim = config.output_dim();
        let (batch_norm, running) = if config.batch_norm {
            (
                Some(BatchNormAffine::identity(dim)),
                Some(RunningStats::new(dim)),
            )
        } else {
            (None, None)
        };
        Ok(Encoder {
            config,
            params: EncoderParams { net, batch_norm },
            running,
        })
    }

    /// Inference-mode encoding (running statistics for normalization).
    pub fn encode(&self, doc: &EmbeddedDoc) -> Result<EncoderOutput> {
        let z = self
            .params
            .net
            .forward(doc.matrix.view(), self.config.squashed_cell)?;
        let support = match (&self.params.batch_norm, &self.running) {
            (Some(affine), Some(stats)) => batch_norm_infer(&z, affine, stats),
            _ => z,
        };
        if support.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!(
                "encoder output for {:?} is not finite",
                doc.id
            )));
        }
        Ok(EncoderOutput {
            doc_id: doc.id.clone(),
            support,
        })
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut tensors = params::records_of(&self.params, "");
        if let Some(stats) = &self.running {
            for (name, v) in [
                ("bn.running_mean", &stats.mean),
                ("bn.running_var", &stats.var),
            ] {
                tensors.push(TensorRecord {
                    name: name.into(),
                    shape: vec![v.len()],
                    data: v.to_vec(),
                });
            }
        }
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            tensors,
            optimizer: None,
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        if ckpt.format != CHECKPOINT_FORMAT || ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::Load(format!(
                "unsupported checkpoint {} v{}",
                ckpt.format, ckpt.version
            )));
        }
        let mut enc = Encoder::new(ckpt.config.clone())?;
        params::assign_records(&mut enc.params, "", &ckpt.tensors)?;
        if let Some(stats) = &mut enc.running {
            let find = |name: &str| {
                ckpt.tensors
                    .iter()
                    .find(|t| t.name == name && t.shape == [stats.mean.len()])
                    .map(|t| ndarray::Array1::from(t.data.clone()))
                    .ok_or_else(|| Error::Load(format!("checkpoint is missing tensor {name}")))
            };
            let mean = find("bn.running_mean")?;
            let var = find("bn.running_var")?;
            stats.mean = mean;
            stats.var = var;
        }
        Ok(enc)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        params::write_json(path, &self.to_checkpoint())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Encoder::from_checkpoint(&params::read_json::<Checkpoint>(path)?)
    }
}

pub const CHECKPOINT_FORMAT: &str = "corel-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Adam moments saved next to the parameters, flattened in parameter order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerRecord {
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

/// Self-describing JSON checkpoint: named row-major f64 tensors plus the
/// encoder configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config: EncoderConfig,
    pub tensors: Vec<TensorRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optimizer: Option<OptimizerRecord>,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        params::write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        params::read_json(path)
    }
}
