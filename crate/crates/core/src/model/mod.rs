//! Three-subspace VAE: one encoder head per YUV channel, a transformation
//! MLP per latent subspace and a shared decoder.

mod checkpoint;
mod grad;
pub mod loss;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub use checkpoint::{ModelCheckpoint, RngState, TensorEntry, CHECKPOINT_FORMAT};
pub use grad::{BatchNoise, LossParts};

use crate::error::{Error, Result};
use crate::nn::{Layer, Op, Sequential, Tensor4};
use crate::rng::{rng_for, stream};

pub const SUBSPACES: [char; 3] = ['Y', 'U', 'V'];
pub const DEFAULT_LATENT_DIM: usize = 72;

const ENC_CHANNELS: [usize; 5] = [8, 16, 32, 32, 32];
const ENC_STRIDES: [usize; 5] = [1, 2, 2, 1, 1];
const ENC_HIDDEN: usize = 256;
const DEC_LIFT_CHANNELS: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub patch: usize,
    pub overlap: usize,
    pub latent_dim: usize,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patch < 4 || !self.patch.is_multiple_of(4) {
            return Err(Error::InvalidArgument(format!(
                "patch size must be a positive multiple of 4, got {}",
                self.patch
            )));
        }
        if self.overlap >= self.patch {
            return Err(Error::InvalidArgument("overlap must be smaller than the patch".into()));
        }
        if self.latent_dim == 0 {
            return Err(Error::InvalidArgument("latent dimension must be positive".into()));
        }
        Ok(())
    }
}

/// Latent vectors of one patch, with the posterior parameters when they
/// come from the encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentTriple {
    pub z: [Vec<f64>; 3],
    pub posterior: Option<([Vec<f64>; 3], [Vec<f64>; 3])>,
}

/// Posterior parameters for a batch; each vector is `n * latent_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoding {
    pub n: usize,
    pub mu: [Vec<f64>; 3],
    pub logvar: [Vec<f64>; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vae {
    pub config: ModelConfig,
    pub encoders: [Sequential; 3],
    pub transforms: [Sequential; 3],
    pub decoder: Sequential,
}

fn encoder_head(patch: usize, dz: usize) -> Sequential {
    let mut ops = Vec::new();
    let mut in_ch = 1;
    for (&ch, &s) in ENC_CHANNELS.iter().zip(&ENC_STRIDES) {
        ops.push(Op::Layer(Layer::conv(in_ch, ch, 3, s, 1)));
        ops.push(Op::Relu);
        in_ch = ch;
    }
    let side = patch / 4;
    let flat = side * side * in_ch;
    ops.push(Op::Reshape([1, 1, flat]));
    ops.push(Op::Layer(Layer::fully_connected(flat, ENC_HIDDEN)));
    ops.push(Op::Relu);
    ops.push(Op::Layer(Layer::fully_connected(ENC_HIDDEN, 2 * dz)));
    Sequential::new(ops)
}

fn decoder(patch: usize, dz: usize) -> Sequential {
    let side = patch / 4;
    let c = DEC_LIFT_CHANNELS;
    let tconv = |i, o| Op::Layer(Layer::transposed_conv(i, o, 3, 1, 1));
    Sequential::new(vec![
        Op::Layer(Layer::fully_connected(3 * dz, side * side * c)),
        Op::Relu,
        Op::Reshape([side, side, c]),
        Op::Upsample2x,
        tconv(c, 16),
        Op::Relu,
        tconv(16, 16),
        Op::Relu,
        tconv(16, 16),
        Op::Relu,
        Op::Upsample2x,
        tconv(16, 8),
        Op::Relu,
        tconv(8, 3),
    ])
}

/// `mu + exp(logvar / 2) * eps`.
pub fn reparameterize_with(mu: &[f64], logvar: &[f64], eps: &[f64]) -> Vec<f64> {
    mu.iter()
        .zip(logvar)
        .zip(eps)
        .map(|((m, lv), e)| m + (0.5 * lv).exp() * e)
        .collect()
}

/// Training mode draws `eps ~ N(0, I)` from `rng`; inference (`None`)
/// returns `mu`.
pub fn reparameterize(mu: &[f64], logvar: &[f64], rng: Option<&mut dyn rand::RngCore>) -> Vec<f64> {
    match rng {
        Some(rng) => {
            let eps: Vec<f64> = (0..mu.len()).map(|_| rng.sample(StandardNormal)).collect();
            reparameterize_with(mu, logvar, &eps)
        }
        None => mu.to_vec(),
    }
}

/// `[n, D, D, 3]` -> `[n, D, D, 1]` holding channel `c`.
pub fn channel_plane(patches: &Tensor4, c: usize) -> Tensor4 {
    let [n, h, w, _] = patches.shape();
    let data = patches.data().iter().skip(c).step_by(3).copied().collect();
    Tensor4::from_vec([n, h, w, 1], data).expect("shape preserved")
}

/// Per-sample concatenation `[a | b | c]` of three `n x d` blocks.
pub(crate) fn concat3(parts: [&[f64]; 3], n: usize, d: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n * 3 * d);
    for i in 0..n {
        for p in parts {
            out.extend_from_slice(&p[i * d..(i + 1) * d]);
        }
    }
    out
}

impl Vae {
    /// All-zero parameters with the configured architecture.
    pub fn zeroed(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let dz = config.latent_dim;
        Ok(Self {
            config,
            encoders: std::array::from_fn(|_| encoder_head(config.patch, dz)),
            transforms: std::array::from_fn(|_| Sequential::mlp(&[dz, dz, dz, dz])),
            decoder: decoder(config.patch, dz),
        })
    }

    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let mut vae = Self::zeroed(config)?;
        let mut rng = rng_for(seed, &[stream::INIT]);
        for enc in &mut vae.encoders {
            enc.init(&mut rng);
        }
        vae.decoder.init(&mut rng);
        for t in &mut vae.transforms {
            t.init(&mut rng);
        }
        Ok(vae)
    }

    fn modules(&self) -> [&Sequential; 7] {
        let [e0, e1, e2] = &self.encoders;
        let [t0, t1, t2] = &self.transforms;
        [e0, e1, e2, &self.decoder, t0, t1, t2]
    }

    fn modules_mut(&mut self) -> [&mut Sequential; 7] {
        let [e0, e1, e2] = &mut self.encoders;
        let [t0, t1, t2] = &mut self.transforms;
        [e0, e1, e2, &mut self.decoder, t0, t1, t2]
    }

    fn module_names() -> [String; 7] {
        ["enc_y", "enc_u", "enc_v", "dec", "tran_y", "tran_u", "tran_v"].map(String::from)
    }

    /// Parameter tensors: the three encoders, the decoder, then the three
    /// transformations.
    pub fn params(&self) -> Vec<&Vec<f64>> {
        self.modules().into_iter().flat_map(|m| m.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Vec<f64>> {
        self.modules_mut()
            .into_iter()
            .flat_map(|m| m.params_mut())
            .collect()
    }

    pub fn param_specs(&self) -> Vec<(String, Vec<usize>)> {
        self.modules()
            .into_iter()
            .zip(Self::module_names())
            .flat_map(|(m, name)| {
                m.param_specs()
                    .into_iter()
                    .map(move |(s, shape)| (format!("{name}.{s}"), shape))
            })
            .collect()
    }

    /// Start index of each module's tensors in [`Self::params`].
    pub(crate) fn slot_offsets(&self) -> [usize; 8] {
        let mut out = [0; 8];
        for (i, m) in self.modules().into_iter().enumerate() {
            out[i + 1] = out[i] + m.params().len();
        }
        out
    }

    /// Number of leading tensors in [`Self::params`] belonging to encoders and decoder.
    pub fn enc_dec_tensor_count(&self) -> usize {
        self.slot_offsets()[4]
    }

    pub fn zero_grads(&self) -> Vec<Vec<f64>> {
        self.params().iter().map(|p| vec![0.0; p.len()]).collect()
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    fn check_patches(&self, patches: &Tensor4) -> Result<()> {
        let d = self.config.patch;
        let [_, h, w, c] = patches.shape();
        if (h, w, c) != (d, d, 3) {
            return Err(Error::Shape(format!(
                "expected {d}x{d}x3 patches, got {h}x{w}x{c}"
            )));
        }
        Ok(())
    }

    /// Posterior parameters for a batch of YUV patches `[n, D, D, 3]`.
    /// Channel `s` feeds encoder head `s` only.
    pub fn encode_batch(&self, patches: &Tensor4) -> Result<Encoding> {
        self.check_patches(patches)?;
        let n = patches.batch();
        let dz = self.config.latent_dim;
        let mut mu: [Vec<f64>; 3] = Default::default();
        let mut logvar: [Vec<f64>; 3] = Default::default();
        for s in 0..3 {
            let out = self.encoders[s].forward(&channel_plane(patches, s))?;
            let (m, lv) = split_halves(out.data(), n, dz);
            mu[s] = m;
            logvar[s] = lv;
        }
        Ok(Encoding { n, mu, logvar })
    }

    /// Encodes one D x D x 3 YUV patch; `z` is the posterior mean.
    pub fn encode(&self, patch: &[f64]) -> Result<LatentTriple> {
        let d = self.config.patch;
        let t = Tensor4::from_vec([1, d, d, 3], patch.to_vec())
            .map_err(|_| Error::Shape(format!("patch must hold {} values", d * d * 3)))?;
        let enc = self.encode_batch(&t)?;
        Ok(LatentTriple {
            z: enc.mu.clone(),
            posterior: Some((enc.mu, enc.logvar)),
        })
    }

    /// Applies `T_s` to `n` stacked latent vectors.
    pub fn transform(&self, s: usize, z: &[f64]) -> Result<Vec<f64>> {
        let dz = self.config.latent_dim;
        if z.is_empty() || !z.len().is_multiple_of(dz) {
            return Err(Error::Shape(format!("latent length {} is not a multiple of {dz}", z.len())));
        }
        let x = Tensor4::matrix(z.len() / dz, dz, z.to_vec())?;
        Ok(self.transforms[s].forward(&x)?.into_data())
    }

    /// Decodes `n` concatenated `[z_y | z_u | z_v]` rows into YUV patches.
    pub fn decode_batch(&self, latents: &[f64]) -> Result<Tensor4> {
        let width = 3 * self.config.latent_dim;
        if latents.is_empty() || !latents.len().is_multiple_of(width) {
            return Err(Error::Shape(format!(
                "latent batch length {} is not a multiple of {width}",
                latents.len()
            )));
        }
        let x = Tensor4::matrix(latents.len() / width, width, latents.to_vec())?;
        self.decoder.forward(&x)
    }

    pub fn decode(&self, lt: &LatentTriple) -> Result<Vec<f64>> {
        let dz = self.config.latent_dim;
        if lt.z.iter().any(|z| z.len() != dz) {
            return Err(Error::Shape(format!("each subspace must have dimension {dz}")));
        }
        let flat = concat3([&lt.z[0], &lt.z[1], &lt.z[2]], 1, dz);
        Ok(self.decode_batch(&flat)?.into_data())
    }

    /// Inference path: posterior means, per-subspace transformation, decoder.
    pub fn denoise_patches(&self, patches: &Tensor4) -> Result<Tensor4> {
        let enc = self.encode_batch(patches)?;
        self.decode_transformed(&enc)
    }

    /// Decodes `T_s(mu_s)` for an existing encoding.
    pub fn decode_transformed(&self, enc: &Encoding) -> Result<Tensor4> {
        let t: Vec<Vec<f64>> = (0..3)
            .map(|s| self.transform(s, &enc.mu[s]))
            .collect::<Result<_>>()?;
        let dz = self.config.latent_dim;
        self.decode_batch(&concat3([&t[0], &t[1], &t[2]], enc.n, dz))
    }
}

/// Splits `[n, 2d]` rows into their first and second halves.
pub(crate) fn split_halves(x: &[f64], n: usize, d: usize) -> (Vec<f64>, Vec<f64>) {
    let mut a = Vec::with_capacity(n * d);
    let mut b = Vec::with_capacity(n * d);
    for row in x.chunks_exact(2 * d) {
        a.extend_from_slice(&row[..d]);
        b.extend_from_slice(&row[d..]);
    }
    (a, b)
}
