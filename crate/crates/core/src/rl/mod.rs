//! Self-enhancement: soft actor-critic fine-tuning of the latent
//! transformations against the mean PSNR of a fixed evaluation set.

mod sac;

use serde::{Deserialize, Serialize};

use crate::color::{rgb_to_yuv, yuv_to_rgb};
use crate::data::ImagePair;
use crate::error::{Error, Result};
use crate::metrics::psnr;
use crate::model::{Encoding, ModelCheckpoint, Vae};
use crate::nn::{round_to_f32, Sequential};
use crate::patch::{decompose, PatchGrid};
use crate::train::{decode_patch_set, encode_patch_set, Preset};

pub use sac::{q_target, q_target_with_noise, Agent, PolicySample, ReplayBuffer, Transition};

/// Largest deviation of an action component from 1.
pub const ACTION_SCALE: f64 = 1e-3;
/// Squashed values are kept this far inside (-1, 1) so the bounds stay strict.
const SQUASH_MARGIN: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SacConfig {
    pub alpha: f64,
    pub gamma: f64,
    pub k: f64,
    pub c: f64,
    pub psnr_target: f64,
    pub episode_len: usize,
    pub replay_capacity: usize,
    pub polyak: f64,
    pub hidden: usize,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for SacConfig {
    fn default() -> Self {
        Self::preset(Preset::CelebaSynth)
    }
}

impl SacConfig {
    pub fn preset(preset: Preset) -> Self {
        Self {
            alpha: 0.2,
            gamma: 0.99,
            k: 1.25,
            c: 5.0,
            psnr_target: match preset {
                Preset::CelebaSynth => 30.0,
                Preset::SiddStyle => 34.0,
            },
            episode_len: 8,
            replay_capacity: 1000,
            polyak: 0.995,
            hidden: 64,
            batch: 16,
            lr: 3e-4,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.alpha > 0.0
            && (0.0..1.0).contains(&self.gamma)
            && (0.0..=1.0).contains(&self.polyak)
            && self.episode_len > 0
            && self.replay_capacity > 0
            && self.hidden > 0
            && self.batch > 0
            && self.lr > 0.0
            && self.k.is_finite()
            && self.c.is_finite()
            && self.psnr_target.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument("invalid SAC configuration".into()))
        }
    }
}

/// Per-subspace multiplicative factors for the output units of every
/// layer of `T_y`, `T_u`, `T_v`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Action {
    pub a: [Vec<f64>; 3],
}

impl Action {
    pub fn identity(latent_dim: usize) -> Self {
        Self {
            a: std::array::from_fn(|_| vec![1.0; latent_dim]),
        }
    }

    /// Maps squashed values `y` in (-1, 1), laid out `[y_y | y_u | y_v]`, to factors `1 + 0.001 y`.
    pub fn from_squashed(y: &[f64]) -> Result<Self> {
        if y.is_empty() || !y.len().is_multiple_of(3) {
            return Err(Error::Shape(format!("action length {} is not divisible by 3", y.len())));
        }
        let d = y.len() / 3;
        Ok(Self {
            a: std::array::from_fn(|s| y[s * d..(s + 1) * d].iter().map(|v| 1.0 + ACTION_SCALE * v).collect()),
        })
    }

    pub fn components(&self) -> impl Iterator<Item = f64> + '_ {
        self.a.iter().flatten().copied()
    }

    pub fn in_bounds(&self) -> bool {
        self.components()
            .all(|v| v > 1.0 - ACTION_SCALE && v < 1.0 + ACTION_SCALE)
    }

    pub fn min(&self) -> f64 {
        self.components().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.components().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// `tanh` kept strictly inside (-1, 1).
pub fn squash(u: f64) -> f64 {
    u.tanh().clamp(-1.0 + SQUASH_MARGIN, 1.0 - SQUASH_MARGIN)
}

/// Scales column `j` of every weight matrix of `T_s` by `a_s[j]`. Biases
/// are left alone.
pub fn apply_action(transforms: &mut [Sequential; 3], action: &Action) -> Result<()> {
    if !action.in_bounds() {
        return Err(Error::InvalidArgument(format!(
            "action outside (0.999, 1.001): min {}, max {}",
            action.min(),
            action.max()
        )));
    }
    for (t, a) in transforms.iter().zip(&action.a) {
        if t.layers().any(|l| l.out_ch != a.len()) {
            return Err(Error::Shape(format!("action length {} does not match transformation width", a.len())));
        }
    }
    for (t, a) in transforms.iter_mut().zip(&action.a) {
        for layer in t.layers_mut() {
            for row in layer.weight.chunks_exact_mut(a.len()) {
                row.iter_mut().zip(a).for_each(|(w, f)| *w *= f);
            }
        }
    }
    Ok(())
}

pub fn reward(psnr: f64, cfg: &SacConfig) -> f64 {
    cfg.k * (psnr - cfg.psnr_target) + cfg.c
}

/// Scalar observation fed to the networks.
pub fn observation(psnr: f64, cfg: &SacConfig) -> f64 {
    (psnr - cfg.psnr_target) / 10.0
}

struct EvalImage {
    pair: ImagePair,
    grid: PatchGrid,
    encodings: Vec<Encoding>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub psnr: f64,
    pub reward: f64,
    pub done: bool,
}

/// Wraps a pretrained model and a fixed evaluation set. Only the
/// transformations change, so patch encodings are computed once.
pub struct Environment {
    base: Vae,
    model: Vae,
    eval: Vec<EvalImage>,
    cfg: SacConfig,
    step: usize,
    psnr: f64,
    initial_psnr: f64,
}

impl Environment {
    /// `base` is rounded to f32, the precision checkpoints store.
    pub fn new(mut base: Vae, eval: &[ImagePair], cfg: &SacConfig) -> Result<Self> {
        cfg.validate()?;
        for p in base.params_mut() {
            round_to_f32(p);
        }
        if eval.is_empty() {
            return Err(Error::EmptyDataset("empty evaluation set".into()));
        }
        let eval = eval
            .iter()
            .map(|p| {
                let ps = decompose(&rgb_to_yuv(&p.noisy)?, base.config.patch, base.config.overlap)?;
                Ok(EvalImage {
                    pair: p.clone(),
                    grid: ps.grid,
                    encodings: encode_patch_set(&base, &ps)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let mut env = Self {
            model: base.clone(),
            base,
            eval,
            cfg: cfg.clone(),
            step: 0,
            psnr: 0.0,
            initial_psnr: 0.0,
        };
        env.initial_psnr = env.mean_psnr()?;
        env.psnr = env.initial_psnr;
        Ok(env)
    }

    /// Mean PSNR of the current model over the evaluation set, summed in order.
    pub fn mean_psnr(&self) -> Result<f64> {
        let mut sum = 0.0;
        for img in &self.eval {
            let out = yuv_to_rgb(&decode_patch_set(&self.model, img.grid, &img.encodings)?)?.clipped();
            let p = psnr(&out, &img.pair.clean)?;
            if !p.is_finite() {
                return Err(Error::NonFinite {
                    step: self.step as u64,
                    term: format!("PSNR of {}", img.pair.id),
                });
            }
            sum += p;
        }
        Ok(sum / self.eval.len() as f64)
    }

    pub fn initial_psnr(&self) -> f64 {
        self.initial_psnr
    }

    pub fn psnr(&self) -> f64 {
        self.psnr
    }

    pub fn model(&self) -> &Vae {
        &self.model
    }

    pub fn step_index(&self) -> usize {
        self.step
    }

    pub fn done(&self) -> bool {
        self.step >= self.cfg.episode_len
    }

    /// Restores the pretrained weights; returns the observation.
    pub fn reset(&mut self) -> f64 {
        self.model = self.base.clone();
        self.step = 0;
        self.psnr = self.initial_psnr;
        observation(self.psnr, &self.cfg)
    }

    /// Applies `action` on top of the current weights and re-evaluates.
    pub fn step(&mut self, action: &Action) -> Result<StepOutcome> {
        apply_action(&mut self.model.transforms, action)?;
        for t in &mut self.model.transforms {
            for p in t.params_mut() {
                round_to_f32(p);
            }
        }
        self.step += 1;
        self.psnr = self.mean_psnr()?;
        Ok(StepOutcome {
            psnr: self.psnr,
            reward: reward(self.psnr, &self.cfg),
            done: self.done(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub epoch: usize,
    pub step: usize,
    pub mean_psnr: f64,
    pub reward: f64,
    pub action_min: f64,
    pub action_max: f64,
}

#[derive(Debug, Clone)]
pub struct Enhancement {
    pub best: ModelCheckpoint,
    pub initial_psnr: f64,
    pub best_psnr: f64,
    /// Epoch 0 is the pretrained state.
    pub best_epoch: usize,
    pub trajectory: Vec<TrajectoryRow>,
}

/// Runs `epochs` rounds of (env step, buffer push, SAC update) and keeps the
/// weights with the highest mean PSNR seen, the starting point included.
pub fn run_self_enhancement(
    ckpt: &ModelCheckpoint,
    eval: &[ImagePair],
    cfg: &SacConfig,
    epochs: usize,
) -> Result<Enhancement> {
    let mut env = Environment::new(ckpt.model.clone(), eval, cfg)?;
    let action_dim = 3 * ckpt.model.config.latent_dim;
    let mut agent = Agent::new(action_dim, cfg)?;
    let mut buffer = ReplayBuffer::new(cfg.replay_capacity);

    let initial = env.initial_psnr();
    let mut trajectory = vec![TrajectoryRow {
        epoch: 0,
        step: 0,
        mean_psnr: initial,
        reward: reward(initial, cfg),
        action_min: 1.0,
        action_max: 1.0,
    }];
    let (mut best_psnr, mut best_epoch, mut best_model) = (initial, 0, ckpt.model.clone());

    let mut obs = env.reset();
    for epoch in 1..=epochs {
        if env.done() {
            obs = env.reset();
        }
        let y = agent.act(obs)?;
        let action = Action::from_squashed(&y)?;
        let out = env.step(&action)?;
        let next_obs = observation(out.psnr, cfg);
        buffer.push(Transition {
            obs,
            action: y,
            reward: out.reward,
            next_obs,
            done: out.done,
        });
        if buffer.len() >= cfg.batch {
            agent.update(&buffer)?;
        }
        trajectory.push(TrajectoryRow {
            epoch,
            step: env.step_index(),
            mean_psnr: out.psnr,
            reward: out.reward,
            action_min: action.min(),
            action_max: action.max(),
        });
        if out.psnr > best_psnr {
            best_psnr = out.psnr;
            best_epoch = epoch;
            best_model = env.model().clone();
        }
        log::info!("rl epoch {epoch:>3}: psnr {:.4} reward {:.4}", out.psnr, out.reward);
        obs = next_obs;
    }

    let mut best = ckpt.clone();
    best.model = best_model;
    best.adam = None;
    best.rl_meta = Some(serde_json::json!({
        "initial_psnr": initial,
        "best_psnr": best_psnr,
        "best_epoch": best_epoch,
        "epochs": epochs,
        "sac": cfg,
    }));
    Ok(Enhancement {
        best,
        initial_psnr: initial,
        best_psnr,
        best_epoch,
        trajectory,
    })
}

pub fn trajectory_csv(rows: &[TrajectoryRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}
