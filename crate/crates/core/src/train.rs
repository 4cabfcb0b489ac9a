//! VAE training, end-to-end denoising and evaluation.

use log::info;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::color::{rgb_to_yuv, yuv_to_rgb, ColorSpace};
use crate::data::{ImageBuffer, ImagePair};
use crate::error::{Error, Result};
use crate::metrics::{self, pca_project, MetricsReport, MetricsRow};
use crate::model::{BatchNoise, Encoding, LossParts, ModelCheckpoint, ModelConfig, RngState, Vae, SUBSPACES};
use crate::nn::{round_to_f32, Adam, AdamConfig, Tensor4};
use crate::patch::{assemble, deblock_hook, decompose, DeblockFilter, PatchGrid, PatchSet};
use crate::rng::{rng_for, stream};

/// Sub-batch size for gradient accumulation. Sub-batch gradients are summed
/// in index order, so results do not depend on the number of threads.
const CHUNK: usize = 16;
/// Patches per forward pass at inference.
const INFER_CHUNK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    CelebaSynth,
    SiddStyle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub patch: usize,
    pub overlap: usize,
    pub latent_dim: usize,
    pub batch: usize,
    pub epochs: usize,
    pub base_lr: f64,
    pub lr_decay: f64,
    pub decay_steps: u64,
    pub lambda_reg: f64,
    pub seed: u64,
    pub sigma: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::preset(Preset::CelebaSynth)
    }
}

impl TrainConfig {
    pub fn preset(preset: Preset) -> Self {
        let (patch, overlap, epochs) = match preset {
            Preset::CelebaSynth => (16, 4, 50),
            Preset::SiddStyle => (24, 8, 20),
        };
        Self {
            patch,
            overlap,
            latent_dim: crate::model::DEFAULT_LATENT_DIM,
            batch: 128,
            epochs,
            base_lr: 1e-3,
            lr_decay: 0.95,
            decay_steps: 1000,
            lambda_reg: 1e-5,
            seed: 0,
            sigma: crate::data::CALIBRATED_SIGMA,
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            patch: self.patch,
            overlap: self.overlap,
            latent_dim: self.latent_dim,
        }
    }

    pub fn adam_config(&self) -> AdamConfig {
        AdamConfig {
            base_lr: self.base_lr,
            decay: self.lr_decay,
            decay_steps: self.decay_steps,
            ..AdamConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model_config().validate()?;
        if self.batch == 0 || self.epochs == 0 || self.decay_steps == 0 {
            return Err(Error::InvalidArgument("batch, epochs and decay_steps must be positive".into()));
        }
        if !(self.base_lr > 0.0 && self.lr_decay > 0.0 && self.lambda_reg >= 0.0 && self.sigma >= 0.0) {
            return Err(Error::InvalidArgument("learning rate, decay, lambda_reg and sigma out of range".into()));
        }
        Ok(())
    }
}

/// Aligned noisy/clean YUV patches from a set of image pairs.
#[derive(Debug, Clone)]
pub struct PatchPairs {
    pub patch: usize,
    pub noisy: Vec<f64>,
    pub clean: Vec<f64>,
}

impl PatchPairs {
    pub fn extract(pairs: &[ImagePair], patch: usize, overlap: usize) -> Result<Self> {
        let mut noisy = Vec::new();
        let mut clean = Vec::new();
        for p in pairs {
            noisy.extend(decompose(&rgb_to_yuv(&p.noisy)?, patch, overlap)?.into_data());
            clean.extend(decompose(&rgb_to_yuv(&p.clean)?, patch, overlap)?.into_data());
        }
        Ok(Self { patch, noisy, clean })
    }

    pub fn len(&self) -> usize {
        self.noisy.len() / (self.patch * self.patch * 3)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn gather(&self, idx: &[usize]) -> (Tensor4, Tensor4) {
        let n = self.patch * self.patch * 3;
        let mut a = Vec::with_capacity(idx.len() * n);
        let mut b = Vec::with_capacity(idx.len() * n);
        for &i in idx {
            a.extend_from_slice(&self.noisy[i * n..(i + 1) * n]);
            b.extend_from_slice(&self.clean[i * n..(i + 1) * n]);
        }
        let shape = [idx.len(), self.patch, self.patch, 3];
        (
            Tensor4::from_vec(shape, a).expect("gathered shape"),
            Tensor4::from_vec(shape, b).expect("gathered shape"),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub steps: u64,
    /// Mean over steps of `L_mse + L_kl + L_reg`.
    pub loss_vae: f64,
    pub loss_mse: f64,
    pub loss_kl: f64,
    pub loss_reg: f64,
    pub loss_tran: f64,
    pub lr: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: ModelCheckpoint,
    pub history: Vec<EpochStats>,
}

/// Loss terms and summed gradients over one batch, reduced in chunk order.
fn batch_gradients(
    model: &Vae,
    data: &PatchPairs,
    idx: &[usize],
    seed: u64,
    step: u64,
) -> Result<(LossParts, Vec<Vec<f64>>)> {
    let dz = model.config.latent_dim;
    let norm = idx.len();
    let parts: Vec<Result<(LossParts, Vec<Vec<f64>>)>> = idx
        .par_chunks(CHUNK)
        .enumerate()
        .map(|(c, chunk)| {
            let (noisy, clean) = data.gather(chunk);
            let mut rng = rng_for(seed, &[stream::REPARAM, step, c as u64]);
            let noise = BatchNoise::sample(chunk.len(), dz, &mut rng);
            model.loss_and_grads(&noisy, &clean, &noise, norm)
        })
        .collect();
    let mut total = LossParts::default();
    let mut grads: Option<Vec<Vec<f64>>> = None;
    for r in parts {
        let (p, g) = r?;
        total.add(&p);
        match &mut grads {
            None => grads = Some(g),
            Some(acc) => {
                for (a, b) in acc.iter_mut().zip(&g) {
                    a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                }
            }
        }
    }
    Ok((total, grads.expect("non-empty batch")))
}

/// Trains from scratch; `on_epoch` sees each epoch's statistics and checkpoint.
pub fn train_vae_with(
    pairs: &[ImagePair],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats, &ModelCheckpoint) -> Result<()>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if pairs.is_empty() {
        return Err(Error::EmptyDataset("no training pairs".into()));
    }
    let data = PatchPairs::extract(pairs, cfg.patch, cfg.overlap)?;
    let mut model = Vae::new(cfg.model_config(), cfg.seed)?;
    for p in model.params_mut() {
        round_to_f32(p);
    }
    let mut adam = Adam::for_params(cfg.adam_config(), &model.params());
    let mut step = 0u64;
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut ckpt = ModelCheckpoint::new(model.clone(), cfg.seed);
    ckpt.config = serde_json::to_value(cfg)?;
    info!("training on {} patch pairs, {} parameters", data.len(), model.num_params());

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut rng_for(cfg.seed, &[stream::SHUFFLE, epoch as u64]));
        let mut sums = LossParts::default();
        let mut reg_sum = 0.0;
        let steps_before = step;
        let lr = adam.config.lr_at(adam.t);
        for idx in order.chunks(cfg.batch) {
            let (parts, mut grads) = batch_gradients(&model, &data, idx, cfg.seed, step)?;
            let reg = model.reg_loss(cfg.lambda_reg);
            if let Some(term) = parts.non_finite_term() {
                return Err(Error::NonFinite { step, term: term.into() });
            }
            if !reg.is_finite() {
                return Err(Error::NonFinite { step, term: "L_reg".into() });
            }
            model.add_reg_grads(&mut grads, cfg.lambda_reg);
            adam.step(&mut model.params_mut(), &grads)?;
            for p in model.params_mut() {
                round_to_f32(p);
            }
            sums.add(&parts);
            reg_sum += reg;
            step += 1;
        }
        let steps = (step - steps_before) as f64;
        let stats = EpochStats {
            epoch: epoch + 1,
            steps: step - steps_before,
            loss_vae: (sums.vae() + reg_sum) / steps,
            loss_mse: sums.mse / steps,
            loss_kl: sums.kl / steps,
            loss_reg: reg_sum / steps,
            loss_tran: sums.tran_total() / steps,
            lr,
        };
        info!(
            "epoch {:>3}: L_vae {:.4} (mse {:.4}, kl {:.4}) L_tran {:.4}",
            stats.epoch, stats.loss_vae, stats.loss_mse, stats.loss_kl, stats.loss_tran
        );
        history.push(stats);
        ckpt.model = model.clone();
        ckpt.adam = Some(adam.clone());
        ckpt.step = step;
        ckpt.rng = RngState {
            root_seed: cfg.seed,
            counter: step,
        };
        on_epoch(&stats, &ckpt)?;
    }
    Ok(TrainOutcome {
        checkpoint: ckpt,
        history,
    })
}

pub fn train_vae(pairs: &[ImagePair], cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_vae_with(pairs, cfg, |_, _| Ok(()))
}

/// Repeats training `rounds` more times, each round adding the previous
/// model's denoised outputs as extra noisy inputs for the same clean targets.
pub fn train_recursive(pairs: &[ImagePair], cfg: &TrainConfig, rounds: usize) -> Result<Vec<TrainOutcome>> {
    let mut augmented = pairs.to_vec();
    let mut outcomes = vec![train_vae(&augmented, cfg)?];
    for round in 1..=rounds {
        let model = &outcomes.last().expect("first round ran").checkpoint.model;
        for p in pairs {
            let denoised = denoise_image(&p.noisy, model)?;
            augmented.push(ImagePair::new(format!("{}_r{round}", p.id), denoised, p.clean.clone())?);
        }
        outcomes.push(train_vae(&augmented, cfg)?);
    }
    Ok(outcomes)
}

/// Posterior encodings of a patch set, in slices of at most `INFER_CHUNK` patches.
pub fn encode_patch_set(model: &Vae, ps: &PatchSet) -> Result<Vec<Encoding>> {
    let d = model.config.patch;
    if ps.grid.patch != d {
        return Err(Error::Shape(format!("patches are {}x{}, model expects {d}x{d}", ps.grid.patch, ps.grid.patch)));
    }
    let n = ps.grid.patch_len();
    ps.data()
        .chunks(INFER_CHUNK * n)
        .map(|chunk| model.encode_batch(&Tensor4::from_vec([chunk.len() / n, d, d, 3], chunk.to_vec())?))
        .collect()
}

/// Transforms and decodes encodings from [`encode_patch_set`], then blends
/// the patches back into a YUV image.
pub fn decode_patch_set(model: &Vae, grid: PatchGrid, encodings: &[Encoding]) -> Result<ImageBuffer> {
    let mut out = Vec::with_capacity(grid.len() * grid.patch_len());
    for enc in encodings {
        out.extend(model.decode_transformed(enc)?.into_data());
    }
    assemble(&PatchSet::from_raw(grid, ColorSpace::Yuv, out)?)
}

/// RGB -> YUV -> patches -> encode (posterior mean) -> transform -> decode
/// -> blend -> optional deblocking -> RGB, clipped to [0, 1].
pub fn denoise_image_with(
    img: &ImageBuffer,
    model: &Vae,
    overlap: usize,
    deblock: Option<&dyn DeblockFilter>,
) -> Result<ImageBuffer> {
    let ps = decompose(&rgb_to_yuv(img)?, model.config.patch, overlap)?;
    let assembled = decode_patch_set(model, ps.grid, &encode_patch_set(model, &ps)?)?;
    let deblocked = deblock_hook(&assembled, deblock)?;
    Ok(yuv_to_rgb(&deblocked)?.clipped())
}

pub fn denoise_image(img: &ImageBuffer, model: &Vae) -> Result<ImageBuffer> {
    denoise_image_with(img, model, model.config.overlap, None)
}

/// Metrics of `denoised` (one per pair, same order) against the clean images.
pub fn metrics_report(pairs: &[ImagePair], denoised: &[ImageBuffer]) -> Result<MetricsReport> {
    if pairs.is_empty() {
        return Err(Error::EmptyDataset("nothing to evaluate".into()));
    }
    let mut skipped = 0;
    let rows = pairs
        .iter()
        .zip(denoised)
        .map(|(p, d)| {
            let un = metrics::uqi(&p.noisy, &p.clean)?;
            let ud = metrics::uqi(d, &p.clean)?;
            skipped += un.skipped + ud.skipped;
            Ok(MetricsRow {
                id: p.id.clone(),
                psnr_noisy: metrics::psnr(&p.noisy, &p.clean)?,
                psnr_denoised: metrics::psnr(d, &p.clean)?,
                ssim_noisy: metrics::ssim(&p.noisy, &p.clean)?,
                ssim_denoised: metrics::ssim(d, &p.clean)?,
                uqi_noisy: un.value,
                uqi_denoised: ud.value,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    MetricsReport::from_rows(rows, skipped)
}

pub fn evaluate(pairs: &[ImagePair], model: &Vae) -> Result<MetricsReport> {
    evaluate_with_overlap(pairs, model, model.config.overlap)
}

pub fn evaluate_with_overlap(pairs: &[ImagePair], model: &Vae, overlap: usize) -> Result<MetricsReport> {
    let denoised = pairs
        .par_iter()
        .map(|p| denoise_image_with(&p.noisy, model, overlap, None))
        .collect::<Result<Vec<_>>>()?;
    metrics_report(pairs, &denoised)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentPoint {
    pub subspace: char,
    pub class: String,
    pub pc1: f64,
    pub pc2: f64,
}

/// Posterior means of every noisy and clean patch, projected to 2-D by a
/// PCA fitted per subspace on both classes together. Rows are grouped by
/// subspace (Y, U, V), noisy patches first.
pub fn latent_projection(pairs: &[ImagePair], model: &Vae) -> Result<Vec<LatentPoint>> {
    let cfg = model.config;
    let data = PatchPairs::extract(pairs, cfg.patch, cfg.overlap)?;
    if data.is_empty() {
        return Err(Error::EmptyDataset("no patches".into()));
    }
    let all: Vec<usize> = (0..data.len()).collect();
    let mut mu_noisy: [Vec<f64>; 3] = Default::default();
    let mut mu_clean: [Vec<f64>; 3] = Default::default();
    for idx in all.chunks(INFER_CHUNK) {
        let (noisy, clean) = data.gather(idx);
        let (en, ec) = (model.encode_batch(&noisy)?, model.encode_batch(&clean)?);
        for s in 0..3 {
            mu_noisy[s].extend_from_slice(&en.mu[s]);
            mu_clean[s].extend_from_slice(&ec.mu[s]);
        }
    }
    let dz = cfg.latent_dim;
    let mut rows = Vec::with_capacity(6 * data.len());
    for s in 0..3 {
        let vectors: Vec<Vec<f64>> = mu_noisy[s]
            .chunks(dz)
            .chain(mu_clean[s].chunks(dz))
            .map(<[f64]>::to_vec)
            .collect();
        let proj = pca_project(&vectors)?;
        for (i, pt) in proj.points.iter().enumerate() {
            rows.push(LatentPoint {
                subspace: SUBSPACES[s],
                class: if i < data.len() { "noisy" } else { "clean" }.into(),
                pc1: pt[0],
                pc2: pt[1],
            });
        }
    }
    Ok(rows)
}

/// Euclidean distance between the noisy and clean centroids of one subspace.
pub fn centroid_distance(rows: &[LatentPoint], subspace: char) -> f64 {
    let centroid = |class: &str| {
        let pts: Vec<&LatentPoint> = rows
            .iter()
            .filter(|r| r.subspace == subspace && r.class == class)
            .collect();
        let n = pts.len().max(1) as f64;
        (
            pts.iter().map(|r| r.pc1).sum::<f64>() / n,
            pts.iter().map(|r| r.pc2).sum::<f64>() / n,
        )
    };
    let (a, b) = (centroid("noisy"), centroid("clean"));
    ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
}

pub fn latent_csv(rows: &[LatentPoint]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn history_csv(history: &[EpochStats]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for h in history {
        w.serialize(h).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{add_gaussian_noise, synthetic_image};

    fn tiny_cfg() -> TrainConfig {
        TrainConfig {
            patch: 8,
            overlap: 2,
            latent_dim: 4,
            batch: 8,
            epochs: 1,
            seed: 3,
            ..TrainConfig::default()
        }
    }

    fn pairs(n: usize, size: usize) -> Vec<ImagePair> {
        (0..n)
            .map(|i| {
                let clean = synthetic_image(size, i as u64);
                let noisy = add_gaussian_noise(&clean, 0.1, i as u64).unwrap();
                ImagePair::new(format!("p{i}"), noisy, clean).unwrap()
            })
            .collect()
    }

    #[test]
    fn presets() {
        let c = TrainConfig::preset(Preset::CelebaSynth);
        assert_eq!((c.patch, c.overlap, c.epochs, c.batch, c.latent_dim), (16, 4, 50, 128, 72));
        let s = TrainConfig::preset(Preset::SiddStyle);
        assert_eq!((s.patch, s.overlap, s.epochs), (24, 8, 20));
    }

    #[test]
    fn step_count_is_ceil_of_patches_over_batch() {
        // 20x20 with D=8, overlap 2: 3x3 = 9 patches
        let p = pairs(1, 20);
        let cfg = TrainConfig { batch: 4, ..tiny_cfg() };
        let out = train_vae(&p, &cfg).unwrap();
        assert_eq!(out.history[0].steps, 3);
        let cfg = TrainConfig { batch: 9, ..tiny_cfg() };
        assert_eq!(train_vae(&p, &cfg).unwrap().history[0].steps, 1);
    }

    #[test]
    fn training_is_deterministic() {
        let p = pairs(2, 14);
        let a = train_vae(&p, &tiny_cfg()).unwrap();
        let b = train_vae(&p, &tiny_cfg()).unwrap();
        assert_eq!(a.checkpoint, b.checkpoint);
        assert_eq!(a.history, b.history);
    }

    #[test]
    fn thread_count_does_not_change_result() {
        let p = pairs(2, 20);
        let cfg = TrainConfig { batch: 18, ..tiny_cfg() };
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| train_vae(&p, &cfg).unwrap())
        };
        assert_eq!(run(1).checkpoint, run(3).checkpoint);
    }

    #[test]
    fn params_stay_f32_representable() {
        let out = train_vae(&pairs(1, 14), &tiny_cfg()).unwrap();
        for p in out.checkpoint.model.params() {
            assert!(p.iter().all(|v| *v == *v as f32 as f64));
        }
    }

    #[test]
    fn denoise_shape_and_determinism() {
        let model = Vae::new(tiny_cfg().model_config(), 1).unwrap();
        let img = synthetic_image(14, 9);
        let a = denoise_image(&img, &model).unwrap();
        assert!(a.same_dims(&img));
        assert_eq!(a, denoise_image(&img, &model).unwrap());
        assert!(a.data().iter().all(|v| (0.0..=1.0).contains(v)));
        let odd = synthetic_image(15, 9);
        assert!(matches!(denoise_image(&odd, &model), Err(Error::Geometry { .. })));
    }

    #[test]
    fn evaluate_rows_and_identical_pairs() {
        let model = Vae::new(ModelConfig { patch: 16, overlap: 4, latent_dim: 4 }, 1).unwrap();
        let clean: Vec<ImagePair> = (0..2)
            .map(|i| {
                let c = synthetic_image(28, i);
                ImagePair::new(format!("c{i}"), c.clone(), c).unwrap()
            })
            .collect();
        let r = evaluate(&clean, &model).unwrap();
        assert_eq!(r.rows.len(), 2);
        assert!(r.rows.iter().all(|row| row.psnr_noisy == f64::INFINITY && row.psnr_denoised.is_finite()));
        assert_eq!(r.to_csv().unwrap().lines().count(), 4);
        assert!(evaluate(&[], &model).is_err());
    }

    #[test]
    fn latent_rows_count() {
        let p = pairs(2, 14);
        let model = Vae::new(tiny_cfg().model_config(), 1).unwrap();
        let rows = latent_projection(&p, &model).unwrap();
        // 2 images x 4 patches
        assert_eq!(rows.len(), 2 * 3 * 8);
        assert!(centroid_distance(&rows, 'Y') >= 0.0);
        assert_eq!(latent_csv(&rows).unwrap().lines().next().unwrap(), "subspace,class,pc1,pc2");
    }

    #[test]
    fn recursive_rounds_grow_the_dataset() {
        let p = pairs(1, 14);
        let outs = train_recursive(&p, &tiny_cfg(), 1).unwrap();
        assert_eq!(outs.len(), 2);
        assert_eq!(outs[1].history[0].steps, 1);
    }
}
