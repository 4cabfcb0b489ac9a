//! Acceptance criteria A1-A8 on the synthetic fixture set. Prints one
//! PASS/FAIL line per criterion and exits non-zero if any fails.

mod common;

use std::io::Write;
use std::process::ExitCode;
use std::time::Instant;

use rse_core::color::{rgb_to_yuv, yuv_to_rgb, ColorSpace};
use rse_core::data::{synthetic_image, ImagePair};
use rse_core::model::loss::loss_kl;
use rse_core::model::ModelCheckpoint;
use rse_core::nn::lr_at;
use rse_core::patch::{assemble, decompose, PatchSet};
use rse_core::rl::{run_self_enhancement, trajectory_csv, Action, Enhancement, Environment, SacConfig};
use rse_core::train::{
    centroid_distance, evaluate, evaluate_with_overlap, latent_projection, train_vae, Preset, TrainConfig,
};

use common::gradcheck;

const TRAIN_SEED: u64 = 7;
const RL_SEED: u64 = 11;
const RL_EPOCHS: usize = 50;

struct Outcome {
    failed: Vec<&'static str>,
}

impl Outcome {
    fn record(&mut self, id: &'static str, pass: bool, detail: String, started: Instant) {
        let verdict = if pass { "PASS" } else { "FAIL" };
        println!("{id} {verdict}  {detail}  [{:.1}s]", started.elapsed().as_secs_f64());
        std::io::stdout().flush().ok();
        if !pass {
            self.failed.push(id);
        }
    }
}

fn a1(out: &mut Outcome) {
    let t = Instant::now();
    let mut worst: Vec<(String, f64, f64)> = gradcheck::layer_errors(101)
        .into_iter()
        .map(|(n, e)| (n.to_string(), e, 1e-4))
        .collect();
    worst.push(("composite loss".into(), gradcheck::composite_error(102), 1e-4));
    worst.push(("transformation loss".into(), gradcheck::tran_error(103), 1e-4));
    worst.push(("policy loss".into(), gradcheck::policy_error(104), 1e-4));
    worst.push(("full chain".into(), gradcheck::full_chain_error(105), 1e-3));
    let bad: Vec<String> = worst.iter().filter(|(_, e, tol)| e > tol).map(|(n, e, _)| format!("{n} {e:.2e}")).collect();
    let max = worst.iter().map(|w| w.1).fold(0.0, f64::max);
    let detail = if bad.is_empty() {
        format!("{} checks, worst relative error {max:.2e}", worst.len())
    } else {
        format!("over tolerance: {}", bad.join(", "))
    };
    out.record("A1", bad.is_empty() && t.elapsed().as_secs() < 120, detail, t);
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn a2(out: &mut Outcome) {
    let t = Instant::now();
    let img = synthetic_image(256, 5);
    let yuv_rt = max_abs_diff(yuv_to_rgb(&rgb_to_yuv(&img).unwrap()).unwrap().data(), img.data());
    let ps = decompose(&img, 16, 4).unwrap();
    let patch_rt = max_abs_diff(assemble(&ps).unwrap().data(), img.data());
    let count = ps.len();
    // assembling all-ones patches yields the per-pixel sum of normalized weights
    let ones = PatchSet::from_raw(ps.grid, ColorSpace::Rgb, vec![1.0; ps.data().len()]).unwrap();
    let weight_sum = max_abs_diff(assemble(&ones).unwrap().data(), &vec![1.0; img.data().len()]);
    let kl = [
        loss_kl(&[0.0], &[0.0], 1).unwrap(),
        loss_kl(&[1.0], &[0.0], 1).unwrap(),
        loss_kl(&[0.0], &[1.0], 1).unwrap(),
    ];
    let kl_err = max_abs_diff(&kl, &[0.0, 0.5, (std::f64::consts::E - 2.0) / 2.0]);
    let lr = [lr_at(0), lr_at(1000), lr_at(2000)];
    let lr_err = max_abs_diff(&lr, &[0.001, 0.00095, 0.0009025]);
    let pass = yuv_rt <= 1e-6
        && patch_rt <= 1e-6
        && count == 441
        && weight_sum <= 1e-12
        && kl_err <= 1e-9
        && lr_err <= 1e-12
        && t.elapsed().as_secs() < 60;
    let detail = format!(
        "yuv {yuv_rt:.1e}, patches {patch_rt:.1e}, {count} patches, weight sum {weight_sum:.1e}, kl {kl_err:.1e}, lr {lr_err:.1e}"
    );
    out.record("A2", pass, detail, t);
}

fn train_cfg() -> TrainConfig {
    TrainConfig {
        seed: TRAIN_SEED,
        ..TrainConfig::preset(Preset::CelebaSynth)
    }
}

fn sac_cfg() -> SacConfig {
    SacConfig {
        seed: RL_SEED,
        ..SacConfig::preset(Preset::CelebaSynth)
    }
}

fn bytes(ck: &ModelCheckpoint) -> (String, Vec<u8>) {
    ck.to_bytes().unwrap()
}

fn main() -> ExitCode {
    let mut out = Outcome { failed: Vec::new() };
    a1(&mut out);
    a2(&mut out);

    let dir = tempfile::tempdir().unwrap();
    let (train, held) = common::fixture(dir.path());
    let cfg = train_cfg();

    // A3
    let t = Instant::now();
    let ck = train_vae(&train, &cfg).unwrap().checkpoint;
    let report = evaluate(&held, &ck.model).unwrap();
    let m = &report.mean;
    let pass = m.psnr_denoised >= m.psnr_noisy + 5.0
        && m.ssim_denoised > m.ssim_noisy
        && m.uqi_denoised > m.uqi_noisy
        && (15.6..=17.6).contains(&m.psnr_noisy)
        && cfg.epochs <= 50;
    let detail = format!(
        "{} epochs; PSNR {:.3} -> {:.3} dB (need >= {:.3}), SSIM {:.4} -> {:.4}, UQI {:.4} -> {:.4}",
        cfg.epochs,
        m.psnr_noisy,
        m.psnr_denoised,
        m.psnr_noisy + 5.0,
        m.ssim_noisy,
        m.ssim_denoised,
        m.uqi_noisy,
        m.uqi_denoised
    );
    out.record("A3", pass, detail, t);

    // A4
    let t = Instant::now();
    let zero = evaluate_with_overlap(&held, &ck.model, 0).unwrap().mean.psnr_denoised;
    let blended = m.psnr_denoised;
    let detail = format!("overlap 0 {zero:.4} dB, overlap {} {blended:.4} dB, gain {:.4} dB", cfg.overlap, blended - zero);
    out.record("A4", blended - zero > 0.1, detail, t);

    // A5
    let t = Instant::now();
    let half: Vec<ImagePair> = train[..train.len() / 2].to_vec();
    let small = train_vae(&half, &cfg).unwrap().checkpoint;
    let small_psnr = evaluate(&held, &small.model).unwrap().mean.psnr_denoised;
    let delta = small_psnr - m.psnr_denoised;
    let detail = format!("{} images {:.3} dB, {} images {small_psnr:.3} dB, change {delta:+.3} dB", train.len(), m.psnr_denoised, half.len());
    out.record("A5", delta.abs() < 1.0, detail, t);

    // A6
    let t = Instant::now();
    let sac = sac_cfg();
    let mut env = Environment::new(ck.model.clone(), &held, &sac).unwrap();
    let identity = env.step(&Action::identity(ck.model.config.latent_dim)).unwrap();
    let identity_exact = identity.psnr == m.psnr_denoised && env.model().transforms == ck.model.transforms;
    let enh = run_self_enhancement(&ck, &held, &sac, RL_EPOCHS).unwrap();
    let best_psnr = evaluate(&held, &enh.best.model).unwrap().mean.psnr_denoised;
    let offset = sac.c - sac.k * sac.psnr_target;
    let affine_err = enh
        .trajectory
        .iter()
        .map(|r| (r.reward - sac.k * r.mean_psnr - offset).abs())
        .fold(0.0, f64::max);
    let in_bounds = enh.trajectory.iter().skip(1).all(|r| r.action_min > 0.999 && r.action_max < 1.001);
    let (lo, hi) = enh.trajectory.iter().skip(1).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| {
        (lo.min(r.action_min), hi.max(r.action_max))
    });
    let pass = identity_exact
        && best_psnr >= m.psnr_denoised
        && best_psnr == enh.best_psnr
        && affine_err <= 1e-9
        && in_bounds
        && enh.trajectory.len() == RL_EPOCHS + 1;
    let detail = format!(
        "identity exact {identity_exact}; PSNR {:.4} -> best {best_psnr:.4} dB (gain {:+.4}, epoch {}); reward - {}*psnr off by {affine_err:.1e}; actions in [{lo:.9}, {hi:.9}]",
        m.psnr_denoised,
        best_psnr - m.psnr_denoised,
        enh.best_epoch,
        sac.k
    );
    out.record("A6", pass, detail, t);

    // A7
    let t = Instant::now();
    let again = train_vae(&train, &cfg).unwrap().checkpoint;
    let ck_same = bytes(&again) == bytes(&ck);
    let csv_same = evaluate(&held, &again.model).unwrap().to_csv().unwrap() == report.to_csv().unwrap();
    let enh2: Enhancement = run_self_enhancement(&again, &held, &sac, RL_EPOCHS).unwrap();
    let traj_same = trajectory_csv(&enh2.trajectory).unwrap() == trajectory_csv(&enh.trajectory).unwrap();
    let best_same = bytes(&enh2.best) == bytes(&enh.best);
    let detail = format!(
        "checkpoint {ck_same}, metrics csv {csv_same}, trajectory {traj_same}, enhanced checkpoint {best_same}"
    );
    out.record("A7", ck_same && csv_same && traj_same && best_same, detail, t);

    // A8
    let t = Instant::now();
    let rows = latent_projection(&held, &ck.model).unwrap();
    let [y, u, v] = ['Y', 'U', 'V'].map(|s| centroid_distance(&rows, s));
    let detail = format!("centroid distance Y {y:.4}, U {u:.4}, V {v:.4} over {} rows", rows.len());
    out.record("A8", y > u && y > v, detail, t);

    if out.failed.is_empty() {
        println!("acceptance: all criteria pass");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: failing {}", out.failed.join(", "));
        ExitCode::FAILURE
    }
}
