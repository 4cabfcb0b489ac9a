//! Command-line front end for the `rse` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::data::{
    build_pair_dataset, load_image, load_pair_dataset, save_image, write_pair_dataset, write_synthetic_fixtures,
    ImagePair, CALIBRATED_SIGMA,
};
use crate::model::ModelCheckpoint;
use crate::patch::PatchGrid;
use crate::rl::{run_self_enhancement, trajectory_csv, SacConfig};
use crate::train::{
    denoise_image, evaluate, history_csv, latent_csv, latent_projection, train_recursive, train_vae_with, Preset,
    TrainConfig,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PresetArg {
    CelebaSynth,
    SiddStyle,
}

impl From<PresetArg> for Preset {
    fn from(p: PresetArg) -> Self {
        match p {
            PresetArg::CelebaSynth => Preset::CelebaSynth,
            PresetArg::SiddStyle => Preset::SiddStyle,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "rse", version, about = "Self-enhancing patch VAE denoiser")]
pub struct Cli {
    /// TOML file with `preset`, `seed`, `[train]` and `[sac]` entries.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, value_enum)]
    pub preset: Option<PresetArg>,
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write synthetic clean PNG images.
    GenFixtures {
        #[arg(long, default_value_t = 200)]
        count: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
    },
    /// Build a paired noisy/clean dataset from a directory of clean PNGs.
    Synth {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        sigma: Option<f64>,
    },
    /// Train the VAE and transformations.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long, default_value_t = 0)]
        recursive_rounds: usize,
        #[command(flatten)]
        crop: CropArg,
    },
    /// Fine-tune the transformations with soft actor-critic.
    Enhance {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 50)]
        rl_epochs: usize,
        #[command(flatten)]
        crop: CropArg,
    },
    /// Denoise one PNG or every PNG in a directory.
    Denoise {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[command(flatten)]
        crop: CropArg,
    },
    /// Metrics CSV and JSON for a paired dataset.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        crop: CropArg,
    },
    /// PCA projection of the latent means of every patch.
    VizLatent {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        crop: CropArg,
    },
}

#[derive(Debug, Clone, Copy, Args)]
pub struct CropArg {
    /// Center-crop inputs to the largest size the patch grid accepts.
    #[arg(long)]
    pub center_crop: bool,
}

/// Resolved settings: preset, then config file, then flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub preset: Preset,
    pub seed: u64,
    pub train: TrainConfig,
    pub sac: SacConfig,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    preset: Option<Preset>,
    seed: Option<u64>,
    train: Option<toml::Table>,
    sac: Option<toml::Table>,
}

fn overlay<T: Serialize + serde::de::DeserializeOwned>(base: &T, table: Option<toml::Table>) -> anyhow::Result<T> {
    let mut v = serde_json::to_value(base)?;
    if let Some(t) = table {
        let obj = v.as_object_mut().expect("config serializes to an object");
        for (k, val) in serde_json::to_value(t)?.as_object().expect("table").clone() {
            if !obj.contains_key(&k) {
                bail!("unknown config key `{k}`");
            }
            obj.insert(k, val);
        }
    }
    Ok(serde_json::from_value(v)?)
}

impl RunConfig {
    pub fn resolve(cli: &Cli) -> anyhow::Result<Self> {
        let file: ConfigFile = match &cli.config {
            Some(p) => {
                let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                toml::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
            }
            None => ConfigFile::default(),
        };
        let preset = cli.preset.map(Preset::from).or(file.preset).unwrap_or(Preset::CelebaSynth);
        let seed = cli.seed.or(file.seed).unwrap_or(0);
        let mut train = overlay(&TrainConfig::preset(preset), file.train)?;
        let mut sac = overlay(&SacConfig::preset(preset), file.sac)?;
        train.seed = seed;
        sac.seed = seed;
        train.validate()?;
        sac.validate()?;
        Ok(Self { preset, seed, train, sac })
    }
}

/// Usage problems exit with 2, everything else with 1.
#[derive(Debug)]
pub enum Failure {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Runtime(_) => 1,
        }
    }
}

fn out_path(cli: &Cli) -> Result<&Path, Failure> {
    cli.out
        .as_deref()
        .ok_or_else(|| Failure::Usage(anyhow::anyhow!("--out is required for this command")))
}

fn crop_pairs(pairs: Vec<ImagePair>, patch: usize, overlap: usize, crop: CropArg) -> anyhow::Result<Vec<ImagePair>> {
    if !crop.center_crop {
        return Ok(pairs);
    }
    pairs
        .into_iter()
        .map(|p| {
            let (h, w) = PatchGrid::largest_crop(p.clean.height(), p.clean.width(), patch, overlap);
            Ok(ImagePair::new(p.id, p.noisy.center_crop(h, w)?, p.clean.center_crop(h, w)?)?)
        })
        .collect()
}

fn load_checkpoint(dir: &Path) -> anyhow::Result<ModelCheckpoint> {
    ModelCheckpoint::load(dir).with_context(|| format!("loading checkpoint {}", dir.display()))
}

fn write(path: &Path, text: &str) -> anyhow::Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn png_files(dir: &Path) -> anyhow::Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")))
        .collect();
    files.sort();
    Ok(files)
}

pub fn execute(cli: &Cli) -> Result<(), Failure> {
    let cfg = RunConfig::resolve(cli).map_err(Failure::Usage)?;
    let out = out_path(cli)?;
    let rt = Failure::Runtime;
    match &cli.command {
        Command::GenFixtures { count, size } => {
            write_synthetic_fixtures(out, *count, *size, cfg.seed).map_err(|e| rt(e.into()))?;
        }
        Command::Synth { input, sigma } => {
            let sigma = sigma.unwrap_or(CALIBRATED_SIGMA);
            let pairs = build_pair_dataset(input, sigma, cfg.seed).map_err(|e| rt(e.into()))?;
            write_pair_dataset(out, &pairs, sigma, cfg.seed).map_err(|e| rt(e.into()))?;
        }
        Command::Train {
            data,
            epochs,
            recursive_rounds,
            crop,
        } => {
            let mut tc = cfg.train.clone();
            if let Some(e) = epochs {
                tc.epochs = *e;
            }
            tc.validate().map_err(|e| Failure::Usage(e.into()))?;
            let run = || -> anyhow::Result<()> {
                let pairs = crop_pairs(load_pair_dataset(data)?, tc.patch, tc.overlap, *crop)?;
                let outcome = if *recursive_rounds == 0 {
                    train_vae_with(&pairs, &tc, |_, ck| ck.save(out))?
                } else {
                    let outcome = train_recursive(&pairs, &tc, *recursive_rounds)?
                        .pop()
                        .expect("at least one round");
                    outcome.checkpoint.save(out)?;
                    outcome
                };
                write(&out.join("loss.csv"), &history_csv(&outcome.history)?)?;
                Ok(())
            };
            run().map_err(rt)?;
        }
        Command::Enhance {
            ckpt,
            data,
            rl_epochs,
            crop,
        } => {
            let run = || -> anyhow::Result<()> {
                let ck = load_checkpoint(ckpt)?;
                let c = ck.model.config;
                let pairs = crop_pairs(load_pair_dataset(data)?, c.patch, c.overlap, *crop)?;
                let result = run_self_enhancement(&ck, &pairs, &cfg.sac, *rl_epochs)?;
                result.best.save(out)?;
                write(&out.join("trajectory.csv"), &trajectory_csv(&result.trajectory)?)?;
                log::info!("mean PSNR {:.4} -> {:.4}", result.initial_psnr, result.best_psnr);
                Ok(())
            };
            run().map_err(rt)?;
        }
        Command::Denoise { ckpt, input, crop } => {
            let run = || -> anyhow::Result<()> {
                let ck = load_checkpoint(ckpt)?;
                let c = ck.model.config;
                let one = |src: &Path, dst: &Path| -> anyhow::Result<()> {
                    let mut img = load_image(src)?;
                    if crop.center_crop {
                        let (h, w) = PatchGrid::largest_crop(img.height(), img.width(), c.patch, c.overlap);
                        img = img.center_crop(h, w)?;
                    }
                    save_image(&denoise_image(&img, &ck.model)?, dst)?;
                    Ok(())
                };
                if input.is_dir() {
                    for f in png_files(input)? {
                        one(&f, &out.join(f.file_name().expect("file name")))?;
                    }
                } else {
                    one(input, out)?;
                }
                Ok(())
            };
            run().map_err(rt)?;
        }
        Command::Eval { ckpt, data, crop } => {
            let run = || -> anyhow::Result<()> {
                let ck = load_checkpoint(ckpt)?;
                let c = ck.model.config;
                let pairs = crop_pairs(load_pair_dataset(data)?, c.patch, c.overlap, *crop)?;
                let report = evaluate(&pairs, &ck.model)?;
                fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
                report.write(&out.join("metrics.csv"), &out.join("metrics.json"))?;
                Ok(())
            };
            run().map_err(rt)?;
        }
        Command::VizLatent { ckpt, data, crop } => {
            let run = || -> anyhow::Result<()> {
                let ck = load_checkpoint(ckpt)?;
                let c = ck.model.config;
                let pairs = crop_pairs(load_pair_dataset(data)?, c.patch, c.overlap, *crop)?;
                write(out, &latent_csv(&latent_projection(&pairs, &ck.model)?)?)?;
                Ok(())
            };
            run().map_err(rt)?;
        }
    }
    Ok(())
}

/// Parses `args` (program name first) and runs the command.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let code = f.exit_code();
            let (Failure::Usage(e) | Failure::Runtime(e)) = f;
            eprintln!("error: {e:#}");
            ExitCode::from(code)
        }
    }
}

/// Serialized resolved configuration, for recording alongside outputs.
pub fn describe(cfg: &RunConfig) -> Value {
    serde_json::to_value(cfg).expect("config serializes")
}
