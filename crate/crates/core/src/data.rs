//! Images, synthetic corruption and paired datasets.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::color::ColorSpace;
use crate::error::{Error, Result};

/// Calibration preset: 10*log10(1/sigma^2) ~= 16.6 dB before clipping.
pub const CALIBRATED_SIGMA: f64 = 0.147;

/// H x W x 3 interleaved image. Values must be finite; RGB values are in
/// [0, 1] at I/O boundaries and may leave it transiently after a YUV round
/// trip inside the pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer {
    height: usize,
    width: usize,
    space: ColorSpace,
    data: Vec<f64>,
}

impl ImageBuffer {
    pub fn from_raw(height: usize, width: usize, space: ColorSpace, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Shape(format!("empty image {height}x{width}")));
        }
        if data.len() != height * width * 3 {
            return Err(Error::Shape(format!(
                "{} values for a {height}x{width}x3 image",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("image contains non-finite values".into()));
        }
        Ok(Self {
            height,
            width,
            space,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, space: ColorSpace, value: f64) -> Self {
        Self {
            height,
            width,
            space,
            data: vec![value; height * width * 3],
        }
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        space: ColorSpace,
        mut f: impl FnMut(usize, usize) -> [f64; 3],
    ) -> Self {
        let mut data = Vec::with_capacity(height * width * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(y, x));
            }
        }
        Self {
            height,
            width,
            space,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn space(&self) -> ColorSpace {
        self.space
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn pixel(&self, y: usize, x: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// One channel as a row-major plane.
    pub fn channel(&self, c: usize) -> Vec<f64> {
        self.data.iter().skip(c).step_by(3).copied().collect()
    }

    pub fn same_dims(&self, other: &ImageBuffer) -> bool {
        self.height == other.height && self.width == other.width
    }

    pub fn clipped(&self) -> ImageBuffer {
        let mut out = self.clone();
        out.data.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
        out
    }

    /// Largest centered crop of `h` x `w`.
    pub fn center_crop(&self, h: usize, w: usize) -> Result<ImageBuffer> {
        if h > self.height || w > self.width || h == 0 || w == 0 {
            return Err(Error::InvalidArgument(format!(
                "cannot crop {}x{} to {h}x{w}",
                self.height, self.width
            )));
        }
        let (y0, x0) = ((self.height - h) / 2, (self.width - w) / 2);
        Ok(ImageBuffer::from_fn(h, w, self.space, |y, x| self.pixel(y0 + y, x0 + x)))
    }

    /// 8-bit quantized copy, as it would be written to disk.
    /// RGB image from interleaved 8-bit samples.
    pub fn from_bytes(height: usize, width: usize, bytes: &[u8]) -> Result<Self> {
        Self::from_raw(height, width, ColorSpace::Rgb, bytes.iter().map(|b| *b as f64 / 255.0).collect())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImagePair {
    pub id: String,
    pub noisy: ImageBuffer,
    pub clean: ImageBuffer,
}

impl ImagePair {
    pub fn new(id: impl Into<String>, noisy: ImageBuffer, clean: ImageBuffer) -> Result<Self> {
        if !noisy.same_dims(&clean) {
            return Err(Error::Shape("noisy and clean images differ in size".into()));
        }
        if noisy.space() != ColorSpace::Rgb || clean.space() != ColorSpace::Rgb {
            return Err(Error::InvalidArgument("image pairs must be RGB".into()));
        }
        Ok(Self {
            id: id.into(),
            noisy,
            clean,
        })
    }
}

/// Loads an 8-bit RGB PNG; values are `byte / 255`.
pub fn load_image(path: &Path) -> Result<ImageBuffer> {
    let reader = image::ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    if reader.format() != Some(image::ImageFormat::Png) {
        return Err(Error::Format {
            path: path.into(),
            reason: "not a PNG file".into(),
        });
    }
    let img = reader.decode().map_err(|e| Error::Format {
        path: path.into(),
        reason: e.to_string(),
    })?;
    let color = img.color();
    if color != image::ColorType::Rgb8 {
        return Err(Error::Format {
            path: path.into(),
            reason: format!("expected 8-bit RGB, found {color:?}"),
        });
    }
    let rgb = img.into_rgb8();
    let (w, h) = rgb.dimensions();
    ImageBuffer::from_bytes(h as usize, w as usize, rgb.as_raw())
}

pub fn save_image(img: &ImageBuffer, path: &Path) -> Result<()> {
    if img.space() != ColorSpace::Rgb {
        return Err(Error::ColorSpace {
            expected: ColorSpace::Rgb,
            actual: img.space(),
        });
    }
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    image::save_buffer(
        path,
        &img.to_bytes(),
        img.width() as u32,
        img.height() as u32,
        image::ColorType::Rgb8,
    )
    .map_err(|e| Error::Format {
        path: path.into(),
        reason: e.to_string(),
    })
}

/// `clip(img + N(0, sigma^2), 0, 1)`, one draw per channel-pixel in
/// interleaved order from a ChaCha8 stream seeded with `seed`.
pub fn add_gaussian_noise(img: &ImageBuffer, sigma: f64, seed: u64) -> Result<ImageBuffer> {
    if img.space() != ColorSpace::Rgb {
        return Err(Error::ColorSpace {
            expected: ColorSpace::Rgb,
            actual: img.space(),
        });
    }
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidArgument(format!("sigma must be >= 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(img.clone());
    }
    let normal = Normal::new(0.0, sigma).expect("sigma validated");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = img.clone();
    for v in out.data_mut() {
        *v = (*v + normal.sample(&mut rng)).clamp(0.0, 1.0);
    }
    Ok(out)
}

/// Per-image seed: injective in `index` for a fixed root.
pub fn image_seed(seed: u64, index: usize) -> u64 {
    seed ^ index as u64
}

fn png_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")) {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// One noisy/clean pair per PNG in `clean_dir`, in filename order.
pub fn build_pair_dataset(clean_dir: &Path, sigma: f64, seed: u64) -> Result<Vec<ImagePair>> {
    let files = png_files(clean_dir)?;
    if files.is_empty() {
        return Err(Error::EmptyDataset(format!("no .png files in {}", clean_dir.display())));
    }
    files
        .iter()
        .enumerate()
        .map(|(i, path)| {
            let clean = load_image(path)?;
            let noisy = add_gaussian_noise(&clean, sigma, image_seed(seed, i))?;
            ImagePair::new(stem(path), noisy, clean)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub ids: Vec<String>,
    pub sigma: f64,
    pub seed: u64,
}

/// Writes `{out}/clean/{id}.png`, `{out}/noisy/{id}.png` and `manifest.json`.
pub fn write_pair_dataset(out: &Path, pairs: &[ImagePair], sigma: f64, seed: u64) -> Result<DatasetManifest> {
    for pair in pairs {
        save_image(&pair.clean, &out.join("clean").join(format!("{}.png", pair.id)))?;
        save_image(&pair.noisy, &out.join("noisy").join(format!("{}.png", pair.id)))?;
    }
    let manifest = DatasetManifest {
        ids: pairs.iter().map(|p| p.id.clone()).collect(),
        sigma,
        seed,
    };
    let path = out.join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<DatasetManifest> {
    let path = dir.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn load_pair_dataset(dir: &Path) -> Result<Vec<ImagePair>> {
    let manifest = read_manifest(dir)?;
    if manifest.ids.is_empty() {
        return Err(Error::EmptyDataset(format!("{} lists no images", dir.display())));
    }
    manifest
        .ids
        .iter()
        .map(|id| {
            let clean = load_image(&dir.join("clean").join(format!("{id}.png")))?;
            let noisy = load_image(&dir.join("noisy").join(format!("{id}.png")))?;
            ImagePair::new(id.clone(), noisy, clean)
        })
        .collect()
}

/// Smooth synthetic RGB scene: a per-channel linear gradient with a few
/// soft-edged colored ellipses. Values stay inside [0.15, 0.85].
pub fn synthetic_image(size: usize, seed: u64) -> ImageBuffer {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = size as f64;
    let base: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.3..0.7));
    let grad: [[f64; 2]; 3] =
        std::array::from_fn(|_| [rng.random_range(-0.15..0.15), rng.random_range(-0.15..0.15)]);
    struct Blob {
        cy: f64,
        cx: f64,
        ry: f64,
        rx: f64,
        color: [f64; 3],
    }
    let n_blobs = rng.random_range(2..=4);
    let blobs: Vec<Blob> = (0..n_blobs)
        .map(|_| Blob {
            cy: rng.random_range(0.0..s),
            cx: rng.random_range(0.0..s),
            ry: rng.random_range(0.12 * s..0.35 * s),
            rx: rng.random_range(0.12 * s..0.35 * s),
            color: std::array::from_fn(|_| rng.random_range(0.15..0.85)),
        })
        .collect();
    ImageBuffer::from_fn(size, size, ColorSpace::Rgb, |y, x| {
        let (fy, fx) = (y as f64 / s - 0.5, x as f64 / s - 0.5);
        let mut px: [f64; 3] = std::array::from_fn(|c| base[c] + grad[c][0] * fy + grad[c][1] * fx);
        for b in &blobs {
            let dy = (y as f64 - b.cy) / b.ry;
            let dx = (x as f64 - b.cx) / b.rx;
            let r = (dy * dy + dx * dx).sqrt();
            // soft edge about two pixels wide
            let edge = (1.0 - r) * b.ry.min(b.rx) / 1.5;
            let alpha = 1.0 / (1.0 + (-edge).exp());
            for c in 0..3 {
                px[c] = (1.0 - alpha) * px[c] + alpha * b.color[c];
            }
        }
        px.map(|v| v.clamp(0.15, 0.85))
    })
}

/// Writes `count` synthetic images as `img_00000.png`, ... into `dir`.
pub fn write_synthetic_fixtures(dir: &Path, count: usize, size: usize, seed: u64) -> Result<Vec<PathBuf>> {
    (0..count)
        .map(|i| {
            let img = synthetic_image(size, crate::rng::derive_seed(seed, &[crate::rng::stream::FIXTURE, i as u64]));
            let path = dir.join(format!("img_{i:05}.png"));
            save_image(&img, &path)?;
            Ok(path)
        })
        .collect()
}
