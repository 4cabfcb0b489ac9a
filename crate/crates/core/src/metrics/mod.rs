//! Image quality metrics and latent projections.

mod pca;
mod ssim;
mod uqi;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use pca::{pca_project, PcaProjection};
pub use ssim::{ssim, ssim_plane};
pub use uqi::{uqi, uqi_plane, UqiScore};

use crate::data::ImageBuffer;
use crate::error::{Error, Result};

fn check_dims(a: &ImageBuffer, b: &ImageBuffer) -> Result<()> {
    if !a.same_dims(b) {
        return Err(Error::Shape(format!(
            "images differ in size: {}x{} vs {}x{}",
            a.height(),
            a.width(),
            b.height(),
            b.width()
        )));
    }
    Ok(())
}

pub fn mse(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
    check_dims(a, b)?;
    let n = a.data().len() as f64;
    Ok(a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / n)
}

/// `10 log10(1 / MSE)` on the [0, 1] scale; `f64::INFINITY` for identical images.
pub fn psnr(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(-10.0 * m.log10())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub id: String,
    pub psnr_noisy: f64,
    pub psnr_denoised: f64,
    pub ssim_noisy: f64,
    pub ssim_denoised: f64,
    pub uqi_noisy: f64,
    pub uqi_denoised: f64,
}

impl MetricsRow {
    fn values(&self) -> [f64; 6] {
        [
            self.psnr_noisy,
            self.psnr_denoised,
            self.ssim_noisy,
            self.ssim_denoised,
            self.uqi_noisy,
            self.uqi_denoised,
        ]
    }

    fn from_values(id: String, v: [f64; 6]) -> Self {
        Self {
            id,
            psnr_noisy: v[0],
            psnr_denoised: v[1],
            ssim_noisy: v[2],
            ssim_denoised: v[3],
            uqi_noisy: v[4],
            uqi_denoised: v[5],
        }
    }

    fn to_json(&self) -> serde_json::Value {
        let num = |v: f64| {
            if v.is_finite() {
                serde_json::json!(v)
            } else if v > 0.0 {
                serde_json::json!("inf")
            } else {
                serde_json::json!(v.to_string())
            }
        };
        serde_json::json!({
            "id": self.id,
            "psnr_noisy": num(self.psnr_noisy),
            "psnr_denoised": num(self.psnr_denoised),
            "ssim_noisy": num(self.ssim_noisy),
            "ssim_denoised": num(self.ssim_denoised),
            "uqi_noisy": num(self.uqi_noisy),
            "uqi_denoised": num(self.uqi_denoised),
        })
    }
}

/// Per-image rows plus their arithmetic mean.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub rows: Vec<MetricsRow>,
    pub mean: MetricsRow,
    /// UQI windows skipped as degenerate, summed over all images.
    pub uqi_skipped: usize,
}

impl MetricsReport {
    pub fn from_rows(rows: Vec<MetricsRow>, uqi_skipped: usize) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::EmptyDataset("no rows to aggregate".into()));
        }
        let mut sums = [0.0; 6];
        for r in &rows {
            for (s, v) in sums.iter_mut().zip(r.values()) {
                *s += v;
            }
        }
        let n = rows.len() as f64;
        let mean = MetricsRow::from_values("mean".into(), sums.map(|s| s / n));
        Ok(Self {
            rows,
            mean,
            uqi_skipped,
        })
    }

    /// CSV with one row per image followed by the mean row.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in self.rows.iter().chain(std::iter::once(&self.mean)) {
            w.serialize(r).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::InvalidArgument(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "rows": self.rows.iter().map(MetricsRow::to_json).collect::<Vec<_>>(),
            "mean": self.mean.to_json(),
            "uqi_skipped_windows": self.uqi_skipped,
        })
    }

    pub fn write(&self, csv_path: &Path, json_path: &Path) -> Result<()> {
        std::fs::write(csv_path, self.to_csv()?).map_err(|e| Error::io(csv_path, e))?;
        let json = serde_json::to_string_pretty(&self.to_json())?;
        std::fs::write(json_path, json).map_err(|e| Error::io(json_path, e))
    }
}
