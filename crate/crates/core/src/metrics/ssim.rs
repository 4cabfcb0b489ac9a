use crate::color::{rgb_pixel_to_yuv, ColorSpace};
use crate::data::ImageBuffer;
use crate::error::{Error, Result};

const WINDOW: usize = 11;
const SIGMA: f64 = 1.5;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

fn gaussian_window() -> Vec<f64> {
    let c = (WINDOW / 2) as f64;
    let mut w: Vec<f64> = (0..WINDOW * WINDOW)
        .map(|k| {
            let (y, x) = ((k / WINDOW) as f64 - c, (k % WINDOW) as f64 - c);
            (-(y * y + x * x) / (2.0 * SIGMA * SIGMA)).exp()
        })
        .collect();
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

/// Mean SSIM over all valid 11x11 Gaussian-weighted windows of two planes
/// with dynamic range 1.
pub fn ssim_plane(a: &[f64], b: &[f64], height: usize, width: usize) -> Result<f64> {
    if a.len() != height * width || b.len() != a.len() {
        return Err(Error::Shape("plane sizes differ".into()));
    }
    if height < WINDOW || width < WINDOW {
        return Err(Error::InvalidArgument(format!(
            "image {height}x{width} is smaller than the {WINDOW}x{WINDOW} SSIM window"
        )));
    }
    let win = gaussian_window();
    let mut total = 0.0;
    let mut count = 0usize;
    for y0 in 0..=height - WINDOW {
        for x0 in 0..=width - WINDOW {
            let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for i in 0..WINDOW {
                for j in 0..WINDOW {
                    let w = win[i * WINDOW + j];
                    let k = (y0 + i) * width + x0 + j;
                    let (va, vb) = (a[k], b[k]);
                    ma += w * va;
                    mb += w * vb;
                    saa += w * va * va;
                    sbb += w * vb * vb;
                    sab += w * va * vb;
                }
            }
            let (va, vb, cov) = (saa - ma * ma, sbb - mb * mb, sab - ma * mb);
            total += ((2.0 * ma * mb + C1) * (2.0 * cov + C2))
                / ((ma * ma + mb * mb + C1) * (va + vb + C2));
            count += 1;
        }
    }
    Ok(total / count as f64)
}

fn luma(img: &ImageBuffer) -> Vec<f64> {
    match img.space() {
        ColorSpace::Yuv => img.channel(0),
        ColorSpace::Rgb => img
            .data()
            .chunks_exact(3)
            .map(|p| rgb_pixel_to_yuv([p[0], p[1], p[2]])[0])
            .collect(),
    }
}

/// SSIM on the Y channel.
pub fn ssim(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
    if !a.same_dims(b) {
        return Err(Error::Shape("images differ in size".into()));
    }
    ssim_plane(&luma(a), &luma(b), a.height(), a.width())
}
