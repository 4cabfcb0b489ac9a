//! RGB <-> YUV conversion.
//!
//! The forward matrix is used verbatim; note its V row is
//! (0.615, -0.515, -1.000), which is not the BT.601 V row. The inverse is
//! derived from the forward matrix once, through the adjugate.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::data::ImageBuffer;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ColorSpace {
    Rgb,
    Yuv,
}

pub type Mat3 = [[f64; 3]; 3];

pub const RGB_TO_YUV: Mat3 = [
    [0.299, 0.587, 0.114],
    [-0.147, -0.289, 0.436],
    [0.615, -0.515, -1.000],
];

#[derive(Debug, Clone)]
pub struct ColorMatrix {
    pub forward: Mat3,
    pub inverse: Mat3,
}

pub fn determinant(m: &Mat3) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

/// Exact adjugate inverse. Fails on a singular matrix instead of regularizing.
pub fn invert(m: &Mat3) -> Result<Mat3> {
    let det = determinant(m);
    if det == 0.0 || !det.is_finite() {
        return Err(Error::InvalidArgument("singular color matrix".into()));
    }
    let mut inv = [[0.0; 3]; 3];
    for (r, row) in inv.iter_mut().enumerate() {
        for (c, v) in row.iter_mut().enumerate() {
            // cofactor of (c, r), transposed
            let (r1, r2) = others(c);
            let (c1, c2) = others(r);
            let minor = m[r1][c1] * m[r2][c2] - m[r1][c2] * m[r2][c1];
            let sign = if (r + c) % 2 == 0 { 1.0 } else { -1.0 };
            *v = sign * minor / det;
        }
    }
    Ok(inv)
}

fn others(i: usize) -> (usize, usize) {
    match i {
        0 => (1, 2),
        1 => (0, 2),
        _ => (0, 1),
    }
}

impl ColorMatrix {
    pub fn get() -> &'static ColorMatrix {
        static CELL: OnceLock<ColorMatrix> = OnceLock::new();
        CELL.get_or_init(|| ColorMatrix {
            forward: RGB_TO_YUV,
            inverse: invert(&RGB_TO_YUV).expect("RGB->YUV matrix is invertible"),
        })
    }
}

#[inline]
pub fn apply(m: &Mat3, p: [f64; 3]) -> [f64; 3] {
    [
        m[0][0] * p[0] + m[0][1] * p[1] + m[0][2] * p[2],
        m[1][0] * p[0] + m[1][1] * p[1] + m[1][2] * p[2],
        m[2][0] * p[0] + m[2][1] * p[1] + m[2][2] * p[2],
    ]
}

pub fn rgb_pixel_to_yuv(p: [f64; 3]) -> [f64; 3] {
    apply(&ColorMatrix::get().forward, p)
}

pub fn yuv_pixel_to_rgb(p: [f64; 3]) -> [f64; 3] {
    apply(&ColorMatrix::get().inverse, p)
}

fn convert(img: &ImageBuffer, from: ColorSpace, to: ColorSpace, m: &Mat3) -> Result<ImageBuffer> {
    if img.space() != from {
        return Err(Error::ColorSpace {
            expected: from,
            actual: img.space(),
        });
    }
    let mut data = img.data().to_vec();
    for px in data.chunks_exact_mut(3) {
        let out = apply(m, [px[0], px[1], px[2]]);
        px.copy_from_slice(&out);
    }
    ImageBuffer::from_raw(img.height(), img.width(), to, data)
}

/// No clipping is applied; YUV values land in the image of the unit cube.
pub fn rgb_to_yuv(img: &ImageBuffer) -> Result<ImageBuffer> {
    convert(img, ColorSpace::Rgb, ColorSpace::Yuv, &ColorMatrix::get().forward)
}

/// Unclipped inverse. Call [`ImageBuffer::clipped`] before emitting an image.
pub fn yuv_to_rgb(img: &ImageBuffer) -> Result<ImageBuffer> {
    convert(img, ColorSpace::Yuv, ColorSpace::Rgb, &ColorMatrix::get().inverse)
}
