//! Overlapping patch decomposition and distance-weighted reassembly.

use serde::{Deserialize, Serialize};

use crate::color::ColorSpace;
use crate::data::ImageBuffer;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchGrid {
    pub patch: usize,
    pub overlap: usize,
    pub stride: usize,
    pub rows: usize,
    pub cols: usize,
    pub src_h: usize,
    pub src_w: usize,
}

impl PatchGrid {
    pub fn new(src_h: usize, src_w: usize, patch: usize, overlap: usize) -> Result<Self> {
        if patch == 0 || overlap >= patch {
            return Err(Error::InvalidArgument(format!(
                "need 0 <= overlap < D, got D={patch} overlap={overlap}"
            )));
        }
        let stride = patch - overlap;
        let fits = |n: usize| n >= patch && (n - patch).is_multiple_of(stride);
        if !fits(src_h) || !fits(src_w) {
            let (crop_h, crop_w) = Self::largest_crop(src_h, src_w, patch, overlap);
            return Err(Error::Geometry {
                height: src_h,
                width: src_w,
                patch,
                overlap,
                crop_h,
                crop_w,
            });
        }
        Ok(Self {
            patch,
            overlap,
            stride,
            rows: (src_h - patch) / stride + 1,
            cols: (src_w - patch) / stride + 1,
            src_h,
            src_w,
        })
    }

    /// Largest (h, w) not exceeding the inputs that the geometry tiles exactly.
    pub fn largest_crop(src_h: usize, src_w: usize, patch: usize, overlap: usize) -> (usize, usize) {
        let stride = patch.saturating_sub(overlap).max(1);
        let fit = |n: usize| {
            if n < patch {
                0
            } else {
                patch + (n - patch) / stride * stride
            }
        };
        (fit(src_h), fit(src_w))
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Top-left corner of patch `index` (row-major grid order).
    pub fn origin(&self, index: usize) -> (usize, usize) {
        (index / self.cols * self.stride, index % self.cols * self.stride)
    }

    pub fn patch_len(&self) -> usize {
        self.patch * self.patch * 3
    }
}

/// Patches stored back to back, each D x D x 3 interleaved, row-major over
/// the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchSet {
    pub grid: PatchGrid,
    pub space: ColorSpace,
    data: Vec<f64>,
}

impl PatchSet {
    pub fn from_raw(grid: PatchGrid, space: ColorSpace, data: Vec<f64>) -> Result<Self> {
        if data.len() != grid.len() * grid.patch_len() {
            return Err(Error::Shape(format!(
                "{} values for {} patches of {}",
                data.len(),
                grid.len(),
                grid.patch_len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("patch values must be finite".into()));
        }
        Ok(Self { grid, space, data })
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    pub fn patch(&self, index: usize) -> &[f64] {
        let n = self.grid.patch_len();
        &self.data[index * n..(index + 1) * n]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }
}

pub fn decompose(img: &ImageBuffer, patch: usize, overlap: usize) -> Result<PatchSet> {
    let grid = PatchGrid::new(img.height(), img.width(), patch, overlap)?;
    let src = img.data();
    let row_len = patch * 3;
    let mut data = Vec::with_capacity(grid.len() * grid.patch_len());
    for idx in 0..grid.len() {
        let (y0, x0) = grid.origin(idx);
        for y in y0..y0 + patch {
            let start = (y * img.width() + x0) * 3;
            data.extend_from_slice(&src[start..start + row_len]);
        }
    }
    Ok(PatchSet {
        grid,
        space: img.space(),
        data,
    })
}

/// Separable tent weight, strictly positive on the whole patch.
pub fn blend_weight(i: usize, j: usize, patch: usize) -> f64 {
    let c = (patch as f64 - 1.0) / 2.0;
    let tent = |k: usize| 1.0 - (k as f64 - c).abs() / (c + 1.0);
    tent(i) * tent(j)
}

pub fn blend_weights(patch: usize) -> Vec<f64> {
    (0..patch * patch)
        .map(|k| blend_weight(k / patch, k % patch, patch))
        .collect()
}

/// Weighted average of all covering patches at each pixel. Accumulation runs
/// in fixed grid order, so the result does not depend on how the patches
/// were produced.
pub fn assemble(ps: &PatchSet) -> Result<ImageBuffer> {
    let g = ps.grid;
    if ps.data.len() != g.len() * g.patch_len() {
        return Err(Error::Shape("patch count does not match grid".into()));
    }
    let weights = blend_weights(g.patch);
    let mut acc = vec![0.0; g.src_h * g.src_w * 3];
    let mut wsum = vec![0.0; g.src_h * g.src_w];
    let mut cover = vec![0u32; g.src_h * g.src_w];
    let mut single = vec![0.0; g.src_h * g.src_w * 3];
    for idx in 0..g.len() {
        let (y0, x0) = g.origin(idx);
        let p = ps.patch(idx);
        for i in 0..g.patch {
            for j in 0..g.patch {
                let w = weights[i * g.patch + j];
                let dst = (y0 + i) * g.src_w + x0 + j;
                let src = (i * g.patch + j) * 3;
                wsum[dst] += w;
                cover[dst] += 1;
                for c in 0..3 {
                    acc[dst * 3 + c] += w * p[src + c];
                    single[dst * 3 + c] = p[src + c];
                }
            }
        }
    }
    for (k, px) in acc.chunks_exact_mut(3).enumerate() {
        let w = wsum[k];
        assert!(w > 0.0, "pixel not covered by any patch");
        if cover[k] == 1 {
            px.copy_from_slice(&single[k * 3..k * 3 + 3]);
        } else {
            px.iter_mut().for_each(|v| *v /= w);
        }
    }
    ImageBuffer::from_raw(g.src_h, g.src_w, ps.space, acc)
}

/// Pluggable post-assembly deblocking filter.
pub trait DeblockFilter: Send + Sync {
    fn apply(&self, img: &ImageBuffer) -> ImageBuffer;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct IdentityDeblock;

impl DeblockFilter for IdentityDeblock {
    fn apply(&self, img: &ImageBuffer) -> ImageBuffer {
        img.clone()
    }
}

/// Runs `filter` (identity when `None`) and checks it kept the image size.
pub fn deblock_hook(img: &ImageBuffer, filter: Option<&dyn DeblockFilter>) -> Result<ImageBuffer> {
    let out = filter.unwrap_or(&IdentityDeblock).apply(img);
    if !out.same_dims(img) || out.space() != img.space() {
        return Err(Error::Shape("deblocking filter changed image geometry".into()));
    }
    Ok(out)
}
