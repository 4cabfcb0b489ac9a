use rand::Rng;
use serde::{Deserialize, Serialize};

use super::gemm::{gemm, Trans};
use super::tensor::Tensor4;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerKind {
    Conv,
    TransposedConv,
    FullyConnected,
}

/// A parametric layer.
///
/// Weight layouts (row-major):
/// * `Conv`: `[k*k*in, out]`, row index `(ky*k + kx)*in + ci`.
/// * `TransposedConv`: `[k*k*out, in]`, i.e. the weight of the convolution
///   mapping this layer's output space back to its input space. With the
///   same hyperparameters and weight, it is the adjoint of that convolution.
/// * `FullyConnected`: `[in, out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub kind: LayerKind,
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Clone, Copy)]
struct Geom {
    k: usize,
    s: usize,
    p: usize,
    /// spatial size of the image side of im2col
    h: usize,
    w: usize,
    c: usize,
    /// spatial size of the column side
    oh: usize,
    ow: usize,
}

/// `[n, h, w, c]` -> `[n*oh*ow, k*k*c]`
fn im2col(x: &[f64], n: usize, g: Geom) -> Vec<f64> {
    let row = g.k * g.k * g.c;
    let mut cols = vec![0.0; n * g.oh * g.ow * row];
    for b in 0..n {
        let img = &x[b * g.h * g.w * g.c..(b + 1) * g.h * g.w * g.c];
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                let r = ((b * g.oh + oy) * g.ow + ox) * row;
                for ky in 0..g.k {
                    let iy = (oy * g.s + ky) as isize - g.p as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    for kx in 0..g.k {
                        let ix = (ox * g.s + kx) as isize - g.p as isize;
                        if ix < 0 || ix >= g.w as isize {
                            continue;
                        }
                        let src = (iy as usize * g.w + ix as usize) * g.c;
                        let dst = r + (ky * g.k + kx) * g.c;
                        cols[dst..dst + g.c].copy_from_slice(&img[src..src + g.c]);
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters and sums columns back into an image.
fn col2im(cols: &[f64], n: usize, g: Geom) -> Vec<f64> {
    let row = g.k * g.k * g.c;
    let mut x = vec![0.0; n * g.h * g.w * g.c];
    for b in 0..n {
        let img = &mut x[b * g.h * g.w * g.c..(b + 1) * g.h * g.w * g.c];
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                let r = ((b * g.oh + oy) * g.ow + ox) * row;
                for ky in 0..g.k {
                    let iy = (oy * g.s + ky) as isize - g.p as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    for kx in 0..g.k {
                        let ix = (ox * g.s + kx) as isize - g.p as isize;
                        if ix < 0 || ix >= g.w as isize {
                            continue;
                        }
                        let dst = (iy as usize * g.w + ix as usize) * g.c;
                        let src = r + (ky * g.k + kx) * g.c;
                        for ci in 0..g.c {
                            img[dst + ci] += cols[src + ci];
                        }
                    }
                }
            }
        }
    }
    x
}

fn add_bias(y: &mut [f64], bias: &[f64]) {
    for row in y.chunks_exact_mut(bias.len()) {
        row.iter_mut().zip(bias).for_each(|(v, b)| *v += b);
    }
}

fn bias_grad(dy: &[f64], ch: usize) -> Vec<f64> {
    let mut db = vec![0.0; ch];
    for row in dy.chunks_exact(ch) {
        db.iter_mut().zip(row).for_each(|(d, v)| *d += v);
    }
    db
}

impl Layer {
    pub fn conv(in_ch: usize, out_ch: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        Self {
            kind: LayerKind::Conv,
            in_ch,
            out_ch,
            kernel,
            stride,
            padding,
            weight: vec![0.0; kernel * kernel * in_ch * out_ch],
            bias: vec![0.0; out_ch],
        }
    }

    pub fn transposed_conv(in_ch: usize, out_ch: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        Self {
            kind: LayerKind::TransposedConv,
            ..Self::conv(in_ch, out_ch, kernel, stride, padding)
        }
    }

    pub fn fully_connected(in_features: usize, out_features: usize) -> Self {
        Self {
            kind: LayerKind::FullyConnected,
            in_ch: in_features,
            out_ch: out_features,
            kernel: 1,
            stride: 1,
            padding: 0,
            weight: vec![0.0; in_features * out_features],
            bias: vec![0.0; out_features],
        }
    }

    pub fn weight_shape(&self) -> Vec<usize> {
        let kk = self.kernel * self.kernel;
        match self.kind {
            LayerKind::Conv => vec![kk * self.in_ch, self.out_ch],
            LayerKind::TransposedConv => vec![kk * self.out_ch, self.in_ch],
            LayerKind::FullyConnected => vec![self.in_ch, self.out_ch],
        }
    }

    pub fn fan_in(&self) -> usize {
        match self.kind {
            LayerKind::FullyConnected => self.in_ch,
            _ => self.kernel * self.kernel * self.in_ch,
        }
    }

    pub fn fan_out(&self) -> usize {
        match self.kind {
            LayerKind::FullyConnected => self.out_ch,
            _ => self.kernel * self.kernel * self.out_ch,
        }
    }

    /// He-uniform for ReLU-followed layers, Glorot-uniform otherwise; zero bias.
    pub fn init(&mut self, relu_follows: bool, rng: &mut impl Rng) {
        let limit = if relu_follows {
            (6.0 / self.fan_in() as f64).sqrt()
        } else {
            (6.0 / (self.fan_in() + self.fan_out()) as f64).sqrt()
        };
        self.weight.iter_mut().for_each(|w| *w = rng.random_range(-limit..limit));
        self.bias.iter_mut().for_each(|b| *b = 0.0);
    }

    pub fn num_params(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn output_shape(&self, input: [usize; 4]) -> Result<[usize; 4]> {
        let [n, h, w, c] = input;
        let (k, s, p) = (self.kernel, self.stride, self.padding);
        match self.kind {
            LayerKind::FullyConnected => {
                if h * w * c != self.in_ch {
                    return Err(Error::Shape(format!(
                        "fully-connected layer expects {} features, got {input:?}",
                        self.in_ch
                    )));
                }
                Ok([n, 1, 1, self.out_ch])
            }
            LayerKind::Conv => {
                if c != self.in_ch || h + 2 * p < k || w + 2 * p < k {
                    return Err(Error::Shape(format!(
                        "conv k={k} in={} cannot take {input:?}",
                        self.in_ch
                    )));
                }
                Ok([n, (h + 2 * p - k) / s + 1, (w + 2 * p - k) / s + 1, self.out_ch])
            }
            LayerKind::TransposedConv => {
                if c != self.in_ch || (h - 1) * s + k <= 2 * p || (w - 1) * s + k <= 2 * p {
                    return Err(Error::Shape(format!(
                        "transposed conv k={k} in={} cannot take {input:?}",
                        self.in_ch
                    )));
                }
                Ok([n, (h - 1) * s + k - 2 * p, (w - 1) * s + k - 2 * p, self.out_ch])
            }
        }
    }

    fn geom(&self, input: [usize; 4], output: [usize; 4]) -> Geom {
        let (img, col, c) = match self.kind {
            LayerKind::TransposedConv => (output, input, self.out_ch),
            _ => (input, output, self.in_ch),
        };
        Geom {
            k: self.kernel,
            s: self.stride,
            p: self.padding,
            h: img[1],
            w: img[2],
            c,
            oh: col[1],
            ow: col[2],
        }
    }

    pub fn forward(&self, x: &Tensor4) -> Result<Tensor4> {
        let out_shape = self.output_shape(x.shape())?;
        let n = x.batch();
        let kk = self.kernel * self.kernel;
        let mut y = match self.kind {
            LayerKind::FullyConnected => {
                let mut y = vec![0.0; n * self.out_ch];
                gemm(n, self.in_ch, self.out_ch, x.data(), Trans::No, &self.weight, Trans::No, 0.0, &mut y);
                y
            }
            LayerKind::Conv => {
                let g = self.geom(x.shape(), out_shape);
                let cols = im2col(x.data(), n, g);
                let m = n * g.oh * g.ow;
                let mut y = vec![0.0; m * self.out_ch];
                gemm(m, kk * self.in_ch, self.out_ch, &cols, Trans::No, &self.weight, Trans::No, 0.0, &mut y);
                y
            }
            LayerKind::TransposedConv => {
                let g = self.geom(x.shape(), out_shape);
                let m = n * g.oh * g.ow;
                let mut cols = vec![0.0; m * kk * self.out_ch];
                gemm(m, self.in_ch, kk * self.out_ch, x.data(), Trans::No, &self.weight, Trans::Yes, 0.0, &mut cols);
                col2im(&cols, n, g)
            }
        };
        add_bias(&mut y, &self.bias);
        Tensor4::from_vec(out_shape, y)
    }

    /// Returns `(dx, grads)`; `dx` is `None` when `need_dx` is false.
    pub fn backward(&self, x: &Tensor4, dy: &Tensor4, need_dx: bool) -> Result<(Option<Tensor4>, LayerGrad)> {
        let out_shape = self.output_shape(x.shape())?;
        if dy.shape() != out_shape {
            return Err(Error::Shape(format!(
                "upstream gradient {:?} does not match output {out_shape:?}",
                dy.shape()
            )));
        }
        let n = x.batch();
        let kk = self.kernel * self.kernel;
        let mut dw = vec![0.0; self.weight.len()];
        let db = bias_grad(dy.data(), self.out_ch);
        let dx = match self.kind {
            LayerKind::FullyConnected => {
                let (i, o) = (self.in_ch, self.out_ch);
                gemm(i, n, o, x.data(), Trans::Yes, dy.data(), Trans::No, 0.0, &mut dw);
                need_dx.then(|| {
                    let mut dx = vec![0.0; n * i];
                    gemm(n, o, i, dy.data(), Trans::No, &self.weight, Trans::Yes, 0.0, &mut dx);
                    dx
                })
            }
            LayerKind::Conv => {
                let g = self.geom(x.shape(), out_shape);
                let cols = im2col(x.data(), n, g);
                let m = n * g.oh * g.ow;
                let r = kk * self.in_ch;
                gemm(r, m, self.out_ch, &cols, Trans::Yes, dy.data(), Trans::No, 0.0, &mut dw);
                need_dx.then(|| {
                    let mut dcols = vec![0.0; m * r];
                    gemm(m, self.out_ch, r, dy.data(), Trans::No, &self.weight, Trans::Yes, 0.0, &mut dcols);
                    col2im(&dcols, n, g)
                })
            }
            LayerKind::TransposedConv => {
                let g = self.geom(x.shape(), out_shape);
                let dcols = im2col(dy.data(), n, g);
                let m = n * g.oh * g.ow;
                let r = kk * self.out_ch;
                gemm(r, m, self.in_ch, &dcols, Trans::Yes, x.data(), Trans::No, 0.0, &mut dw);
                need_dx.then(|| {
                    let mut dx = vec![0.0; m * self.in_ch];
                    gemm(m, r, self.in_ch, &dcols, Trans::No, &self.weight, Trans::No, 0.0, &mut dx);
                    dx
                })
            }
        };
        let dx = dx.map(|d| Tensor4::from_vec(x.shape(), d)).transpose()?;
        Ok((dx, LayerGrad { weight: dw, bias: db }))
    }
}

pub fn relu(x: &Tensor4) -> Tensor4 {
    let mut y = x.clone();
    y.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
    y
}

/// Gradient is 1 where the input was strictly positive, else 0.
pub fn relu_backward(x: &Tensor4, dy: &Tensor4) -> Tensor4 {
    let mut dx = dy.clone();
    dx.data_mut()
        .iter_mut()
        .zip(x.data())
        .for_each(|(d, &v)| {
            if v <= 0.0 {
                *d = 0.0
            }
        });
    dx
}

/// Nearest-neighbour 2x upsampling in height and width.
pub fn upsample2x(x: &Tensor4) -> Tensor4 {
    let [n, h, w, c] = x.shape();
    let mut y = Tensor4::zeros([n, 2 * h, 2 * w, c]);
    let src = x.data();
    let dst = y.data_mut();
    for b in 0..n {
        for yy in 0..2 * h {
            for xx in 0..2 * w {
                let s = ((b * h + yy / 2) * w + xx / 2) * c;
                let d = ((b * 2 * h + yy) * 2 * w + xx) * c;
                dst[d..d + c].copy_from_slice(&src[s..s + c]);
            }
        }
    }
    y
}

/// Sums the gradient over each 2x2 block.
pub fn upsample2x_backward(dy: &Tensor4) -> Tensor4 {
    let [n, h2, w2, c] = dy.shape();
    let (h, w) = (h2 / 2, w2 / 2);
    let mut dx = Tensor4::zeros([n, h, w, c]);
    let src = dy.data();
    let dst = dx.data_mut();
    for b in 0..n {
        for yy in 0..h2 {
            for xx in 0..w2 {
                let s = ((b * h2 + yy) * w2 + xx) * c;
                let d = ((b * h + yy / 2) * w + xx / 2) * c;
                for ci in 0..c {
                    dst[d + ci] += src[s + ci];
                }
            }
        }
    }
    dx
}
