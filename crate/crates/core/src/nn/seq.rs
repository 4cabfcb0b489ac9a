use rand::Rng;

use super::layer::{relu, relu_backward, upsample2x, upsample2x_backward, Layer};
use super::tensor::Tensor4;
use crate::error::Result;

#[derive(Debug, Clone, PartialEq)]
pub enum Op {
    Layer(Layer),
    Relu,
    Upsample2x,
    /// Reshape each sample to `[h, w, c]`.
    Reshape([usize; 3]),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sequential {
    pub ops: Vec<Op>,
}

/// Inputs seen by each op during a forward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    inputs: Vec<Tensor4>,
}

impl Sequential {
    pub fn new(ops: Vec<Op>) -> Self {
        Self { ops }
    }

    /// MLP with ReLU between layers and a linear output.
    pub fn mlp(widths: &[usize]) -> Self {
        let mut ops = Vec::new();
        for (i, pair) in widths.windows(2).enumerate() {
            ops.push(Op::Layer(Layer::fully_connected(pair[0], pair[1])));
            if i + 2 < widths.len() {
                ops.push(Op::Relu);
            }
        }
        Self { ops }
    }

    pub fn layers(&self) -> impl Iterator<Item = &Layer> {
        self.ops.iter().filter_map(|op| match op {
            Op::Layer(l) => Some(l),
            _ => None,
        })
    }

    pub fn layers_mut(&mut self) -> impl Iterator<Item = &mut Layer> {
        self.ops.iter_mut().filter_map(|op| match op {
            Op::Layer(l) => Some(l),
            _ => None,
        })
    }

    pub fn init(&mut self, rng: &mut impl Rng) {
        let n = self.ops.len();
        for i in 0..n {
            let relu_follows = matches!(self.ops.get(i + 1), Some(Op::Relu));
            if let Op::Layer(l) = &mut self.ops[i] {
                l.init(relu_follows, rng);
            }
        }
    }

    /// Parameter tensors in order: weight then bias of each layer.
    pub fn params(&self) -> Vec<&Vec<f64>> {
        self.layers().flat_map(|l| [&l.weight, &l.bias]).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Vec<f64>> {
        self.layers_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    /// `(suffix, shape)` of each parameter tensor, aligned with [`Self::params`].
    pub fn param_specs(&self) -> Vec<(String, Vec<usize>)> {
        self.layers()
            .enumerate()
            .flat_map(|(i, l)| {
                [
                    (format!("{i}.weight"), l.weight_shape()),
                    (format!("{i}.bias"), vec![l.out_ch]),
                ]
            })
            .collect()
    }

    pub fn zero_grads(&self) -> Vec<Vec<f64>> {
        self.params().iter().map(|p| vec![0.0; p.len()]).collect()
    }

    pub fn forward(&self, x: &Tensor4) -> Result<Tensor4> {
        let mut cur = x.clone();
        for op in &self.ops {
            cur = apply(op, &cur)?;
        }
        Ok(cur)
    }

    pub fn forward_tape(&self, x: Tensor4) -> Result<(Tensor4, Tape)> {
        let mut inputs = Vec::with_capacity(self.ops.len());
        let mut cur = x;
        for op in &self.ops {
            let next = apply(op, &cur)?;
            inputs.push(cur);
            cur = next;
        }
        Ok((cur, Tape { inputs }))
    }

    /// Accumulates parameter gradients into `grads` (aligned with
    /// [`Self::params`]) and returns the gradient w.r.t. the input when
    /// `need_dx` is set.
    pub fn backward(
        &self,
        tape: &Tape,
        dy: Tensor4,
        grads: &mut [Vec<f64>],
        need_dx: bool,
    ) -> Result<Option<Tensor4>> {
        let mut slot = 2 * self.layers().count();
        let first_layer = self.ops.iter().position(|op| matches!(op, Op::Layer(_)));
        let mut cur = dy;
        for (i, op) in self.ops.iter().enumerate().rev() {
            let x = &tape.inputs[i];
            // Nothing upstream of the first layer needs a gradient unless
            // the caller asked for dx.
            let want_dx = need_dx || first_layer.is_some_and(|f| i > f);
            cur = match op {
                Op::Layer(l) => {
                    slot -= 2;
                    let (dx, g) = l.backward(x, &cur, want_dx)?;
                    accumulate(&mut grads[slot], &g.weight);
                    accumulate(&mut grads[slot + 1], &g.bias);
                    match dx {
                        Some(dx) => dx,
                        None => return Ok(None),
                    }
                }
                Op::Relu => relu_backward(x, &cur),
                Op::Upsample2x => upsample2x_backward(&cur),
                Op::Reshape(_) => {
                    let [_, h, w, c] = x.shape();
                    cur.reshape(h, w, c)?
                }
            };
        }
        Ok(need_dx.then_some(cur))
    }
}

fn apply(op: &Op, x: &Tensor4) -> Result<Tensor4> {
    match op {
        Op::Layer(l) => l.forward(x),
        Op::Relu => Ok(relu(x)),
        Op::Upsample2x => Ok(upsample2x(x)),
        Op::Reshape([h, w, c]) => x.clone().reshape(*h, *w, *c),
    }
}

fn accumulate(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}
