//! Fused forward/backward pass for one (sub-)batch of training pairs.
//!
//! Both branches go through every network in one stacked pass: encoder `s`
//! sees `[clean_s; noisy_s]`, the decoder sees `[z_clean; T(z_noisy)]`.
//! The transformation losses use the posterior means as constants.

use super::{concat3, loss, reparameterize_with, split_halves, channel_plane, Vae};
use crate::error::{Error, Result};
use crate::nn::{Tensor4, Tape};

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossParts {
    pub mse: f64,
    pub kl: f64,
    pub tran: [f64; 3],
}

impl LossParts {
    /// `L_vae` without the regularizer.
    pub fn vae(&self) -> f64 {
        self.mse + self.kl
    }

    pub fn tran_total(&self) -> f64 {
        self.tran.iter().sum()
    }

    pub fn add(&mut self, other: &LossParts) {
        self.mse += other.mse;
        self.kl += other.kl;
        for s in 0..3 {
            self.tran[s] += other.tran[s];
        }
    }

    pub fn is_finite(&self) -> bool {
        self.mse.is_finite() && self.kl.is_finite() && self.tran.iter().all(|t| t.is_finite())
    }

    /// Name of the first non-finite term.
    pub fn non_finite_term(&self) -> Option<&'static str> {
        if !self.mse.is_finite() {
            Some("L_mse")
        } else if !self.kl.is_finite() {
            Some("L_kl")
        } else {
            ["L_tran_y", "L_tran_u", "L_tran_v"]
                .into_iter()
                .zip(self.tran)
                .find(|(_, t)| !t.is_finite())
                .map(|(n, _)| n)
        }
    }
}

/// Standard-normal draws for the reparameterization of both branches;
/// each vector is `n * latent_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNoise {
    pub clean: [Vec<f64>; 3],
    pub noisy: [Vec<f64>; 3],
}

impl BatchNoise {
    pub fn zeros(n: usize, dz: usize) -> Self {
        Self {
            clean: std::array::from_fn(|_| vec![0.0; n * dz]),
            noisy: std::array::from_fn(|_| vec![0.0; n * dz]),
        }
    }

    pub fn sample(n: usize, dz: usize, rng: &mut impl rand::Rng) -> Self {
        let mut draw = || -> Vec<f64> { (0..n * dz).map(|_| rng.sample(rand_distr::StandardNormal)).collect() };
        let clean = [draw(), draw(), draw()];
        let noisy = [draw(), draw(), draw()];
        Self { clean, noisy }
    }
}

fn stack(a: &Tensor4, b: &Tensor4) -> Result<Tensor4> {
    let [n, h, w, c] = a.shape();
    let mut data = Vec::with_capacity(2 * a.data().len());
    data.extend_from_slice(a.data());
    data.extend_from_slice(b.data());
    Tensor4::from_vec([n + b.batch(), h, w, c], data)
}

struct HeadPass {
    tape: Tape,
    mu: Vec<f64>,
    logvar: Vec<f64>,
}

impl Vae {
    fn check_batch(&self, noisy: &Tensor4, clean: &Tensor4, noise: &BatchNoise) -> Result<()> {
        if noisy.shape() != clean.shape() {
            return Err(Error::Shape("noisy and clean batches differ".into()));
        }
        let want = noisy.batch() * self.config.latent_dim;
        if noise.clean.iter().chain(&noise.noisy).any(|e| e.len() != want) {
            return Err(Error::Shape("reparameterization noise has the wrong size".into()));
        }
        Ok(())
    }

    /// Loss terms of a batch, forward only. Terms are divided by `norm`.
    pub fn loss_terms(&self, noisy: &Tensor4, clean: &Tensor4, noise: &BatchNoise, norm: usize) -> Result<LossParts> {
        self.check_batch(noisy, clean, noise)?;
        let n = noisy.batch();
        let dz = self.config.latent_dim;
        let ec = self.encode_batch(clean)?;
        let eb = self.encode_batch(noisy)?;
        let mut parts = LossParts::default();
        let mut zc = Vec::new();
        let mut tb = Vec::new();
        for s in 0..3 {
            parts.kl += loss::loss_kl(&ec.mu[s], &ec.logvar[s], norm)?;
            parts.kl += loss::loss_kl(&eb.mu[s], &eb.logvar[s], norm)?;
            zc.push(reparameterize_with(&ec.mu[s], &ec.logvar[s], &noise.clean[s]));
            let zb = reparameterize_with(&eb.mu[s], &eb.logvar[s], &noise.noisy[s]);
            tb.push(self.transform(s, &zb)?);
            parts.tran[s] = loss::loss_tran(&self.transform(s, &eb.mu[s])?, &ec.mu[s], norm)?;
        }
        let rc = self.decode_batch(&concat3([&zc[0], &zc[1], &zc[2]], n, dz))?;
        let rb = self.decode_batch(&concat3([&tb[0], &tb[1], &tb[2]], n, dz))?;
        parts.mse = loss::loss_mse(rc.data(), rb.data(), clean.data(), norm)?;
        Ok(parts)
    }

    /// Loss terms and their gradient with respect to every parameter, in
    /// [`Vae::params`] order. The transformation tensors receive the
    /// gradient of `L_vae + sum_s L_tran_s`; encoder and decoder tensors
    /// only that of `L_vae`. The regularizer is not included.
    pub fn loss_and_grads(
        &self,
        noisy: &Tensor4,
        clean: &Tensor4,
        noise: &BatchNoise,
        norm: usize,
    ) -> Result<(LossParts, Vec<Vec<f64>>)> {
        self.check_batch(noisy, clean, noise)?;
        let n = noisy.batch();
        let dz = self.config.latent_dim;
        let inv = 1.0 / norm as f64;
        let off = self.slot_offsets();
        let mut grads = self.zero_grads();
        let mut parts = LossParts::default();

        let mut heads = Vec::with_capacity(3);
        for s in 0..3 {
            let x = stack(&channel_plane(clean, s), &channel_plane(noisy, s))?;
            let (out, tape) = self.encoders[s].forward_tape(x)?;
            let (mu, logvar) = split_halves(out.data(), 2 * n, dz);
            parts.kl += loss::loss_kl(&mu, &logvar, norm)?;
            heads.push(HeadPass { tape, mu, logvar });
        }

        // z for both branches, then T_s on the noisy half
        let mut z_clean = Vec::with_capacity(3);
        let mut t_noisy = Vec::with_capacity(3);
        let mut t_tapes = Vec::with_capacity(3);
        let mut z_eps = Vec::with_capacity(3);
        for (s, h) in heads.iter().enumerate() {
            let mut eps = noise.clean[s].clone();
            eps.extend_from_slice(&noise.noisy[s]);
            let z = reparameterize_with(&h.mu, &h.logvar, &eps);
            z_eps.push(eps);
            z_clean.push(z[..n * dz].to_vec());
            let (t, tape) = self.transforms[s].forward_tape(Tensor4::matrix(n, dz, z[n * dz..].to_vec())?)?;
            t_noisy.push(t.into_data());
            t_tapes.push(tape);

            let (mu_c, mu_b) = h.mu.split_at(n * dz);
            parts.tran[s] = self.tran_loss_and_grads(s, mu_b, mu_c, norm, &mut grads)?;
        }

        let mut lat = concat3([&z_clean[0], &z_clean[1], &z_clean[2]], n, dz);
        lat.extend(concat3([&t_noisy[0], &t_noisy[1], &t_noisy[2]], n, dz));
        let (rec, dec_tape) = self.decoder.forward_tape(Tensor4::matrix(2 * n, 3 * dz, lat)?)?;
        let (rc, rb) = rec.data().split_at(clean.data().len());
        parts.mse = loss::loss_mse(rc, rb, clean.data(), norm)?;
        let drec: Vec<f64> = rec
            .data()
            .iter()
            .zip(clean.data().iter().chain(clean.data()))
            .map(|(r, c)| 2.0 * (r - c) * inv)
            .collect();
        let dlat = self
            .decoder
            .backward(&dec_tape, Tensor4::from_vec(rec.shape(), drec)?, &mut grads[off[3]..off[4]], true)?
            .expect("dx requested");
        let dlat = dlat.data();
        let w = 3 * dz;

        for (s, h) in heads.iter().enumerate() {
            let slice = |i: usize| &dlat[i * w + s * dz..i * w + (s + 1) * dz];
            let dz_clean: Vec<f64> = (0..n).flat_map(|i| slice(i).to_vec()).collect();
            let dt: Vec<f64> = (n..2 * n).flat_map(|i| slice(i).to_vec()).collect();
            let dz_noisy = self.transforms[s]
                .backward(&t_tapes[s], Tensor4::matrix(n, dz, dt)?, &mut grads[off[4 + s]..off[5 + s]], true)?
                .expect("dx requested");
            let dz_all: Vec<f64> = dz_clean.into_iter().chain(dz_noisy.into_data()).collect();

            // back through the reparameterization plus the KL gradient
            let mut dout = vec![0.0; 2 * n * 2 * dz];
            for i in 0..2 * n {
                for j in 0..dz {
                    let k = i * dz + j;
                    let (mu, lv, e, g) = (h.mu[k], h.logvar[k], z_eps[s][k], dz_all[k]);
                    let sd = (0.5 * lv).exp();
                    dout[i * 2 * dz + j] = g + mu * inv;
                    dout[i * 2 * dz + dz + j] = g * e * 0.5 * sd - 0.5 * (1.0 - lv.exp()) * inv;
                }
            }
            let out_shape = [2 * n, 1, 1, 2 * dz];
            self.encoders[s].backward(&h.tape, Tensor4::from_vec(out_shape, dout)?, &mut grads[off[s]..off[s + 1]], false)?;
        }
        Ok((parts, grads))
    }

    /// `L_tran_s = |T_s(mu_noisy) - mu_clean|^2 / norm`, with the latents
    /// treated as constants. Its gradient is added to the `T_s` slots of
    /// `grads` (laid out as [`Vae::params`]) and nowhere else.
    pub fn tran_loss_and_grads(
        &self,
        s: usize,
        mu_noisy: &[f64],
        mu_clean: &[f64],
        norm: usize,
        grads: &mut [Vec<f64>],
    ) -> Result<f64> {
        let dz = self.config.latent_dim;
        if mu_noisy.len() != mu_clean.len() || mu_noisy.is_empty() || !mu_noisy.len().is_multiple_of(dz) {
            return Err(Error::Shape("subspace latents do not match".into()));
        }
        let n = mu_noisy.len() / dz;
        let inv = 1.0 / norm as f64;
        let off = self.slot_offsets();
        let (tm, tape) = self.transforms[s].forward_tape(Tensor4::matrix(n, dz, mu_noisy.to_vec())?)?;
        let value = loss::loss_tran(tm.data(), mu_clean, norm)?;
        let d: Vec<f64> = tm.data().iter().zip(mu_clean).map(|(t, c)| 2.0 * (t - c) * inv).collect();
        self.transforms[s].backward(&tape, Tensor4::matrix(n, dz, d)?, &mut grads[off[4 + s]..off[5 + s]], false)?;
        Ok(value)
    }

    /// `lambda * (|theta|^2 + |psi|^2)` over encoder and decoder tensors.
    pub fn reg_loss(&self, lambda: f64) -> f64 {
        let n = self.enc_dec_tensor_count();
        loss::loss_reg(self.params().into_iter().take(n).map(|p| p.as_slice()), lambda)
    }

    pub fn add_reg_grads(&self, grads: &mut [Vec<f64>], lambda: f64) {
        if lambda == 0.0 {
            return;
        }
        let n = self.enc_dec_tensor_count();
        for (g, p) in grads.iter_mut().zip(self.params()).take(n) {
            g.iter_mut().zip(p.iter()).for_each(|(g, p)| *g += 2.0 * lambda * p);
        }
    }
}
