//! Soft actor-critic agent: squashed Gaussian policy, twin Q critics with
//! polyak-averaged targets, uniform replay.

use std::collections::VecDeque;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{squash, SacConfig};
use crate::error::{Error, Result};
use crate::nn::{Adam, AdamConfig, Sequential, Tensor4};
use crate::rng::{rng_for, stream};

const LOG_STD_MIN: f64 = -20.0;
const LOG_STD_MAX: f64 = 2.0;
/// Keeps the squash correction finite at the clamp.
const SQUASH_EPS: f64 = 1e-6;
const HALF_LOG_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: f64,
    /// Squashed action in (-1, 1), one value per factor.
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_obs: f64,
    pub done: bool,
}

#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: VecDeque<Transition>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity: capacity.max(1),
            items: VecDeque::with_capacity(capacity.max(1)),
        }
    }

    /// Evicts the oldest transition when full.
    pub fn push(&mut self, t: Transition) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn get(&self, i: usize) -> Option<&Transition> {
        self.items.get(i)
    }
}

/// One draw from the squashed Gaussian policy.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicySample {
    pub mean: Vec<f64>,
    /// Clamped log standard deviation.
    pub log_std: Vec<f64>,
    pub eps: Vec<f64>,
    pub y: Vec<f64>,
    pub log_prob: f64,
}

impl PolicySample {
    /// `out` is one policy output row `[mean | raw log_std]`.
    pub fn from_output(out: &[f64], eps: &[f64]) -> Self {
        let a = eps.len();
        let mean = out[..a].to_vec();
        let log_std: Vec<f64> = out[a..].iter().map(|v| v.clamp(LOG_STD_MIN, LOG_STD_MAX)).collect();
        let mut y = Vec::with_capacity(a);
        let mut log_prob = 0.0;
        for i in 0..a {
            let yi = squash(mean[i] + log_std[i].exp() * eps[i]);
            log_prob += -0.5 * eps[i] * eps[i] - log_std[i] - HALF_LOG_2PI - (1.0 - yi * yi + SQUASH_EPS).ln();
            y.push(yi);
        }
        Self {
            mean,
            log_std,
            eps: eps.to_vec(),
            y,
            log_prob,
        }
    }
}

fn q_input(obs: &[f64], actions: &[Vec<f64>]) -> Result<Tensor4> {
    let width = 1 + actions[0].len();
    let mut data = Vec::with_capacity(obs.len() * width);
    for (o, a) in obs.iter().zip(actions) {
        data.push(*o);
        data.extend_from_slice(a);
    }
    Tensor4::matrix(obs.len(), width, data)
}

fn min_q(nets: &[Sequential; 2], obs: &[f64], actions: &[Vec<f64>]) -> Result<Vec<f64>> {
    let x = q_input(obs, actions)?;
    let q0 = nets[0].forward(&x)?;
    let q1 = nets[1].forward(&x)?;
    Ok(q0.data().iter().zip(q1.data()).map(|(a, b)| a.min(*b)).collect())
}

/// Bellman target `r + gamma (1 - d) (min_j Q'_j(s', a') - alpha log pi(a'|s'))`
/// for a given reparameterization draw `eps`.
#[allow(clippy::too_many_arguments)]
pub fn q_target_with_noise(
    r: f64,
    next_obs: f64,
    done: bool,
    cfg: &SacConfig,
    targets: &[Sequential; 2],
    policy: &Sequential,
    eps: &[f64],
) -> Result<f64> {
    let out = policy.forward(&Tensor4::matrix(1, 1, vec![next_obs])?)?;
    let s = PolicySample::from_output(out.data(), eps);
    let q = min_q(targets, &[next_obs], &[s.y])?[0];
    let d = if done { 1.0 } else { 0.0 };
    Ok(r + cfg.gamma * (1.0 - d) * (q - cfg.alpha * s.log_prob))
}

pub fn q_target(
    r: f64,
    next_obs: f64,
    done: bool,
    cfg: &SacConfig,
    targets: &[Sequential; 2],
    policy: &Sequential,
    rng: &mut impl Rng,
) -> Result<f64> {
    let a = policy.layers().last().map_or(0, |l| l.out_ch / 2);
    let eps: Vec<f64> = (0..a).map(|_| rng.sample(StandardNormal)).collect();
    q_target_with_noise(r, next_obs, done, cfg, targets, policy, &eps)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SacLosses {
    pub q: [f64; 2],
    pub policy: f64,
}

#[derive(Debug, Clone)]
pub struct Agent {
    pub cfg: SacConfig,
    pub action_dim: usize,
    pub policy: Sequential,
    pub q: [Sequential; 2],
    pub q_targ: [Sequential; 2],
    adam_pi: Adam,
    adam_q: [Adam; 2],
    act_rng: ChaCha8Rng,
    batch_rng: ChaCha8Rng,
    update_rng: ChaCha8Rng,
    updates: u64,
}

impl Agent {
    pub fn new(action_dim: usize, cfg: &SacConfig) -> Result<Self> {
        cfg.validate()?;
        if action_dim == 0 {
            return Err(Error::InvalidArgument("action dimension must be positive".into()));
        }
        let h = cfg.hidden;
        let mut rng = rng_for(cfg.seed, &[stream::SAC_INIT]);
        let mut policy = Sequential::mlp(&[1, h, h, 2 * action_dim]);
        policy.init(&mut rng);
        let q: [Sequential; 2] = std::array::from_fn(|_| {
            let mut net = Sequential::mlp(&[1 + action_dim, h, h, 1]);
            net.init(&mut rng);
            net
        });
        let opt = AdamConfig::constant(cfg.lr);
        Ok(Self {
            cfg: cfg.clone(),
            action_dim,
            adam_pi: Adam::for_params(opt, &policy.params()),
            adam_q: std::array::from_fn(|j| Adam::for_params(opt, &q[j].params())),
            q_targ: q.clone(),
            q,
            policy,
            act_rng: rng_for(cfg.seed, &[stream::SAC_ACT]),
            batch_rng: rng_for(cfg.seed, &[stream::SAC_BATCH]),
            update_rng: rng_for(cfg.seed, &[stream::SAC_UPDATE]),
            updates: 0,
        })
    }

    fn normals(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.sample(StandardNormal)).collect()
    }

    pub fn sample(&mut self, obs: f64) -> Result<PolicySample> {
        let out = self.policy.forward(&Tensor4::matrix(1, 1, vec![obs])?)?;
        let eps = Self::normals(&mut self.act_rng, self.action_dim);
        Ok(PolicySample::from_output(out.data(), &eps))
    }

    /// Squashed exploratory action for `obs`.
    pub fn act(&mut self, obs: f64) -> Result<Vec<f64>> {
        Ok(self.sample(obs)?.y)
    }

    /// Mean over the batch of `alpha log pi(a|s) - min_j Q_j(s, a)` with
    /// `a` reparameterized through `eps` (`obs.len() * action_dim` values),
    /// and its gradient with respect to the policy parameters.
    pub fn policy_loss_and_grads(&self, obs: &[f64], eps: &[f64]) -> Result<(f64, Vec<Vec<f64>>)> {
        let n = obs.len();
        let a = self.action_dim;
        if n == 0 || eps.len() != n * a {
            return Err(Error::Shape("policy batch and noise sizes disagree".into()));
        }
        let (out, tape) = self.policy.forward_tape(Tensor4::matrix(n, 1, obs.to_vec())?)?;
        let samples: Vec<PolicySample> = (0..n)
            .map(|i| PolicySample::from_output(out.sample(i), &eps[i * a..(i + 1) * a]))
            .collect();
        let actions: Vec<Vec<f64>> = samples.iter().map(|s| s.y.clone()).collect();
        let x = q_input(obs, &actions)?;

        // dQ/d(action) of whichever critic is smaller per sample
        let mut qs = Vec::with_capacity(2);
        let mut dqs = Vec::with_capacity(2);
        for net in &self.q {
            let (q, qt) = net.forward_tape(x.clone())?;
            let mut scratch = net.zero_grads();
            let dx = net
                .backward(&qt, Tensor4::matrix(n, 1, vec![1.0; n])?, &mut scratch, true)?
                .expect("dx requested");
            qs.push(q.into_data());
            dqs.push(dx.into_data());
        }

        let inv = 1.0 / n as f64;
        let alpha = self.cfg.alpha;
        let mut loss = 0.0;
        let mut dout = vec![0.0; n * 2 * a];
        for (i, s) in samples.iter().enumerate() {
            let j = if qs[0][i] <= qs[1][i] { 0 } else { 1 };
            loss += (alpha * s.log_prob - qs[j][i]) * inv;
            let dq = &dqs[j][i * (1 + a) + 1..(i + 1) * (1 + a)];
            let raw_ls = &out.sample(i)[a..];
            for k in 0..a {
                let y = s.y[k];
                let u = s.mean[k] + s.log_std[k].exp() * s.eps[k];
                // the clamp in `squash` makes y locally constant
                let dy_du = if y.abs() < u.tanh().abs() { 0.0 } else { 1.0 - y * y };
                let dlogp_du = 2.0 * y * dy_du / (1.0 - y * y + SQUASH_EPS);
                let du_dls = s.log_std[k].exp() * s.eps[k];
                let dl_du = alpha * dlogp_du - dq[k] * dy_du;
                dout[i * 2 * a + k] = dl_du * inv;
                let ls_live = raw_ls[k] > LOG_STD_MIN && raw_ls[k] < LOG_STD_MAX;
                dout[i * 2 * a + a + k] = if ls_live { (dl_du * du_dls - alpha) * inv } else { 0.0 };
            }
        }
        let mut grads = self.policy.zero_grads();
        self.policy
            .backward(&tape, Tensor4::matrix(n, 2 * a, dout)?, &mut grads, false)?;
        Ok((loss, grads))
    }

    /// Mean squared Bellman error of critic `j` against `targets`, with gradient.
    pub fn q_loss_and_grads(
        &self,
        j: usize,
        obs: &[f64],
        actions: &[Vec<f64>],
        targets: &[f64],
    ) -> Result<(f64, Vec<Vec<f64>>)> {
        let n = obs.len();
        let (q, tape) = self.q[j].forward_tape(q_input(obs, actions)?)?;
        let inv = 1.0 / n as f64;
        let mut loss = 0.0;
        let dq: Vec<f64> = q
            .data()
            .iter()
            .zip(targets)
            .map(|(q, t)| {
                loss += (q - t) * (q - t) * inv;
                2.0 * (q - t) * inv
            })
            .collect();
        let mut grads = self.q[j].zero_grads();
        self.q[j].backward(&tape, Tensor4::matrix(n, 1, dq)?, &mut grads, false)?;
        Ok((loss, grads))
    }

    /// One gradient step on both critics and the policy, then polyak
    /// averaging of the target critics.
    pub fn update(&mut self, buffer: &ReplayBuffer) -> Result<SacLosses> {
        let n = self.cfg.batch;
        if buffer.len() < n {
            return Err(Error::InvalidArgument(format!(
                "replay buffer holds {} transitions, batch needs {n}",
                buffer.len()
            )));
        }
        let batch: Vec<&Transition> = (0..n)
            .map(|_| buffer.get(self.batch_rng.random_range(0..buffer.len())).expect("index in range"))
            .collect();
        let obs: Vec<f64> = batch.iter().map(|t| t.obs).collect();
        let actions: Vec<Vec<f64>> = batch.iter().map(|t| t.action.clone()).collect();

        let mut targets = Vec::with_capacity(n);
        for t in &batch {
            let eps = Self::normals(&mut self.update_rng, self.action_dim);
            targets.push(q_target_with_noise(
                t.reward,
                t.next_obs,
                t.done,
                &self.cfg,
                &self.q_targ,
                &self.policy,
                &eps,
            )?);
        }

        let mut q_losses = [0.0; 2];
        for j in 0..2 {
            let (loss, grads) = self.q_loss_and_grads(j, &obs, &actions, &targets)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite {
                    step: self.updates,
                    term: format!("Q{}", j + 1),
                });
            }
            self.adam_q[j].step(&mut self.q[j].params_mut(), &grads)?;
            q_losses[j] = loss;
        }

        let eps = Self::normals(&mut self.update_rng, n * self.action_dim);
        let (pi_loss, grads) = self.policy_loss_and_grads(&obs, &eps)?;
        if !pi_loss.is_finite() {
            return Err(Error::NonFinite {
                step: self.updates,
                term: "policy".into(),
            });
        }
        self.adam_pi.step(&mut self.policy.params_mut(), &grads)?;

        let rho = self.cfg.polyak;
        for (targ, net) in self.q_targ.iter_mut().zip(&self.q) {
            for (pt, p) in targ.params_mut().into_iter().zip(net.params()) {
                pt.iter_mut().zip(p).for_each(|(a, b)| *a = rho * *a + (1.0 - rho) * b);
            }
        }
        self.updates += 1;
        Ok(SacLosses {
            q: q_losses,
            policy: pi_loss,
        })
    }
}
