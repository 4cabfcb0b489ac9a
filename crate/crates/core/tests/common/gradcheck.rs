//! Central finite-difference checks of every hand-written backward pass.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use rse_core::model::{loss::loss_tran, BatchNoise, ModelConfig, Vae, DEFAULT_LATENT_DIM};
use rse_core::nn::{Layer, Op, Sequential, Tensor4};
use rse_core::rl::{Agent, SacConfig};

const H: f64 = 1e-6;
const COORDS_PER_TENSOR: usize = 6;

/// `|a - n| / max(|a|, |n|)` over the sampled coordinates of one tensor.
fn rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff = analytic.iter().zip(numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
    let a = analytic.iter().map(|v| v * v).sum::<f64>().sqrt();
    let n = numeric.iter().map(|v| v * v).sum::<f64>().sqrt();
    let scale = a.max(n);
    if scale < 1e-10 {
        diff
    } else {
        diff / scale
    }
}

/// Worst per-tensor relative error between `analytic` and central
/// differences of `eval` around `params`.
fn compare(
    params: &[Vec<f64>],
    analytic: &[Vec<f64>],
    rng: &mut ChaCha8Rng,
    eval: impl Fn(&[Vec<f64>]) -> f64,
) -> f64 {
    let mut work = params.to_vec();
    let mut worst: f64 = 0.0;
    for t in 0..params.len() {
        let len = params[t].len();
        let picks = sample(rng, len, COORDS_PER_TENSOR.min(len)).into_vec();
        let mut a = Vec::new();
        let mut n = Vec::new();
        for i in picks {
            let orig = work[t][i];
            work[t][i] = orig + H;
            let up = eval(&work);
            work[t][i] = orig - H;
            let down = eval(&work);
            work[t][i] = orig;
            a.push(analytic[t][i]);
            n.push((up - down) / (2.0 * H));
        }
        worst = worst.max(rel_err(&a, &n));
    }
    worst
}

fn normal_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn owned(params: Vec<&Vec<f64>>) -> Vec<Vec<f64>> {
    params.into_iter().cloned().collect()
}

fn load_seq(seq: &Sequential, params: &[Vec<f64>]) -> Sequential {
    let mut s = seq.clone();
    for (dst, src) in s.params_mut().into_iter().zip(params) {
        dst.copy_from_slice(src);
    }
    s
}

fn load_vae(vae: &Vae, params: &[Vec<f64>]) -> Vae {
    let mut v = vae.clone();
    for (dst, src) in v.params_mut().into_iter().zip(params) {
        dst.copy_from_slice(src);
    }
    v
}

/// Checks `<seq(x), r>` with respect to the parameters and to `x`.
fn check_sequence(mut seq: Sequential, shape: [usize; 4], rng: &mut ChaCha8Rng) -> f64 {
    for l in seq.layers_mut() {
        l.init(false, rng);
        l.bias.iter_mut().for_each(|b| *b = 0.1 * rng.sample::<f64, _>(StandardNormal));
    }
    let x = Tensor4::from_vec(shape, normal_vec(rng, shape.iter().product())).unwrap();
    let (y, tape) = seq.forward_tape(x.clone()).unwrap();
    let r = Tensor4::from_vec(y.shape(), normal_vec(rng, y.data().len())).unwrap();
    let mut grads = seq.zero_grads();
    let dx = seq.backward(&tape, r.clone(), &mut grads, true).unwrap().unwrap();

    let mut worst = 0.0_f64;
    if !grads.is_empty() {
        let params = owned(seq.params());
        worst = compare(&params, &grads, rng, |p| load_seq(&seq, p).forward(&x).unwrap().dot(&r));
    }
    let dx_err = compare(&[x.data().to_vec()], &[dx.into_data()], rng, |p| {
        let xi = Tensor4::from_vec(shape, p[0].clone()).unwrap();
        seq.forward(&xi).unwrap().dot(&r)
    });
    worst.max(dx_err)
}

/// One entry per layer kind or parameter-free op.
pub fn layer_errors(seed: u64) -> Vec<(&'static str, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let l = |layer: Layer| Op::Layer(layer);
    let cases: Vec<(&'static str, Vec<Op>, [usize; 4])> = vec![
        ("conv stride 1", vec![l(Layer::conv(3, 4, 3, 1, 1))], [2, 5, 5, 3]),
        ("conv stride 2", vec![l(Layer::conv(3, 4, 3, 2, 1))], [2, 7, 7, 3]),
        ("transposed conv stride 1", vec![l(Layer::transposed_conv(3, 2, 3, 1, 1))], [2, 5, 5, 3]),
        ("transposed conv stride 2", vec![l(Layer::transposed_conv(3, 2, 3, 2, 1))], [2, 4, 4, 3]),
        ("fully connected", vec![l(Layer::fully_connected(12, 5))], [3, 1, 1, 12]),
        ("relu", vec![l(Layer::fully_connected(6, 8)), Op::Relu], [3, 1, 1, 6]),
        ("upsample", vec![l(Layer::conv(2, 3, 3, 1, 1)), Op::Upsample2x], [2, 3, 3, 2]),
        ("reshape", vec![Op::Reshape([1, 1, 18]), l(Layer::fully_connected(18, 4))], [2, 3, 3, 2]),
    ];
    cases
        .into_iter()
        .map(|(name, ops, shape)| (name, check_sequence(Sequential::new(ops), shape, &mut rng)))
        .collect()
}

/// Moves biases off zero so no pre-activation sits exactly on a kink.
fn jitter_biases(vae: &mut Vae, rng: &mut ChaCha8Rng) {
    let seqs = vae.encoders.iter_mut().chain(vae.transforms.iter_mut()).chain([&mut vae.decoder]);
    for seq in seqs {
        for l in seq.layers_mut() {
            l.bias.iter_mut().for_each(|b| *b = 0.05 * rng.sample::<f64, _>(StandardNormal));
        }
    }
}

fn batch(n: usize, patch: usize, rng: &mut ChaCha8Rng) -> (Tensor4, Tensor4) {
    let len = n * patch * patch * 3;
    let clean: Vec<f64> = (0..len).map(|_| rng.random_range(0.0..1.0)).collect();
    let noisy: Vec<f64> = clean.iter().map(|c| c + 0.15 * rng.sample::<f64, _>(StandardNormal)).collect();
    let shape = [n, patch, patch, 3];
    (Tensor4::from_vec(shape, noisy).unwrap(), Tensor4::from_vec(shape, clean).unwrap())
}

/// Composite training objective `L_vae + L_reg` (plus `L_tran` for the
/// transformation tensors) through the whole model.
fn composite(config: ModelConfig, n: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut vae = Vae::new(config, seed).unwrap();
    jitter_biases(&mut vae, &mut rng);
    let (noisy, clean) = batch(n, config.patch, &mut rng);
    let noise = BatchNoise::sample(n, config.latent_dim, &mut rng);
    let lambda = 1e-3;
    let (_, mut grads) = vae.loss_and_grads(&noisy, &clean, &noise, n).unwrap();
    vae.add_reg_grads(&mut grads, lambda);
    let split = vae.enc_dec_tensor_count();
    let params = owned(vae.params());
    let objective = |p: &[Vec<f64>], with_tran: bool| {
        let v = load_vae(&vae, p);
        let parts = v.loss_terms(&noisy, &clean, &noise, n).unwrap();
        parts.vae() + v.reg_loss(lambda) + if with_tran { parts.tran_total() } else { 0.0 }
    };
    let enc_dec = compare(&params[..split], &grads[..split], &mut rng, |p| {
        let full: Vec<Vec<f64>> = p.iter().chain(&params[split..]).cloned().collect();
        objective(&full, false)
    });
    let tran = compare(&params[split..], &grads[split..], &mut rng, |p| {
        let full: Vec<Vec<f64>> = params[..split].iter().chain(p).cloned().collect();
        objective(&full, true)
    });
    enc_dec.max(tran)
}

/// Composite loss on a small model.
pub fn composite_error(seed: u64) -> f64 {
    composite(ModelConfig { patch: 8, overlap: 2, latent_dim: 4 }, 3, seed)
}

/// Encoder, transformation and decoder chained at the preset geometry.
pub fn full_chain_error(seed: u64) -> f64 {
    composite(ModelConfig { patch: 16, overlap: 4, latent_dim: DEFAULT_LATENT_DIM }, 2, seed)
}

/// `|T_s(mu_noisy) - mu_clean|^2` with respect to the `T_s` tensors.
pub fn tran_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let config = ModelConfig { patch: 8, overlap: 2, latent_dim: 6 };
    let vae = Vae::new(config, seed).unwrap();
    let n = 5;
    let dz = config.latent_dim;
    let split = vae.enc_dec_tensor_count();
    let per_t = (vae.params().len() - split) / 3;
    let mut worst = 0.0_f64;
    for s in 0..3 {
        let mu_noisy = normal_vec(&mut rng, n * dz);
        let mu_clean = normal_vec(&mut rng, n * dz);
        let mut grads = vae.zero_grads();
        vae.tran_loss_and_grads(s, &mu_noisy, &mu_clean, n, &mut grads).unwrap();
        let range = split + s * per_t..split + (s + 1) * per_t;
        let params = owned(vae.transforms[s].params());
        let err = compare(&params, &grads[range], &mut rng, |p| {
            let t = load_seq(&vae.transforms[s], p);
            let out = t.forward(&Tensor4::matrix(n, dz, mu_noisy.clone()).unwrap()).unwrap();
            loss_tran(out.data(), &mu_clean, n).unwrap()
        });
        worst = worst.max(err);
    }
    worst
}

/// Soft actor-critic policy objective with respect to the policy tensors.
pub fn policy_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = SacConfig { seed, ..SacConfig::default() };
    let agent = Agent::new(12, &cfg).unwrap();
    let n = 6;
    let obs: Vec<f64> = (0..n).map(|_| rng.random_range(-1.5..0.5)).collect();
    let eps = normal_vec(&mut rng, n * agent.action_dim);
    let (_, grads) = agent.policy_loss_and_grads(&obs, &eps).unwrap();
    let params = owned(agent.policy.params());
    compare(&params, &grads, &mut rng, |p| {
        let mut a = agent.clone();
        a.policy = load_seq(&agent.policy, p);
        a.policy_loss_and_grads(&obs, &eps).unwrap().0
    })
}
