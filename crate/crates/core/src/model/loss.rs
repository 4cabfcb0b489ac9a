//! Loss terms. Each takes the batch size it averages over, so partial sums
//! over sub-batches add up to the full-batch value.

use crate::error::{Error, Result};

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `(|rec_clean - clean|^2 + |rec_noisy - clean|^2) / batch`, where
/// `rec_noisy` decodes the transformed noisy latents.
pub fn loss_mse(rec_clean: &[f64], rec_noisy: &[f64], clean: &[f64], batch: usize) -> Result<f64> {
    if rec_clean.len() != clean.len() || rec_noisy.len() != clean.len() {
        return Err(Error::Shape("reconstruction and target sizes differ".into()));
    }
    Ok((sq_dist(rec_clean, clean) + sq_dist(rec_noisy, clean)) / batch as f64)
}

/// `-1/2 * sum(1 + logvar - exp(logvar) - mu^2) / batch`.
pub fn loss_kl(mu: &[f64], logvar: &[f64], batch: usize) -> Result<f64> {
    if mu.len() != logvar.len() {
        return Err(Error::Shape("mu and logvar sizes differ".into()));
    }
    let s: f64 = mu
        .iter()
        .zip(logvar)
        .map(|(m, lv)| 1.0 + lv - lv.exp() - m * m)
        .sum();
    Ok(-0.5 * s / batch as f64)
}

/// `lambda * sum of squares` over the given tensors.
pub fn loss_reg<'a>(params: impl IntoIterator<Item = &'a [f64]>, lambda: f64) -> f64 {
    if lambda == 0.0 {
        return 0.0;
    }
    lambda
        * params
            .into_iter()
            .map(|p| p.iter().map(|v| v * v).sum::<f64>())
            .sum::<f64>()
}

/// `|transformed - target|^2 / batch` for one subspace.
pub fn loss_tran(transformed: &[f64], target: &[f64], batch: usize) -> Result<f64> {
    if transformed.len() != target.len() {
        return Err(Error::Shape("subspace dimensions differ".into()));
    }
    Ok(sq_dist(transformed, target) / batch as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn mse_examples() {
        assert_eq!(loss_mse(&[0.2, 0.4], &[0.2, 0.4], &[0.2, 0.4], 1).unwrap(), 0.0);
        assert_eq!(loss_mse(&[1.0], &[0.0], &[0.5], 1).unwrap(), 0.5);
        // permuting samples in the batch leaves the loss unchanged
        let a = loss_mse(&[0.1, 0.9, 0.3], &[0.2, 0.2, 0.7], &[0.0, 1.0, 0.5], 3).unwrap();
        let b = loss_mse(&[0.3, 0.1, 0.9], &[0.7, 0.2, 0.2], &[0.5, 0.0, 1.0], 3).unwrap();
        assert!((a - b).abs() < 1e-15);
    }

    #[test]
    fn kl_golden_values() {
        assert_eq!(loss_kl(&[0.0; 4], &[0.0; 4], 1).unwrap(), 0.0);
        assert!((loss_kl(&[1.0], &[0.0], 1).unwrap() - 0.5).abs() < 1e-9);
        let e = std::f64::consts::E;
        assert!((loss_kl(&[0.0], &[1.0], 1).unwrap() - (e - 2.0) / 2.0).abs() < 1e-9);
        assert!((loss_kl(&[0.0], &[1.0], 1).unwrap() - 0.359141).abs() < 1e-6);
    }

    #[test]
    fn reg_examples() {
        assert_eq!(loss_reg([&[3.0, 4.0][..]], 0.0), 0.0);
        assert!((loss_reg([&[2.0][..]], 0.1) - 0.4).abs() < 1e-12);
        let w = [0.3, -1.2, 0.7];
        let w2: Vec<f64> = w.iter().map(|v| 2.0 * v).collect();
        assert!((loss_reg([&w2[..]], 0.5) - 4.0 * loss_reg([&w[..]], 0.5)).abs() < 1e-12);
    }

    #[test]
    fn tran_examples() {
        assert_eq!(loss_tran(&[0.1, 0.2], &[0.1, 0.2], 1).unwrap(), 0.0);
        assert!((loss_tran(&[0.3], &[0.5], 1).unwrap() - 0.04).abs() < 1e-12);
        assert!(loss_tran(&[0.3], &[0.5, 0.1], 1).is_err());
    }

    proptest! {
        #[test]
        fn kl_non_negative(v in prop::collection::vec((-5.0..5.0f64, -8.0..4.0f64), 1..64)) {
            let (mu, lv): (Vec<f64>, Vec<f64>) = v.into_iter().unzip();
            prop_assert!(loss_kl(&mu, &lv, 1).unwrap() >= 0.0);
        }
    }
}
