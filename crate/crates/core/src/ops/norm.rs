//! Layer normalization over the channel axis at each spatial position.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const LAYER_NORM_EPS: f64 = 1e-6;

/// Normalize one channel vector: `(x - mean) / sqrt(var + eps) * gamma + beta`,
/// with the population variance over the `C` entries.
pub fn layer_norm_vec(x: &[f64], gamma: &[f64], beta: &[f64], eps: f64) -> Result<Vec<f64>> {
    let c = x.len();
    if c == 0 {
        return Err(Error::invalid("layer_norm", "channel count is zero"));
    }
    if gamma.len() != c || beta.len() != c {
        return Err(Error::shape("layer_norm", &[c], &[gamma.len(), beta.len()]));
    }
    if eps.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
        return Err(Error::invalid("layer_norm", "epsilon must be positive"));
    }
    let mean = x.iter().sum::<f64>() / c as f64;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / c as f64;
    let inv = 1.0 / (var + eps).sqrt();
    Ok(x.iter().zip(gamma.iter().zip(beta)).map(|(v, (g, b))| (v - mean) * inv * g + b).collect())
}

fn check(x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<(usize, usize, usize)> {
    let (n, c, h, w) = x.nchw()?;
    if c == 0 {
        return Err(Error::invalid("layer_norm", "channel count is zero"));
    }
    gamma.expect_shape("layer_norm", &[c])?;
    beta.expect_shape("layer_norm", &[c])?;
    if eps.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
        return Err(Error::invalid("layer_norm", "epsilon must be positive"));
    }
    Ok((n, c, h * w))
}

/// Per-position statistics: (mean, 1/sqrt(var + eps)) for every (n, pixel).
fn stats(x: &Tensor, n: usize, c: usize, hw: usize, eps: f64) -> Vec<(f64, f64)> {
    let d = x.data();
    let mut out = Vec::with_capacity(n * hw);
    for b in 0..n {
        let base = b * c * hw;
        for p in 0..hw {
            let mut mean = 0.0;
            for ch in 0..c {
                mean += d[base + ch * hw + p];
            }
            mean /= c as f64;
            let mut var = 0.0;
            for ch in 0..c {
                var += (d[base + ch * hw + p] - mean).powi(2);
            }
            var /= c as f64;
            out.push((mean, 1.0 / (var + eps).sqrt()));
        }
    }
    out
}

/// Channels-first layer norm of an (N, C, H, W) tensor.
pub fn layer_norm(x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<Tensor> {
    let (n, c, hw) = check(x, gamma, beta, eps)?;
    let st = stats(x, n, c, hw, eps);
    let (g, be) = (gamma.data(), beta.data());
    let mut out = x.clone();
    let o = out.data_mut();
    for b in 0..n {
        for ch in 0..c {
            let base = (b * c + ch) * hw;
            for p in 0..hw {
                let (mean, inv) = st[b * hw + p];
                o[base + p] = (o[base + p] - mean) * inv * g[ch] + be[ch];
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct LayerNormGrads {
    pub input: Tensor,
    pub gamma: Tensor,
    pub beta: Tensor,
}

pub fn layer_norm_backward(x: &Tensor, gamma: &Tensor, eps: f64, grad_out: &Tensor) -> Result<LayerNormGrads> {
    let beta = Tensor::zeros(gamma.shape());
    let (n, c, hw) = check(x, gamma, &beta, eps)?;
    grad_out.expect_same_shape("layer_norm_backward", x)?;
    let st = stats(x, n, c, hw, eps);
    let (xd, g, gd) = (x.data(), gamma.data(), grad_out.data());
    let mut gin = Tensor::zeros(x.shape());
    let mut ggamma = vec![0.0; c];
    let mut gbeta = vec![0.0; c];
    let gi = gin.data_mut();
    let inv_c = 1.0 / c as f64;
    for b in 0..n {
        let base = b * c * hw;
        for p in 0..hw {
            let (mean, inv) = st[b * hw + p];
            let mut sum_gy = 0.0;
            let mut sum_gy_xhat = 0.0;
            for ch in 0..c {
                let i = base + ch * hw + p;
                let xhat = (xd[i] - mean) * inv;
                let gy = gd[i] * g[ch];
                sum_gy += gy;
                sum_gy_xhat += gy * xhat;
                ggamma[ch] += gd[i] * xhat;
                gbeta[ch] += gd[i];
            }
            for ch in 0..c {
                let i = base + ch * hw + p;
                let xhat = (xd[i] - mean) * inv;
                gi[i] = inv * (gd[i] * g[ch] - inv_c * sum_gy - xhat * inv_c * sum_gy_xhat);
            }
        }
    }
    Ok(LayerNormGrads { input: gin, gamma: Tensor::new(&[c], ggamma)?, beta: Tensor::new(&[c], gbeta)? })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_vector_normalizes_to_zero() {
        let y = layer_norm_vec(&[3.0; 5], &[1.0; 5], &[0.0; 5], 1e-6).unwrap();
        assert!(y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn unit_statistics_in_small_eps_limit() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = Tensor::randn(&[7], 2.0, &mut rng);
        let y = layer_norm_vec(x.data(), &[1.0; 7], &[0.0; 7], 1e-14).unwrap();
        let mean = y.iter().sum::<f64>() / 7.0;
        let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 7.0;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-9);
    }

    #[test]
    fn matches_two_pass_oracle_and_beta_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let x = Tensor::randn(&[2, 6, 3, 4], 1.5, &mut rng);
        let gamma = Tensor::randn(&[6], 1.0, &mut rng);
        let beta = Tensor::randn(&[6], 1.0, &mut rng);
        let y = layer_norm(&x, &gamma, &beta, 1e-6).unwrap();
        for b in 0..2 {
            for py in 0..3 {
                for px in 0..4 {
                    let v: Vec<f64> = (0..6).map(|c| x.at4(b, c, py, px)).collect();
                    let mean = v.iter().sum::<f64>() / 6.0;
                    let var = v.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>() / 6.0;
                    for c in 0..6 {
                        let want = (v[c] - mean) / (var + 1e-6).sqrt() * gamma.data()[c] + beta.data()[c];
                        assert!((y.at4(b, c, py, px) - want).abs() < 1e-12);
                    }
                }
            }
        }

        // With unit gamma the channel mean is exactly the beta mean.
        let ones = Tensor::full(&[6], 1.0);
        let y = layer_norm(&x, &ones, &beta, 1e-6).unwrap();
        let beta_mean = beta.sum() / 6.0;
        for p in 0..12 {
            let (py, px) = (p / 4, p % 4);
            let m = (0..6).map(|c| y.at4(1, c, py, px)).sum::<f64>() / 6.0;
            assert!((m - beta_mean).abs() < 1e-9);
        }
    }

    #[test]
    fn rejects_empty_channels() {
        assert!(layer_norm_vec(&[], &[], &[], 1e-6).is_err());
        assert!(layer_norm_vec(&[1.0], &[1.0], &[0.0], 0.0).is_err());
    }
}
