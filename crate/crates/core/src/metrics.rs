//! Masked multi-scale training loss and depth-completion error metrics.
//!
//! Pixels with ground truth `> 0` are valid; everything else is ignored.
//! Metrics take depths in meters and report RMSE/MAE in millimeters and
//! iRMSE/iMAE (errors of `1/d`) per kilometer.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ForwardOutputs, OutputGrads};
use crate::tensor::Tensor;

/// Weights of the auxiliary 1/2, 1/4 and 1/8 scale losses.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub lambda_2: f64,
    pub lambda_4: f64,
    pub lambda_8: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig { lambda_2: 0.5, lambda_4: 0.5, lambda_8: 0.5 }
    }
}

impl LossConfig {
    pub fn zero() -> Self {
        LossConfig { lambda_2: 0.0, lambda_4: 0.0, lambda_8: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lambda_2", self.lambda_2), ("lambda_4", self.lambda_4), ("lambda_8", self.lambda_8)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::invalid("loss_config", format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }

    fn weights(&self) -> [(usize, f64); 3] {
        [(2, self.lambda_2), (4, self.lambda_4), (8, self.lambda_8)]
    }
}

fn valid_count(gt: &Tensor) -> usize {
    gt.data().iter().filter(|&&g| g > 0.0).count()
}

/// Mean squared error over pixels where `gt > 0`, pooled across the batch.
pub fn masked_mse(pred: &Tensor, gt: &Tensor) -> Result<f64> {
    pred.expect_same_shape("masked_mse", gt)?;
    let n = valid_count(gt);
    if n == 0 {
        return Err(Error::invalid("masked_mse", "ground truth has no valid pixels"));
    }
    let sum: f64 = pred.data().iter().zip(gt.data()).filter(|(_, &g)| g > 0.0).map(|(&p, &g)| (p - g) * (p - g)).sum();
    Ok(sum / n as f64)
}

/// Gradient of [`masked_mse`] with respect to `pred`.
pub fn masked_mse_grad(pred: &Tensor, gt: &Tensor) -> Result<Tensor> {
    pred.expect_same_shape("masked_mse", gt)?;
    let n = valid_count(gt);
    if n == 0 {
        return Err(Error::invalid("masked_mse", "ground truth has no valid pixels"));
    }
    let k = 2.0 / n as f64;
    pred.zip_map(gt, |p, g| if g > 0.0 { k * (p - g) } else { 0.0 })
}

/// Reduce (N, 1, H, W) ground truth by `s` with a mean over the valid
/// pixels of each `s × s` block; blocks without valid pixels become 0.
/// Trailing rows and columns that do not fill a block are cropped.
pub fn downsample_gt(gt: &Tensor, s: usize) -> Result<Tensor> {
    let (n, c, h, w) = gt.nchw()?;
    if s == 0 {
        return Err(Error::invalid("downsample_gt", "scale must be at least 1"));
    }
    let (oh, ow) = (h / s, w / s);
    let mut out = Tensor::zeros(&[n, c, oh, ow]);
    for b in 0..n {
        for ch in 0..c {
            let src = gt.plane(b, ch);
            let dst = out.plane_mut(b, ch);
            for oy in 0..oh {
                for ox in 0..ow {
                    let (mut sum, mut cnt) = (0.0, 0usize);
                    for y in oy * s..(oy + 1) * s {
                        for &v in &src[y * w + ox * s..y * w + (ox + 1) * s] {
                            if v > 0.0 {
                                sum += v;
                                cnt += 1;
                            }
                        }
                    }
                    if cnt > 0 {
                        dst[oy * ow + ox] = sum / cnt as f64;
                    }
                }
            }
        }
    }
    Ok(out)
}

/// One auxiliary term of the multi-scale loss.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScaleLoss {
    pub scale: usize,
    pub weight: f64,
    /// `None` when the downsampled ground truth has no valid pixel.
    pub loss: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub out: f64,
    pub per_scale: Vec<ScaleLoss>,
}

impl fmt::Display for LossBreakdown {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "total {:.6} out {:.6}", self.total, self.out)?;
        for s in &self.per_scale {
            match s.loss {
                Some(l) => write!(f, " s{} {:.6}x{}", s.scale, l, s.weight)?,
                None => write!(f, " s{} skipped", s.scale)?,
            }
        }
        Ok(())
    }
}

fn scale_pred(outputs: &ForwardOutputs, s: usize) -> &Tensor {
    match s {
        2 => &outputs.d2,
        4 => &outputs.d4,
        _ => &outputs.d8,
    }
}

/// `L_out + sum_s lambda_s L_s` over the refined output and the 1/2, 1/4
/// and 1/8 predictions.
pub fn multiscale_loss(outputs: &ForwardOutputs, gt: &Tensor, cfg: &LossConfig) -> Result<LossBreakdown> {
    let out = masked_mse(&outputs.d_out, gt)?;
    let mut total = out;
    let mut per_scale = Vec::with_capacity(3);
    for (s, weight) in cfg.weights() {
        let g = downsample_gt(gt, s)?;
        let loss = if valid_count(&g) == 0 {
            log::warn!("scale 1/{s}: downsampled ground truth has no valid pixels, term skipped");
            None
        } else {
            let l = masked_mse(scale_pred(outputs, s), &g)?;
            total += weight * l;
            Some(l)
        };
        per_scale.push(ScaleLoss { scale: s, weight, loss });
    }
    Ok(LossBreakdown { total, out, per_scale })
}

/// Gradient of [`multiscale_loss`] with respect to the predictions.
pub fn multiscale_loss_backward(outputs: &ForwardOutputs, gt: &Tensor, cfg: &LossConfig) -> Result<OutputGrads> {
    let mut grads = OutputGrads { d_out: Some(masked_mse_grad(&outputs.d_out, gt)?), ..OutputGrads::default() };
    for (s, weight) in cfg.weights() {
        let g = downsample_gt(gt, s)?;
        let pred = scale_pred(outputs, s);
        let t = if valid_count(&g) == 0 || weight == 0.0 {
            Tensor::zeros_like(pred)
        } else {
            masked_mse_grad(pred, &g)?.scale(weight)
        };
        match s {
            2 => grads.d2 = Some(t),
            4 => grads.d4 = Some(t),
            _ => grads.d8 = Some(t),
        }
    }
    Ok(grads)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricReport {
    pub rmse_mm: f64,
    pub mae_mm: f64,
    pub irmse_per_km: f64,
    pub imae_per_km: f64,
    pub valid_pixel_count: usize,
}

impl MetricReport {
    pub const KEYS: [&'static str; 5] = ["rmse_mm", "mae_mm", "irmse_per_km", "imae_per_km", "valid_pixel_count"];

    /// One `name value` pair per line.
    pub fn to_kv(&self) -> String {
        self.to_string()
    }

    pub fn from_kv(text: &str) -> Result<Self> {
        let bad = |m: String| Error::invalid("metric_report", m);
        let mut vals = [None; 5];
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line.split_once(' ').ok_or_else(|| bad(format!("malformed line {line:?}")))?;
            let idx = Self::KEYS.iter().position(|&key| key == k).ok_or_else(|| bad(format!("unknown key {k:?}")))?;
            vals[idx] = Some(v.trim().parse::<f64>().map_err(|e| bad(format!("{k}: {e}")))?);
        }
        let get = |i: usize| vals[i].ok_or_else(|| bad(format!("missing {}", Self::KEYS[i])));
        Ok(MetricReport {
            rmse_mm: get(0)?,
            mae_mm: get(1)?,
            irmse_per_km: get(2)?,
            imae_per_km: get(3)?,
            valid_pixel_count: get(4)? as usize,
        })
    }
}

impl fmt::Display for MetricReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "rmse_mm {:.6}", self.rmse_mm)?;
        writeln!(f, "mae_mm {:.6}", self.mae_mm)?;
        writeln!(f, "irmse_per_km {:.6}", self.irmse_per_km)?;
        writeln!(f, "imae_per_km {:.6}", self.imae_per_km)?;
        writeln!(f, "valid_pixel_count {}", self.valid_pixel_count)
    }
}

/// Running sums for pooling metrics over many frames.
#[derive(Clone, Copy, Debug, Default)]
pub struct MetricAccumulator {
    sq: f64,
    abs: f64,
    isq: f64,
    iabs: f64,
    count: usize,
}

impl MetricAccumulator {
    pub fn add(&mut self, pred: &[f64], gt: &[f64]) -> Result<()> {
        if pred.len() != gt.len() {
            return Err(Error::shape("compute_metrics", &[gt.len()], &[pred.len()]));
        }
        for (i, (&p, &g)) in pred.iter().zip(gt).enumerate() {
            if g > 0.0 {
                if !(p > 0.0 && p.is_finite()) {
                    return Err(Error::invalid(
                        "compute_metrics",
                        format!("prediction {p} at valid pixel {i} must be positive"),
                    ));
                }
                let e = p - g;
                let ie = 1.0 / p - 1.0 / g;
                self.sq += e * e;
                self.abs += e.abs();
                self.isq += ie * ie;
                self.iabs += ie.abs();
                self.count += 1;
            }
        }
        Ok(())
    }

    pub fn finish(&self) -> Result<MetricReport> {
        if self.count == 0 {
            return Err(Error::invalid("compute_metrics", "ground truth has no valid pixels"));
        }
        let n = self.count as f64;
        Ok(MetricReport {
            rmse_mm: 1000.0 * (self.sq / n).sqrt(),
            mae_mm: 1000.0 * self.abs / n,
            irmse_per_km: 1000.0 * (self.isq / n).sqrt(),
            imae_per_km: 1000.0 * self.iabs / n,
            valid_pixel_count: self.count,
        })
    }
}

/// Metrics of `pred` against `gt`, both in meters.
pub fn compute_metrics(pred: &[f64], gt: &[f64]) -> Result<MetricReport> {
    let mut acc = MetricAccumulator::default();
    acc.add(pred, gt)?;
    acc.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{finite_diff_check, named};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn t(v: &[f64]) -> Tensor {
        Tensor::new(&[1, 1, 1, v.len()], v.to_vec()).unwrap()
    }

    #[test]
    fn mse_examples() {
        assert_eq!(masked_mse(&t(&[1.0, 5.0]), &t(&[1.0, 0.0])).unwrap(), 0.0);
        assert_eq!(masked_mse(&t(&[2.0, 4.0]), &t(&[1.0, 2.0])).unwrap(), 2.5);
        assert_eq!(
            masked_mse(&t(&[2.0, 4.0, 9.0]), &t(&[1.0, 2.0, 0.0])).unwrap(),
            masked_mse(&t(&[2.0, 4.0, -3.0]), &t(&[1.0, 2.0, 0.0])).unwrap()
        );
        assert!(masked_mse(&t(&[1.0]), &t(&[0.0])).is_err());
    }

    #[test]
    fn downsample_examples() {
        let c = Tensor::full(&[1, 1, 8, 8], 3.0);
        assert_eq!(downsample_gt(&c, 4).unwrap(), Tensor::full(&[1, 1, 2, 2], 3.0));
        let mut one = Tensor::zeros(&[1, 1, 2, 2]);
        one.set4(0, 0, 1, 0, 7.0);
        assert_eq!(downsample_gt(&one, 2).unwrap().data(), &[7.0]);
        let odd = Tensor::full(&[1, 1, 5, 5], 1.0);
        assert_eq!(downsample_gt(&odd, 2).unwrap().shape(), [1, 1, 2, 2]);
    }

    #[test]
    fn downsample_matches_block_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for s in [2, 4, 8] {
            let gt =
                Tensor::from_fn(
                    &[2, 1, 16, 24],
                    |_| if rng.gen::<f64>() < 0.2 { rng.gen_range(0.5..9.0) } else { 0.0 },
                );
            let d = downsample_gt(&gt, s).unwrap();
            for b in 0..2 {
                for oy in 0..16 / s {
                    for ox in 0..24 / s {
                        let vals: Vec<f64> = (0..s * s)
                            .map(|k| gt.at4(b, 0, oy * s + k / s, ox * s + k % s))
                            .filter(|&v| v > 0.0)
                            .collect();
                        let want = if vals.is_empty() { 0.0 } else { vals.iter().sum::<f64>() / vals.len() as f64 };
                        assert!((d.at4(b, 0, oy, ox) - want).abs() < 1e-12);
                    }
                }
            }
        }
    }

    fn outputs(rng: &mut ChaCha8Rng, h: usize, w: usize) -> ForwardOutputs {
        let r = |rng: &mut ChaCha8Rng, s: usize| Tensor::uniform(&[1, 1, h / s, w / s], 0.5, 9.0, rng);
        ForwardOutputs {
            d_out: r(rng, 1),
            d2: r(rng, 2),
            d4: r(rng, 4),
            d8: r(rng, 8),
            d_rgb: r(rng, 1),
            d_depth: r(rng, 1),
            c_rgb: r(rng, 1),
            c_depth: r(rng, 1),
            fused: r(rng, 1),
        }
    }

    #[test]
    fn multiscale_composes_per_scale_terms() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let gt =
            Tensor::from_fn(&[1, 1, 16, 16], |_| if rng.gen::<f64>() < 0.3 { rng.gen_range(0.5..9.0) } else { 0.0 });
        let o = outputs(&mut rng, 16, 16);
        let cfg = LossConfig { lambda_2: 0.3, lambda_4: 0.7, lambda_8: 1.1 };
        let l = multiscale_loss(&o, &gt, &cfg).unwrap();
        let want = masked_mse(&o.d_out, &gt).unwrap()
            + 0.3 * masked_mse(&o.d2, &downsample_gt(&gt, 2).unwrap()).unwrap()
            + 0.7 * masked_mse(&o.d4, &downsample_gt(&gt, 4).unwrap()).unwrap()
            + 1.1 * masked_mse(&o.d8, &downsample_gt(&gt, 8).unwrap()).unwrap();
        assert!((l.total - want).abs() < 1e-12);
        let z = multiscale_loss(&o, &gt, &LossConfig::zero()).unwrap();
        assert_eq!(z.total, z.out);
        assert!(z.per_scale.iter().all(|s| s.weight == 0.0 && s.loss.is_some()));

        let perfect = ForwardOutputs {
            d_out: gt.clone(),
            d2: downsample_gt(&gt, 2).unwrap(),
            d4: downsample_gt(&gt, 4).unwrap(),
            d8: downsample_gt(&gt, 8).unwrap(),
            ..o
        };
        assert_eq!(multiscale_loss(&perfect, &gt, &cfg).unwrap().total, 0.0);
    }

    #[test]
    fn empty_scale_is_skipped() {
        // The single valid pixel sits in the cropped remainder at 1/8.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let gt = Tensor::from_fn(&[1, 1, 12, 12], |i| if i == 143 { 2.0 } else { 0.0 });
        let o = outputs(&mut rng, 12, 12);
        let l = multiscale_loss(&o, &gt, &LossConfig::default()).unwrap();
        assert_eq!(l.per_scale[2].loss, None);
        assert!(l.per_scale[0].loss.is_some());
        let g = multiscale_loss_backward(&o, &gt, &LossConfig::default()).unwrap();
        assert_eq!(g.d8.unwrap().max_abs(), 0.0);
    }

    #[test]
    fn multiscale_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let gt =
            Tensor::from_fn(&[1, 1, 16, 16], |_| if rng.gen::<f64>() < 0.4 { rng.gen_range(0.5..9.0) } else { 0.0 });
        let o = outputs(&mut rng, 16, 16);
        let cfg = LossConfig::default();
        let inputs =
            named([("d_out", o.d_out.clone()), ("d2", o.d2.clone()), ("d4", o.d4.clone()), ("d8", o.d8.clone())]);
        let build = |v: &[Tensor]| ForwardOutputs {
            d_out: v[0].clone(),
            d2: v[1].clone(),
            d4: v[2].clone(),
            d8: v[3].clone(),
            ..o.clone()
        };
        let r = finite_diff_check(
            "multiscale_loss",
            &inputs,
            |v| Ok(multiscale_loss(&build(v), &gt, &cfg)?.total),
            |v| {
                let g = multiscale_loss_backward(&build(v), &gt, &cfg)?;
                Ok(vec![g.d_out.unwrap(), g.d2.unwrap(), g.d4.unwrap(), g.d8.unwrap()])
            },
            1e-6,
            1e-5,
        )
        .unwrap();
        assert!(r.passed, "{r}");
    }

    #[test]
    fn metric_examples() {
        let r = compute_metrics(&[2.0, 4.0], &[1.0, 2.0]).unwrap();
        assert!((r.rmse_mm - 2.5f64.sqrt() * 1000.0).abs() < 1e-9);
        assert!((r.rmse_mm - 1581.14).abs() < 0.01);
        assert_eq!(r.mae_mm, 1500.0);
        assert!((r.irmse_per_km - 395.28).abs() < 0.01);
        assert_eq!(r.imae_per_km, 375.0);
        let z = compute_metrics(&[1.0, 3.0], &[1.0, 3.0]).unwrap();
        assert_eq!((z.rmse_mm, z.mae_mm, z.irmse_per_km, z.imae_per_km), (0.0, 0.0, 0.0, 0.0));
        assert!(compute_metrics(&[0.0, 1.0], &[1.0, 1.0]).is_err());
        assert!(compute_metrics(&[1.0], &[0.0]).is_err());
        assert_eq!(MetricReport::from_kv(&r.to_kv()).unwrap().mae_mm, 1500.0);
    }

    #[test]
    fn constant_error() {
        let gt = [1.0, 2.5, 7.0, 0.0, 3.25];
        let pred: Vec<f64> = gt.iter().map(|g| g + 0.25).collect();
        let r = compute_metrics(&pred, &gt).unwrap();
        assert_eq!(r.mae_mm, 250.0);
        assert_eq!(r.rmse_mm, 250.0);
    }

    proptest! {
        #[test]
        fn power_mean_and_permutation(
            pairs in prop::collection::vec((0.01f64..50.0, 0.0f64..50.0), 1..40),
            seed in 0u64..1000,
        ) {
            prop_assume!(pairs.iter().any(|p| p.1 > 0.0));
            let pred: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let gt: Vec<f64> = pairs.iter().map(|p| p.1).collect();
            let r = compute_metrics(&pred, &gt).unwrap();
            prop_assert!(r.rmse_mm >= r.mae_mm * (1.0 - 1e-12));
            prop_assert!(r.irmse_per_km >= r.imae_per_km * (1.0 - 1e-12));
            let mut idx: Vec<usize> = (0..pairs.len()).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rand::seq::SliceRandom::shuffle(idx.as_mut_slice(), &mut rng);
            let p2: Vec<f64> = idx.iter().map(|&i| pred[i]).collect();
            let g2: Vec<f64> = idx.iter().map(|&i| gt[i]).collect();
            let r2 = compute_metrics(&p2, &g2).unwrap();
            prop_assert!((r.rmse_mm - r2.rmse_mm).abs() <= 1e-9 * r.rmse_mm.max(1.0));
            prop_assert!((r.mae_mm - r2.mae_mm).abs() <= 1e-9 * r.mae_mm.max(1.0));
        }
    }
}
