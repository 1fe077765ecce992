//! Attention-gated skip fusion and confidence-weighted branch fusion.

use crate::error::{Error, Result};
use crate::ops::{conv2d, conv2d_backward, sigmoid};
use crate::tensor::Tensor;

pub const FUSE_EPS: f64 = 1e-6;

/// Per-pixel confidence in the open interval (0, 1), shape (N, 1, H, W).
#[derive(Clone, Debug, PartialEq)]
pub struct ConfidenceMap {
    values: Tensor,
}

impl ConfidenceMap {
    pub fn new(values: Tensor) -> Result<Self> {
        let (_, c, _, _) = values.nchw()?;
        if c != 1 {
            return Err(Error::invalid("confidence_map", format!("expected one channel, got {c}")));
        }
        if let Some(bad) = values.data().iter().find(|&&v| !(v > 0.0 && v < 1.0)) {
            return Err(Error::invalid("confidence_map", format!("confidence {bad} is outside (0, 1)")));
        }
        Ok(ConfidenceMap { values })
    }

    /// Sigmoid of head logits. Fails if a logit saturates to exactly 0 or 1.
    pub fn from_logits(logits: &Tensor) -> Result<Self> {
        ConfidenceMap::new(logits.map(sigmoid))
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    pub fn into_tensor(self) -> Tensor {
        self.values
    }
}

#[derive(Clone, Debug)]
pub struct GateContext {
    e: Tensor,
    d: Tensor,
    cat: Tensor,
    weight: Tensor,
    gate: Tensor,
}

#[derive(Clone, Debug)]
pub struct GateForward {
    pub output: Tensor,
    pub context: GateContext,
}

#[derive(Clone, Debug)]
pub struct GateGrads {
    pub e: Tensor,
    pub d: Tensor,
    pub weight: Tensor,
    pub bias: Tensor,
}

impl GateContext {
    /// The single-channel gate `g`, (N, 1, H, W).
    pub fn gate(&self) -> &Tensor {
        &self.gate
    }
}

/// `g = sigmoid(conv1x1([e; d]))`, `out = g e + (1 - g) d`. `weight` is
/// (1, 2C, 1, 1) and the gate is broadcast over channels.
pub fn attention_gate(e: &Tensor, d: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<GateForward> {
    e.expect_same_shape("attention_gate", d)?;
    let (n, c, h, w) = e.nchw()?;
    weight.expect_shape("attention_gate", &[1, 2 * c, 1, 1])?;
    bias.expect_shape("attention_gate", &[1])?;
    let cat = Tensor::concat_channels(&[e, d])?;
    let gate = conv2d(&cat, weight, bias, 1, 0)?.map(sigmoid);
    let mut output = Tensor::zeros(&[n, c, h, w]);
    for b in 0..n {
        let g = gate.plane(b, 0);
        for ch in 0..c {
            let (ep, dp) = (e.plane(b, ch), d.plane(b, ch));
            for (i, o) in output.plane_mut(b, ch).iter_mut().enumerate() {
                *o = g[i] * ep[i] + (1.0 - g[i]) * dp[i];
            }
        }
    }
    Ok(GateForward { output, context: GateContext { e: e.clone(), d: d.clone(), cat, weight: weight.clone(), gate } })
}

pub fn attention_gate_backward(ctx: &GateContext, upstream: &Tensor) -> Result<GateGrads> {
    if upstream.shape() != ctx.e.shape() {
        return Err(Error::context(
            "attention_gate_backward",
            format!("upstream gradient {:?} does not match the saved forward {:?}", upstream.shape(), ctx.e.shape()),
        ));
    }
    let (n, c, _, _) = ctx.e.nchw()?;
    let mut ge = Tensor::zeros_like(&ctx.e);
    let mut gd = Tensor::zeros_like(&ctx.d);
    let mut gz = Tensor::zeros_like(&ctx.gate);
    for b in 0..n {
        let g = ctx.gate.plane(b, 0).to_vec();
        let mut dg = vec![0.0; g.len()];
        for ch in 0..c {
            let up = upstream.plane(b, ch);
            let (ep, dp) = (ctx.e.plane(b, ch), ctx.d.plane(b, ch));
            for (i, v) in ge.plane_mut(b, ch).iter_mut().enumerate() {
                *v = g[i] * up[i];
            }
            for (i, v) in gd.plane_mut(b, ch).iter_mut().enumerate() {
                *v = (1.0 - g[i]) * up[i];
            }
            for i in 0..g.len() {
                dg[i] += up[i] * (ep[i] - dp[i]);
            }
        }
        for (i, z) in gz.plane_mut(b, 0).iter_mut().enumerate() {
            *z = dg[i] * g[i] * (1.0 - g[i]);
        }
    }
    let conv = conv2d_backward(&ctx.cat, &ctx.weight, &gz, 1, 0)?;
    let parts = conv.input.split_channels(&[c, c])?;
    ge.add_assign(&parts[0])?;
    gd.add_assign(&parts[1])?;
    Ok(GateGrads { e: ge, d: gd, weight: conv.weight, bias: conv.bias })
}

#[derive(Clone, Debug)]
pub struct FuseContext {
    d_rgb: Tensor,
    d_depth: Tensor,
    c_rgb: Tensor,
    c_depth: Tensor,
    fused: Tensor,
    eps: f64,
}

#[derive(Clone, Debug)]
pub struct FuseForward {
    pub output: Tensor,
    pub context: FuseContext,
}

#[derive(Clone, Debug)]
pub struct FuseGrads {
    pub d_rgb: Tensor,
    pub d_depth: Tensor,
    pub c_rgb: Tensor,
    pub c_depth: Tensor,
}

/// `(c_rgb d_rgb + c_depth d_depth) / (c_rgb + c_depth + eps)`.
pub fn confidence_fuse(
    d_rgb: &Tensor,
    d_depth: &Tensor,
    c_rgb: &ConfidenceMap,
    c_depth: &ConfidenceMap,
    eps: f64,
) -> Result<FuseForward> {
    confidence_fuse_raw(d_rgb, d_depth, c_rgb.values(), c_depth.values(), eps)
}

/// [`confidence_fuse`] on bare tensors. Confidences only need to be
/// nonnegative here, which lets finite differences step across the full
/// domain without re-validating the open interval.
pub fn confidence_fuse_raw(
    d_rgb: &Tensor,
    d_depth: &Tensor,
    c_rgb: &Tensor,
    c_depth: &Tensor,
    eps: f64,
) -> Result<FuseForward> {
    if eps.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
        return Err(Error::invalid("confidence_fuse", format!("epsilon must be positive, got {eps}")));
    }
    for t in [d_depth, c_rgb, c_depth] {
        t.expect_same_shape("confidence_fuse", d_rgb)?;
    }
    let data = d_rgb
        .data()
        .iter()
        .zip(d_depth.data())
        .zip(c_rgb.data().iter().zip(c_depth.data()))
        .map(|((&a, &b), (&c1, &c2))| (c1 * a + c2 * b) / (c1 + c2 + eps))
        .collect();
    let fused = Tensor::new(d_rgb.shape(), data)?;
    Ok(FuseForward {
        output: fused.clone(),
        context: FuseContext {
            d_rgb: d_rgb.clone(),
            d_depth: d_depth.clone(),
            c_rgb: c_rgb.clone(),
            c_depth: c_depth.clone(),
            fused,
            eps,
        },
    })
}

pub fn confidence_fuse_backward(ctx: &FuseContext, upstream: &Tensor) -> Result<FuseGrads> {
    if upstream.shape() != ctx.fused.shape() {
        return Err(Error::context(
            "confidence_fuse_backward",
            format!(
                "upstream gradient {:?} does not match the saved forward {:?}",
                upstream.shape(),
                ctx.fused.shape()
            ),
        ));
    }
    let len = upstream.len();
    let mut out = [vec![0.0; len], vec![0.0; len], vec![0.0; len], vec![0.0; len]];
    for i in 0..len {
        let (c1, c2) = (ctx.c_rgb.data()[i], ctx.c_depth.data()[i]);
        let g = upstream.data()[i] / (c1 + c2 + ctx.eps);
        let f = ctx.fused.data()[i];
        out[0][i] = g * c1;
        out[1][i] = g * c2;
        out[2][i] = g * (ctx.d_rgb.data()[i] - f);
        out[3][i] = g * (ctx.d_depth.data()[i] - f);
    }
    let shape = upstream.shape();
    let [a, b, c, d] = out;
    Ok(FuseGrads {
        d_rgb: Tensor::new(shape, a)?,
        d_depth: Tensor::new(shape, b)?,
        c_rgb: Tensor::new(shape, c)?,
        c_depth: Tensor::new(shape, d)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{finite_diff_check, named};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn conf(shape: &[usize], v: f64) -> ConfidenceMap {
        ConfidenceMap::new(Tensor::full(shape, v)).unwrap()
    }

    #[test]
    fn neutral_and_saturated_gate() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let e = Tensor::randn(&[1, 3, 4, 4], 1.0, &mut rng);
        let d = Tensor::randn(&[1, 3, 4, 4], 1.0, &mut rng);
        let w = Tensor::zeros(&[1, 6, 1, 1]);
        let mid = attention_gate(&e, &d, &w, &Tensor::zeros(&[1])).unwrap();
        let want = e.add(&d).unwrap().scale(0.5);
        assert!(mid.output.max_abs_diff(&want).unwrap() < 1e-15);
        let sat = attention_gate(&e, &d, &w, &Tensor::full(&[1], 30.0)).unwrap();
        assert!(sat.output.max_abs_diff(&e).unwrap() < 1e-9);
        assert!(attention_gate(&e, &Tensor::zeros(&[1, 2, 4, 4]), &w, &Tensor::zeros(&[1])).is_err());
    }

    #[test]
    fn gate_matches_pixel_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (c, h, w) = (2, 3, 5);
        let e = Tensor::randn(&[2, c, h, w], 1.0, &mut rng);
        let d = Tensor::randn(&[2, c, h, w], 1.0, &mut rng);
        let wt = Tensor::randn(&[1, 2 * c, 1, 1], 1.0, &mut rng);
        let bias = Tensor::randn(&[1], 1.0, &mut rng);
        let out = attention_gate(&e, &d, &wt, &bias).unwrap().output;
        for b in 0..2 {
            for y in 0..h {
                for x in 0..w {
                    let mut z = bias.data()[0];
                    for k in 0..c {
                        z += wt.data()[k] * e.at4(b, k, y, x) + wt.data()[c + k] * d.at4(b, k, y, x);
                    }
                    let g = 1.0 / (1.0 + (-z).exp());
                    for k in 0..c {
                        let want = g * e.at4(b, k, y, x) + (1.0 - g) * d.at4(b, k, y, x);
                        assert!((out.at4(b, k, y, x) - want).abs() < 1e-14);
                    }
                }
            }
        }
    }

    #[test]
    fn fuse_limits_and_oracle() {
        let s = [1, 1, 2, 3];
        let eq =
            confidence_fuse(&Tensor::full(&s, 2.0), &Tensor::full(&s, 4.0), &conf(&s, 0.3), &conf(&s, 0.3), FUSE_EPS)
                .unwrap();
        assert!(eq.output.data().iter().all(|&v| (v - 3.0).abs() < 3.0 * 1e-5));
        // The residual is d_rgb (eps + c_depth) / c_rgb plus the c_depth d_depth
        // leak, so the 1e-6 bound needs d_rgb below roughly c_rgb.
        let one =
            confidence_fuse(&Tensor::full(&s, 0.5), &Tensor::full(&s, 4.0), &conf(&s, 0.9), &conf(&s, 1e-9), FUSE_EPS)
                .unwrap();
        assert!(one.output.data().iter().all(|&v| (v - 0.5).abs() < 1e-6));
        assert!(confidence_fuse(&Tensor::full(&s, 2.0), &Tensor::full(&s, 4.0), &conf(&s, 0.7), &conf(&s, 0.7), 0.0)
            .is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = Tensor::uniform(&[1, 1, 4, 4], 0.0, 10.0, &mut rng);
        let b = Tensor::uniform(&[1, 1, 4, 4], 0.0, 10.0, &mut rng);
        let c1 = Tensor::uniform(&[1, 1, 4, 4], 0.01, 0.99, &mut rng);
        let c2 = Tensor::uniform(&[1, 1, 4, 4], 0.01, 0.99, &mut rng);
        let f = confidence_fuse_raw(&a, &b, &c1, &c2, FUSE_EPS).unwrap().output;
        for i in 0..16 {
            let (x, y, p, q) = (a.data()[i], b.data()[i], c1.data()[i], c2.data()[i]);
            assert!((f.data()[i] - (p * x + q * y) / (p + q + 1e-6)).abs() < 1e-12);
        }
    }

    #[test]
    fn confidence_map_rejects_closed_endpoints() {
        assert!(ConfidenceMap::new(Tensor::full(&[1, 1, 1, 1], 1.0)).is_err());
        assert!(ConfidenceMap::new(Tensor::full(&[1, 1, 1, 1], 0.0)).is_err());
        assert!(ConfidenceMap::from_logits(&Tensor::full(&[1, 1, 1, 1], -30.0)).is_ok());
    }

    #[test]
    fn backward_degenerate_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let s = [1, 1, 3, 3];
        let a = Tensor::uniform(&s, 1.0, 3.0, &mut rng);
        let b = Tensor::uniform(&s, 1.0, 3.0, &mut rng);
        let c = Tensor::full(&s, 0.4);
        let f = confidence_fuse_raw(&a, &b, &c, &c, FUSE_EPS).unwrap();
        let zero = confidence_fuse_backward(&f.context, &Tensor::zeros(&s)).unwrap();
        for t in [&zero.d_rgb, &zero.d_depth, &zero.c_rgb, &zero.c_depth] {
            assert!(t.data().iter().all(|&v| v == 0.0));
        }
        let up = Tensor::randn(&s, 1.0, &mut rng);
        let g = confidence_fuse_backward(&f.context, &up).unwrap();
        assert_eq!(g.d_rgb, g.d_depth);
        assert!(confidence_fuse_backward(&f.context, &Tensor::zeros(&[1, 1, 2, 2])).is_err());

        let e = Tensor::randn(&[1, 2, 3, 3], 1.0, &mut rng);
        let gf = attention_gate(&e, &e, &Tensor::randn(&[1, 4, 1, 1], 1.0, &mut rng), &Tensor::zeros(&[1])).unwrap();
        let gz = attention_gate_backward(&gf.context, &Tensor::zeros(&[1, 2, 3, 3])).unwrap();
        assert!(gz.e.max_abs() == 0.0 && gz.weight.max_abs() == 0.0 && gz.bias.max_abs() == 0.0);
        assert!(attention_gate_backward(&gf.context, &Tensor::zeros(&[1, 1, 3, 3])).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let inputs = named([
            ("e", Tensor::randn(&[1, 2, 3, 4], 1.0, &mut rng)),
            ("d", Tensor::randn(&[1, 2, 3, 4], 1.0, &mut rng)),
            ("w", Tensor::randn(&[1, 4, 1, 1], 1.0, &mut rng)),
            ("b", Tensor::randn(&[1], 1.0, &mut rng)),
        ]);
        let proj = Tensor::randn(&[1, 2, 3, 4], 1.0, &mut rng);
        let r = finite_diff_check(
            "attention_gate",
            &inputs,
            |v| attention_gate(&v[0], &v[1], &v[2], &v[3])?.output.dot(&proj),
            |v| {
                let f = attention_gate(&v[0], &v[1], &v[2], &v[3])?;
                let g = attention_gate_backward(&f.context, &proj)?;
                Ok(vec![g.e, g.d, g.weight, g.bias])
            },
            1e-6,
            1e-6,
        )
        .unwrap();
        assert!(r.passed, "{r}");

        let s = [1, 1, 3, 4];
        let inputs = named([
            ("d_rgb", Tensor::uniform(&s, 1.0, 5.0, &mut rng)),
            ("d_depth", Tensor::uniform(&s, 1.0, 5.0, &mut rng)),
            ("c_rgb", Tensor::uniform(&s, 0.1, 0.9, &mut rng)),
            ("c_depth", Tensor::uniform(&s, 0.1, 0.9, &mut rng)),
        ]);
        let proj = Tensor::randn(&s, 1.0, &mut rng);
        let r = finite_diff_check(
            "confidence_fuse",
            &inputs,
            |v| confidence_fuse_raw(&v[0], &v[1], &v[2], &v[3], FUSE_EPS)?.output.dot(&proj),
            |v| {
                let f = confidence_fuse_raw(&v[0], &v[1], &v[2], &v[3], FUSE_EPS)?;
                let g = confidence_fuse_backward(&f.context, &proj)?;
                Ok(vec![g.d_rgb, g.d_depth, g.c_rgb, g.c_depth])
            },
            1e-6,
            1e-6,
        )
        .unwrap();
        assert!(r.passed, "{r}");
    }

    proptest! {
        #[test]
        fn fuse_symmetry_scale_and_convexity(
            a in 0.0f64..50.0, b in 0.0f64..50.0,
            c1 in 1e-6f64..1.0, c2 in 1e-6f64..1.0,
            k in -6i32..6, s in 0.01f64..100.0,
        ) {
            let t = |v: f64| Tensor::full(&[1, 1, 1, 1], v);
            let f = |a: f64, b: f64, p: f64, q: f64| {
                confidence_fuse_raw(&t(a), &t(b), &t(p), &t(q), FUSE_EPS).unwrap().output.data()[0]
            };
            let base = f(a, b, c1, c2);
            prop_assert_eq!(base, f(b, a, c2, c1));
            let pow2 = 2f64.powi(k);
            prop_assert_eq!(f(pow2 * a, pow2 * b, c1, c2), pow2 * base);
            prop_assert!((f(s * a, s * b, c1, c2) - s * base).abs() <= 1e-12 * s * base.abs().max(1.0));
            let shrink = (c1 + c2) / (c1 + c2 + FUSE_EPS);
            prop_assert!(base >= a.min(b) * shrink - 1e-12);
            prop_assert!(base <= a.max(b) + 1e-12);
        }

        #[test]
        fn gate_output_is_between_inputs(
            e in prop::collection::vec(-5.0f64..5.0, 8),
            d in prop::collection::vec(-5.0f64..5.0, 8),
            w in prop::collection::vec(-3.0f64..3.0, 4),
            bias in -3.0f64..3.0,
        ) {
            let e = Tensor::new(&[1, 2, 2, 2], e).unwrap();
            let d = Tensor::new(&[1, 2, 2, 2], d).unwrap();
            let w = Tensor::new(&[1, 4, 1, 1], w).unwrap();
            let out = attention_gate(&e, &d, &w, &Tensor::full(&[1], bias)).unwrap().output;
            for i in 0..8 {
                let (lo, hi) = (e.data()[i].min(d.data()[i]), e.data()[i].max(d.data()[i]));
                prop_assert!(out.data()[i] >= lo - 1e-12 && out.data()[i] <= hi + 1e-12);
            }
        }
    }
}
