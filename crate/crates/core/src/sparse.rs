//! Sparsity-invariant convolution with validity-mask propagation.
//!
//! Each output is the kernel response over valid pixels only, divided by
//! the number of valid pixels in the window:
//!
//! ```text
//! O(u,v) = sum(W * I * M) / (sum(M) + eps) + b
//! M'(u,v) = max over the window of M
//! ```
//!
//! The mask is spatial: one (N, 1, H, W) map shared by every input channel.

use crate::error::{Error, Result};
use crate::ops::conv::{bias_grad, conv2d_backward_input, conv2d_backward_weight, conv2d_nobias};
use crate::ops::ConvGeometry;
use crate::tensor::Tensor;

pub const SPARSE_EPS: f64 = 1e-6;

/// Saved state for [`sparse_conv_backward`].
#[derive(Clone, Debug)]
pub struct SparseConvContext {
    masked_input: Tensor,
    mask: Tensor,
    weight: Tensor,
    /// `sum(M) + eps` per output pixel, (N, 1, Ho, Wo).
    denom: Tensor,
    geom: ConvGeometry,
    output_shape: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct SparseConvForward {
    pub output: Tensor,
    pub mask: Tensor,
    pub context: SparseConvContext,
}

#[derive(Clone, Debug)]
pub struct SparseConvGrads {
    pub input: Tensor,
    pub weight: Tensor,
    pub bias: Tensor,
}

fn check_mask(input: &Tensor, mask: &Tensor) -> Result<()> {
    let (n, _, h, w) = input.nchw()?;
    mask.expect_shape("sparse_invariant_conv", &[n, 1, h, w])?;
    if let Some(bad) = mask.data().iter().find(|&&m| m != 0.0 && m != 1.0) {
        return Err(Error::invalid("sparse_invariant_conv", format!("mask must be binary, found {bad}")));
    }
    Ok(())
}

/// Forward pass. `weight` is (Co, Ci, k, k); `mask` is (N, 1, H, W).
pub fn sparse_invariant_conv(
    input: &Tensor,
    mask: &Tensor,
    weight: &Tensor,
    bias: &Tensor,
    geom: ConvGeometry,
    eps: f64,
) -> Result<SparseConvForward> {
    if eps.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
        return Err(Error::invalid("sparse_invariant_conv", format!("epsilon must be positive, got {eps}")));
    }
    check_mask(input, mask)?;
    let (n, ci, h, w) = input.nchw()?;
    let (co, _, kh, kw) = weight.nchw()?;
    bias.expect_shape("sparse_invariant_conv", &[co])?;

    let hw = h * w;
    let mut masked_input = input.clone();
    for b in 0..n {
        let m = mask.plane(b, 0).to_vec();
        for c in 0..ci {
            for (v, &mv) in masked_input.plane_mut(b, c).iter_mut().zip(&m) {
                if mv == 0.0 {
                    *v = 0.0;
                }
            }
        }
    }
    debug_assert_eq!(masked_input.len(), n * ci * hw);

    let numer = conv2d_nobias(&masked_input, weight, geom)?;
    let ones = Tensor::full(&[1, 1, kh, kw], 1.0);
    let count = conv2d_nobias(mask, &ones, geom)?;
    let (_, _, oh, ow) = numer.nchw()?;

    let new_mask = count.map(|c| if c > 0.0 { 1.0 } else { 0.0 });
    let denom = count.map(|c| c + eps);
    let mut output = numer;
    for b in 0..n {
        let d = denom.plane(b, 0).to_vec();
        for oc in 0..co {
            let bv = bias.data()[oc];
            for (o, dv) in output.plane_mut(b, oc).iter_mut().zip(&d) {
                *o = *o / dv + bv;
            }
        }
    }

    Ok(SparseConvForward {
        context: SparseConvContext {
            masked_input,
            mask: mask.clone(),
            weight: weight.clone(),
            denom,
            geom,
            output_shape: vec![n, co, oh, ow],
        },
        output,
        mask: new_mask,
    })
}

/// Backward pass; the mask is treated as a constant, so the input gradient
/// vanishes wherever the mask is zero.
pub fn sparse_conv_backward(ctx: &SparseConvContext, upstream: &Tensor) -> Result<SparseConvGrads> {
    if upstream.shape() != ctx.output_shape.as_slice() {
        return Err(Error::context(
            "sparse_conv_backward",
            format!("upstream gradient {:?} does not match saved output {:?}", upstream.shape(), ctx.output_shape),
        ));
    }
    let (n, co, _, _) = upstream.nchw()?;
    let mut scaled = upstream.clone();
    for b in 0..n {
        let d = ctx.denom.plane(b, 0).to_vec();
        for oc in 0..co {
            for (g, dv) in scaled.plane_mut(b, oc).iter_mut().zip(&d) {
                *g /= dv;
            }
        }
    }
    let mut grad_input = conv2d_backward_input(ctx.masked_input.shape(), &ctx.weight, &scaled, ctx.geom)?;
    let ci = ctx.masked_input.shape()[1];
    for b in 0..n {
        let m = ctx.mask.plane(b, 0).to_vec();
        for c in 0..ci {
            for (g, &mv) in grad_input.plane_mut(b, c).iter_mut().zip(&m) {
                if mv == 0.0 {
                    *g = 0.0;
                }
            }
        }
    }
    Ok(SparseConvGrads {
        input: grad_input,
        weight: conv2d_backward_weight(&ctx.masked_input, ctx.weight.shape(), &scaled, ctx.geom)?,
        bias: bias_grad(upstream)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{finite_diff_check, named};
    use crate::ops::conv2d_backward;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_mask(rng: &mut ChaCha8Rng, shape: &[usize], p: f64) -> Tensor {
        Tensor::from_fn(shape, |_| if rng.gen::<f64>() < p { 1.0 } else { 0.0 })
    }

    /// Masked window sum straight from the definition.
    fn oracle(x: &Tensor, m: &Tensor, w: &Tensor, b: &Tensor, stride: usize, pad: usize, eps: f64) -> (Tensor, Tensor) {
        let (n, ci, h, wd) = x.nchw().unwrap();
        let (co, _, k, _) = w.nchw().unwrap();
        let oh = (h + 2 * pad - k) / stride + 1;
        let ow = (wd + 2 * pad - k) / stride + 1;
        let mut out = Tensor::zeros(&[n, co, oh, ow]);
        let mut nm = Tensor::zeros(&[n, 1, oh, ow]);
        for bi in 0..n {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut cnt = 0.0;
                    let mut mx: f64 = 0.0;
                    let mut acc = vec![0.0; co];
                    for ky in 0..k {
                        for kx in 0..k {
                            let iy = (oy * stride + ky) as isize - pad as isize;
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                continue;
                            }
                            let (iy, ix) = (iy as usize, ix as usize);
                            let mv = m.at4(bi, 0, iy, ix);
                            cnt += mv;
                            mx = mx.max(mv);
                            for (o, a) in acc.iter_mut().enumerate() {
                                for c in 0..ci {
                                    *a += w.at4(o, c, ky, kx) * x.at4(bi, c, iy, ix) * mv;
                                }
                            }
                        }
                    }
                    for (o, a) in acc.iter().enumerate() {
                        out.set4(bi, o, oy, ox, a / (cnt + eps) + b.data()[o]);
                    }
                    nm.set4(bi, 0, oy, ox, mx);
                }
            }
        }
        (out, nm)
    }

    #[test]
    fn two_point_mean() {
        let mut x = Tensor::zeros(&[1, 1, 3, 3]);
        let mut m = Tensor::zeros(&[1, 1, 3, 3]);
        x.set4(0, 0, 0, 0, 4.0);
        m.set4(0, 0, 0, 0, 1.0);
        x.set4(0, 0, 2, 1, 6.0);
        m.set4(0, 0, 2, 1, 1.0);
        x.set4(0, 0, 1, 1, 100.0); // invalid pixel, must be ignored
        let w = Tensor::full(&[1, 1, 3, 3], 1.0);
        let f = sparse_invariant_conv(&x, &m, &w, &Tensor::zeros(&[1]), ConvGeometry::new(1, 0), SPARSE_EPS).unwrap();
        assert_eq!(f.output.shape(), &[1, 1, 1, 1]);
        assert!((f.output.data()[0] - 10.0 / (2.0 + SPARSE_EPS)).abs() < 1e-15);
        assert!((f.output.data()[0] - 5.0).abs() < 1e-5);
        assert_eq!(f.mask.data()[0], 1.0);
    }

    #[test]
    fn empty_window_yields_bias_and_zero_mask() {
        let x = Tensor::full(&[1, 2, 4, 4], 7.0);
        let m = Tensor::zeros(&[1, 1, 4, 4]);
        let w = Tensor::full(&[3, 2, 3, 3], 0.5);
        let b = Tensor::new(&[3], vec![0.1, -0.2, 0.3]).unwrap();
        let f = sparse_invariant_conv(&x, &m, &w, &b, ConvGeometry::new(1, 1), SPARSE_EPS).unwrap();
        for oc in 0..3 {
            assert!(f.output.plane(0, oc).iter().all(|&v| v == b.data()[oc]));
        }
        assert!(f.mask.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_nonpositive_epsilon_and_bad_masks() {
        let x = Tensor::zeros(&[1, 1, 3, 3]);
        let w = Tensor::zeros(&[1, 1, 3, 3]);
        let b = Tensor::zeros(&[1]);
        let g = ConvGeometry::new(1, 1);
        assert!(sparse_invariant_conv(&x, &Tensor::zeros(&[1, 1, 3, 3]), &w, &b, g, 0.0).is_err());
        assert!(sparse_invariant_conv(&x, &Tensor::full(&[1, 1, 3, 3], 0.5), &w, &b, g, 1e-6).is_err());
        assert!(sparse_invariant_conv(&x, &Tensor::zeros(&[1, 1, 2, 3]), &w, &b, g, 1e-6).is_err());
    }

    #[test]
    fn matches_masked_sum_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for &(stride, pad, k) in &[(1, 1, 3), (2, 1, 4), (2, 1, 3), (1, 0, 3)] {
            let x = Tensor::randn(&[2, 3, 8, 8], 1.0, &mut rng);
            let m = random_mask(&mut rng, &[2, 1, 8, 8], 0.3);
            let w = Tensor::randn(&[4, 3, k, k], 1.0, &mut rng);
            let b = Tensor::randn(&[4], 1.0, &mut rng);
            let f = sparse_invariant_conv(&x, &m, &w, &b, ConvGeometry::new(stride, pad), SPARSE_EPS).unwrap();
            let (want, want_mask) = oracle(&x, &m, &w, &b, stride, pad, SPARSE_EPS);
            assert!(f.output.max_abs_diff(&want).unwrap() < 1e-10);
            assert_eq!(f.mask, want_mask);
        }
    }

    #[test]
    fn invalid_inputs_do_not_leak() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let x = Tensor::randn(&[1, 2, 8, 8], 1.0, &mut rng);
        let m = random_mask(&mut rng, &[1, 1, 8, 8], 0.2);
        let w = Tensor::randn(&[2, 2, 3, 3], 1.0, &mut rng);
        let b = Tensor::randn(&[2], 1.0, &mut rng);
        let g = ConvGeometry::new(1, 1);
        let base = sparse_invariant_conv(&x, &m, &w, &b, g, SPARSE_EPS).unwrap().output;
        let mut poked = x.clone();
        for b in 0..1 {
            for c in 0..2 {
                for i in 0..64 {
                    if m.plane(b, 0)[i] == 0.0 {
                        poked.plane_mut(b, c)[i] = 1e6 * (i as f64 + 1.0);
                    }
                }
            }
        }
        let after = sparse_invariant_conv(&poked, &m, &w, &b, g, SPARSE_EPS).unwrap().output;
        assert_eq!(base, after);
    }

    #[test]
    fn mask_is_idempotent_under_1x1() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let m = random_mask(&mut rng, &[1, 1, 6, 6], 0.4);
        let x = Tensor::randn(&[1, 1, 6, 6], 1.0, &mut rng);
        let w = Tensor::full(&[1, 1, 1, 1], 1.0);
        let b = Tensor::zeros(&[1]);
        let g = ConvGeometry::new(1, 0);
        let once = sparse_invariant_conv(&x, &m, &w, &b, g, SPARSE_EPS).unwrap().mask;
        let twice = sparse_invariant_conv(&x, &once, &w, &b, g, SPARSE_EPS).unwrap().mask;
        assert_eq!(once, m);
        assert_eq!(twice, once);
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let x = Tensor::randn(&[1, 2, 5, 5], 1.0, &mut rng);
        let m = random_mask(&mut rng, &[1, 1, 5, 5], 0.5);
        let w = Tensor::randn(&[3, 2, 3, 3], 1.0, &mut rng);
        let f = sparse_invariant_conv(&x, &m, &w, &Tensor::zeros(&[3]), ConvGeometry::new(1, 1), SPARSE_EPS).unwrap();
        let g = sparse_conv_backward(&f.context, &Tensor::zeros(f.output.shape())).unwrap();
        assert!(g.input.data().iter().chain(g.weight.data()).chain(g.bias.data()).all(|&v| v == 0.0));
        assert!(sparse_conv_backward(&f.context, &Tensor::zeros(&[1, 3, 4, 5])).is_err());
    }

    #[test]
    fn full_mask_matches_scaled_dense_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let x = Tensor::randn(&[1, 2, 6, 6], 1.0, &mut rng);
        let m = Tensor::full(&[1, 1, 6, 6], 1.0);
        let w = Tensor::randn(&[3, 2, 3, 3], 1.0, &mut rng);
        let f = sparse_invariant_conv(&x, &m, &w, &Tensor::zeros(&[3]), ConvGeometry::new(1, 0), SPARSE_EPS).unwrap();
        let up = Tensor::randn(f.output.shape(), 1.0, &mut rng);
        let sg = sparse_conv_backward(&f.context, &up).unwrap();
        let scale = 1.0 / (9.0 + SPARSE_EPS);
        let dg = conv2d_backward(&x, &w, &up.scale(scale), 1, 0).unwrap();
        assert!(sg.input.max_abs_diff(&dg.input).unwrap() < 1e-12);
        assert!(sg.weight.max_abs_diff(&dg.weight).unwrap() < 1e-12);
        // The bias sits outside the normalization.
        let unscaled = conv2d_backward(&x, &w, &up, 1, 0).unwrap();
        assert!(sg.bias.max_abs_diff(&unscaled.bias).unwrap() < 1e-12);
    }

    #[test]
    fn random_instance_passes_gradcheck() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let m = random_mask(&mut rng, &[1, 1, 7, 7], 0.3);
        let inputs = named([
            ("input", Tensor::randn(&[1, 2, 7, 7], 1.0, &mut rng)),
            ("weight", Tensor::randn(&[3, 2, 4, 4], 1.0, &mut rng)),
            ("bias", Tensor::randn(&[3], 1.0, &mut rng)),
        ]);
        let g = ConvGeometry::new(2, 1);
        let proj = Tensor::randn(&[1, 3, 3, 3], 1.0, &mut rng);
        let r = finite_diff_check(
            "sparse_invariant_conv",
            &inputs,
            |v| sparse_invariant_conv(&v[0], &m, &v[1], &v[2], g, SPARSE_EPS)?.output.dot(&proj),
            |v| {
                let f = sparse_invariant_conv(&v[0], &m, &v[1], &v[2], g, SPARSE_EPS)?;
                let gr = sparse_conv_backward(&f.context, &proj)?;
                Ok(vec![gr.input, gr.weight, gr.bias])
            },
            1e-6,
            1e-5,
        )
        .unwrap();
        assert!(r.passed, "{r}");
        let grad_in = {
            let f = sparse_invariant_conv(&inputs[0].1, &m, &inputs[1].1, &inputs[2].1, g, SPARSE_EPS).unwrap();
            sparse_conv_backward(&f.context, &proj).unwrap().input
        };
        for c in 0..2 {
            for i in 0..49 {
                if m.data()[i] == 0.0 {
                    assert_eq!(grad_in.plane(0, c)[i], 0.0);
                }
            }
        }
    }
}
