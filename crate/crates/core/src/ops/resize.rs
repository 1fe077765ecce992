//! Bilinear resampling with half-pixel centers and edge clamping.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Source taps along one axis: (lo, hi, weight of hi).
fn axis_taps(in_len: usize, out_len: usize) -> Vec<(usize, usize, f64)> {
    let scale = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (in_len - 1) as f64);
            let lo = src.floor() as usize;
            let hi = (lo + 1).min(in_len - 1);
            (lo, hi, src - lo as f64)
        })
        .collect()
}

pub fn bilinear_resize(input: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let (n, c, h, w) = input.nchw()?;
    if out_h == 0 || out_w == 0 {
        return Err(Error::invalid("bilinear_resize", "output extent must be at least 1"));
    }
    if (out_h, out_w) == (h, w) {
        return Ok(input.clone());
    }
    let ty = axis_taps(h, out_h);
    let tx = axis_taps(w, out_w);
    let mut out = Tensor::zeros(&[n, c, out_h, out_w]);
    for b in 0..n {
        for ch in 0..c {
            let src = input.plane(b, ch);
            let dst = out.plane_mut(b, ch);
            for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
                for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                    let top = src[y0 * w + x0] * (1.0 - fx) + src[y0 * w + x1] * fx;
                    let bot = src[y1 * w + x0] * (1.0 - fx) + src[y1 * w + x1] * fx;
                    dst[oy * out_w + ox] = top * (1.0 - fy) + bot * fy;
                }
            }
        }
    }
    Ok(out)
}

/// Adjoint of [`bilinear_resize`] back onto an `in_h × in_w` grid.
pub fn bilinear_resize_backward(grad_out: &Tensor, in_h: usize, in_w: usize) -> Result<Tensor> {
    let (n, c, oh, ow) = grad_out.nchw()?;
    if (oh, ow) == (in_h, in_w) {
        return Ok(grad_out.clone());
    }
    let ty = axis_taps(in_h, oh);
    let tx = axis_taps(in_w, ow);
    let mut gin = Tensor::zeros(&[n, c, in_h, in_w]);
    for b in 0..n {
        for ch in 0..c {
            let g = grad_out.plane(b, ch);
            let dst = gin.plane_mut(b, ch);
            for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
                for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                    let v = g[oy * ow + ox];
                    dst[y0 * in_w + x0] += v * (1.0 - fy) * (1.0 - fx);
                    dst[y0 * in_w + x1] += v * (1.0 - fy) * fx;
                    dst[y1 * in_w + x0] += v * fy * (1.0 - fx);
                    dst[y1 * in_w + x1] += v * fy * fx;
                }
            }
        }
    }
    Ok(gin)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn same_size_is_bitwise_identity() {
        let x = Tensor::from_fn(&[1, 2, 3, 3], |i| (i as f64 * 0.37).sin());
        let mut neg_zero = x.clone();
        neg_zero.data_mut()[0] = -0.0;
        let y = bilinear_resize(&neg_zero, 3, 3).unwrap();
        assert!(y.data().iter().zip(neg_zero.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn constant_stays_constant() {
        let x = Tensor::full(&[1, 1, 3, 5], 2.5);
        let y = bilinear_resize(&x, 7, 4).unwrap();
        assert!(y.data().iter().all(|&v| (v - 2.5).abs() < 1e-15));
    }

    #[test]
    fn two_by_two_corner_pattern() {
        // Corners a b / c d upsampled 2x: source coordinates per output index
        // are -0.25 -> 0 (clamped), 0.25, 0.75, 1.25 -> 1 (clamped).
        let (a, b, c, d) = (1.0, 2.0, 3.0, 5.0);
        let x = Tensor::new(&[1, 1, 2, 2], vec![a, b, c, d]).unwrap();
        let y = bilinear_resize(&x, 4, 4).unwrap();
        let f = [0.0, 0.25, 0.75, 1.0];
        for (oy, fy) in f.iter().enumerate() {
            for (ox, fx) in f.iter().enumerate() {
                let want = a * (1.0 - fy) * (1.0 - fx) + b * (1.0 - fy) * fx + c * fy * (1.0 - fx) + d * fy * fx;
                assert!((y.at4(0, 0, oy, ox) - want).abs() < 1e-15);
            }
        }
        assert_eq!(y.at4(0, 0, 1, 1), 0.5625 * a + 0.1875 * b + 0.1875 * c + 0.0625 * d);
    }

    proptest! {
        #[test]
        fn output_stays_within_input_bounds(
            vals in prop::collection::vec(-10.0f64..10.0, 12),
            oh in 1usize..9,
            ow in 1usize..9,
        ) {
            let x = Tensor::new(&[1, 1, 3, 4], vals).unwrap();
            let y = bilinear_resize(&x, oh, ow).unwrap();
            prop_assert!(y.min() >= x.min() - 1e-12);
            prop_assert!(y.max() <= x.max() + 1e-12);
        }
    }
}
