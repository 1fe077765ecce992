//! Dense and depthwise 2-D cross-correlation with zero padding, plus their
//! hand-written backward passes.
//!
//! Work is split over independent output planes, so the rayon path produces
//! the same bits as a sequential run.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Stride and zero-padding shared by every spatial op.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    pub const fn new(stride: usize, padding: usize) -> Self {
        ConvGeometry { stride, padding }
    }

    pub fn output_len(&self, input: usize, kernel: usize) -> Option<usize> {
        if self.stride == 0 || input + 2 * self.padding < kernel {
            return None;
        }
        Some((input + 2 * self.padding - kernel) / self.stride + 1)
    }

    pub(crate) fn output_dims(
        &self,
        op: &'static str,
        (h, w): (usize, usize),
        (kh, kw): (usize, usize),
    ) -> Result<(usize, usize)> {
        match (self.output_len(h, kh), self.output_len(w, kw)) {
            (Some(oh), Some(ow)) => Ok((oh, ow)),
            _ => Err(Error::invalid(
                op,
                format!(
                    "kernel {kh}x{kw} does not fit input {h}x{w} with padding {} and stride {}",
                    self.padding, self.stride
                ),
            )),
        }
    }
}

/// Output indices `o` whose input coordinate `o * stride + tap - pad` lands
/// inside `[0, in_len)`.
#[inline]
fn valid_range(tap: usize, geom: ConvGeometry, in_len: usize, out_len: usize) -> (usize, usize) {
    let s = geom.stride;
    let p = geom.padding;
    let start = if p > tap { (p - tap).div_ceil(s) } else { 0 };
    if in_len + p < tap + 1 {
        return (0, 0);
    }
    let end = ((in_len - 1 + p - tap) / s + 1).min(out_len);
    (start.min(end), end)
}

/// Plane extents bundled for the tap helpers.
#[derive(Clone, Copy)]
pub(crate) struct Planes {
    pub in_h: usize,
    pub in_w: usize,
    pub out_h: usize,
    pub out_w: usize,
}

/// `out += w * shift(inp)` for one kernel tap.
#[inline]
pub(crate) fn tap_forward(out: &mut [f64], inp: &[f64], w: f64, (ky, kx): (usize, usize), g: ConvGeometry, d: Planes) {
    if w == 0.0 {
        return;
    }
    let (y0, y1) = valid_range(ky, g, d.in_h, d.out_h);
    let (x0, x1) = valid_range(kx, g, d.in_w, d.out_w);
    if x0 >= x1 {
        return;
    }
    for oy in y0..y1 {
        let iy = oy * g.stride + ky - g.padding;
        let out_row = &mut out[oy * d.out_w..(oy + 1) * d.out_w];
        let in_row = &inp[iy * d.in_w..(iy + 1) * d.in_w];
        if g.stride == 1 {
            let ix0 = x0 + kx - g.padding;
            for (o, i) in out_row[x0..x1].iter_mut().zip(&in_row[ix0..ix0 + (x1 - x0)]) {
                *o += w * i;
            }
        } else {
            for ox in x0..x1 {
                out_row[ox] += w * in_row[ox * g.stride + kx - g.padding];
            }
        }
    }
}

/// Adjoint of [`tap_forward`]: `gin += w * shift^T(gout)`.
#[inline]
pub(crate) fn tap_transpose(
    gin: &mut [f64],
    gout: &[f64],
    w: f64,
    (ky, kx): (usize, usize),
    g: ConvGeometry,
    d: Planes,
) {
    if w == 0.0 {
        return;
    }
    let (y0, y1) = valid_range(ky, g, d.in_h, d.out_h);
    let (x0, x1) = valid_range(kx, g, d.in_w, d.out_w);
    if x0 >= x1 {
        return;
    }
    for oy in y0..y1 {
        let iy = oy * g.stride + ky - g.padding;
        let g_row = &gout[oy * d.out_w..(oy + 1) * d.out_w];
        let in_row = &mut gin[iy * d.in_w..(iy + 1) * d.in_w];
        if g.stride == 1 {
            let ix0 = x0 + kx - g.padding;
            for (i, o) in in_row[ix0..ix0 + (x1 - x0)].iter_mut().zip(&g_row[x0..x1]) {
                *i += w * o;
            }
        } else {
            for ox in x0..x1 {
                in_row[ox * g.stride + kx - g.padding] += w * g_row[ox];
            }
        }
    }
}

/// `sum(gout * shift(inp))` for one kernel tap.
#[inline]
pub(crate) fn tap_dot(gout: &[f64], inp: &[f64], (ky, kx): (usize, usize), g: ConvGeometry, d: Planes) -> f64 {
    let (y0, y1) = valid_range(ky, g, d.in_h, d.out_h);
    let (x0, x1) = valid_range(kx, g, d.in_w, d.out_w);
    let mut acc = 0.0;
    if x0 >= x1 {
        return acc;
    }
    for oy in y0..y1 {
        let iy = oy * g.stride + ky - g.padding;
        let g_row = &gout[oy * d.out_w..(oy + 1) * d.out_w];
        let in_row = &inp[iy * d.in_w..(iy + 1) * d.in_w];
        if g.stride == 1 {
            let ix0 = x0 + kx - g.padding;
            acc += g_row[x0..x1].iter().zip(&in_row[ix0..ix0 + (x1 - x0)]).map(|(a, b)| a * b).sum::<f64>();
        } else {
            for ox in x0..x1 {
                acc += g_row[ox] * in_row[ox * g.stride + kx - g.padding];
            }
        }
    }
    acc
}

/// Gradients of a dense or depthwise convolution.
#[derive(Clone, Debug)]
pub struct ConvGrads {
    pub input: Tensor,
    pub weight: Tensor,
    pub bias: Tensor,
}

struct DenseShapes {
    n: usize,
    ci: usize,
    co: usize,
    kh: usize,
    kw: usize,
    planes: Planes,
}

fn dense_shapes(op: &'static str, input: &Tensor, weight: &Tensor, geom: ConvGeometry) -> Result<DenseShapes> {
    let (n, ci, h, w) = input.nchw()?;
    let (co, wci, kh, kw) = weight
        .nchw()
        .map_err(|_| Error::invalid(op, format!("weights must be OIHW, got shape {:?}", weight.shape())))?;
    if wci != ci {
        return Err(Error::invalid(
            op,
            format!("input {:?} has {ci} channels but weights {:?} expect {wci}", input.shape(), weight.shape()),
        ));
    }
    let (oh, ow) = geom.output_dims(op, (h, w), (kh, kw))?;
    Ok(DenseShapes { n, ci, co, kh, kw, planes: Planes { in_h: h, in_w: w, out_h: oh, out_w: ow } })
}

/// Dense convolution without bias; the sparse convolution builds on this.
pub(crate) fn conv2d_nobias(input: &Tensor, weight: &Tensor, geom: ConvGeometry) -> Result<Tensor> {
    let s = dense_shapes("conv2d", input, weight, geom)?;
    let d = s.planes;
    let in_hw = d.in_h * d.in_w;
    let out_hw = d.out_h * d.out_w;
    let mut out = Tensor::zeros(&[s.n, s.co, d.out_h, d.out_w]);
    let x = input.data();
    let wt = weight.data();
    let ksz = s.kh * s.kw;
    out.data_mut().par_chunks_mut(out_hw).enumerate().for_each(|(plane, o)| {
        let (b, oc) = (plane / s.co, plane % s.co);
        for ic in 0..s.ci {
            let inp = &x[(b * s.ci + ic) * in_hw..(b * s.ci + ic + 1) * in_hw];
            let kbase = (oc * s.ci + ic) * ksz;
            for ky in 0..s.kh {
                for kx in 0..s.kw {
                    tap_forward(o, inp, wt[kbase + ky * s.kw + kx], (ky, kx), geom, d);
                }
            }
        }
    });
    Ok(out)
}

fn add_bias(out: &mut Tensor, bias: &Tensor, op: &'static str) -> Result<()> {
    let (_, c, h, w) = out.nchw()?;
    bias.expect_shape(op, &[c])?;
    let hw = h * w;
    for (i, plane) in out.data_mut().chunks_mut(hw).enumerate() {
        let b = bias.data()[i % c];
        plane.iter_mut().for_each(|v| *v += b);
    }
    Ok(())
}

/// Dense 2-D convolution: `input` is (N, Ci, H, W), `weight` is
/// (Co, Ci, kH, kW), `bias` has `Co` entries.
pub fn conv2d(input: &Tensor, weight: &Tensor, bias: &Tensor, stride: usize, padding: usize) -> Result<Tensor> {
    let mut out = conv2d_nobias(input, weight, ConvGeometry::new(stride, padding))?;
    add_bias(&mut out, bias, "conv2d")?;
    Ok(out)
}

pub(crate) fn conv2d_backward_input(
    input_shape: &[usize],
    weight: &Tensor,
    grad_out: &Tensor,
    geom: ConvGeometry,
) -> Result<Tensor> {
    let probe = Tensor::zeros(&[1, input_shape[1], input_shape[2], input_shape[3]]);
    let s = dense_shapes("conv2d_backward", &probe, weight, geom)?;
    let d = s.planes;
    let n = input_shape[0];
    grad_out.expect_shape("conv2d_backward", &[n, s.co, d.out_h, d.out_w])?;
    let in_hw = d.in_h * d.in_w;
    let out_hw = d.out_h * d.out_w;
    let ksz = s.kh * s.kw;
    let wt = weight.data();
    let g = grad_out.data();
    let mut gin = Tensor::zeros(input_shape);
    gin.data_mut().par_chunks_mut(in_hw).enumerate().for_each(|(plane, gi)| {
        let (b, ic) = (plane / s.ci, plane % s.ci);
        for oc in 0..s.co {
            let go = &g[(b * s.co + oc) * out_hw..(b * s.co + oc + 1) * out_hw];
            let kbase = (oc * s.ci + ic) * ksz;
            for ky in 0..s.kh {
                for kx in 0..s.kw {
                    tap_transpose(gi, go, wt[kbase + ky * s.kw + kx], (ky, kx), geom, d);
                }
            }
        }
    });
    Ok(gin)
}

pub(crate) fn conv2d_backward_weight(
    input: &Tensor,
    weight_shape: &[usize],
    grad_out: &Tensor,
    geom: ConvGeometry,
) -> Result<Tensor> {
    let probe = Tensor::zeros(weight_shape);
    let s = dense_shapes("conv2d_backward", input, &probe, geom)?;
    let d = s.planes;
    grad_out.expect_shape("conv2d_backward", &[s.n, s.co, d.out_h, d.out_w])?;
    let in_hw = d.in_h * d.in_w;
    let out_hw = d.out_h * d.out_w;
    let per_oc = s.ci * s.kh * s.kw;
    let x = input.data();
    let g = grad_out.data();
    let mut gw = Tensor::zeros(weight_shape);
    gw.data_mut().par_chunks_mut(per_oc).enumerate().for_each(|(oc, gwo)| {
        for ic in 0..s.ci {
            for ky in 0..s.kh {
                for kx in 0..s.kw {
                    let mut acc = 0.0;
                    for b in 0..s.n {
                        let go = &g[(b * s.co + oc) * out_hw..(b * s.co + oc + 1) * out_hw];
                        let inp = &x[(b * s.ci + ic) * in_hw..(b * s.ci + ic + 1) * in_hw];
                        acc += tap_dot(go, inp, (ky, kx), geom, d);
                    }
                    gwo[(ic * s.kh + ky) * s.kw + kx] = acc;
                }
            }
        }
    });
    Ok(gw)
}

pub(crate) fn bias_grad(grad_out: &Tensor) -> Result<Tensor> {
    let per = grad_out.sum_per_channel()?;
    Tensor::new(&[per.len()], per)
}

/// Backward pass of [`conv2d`].
pub fn conv2d_backward(
    input: &Tensor,
    weight: &Tensor,
    grad_out: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<ConvGrads> {
    let geom = ConvGeometry::new(stride, padding);
    Ok(ConvGrads {
        input: conv2d_backward_input(input.shape(), weight, grad_out, geom)?,
        weight: conv2d_backward_weight(input, weight.shape(), grad_out, geom)?,
        bias: bias_grad(grad_out)?,
    })
}

fn depthwise_shapes(
    input: &Tensor,
    weight: &Tensor,
    geom: ConvGeometry,
) -> Result<(usize, usize, usize, usize, Planes)> {
    let (n, c, h, w) = input.nchw()?;
    let (wc, one, kh, kw) = weight.nchw()?;
    if wc != c || one != 1 {
        return Err(Error::invalid(
            "depthwise_conv",
            format!("weights {:?} must be ({c}, 1, k, k) for input {:?}", weight.shape(), input.shape()),
        ));
    }
    let (oh, ow) = geom.output_dims("depthwise_conv", (h, w), (kh, kw))?;
    Ok((n, c, kh, kw, Planes { in_h: h, in_w: w, out_h: oh, out_w: ow }))
}

/// Per-channel convolution: output channel `c` reads only input channel `c`.
/// `weight` is (C, 1, kH, kW).
pub fn depthwise_conv(input: &Tensor, weight: &Tensor, bias: &Tensor, stride: usize, padding: usize) -> Result<Tensor> {
    let geom = ConvGeometry::new(stride, padding);
    let (n, c, kh, kw, d) = depthwise_shapes(input, weight, geom)?;
    let in_hw = d.in_h * d.in_w;
    let out_hw = d.out_h * d.out_w;
    let x = input.data();
    let wt = weight.data();
    let mut out = Tensor::zeros(&[n, c, d.out_h, d.out_w]);
    out.data_mut().par_chunks_mut(out_hw).enumerate().for_each(|(plane, o)| {
        let ch = plane % c;
        let inp = &x[plane * in_hw..(plane + 1) * in_hw];
        for ky in 0..kh {
            for kx in 0..kw {
                tap_forward(o, inp, wt[(ch * kh + ky) * kw + kx], (ky, kx), geom, d);
            }
        }
    });
    add_bias(&mut out, bias, "depthwise_conv")?;
    Ok(out)
}

/// Backward pass of [`depthwise_conv`].
pub fn depthwise_conv_backward(
    input: &Tensor,
    weight: &Tensor,
    grad_out: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<ConvGrads> {
    let geom = ConvGeometry::new(stride, padding);
    let (n, c, kh, kw, d) = depthwise_shapes(input, weight, geom)?;
    grad_out.expect_shape("depthwise_conv_backward", &[n, c, d.out_h, d.out_w])?;
    let in_hw = d.in_h * d.in_w;
    let out_hw = d.out_h * d.out_w;
    let x = input.data();
    let wt = weight.data();
    let g = grad_out.data();

    let mut gin = Tensor::zeros(input.shape());
    gin.data_mut().par_chunks_mut(in_hw).enumerate().for_each(|(plane, gi)| {
        let ch = plane % c;
        let go = &g[plane * out_hw..(plane + 1) * out_hw];
        for ky in 0..kh {
            for kx in 0..kw {
                tap_transpose(gi, go, wt[(ch * kh + ky) * kw + kx], (ky, kx), geom, d);
            }
        }
    });

    let mut gw = Tensor::zeros(weight.shape());
    gw.data_mut().par_chunks_mut(kh * kw).enumerate().for_each(|(ch, gwc)| {
        for ky in 0..kh {
            for kx in 0..kw {
                let mut acc = 0.0;
                for b in 0..n {
                    let plane = b * c + ch;
                    acc += tap_dot(
                        &g[plane * out_hw..(plane + 1) * out_hw],
                        &x[plane * in_hw..(plane + 1) * in_hw],
                        (ky, kx),
                        geom,
                        d,
                    );
                }
                gwc[ky * kw + kx] = acc;
            }
        }
    });

    Ok(ConvGrads { input: gin, weight: gw, bias: bias_grad(grad_out)? })
}
