//! Convolutional spatial propagation over a 3×3 neighborhood.
//!
//! One step maps `H_t` to
//!
//! ```text
//! H_{t+1}(x) = sum_y kappa(x, y) H_t(y) + (1 - sum_y kappa(x, y)) H_0(x)
//! ```
//!
//! where `y` ranges over the eight neighbors of `x`. Steps are Jacobi-style:
//! each reads the previous iterate and writes a fresh buffer.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Neighbor offsets `(dy, dx)` in row-major order over the 3×3 window,
/// center excluded. Channel `d` of an affinity tensor weights offset `d`.
pub const DIRECTIONS: [(isize, isize); 8] = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)];

/// Direction index obtained by negating `dx`.
pub const MIRROR_DIRECTION: [usize; 8] = [2, 1, 0, 4, 3, 7, 6, 5];

const NORM_EPS: f64 = 1e-6;

#[inline]
fn neighbor(y: usize, x: usize, d: usize, h: usize, w: usize) -> Option<usize> {
    let (dy, dx) = DIRECTIONS[d];
    let ny = y.checked_add_signed(dy)?;
    let nx = x.checked_add_signed(dx)?;
    (ny < h && nx < w).then_some(ny * w + nx)
}

/// Per-pixel neighbor weights, shape (N, 8, H, W).
#[derive(Clone, Debug, PartialEq)]
pub struct AffinityField {
    kappa: Tensor,
    normalized: bool,
}

impl AffinityField {
    /// Wrap weights without any check. Refinement rejects such a field.
    pub fn raw(kappa: Tensor) -> Result<Self> {
        check_affinity_shape(&kappa)?;
        Ok(AffinityField { kappa, normalized: false })
    }

    /// Accept hand-built weights that already satisfy the normalized
    /// invariants: `sum |kappa| <= 1` per pixel and zero weight on every
    /// direction that leaves the image.
    pub fn from_normalized(kappa: Tensor) -> Result<Self> {
        check_affinity_shape(&kappa)?;
        let (n, _, h, w) = kappa.nchw()?;
        for b in 0..n {
            for y in 0..h {
                for x in 0..w {
                    let mut total = 0.0;
                    for d in 0..8 {
                        let k = kappa.at4(b, d, y, x);
                        if !k.is_finite() {
                            return Err(Error::NonFinite { what: format!("affinity at ({b}, {d}, {y}, {x})") });
                        }
                        if neighbor(y, x, d, h, w).is_none() && k != 0.0 {
                            return Err(Error::invalid(
                                "affinity",
                                format!("direction {d} at (y={y}, x={x}) leaves the image but has weight {k}"),
                            ));
                        }
                        total += k.abs();
                    }
                    if total > 1.0 {
                        return Err(Error::invalid("affinity", format!("sum |kappa| = {total} > 1 at (y={y}, x={x})")));
                    }
                }
            }
        }
        Ok(AffinityField { kappa, normalized: true })
    }

    pub fn kappa(&self) -> &Tensor {
        &self.kappa
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn into_kappa(self) -> Tensor {
        self.kappa
    }
}

fn check_affinity_shape(kappa: &Tensor) -> Result<()> {
    let (_, c, _, _) = kappa.nchw()?;
    if c != 8 {
        return Err(Error::shape("affinity", &[0, 8, 0, 0], kappa.shape()));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CspnConfig {
    pub steps: usize,
    /// Overwrite valid sparse measurements after every step.
    pub reanchor: bool,
}

impl Default for CspnConfig {
    fn default() -> Self {
        CspnConfig { steps: 6, reanchor: false }
    }
}

/// Zero out-of-image directions, then divide by `sum |raw| + 1e-6`.
pub fn normalize_affinity(raw: &Tensor) -> Result<AffinityField> {
    check_affinity_shape(raw)?;
    let (n, _, h, w) = raw.nchw()?;
    let mut kappa = raw.clone();
    for b in 0..n {
        for y in 0..h {
            for x in 0..w {
                let mut total = 0.0;
                for d in 0..8 {
                    if neighbor(y, x, d, h, w).is_none() {
                        kappa.set4(b, d, y, x, 0.0);
                    }
                    total += kappa.at4(b, d, y, x).abs();
                }
                let denom = total + NORM_EPS;
                for d in 0..8 {
                    let v = kappa.at4(b, d, y, x) / denom;
                    kappa.set4(b, d, y, x, v);
                }
            }
        }
    }
    Ok(AffinityField { kappa, normalized: true })
}

/// Gradient of [`normalize_affinity`] with respect to the raw weights.
pub fn normalize_affinity_backward(raw: &Tensor, grad_kappa: &Tensor) -> Result<Tensor> {
    check_affinity_shape(raw)?;
    grad_kappa.expect_same_shape("normalize_affinity_backward", raw)?;
    let (n, _, h, w) = raw.nchw()?;
    let mut grad = Tensor::zeros_like(raw);
    for b in 0..n {
        for y in 0..h {
            for x in 0..w {
                let mut r = [0.0; 8];
                let mut total = 0.0;
                for (d, rd) in r.iter_mut().enumerate() {
                    if neighbor(y, x, d, h, w).is_some() {
                        *rd = raw.at4(b, d, y, x);
                        total += rd.abs();
                    }
                }
                let denom = total + NORM_EPS;
                let mut cross = 0.0;
                for (d, rd) in r.iter().enumerate() {
                    cross += grad_kappa.at4(b, d, y, x) * rd;
                }
                let cross = cross / (denom * denom);
                for (d, rd) in r.iter().enumerate() {
                    if neighbor(y, x, d, h, w).is_some() {
                        let sign = if *rd == 0.0 { 0.0 } else { rd.signum() };
                        grad.set4(b, d, y, x, grad_kappa.at4(b, d, y, x) / denom - sign * cross);
                    }
                }
            }
        }
    }
    Ok(grad)
}

/// Saved iterates for [`cspn_backward`].
#[derive(Clone, Debug)]
pub struct CspnContext {
    /// `H_0 .. H_{t-1}`.
    iterates: Vec<Tensor>,
    kappa: Tensor,
    anchor_mask: Option<Tensor>,
}

#[derive(Clone, Debug)]
pub struct CspnForward {
    pub output: Tensor,
    pub context: CspnContext,
}

#[derive(Clone, Debug)]
pub struct CspnGrads {
    pub h0: Tensor,
    pub kappa: Tensor,
}

/// Sparse measurements to re-impose after each step when
/// [`CspnConfig::reanchor`] is set. Both tensors are (N, 1, H, W).
#[derive(Clone, Copy, Debug)]
pub struct SparseAnchor<'a> {
    pub depth: &'a Tensor,
    pub mask: &'a Tensor,
}

fn step(h: &Tensor, h0: &Tensor, kappa: &Tensor) -> Tensor {
    let (n, _, hh, ww) = h.nchw().expect("validated by caller");
    let mut out = Tensor::zeros_like(h);
    let plane = hh * ww;
    out.data_mut().par_chunks_mut(ww).enumerate().for_each(|(row_idx, row)| {
        let b = row_idx / hh;
        let y = row_idx % hh;
        let hp = &h.data()[b * plane..(b + 1) * plane];
        let anchor = &h0.data()[b * plane..(b + 1) * plane];
        for (x, o) in row.iter_mut().enumerate() {
            let mut acc = 0.0;
            let mut ksum = 0.0;
            for d in 0..8 {
                let k = kappa.at4(b, d, y, x);
                ksum += k;
                if let Some(q) = neighbor(y, x, d, hh, ww) {
                    acc += k * hp[q];
                }
            }
            *o = acc + (1.0 - ksum) * anchor[y * ww + x];
        }
    });
    debug_assert_eq!(out.len(), n * plane);
    out
}

fn apply_anchor(h: &mut Tensor, anchor: &SparseAnchor<'_>) {
    for ((v, &d), &m) in h.data_mut().iter_mut().zip(anchor.depth.data()).zip(anchor.mask.data()) {
        if m != 0.0 {
            *v = d;
        }
    }
}

/// A single propagation step from `h` anchored at `h0`.
pub fn cspn_step(h: &Tensor, h0: &Tensor, affinity: &AffinityField) -> Result<Tensor> {
    let (n, _, hh, ww) = h0.nchw()?;
    h.expect_shape("cspn_step", &[n, 1, hh, ww])?;
    h0.expect_shape("cspn_step", &[n, 1, hh, ww])?;
    affinity.kappa.expect_shape("cspn_step", &[n, 8, hh, ww])?;
    Ok(step(h, h0, &affinity.kappa))
}

/// Refine `h0` (N, 1, H, W) for `config.steps` steps.
pub fn cspn_refine(h0: &Tensor, affinity: &AffinityField, config: CspnConfig) -> Result<Tensor> {
    Ok(cspn_forward(h0, affinity, config, None)?.output)
}

/// Forward pass that also returns the context needed for gradients.
pub fn cspn_forward(
    h0: &Tensor,
    affinity: &AffinityField,
    config: CspnConfig,
    anchor: Option<SparseAnchor<'_>>,
) -> Result<CspnForward> {
    if !affinity.normalized {
        return Err(Error::invalid("cspn_refine", "affinity must be normalized before propagation"));
    }
    let (n, c, h, w) = h0.nchw()?;
    if c != 1 {
        return Err(Error::shape("cspn_refine", &[n, 1, h, w], h0.shape()));
    }
    affinity.kappa.expect_shape("cspn_refine", &[n, 8, h, w])?;
    if !h0.all_finite() {
        return Err(Error::NonFinite { what: "cspn_refine initial depth".into() });
    }
    let anchor = match (config.reanchor, anchor) {
        (false, _) => None,
        (true, Some(a)) => {
            a.depth.expect_shape("cspn_refine", h0.shape())?;
            a.mask.expect_shape("cspn_refine", h0.shape())?;
            Some(a)
        }
        (true, None) => {
            return Err(Error::invalid("cspn_refine", "re-anchoring requested without sparse measurements"))
        }
    };

    let mut iterates = Vec::with_capacity(config.steps);
    let mut cur = h0.clone();
    for _ in 0..config.steps {
        let mut next = step(&cur, h0, &affinity.kappa);
        if let Some(a) = &anchor {
            apply_anchor(&mut next, a);
        }
        iterates.push(std::mem::replace(&mut cur, next));
    }
    Ok(CspnForward {
        output: cur,
        context: CspnContext { iterates, kappa: affinity.kappa.clone(), anchor_mask: anchor.map(|a| a.mask.clone()) },
    })
}

/// Reverse the recurrence given `dL/dH_t`.
pub fn cspn_backward(ctx: &CspnContext, upstream: &Tensor) -> Result<CspnGrads> {
    let (n, _, h, w) = ctx.kappa.nchw()?;
    if upstream.shape() != [n, 1, h, w] {
        return Err(Error::context(
            "cspn_backward",
            format!("upstream gradient {:?} does not match the saved forward {:?}", upstream.shape(), [n, 1, h, w]),
        ));
    }
    let kappa = &ctx.kappa;
    let plane = h * w;
    let mut grad_kappa = Tensor::zeros_like(kappa);
    if ctx.iterates.is_empty() {
        return Ok(CspnGrads { h0: upstream.clone(), kappa: grad_kappa });
    }
    let h0 = &ctx.iterates[0];
    let mut grad_h0 = Tensor::zeros_like(h0);
    let mut g = upstream.clone();

    for hk in ctx.iterates.iter().rev() {
        if let Some(m) = &ctx.anchor_mask {
            for (gv, &mv) in g.data_mut().iter_mut().zip(m.data()) {
                if mv != 0.0 {
                    *gv = 0.0;
                }
            }
        }
        let mut g_prev = Tensor::zeros_like(&g);
        for b in 0..n {
            let gp = &g.data()[b * plane..(b + 1) * plane];
            let hp = &hk.data()[b * plane..(b + 1) * plane];
            let ap = &h0.data()[b * plane..(b + 1) * plane];
            for y in 0..h {
                for x in 0..w {
                    let p = y * w + x;
                    let gv = gp[p];
                    let mut ksum = 0.0;
                    for d in 0..8 {
                        let k = kappa.at4(b, d, y, x);
                        ksum += k;
                        let shifted = neighbor(y, x, d, h, w).map_or(0.0, |q| hp[q]);
                        let off = grad_kappa.offset4(b, d, y, x);
                        grad_kappa.data_mut()[off] += gv * (shifted - ap[p]);
                        if let Some(q) = neighbor(y, x, d, h, w) {
                            g_prev.data_mut()[b * plane + q] += k * gv;
                        }
                    }
                    grad_h0.data_mut()[b * plane + p] += gv * (1.0 - ksum);
                }
            }
        }
        g = g_prev;
    }
    // The oldest iterate is H_0 itself.
    grad_h0.add_assign(&g)?;
    Ok(CspnGrads { h0: grad_h0, kappa: grad_kappa })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{finite_diff_check, named};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_affinity(rng: &mut ChaCha8Rng, h: usize, w: usize, nonneg: bool) -> AffinityField {
        let lo = if nonneg { 0.0 } else { -1.0 };
        normalize_affinity(&Tensor::uniform(&[1, 8, h, w], lo, 1.0, rng)).unwrap()
    }

    /// Direct evaluation of the recurrence with explicit neighbor loops.
    fn oracle(h0: &[f64], kappa: &[[f64; 8]], h: usize, w: usize, t: usize) -> Vec<f64> {
        let mut cur = h0.to_vec();
        for _ in 0..t {
            let mut next = vec![0.0; h * w];
            for y in 0..h as isize {
                for x in 0..w as isize {
                    let p = (y * w as isize + x) as usize;
                    let mut acc = 0.0;
                    let mut ks = 0.0;
                    for (d, &(dy, dx)) in DIRECTIONS.iter().enumerate() {
                        let (ny, nx) = (y + dy, x + dx);
                        ks += kappa[p][d];
                        if ny >= 0 && nx >= 0 && ny < h as isize && nx < w as isize {
                            acc += kappa[p][d] * cur[(ny * w as isize + nx) as usize];
                        }
                    }
                    next[p] = acc + (1.0 - ks) * h0[p];
                }
            }
            cur = next;
        }
        cur
    }

    #[test]
    fn normalize_zero_and_uniform() {
        let z = normalize_affinity(&Tensor::zeros(&[1, 8, 3, 3])).unwrap();
        assert!(z.kappa().data().iter().all(|&v| v == 0.0));
        let u = normalize_affinity(&Tensor::full(&[1, 8, 3, 3], 1.0)).unwrap();
        for d in 0..8 {
            assert_eq!(u.kappa().at4(0, d, 1, 1), 1.0 / (8.0 + 1e-6));
        }
        // Corner (0, 0) keeps only right, down and down-right.
        assert_eq!(u.kappa().at4(0, 0, 0, 0), 0.0);
        assert_eq!(u.kappa().at4(0, 7, 0, 0), 1.0 / (3.0 + 1e-6));
    }

    #[test]
    fn normalized_sum_is_strictly_below_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let raw = Tensor::uniform(&[2, 8, 5, 6], -5.0, 5.0, &mut rng);
            let a = normalize_affinity(&raw).unwrap();
            for b in 0..2 {
                for y in 0..5 {
                    for x in 0..6 {
                        let mut s = 0.0;
                        let mut raw_s = 0.0;
                        for d in 0..8 {
                            s += a.kappa().at4(b, d, y, x).abs();
                            if neighbor(y, x, d, 5, 6).is_some() {
                                raw_s += raw.at4(b, d, y, x).abs();
                            } else {
                                assert_eq!(a.kappa().at4(b, d, y, x), 0.0);
                            }
                        }
                        assert!(s < 1.0);
                        assert!((s - raw_s / (raw_s + 1e-6)).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn unnormalized_field_is_rejected() {
        let a = AffinityField::raw(Tensor::full(&[1, 8, 2, 2], 0.5)).unwrap();
        assert!(cspn_refine(&Tensor::zeros(&[1, 1, 2, 2]), &a, CspnConfig::default()).is_err());
        assert!(AffinityField::from_normalized(Tensor::full(&[1, 8, 3, 3], 0.1)).is_err());
    }

    #[test]
    fn fixed_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let h0 = Tensor::uniform(&[1, 1, 4, 5], 1.0, 3.0, &mut rng);
        let zero = normalize_affinity(&Tensor::zeros(&[1, 8, 4, 5])).unwrap();
        for t in 0..5 {
            let cfg = CspnConfig { steps: t, reanchor: false };
            assert_eq!(cspn_refine(&h0, &zero, cfg).unwrap(), h0);
        }
        let c = Tensor::full(&[1, 1, 4, 5], 2.0);
        let a = random_affinity(&mut rng, 4, 5, true);
        let out = cspn_refine(&c, &a, CspnConfig { steps: 6, reanchor: false }).unwrap();
        assert!(out.data().iter().all(|&v| (v - 2.0).abs() < 1e-14));
    }

    #[test]
    fn two_steps_match_loop_oracle() {
        let (h, w) = (4, 4);
        let h0: Vec<f64> = (0..16).map(|i| 1.0 + (i as f64) * 0.25).collect();
        let mut kt = Tensor::zeros(&[1, 8, h, w]);
        let mut kappa = vec![[0.0; 8]; 16];
        for y in 0..h {
            for x in 0..w {
                for d in 0..8 {
                    if neighbor(y, x, d, h, w).is_some() {
                        let v = 0.01 * ((y * 7 + x * 3 + d) % 11) as f64;
                        kt.set4(0, d, y, x, v);
                        kappa[y * w + x][d] = v;
                    }
                }
            }
        }
        let field = AffinityField::from_normalized(kt).unwrap();
        let t0 = Tensor::new(&[1, 1, h, w], h0.clone()).unwrap();
        let out = cspn_refine(&t0, &field, CspnConfig { steps: 2, reanchor: false }).unwrap();
        let want = oracle(&h0, &kappa, h, w, 2);
        for (a, b) in out.data().iter().zip(&want) {
            assert!((a - b).abs() < 1e-13);
        }
    }

    #[test]
    fn maximum_principle_and_contraction() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let (h, w) = (rng.gen_range(1..7), rng.gen_range(1..7));
            let h0 = Tensor::uniform(&[1, 1, h, w], -2.0, 5.0, &mut rng);
            let a = random_affinity(&mut rng, h, w, true);
            let mut prev = h0.clone();
            let mut prev_delta = f64::INFINITY;
            for _ in 0..8 {
                let next = step(&prev, &h0, a.kappa());
                assert!(next.min() >= h0.min() - 1e-12 && next.max() <= h0.max() + 1e-12);
                let delta = next.max_abs_diff(&prev).unwrap();
                assert!(delta <= prev_delta + 1e-12);
                prev_delta = delta;
                prev = next;
            }
        }
    }

    #[test]
    fn locality_window() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let (h, w, t) = (11, 11, 3);
        let h0 = Tensor::uniform(&[1, 1, h, w], 0.0, 1.0, &mut rng);
        let a = random_affinity(&mut rng, h, w, false);
        let cfg = CspnConfig { steps: t, reanchor: false };
        let base = cspn_refine(&h0, &a, cfg).unwrap();
        let mut bumped = h0.clone();
        bumped.set4(0, 0, 5, 5, 10.0);
        let out = cspn_refine(&bumped, &a, cfg).unwrap();
        for y in 0..h {
            for x in 0..w {
                if y.abs_diff(5) > t || x.abs_diff(5) > t {
                    assert_eq!(out.at4(0, 0, y, x), base.at4(0, 0, y, x));
                }
            }
        }
    }

    #[test]
    fn step_edge_is_a_fixed_point() {
        let (h, w) = (4, 6);
        let h0 = Tensor::from_fn(&[1, 1, h, w], |i| if i % w < 3 { 1.0 } else { 4.0 });
        let mut k = Tensor::zeros(&[1, 8, h, w]);
        for y in 0..h {
            for x in 0..w {
                for d in 0..8 {
                    if let Some(q) = neighbor(y, x, d, h, w) {
                        if (x < 3) == (q % w < 3) {
                            k.set4(0, d, y, x, 0.1);
                        }
                    }
                }
            }
        }
        let a = AffinityField::from_normalized(k).unwrap();
        let out = cspn_refine(&h0, &a, CspnConfig { steps: 10, reanchor: false }).unwrap();
        assert!(out.max_abs_diff(&h0).unwrap() < 1e-14);
    }

    #[test]
    fn backward_degenerate_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let h0 = Tensor::uniform(&[1, 1, 3, 4], 0.0, 1.0, &mut rng);
        let up = Tensor::uniform(&[1, 1, 3, 4], -1.0, 1.0, &mut rng);
        let a = random_affinity(&mut rng, 3, 4, false);
        let f = cspn_forward(&h0, &a, CspnConfig { steps: 0, reanchor: false }, None).unwrap();
        let g = cspn_backward(&f.context, &up).unwrap();
        assert_eq!(g.h0, up);
        assert!(g.kappa.data().iter().all(|&v| v == 0.0));

        let zero = normalize_affinity(&Tensor::zeros(&[1, 8, 3, 4])).unwrap();
        let f = cspn_forward(&h0, &zero, CspnConfig { steps: 4, reanchor: false }, None).unwrap();
        assert_eq!(cspn_backward(&f.context, &up).unwrap().h0, up);
        assert!(cspn_backward(&f.context, &Tensor::zeros(&[1, 1, 2, 2])).is_err());
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let (h, w) = (4, 5);
        let inputs = named([
            ("h0", Tensor::uniform(&[1, 1, h, w], 0.5, 2.0, &mut rng)),
            ("raw", Tensor::uniform(&[1, 8, h, w], -1.0, 1.0, &mut rng)),
        ]);
        let proj = Tensor::randn(&[1, 1, h, w], 1.0, &mut rng);
        let cfg = CspnConfig { steps: 3, reanchor: false };
        let r = finite_diff_check(
            "cspn",
            &inputs,
            |v| cspn_refine(&v[0], &normalize_affinity(&v[1])?, cfg)?.dot(&proj),
            |v| {
                let f = cspn_forward(&v[0], &normalize_affinity(&v[1])?, cfg, None)?;
                let g = cspn_backward(&f.context, &proj)?;
                Ok(vec![g.h0, normalize_affinity_backward(&v[1], &g.kappa)?])
            },
            1e-6,
            1e-6,
        )
        .unwrap();
        assert!(r.passed, "{r}");
    }

    #[test]
    fn reanchoring_pins_measurements() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let (h, w) = (5, 5);
        let h0 = Tensor::uniform(&[1, 1, h, w], 0.0, 1.0, &mut rng);
        let mask = Tensor::from_fn(&[1, 1, h, w], |i| if i % 4 == 0 { 1.0 } else { 0.0 });
        let depth = mask.scale(7.0);
        let a = random_affinity(&mut rng, h, w, true);
        let cfg = CspnConfig { steps: 3, reanchor: true };
        let anchor = SparseAnchor { depth: &depth, mask: &mask };
        let f = cspn_forward(&h0, &a, cfg, Some(anchor)).unwrap();
        for i in 0..h * w {
            if mask.data()[i] == 1.0 {
                assert_eq!(f.output.data()[i], 7.0);
            }
        }
        assert!(cspn_forward(&h0, &a, cfg, None).is_err());

        let proj = Tensor::randn(&[1, 1, h, w], 1.0, &mut rng);
        let inputs = named([("h0", h0.clone())]);
        let r = finite_diff_check(
            "cspn_reanchor",
            &inputs,
            |v| cspn_forward(&v[0], &a, cfg, Some(anchor))?.output.dot(&proj),
            |v| Ok(vec![cspn_backward(&cspn_forward(&v[0], &a, cfg, Some(anchor))?.context, &proj)?.h0]),
            1e-6,
            1e-6,
        )
        .unwrap();
        assert!(r.passed, "{r}");
    }
}
