//! Finite-difference verification of every differentiable operator and of
//! the full network, over many random instances.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cspn::{
    cspn_backward, cspn_forward, cspn_refine, normalize_affinity, normalize_affinity_backward, CspnConfig,
};
use crate::error::Result;
use crate::fusion::{attention_gate, attention_gate_backward, confidence_fuse_backward, confidence_fuse_raw, FUSE_EPS};
use crate::gradcheck::{finite_diff_check, named, GradCheckReport};
use crate::metrics::{multiscale_loss, multiscale_loss_backward, LossConfig};
use crate::model::{ForwardOutputs, Model, ModelConfig, OutputGrads};
use crate::ops::{
    bilinear_resize, bilinear_resize_backward, conv2d, conv2d_backward, depthwise_conv, depthwise_conv_backward,
    layer_norm, layer_norm_backward, Activation, ConvGeometry, LAYER_NORM_EPS,
};
use crate::sparse::{sparse_conv_backward, sparse_invariant_conv, SPARSE_EPS};
use crate::tensor::Tensor;
use crate::tta::position_encoding;

/// Tolerance on the max relative error for single operators.
pub const OP_TOLERANCE: f64 = 1e-6;
/// Tolerance for the end-to-end network, whose objective chains dozens of
/// operators and accumulates truncation error from every one.
pub const MODEL_TOLERANCE: f64 = 1e-4;

pub const OPERATORS: [&str; 12] = [
    "conv2d",
    "depthwise_conv2d",
    "layer_norm",
    "gelu",
    "sigmoid",
    "bilinear_resize",
    "sparse_invariant_conv",
    "cspn_refine",
    "attention_gate",
    "confidence_fuse",
    "multiscale_loss",
    "model",
];

/// Worst result of one operator over all seeds.
#[derive(Clone, Debug, PartialEq)]
pub struct SuiteEntry {
    pub op_name: String,
    pub seeds: usize,
    pub max_relative_error: f64,
    pub worst_seed: u64,
    pub tolerance: f64,
    pub passed: bool,
}

impl std::fmt::Display for SuiteEntry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} {} seeds={} max_rel_err={:.3e} (seed {}) tol={:.1e}",
            if self.passed { "PASS" } else { "FAIL" },
            self.op_name,
            self.seeds,
            self.max_relative_error,
            self.worst_seed,
            self.tolerance
        )
    }
}

/// Scale of every checked objective. Gradients far below the typical
/// magnitude then fall under the checker's 1e-8 denominator floor and are
/// judged by absolute error, instead of FD rounding noise dominating their
/// relative error. Gradients of ordinary size are compared relatively as
/// before, since scaling the objective scales noise and gradient alike.
pub const OBJECTIVE_SCALE: f64 = 1e-4;

/// Random projection with unit expected norm times [`OBJECTIVE_SCALE`].
fn proj(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::randn(shape, OBJECTIVE_SCALE / (n as f64).sqrt(), rng)
}

fn check_conv(seed: u64, depthwise: bool) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let stride = rng.gen_range(1..=2);
    let pad = rng.gen_range(0..=1);
    let (ci, co) = if depthwise { (3, 3) } else { (2, 3) };
    let wshape = if depthwise { [ci, 1, 3, 3] } else { [co, ci, 3, 3] };
    let inputs = named([
        ("input", Tensor::randn(&[1, ci, 6, 6], 1.0, &mut rng)),
        ("weight", Tensor::randn(&wshape, 1.0, &mut rng)),
        ("bias", Tensor::randn(&[co], 1.0, &mut rng)),
    ]);
    let fwd = if depthwise { depthwise_conv } else { conv2d };
    let bwd = if depthwise { depthwise_conv_backward } else { conv2d_backward };
    let p = proj(fwd(&inputs[0].1, &inputs[1].1, &inputs[2].1, stride, pad)?.shape(), &mut rng);
    finite_diff_check(
        if depthwise { "depthwise_conv2d" } else { "conv2d" },
        &inputs,
        |v| fwd(&v[0], &v[1], &v[2], stride, pad)?.dot(&p),
        |v| {
            let g = bwd(&v[0], &v[1], &p, stride, pad)?;
            Ok(vec![g.input, g.weight, g.bias])
        },
        OP_TOLERANCE,
        1e-5,
    )
}

fn check_layer_norm(seed: u64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inputs = named([
        ("x", Tensor::randn(&[2, 4, 3, 3], 1.0, &mut rng)),
        ("gamma", Tensor::uniform(&[4], 0.5, 1.5, &mut rng)),
        ("beta", Tensor::randn(&[4], 1.0, &mut rng)),
    ]);
    let p = proj(&[2, 4, 3, 3], &mut rng);
    finite_diff_check(
        "layer_norm",
        &inputs,
        |v| layer_norm(&v[0], &v[1], &v[2], LAYER_NORM_EPS)?.dot(&p),
        |v| {
            let g = layer_norm_backward(&v[0], &v[1], LAYER_NORM_EPS, &p)?;
            Ok(vec![g.input, g.gamma, g.beta])
        },
        OP_TOLERANCE,
        1e-5,
    )
}

fn check_activation(seed: u64, act: Activation, name: &str) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inputs = named([("x", Tensor::randn(&[1, 2, 4, 4], 2.0, &mut rng))]);
    let p = proj(&[1, 2, 4, 4], &mut rng);
    finite_diff_check(
        name,
        &inputs,
        |v| act.apply(&v[0]).dot(&p),
        |v| Ok(vec![act.backward(&v[0], &p)?]),
        OP_TOLERANCE,
        1e-5,
    )
}

fn check_resize(seed: u64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w) = (rng.gen_range(2..6), rng.gen_range(2..6));
    let (oh, ow) = (rng.gen_range(2..10), rng.gen_range(2..10));
    let inputs = named([("x", Tensor::randn(&[1, 2, h, w], 1.0, &mut rng))]);
    let p = proj(&[1, 2, oh, ow], &mut rng);
    finite_diff_check(
        "bilinear_resize",
        &inputs,
        |v| bilinear_resize(&v[0], oh, ow)?.dot(&p),
        |_| Ok(vec![bilinear_resize_backward(&p, h, w)?]),
        OP_TOLERANCE,
        1e-5,
    )
}

fn binary_mask(shape: &[usize], density: f64, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_| if rng.gen::<f64>() < density { 1.0 } else { 0.0 })
}

fn check_sparse(seed: u64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let geom = ConvGeometry::new(rng.gen_range(1..=2), 1);
    let mask = binary_mask(&[1, 1, 6, 6], 0.3, &mut rng);
    let inputs = named([
        ("input", Tensor::randn(&[1, 2, 6, 6], 1.0, &mut rng)),
        ("weight", Tensor::randn(&[3, 2, 3, 3], 1.0, &mut rng)),
        ("bias", Tensor::randn(&[3], 1.0, &mut rng)),
    ]);
    let run = |v: &[Tensor]| sparse_invariant_conv(&v[0], &mask, &v[1], &v[2], geom, SPARSE_EPS);
    let p = proj(run(&inputs.iter().map(|(_, t)| t.clone()).collect::<Vec<_>>())?.output.shape(), &mut rng);
    finite_diff_check(
        "sparse_invariant_conv",
        &inputs,
        |v| run(v)?.output.dot(&p),
        |v| {
            let g = sparse_conv_backward(&run(v)?.context, &p)?;
            Ok(vec![g.input, g.weight, g.bias])
        },
        OP_TOLERANCE,
        1e-5,
    )
}

fn check_cspn(seed: u64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w) = (rng.gen_range(3..6), rng.gen_range(3..6));
    let inputs = named([
        ("h0", Tensor::uniform(&[1, 1, h, w], 0.0, 5.0, &mut rng)),
        ("raw_affinity", Tensor::uniform(&[1, 8, h, w], 0.1, 1.0, &mut rng)),
    ]);
    let p = proj(&[1, 1, h, w], &mut rng);
    let cfg = CspnConfig { steps: rng.gen_range(1..=6), reanchor: false };
    finite_diff_check(
        "cspn_refine",
        &inputs,
        |v| cspn_refine(&v[0], &normalize_affinity(&v[1])?, cfg)?.dot(&p),
        |v| {
            let f = cspn_forward(&v[0], &normalize_affinity(&v[1])?, cfg, None)?;
            let g = cspn_backward(&f.context, &p)?;
            Ok(vec![g.h0, normalize_affinity_backward(&v[1], &g.kappa)?])
        },
        OP_TOLERANCE,
        3e-5,
    )
}

fn check_gate(seed: u64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = 3;
    let inputs = named([
        ("e", Tensor::randn(&[1, c, 4, 4], 1.0, &mut rng)),
        ("d", Tensor::randn(&[1, c, 4, 4], 1.0, &mut rng)),
        ("weight", Tensor::randn(&[1, 2 * c, 1, 1], 0.5, &mut rng)),
        ("bias", Tensor::randn(&[1], 0.5, &mut rng)),
    ]);
    let p = proj(&[1, c, 4, 4], &mut rng);
    finite_diff_check(
        "attention_gate",
        &inputs,
        |v| attention_gate(&v[0], &v[1], &v[2], &v[3])?.output.dot(&p),
        |v| {
            let g = attention_gate_backward(&attention_gate(&v[0], &v[1], &v[2], &v[3])?.context, &p)?;
            Ok(vec![g.e, g.d, g.weight, g.bias])
        },
        OP_TOLERANCE,
        1e-5,
    )
}

fn check_fuse(seed: u64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = [1, 1, 4, 4];
    let inputs = named([
        ("d_rgb", Tensor::uniform(&s, 0.5, 9.0, &mut rng)),
        ("d_depth", Tensor::uniform(&s, 0.5, 9.0, &mut rng)),
        ("c_rgb", Tensor::uniform(&s, 0.05, 0.95, &mut rng)),
        ("c_depth", Tensor::uniform(&s, 0.05, 0.95, &mut rng)),
    ]);
    let p = proj(&s, &mut rng);
    let run = |v: &[Tensor]| confidence_fuse_raw(&v[0], &v[1], &v[2], &v[3], FUSE_EPS);
    finite_diff_check(
        "confidence_fuse",
        &inputs,
        |v| run(v)?.output.dot(&p),
        |v| {
            let g = confidence_fuse_backward(&run(v)?.context, &p)?;
            Ok(vec![g.d_rgb, g.d_depth, g.c_rgb, g.c_depth])
        },
        OP_TOLERANCE,
        1e-5,
    )
}

fn check_loss(seed: u64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w) = (16, 16);
    let gt = Tensor::from_fn(&[1, 1, h, w], |_| if rng.gen::<f64>() < 0.4 { rng.gen_range(0.5..9.0) } else { 0.0 });
    let mut out = |s: usize| Tensor::uniform(&[1, 1, h / s, w / s], 0.5, 9.0, &mut rng);
    let inputs = named([("d_out", out(1)), ("d2", out(2)), ("d4", out(4)), ("d8", out(8))]);
    let cfg = LossConfig::default();
    let z = Tensor::zeros(&[1, 1, h, w]);
    let build = |v: &[Tensor]| ForwardOutputs {
        d_out: v[0].clone(),
        d2: v[1].clone(),
        d4: v[2].clone(),
        d8: v[3].clone(),
        d_rgb: z.clone(),
        d_depth: z.clone(),
        c_rgb: z.clone(),
        c_depth: z.clone(),
        fused: z.clone(),
    };
    finite_diff_check(
        "multiscale_loss",
        &inputs,
        |v| Ok(OBJECTIVE_SCALE * multiscale_loss(&build(v), &gt, &cfg)?.total),
        |v| {
            let g = multiscale_loss_backward(&build(v), &gt, &cfg)?;
            Ok([g.d_out, g.d2, g.d4, g.d8].into_iter().map(|t| t.expect("loss grads").scale(OBJECTIVE_SCALE)).collect())
        },
        OP_TOLERANCE,
        1e-3,
    )
}

/// Random (N, 6, H, W) network input with about 10% sparse coverage.
pub fn random_model_input(cfg: &ModelConfig, n: usize, seed: u64) -> Result<Tensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w) = (cfg.height, cfg.width);
    let rgb = Tensor::uniform(&[n, 3, h, w], 0.0, 1.0, &mut rng);
    let sparse =
        Tensor::from_fn(&[n, 1, h, w], |_| if rng.gen::<f64>() < 0.1 { rng.gen_range(1.0..cfg.d_max) } else { 0.0 });
    let pos = position_encoding(h, w)?.batched(n);
    Tensor::concat_channels(&[&rgb, &sparse, &pos])
}

/// All parameters of a tiny 16x16 network against a random projection of
/// its four supervised outputs, in training mode with fixed drop-path
/// draws. The analytic gradient detaches the RGB depth fed to the depth
/// branch; `override_rgb` freezes that copy in the forward pass too, which
/// the comparison needs.
pub fn model_gradient_check(seed: u64, override_rgb: bool) -> Result<GradCheckReport> {
    let cfg = ModelConfig { seed, ..ModelConfig::tiny(16, 16) };
    let model = Model::new(cfg.clone())?;
    let x = random_model_input(&cfg, 2, seed + 100)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 200);
    let (base, _) = model.forward(&x, true, &mut ChaCha8Rng::seed_from_u64(seed))?;
    let mut small = |t: &Tensor| proj(t.shape(), &mut rng);
    let go = [small(&base.d_out), small(&base.d2), small(&base.d4), small(&base.d8)];
    let grads_out = OutputGrads {
        d_out: Some(go[0].clone()),
        d2: Some(go[1].clone()),
        d4: Some(go[2].clone()),
        d8: Some(go[3].clone()),
        ..OutputGrads::default()
    };
    let frozen = base.d_rgb.clone();
    let over = override_rgb.then_some(&frozen);
    let inputs: Vec<(String, Tensor)> = model.params().iter().map(|(n, t)| (n.to_string(), t.clone())).collect();
    let with = |v: &[Tensor]| {
        let mut m = model.clone();
        m.params_mut().tensors_mut().clone_from_slice(v);
        m
    };
    finite_diff_check(
        "model",
        &inputs,
        |v| {
            let (o, _) = with(v).forward_with(&x, true, &mut ChaCha8Rng::seed_from_u64(seed), over)?;
            Ok(o.d_out.dot(&go[0])? + o.d2.dot(&go[1])? + o.d4.dot(&go[2])? + o.d8.dot(&go[3])?)
        },
        |v| {
            let m = with(v);
            let (_, ctx) = m.forward_with(&x, true, &mut ChaCha8Rng::seed_from_u64(seed), over)?;
            Ok(m.backward(&ctx, &grads_out)?.0)
        },
        MODEL_TOLERANCE,
        1e-5,
    )
}

/// One finite-difference check of `op` on the instance drawn from `seed`.
pub fn check_operator(op: &str, seed: u64) -> Result<GradCheckReport> {
    match op {
        "conv2d" => check_conv(seed, false),
        "depthwise_conv2d" => check_conv(seed, true),
        "layer_norm" => check_layer_norm(seed),
        "gelu" => check_activation(seed, Activation::Gelu, "gelu"),
        "sigmoid" => check_activation(seed, Activation::Sigmoid, "sigmoid"),
        "bilinear_resize" => check_resize(seed),
        "sparse_invariant_conv" => check_sparse(seed),
        "cspn_refine" => check_cspn(seed),
        "attention_gate" => check_gate(seed),
        "confidence_fuse" => check_fuse(seed),
        "multiscale_loss" => check_loss(seed),
        "model" => model_gradient_check(seed, true),
        other => Err(crate::Error::invalid(
            "gradient_suite",
            format!("unknown operator {other:?}; expected one of {}", OPERATORS.join(", ")),
        )),
    }
}

/// Check `op` on seeds `base_seed .. base_seed + seeds` and keep the worst.
pub fn check_operator_seeds(op: &str, seeds: usize, base_seed: u64) -> Result<SuiteEntry> {
    use rayon::prelude::*;
    let reports = (0..seeds as u64)
        .into_par_iter()
        .map(|i| check_operator(op, base_seed + i).map(|r| (base_seed + i, r)))
        .collect::<Result<Vec<_>>>()?;
    let (worst_seed, worst) = reports
        .iter()
        .max_by(|a, b| a.1.max_relative_error.total_cmp(&b.1.max_relative_error))
        .ok_or_else(|| crate::Error::invalid("gradient_suite", "need at least one seed"))?;
    Ok(SuiteEntry {
        op_name: op.to_string(),
        seeds,
        max_relative_error: worst.max_relative_error,
        worst_seed: *worst_seed,
        tolerance: worst.tolerance,
        passed: reports.iter().all(|(_, r)| r.passed),
    })
}

/// Every operator in [`OPERATORS`] over `seeds` random instances each.
pub fn gradient_suite(seeds: usize, base_seed: u64) -> Result<Vec<SuiteEntry>> {
    OPERATORS.iter().map(|op| check_operator_seeds(op, seeds, base_seed)).collect()
}
