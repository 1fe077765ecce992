//! Wall-clock timing table. Numbers depend on the machine and carry no
//! thresholds.

use std::time::Instant;

use anyhow::{bail, Result};
use depthcomp::cspn::{cspn_step, normalize_affinity};
use depthcomp::ops::{conv2d, ConvGeometry};
use depthcomp::sparse::{sparse_invariant_conv, SPARSE_EPS};
use depthcomp::verify::random_model_input;
use depthcomp::{Model, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;
use crate::Usage;

struct Timing {
    mean_ms: f64,
    min_ms: f64,
}

fn time<T>(iters: usize, mut f: impl FnMut() -> depthcomp::Result<T>) -> Result<Timing> {
    f()?;
    let mut samples = Vec::with_capacity(iters);
    for _ in 0..iters {
        let t = Instant::now();
        std::hint::black_box(f()?);
        samples.push(t.elapsed().as_secs_f64() * 1e3);
    }
    Ok(Timing {
        mean_ms: samples.iter().sum::<f64>() / iters as f64,
        min_ms: samples.iter().copied().fold(f64::INFINITY, f64::min),
    })
}

fn line(name: &str, shape: &str, t: &Timing) {
    println!("op {name} shape {shape} mean_ms {:.4} min_ms {:.4}", t.mean_ms, t.min_ms);
}

pub fn run(cfg: &RunConfig, iters: usize) -> Result<()> {
    if iters == 0 {
        bail!(Usage("--iters must be at least 1".into()));
    }
    let model = Model::new(cfg.model.clone())?;
    let (h, w) = (cfg.model.height, cfg.model.width);
    let c = 16;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let x = Tensor::randn(&[1, c, h, w], 1.0, &mut rng);
    let wt = Tensor::randn(&[c, c, 3, 3], 0.1, &mut rng);
    let b = Tensor::zeros(&[c]);
    let mask = Tensor::from_fn(&[1, 1, h, w], |i| if i % 20 == 0 { 1.0 } else { 0.0 });
    let aff = normalize_affinity(&Tensor::uniform(&[1, 8, h, w], 0.0, 1.0, &mut rng))?;
    let h0 = Tensor::uniform(&[1, 1, h, w], 1.0, 10.0, &mut rng);
    let input = random_model_input(&cfg.model, 1, 0)?;

    let param_sum: usize = model.params().iter().map(|(_, t)| t.len()).sum();
    println!("report hardware-dependent");
    println!("iters {iters}");
    println!("param_count {}", model.param_count());
    println!("param_sum {param_sum}");
    let shape = format!("1x{c}x{h}x{w}");
    line("dense_conv3x3", &shape, &time(iters, || conv2d(&x, &wt, &b, 1, 1))?);
    line(
        "sparse_conv3x3",
        &shape,
        &time(iters, || sparse_invariant_conv(&x, &mask, &wt, &b, ConvGeometry::new(1, 1), SPARSE_EPS))?,
    );
    line("cspn_step", &format!("1x1x{h}x{w}"), &time(iters, || cspn_step(&h0, &h0, &aff))?);
    let fwd = time(iters, || model.predict(&input))?;
    println!("forward_latency_ms mean {:.4} min {:.4} input 1x6x{h}x{w}", fwd.mean_ms, fwd.min_ms);
    if param_sum != model.param_count() {
        bail!("parameter count {} disagrees with the tensor sum {param_sum}", model.param_count());
    }
    Ok(())
}
