use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use depthcomp::metrics::{compute_metrics, MetricAccumulator};
use depthcomp::model::{load_checkpoint, save_checkpoint, train, Model, TrainEvent};
use depthcomp::pngio::{encode_depth_png, encode_depth_visualization, DEPTH_MAX, DEPTH_SCALE};
use depthcomp::tta::tta_predict;
use depthcomp::verify::{check_operator_seeds, gradient_suite, OPERATORS};
use depthcomp::DepthMap;
use rayon::prelude::*;

use crate::config::RunConfig;
use crate::dataset as ds;
use crate::{Cli, Command, Global, Usage};

pub fn run(cli: Cli) -> Result<()> {
    let g = cli.global;
    if let Some(n) = g.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring the thread pool")?;
    }
    let cfg = RunConfig::load(g.config.as_deref())?;
    match cli.command {
        Command::Generate { count, seed } => generate(&g, &cfg, count, seed),
        Command::Train { out, epochs, max_steps, seed } => train_cmd(&g, cfg, &out, epochs, max_steps, seed),
        Command::Infer { checkpoint, out, tta, no_tta, visualize } => {
            let use_tta = if tta || no_tta { tta } else { cfg.tta.enabled };
            infer(&g, &cfg, &checkpoint, &out, use_tta, visualize)
        }
        Command::Eval { pred, gt, pred_name, per_sample } => {
            let gt = match gt {
                Some(p) => p,
                None => data_root(&g, &cfg)?,
            };
            eval(&pred, &gt, &pred_name, per_sample)
        }
        Command::Gradcheck { seeds, base_seed, op } => gradcheck(seeds, base_seed, op.as_deref()),
        Command::Bench { iters } => crate::bench::run(&cfg, iters),
    }
}

fn data_root(g: &Global, cfg: &RunConfig) -> Result<PathBuf> {
    g.data
        .clone()
        .or_else(|| cfg.data.path.clone())
        .ok_or_else(|| Usage("no dataset root: pass --data, set DEPTHCOMP_DATA or data.path".into()).into())
}

fn generate(g: &Global, cfg: &RunConfig, count: Option<usize>, seed: Option<u64>) -> Result<()> {
    let root = data_root(g, cfg)?;
    let count = count.unwrap_or(cfg.data.count);
    if count == 0 {
        bail!(Usage("--count must be at least 1".into()));
    }
    let mut template = cfg.data.scene.clone();
    if let Some(s) = seed {
        template.seed = s;
    }
    (0..count).into_par_iter().try_for_each(|i| {
        let id = ds::scene_id(i);
        ds::write_scene(&root, &id, &ds::scene_spec(&template, i), &cfg.data.sampling)
            .with_context(|| format!("scene {id}"))
    })?;
    log::info!("wrote {count} scenes to {}", ds::scenes_dir(&root).display());
    println!("scenes {count}");
    println!("root {}", root.display());
    Ok(())
}

fn train_cmd(
    g: &Global,
    mut cfg: RunConfig,
    out: &Path,
    epochs: Option<usize>,
    max_steps: Option<u64>,
    seed: Option<u64>,
) -> Result<()> {
    let root = data_root(g, &cfg)?;
    if let Some(e) = epochs {
        cfg.train.epochs = e;
    }
    if max_steps.is_some() {
        cfg.train.max_steps = max_steps;
    }
    if let Some(s) = seed {
        cfg.train.seed = s;
    }
    let tcfg = cfg.train_config();
    tcfg.validate().map_err(|e| Usage(e.to_string()))?;
    let ids = ds::list_scenes(&root)?;
    let mode = cfg.position_mode();
    let size = (cfg.model.height, cfg.model.width);
    let samples = ids.par_iter().map(|id| ds::read_sample(&root, id, mode, size)).collect::<Result<Vec<_>>>()?;
    let n_val = (samples.len() as f64 * cfg.data.val_fraction).round() as usize;
    if n_val >= samples.len() {
        bail!(Usage(format!("val_fraction {} leaves no training scenes", cfg.data.val_fraction)));
    }
    let (train_set, val_set) = samples.split_at(samples.len() - n_val);
    let mut model = Model::new(cfg.model.clone())?;
    log::info!(
        "training {} parameters on {} scenes, validating on {}",
        model.param_count(),
        train_set.len(),
        val_set.len()
    );
    let report = train(&mut model, train_set, val_set, &tcfg, &mut |e| {
        match e {
            TrainEvent::Step { .. } => {}
            TrainEvent::Epoch(r) => {
                let val = r.val_rmse_mm.map_or("n/a".to_string(), |v| format!("{v:.3}"));
                println!("epoch {} steps {} mean_loss {:.6} val_rmse_mm {val}", r.epoch, r.steps, r.mean_loss);
            }
            TrainEvent::Checkpoint { epoch, model } => {
                let bytes = save_checkpoint(model)?;
                write_checkpoint(out, &bytes).map_err(|e| depthcomp::Error::Checkpoint(format!("{e:#}")))?;
                log::info!("epoch {epoch}: checkpoint written to {}", out.display());
            }
        }
        Ok(())
    });
    let report = report.with_context(|| format!("last good checkpoint remains at {}", out.display()))?;
    println!("steps {}", report.steps);
    println!("checkpoint {}", out.display());
    Ok(())
}

fn write_checkpoint(out: &Path, bytes: &[u8]) -> Result<()> {
    ds::write_atomic(out, bytes)
}

/// Predictions are clamped into the PNG's representable range
/// [1/256, 65535/256] m before encoding.
fn to_png_depth(pred: &depthcomp::Tensor) -> Result<DepthMap> {
    let mut d = DepthMap::from_tensor_plane(pred, 0, 0)?;
    for v in d.data_mut() {
        *v = v.clamp(1.0 / DEPTH_SCALE, DEPTH_MAX);
    }
    Ok(d)
}

fn infer(g: &Global, cfg: &RunConfig, checkpoint: &Path, out: &Path, use_tta: bool, visualize: bool) -> Result<()> {
    let root = data_root(g, cfg)?;
    let model = load_checkpoint(&ds::read(checkpoint)?).with_context(|| format!("loading {}", checkpoint.display()))?;
    let ids = ds::list_scenes(&root)?;
    let schema = cfg.schema();
    let mode = cfg.position_mode();
    let predict = |x: &depthcomp::Tensor| model.predict(x);
    let mut done = ids
        .par_iter()
        .map(|id| -> Result<(String, PathBuf)> {
            let files = ds::read_inputs(&root, id)?;
            let x = ds::network_input(&files, mode)?;
            let pred = if use_tta { tta_predict(&predict, &x, &schema)? } else { predict(&x)? };
            let depth = to_png_depth(&pred)?;
            let dir = ds::scene_dir(out, id);
            let path = dir.join(ds::PRED);
            ds::write_atomic(&path, &encode_depth_png(&depth)?)?;
            if visualize {
                ds::write_atomic(&dir.join(ds::VIS), &encode_depth_visualization(&depth)?)?;
            }
            Ok((id.clone(), path))
        })
        .collect::<Result<Vec<_>>>()?;
    done.sort();
    for (id, path) in &done {
        println!("{id} {}", path.display());
    }
    log::info!("{} predictions written (tta {})", done.len(), if use_tta { "on" } else { "off" });
    Ok(())
}

fn eval(pred_root: &Path, gt_root: &Path, pred_name: &str, per_sample: bool) -> Result<()> {
    let ids = ds::list_scenes(gt_root)?;
    let mut rows = ids
        .par_iter()
        .map(|id| -> Result<_> {
            let gt = ds::read_depth(&ds::scene_dir(gt_root, id).join(ds::GT))?;
            let pred = ds::read_depth(&ds::scene_dir(pred_root, id).join(pred_name))?;
            if (pred.height(), pred.width()) != (gt.height(), gt.width()) {
                bail!("scene {id}: prediction and ground truth sizes differ");
            }
            let m = compute_metrics(pred.data(), gt.data()).with_context(|| format!("scene {id}"))?;
            Ok((id.clone(), m, pred, gt))
        })
        .collect::<Result<Vec<_>>>()?;
    rows.sort_by(|a, b| a.0.cmp(&b.0));
    let mut acc = MetricAccumulator::default();
    if per_sample {
        println!("id rmse_mm mae_mm irmse_per_km imae_per_km");
    }
    for (id, m, pred, gt) in &rows {
        acc.add(pred.data(), gt.data())?;
        if per_sample {
            println!("{id} {:.2} {:.2} {:.2} {:.2}", m.rmse_mm, m.mae_mm, m.irmse_per_km, m.imae_per_km);
        }
    }
    print!("{}", acc.finish()?);
    Ok(())
}

fn gradcheck(seeds: usize, base_seed: u64, op: Option<&str>) -> Result<()> {
    if seeds == 0 {
        bail!(Usage("--seeds must be at least 1".into()));
    }
    let entries = match op {
        Some(name) if !OPERATORS.contains(&name) => {
            bail!(Usage(format!("unknown operator {name:?}; expected one of {}", OPERATORS.join(", "))))
        }
        Some(name) => vec![check_operator_seeds(name, seeds, base_seed)?],
        None => gradient_suite(seeds, base_seed)?,
    };
    for e in &entries {
        println!("{e}");
    }
    let failed: Vec<&str> = entries.iter().filter(|e| !e.passed).map(|e| e.op_name.as_str()).collect();
    if !failed.is_empty() {
        bail!("gradient check failed for {}", failed.join(", "));
    }
    Ok(())
}
