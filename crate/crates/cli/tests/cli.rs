use std::collections::BTreeMap;
use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"
[model]
height = 16
width = 16
rgb_depths = [1, 1, 1]
rgb_widths = [4, 4, 4]
depth_widths = [2, 2, 4, 4]
decoder_width = 2

[data]
count = 5
val_fraction = 0.2

[data.scene]
height = 16
width = 16

[data.sampling]
pattern = { kind = "uniform_random" }
density = 0.2
dropout = 0.0
seed = 3

[train]
batch_size = 2
"#;

fn depthcomp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_depthcomp"))
        .args(args)
        .env_remove("DEPTHCOMP_DATA")
        .env_remove("DEPTHCOMP_THREADS")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn ok(o: Output) -> String {
    assert!(o.status.success(), "exit {:?}\n{}", o.status.code(), stderr(&o));
    stdout(&o)
}

fn files(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in std::fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn tiny_config(dir: &Path) -> String {
    let p = dir.join("run.toml");
    std::fs::write(&p, TINY).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn generate_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for d in [&a, &b] {
        ok(depthcomp(&["generate", "--config", &cfg, "--data", d.to_str().unwrap(), "--seed", "7"]));
    }
    let (fa, fb) = (files(&a), files(&b));
    assert_eq!(fa.len(), 5 * 4);
    assert!(fa.contains_key("scenes/00000/spec.txt"));
    assert_eq!(fa, fb);
}

#[test]
fn train_infer_eval_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let data = tmp.path().join("data");
    let data = data.to_str().unwrap();
    ok(depthcomp(&["generate", "--config", &cfg, "--data", data]));

    let ckpt = tmp.path().join("model.ckpt");
    let ckpt = ckpt.to_str().unwrap();
    let out = ok(depthcomp(&["train", "--config", &cfg, "--data", data, "--out", ckpt, "--max-steps", "3"]));
    assert!(out.contains("steps 3"), "{out}");
    assert!(out.lines().any(|l| l.starts_with("epoch 1 ") && l.contains("val_rmse_mm")), "{out}");

    let pred = tmp.path().join("pred");
    let pred = pred.to_str().unwrap();
    let out =
        ok(depthcomp(&["infer", "--config", &cfg, "--data", data, "--checkpoint", ckpt, "--out", pred, "--visualize"]));
    assert_eq!(out.lines().count(), 5);
    for id in ["00000", "00004"] {
        assert!(Path::new(pred).join("scenes").join(id).join("pred.png").exists());
        assert!(Path::new(pred).join("scenes").join(id).join("vis.png").exists());
    }
    let no_tta = tmp.path().join("pred_no_tta");
    ok(depthcomp(&[
        "infer",
        "--config",
        &cfg,
        "--data",
        data,
        "--checkpoint",
        ckpt,
        "--out",
        no_tta.to_str().unwrap(),
        "--no-tta",
    ]));

    let out = ok(depthcomp(&["eval", "--pred", pred, "--gt", data, "--per-sample"]));
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines[0], "id rmse_mm mae_mm irmse_per_km imae_per_km");
    assert!(lines[1].starts_with("00000 "));
    assert!(out.contains("rmse_mm "), "{out}");

    let out = ok(depthcomp(&["eval", "--pred", data, "--gt", data, "--pred-name", "gt.png"]));
    for key in ["rmse_mm", "mae_mm", "irmse_per_km", "imae_per_km"] {
        let line = out.lines().find(|l| l.starts_with(key)).unwrap();
        let v: f64 = line.split_whitespace().nth(1).unwrap().parse().unwrap();
        assert_eq!(v, 0.0, "{line}");
    }
}

#[test]
fn environment_and_flag_precedence() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let real = tmp.path().join("real");
    let o = Command::new(env!("CARGO_BIN_EXE_depthcomp"))
        .args(["generate", "--config", &cfg, "--count", "1"])
        .env("DEPTHCOMP_DATA", &real)
        .env("DEPTHCOMP_THREADS", "1")
        .output()
        .unwrap();
    ok(o);
    assert!(real.join("scenes/00000/rgb.png").exists());
    let flagged = tmp.path().join("flagged");
    let o = Command::new(env!("CARGO_BIN_EXE_depthcomp"))
        .args(["generate", "--config", &cfg, "--count", "1", "--data", flagged.to_str().unwrap()])
        .env("DEPTHCOMP_DATA", tmp.path().join("ignored"))
        .output()
        .unwrap();
    ok(o);
    assert!(flagged.join("scenes/00000/rgb.png").exists());
    assert!(!tmp.path().join("ignored").exists());
}

#[test]
fn exit_codes() {
    assert_eq!(depthcomp(&[]).status.code(), Some(1));
    assert_eq!(depthcomp(&["frobnicate"]).status.code(), Some(1));
    let help = depthcomp(&["--help"]);
    assert_eq!(help.status.code(), Some(0));
    assert!(stdout(&help).contains("Default configuration"));
    assert!(stdout(&help).contains("weight_decay = 0.0001"));

    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.toml");
    std::fs::write(&bad, "[train]\nlearning_rate = 0.5\n").unwrap();
    let o = depthcomp(&["generate", "--config", bad.to_str().unwrap(), "--data", "x"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("learning_rate"), "{}", stderr(&o));

    assert_eq!(depthcomp(&["generate"]).status.code(), Some(1));
    assert_eq!(depthcomp(&["gradcheck", "--op", "softmax"]).status.code(), Some(1));

    let cfg = tiny_config(tmp.path());
    let data = tmp.path().join("data");
    ok(depthcomp(&["generate", "--config", &cfg, "--data", data.to_str().unwrap(), "--count", "1"]));
    let junk = tmp.path().join("junk.ckpt");
    std::fs::write(&junk, b"definitely not a checkpoint").unwrap();
    let o = depthcomp(&[
        "infer",
        "--config",
        &cfg,
        "--data",
        data.to_str().unwrap(),
        "--checkpoint",
        junk.to_str().unwrap(),
        "--out",
        tmp.path().join("p").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("magic"), "{}", stderr(&o));
    assert!(stdout(&o).is_empty());
}

#[test]
fn gradcheck_passes() {
    let out = ok(depthcomp(&["gradcheck", "--seeds", "2"]));
    assert_eq!(out.lines().filter(|l| l.starts_with("PASS ")).count(), 12, "{out}");
    let out = ok(depthcomp(&["gradcheck", "--op", "cspn_refine"]));
    assert!(out.starts_with("PASS cspn_refine seeds=20"), "{out}");
}
