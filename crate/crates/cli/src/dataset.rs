//! On-disk dataset layout: `<root>/scenes/<id>/{rgb.png, gt.png, sparse.png, spec.txt}`.

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use depthcomp::model::{assemble_input, Sample};
use depthcomp::pngio::{decode_depth_png, decode_rgb_png, decode_sparse_png, encode_depth_png, encode_rgb_png};
use depthcomp::scene::{generate_scene, sparse_sample};
use depthcomp::{DepthMap, PositionMode, SamplingSpec, SceneSpec, SparseDepthFrame, Tensor};

pub const RGB: &str = "rgb.png";
pub const GT: &str = "gt.png";
pub const SPARSE: &str = "sparse.png";
pub const SPEC: &str = "spec.txt";
pub const PRED: &str = "pred.png";
pub const VIS: &str = "vis.png";

pub fn scenes_dir(root: &Path) -> PathBuf {
    root.join("scenes")
}

pub fn scene_dir(root: &Path, id: &str) -> PathBuf {
    scenes_dir(root).join(id)
}

pub fn scene_id(i: usize) -> String {
    format!("{i:05}")
}

/// Write via a temporary file in the same directory and rename, so readers
/// never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)
        .with_context(|| format!("creating a temporary file in {}", dir.display()))?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).with_context(|| format!("reading {}", path.display()))
}

/// Scene ids under `<root>/scenes`, sorted.
pub fn list_scenes(root: &Path) -> Result<Vec<String>> {
    let dir = scenes_dir(root);
    let entries = std::fs::read_dir(&dir).with_context(|| format!("listing {}", dir.display()))?;
    let mut ids = Vec::new();
    for e in entries {
        let e = e?;
        if e.file_type()?.is_dir() {
            ids.push(e.file_name().to_string_lossy().into_owned());
        }
    }
    ids.sort();
    if ids.is_empty() {
        bail!("no scenes in {}", dir.display());
    }
    Ok(ids)
}

/// Spec of scene `i` generated from a template.
pub fn scene_spec(template: &SceneSpec, i: usize) -> SceneSpec {
    SceneSpec { seed: template.seed.wrapping_add(i as u64), ..template.clone() }
}

/// Render one scene and write its four files.
pub fn write_scene(root: &Path, id: &str, spec: &SceneSpec, sampling: &SamplingSpec) -> Result<()> {
    let scene = generate_scene(spec)?;
    let sampling = SamplingSpec { seed: sampling.seed.wrapping_add(spec.seed), ..*sampling };
    let frame = sparse_sample(&scene.depth, &sampling, spec.d_max)?;
    let dir = scene_dir(root, id);
    write_atomic(&dir.join(RGB), &encode_rgb_png(&scene.rgb)?)?;
    write_atomic(&dir.join(GT), &encode_depth_png(&scene.depth)?)?;
    write_atomic(&dir.join(SPARSE), &encode_depth_png(frame.depth())?)?;
    write_atomic(&dir.join(SPEC), spec.to_text()?.as_bytes())?;
    Ok(())
}

pub fn read_depth(path: &Path) -> Result<DepthMap> {
    decode_depth_png(&read(path)?).with_context(|| format!("decoding {}", path.display()))
}

pub struct SceneFiles {
    pub rgb: Tensor,
    pub sparse: SparseDepthFrame,
}

pub fn read_inputs(root: &Path, id: &str) -> Result<SceneFiles> {
    let dir = scene_dir(root, id);
    let rgb_path = dir.join(RGB);
    let rgb = decode_rgb_png(&read(&rgb_path)?).with_context(|| format!("decoding {}", rgb_path.display()))?;
    let sparse_path = dir.join(SPARSE);
    let sparse =
        decode_sparse_png(&read(&sparse_path)?).with_context(|| format!("decoding {}", sparse_path.display()))?;
    Ok(SceneFiles { rgb, sparse })
}

pub fn network_input(files: &SceneFiles, mode: PositionMode) -> Result<Tensor> {
    Ok(assemble_input(&files.rgb, &files.sparse, mode)?)
}

/// Training sample of one scene, checked against the model input size.
pub fn read_sample(root: &Path, id: &str, mode: PositionMode, size: (usize, usize)) -> Result<Sample> {
    let files = read_inputs(root, id)?;
    let gt = read_depth(&scene_dir(root, id).join(GT))?;
    if (gt.height(), gt.width()) != size {
        bail!("scene {id} is {}x{} but the model expects {}x{}", gt.height(), gt.width(), size.0, size.1);
    }
    Ok(Sample::new(network_input(&files, mode)?, gt.to_tensor())?)
}
