//! Analytic ray-cast scenes with exact depth, and LiDAR-like sampling.
//!
//! Camera coordinates: x right, y down, z forward; depth is the z
//! coordinate of the first surface hit. Pixel `(u, v)` covers
//! `[u, u+1) × [v, v+1)` and rays pass through its center.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::depth::{DepthMap, SparseDepthFrame};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    /// Square pixels, principal point at the image center.
    pub fn centered(height: usize, width: usize, focal: f64) -> Self {
        Intrinsics { fx: focal, fy: focal, cx: width as f64 / 2.0, cy: height as f64 / 2.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0 && self.fx.is_finite() && self.fy.is_finite()) {
            return Err(Error::invalid(
                "intrinsics",
                format!("focal lengths must be positive, got fx={} fy={}", self.fx, self.fy),
            ));
        }
        if !(self.cx.is_finite() && self.cy.is_finite()) {
            return Err(Error::invalid("intrinsics", "principal point must be finite"));
        }
        Ok(())
    }

    /// Ray direction through pixel `(u, v)` with unit z component.
    pub fn ray(&self, u: f64, v: f64) -> [f64; 3] {
        [(u + 0.5 - self.cx) / self.fx, (v + 0.5 - self.cy) / self.fy, 1.0]
    }

    /// Camera-frame point at pixel `(u, v)` with the given depth.
    pub fn backproject(&self, u: f64, v: f64, depth: f64) -> [f64; 3] {
        let r = self.ray(u, v);
        [r[0] * depth, r[1] * depth, depth]
    }

    /// Pixel coordinates of a camera-frame point with positive z.
    pub fn project(&self, p: [f64; 3]) -> (f64, f64) {
        (self.fx * p[0] / p[2] + self.cx - 0.5, self.fy * p[1] / p[2] + self.cy - 0.5)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SceneKind {
    /// Ground plane below a level camera, with boxes standing on it.
    PlaneWorld,
    /// Camera inside a straight cylindrical pipe, looking down it.
    PipeWorld,
}

/// Missing fields in the text form take their [`Default`] values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneSpec {
    pub kind: SceneKind,
    pub height: usize,
    pub width: usize,
    pub intrinsics: Intrinsics,
    /// Camera height above the ground plane (plane_world), meters.
    pub camera_height: f64,
    /// Pipe radius (pipe_world), meters.
    pub pipe_radius: f64,
    /// Offset of the pipe axis from the camera center in x and y, meters.
    pub axis_offset: [f64; 2],
    /// Boxes in plane_world; albedo rings along the pipe in pipe_world.
    pub object_count: usize,
    /// Far wall distance; every depth lies in (0, d_max].
    pub d_max: f64,
    /// Multiply shading by an off-axis point-light falloff in image space,
    /// so intensity edges no longer follow depth edges alone.
    pub decorrelate_lighting: bool,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec::plane_world(64, 64, 0)
    }
}

impl SceneSpec {
    pub fn plane_world(height: usize, width: usize, seed: u64) -> Self {
        SceneSpec {
            kind: SceneKind::PlaneWorld,
            height,
            width,
            intrinsics: Intrinsics::centered(height, width, width as f64),
            camera_height: 1.5,
            pipe_radius: 1.0,
            axis_offset: [0.0, 0.0],
            object_count: 3,
            d_max: 10.0,
            decorrelate_lighting: false,
            seed,
        }
    }

    pub fn pipe_world(height: usize, width: usize, seed: u64) -> Self {
        SceneSpec { kind: SceneKind::PipeWorld, object_count: 6, ..SceneSpec::plane_world(height, width, seed) }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::invalid("scene_spec", m));
        self.intrinsics.validate()?;
        if self.height == 0 || self.width == 0 {
            return bad(format!("image size {}x{} is empty", self.height, self.width));
        }
        if !(self.d_max > 0.0 && self.d_max.is_finite()) {
            return bad(format!("d_max must be positive, got {}", self.d_max));
        }
        match self.kind {
            SceneKind::PlaneWorld if !(self.camera_height > 0.0 && self.camera_height.is_finite()) => {
                bad(format!("camera_height must be positive, got {}", self.camera_height))
            }
            SceneKind::PipeWorld => {
                if !(self.pipe_radius > 0.0 && self.pipe_radius.is_finite()) {
                    return bad(format!("pipe_radius must be positive, got {}", self.pipe_radius));
                }
                if self.axis_offset[0].hypot(self.axis_offset[1]) >= self.pipe_radius {
                    return bad("camera must be inside the pipe".into());
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// The `spec.txt` form.
    pub fn to_text(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::invalid("scene_spec", e.to_string()))
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let spec: SceneSpec = toml::from_str(text).map_err(|e| Error::invalid("scene_spec", e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }
}

/// An axis-aligned box standing on the ground plane.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SceneBox {
    pub min: [f64; 3],
    pub max: [f64; 3],
    pub albedo: [f64; 3],
}

impl SceneBox {
    /// Entry distance along `dir` from the origin and the face normal, if hit.
    pub fn intersect(&self, dir: [f64; 3]) -> Option<(f64, [f64; 3])> {
        let (mut t0, mut t1) = (0.0f64, f64::INFINITY);
        let mut axis = 0;
        for a in 0..3 {
            if dir[a] == 0.0 {
                if self.min[a] > 0.0 || self.max[a] < 0.0 {
                    return None;
                }
                continue;
            }
            let (mut near, mut far) = (self.min[a] / dir[a], self.max[a] / dir[a]);
            if near > far {
                std::mem::swap(&mut near, &mut far);
            }
            if near > t0 {
                t0 = near;
                axis = a;
            }
            t1 = t1.min(far);
        }
        if t0 > t1 || t0 <= 0.0 {
            return None;
        }
        let mut n = [0.0; 3];
        n[axis] = -dir[axis].signum();
        Some((t0, n))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    /// (1, 3, H, W) in [0, 1].
    pub rgb: Tensor,
    pub depth: DepthMap,
    /// Boxes placed in plane_world, empty for pipe_world.
    pub boxes: Vec<SceneBox>,
}

fn random_albedo(rng: &mut ChaCha8Rng) -> [f64; 3] {
    [rng.gen_range(0.2..1.0), rng.gen_range(0.2..1.0), rng.gen_range(0.2..1.0)]
}

fn place_boxes(spec: &SceneSpec, rng: &mut ChaCha8Rng) -> Vec<SceneBox> {
    let far = spec.d_max.min(9.0);
    (0..spec.object_count)
        .map(|_| {
            let z0 = rng.gen_range(0.35 * far..0.8 * far);
            let x0 = rng.gen_range(-0.3 * z0..0.3 * z0);
            let (sx, sy, sz) = (rng.gen_range(0.4..1.5), rng.gen_range(0.3..1.5), rng.gen_range(0.4..1.5));
            let top = spec.camera_height - sy;
            SceneBox {
                min: [x0 - sx / 2.0, top, z0],
                max: [x0 + sx / 2.0, spec.camera_height, (z0 + sz).min(spec.d_max)],
                albedo: random_albedo(rng),
            }
        })
        .collect()
}

/// Exact first hit along `dir` from the camera center inside a pipe with
/// axis parallel to z through `(ax, ay)`.
fn pipe_hit(dir: [f64; 3], radius: f64, ax: f64, ay: f64) -> Option<(f64, [f64; 3])> {
    let a = dir[0] * dir[0] + dir[1] * dir[1];
    if a == 0.0 {
        return None;
    }
    let b = -2.0 * (dir[0] * ax + dir[1] * ay);
    let c = ax * ax + ay * ay - radius * radius;
    let t = (-b + (b * b - 4.0 * a * c).sqrt()) / (2.0 * a);
    let (px, py) = (t * dir[0] - ax, t * dir[1] - ay);
    Some((t, [-px / radius, -py / radius, 0.0]))
}

/// Render a scene. Pure in `spec`: the same spec gives bitwise-identical
/// output.
pub fn generate_scene(spec: &SceneSpec) -> Result<Scene> {
    spec.validate()?;
    let (h, w) = (spec.height, spec.width);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let ground_albedo = random_albedo(&mut rng);
    let wall_albedo = random_albedo(&mut rng);
    let boxes = match spec.kind {
        SceneKind::PlaneWorld => place_boxes(spec, &mut rng),
        SceneKind::PipeWorld => Vec::new(),
    };
    let rings: Vec<[f64; 3]> = (0..spec.object_count.max(1)).map(|_| random_albedo(&mut rng)).collect();
    let ring_len = spec.d_max / rings.len() as f64;
    let light = [rng.gen_range(0.0..w as f64), rng.gen_range(0.0..h as f64)];
    let sigma = 0.35 * w.max(h) as f64;

    let mut depth = DepthMap::zeros(h, w);
    let mut rgb = Tensor::zeros(&[1, 3, h, w]);
    for v in 0..h {
        for u in 0..w {
            let dir = spec.intrinsics.ray(u as f64, v as f64);
            // Far wall.
            let mut hit = (spec.d_max, [0.0, 0.0, -1.0], wall_albedo);
            match spec.kind {
                SceneKind::PlaneWorld => {
                    if dir[1] > 0.0 {
                        let t = spec.camera_height / dir[1];
                        if t < hit.0 {
                            hit = (t, [0.0, -1.0, 0.0], ground_albedo);
                        }
                    }
                    for b in &boxes {
                        if let Some((t, n)) = b.intersect(dir) {
                            if t < hit.0 {
                                hit = (t, n, b.albedo);
                            }
                        }
                    }
                }
                SceneKind::PipeWorld => {
                    let [ax, ay] = spec.axis_offset;
                    if let Some((t, n)) = pipe_hit(dir, spec.pipe_radius, ax, ay) {
                        if t < hit.0 {
                            let ring = ((t / ring_len) as usize).min(rings.len() - 1);
                            hit = (t, n, rings[ring]);
                        }
                    }
                }
            }
            let (t, n, albedo) = hit;
            depth.set(u, v, t);
            // Headlamp at the camera: Lambertian term against the view ray.
            let len = (dir[0] * dir[0] + dir[1] * dir[1] + 1.0).sqrt();
            let cos = -(n[0] * dir[0] + n[1] * dir[1] + n[2] * dir[2]) / len;
            let mut shade = 0.15 + 0.85 * cos.max(0.0);
            if spec.decorrelate_lighting {
                let (du, dv) = (u as f64 + 0.5 - light[0], v as f64 + 0.5 - light[1]);
                shade *= 0.3 + 0.7 * (-(du * du + dv * dv) / (2.0 * sigma * sigma)).exp();
            }
            for (c, &a) in albedo.iter().enumerate() {
                rgb.set4(0, c, v, u, (a * shade).clamp(0.0, 1.0));
            }
        }
    }
    Ok(Scene { rgb, depth, boxes })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum SamplingPattern {
    UniformRandom,
    /// `count` evenly spaced rows, each shifted by up to `jitter` rows.
    Scanlines {
        count: usize,
        jitter: usize,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingSpec {
    pub pattern: SamplingPattern,
    /// Target fraction of valid pixels after dropout.
    pub density: f64,
    /// Independent loss probability of each sampled return.
    pub dropout: f64,
    pub seed: u64,
}

impl SamplingSpec {
    pub fn uniform(density: f64, seed: u64) -> Self {
        SamplingSpec { pattern: SamplingPattern::UniformRandom, density, dropout: 0.0, seed }
    }

    pub fn scanlines(count: usize, jitter: usize, density: f64, seed: u64) -> Self {
        SamplingSpec { pattern: SamplingPattern::Scanlines { count, jitter }, density, dropout: 0.0, seed }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.density > 0.0 && self.density <= 1.0) {
            return Err(Error::invalid("sampling", format!("density must lie in (0, 1], got {}", self.density)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid("sampling", format!("dropout must lie in [0, 1), got {}", self.dropout)));
        }
        if let SamplingPattern::Scanlines { count: 0, .. } = self.pattern {
            return Err(Error::invalid("sampling", "scanline count must be at least 1"));
        }
        Ok(())
    }
}

impl Default for SamplingSpec {
    fn default() -> Self {
        SamplingSpec::uniform(0.05, 0)
    }
}

/// Keep a LiDAR-like subset of `dense` with exact depths; everything else
/// becomes 0. The keep probability compensates dropout so the expected
/// final density is `sampling.density` where attainable.
pub fn sparse_sample(dense: &DepthMap, sampling: &SamplingSpec, d_max: f64) -> Result<SparseDepthFrame> {
    sampling.validate()?;
    if let Some(i) = dense.data().iter().position(|&d| d.is_nan() || d <= 0.0) {
        return Err(Error::invalid(
            "sparse_sample",
            format!("dense depth must be positive, got {} at index {i}", dense.data()[i]),
        ));
    }
    let (h, w) = (dense.height(), dense.width());
    let mut rng = ChaCha8Rng::seed_from_u64(sampling.seed);
    let pre = sampling.density / (1.0 - sampling.dropout);
    let mut keep = vec![false; h * w];
    match sampling.pattern {
        SamplingPattern::UniformRandom => {
            let p = pre.min(1.0);
            for k in keep.iter_mut() {
                *k = rng.gen::<f64>() < p;
            }
        }
        SamplingPattern::Scanlines { count, jitter } => {
            let mut rows: Vec<usize> = (0..count)
                .map(|i| {
                    let base = ((i as f64 + 0.5) * h as f64 / count as f64) as i64;
                    let j = jitter as i64;
                    let shift = if j > 0 { rng.gen_range(-j..=j) } else { 0 };
                    (base + shift).clamp(0, h as i64 - 1) as usize
                })
                .collect();
            rows.sort_unstable();
            rows.dedup();
            let p = pre * h as f64 / rows.len() as f64;
            if p > 1.0 {
                log::warn!(
                    "{} scanlines cannot reach density {}; keeping every pixel on them",
                    rows.len(),
                    sampling.density
                );
            }
            for &r in &rows {
                for k in &mut keep[r * w..(r + 1) * w] {
                    *k = rng.gen::<f64>() < p.min(1.0);
                }
            }
        }
    }
    if sampling.dropout > 0.0 {
        for k in keep.iter_mut().filter(|k| **k) {
            *k = rng.gen::<f64>() >= sampling.dropout;
        }
    }
    if !keep.iter().any(|&k| k) {
        return Err(Error::invalid("sparse_sample", "sampling retained no pixels"));
    }
    let data = dense.data().iter().zip(&keep).map(|(&d, &k)| if k { d } else { 0.0 }).collect();
    SparseDepthFrame::from_depth(DepthMap::new(h, w, data)?, d_max)
}

/// Horizontal flip of an image batch and its depth.
pub fn mirror_scene(rgb: &Tensor, depth: &DepthMap) -> (Tensor, DepthMap) {
    (rgb.flip_horizontal(), depth.flip_horizontal())
}
