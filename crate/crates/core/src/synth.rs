//! Procedural equirectangular renderer with analytic ground-truth depth.
//!
//! Scenes are axis-aligned box rooms (viewed from inside) with optional
//! spheres and cuboids, textured by a 3D checker pattern plus smooth value
//! noise. Rays are cast per pixel through the spherical camera model; the
//! nearest hit gives the color and the Euclidean ray depth. A companion
//! generator produces noiseless or noise-injected bearing correspondences
//! for posed view sets with known ground truth.

use std::path::Path;

use nalgebra::{Matrix3, Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::correspondence::{Correspondence, CorrespondenceSet};
use crate::imgio;
use crate::registration::{Rig, RigView};
use crate::sphere::{pixel_to_bearing, Bearing, EquirectImage, PixelCoord};
use crate::sweep::DepthMap;

pub type Mat3 = Matrix3<f64>;
pub type Vec3 = Vector3<f64>;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("camera at ({0:.3}, {1:.3}, {2:.3}) is not inside free space")]
    CameraOutsideFreeSpace(f64, f64, f64),
    #[error("scene invalid: {0}")]
    BadScene(String),
    #[error("ray escaped the room; the scene is not closed")]
    RayMiss,
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("file error: {0}")]
    File(String),
    #[error(transparent)]
    ImgIo(#[from] crate::imgio::ImgIoError),
    #[error(transparent)]
    Registration(#[from] crate::registration::RegistrationError),
}

/// Checker-plus-noise surface texture. The checker is a 3D lattice with the
/// given period in meters; value noise modulates brightness with cells of
/// `noise_cell` meters and relative amplitude `noise_amp`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Texture {
    pub checker_period: f64,
    pub color_a: [f64; 3],
    pub color_b: [f64; 3],
    pub noise_amp: f64,
    pub noise_cell: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum Primitive {
    Sphere {
        center: [f64; 3],
        radius: f64,
        texture: Texture,
    },
    Cuboid {
        min: [f64; 3],
        max: [f64; 3],
        texture: Texture,
    },
}

/// Axis-aligned box room centered at the origin, walls viewed from inside.
///
/// `wall_textures` order: +X, -X, +Y, -Y, +Z, -Z.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SceneSpec {
    pub room_size: [f64; 3],
    pub wall_textures: [Texture; 6],
    pub primitives: Vec<Primitive>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SceneFile {
    schema: u32,
    scene: SceneSpec,
}

impl SceneSpec {
    pub fn save_json(&self, path: &Path) -> Result<(), SynthError> {
        let file = SceneFile {
            schema: 1,
            scene: self.clone(),
        };
        let text = serde_json::to_string_pretty(&file).expect("scene serializes");
        std::fs::write(path, text).map_err(|source| SynthError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load_json(path: &Path) -> Result<Self, SynthError> {
        let text = std::fs::read_to_string(path).map_err(|source| SynthError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let file: SceneFile = serde_json::from_str(&text)
            .map_err(|e| SynthError::File(format!("{}: {e}", path.display())))?;
        if file.schema != 1 {
            return Err(SynthError::File(format!(
                "{}: unsupported schema {}",
                path.display(),
                file.schema
            )));
        }
        Ok(file.scene)
    }

    fn validate(&self) -> Result<(), SynthError> {
        if self.room_size.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
            return Err(SynthError::BadScene("room dimensions must be positive".into()));
        }
        for p in &self.primitives {
            match p {
                Primitive::Sphere { radius, .. } if *radius <= 0.0 => {
                    return Err(SynthError::BadScene("sphere radius must be positive".into()));
                }
                Primitive::Cuboid { min, max, .. }
                    if min.iter().zip(max).any(|(a, b)| a >= b) =>
                {
                    return Err(SynthError::BadScene("cuboid min must be below max".into()));
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// True when a point is inside the room and outside every primitive,
    /// with a small safety margin.
    pub fn in_free_space(&self, p: &Vec3) -> bool {
        let margin = 0.05;
        for a in 0..3 {
            if p[a].abs() >= self.room_size[a] / 2.0 - margin {
                return false;
            }
        }
        for prim in &self.primitives {
            match prim {
                Primitive::Sphere { center, radius, .. } => {
                    let c = Vec3::new(center[0], center[1], center[2]);
                    if (p - c).norm() <= radius + margin {
                        return false;
                    }
                }
                Primitive::Cuboid { min, max, .. } => {
                    if (0..3).all(|a| p[a] > min[a] - margin && p[a] < max[a] + margin) {
                        return false;
                    }
                }
            }
        }
        true
    }
}

/// Camera placement: position in meters and a camera-to-world rotation
/// (world direction = rotation * bearing).
#[derive(Debug, Clone, PartialEq)]
pub struct CameraPose {
    pub position: Vec3,
    pub rotation: Mat3,
}

impl CameraPose {
    pub fn new(position: Vec3, rotation: Mat3) -> Self {
        Self { position, rotation }
    }

    /// Builds the rotation from roll/pitch/yaw in degrees (x-y-z order).
    pub fn from_rpy_degrees(position: Vec3, rpy_deg: [f64; 3]) -> Self {
        let r = Rotation3::from_euler_angles(
            rpy_deg[0].to_radians(),
            rpy_deg[1].to_radians(),
            rpy_deg[2].to_radians(),
        );
        Self {
            position,
            rotation: *r.matrix(),
        }
    }

    /// Extrinsics of the relative pose from `reference` into `self`:
    /// `x_self = R x_ref + t`.
    pub fn relative_from(&self, reference: &CameraPose) -> (Mat3, Vec3) {
        let r = self.rotation.transpose() * reference.rotation;
        let t = self.rotation.transpose() * (reference.position - self.position);
        (r, t)
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RenderOptions {
    pub width: usize,
    pub height: usize,
    /// Color samples per pixel axis; depth always uses the center ray.
    pub supersample: usize,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            width: 512,
            height: 256,
            supersample: 1,
        }
    }
}

fn hash3(salt: u64, x: i64, y: i64, z: i64) -> f64 {
    let mut h = salt ^ 0x9e37_79b9_7f4a_7c15;
    for v in [x as u64, y as u64, z as u64] {
        h ^= v.wrapping_mul(0xbf58_476d_1ce4_e5b9);
        h = h.rotate_left(31).wrapping_mul(0x94d0_49bb_1331_11eb);
    }
    h ^= h >> 33;
    h = h.wrapping_mul(0xff51_afd7_ed55_8ccd);
    h ^= h >> 33;
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn smoothstep(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

/// Smooth value noise in [0, 1] on a unit lattice.
fn value_noise(salt: u64, p: &Vec3) -> f64 {
    let base = [p.x.floor(), p.y.floor(), p.z.floor()];
    let frac = [
        smoothstep(p.x - base[0]),
        smoothstep(p.y - base[1]),
        smoothstep(p.z - base[2]),
    ];
    let (x0, y0, z0) = (base[0] as i64, base[1] as i64, base[2] as i64);
    let mut acc = 0.0;
    for (dz, wz) in [(0, 1.0 - frac[2]), (1, frac[2])] {
        for (dy, wy) in [(0, 1.0 - frac[1]), (1, frac[1])] {
            for (dx, wx) in [(0, 1.0 - frac[0]), (1, frac[0])] {
                acc += wx * wy * wz * hash3(salt, x0 + dx, y0 + dy, z0 + dz);
            }
        }
    }
    acc
}

// Keeps lattice boundaries off the axis-aligned walls.
const LATTICE_OFFSET: Vec3 = Vec3::new(0.1337, 0.2113, 0.3141);

fn shade(tex: &Texture, p: &Vec3, salt: u64) -> [f64; 3] {
    let q = p / tex.checker_period + LATTICE_OFFSET;
    let parity =
        (q.x.floor() as i64 + q.y.floor() as i64 + q.z.floor() as i64).rem_euclid(2) == 0;
    let base = if parity { tex.color_a } else { tex.color_b };
    let gain = if tex.noise_amp > 0.0 && tex.noise_cell > 0.0 {
        let n = value_noise(salt, &(p / tex.noise_cell + LATTICE_OFFSET * 7.0));
        1.0 + tex.noise_amp * (n - 0.5)
    } else {
        1.0
    };
    [
        (base[0] * gain).clamp(0.0, 1.0),
        (base[1] * gain).clamp(0.0, 1.0),
        (base[2] * gain).clamp(0.0, 1.0),
    ]
}

struct Hit {
    t: f64,
    color: [f64; 3],
}

/// Nearest intersection of a ray from inside the room; walls are always hit,
/// primitives may be closer.
fn cast_ray(scene: &SceneSpec, origin: &Vec3, dir: &Vec3) -> Option<Hit> {
    let mut best: Option<Hit> = None;

    // Room walls: textures ordered +X, -X, +Y, -Y, +Z, -Z.
    for axis in 0..3 {
        for (side, face) in [(1.0f64, 2 * axis), (-1.0f64, 2 * axis + 1)] {
            let plane = side * scene.room_size[axis] / 2.0;
            let denom = dir[axis];
            if denom * side <= 1e-15 {
                continue; // moving away from or parallel to this wall
            }
            let t = (plane - origin[axis]) / denom;
            if t <= 1e-12 {
                continue;
            }
            if best.as_ref().is_some_and(|b| b.t <= t) {
                continue;
            }
            let mut hit = origin + t * dir;
            // Snap onto the exact plane so the texture lattice is stable.
            hit[axis] = plane;
            let inside = (0..3).all(|a| {
                a == axis || hit[a].abs() <= scene.room_size[a] / 2.0 + 1e-9
            });
            if inside {
                best = Some(Hit {
                    t,
                    color: shade(&scene.wall_textures[face], &hit, face as u64),
                });
            }
        }
    }

    for (pi, prim) in scene.primitives.iter().enumerate() {
        let salt = 101 + pi as u64;
        match prim {
            Primitive::Sphere {
                center,
                radius,
                texture,
            } => {
                let c = Vec3::new(center[0], center[1], center[2]);
                let oc = origin - c;
                let b = oc.dot(dir);
                let disc = b * b - (oc.norm_squared() - radius * radius);
                if disc <= 0.0 {
                    continue;
                }
                let sqrt_disc = disc.sqrt();
                let t = if -b - sqrt_disc > 1e-12 {
                    -b - sqrt_disc
                } else if -b + sqrt_disc > 1e-12 {
                    -b + sqrt_disc
                } else {
                    continue;
                };
                if best.as_ref().is_some_and(|bst| bst.t <= t) {
                    continue;
                }
                let hit = origin + t * dir;
                best = Some(Hit {
                    t,
                    color: shade(texture, &hit, salt),
                });
            }
            Primitive::Cuboid { min, max, texture } => {
                let mut t_enter = f64::NEG_INFINITY;
                let mut t_exit = f64::INFINITY;
                let mut ok = true;
                for a in 0..3 {
                    if dir[a].abs() < 1e-15 {
                        if origin[a] < min[a] || origin[a] > max[a] {
                            ok = false;
                            break;
                        }
                        continue;
                    }
                    let t0 = (min[a] - origin[a]) / dir[a];
                    let t1 = (max[a] - origin[a]) / dir[a];
                    let (lo, hi) = if t0 < t1 { (t0, t1) } else { (t1, t0) };
                    t_enter = t_enter.max(lo);
                    t_exit = t_exit.min(hi);
                }
                if !ok || t_enter > t_exit || t_enter <= 1e-12 {
                    continue;
                }
                if best.as_ref().is_some_and(|bst| bst.t <= t_enter) {
                    continue;
                }
                let hit = origin + t_enter * dir;
                best = Some(Hit {
                    t: t_enter,
                    color: shade(texture, &hit, salt),
                });
            }
        }
    }
    best
}

/// Renders one equirectangular view with its ground-truth Euclidean depth.
///
/// Color may be supersampled; depth always comes from the pixel-center ray.
/// Rendering is pure: identical inputs give identical outputs.
pub fn render_view(
    scene: &SceneSpec,
    pose: &CameraPose,
    opts: &RenderOptions,
) -> Result<(EquirectImage, DepthMap), SynthError> {
    scene.validate()?;
    if !scene.in_free_space(&pose.position) {
        return Err(SynthError::CameraOutsideFreeSpace(
            pose.position.x,
            pose.position.y,
            pose.position.z,
        ));
    }
    let (w, h) = (opts.width, opts.height);
    let ss = opts.supersample.max(1);
    let dims = (w, h);

    let rows: Vec<(Vec<[f64; 3]>, Vec<f64>)> = (0..h)
        .into_par_iter()
        .map(|v| {
            let mut colors = vec![[0.0; 3]; w];
            let mut depths = vec![f64::NAN; w];
            for u in 0..w {
                // Depth from the center ray.
                let b = pixel_to_bearing(PixelCoord::new(u as f64, v as f64), dims)
                    .expect("integer pixel in range");
                let dir = pose.rotation * b.as_vector();
                if let Some(hit) = cast_ray(scene, &pose.position, &dir) {
                    depths[u] = hit.t;
                }
                // Color, averaged over sub-pixel samples.
                let mut acc = [0.0f64; 3];
                for sv in 0..ss {
                    for su in 0..ss {
                        let du = (su as f64 + 0.5) / ss as f64 - 0.5;
                        let dv = (sv as f64 + 0.5) / ss as f64 - 0.5;
                        let p = PixelCoord::new(u as f64 + du, v as f64 + dv);
                        let b = pixel_to_bearing(p, dims).expect("finite");
                        let dir = pose.rotation * b.as_vector();
                        let c = cast_ray(scene, &pose.position, &dir)
                            .map(|hit| hit.color)
                            .unwrap_or([0.0; 3]);
                        acc[0] += c[0];
                        acc[1] += c[1];
                        acc[2] += c[2];
                    }
                }
                let n = (ss * ss) as f64;
                colors[u] = [acc[0] / n, acc[1] / n, acc[2] / n];
            }
            (colors, depths)
        })
        .collect();

    let mut img = EquirectImage::new(w, h)
        .map_err(|e| SynthError::BadScene(format!("render dims: {e}")))?;
    let mut d_min = f64::INFINITY;
    let mut d_max = 0.0f64;
    for (v, (colors, depths)) in rows.iter().enumerate() {
        for u in 0..w {
            img.set(u, v, colors[u]);
            if depths[u].is_finite() {
                d_min = d_min.min(depths[u]);
                d_max = d_max.max(depths[u]);
            }
        }
    }
    if !d_min.is_finite() {
        return Err(SynthError::RayMiss);
    }
    let mut depth = DepthMap::new_invalid(w, h, d_min, d_max);
    for (v, (_, depths)) in rows.iter().enumerate() {
        for (u, &d) in depths.iter().enumerate() {
            if d.is_finite() {
                depth.set(u, v, d, 0.0);
            }
        }
    }
    Ok((img, depth))
}

/// Renders a posed rig into a dataset directory: `view_%02d.png`,
/// `depth_%02d.pfm`, `rig_gt.json`, `scene.json`.
///
/// View 0 is the reference; view 1 (when present) defines the baseline, and
/// the ground-truth rig stores unit translations, true scales, and the
/// metric baseline length.
pub fn render_rig(
    scene: &SceneSpec,
    poses: &[CameraPose],
    opts: &RenderOptions,
    out_dir: &Path,
) -> Result<Rig, SynthError> {
    if poses.is_empty() {
        return Err(SynthError::BadScene("rig needs at least one pose".into()));
    }
    std::fs::create_dir_all(out_dir).map_err(|source| SynthError::Io {
        path: out_dir.display().to_string(),
        source,
    })?;
    for (k, pose) in poses.iter().enumerate() {
        let (img, depth) = render_view(scene, pose, opts)?;
        imgio::save_png8(&img, &out_dir.join(format!("view_{k:02}.png")))?;
        imgio::write_pfm(&depth, &out_dir.join(format!("depth_{k:02}.pfm")))?;
    }
    scene.save_json(&out_dir.join("scene.json"))?;
    let rig = ground_truth_rig(poses)?;
    rig.save_json(&out_dir.join("rig_gt.json"))?;
    Ok(rig)
}

/// Ground-truth rig for a list of camera poses, with view 0 as reference and
/// view 1 as the baseline.
pub fn ground_truth_rig(poses: &[CameraPose]) -> Result<Rig, SynthError> {
    if poses.is_empty() {
        return Err(SynthError::BadScene("rig needs at least one pose".into()));
    }
    let reference = &poses[0];
    let baseline_length = if poses.len() > 1 {
        (poses[1].position - reference.position).norm()
    } else {
        0.0
    };
    if poses.len() > 1 && baseline_length < 1e-9 {
        return Err(SynthError::BadScene("baseline cameras coincide".into()));
    }
    let mut views = vec![RigView {
        view: 0,
        rotation: Mat3::identity(),
        translation: Vec3::zeros(),
        scale: 1.0,
        scaled_translation: Vec3::zeros(),
    }];
    for (k, pose) in poses.iter().enumerate().skip(1) {
        let (r, t) = pose.relative_from(reference);
        let len = t.norm();
        if len < 1e-9 {
            return Err(SynthError::BadScene(format!("camera {k} coincides with reference")));
        }
        let unit = t / len;
        let scale = len / baseline_length;
        views.push(RigView {
            view: k,
            rotation: r,
            translation: unit,
            scale,
            scaled_translation: scale * unit,
        });
    }
    Ok(Rig {
        reference: 0,
        baseline_pair: if poses.len() > 1 { Some((0, 1)) } else { None },
        kappa: 0.01,
        baseline_length,
        views,
    })
}

/// Ground truth for one generated pose-accuracy test.
#[derive(Debug, Clone)]
pub struct GtView {
    pub view: usize,
    /// Extrinsic rotation `x_k = R x_0 + t`.
    pub rotation: Mat3,
    pub translation_unit: Vec3,
    /// Baseline-length ratio relative to view 1.
    pub scale: f64,
}

#[derive(Debug, Clone)]
pub struct PoseTest {
    pub correspondences: Vec<CorrespondenceSet>,
    pub gt: Vec<GtView>,
    pub baseline_view: usize,
}

#[derive(Debug, Clone)]
pub struct PoseTestSpec {
    pub rotation_rpy_deg: [f64; 3],
    /// Translation of the baseline view; normalized internally.
    pub translation: [f64; 3],
    /// Baseline-length ratios of the additional views.
    pub scales: Vec<f64>,
    pub points: usize,
    /// Bearing noise in radians (tangent-plane Gaussian).
    pub noise_sigma: f64,
    pub seed: u64,
}

fn random_unit(rng: &mut ChaCha8Rng) -> Vec3 {
    loop {
        let v = Vec3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            return v / n;
        }
    }
}

fn perturb_bearing(b: Bearing, sigma: f64, rng: &mut ChaCha8Rng) -> Bearing {
    if sigma <= 0.0 {
        return b;
    }
    let v = b.as_vector();
    let helper = if v.x.abs() < 0.9 {
        Vec3::x()
    } else {
        Vec3::y()
    };
    let e1 = v.cross(&helper).normalize();
    let e2 = v.cross(&e1);
    // Box-Muller pair.
    let u1: f64 = rng.random_range(f64::EPSILON..1.0);
    let u2: f64 = rng.random_range(0.0..1.0);
    let mag = (-2.0 * u1.ln()).sqrt();
    let n1 = mag * (2.0 * std::f64::consts::PI * u2).cos() * sigma;
    let n2 = mag * (2.0 * std::f64::consts::PI * u2).sin() * sigma;
    Bearing::from_vector(v + n1 * e1 + n2 * e2).expect("perturbation keeps direction nonzero")
}

/// Generates bearing correspondences between view 0 and every other posed
/// view from random scene points, with optional tangent-plane bearing noise.
///
/// `poses` are extrinsics `(R_k, t_k)` with `x_k = R_k x_0 + t_k`; entry 0 is
/// ignored (identity implied). Points are sampled in a radial shell around
/// the reference camera and rejected near any camera center.
pub fn correspondences_for_poses(
    poses: &[(Mat3, Vec3)],
    n_points: usize,
    noise_sigma: f64,
    seed: u64,
) -> Vec<CorrespondenceSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers: Vec<Vec3> = poses
        .iter()
        .map(|(r, t)| -(r.transpose() * t))
        .collect();
    let mut points: Vec<Vec3> = Vec::with_capacity(n_points);
    while points.len() < n_points {
        let p = rng.random_range(2.0..6.0) * random_unit(&mut rng);
        if centers.iter().all(|c| (p - c).norm() > 0.3) {
            points.push(p);
        }
    }
    // One noisy reference-view observation per point, shared across all
    // pairs so three-view tracks stay joinable on exact bearing identity.
    let ref_bearings: Vec<Bearing> = points
        .iter()
        .map(|p| {
            let b0 = Bearing::from_vector(*p).expect("point away from origin");
            perturb_bearing(b0, noise_sigma, &mut rng)
        })
        .collect();
    let mut sets = Vec::new();
    for (k, (r, t)) in poses.iter().enumerate().skip(1) {
        let mut set = CorrespondenceSet::empty(0, k);
        for (p, b0) in points.iter().zip(&ref_bearings) {
            let q = r * p + t;
            let bk = Bearing::from_vector(q).expect("point away from camera");
            set.matches.push(Correspondence {
                a: *b0,
                b: perturb_bearing(bk, noise_sigma, &mut rng),
                distance: None,
            });
        }
        sets.push(set);
    }
    sets
}

/// Builds the multi-view pose-accuracy protocol: view 1 takes the requested
/// rotation and unit translation, additional views take the requested
/// baseline ratios with seeded directions and rotations.
pub fn make_pose_test(spec: &PoseTestSpec) -> PoseTest {
    let t_raw = Vec3::new(spec.translation[0], spec.translation[1], spec.translation[2]);
    let t1 = t_raw / t_raw.norm();
    let r1 = *Rotation3::from_euler_angles(
        spec.rotation_rpy_deg[0].to_radians(),
        spec.rotation_rpy_deg[1].to_radians(),
        spec.rotation_rpy_deg[2].to_radians(),
    )
    .matrix();

    // Auxiliary view placement comes from its own stream so point sampling
    // stays aligned with the seed.
    let mut place_rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x5858_1234_abcd_9876);
    let mut poses: Vec<(Mat3, Vec3)> = vec![(Mat3::identity(), Vec3::zeros()), (r1, t1)];
    let mut gt = vec![GtView {
        view: 1,
        rotation: r1,
        translation_unit: t1,
        scale: 1.0,
    }];
    for (i, &s) in spec.scales.iter().enumerate() {
        let rpy = [
            place_rng.random_range(-0.5..0.5),
            place_rng.random_range(-0.5..0.5),
            place_rng.random_range(-0.5..0.5),
        ];
        let rk = *Rotation3::from_euler_angles(rpy[0], rpy[1], rpy[2]).matrix();
        let dir = random_unit(&mut place_rng);
        let center = s * dir;
        let tk = -(rk * center);
        poses.push((rk, tk));
        gt.push(GtView {
            view: 2 + i,
            rotation: rk,
            translation_unit: tk / tk.norm(),
            scale: s,
        });
    }
    let correspondences =
        correspondences_for_poses(&poses, spec.points, spec.noise_sigma, spec.seed);
    PoseTest {
        correspondences,
        gt,
        baseline_view: 1,
    }
}

fn tex(
    period: f64,
    color_a: [f64; 3],
    color_b: [f64; 3],
    noise_amp: f64,
    noise_cell: f64,
) -> Texture {
    Texture {
        checker_period: period,
        color_a,
        color_b,
        noise_amp,
        noise_cell,
    }
}

/// The default textured box room used by the synthetic datasets: 6 x 5 x 3 m
/// with a sphere and a cuboid for depth discontinuities. Checker periods and
/// noise cells are sized to stay well-sampled at the default render widths.
pub fn default_scene() -> SceneSpec {
    SceneSpec {
        room_size: [6.0, 5.0, 3.0],
        wall_textures: [
            tex(0.80, [0.85, 0.35, 0.30], [0.95, 0.90, 0.80], 0.30, 0.50),
            tex(0.80, [0.30, 0.45, 0.85], [0.90, 0.92, 0.96], 0.30, 0.50),
            tex(0.80, [0.35, 0.75, 0.40], [0.93, 0.95, 0.88], 0.30, 0.50),
            tex(0.80, [0.90, 0.60, 0.25], [0.55, 0.55, 0.58], 0.30, 0.50),
            tex(0.80, [0.92, 0.92, 0.92], [0.75, 0.78, 0.82], 0.28, 0.50),
            tex(0.80, [0.55, 0.40, 0.28], [0.82, 0.72, 0.55], 0.30, 0.50),
        ],
        primitives: vec![
            Primitive::Sphere {
                center: [1.5, 1.0, -0.5],
                radius: 0.5,
                texture: tex(0.40, [0.60, 0.30, 0.70], [0.95, 0.85, 0.35], 0.25, 0.30),
            },
            Primitive::Cuboid {
                min: [-2.2, -1.8, -1.5],
                max: [-1.4, -1.0, -0.45],
                texture: tex(0.35, [0.25, 0.65, 0.65], [0.95, 0.95, 0.95], 0.25, 0.30),
            },
        ],
    }
}

/// Default 4-camera rig for the synthetic datasets. Identity rotations;
/// baselines spanning three different axes with scales (1, ~0.51, ~1.88), so
/// forcing unit scales visibly misplaces two cameras.
pub fn default_rig_poses() -> Vec<CameraPose> {
    let base = Vec3::new(-0.5, 0.3, -0.3);
    [
        Vec3::zeros(),
        Vec3::new(1.0, 0.0, 0.0),
        Vec3::new(0.0, -0.5, 0.1),
        Vec3::new(-1.2, 1.2, 0.8),
    ]
    .into_iter()
    .map(|offset| CameraPose::new(base + offset, Mat3::identity()))
    .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn cube_scene() -> SceneSpec {
        SceneSpec {
            room_size: [2.0, 2.0, 2.0],
            wall_textures: std::array::from_fn(|i| {
                tex(
                    0.5,
                    [0.1 * i as f64, 0.5, 0.5],
                    [0.9, 0.9, 0.9],
                    0.0,
                    0.0,
                )
            }),
            primitives: vec![],
        }
    }

    #[test]
    fn center_of_cube_axis_depths() {
        let scene = cube_scene();
        let pose = CameraPose::new(Vec3::zeros(), Mat3::identity());
        let opts = RenderOptions {
            width: 64,
            height: 32,
            supersample: 1,
        };
        let (_, depth) = render_view(&scene, &pose, &opts).unwrap();
        // +X, +Y, -X axes on the horizon row.
        assert_relative_eq!(depth.get(0, 16).unwrap(), 1.0, epsilon = 1e-12);
        assert_relative_eq!(depth.get(16, 16).unwrap(), 1.0, epsilon = 1e-12);
        assert_relative_eq!(depth.get(32, 16).unwrap(), 1.0, epsilon = 1e-12);
        assert_eq!(depth.valid_count(), 64 * 32);
    }

    #[test]
    fn corner_direction_depth() {
        // theta = pi/4, phi = acos(1/sqrt(3)) points at a cube corner.
        let scene = cube_scene();
        let pose = CameraPose::new(Vec3::zeros(), Mat3::identity());
        let (w, h) = (256usize, 128usize);
        let opts = RenderOptions {
            width: w,
            height: h,
            supersample: 1,
        };
        let (_, _depth) = render_view(&scene, &pose, &opts).unwrap();
        // Evaluate analytically through the ray caster at the exact angles.
        let phi = (1.0f64 / 3.0f64.sqrt()).acos();
        let dir = Vec3::new(
            (std::f64::consts::FRAC_PI_4).cos() * phi.sin(),
            (std::f64::consts::FRAC_PI_4).sin() * phi.sin(),
            phi.cos(),
        );
        let hit = cast_ray(&scene, &Vec3::zeros(), &dir).unwrap();
        assert_relative_eq!(hit.t, 3.0f64.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn render_is_deterministic() {
        let scene = default_scene();
        let pose = CameraPose::new(Vec3::new(-0.3, 0.2, -0.25), Mat3::identity());
        let opts = RenderOptions {
            width: 64,
            height: 32,
            supersample: 2,
        };
        let (img1, d1) = render_view(&scene, &pose, &opts).unwrap();
        let (img2, d2) = render_view(&scene, &pose, &opts).unwrap();
        assert_eq!(img1, img2);
        assert_eq!(d1, d2);
    }

    #[test]
    fn camera_outside_room_errors() {
        let scene = cube_scene();
        let pose = CameraPose::new(Vec3::new(5.0, 0.0, 0.0), Mat3::identity());
        let opts = RenderOptions {
            width: 16,
            height: 8,
            supersample: 1,
        };
        assert!(matches!(
            render_view(&scene, &pose, &opts),
            Err(SynthError::CameraOutsideFreeSpace(..))
        ));
    }

    #[test]
    fn ray_depth_matches_closed_form_sphere() {
        let scene = SceneSpec {
            room_size: [10.0, 10.0, 10.0],
            wall_textures: std::array::from_fn(|_| tex(1.0, [0.2; 3], [0.8; 3], 0.0, 0.0)),
            primitives: vec![Primitive::Sphere {
                center: [3.0, 0.0, 0.0],
                radius: 1.0,
                texture: tex(0.3, [0.5; 3], [0.9; 3], 0.0, 0.0),
            }],
        };
        let hit = cast_ray(&scene, &Vec3::zeros(), &Vec3::x()).unwrap();
        assert_relative_eq!(hit.t, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn pose_test_noiseless_bearings_are_exact() {
        let spec = PoseTestSpec {
            rotation_rpy_deg: [10.0, 20.0, 30.0],
            translation: [1.0, 0.0, 0.0],
            scales: vec![0.57, 1.17, 1.73],
            points: 50,
            noise_sigma: 0.0,
            seed: 1,
        };
        let test = make_pose_test(&spec);
        assert_eq!(test.correspondences.len(), 4);
        assert_eq!(test.gt.len(), 4);
        // Every correspondence satisfies the epipolar constraint of its GT
        // pose exactly.
        for (set, gt) in test.correspondences.iter().zip(&test.gt) {
            let e = crate::epipolar::EssentialMatrix::from_pose(
                &gt.rotation,
                &gt.translation_unit,
            )
            .unwrap();
            for m in &set.matches {
                assert!(e.residual(&m.a, &m.b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rig_ground_truth_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let scene = cube_scene();
        let poses = vec![
            CameraPose::new(Vec3::new(0.0, 0.0, 0.0), Mat3::identity()),
            CameraPose::new(Vec3::new(0.4, 0.0, 0.0), Mat3::identity()),
            CameraPose::new(Vec3::new(0.0, 0.3, 0.1), Mat3::identity()),
        ];
        let opts = RenderOptions {
            width: 32,
            height: 16,
            supersample: 1,
        };
        let rig = render_rig(&scene, &poses, &opts, dir.path()).unwrap();
        let loaded = Rig::load_json(&dir.path().join("rig_gt.json")).unwrap();
        assert_eq!(rig, loaded);
        assert!(dir.path().join("view_02.png").exists());
        assert!(dir.path().join("depth_01.pfm").exists());
        assert!(dir.path().join("scene.json").exists());
        // Scales follow baseline ratios.
        assert_relative_eq!(rig.view(1).unwrap().scale, 1.0, epsilon = 1e-12);
        let expected = (0.3f64 * 0.3 + 0.1 * 0.1).sqrt() / 0.4;
        assert_relative_eq!(rig.view(2).unwrap().scale, expected, epsilon = 1e-12);
    }

    #[test]
    fn single_pose_rig() {
        let poses = vec![CameraPose::new(Vec3::zeros(), Mat3::identity())];
        let rig = ground_truth_rig(&poses).unwrap();
        assert_eq!(rig.views.len(), 1);
        assert_eq!(rig.baseline_pair, None);
    }
}
