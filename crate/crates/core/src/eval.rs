//! Evaluation: depth-map MSE/PSNR, point-cloud export, and the ablation
//! harness that grids camera count, window size, and the use of recovered
//! translation scales over a rendered dataset.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::correspondence::{detect_features, match_features, FeatureConfig};
use crate::epipolar::{decompose_essential, estimate_essential_ransac, RansacConfig};
use crate::filters::{gaussian5_depth, median5_depth};
use crate::imgio;
use crate::registration::{register_rig, PairObservation, Rig, RegistrationConfig};
use crate::sphere::{pixel_to_bearing, EquirectImage, PixelCoord};
use crate::sweep::{
    estimate_depth_map, make_candidates, rig_sweep_views, DepthMap, SweepConfig, SweepError,
};
use crate::synth::correspondences_for_poses;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("depth maps are {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),
    #[error("no jointly valid pixels between the two maps")]
    NoJointValidPixels,
    #[error("the ground-truth map has no valid pixels")]
    EmptyGroundTruth,
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("dataset: {0}")]
    BadDataset(String),
    #[error(transparent)]
    ImgIo(#[from] crate::imgio::ImgIoError),
    #[error(transparent)]
    Sweep(#[from] SweepError),
    #[error(transparent)]
    Epipolar(#[from] crate::epipolar::EpipolarError),
    #[error(transparent)]
    Registration(#[from] crate::registration::RegistrationError),
}

/// Depth-map accuracy on normalized depth (peak 1 after dividing both maps
/// by the maximum valid ground-truth depth).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Metrics {
    pub mse: f64,
    /// `-10 log10(mse)`; infinity when mse is exactly 0.
    pub psnr: f64,
    pub valid_count: usize,
    pub joint_valid_fraction: f64,
    /// The normalizer: maximum valid ground-truth depth in meters.
    pub normalization_max: f64,
}

/// MSE/PSNR over jointly valid pixels of both maps.
pub fn compute_metrics(est: &DepthMap, gt: &DepthMap) -> Result<Metrics, EvalError> {
    if est.dims() != gt.dims() {
        let (ew, eh) = est.dims();
        let (gw, gh) = gt.dims();
        return Err(EvalError::DimensionMismatch(ew, eh, gw, gh));
    }
    let (w, h) = gt.dims();
    let mut peak = 0.0f64;
    for v in 0..h {
        for u in 0..w {
            if let Some(d) = gt.get(u, v) {
                peak = peak.max(d);
            }
        }
    }
    if peak <= 0.0 {
        return Err(EvalError::EmptyGroundTruth);
    }
    let mut count = 0usize;
    let mut sum_sq = 0.0f64;
    for v in 0..h {
        for u in 0..w {
            if let (Some(e), Some(g)) = (est.get(u, v), gt.get(u, v)) {
                let diff = (e - g) / peak;
                sum_sq += diff * diff;
                count += 1;
            }
        }
    }
    if count == 0 {
        return Err(EvalError::NoJointValidPixels);
    }
    let mse = sum_sq / count as f64;
    let psnr = if mse == 0.0 {
        f64::INFINITY
    } else {
        -10.0 * mse.log10()
    };
    Ok(Metrics {
        mse,
        psnr,
        valid_count: count,
        joint_valid_fraction: count as f64 / (w * h) as f64,
        normalization_max: peak,
    })
}

/// Optional smoothing applied to a copy of the depth map before export.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct ExportFilters {
    /// 5x5 Gaussian smoothing with this sigma.
    pub gaussian_sigma: Option<f64>,
    /// 5x5 median filtering.
    pub median: bool,
}

/// Writes a binary little-endian PLY point cloud: one vertex per valid depth
/// pixel at `depth * bearing`, colored from the image. Returns the vertex
/// count.
pub fn export_ply(
    depth: &DepthMap,
    img: &EquirectImage,
    path: &Path,
    filters: &ExportFilters,
) -> Result<usize, EvalError> {
    if depth.dims() != img.dims() {
        let (dw, dh) = depth.dims();
        let (iw, ih) = img.dims();
        return Err(EvalError::DimensionMismatch(dw, dh, iw, ih));
    }
    let mut working = depth.clone();
    if let Some(sigma) = filters.gaussian_sigma {
        working = gaussian5_depth(&working, sigma);
    }
    if filters.median {
        working = median5_depth(&working);
    }

    let (w, h) = working.dims();
    let n = working.valid_count();
    let mut buf: Vec<u8> = Vec::with_capacity(128 + n * 15);
    write!(
        buf,
        "ply\nformat binary_little_endian 1.0\nelement vertex {n}\n\
         property float x\nproperty float y\nproperty float z\n\
         property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n"
    )
    .expect("write to vec");
    for v in 0..h {
        for u in 0..w {
            let Some(d) = working.get(u, v) else {
                continue;
            };
            let b = pixel_to_bearing(PixelCoord::new(u as f64, v as f64), (w, h))
                .expect("integer pixel in range");
            let p = d * b.as_vector();
            for coord in [p.x as f32, p.y as f32, p.z as f32] {
                buf.extend_from_slice(&coord.to_le_bytes());
            }
            let rgb = img.rgb(u, v);
            for c in rgb {
                buf.push((c * 255.0).round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    std::fs::write(path, buf).map_err(|source| EvalError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(n)
}

/// How the ablation harness obtains pairwise poses.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum PoseSource {
    /// Use the ground-truth rig as is.
    Known,
    /// Project seeded random scene points through the ground-truth poses and
    /// run essential estimation plus registration on them.
    SyntheticCorrespondences { points: usize, noise_sigma: f64 },
    /// Detect and match image features, then estimate and register.
    Detector,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationGrid {
    /// Total camera counts (including the reference view).
    pub cameras: Vec<usize>,
    /// Odd window sizes in pixels (7 means 7x7).
    pub windows: Vec<usize>,
    /// Whether recovered scales are applied; `false` forces unit scales.
    pub scaling: Vec<bool>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationConfig {
    pub seed: u64,
    pub pose_source: PoseSource,
    pub candidates: (f64, f64, usize),
    pub ransac: RansacConfig,
    pub kappa: f64,
    pub features: FeatureConfig,
    /// Record wall-clock runtimes in the report; off for byte-reproducible
    /// output.
    pub record_runtime: bool,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            pose_source: PoseSource::Detector,
            candidates: (0.05, 10.0, 200),
            ransac: RansacConfig::default(),
            kappa: 0.01,
            features: FeatureConfig::default(),
            record_runtime: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationRow {
    pub scene: String,
    pub cameras: usize,
    pub window: usize,
    pub scaling: bool,
    pub mse_x100: f64,
    pub psnr_db: f64,
    pub valid_fraction: f64,
    pub runtime_s: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("scene,cameras,window,scaling,mse_x100,psnr_db,valid_fraction,runtime_s\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{:.6},{:.6},{:.6},{:.3}\n",
                r.scene,
                r.cameras,
                r.window,
                if r.scaling { "on" } else { "off" },
                r.mse_x100,
                r.psnr_db,
                r.valid_fraction,
                r.runtime_s
            ));
        }
        out
    }
}

impl fmt::Display for AblationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<12} {:>7} {:>6} {:>7} {:>9} {:>8} {:>6} {:>9}",
            "scene", "cameras", "window", "scaling", "mse_x100", "psnr_db", "valid", "runtime_s"
        )?;
        for r in &self.rows {
            writeln!(
                f,
                "{:<12} {:>7} {:>6} {:>7} {:>9.3} {:>8.3} {:>6.3} {:>9.3}",
                r.scene,
                r.cameras,
                r.window,
                if r.scaling { "on" } else { "off" },
                r.mse_x100,
                r.psnr_db,
                r.valid_fraction,
                r.runtime_s
            )?;
        }
        Ok(())
    }
}

/// A dataset directory as written by the renderer: ground-truth rig, views,
/// and reference ground-truth depth.
pub struct Dataset {
    pub dir: std::path::PathBuf,
    pub rig_gt: Rig,
    pub images: Vec<(usize, EquirectImage)>,
    pub gt_depth: DepthMap,
}

impl Dataset {
    pub fn load(dir: &Path) -> Result<Self, EvalError> {
        let rig_path = dir.join("rig_gt.json");
        if !rig_path.exists() {
            return Err(EvalError::BadDataset(format!(
                "missing ground-truth rig {}",
                rig_path.display()
            )));
        }
        let rig_gt = Rig::load_json(&rig_path)?;
        let mut images = Vec::new();
        for view in &rig_gt.views {
            let path = dir.join(format!("view_{:02}.png", view.view));
            if !path.exists() {
                return Err(EvalError::BadDataset(format!(
                    "missing view image {}",
                    path.display()
                )));
            }
            images.push((view.view, imgio::load_image(&path)?));
        }
        let gt_path = dir.join(format!("depth_{:02}.pfm", rig_gt.reference));
        if !gt_path.exists() {
            return Err(EvalError::BadDataset(format!(
                "missing ground-truth depth {}",
                gt_path.display()
            )));
        }
        let gt_depth = imgio::read_pfm(&gt_path)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            rig_gt,
            images,
            gt_depth,
        })
    }

    fn image(&self, view: usize) -> &EquirectImage {
        &self
            .images
            .iter()
            .find(|(id, _)| *id == view)
            .expect("view image present")
            .1
    }
}

/// Registers a camera subset of a dataset according to the pose source.
pub fn register_subset(
    dataset: &Dataset,
    view_ids: &[usize],
    cfg: &AblationConfig,
) -> Result<Rig, EvalError> {
    let reference = dataset.rig_gt.reference;
    let others: Vec<usize> = view_ids
        .iter()
        .copied()
        .filter(|&v| v != reference)
        .collect();
    if others.is_empty() {
        return Err(EvalError::BadDataset("subset needs a non-reference view".into()));
    }
    let baseline_view = others[0];
    match &cfg.pose_source {
        PoseSource::Known => {
            let mut rig = dataset.rig_gt.clone();
            rig.views.retain(|v| v.view == reference || others.contains(&v.view));
            Ok(rig)
        }
        PoseSource::SyntheticCorrespondences { points, noise_sigma } => {
            let poses: Vec<(crate::registration::Mat3, crate::registration::Vec3)> =
                std::iter::once((crate::registration::Mat3::identity(), crate::registration::Vec3::zeros()))
                    .chain(others.iter().map(|&k| {
                        let view = dataset.rig_gt.view(k).expect("subset view in rig");
                        (
                            view.rotation,
                            dataset.rig_gt.baseline_length * view.scale * view.translation,
                        )
                    }))
                    .collect();
            let sets = correspondences_for_poses(&poses, *points, *noise_sigma, cfg.seed);
            let mut pairs = Vec::new();
            for (idx, &k) in others.iter().enumerate() {
                let mut set = sets[idx].clone();
                set.view_b = k;
                let matches = set.bearing_pairs();
                let ransac = RansacConfig {
                    seed: cfg.ransac.seed ^ (k as u64).wrapping_mul(0x9e37),
                    ..cfg.ransac
                };
                let (e, mask) = estimate_essential_ransac(&matches, &ransac)?;
                let pose = decompose_essential(&e, &matches, Some(&mask))?;
                pairs.push(PairObservation {
                    view: k,
                    pose,
                    matches: set,
                });
            }
            let reg = RegistrationConfig {
                kappa: cfg.kappa,
                baseline_view: Some(baseline_view),
                baseline_length: dataset.rig_gt.baseline_length,
            };
            Ok(register_rig(reference, &pairs, &reg)?)
        }
        PoseSource::Detector => {
            let ref_feats = detect_features(dataset.image(reference), &cfg.features);
            let feats: Vec<(usize, Vec<crate::correspondence::Feature>)> = others
                .par_iter()
                .map(|&k| (k, detect_features(dataset.image(k), &cfg.features)))
                .collect();
            let mut pairs = Vec::new();
            for (k, fk) in &feats {
                let set = match_features(reference, &ref_feats, *k, fk);
                let matches = set.bearing_pairs();
                let ransac = RansacConfig {
                    seed: cfg.ransac.seed ^ (*k as u64).wrapping_mul(0x9e37),
                    ..cfg.ransac
                };
                let (e, mask) = estimate_essential_ransac(&matches, &ransac)?;
                let pose = decompose_essential(&e, &matches, Some(&mask))?;
                pairs.push(PairObservation {
                    view: *k,
                    pose,
                    matches: set,
                });
            }
            let reg = RegistrationConfig {
                kappa: cfg.kappa,
                baseline_view: Some(baseline_view),
                baseline_length: dataset.rig_gt.baseline_length,
            };
            Ok(register_rig(reference, &pairs, &reg)?)
        }
    }
}

/// Runs the full grid over a dataset directory. Rows come out in a fixed
/// (cameras, window, scaling) order; an empty grid yields an empty report.
pub fn run_ablation(
    dataset_dir: &Path,
    grid: &AblationGrid,
    cfg: &AblationConfig,
) -> Result<AblationReport, EvalError> {
    let mut report = AblationReport::default();
    if grid.cameras.is_empty() || grid.windows.is_empty() || grid.scaling.is_empty() {
        return Ok(report);
    }
    let dataset = Dataset::load(dataset_dir)?;
    let scene_name = dataset_dir
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".to_string());
    let reference = dataset.rig_gt.reference;
    let mut all_views: Vec<usize> = dataset
        .rig_gt
        .views
        .iter()
        .map(|v| v.view)
        .filter(|&v| v != reference)
        .collect();
    all_views.sort_unstable();

    for &n_cams in &grid.cameras {
        if n_cams < 2 || n_cams > all_views.len() + 1 {
            return Err(EvalError::BadDataset(format!(
                "camera count {n_cams} outside 2..={}",
                all_views.len() + 1
            )));
        }
        let subset: Vec<usize> = std::iter::once(reference)
            .chain(all_views.iter().copied().take(n_cams - 1))
            .collect();
        let rig = register_subset(&dataset, &subset, cfg)?;
        let images: Vec<(usize, EquirectImage)> = subset
            .iter()
            .map(|&v| (v, dataset.image(v).clone()))
            .collect();
        for &window in &grid.windows {
            if window % 2 == 0 || window == 0 {
                return Err(EvalError::BadDataset(format!(
                    "window size {window} must be odd"
                )));
            }
            for &scaling in &grid.scaling {
                let start = Instant::now();
                let views = rig_sweep_views(&rig, &images, !scaling)?;
                let sweep_cfg = SweepConfig {
                    window_radius: (window - 1) / 2,
                    candidates: make_candidates(
                        cfg.candidates.0,
                        cfg.candidates.1,
                        cfg.candidates.2,
                    )?,
                    ..SweepConfig::default()
                };
                let est = estimate_depth_map(dataset.image(reference), &views, &sweep_cfg)?;
                let metrics = compute_metrics(&est, &dataset.gt_depth)?;
                report.rows.push(AblationRow {
                    scene: scene_name.clone(),
                    cameras: n_cams,
                    window,
                    scaling,
                    mse_x100: metrics.mse * 100.0,
                    psnr_db: metrics.psnr,
                    valid_fraction: metrics.joint_valid_fraction,
                    runtime_s: if cfg.record_runtime {
                        start.elapsed().as_secs_f64()
                    } else {
                        0.0
                    },
                });
            }
        }
    }
    Ok(report)
}
