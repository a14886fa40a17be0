//! Multi-view rig registration: triangulate per-feature depths against the
//! reference baseline, recover per-view translation scales by κ-clustering,
//! and emit metrically consistent scaled translations.
//!
//! The reference view `i` is fixed at the origin. One pair `(i, j)` defines
//! the unit baseline; every other view `k` gets a scale
//! `s_k = d_ij / d_ik` so that `s_k * t_ik` matches the reference-baseline
//! units.

use std::collections::HashMap;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::correspondence::CorrespondenceSet;
use crate::epipolar::RelativePose;
use crate::sphere::Bearing;

pub type Mat3 = Matrix3<f64>;
pub type Vec3 = Vector3<f64>;

#[derive(Debug, Error)]
pub enum RegistrationError {
    #[error("bearings are parallel to the baseline; triangulation is degenerate")]
    DegenerateTriangulation,
    #[error("depth must be positive and finite, got {0}")]
    InvalidDepth(f64),
    #[error("no scale samples to cluster")]
    NoSamples,
    #[error("cluster distance kappa must be positive, got {0}")]
    InvalidKappa(f64),
    #[error("view {0} shares no feature tracks with the baseline pair")]
    UnregistrableView(usize),
    #[error("view {0}: every shared track is degenerate or behind a camera")]
    DegenerateTracks(usize),
    #[error("no pairwise poses were supplied")]
    EmptyRig,
    #[error("baseline view {0} is not among the supplied pairs")]
    MissingBaselineView(usize),
    #[error("pair for view {view}: {reason}")]
    InconsistentPair { view: usize, reason: String },
    #[error("rig file {path}: {reason}")]
    BadRigFile { path: String, reason: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Depth of a point along `b_i`, in units of the baseline length, from the
/// bearings of the same point in two views sharing that baseline.
///
/// `b_i` and `b_k` must be expressed in the same (de-rotated) frame, and
/// `baseline` is the unit direction from camera i to camera k in that frame.
/// For a point seen on the same side of the baseline by both cameras this is
/// the law-of-sines solution `d = sin(beta) / sin(beta - theta_a)` with
/// `theta_a = acos(b_i · baseline)` and `beta = acos(b_k · baseline)`. The
/// angles are evaluated with a sign in the epipolar plane (`b_i` defines the
/// positive side), so impossible configurations come out negative instead of
/// aliasing onto positive depths.
///
/// The result is signed: a non-positive value means the point triangulates
/// behind a camera (useful for cheirality counting, invalid as a depth).
pub fn triangulate_initial_depth(
    b_i: &Bearing,
    b_k: &Bearing,
    baseline: &Bearing,
) -> Result<f64, RegistrationError> {
    let axis = baseline.as_vector();
    let cos_a = b_i.dot(baseline);
    let perp_i = b_i.as_vector() - cos_a * axis;
    let side = perp_i.norm();
    if side < 1e-12 {
        // b_i runs along the baseline; no triangle exists.
        return Err(RegistrationError::DegenerateTriangulation);
    }
    let normal = perp_i / side;
    let theta_a = side.atan2(cos_a);
    let cos_b = b_k.dot(baseline);
    let perp_k = b_k.as_vector() - cos_b * axis;
    let beta = perp_k.dot(&normal).atan2(cos_b);
    let denom = (beta - theta_a).sin();
    if denom.abs() < 1e-12 {
        return Err(RegistrationError::DegenerateTriangulation);
    }
    Ok(beta.sin() / denom)
}

/// Scaling factor `s_k = d_ij / d_ik` between two positive depths of the
/// same feature.
pub fn scale_factor(d_ij: f64, d_ik: f64) -> Result<f64, RegistrationError> {
    if !(d_ij.is_finite() && d_ij > 0.0) {
        return Err(RegistrationError::InvalidDepth(d_ij));
    }
    if !(d_ik.is_finite() && d_ik > 0.0) {
        return Err(RegistrationError::InvalidDepth(d_ik));
    }
    Ok(d_ij / d_ik)
}

/// Result of κ-clustering a list of per-feature scale samples.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleEstimate {
    pub samples: Vec<f64>,
    pub chosen: f64,
    pub cluster_size: usize,
    pub kappa: f64,
}

/// Picks the sample whose κ-neighborhood (inclusive, counting itself) holds
/// the most samples.
///
/// Ties at the maximum count break toward the candidate whose neighborhood
/// carries the largest proximity mass `sum(κ - |s - c|)`, then toward the
/// smaller value. This keeps the choice centered in the densest clump and
/// guarantees that duplicating the chosen sample never changes the outcome.
pub fn cluster_scales(samples: &[f64], kappa: f64) -> Result<ScaleEstimate, RegistrationError> {
    if samples.is_empty() {
        return Err(RegistrationError::NoSamples);
    }
    if !(kappa.is_finite() && kappa > 0.0) {
        return Err(RegistrationError::InvalidKappa(kappa));
    }
    let mut sorted: Vec<f64> = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let neighborhood = |s: f64| {
        let lo = sorted.partition_point(|&x| x < s - kappa);
        let hi = sorted.partition_point(|&x| x <= s + kappa);
        &sorted[lo..hi]
    };
    let mut best: Option<(usize, f64, f64)> = None; // (count, mass, value)
    for &s in sorted.iter() {
        let near = neighborhood(s);
        let count = near.len();
        let mass: f64 = near.iter().map(|&x| kappa - (x - s).abs()).sum();
        let better = match best {
            None => true,
            Some((bc, bm, bv)) => {
                count > bc || (count == bc && (mass > bm || (mass == bm && s < bv)))
            }
        };
        if better {
            best = Some((count, mass, s));
        }
    }
    let (cluster_size, _, chosen) = best.expect("non-empty samples");
    Ok(ScaleEstimate {
        samples: samples.to_vec(),
        chosen,
        cluster_size,
        kappa,
    })
}

/// One registered view of a rig, relative to the reference view.
#[derive(Debug, Clone, PartialEq)]
pub struct RigView {
    pub view: usize,
    /// Rotation taking reference-frame points into this view's frame.
    pub rotation: Mat3,
    /// Unit translation of the extrinsic `x_k = R x_i + t`.
    pub translation: Vec3,
    /// Recovered scale; 1 for the baseline view, exact.
    pub scale: f64,
    /// `scale * translation`, in reference-baseline units.
    pub scaled_translation: Vec3,
}

/// A registered multi-view rig around one reference view.
#[derive(Debug, Clone, PartialEq)]
pub struct Rig {
    pub reference: usize,
    pub baseline_pair: Option<(usize, usize)>,
    pub kappa: f64,
    /// Metric length in meters of the reference baseline; multiplies the
    /// scaled translations when metric depth is required.
    pub baseline_length: f64,
    pub views: Vec<RigView>,
}

impl Rig {
    pub fn view(&self, id: usize) -> Option<&RigView> {
        self.views.iter().find(|v| v.view == id)
    }

    /// Views other than the reference, in ascending id order.
    pub fn non_reference_views(&self) -> impl Iterator<Item = &RigView> {
        self.views.iter().filter(move |v| v.view != self.reference)
    }

    /// Metric translation for a view: `baseline_length * s * t`, with the
    /// scale optionally forced to 1 for ablations.
    pub fn metric_translation(&self, view: &RigView, force_unit_scale: bool) -> Vec3 {
        let s = if force_unit_scale { 1.0 } else { view.scale };
        self.baseline_length * s * view.translation
    }

    pub fn save_json(&self, path: &Path) -> Result<(), RegistrationError> {
        let file = RigFile::from_rig(self);
        let text = serde_json::to_string_pretty(&file).expect("rig serializes");
        std::fs::write(path, text).map_err(|source| RegistrationError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load_json(path: &Path) -> Result<Self, RegistrationError> {
        let text = std::fs::read_to_string(path).map_err(|source| RegistrationError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let file: RigFile =
            serde_json::from_str(&text).map_err(|e| RegistrationError::BadRigFile {
                path: path.display().to_string(),
                reason: e.to_string(),
            })?;
        file.into_rig()
            .map_err(|reason| RegistrationError::BadRigFile {
                path: path.display().to_string(),
                reason,
            })
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct RigViewFile {
    view: usize,
    r: [f64; 9],
    t: [f64; 3],
    s: f64,
    t_scaled: [f64; 3],
}

#[derive(Debug, Serialize, Deserialize)]
struct RigFile {
    schema: u32,
    reference: usize,
    baseline_pair: Option<(usize, usize)>,
    kappa: f64,
    baseline_length: f64,
    views: Vec<RigViewFile>,
}

pub(crate) fn mat3_to_row_major(m: &Mat3) -> [f64; 9] {
    let mut out = [0.0; 9];
    for r in 0..3 {
        for c in 0..3 {
            out[r * 3 + c] = m[(r, c)];
        }
    }
    out
}

pub(crate) fn mat3_from_row_major(a: &[f64; 9]) -> Mat3 {
    Mat3::new(a[0], a[1], a[2], a[3], a[4], a[5], a[6], a[7], a[8])
}

impl RigFile {
    fn from_rig(rig: &Rig) -> Self {
        Self {
            schema: 1,
            reference: rig.reference,
            baseline_pair: rig.baseline_pair,
            kappa: rig.kappa,
            baseline_length: rig.baseline_length,
            views: rig
                .views
                .iter()
                .map(|v| RigViewFile {
                    view: v.view,
                    r: mat3_to_row_major(&v.rotation),
                    t: [v.translation.x, v.translation.y, v.translation.z],
                    s: v.scale,
                    t_scaled: [
                        v.scaled_translation.x,
                        v.scaled_translation.y,
                        v.scaled_translation.z,
                    ],
                })
                .collect(),
        }
    }

    fn into_rig(self) -> Result<Rig, String> {
        if self.schema != 1 {
            return Err(format!("unsupported schema {}", self.schema));
        }
        let mut views = Vec::with_capacity(self.views.len());
        for v in &self.views {
            let r = mat3_from_row_major(&v.r);
            let orth = (r.transpose() * r - Mat3::identity()).norm();
            if orth > 1e-6 || (r.determinant() - 1.0).abs() > 1e-6 {
                return Err(format!("view {}: rotation is not orthonormal", v.view));
            }
            if !v.s.is_finite() || (v.view != self.reference && v.s <= 0.0) {
                return Err(format!("view {}: invalid scale {}", v.view, v.s));
            }
            views.push(RigView {
                view: v.view,
                rotation: r,
                translation: Vec3::new(v.t[0], v.t[1], v.t[2]),
                scale: v.s,
                scaled_translation: Vec3::new(v.t_scaled[0], v.t_scaled[1], v.t_scaled[2]),
            });
        }
        Ok(Rig {
            reference: self.reference,
            baseline_pair: self.baseline_pair,
            kappa: self.kappa,
            baseline_length: self.baseline_length,
            views,
        })
    }
}

/// Pairwise pose plus the correspondences it was estimated from.
#[derive(Debug, Clone)]
pub struct PairObservation {
    pub view: usize,
    pub pose: RelativePose,
    pub matches: CorrespondenceSet,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegistrationConfig {
    /// Cluster distance for scale selection.
    pub kappa: f64,
    /// Baseline view override; defaults to the pair with the most inliers.
    pub baseline_view: Option<usize>,
    /// Metric length of the reference baseline in meters.
    pub baseline_length: f64,
}

impl Default for RegistrationConfig {
    fn default() -> Self {
        Self {
            kappa: 0.01,
            baseline_view: None,
            baseline_length: 1.0,
        }
    }
}

fn bearing_key(b: &Bearing) -> [u64; 3] {
    [b.x().to_bits(), b.y().to_bits(), b.z().to_bits()]
}

/// Inlier bearing pairs of one observation, in match order.
fn inlier_pairs(obs: &PairObservation) -> Vec<(Bearing, Bearing)> {
    obs.matches
        .matches
        .iter()
        .enumerate()
        .filter(|(idx, _)| obs.pose.inlier_mask.get(*idx).copied().unwrap_or(true))
        .map(|(_, m)| (m.a, m.b))
        .collect()
}

/// Camera-k position direction in the reference frame and the de-rotation
/// taking view-k bearings into that frame.
fn baseline_direction(pose: &RelativePose) -> Result<(Bearing, Mat3), RegistrationError> {
    let r_inv = pose.rotation.transpose();
    let pos = -r_inv * pose.translation;
    let dir = Bearing::from_vector(pos).map_err(|_| RegistrationError::DegenerateTriangulation)?;
    Ok((dir, r_inv))
}

/// Registers an N-view rig: picks the baseline pair, triangulates shared
/// feature tracks, clusters per-track scale samples, and scales the unit
/// translations.
pub fn register_rig(
    reference: usize,
    pairs: &[PairObservation],
    cfg: &RegistrationConfig,
) -> Result<Rig, RegistrationError> {
    if pairs.is_empty() {
        return Err(RegistrationError::EmptyRig);
    }
    for obs in pairs {
        if obs.matches.view_a != reference || obs.matches.view_b != obs.view {
            return Err(RegistrationError::InconsistentPair {
                view: obs.view,
                reason: format!(
                    "correspondences are for pair ({}, {}), expected ({}, {})",
                    obs.matches.view_a, obs.matches.view_b, reference, obs.view
                ),
            });
        }
        if obs.view == reference {
            return Err(RegistrationError::InconsistentPair {
                view: obs.view,
                reason: "pair duplicates the reference view".to_string(),
            });
        }
        if !obs.pose.inlier_mask.is_empty() && obs.pose.inlier_mask.len() != obs.matches.len() {
            return Err(RegistrationError::InconsistentPair {
                view: obs.view,
                reason: "inlier mask length does not match correspondences".to_string(),
            });
        }
    }

    // Baseline view: explicit override or the pair with the most inliers.
    let baseline_view = match cfg.baseline_view {
        Some(j) => {
            if !pairs.iter().any(|p| p.view == j) {
                return Err(RegistrationError::MissingBaselineView(j));
            }
            j
        }
        None => {
            let mut best = &pairs[0];
            for p in &pairs[1..] {
                if p.pose.inlier_count > best.pose.inlier_count
                    || (p.pose.inlier_count == best.pose.inlier_count && p.view < best.view)
                {
                    best = p;
                }
            }
            best.view
        }
    };
    let baseline_obs = pairs.iter().find(|p| p.view == baseline_view).unwrap();
    let (baseline_dir, baseline_derot) = baseline_direction(&baseline_obs.pose)?;

    // Index the baseline pair's inlier matches by the exact reference-view
    // bearing so tracks can be joined across pairs.
    let baseline_matches = inlier_pairs(baseline_obs);
    let mut by_ref_bearing: HashMap<[u64; 3], usize> = HashMap::new();
    for (idx, (a, _)) in baseline_matches.iter().enumerate() {
        by_ref_bearing.entry(bearing_key(a)).or_insert(idx);
    }

    let mut views = vec![RigView {
        view: reference,
        rotation: Mat3::identity(),
        translation: Vec3::zeros(),
        scale: 1.0,
        scaled_translation: Vec3::zeros(),
    }];

    for obs in pairs {
        if obs.view == baseline_view {
            views.push(RigView {
                view: obs.view,
                rotation: obs.pose.rotation,
                translation: obs.pose.translation,
                scale: 1.0,
                scaled_translation: obs.pose.translation,
            });
            continue;
        }
        let (dir_k, derot_k) = baseline_direction(&obs.pose)?;
        let mut samples: Vec<f64> = Vec::new();
        let mut joined = 0usize;
        for (b_i, b_k) in inlier_pairs(obs) {
            let Some(&bidx) = by_ref_bearing.get(&bearing_key(&b_i)) else {
                continue;
            };
            joined += 1;
            let (_, b_j) = baseline_matches[bidx];
            let b_j_ref = Bearing::from_unit_unchecked(baseline_derot * *b_j.as_vector());
            let b_k_ref = Bearing::from_unit_unchecked(derot_k * *b_k.as_vector());
            let d_ij = match triangulate_initial_depth(&b_i, &b_j_ref, &baseline_dir) {
                Ok(d) => d,
                Err(_) => continue,
            };
            let d_ik = match triangulate_initial_depth(&b_i, &b_k_ref, &dir_k) {
                Ok(d) => d,
                Err(_) => continue,
            };
            // Cheirality: negative or non-finite depths never feed the
            // clustering.
            if let Ok(s) = scale_factor(d_ij, d_ik) {
                samples.push(s);
            }
        }
        if joined == 0 {
            return Err(RegistrationError::UnregistrableView(obs.view));
        }
        if samples.is_empty() {
            return Err(RegistrationError::DegenerateTracks(obs.view));
        }
        let estimate = cluster_scales(&samples, cfg.kappa)?;
        views.push(RigView {
            view: obs.view,
            rotation: obs.pose.rotation,
            translation: obs.pose.translation,
            scale: estimate.chosen,
            scaled_translation: estimate.chosen * obs.pose.translation,
        });
    }

    views.sort_by_key(|v| v.view);
    Ok(Rig {
        reference,
        baseline_pair: Some((reference, baseline_view)),
        kappa: cfg.kappa,
        baseline_length: cfg.baseline_length,
        views,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn bearing(x: f64, y: f64, z: f64) -> Bearing {
        Bearing::new(x, y, z).unwrap()
    }

    #[test]
    fn triangulate_textbook_cases() {
        // Camera k sits at (1,0,0); the point (0,0,2) is at depth 2 along b_i.
        let b_i = bearing(0.0, 0.0, 1.0);
        let t = bearing(1.0, 0.0, 0.0);
        let b_k = bearing(-1.0, 0.0, 2.0);
        let d = triangulate_initial_depth(&b_i, &b_k, &t).unwrap();
        assert_relative_eq!(d, 2.0, epsilon = 1e-12);

        let b_k = bearing(-1.0, 0.0, 1.0);
        let d = triangulate_initial_depth(&b_i, &b_k, &t).unwrap();
        assert_relative_eq!(d, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn triangulate_collinear_is_degenerate() {
        let t = bearing(1.0, 0.0, 0.0);
        assert!(matches!(
            triangulate_initial_depth(&t, &t, &t),
            Err(RegistrationError::DegenerateTriangulation)
        ));
    }

    #[test]
    fn triangulate_behind_camera_is_signed() {
        // Place the point on the opposite ray: d should come out negative.
        let b_i = bearing(0.0, 0.0, 1.0);
        let t = bearing(1.0, 0.0, 0.0);
        // Point at (0,0,-2): from camera k at (1,0,0) it appears at (-1,0,-2).
        let b_k = bearing(-1.0, 0.0, -2.0);
        let d = triangulate_initial_depth(&b_i, &b_k, &t).unwrap();
        assert!(d < 0.0, "expected a behind-camera signal, got {d}");
        assert_relative_eq!(d, -2.0, epsilon = 1e-12);
    }

    #[test]
    fn scale_factor_cases() {
        assert_relative_eq!(scale_factor(2.0, 1.0).unwrap(), 2.0);
        assert_relative_eq!(scale_factor(3.7, 3.7).unwrap(), 1.0);
        assert_relative_eq!(scale_factor(1.17, 1.0).unwrap(), 1.17);
        assert!(scale_factor(-1.0, 1.0).is_err());
        assert!(scale_factor(1.0, 0.0).is_err());
    }

    #[test]
    fn cluster_scales_majority() {
        let est = cluster_scales(&[1.00, 1.01, 1.02, 5.0], 0.01).unwrap();
        assert_eq!(est.chosen, 1.01);
        assert_eq!(est.cluster_size, 3);
    }

    #[test]
    fn cluster_scales_single_sample() {
        let est = cluster_scales(&[0.42], 0.01).unwrap();
        assert_eq!(est.chosen, 0.42);
        assert_eq!(est.cluster_size, 1);
    }

    #[test]
    fn cluster_scales_errors() {
        assert!(matches!(
            cluster_scales(&[], 0.01),
            Err(RegistrationError::NoSamples)
        ));
        assert!(matches!(
            cluster_scales(&[1.0], 0.0),
            Err(RegistrationError::InvalidKappa(_))
        ));
    }

    #[test]
    fn cluster_duplicate_of_chosen_is_stable() {
        let samples = vec![0.95, 1.0, 1.004, 1.01, 1.3, 1.31];
        let first = cluster_scales(&samples, 0.01).unwrap();
        let mut extended = samples.clone();
        extended.push(first.chosen);
        let second = cluster_scales(&extended, 0.01).unwrap();
        assert_eq!(first.chosen, second.chosen);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn cluster_chooses_a_sample(
                samples in proptest::collection::vec(0.01f64..10.0, 1..40),
                kappa in 1e-4f64..1.0,
            ) {
                let est = cluster_scales(&samples, kappa).unwrap();
                prop_assert!(samples.contains(&est.chosen));
                prop_assert!(est.cluster_size >= 1);
            }

            #[test]
            fn cluster_stable_under_duplicate_of_chosen(
                samples in proptest::collection::vec(0.01f64..10.0, 1..40),
                kappa in 1e-4f64..1.0,
            ) {
                let first = cluster_scales(&samples, kappa).unwrap();
                let mut extended = samples.clone();
                extended.push(first.chosen);
                let second = cluster_scales(&extended, kappa).unwrap();
                prop_assert_eq!(first.chosen, second.chosen);
            }
        }
    }
}
