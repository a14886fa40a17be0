//! Epipolar geometry on the sphere: essential matrix estimation from bearing
//! correspondences via the 8-point algorithm with Sampson residuals inside
//! RANSAC, and decomposition into relative pose with cheirality selection.
//!
//! Bearings satisfy `b_j' E b_i = 0` for `E = [t]_x R` with the extrinsic
//! convention `x_j = R x_i + t`. The residual is invariant to the scale of
//! `E`, so estimates are normalized to Frobenius norm sqrt(2) with a
//! canonical sign (largest-magnitude entry positive).

use nalgebra::{Matrix3, SMatrix, SVector, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::registration::triangulate_initial_depth;
use crate::sphere::Bearing;

pub type Mat3 = Matrix3<f64>;
pub type Vec3 = Vector3<f64>;

#[derive(Debug, Error)]
pub enum EpipolarError {
    #[error("need at least 8 correspondences, got {0}")]
    NotEnoughMatches(usize),
    #[error("degenerate configuration: the epipolar system is rank deficient")]
    DegenerateConfiguration,
    #[error("RANSAC found no consensus: best inlier count {best} of {total}")]
    NoConsensus { best: usize, total: usize },
    #[error("no inlier correspondences available for decomposition")]
    NoInliers,
    #[error(
        "ambiguous decomposition: two pose candidates tie at {count} positive depths; \
         candidate translations ({0:.4}, {1:.4}, {2:.4}) and ({3:.4}, {4:.4}, {5:.4})",
        t_first.x, t_first.y, t_first.z, t_second.x, t_second.y, t_second.z
    )]
    AmbiguousDecomposition {
        count: usize,
        t_first: Vec3,
        t_second: Vec3,
    },
}

/// 3x3 essential matrix constrained to the essential manifold.
///
/// Invariants: rank 2, the two nonzero singular values equal, Frobenius norm
/// sqrt(2), and the largest-magnitude entry positive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EssentialMatrix(Mat3);

impl EssentialMatrix {
    /// Projects an arbitrary 3x3 matrix onto the essential manifold by
    /// forcing singular values to (1, 1, 0).
    pub fn project_from(m: &Mat3) -> Result<Self, EpipolarError> {
        let svd = m.svd(true, true);
        let u = svd.u.ok_or(EpipolarError::DegenerateConfiguration)?;
        let v_t = svd.v_t.ok_or(EpipolarError::DegenerateConfiguration)?;
        let s = svd.singular_values;
        if !(s[0].is_finite() && s[0] > 1e-300) || s[1] < 1e-12 * s[0] {
            return Err(EpipolarError::DegenerateConfiguration);
        }
        let mut e = u * Mat3::from_diagonal(&Vec3::new(1.0, 1.0, 0.0)) * v_t;
        // Canonical sign: flip so the largest-magnitude entry is positive.
        let mut max_abs = 0.0;
        let mut max_val = 0.0;
        for r in 0..3 {
            for c in 0..3 {
                if e[(r, c)].abs() > max_abs {
                    max_abs = e[(r, c)].abs();
                    max_val = e[(r, c)];
                }
            }
        }
        if max_val < 0.0 {
            e = -e;
        }
        Ok(Self(e))
    }

    /// Composes `[t]_x R` from a pose and projects it onto the manifold.
    pub fn from_pose(rotation: &Mat3, translation: &Vec3) -> Result<Self, EpipolarError> {
        let t = translation;
        let tx = Mat3::new(0.0, -t.z, t.y, t.z, 0.0, -t.x, -t.y, t.x, 0.0);
        Self::project_from(&(tx * rotation))
    }

    pub fn matrix(&self) -> &Mat3 {
        &self.0
    }

    /// Algebraic epipolar residual `b_j' E b_i`.
    pub fn residual(&self, b_i: &Bearing, b_j: &Bearing) -> f64 {
        (b_j.as_vector().transpose() * self.0 * b_i.as_vector())[(0, 0)]
    }
}

/// Sampson (first-order geometric) error of a bearing pair under `E`.
///
/// Uses the first two components of `E b_i` and `E' b_j` in the denominator;
/// if that underflows the squared algebraic residual is returned instead.
pub fn sampson_error(e: &EssentialMatrix, b_i: &Bearing, b_j: &Bearing) -> f64 {
    let m = e.matrix();
    let e_bi = m * b_i.as_vector();
    let et_bj = m.transpose() * b_j.as_vector();
    let r = b_j.as_vector().dot(&e_bi);
    let denom = e_bi.x * e_bi.x + e_bi.y * e_bi.y + et_bj.x * et_bj.x + et_bj.y * et_bj.y;
    if denom < 1e-30 {
        r * r
    } else {
        r * r / denom
    }
}

/// Builds the 9x9 normal matrix of the linear epipolar system over matches.
fn epipolar_normal_matrix(matches: &[(Bearing, Bearing)]) -> SMatrix<f64, 9, 9> {
    let mut ata = SMatrix::<f64, 9, 9>::zeros();
    let mut row = SVector::<f64, 9>::zeros();
    for (b_i, b_j) in matches {
        let pi = b_i.as_vector();
        let pj = b_j.as_vector();
        for r in 0..3 {
            for c in 0..3 {
                row[r * 3 + c] = pj[r] * pi[c];
            }
        }
        ata.ger(1.0, &row, &row, 1.0);
    }
    ata
}

/// Linear 8-point estimate of the essential matrix from ≥ 8 bearing pairs,
/// projected onto the essential manifold.
pub fn eight_point(matches: &[(Bearing, Bearing)]) -> Result<EssentialMatrix, EpipolarError> {
    if matches.len() < 8 {
        return Err(EpipolarError::NotEnoughMatches(matches.len()));
    }
    let ata = epipolar_normal_matrix(matches);
    let eig = ata.symmetric_eigen();
    let mut order: Vec<usize> = (0..9).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].partial_cmp(&eig.eigenvalues[b]).unwrap());
    let lambda_max = eig.eigenvalues[order[8]].max(0.0);
    let lambda_second = eig.eigenvalues[order[1]].max(0.0);
    // A (near-)two-dimensional nullspace means the configuration does not
    // determine E.
    if lambda_second <= 1e-14 * lambda_max.max(1e-300) {
        return Err(EpipolarError::DegenerateConfiguration);
    }
    let v = eig.eigenvectors.column(order[0]);
    let raw = Mat3::new(v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8]);
    EssentialMatrix::project_from(&raw)
}

/// RANSAC parameters. The seed is mandatory; results are deterministic for a
/// given seed regardless of thread count.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RansacConfig {
    pub iterations: usize,
    /// Inlier threshold on the Sampson error (squared-radian scale).
    pub threshold: f64,
    pub seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            iterations: 1000,
            threshold: 1e-6,
            seed: 0,
        }
    }
}

/// Robust essential matrix estimation: 8-point hypotheses inside RANSAC with
/// Sampson inlier scoring, refit on the consensus set.
///
/// Sample index lists are pre-generated from the seed, so the result is
/// independent of how hypothesis evaluation is scheduled.
pub fn estimate_essential_ransac(
    matches: &[(Bearing, Bearing)],
    cfg: &RansacConfig,
) -> Result<(EssentialMatrix, Vec<bool>), EpipolarError> {
    let n = matches.len();
    if n < 8 {
        return Err(EpipolarError::NotEnoughMatches(n));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let samples: Vec<Vec<usize>> = (0..cfg.iterations)
        .map(|_| rand::seq::index::sample(&mut rng, n, 8).into_vec())
        .collect();

    let count_inliers = |e: &EssentialMatrix| {
        matches
            .iter()
            .filter(|(a, b)| sampson_error(e, a, b) < cfg.threshold)
            .count()
    };

    // (inlier count, iteration index); ties resolve to the earliest
    // iteration so parallel evaluation matches the sequential result.
    let best = samples
        .par_iter()
        .enumerate()
        .map(|(idx, sample)| {
            let subset: Vec<(Bearing, Bearing)> = sample.iter().map(|&i| matches[i]).collect();
            match eight_point(&subset) {
                Ok(e) => (count_inliers(&e), idx),
                Err(_) => (0, idx),
            }
        })
        .reduce(
            || (0usize, usize::MAX),
            |a, b| {
                if b.0 > a.0 || (b.0 == a.0 && b.1 < a.1) {
                    b
                } else {
                    a
                }
            },
        );

    if best.0 < 8 {
        return Err(EpipolarError::NoConsensus {
            best: best.0,
            total: n,
        });
    }
    let subset: Vec<(Bearing, Bearing)> = samples[best.1].iter().map(|&i| matches[i]).collect();
    let e_hypothesis = eight_point(&subset)?;
    let hypothesis_mask: Vec<bool> = matches
        .iter()
        .map(|(a, b)| sampson_error(&e_hypothesis, a, b) < cfg.threshold)
        .collect();
    let consensus: Vec<(Bearing, Bearing)> = matches
        .iter()
        .zip(&hypothesis_mask)
        .filter(|(_, &keep)| keep)
        .map(|(m, _)| *m)
        .collect();

    // Refit on the consensus set; keep the hypothesis if the refit collapses.
    if let Ok(e_refit) = eight_point(&consensus) {
        let mask: Vec<bool> = matches
            .iter()
            .map(|(a, b)| sampson_error(&e_refit, a, b) < cfg.threshold)
            .collect();
        if mask.iter().filter(|&&x| x).count() >= 8 {
            return Ok((e_refit, mask));
        }
    }
    Ok((e_hypothesis, hypothesis_mask))
}

/// Relative pose between two views: rotation and unit translation of
/// `x_j = R x_i + t`, with the consensus bookkeeping that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct RelativePose {
    pub rotation: Mat3,
    pub translation: Vec3,
    pub inlier_count: usize,
    pub inlier_mask: Vec<bool>,
}

/// Signed depths of a match in both views under a candidate pose, via the
/// baseline-triangle triangulation applied in each camera's frame.
fn depth_pair(
    rotation: &Mat3,
    translation: &Vec3,
    b_i: &Bearing,
    b_j: &Bearing,
) -> Option<(f64, f64)> {
    // Camera j sits at -R't in frame i; camera i sits at t in frame j.
    let pos_j = Bearing::from_vector(-(rotation.transpose() * translation)).ok()?;
    let pos_i = Bearing::from_vector(*translation).ok()?;
    let b_j_ref = Bearing::from_unit_unchecked(rotation.transpose() * *b_j.as_vector());
    let b_i_rot = Bearing::from_unit_unchecked(rotation * *b_i.as_vector());
    let d_i = triangulate_initial_depth(b_i, &b_j_ref, &pos_j).ok()?;
    let d_j = triangulate_initial_depth(b_j, &b_i_rot, &pos_i).ok()?;
    Some((d_i, d_j))
}

/// Decomposes an essential matrix into the relative pose whose triangulated
/// matches have the most positive depths in both views.
///
/// `mask`, when given, selects which matches participate in the counting. A
/// tie between the best two candidates is reported as an error rather than
/// silently picking one.
pub fn decompose_essential(
    e: &EssentialMatrix,
    matches: &[(Bearing, Bearing)],
    mask: Option<&[bool]>,
) -> Result<RelativePose, EpipolarError> {
    let inliers: Vec<(Bearing, Bearing)> = match mask {
        Some(m) => matches
            .iter()
            .zip(m)
            .filter(|(_, &keep)| keep)
            .map(|(x, _)| *x)
            .collect(),
        None => matches.to_vec(),
    };
    if inliers.is_empty() {
        return Err(EpipolarError::NoInliers);
    }

    let svd = e.matrix().svd(true, true);
    let mut u = svd.u.ok_or(EpipolarError::DegenerateConfiguration)?;
    let mut v_t = svd.v_t.ok_or(EpipolarError::DegenerateConfiguration)?;
    if u.determinant() < 0.0 {
        u = -u;
    }
    if v_t.determinant() < 0.0 {
        v_t = -v_t;
    }
    let w = Mat3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
    let r1 = u * w * v_t;
    let r2 = u * w.transpose() * v_t;
    let t = u.column(2).into_owned();
    let candidates = [(r1, t), (r1, -t), (r2, t), (r2, -t)];

    let counts: Vec<usize> = candidates
        .iter()
        .map(|(r, t)| {
            inliers
                .iter()
                .filter(|(a, b)| {
                    depth_pair(r, t, a, b).is_some_and(|(di, dj)| di > 0.0 && dj > 0.0)
                })
                .count()
        })
        .collect();

    let best = (0..4).max_by_key(|&i| counts[i]).unwrap();
    let runner_up = (0..4)
        .filter(|&i| i != best)
        .max_by_key(|&i| counts[i])
        .unwrap();
    if counts[best] == counts[runner_up] {
        return Err(EpipolarError::AmbiguousDecomposition {
            count: counts[best],
            t_first: candidates[best].1,
            t_second: candidates[runner_up].1,
        });
    }
    let (rotation, translation) = candidates[best];
    let translation = translation / translation.norm();
    let inlier_mask = match mask {
        Some(m) => m.to_vec(),
        None => vec![true; matches.len()],
    };
    Ok(RelativePose {
        rotation,
        translation,
        inlier_count: inliers.len(),
        inlier_mask,
    })
}

/// Serialized pose record for one view pair.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PoseRecord {
    pub schema: u32,
    pub view_a: usize,
    pub view_b: usize,
    /// Row-major rotation.
    pub r: [f64; 9],
    pub t: [f64; 3],
    pub inlier_count: usize,
    pub threshold: f64,
    pub seed: u64,
}

impl PoseRecord {
    pub fn new(view_a: usize, view_b: usize, pose: &RelativePose, cfg: &RansacConfig) -> Self {
        Self {
            schema: 1,
            view_a,
            view_b,
            r: crate::registration::mat3_to_row_major(&pose.rotation),
            t: [pose.translation.x, pose.translation.y, pose.translation.z],
            inlier_count: pose.inlier_count,
            threshold: cfg.threshold,
            seed: cfg.seed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn synth_matches(rotation: &Mat3, translation: &Vec3, n: usize, seed: u64) -> Vec<(Bearing, Bearing)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            let p = Vec3::new(
                rng.random_range(-4.0..4.0),
                rng.random_range(-4.0..4.0),
                rng.random_range(-4.0..4.0),
            );
            if p.norm() < 0.5 {
                continue;
            }
            let q = rotation * p + translation;
            if q.norm() < 0.5 {
                continue;
            }
            out.push((
                Bearing::from_vector(p).unwrap(),
                Bearing::from_vector(q).unwrap(),
            ));
        }
        out
    }

    fn rot_zyx(roll: f64, pitch: f64, yaw: f64) -> Mat3 {
        *nalgebra::Rotation3::from_euler_angles(roll, pitch, yaw).matrix()
    }

    #[test]
    fn eight_point_pure_translation() {
        let r = Mat3::identity();
        let t = Vec3::new(1.0, 0.0, 0.0);
        let matches = synth_matches(&r, &t, 20, 7);
        let e = eight_point(&matches).unwrap();
        let expected = Mat3::new(0.0, 0.0, 0.0, 0.0, 0.0, -1.0, 0.0, 1.0, 0.0);
        let d_plus = (e.matrix() + expected).abs().max();
        let d_minus = (e.matrix() - expected).abs().max();
        assert!(d_plus.min(d_minus) < 1e-6, "deviation {}", d_plus.min(d_minus));
    }

    #[test]
    fn eight_point_noiseless_residuals_vanish() {
        let r = rot_zyx(0.1, -0.2, 0.3);
        let t = Vec3::new(0.3, -0.5, 0.8).normalize();
        let matches = synth_matches(&r, &t, 50, 11);
        let e = eight_point(&matches).unwrap();
        for (a, b) in &matches {
            assert!(e.residual(a, b).abs() < 1e-9);
        }
    }

    #[test]
    fn eight_point_needs_eight() {
        let r = Mat3::identity();
        let t = Vec3::new(1.0, 0.0, 0.0);
        let matches = synth_matches(&r, &t, 7, 3);
        assert!(matches!(
            eight_point(&matches),
            Err(EpipolarError::NotEnoughMatches(7))
        ));
    }

    #[test]
    fn sampson_zero_on_exact_and_sign_invariant() {
        let r = rot_zyx(0.2, 0.1, -0.3);
        let t = Vec3::new(0.0, 1.0, 0.0);
        let matches = synth_matches(&r, &t, 10, 5);
        let e = EssentialMatrix::from_pose(&r, &t).unwrap();
        let e_neg = EssentialMatrix(-e.0);
        for (a, b) in &matches {
            let s = sampson_error(&e, a, b);
            assert!(s < 1e-18, "sampson {s}");
            assert_eq!(s, sampson_error(&e_neg, a, b));
        }
    }

    #[test]
    fn sampson_grows_quadratically() {
        let r = rot_zyx(0.05, -0.1, 0.2);
        let t = Vec3::new(0.6, 0.2, -0.77).normalize();
        let e = EssentialMatrix::from_pose(&r, &t).unwrap();
        let matches = synth_matches(&r, &t, 1, 13);
        let (b_i, b_j) = matches[0];
        // Tilt b_j out of its epipolar plane: rotate about an in-plane axis
        // perpendicular to b_j.
        let n = (e.matrix() * b_i.as_vector()).normalize();
        let axis = nalgebra::Unit::new_normalize(b_j.as_vector().cross(&n));
        let mut pts = Vec::new();
        for k in 0..6 {
            let eps = 1e-5 * 4.0f64.powi(k);
            let rot = nalgebra::Rotation3::from_axis_angle(&axis, eps);
            let b_j_p = Bearing::from_vector(rot * b_j.as_vector()).unwrap();
            let err = sampson_error(&e, &b_i, &b_j_p);
            pts.push((eps.ln(), err.ln()));
        }
        // Least-squares slope in log-log space.
        let n_pts = pts.len() as f64;
        let sx: f64 = pts.iter().map(|p| p.0).sum();
        let sy: f64 = pts.iter().map(|p| p.1).sum();
        let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
        let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
        let slope = (n_pts * sxy - sx * sy) / (n_pts * sxx - sx * sx);
        assert!((slope - 2.0).abs() < 0.1, "slope {slope}");
    }

    #[test]
    fn ransac_noiseless_all_inliers() {
        let r = rot_zyx(0.3, 0.2, 0.1);
        let t = Vec3::new(0.1, -0.9, 0.4).normalize();
        let matches = synth_matches(&r, &t, 120, 21);
        let cfg = RansacConfig::default();
        let (_, mask) = estimate_essential_ransac(&matches, &cfg).unwrap();
        assert!(mask.iter().all(|&x| x));
    }

    #[test]
    fn ransac_rejects_outliers() {
        let r = rot_zyx(-0.2, 0.15, 0.4);
        let t = Vec3::new(0.5, 0.5, -0.7).normalize();
        let mut matches = synth_matches(&r, &t, 300, 42);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let n = matches.len();
        let n_out = (n as f64 * 0.3) as usize;
        let outlier_idx: Vec<usize> = rand::seq::index::sample(&mut rng, n, n_out).into_vec();
        for &i in &outlier_idx {
            let v = Vec3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            if v.norm() > 1e-3 {
                matches[i].1 = Bearing::from_vector(v).unwrap();
            }
        }
        let is_outlier: Vec<bool> = {
            let mut m = vec![false; n];
            for &i in &outlier_idx {
                m[i] = true;
            }
            m
        };
        let cfg = RansacConfig {
            iterations: 1000,
            threshold: 1e-6,
            seed: 4,
        };
        let (e, mask) = estimate_essential_ransac(&matches, &cfg).unwrap();
        let true_inliers = is_outlier.iter().filter(|&&o| !o).count();
        let retained = mask
            .iter()
            .zip(&is_outlier)
            .filter(|(&kept, &out)| kept && !out)
            .count();
        assert!(
            retained as f64 >= 0.95 * true_inliers as f64,
            "retained {retained} of {true_inliers}"
        );
        for ((a, b), (&kept, &out)) in matches.iter().zip(mask.iter().zip(&is_outlier)) {
            if kept && !out {
                assert!(e.residual(a, b).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn ransac_deterministic_per_seed() {
        let r = rot_zyx(0.1, 0.1, 0.1);
        let t = Vec3::new(0.0, 0.0, 1.0);
        let matches = synth_matches(&r, &t, 64, 8);
        let cfg = RansacConfig {
            iterations: 200,
            threshold: 1e-6,
            seed: 7,
        };
        let (e1, m1) = estimate_essential_ransac(&matches, &cfg).unwrap();
        let (e2, m2) = estimate_essential_ransac(&matches, &cfg).unwrap();
        assert_eq!(e1.matrix(), e2.matrix());
        assert_eq!(m1, m2);
    }

    #[test]
    fn decompose_recovers_pure_translation() {
        let r = Mat3::identity();
        let t = Vec3::new(1.0, 0.0, 0.0);
        let matches = synth_matches(&r, &t, 40, 31);
        let e = EssentialMatrix::from_pose(&r, &t).unwrap();
        let pose = decompose_essential(&e, &matches, None).unwrap();
        assert!((pose.rotation - Mat3::identity()).abs().max() < 1e-6);
        assert!((pose.translation - t).norm() < 1e-6);
        assert!((pose.translation.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn decompose_general_pose() {
        let r = rot_zyx(0.2, -0.3, 0.5);
        let t = Vec3::new(-0.4, 0.7, 0.59).normalize();
        let matches = synth_matches(&r, &t, 60, 77);
        let e = EssentialMatrix::from_pose(&r, &t).unwrap();
        let pose = decompose_essential(&e, &matches, None).unwrap();
        assert!((pose.rotation - r).abs().max() < 1e-6);
        assert!((pose.translation - t).norm() < 1e-6);
    }

    #[test]
    fn decompose_mirrored_points_picks_twisted_pair() {
        // Mirror each world point through the baseline midpoint while keeping
        // the view-j bearing orientation fixed to the original point. The
        // resulting correspondences satisfy the same essential matrix but are
        // only cheirality-consistent with the twisted-pair candidate.
        let t = Vec3::new(0.0, 0.0, 1.0);
        let r = Mat3::identity();
        let e = EssentialMatrix::from_pose(&r, &t).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(55);
        let mut mirrored: Vec<(Bearing, Bearing)> = Vec::new();
        while mirrored.len() < 50 {
            let p = Vec3::new(
                rng.random_range(-4.0..4.0),
                rng.random_range(-4.0..4.0),
                rng.random_range(0.2..4.0),
            );
            if p.norm() < 0.5 {
                continue;
            }
            let pm = -t - p; // point reflection through -t/2
            mirrored.push((
                Bearing::from_vector(pm).unwrap(),
                Bearing::from_vector(p).unwrap(),
            ));
        }
        for (a, b) in &mirrored {
            assert!(e.residual(a, b).abs() < 1e-9, "mirrored residual");
        }
        let pose = decompose_essential(&e, &mirrored, None).unwrap();

        // The winner must not be the straight configuration...
        assert!((pose.rotation - Mat3::identity()).abs().max() > 0.5);

        // ...and must agree with a brute-force cheirality count over the four
        // candidates.
        let svd = e.matrix().svd(true, true);
        let mut u = svd.u.unwrap();
        let mut v_t = svd.v_t.unwrap();
        if u.determinant() < 0.0 {
            u = -u;
        }
        if v_t.determinant() < 0.0 {
            v_t = -v_t;
        }
        let w = Mat3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        let tt = u.column(2).into_owned();
        let candidates = [
            (u * w * v_t, tt),
            (u * w * v_t, -tt),
            (u * w.transpose() * v_t, tt),
            (u * w.transpose() * v_t, -tt),
        ];
        let mut best_count = 0;
        let mut best = candidates[0];
        for cand in candidates {
            let count = mirrored
                .iter()
                .filter(|(a, b)| {
                    depth_pair(&cand.0, &cand.1, a, b)
                        .is_some_and(|(di, dj)| di > 0.0 && dj > 0.0)
                })
                .count();
            if count > best_count {
                best_count = count;
                best = cand;
            }
        }
        assert_eq!(best_count, mirrored.len());
        assert!((pose.rotation - best.0).abs().max() < 1e-9);
        assert!((pose.translation - best.1).norm() < 1e-9);
    }
}
