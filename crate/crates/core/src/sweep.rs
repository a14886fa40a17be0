//! Dense depth by virtual-depth sweeping: for every reference pixel,
//! hypothesize depth candidates, reproject the window into each registered
//! view, and keep the candidate with the lowest summed absolute color
//! difference.
//!
//! The per-candidate cost at pixel `(u, v)` with window radius `r` is
//!
//! ```text
//! sum over views k, window offsets (dv, du), channels c of
//!     |ref(u+du, v+dv, c) - view_k(project(u+du, v+dv, d), c)|
//! ```
//!
//! accumulated in exactly that order, so the full-image path and the
//! single-pixel path produce bit-identical costs. Ties pick the smaller
//! depth. Rotation folds into the reprojection rather than materializing
//! de-rotated images.

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::filters::{bilateral_rgb, joint_bilateral_depth, BilateralParams, JointBilateralParams};
use crate::registration::Rig;
use crate::sphere::{
    bearing_to_pixel, pixel_to_bearing, sample_bilinear_rgb, Bearing, EquirectImage, PixelCoord,
    SphereError,
};

pub type Mat3 = Matrix3<f64>;
pub type Vec3 = Vector3<f64>;

#[derive(Debug, Error)]
pub enum SweepError {
    #[error("candidate count must be ≥ 2, got {0}")]
    CandidateCount(usize),
    #[error("candidate range invalid: need 0 < d_min < d_max, got [{0}, {1}]")]
    CandidateRange(f64, f64),
    #[error("virtual depth must be positive, got {0}")]
    NonPositiveDepth(f64),
    #[error("projected point coincides with the target camera center")]
    DegenerateProjection,
    #[error("no target views: the cost over an empty view set is undefined")]
    NoTargetViews,
    #[error("view {view} is {got_w}x{got_h}, reference is {ref_w}x{ref_h}")]
    DimensionMismatch {
        view: usize,
        got_w: usize,
        got_h: usize,
        ref_w: usize,
        ref_h: usize,
    },
    #[error("pixel row {v} is within {r} rows of a pole; the window is undefined there")]
    BorderPixel { v: usize, r: usize },
    #[error("window radius {r} leaves no valid rows at height {h}")]
    WindowTooLarge { r: usize, h: usize },
    #[error("no rig entry for view {0}")]
    MissingRigView(usize),
    #[error(transparent)]
    Sphere(#[from] SphereError),
}

/// Ascending virtual-depth candidates, uniform in depth, inclusive endpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthCandidates {
    d_min: f64,
    d_max: f64,
    values: Vec<f64>,
}

impl DepthCandidates {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn d_min(&self) -> f64 {
        self.d_min
    }

    pub fn d_max(&self) -> f64 {
        self.d_max
    }

    pub fn count(&self) -> usize {
        self.values.len()
    }

    /// Candidate spacing.
    pub fn step(&self) -> f64 {
        (self.d_max - self.d_min) / (self.values.len() - 1) as f64
    }

    /// Uniformly rescaled candidates (for scale-ambiguity checks).
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            d_min: self.d_min * factor,
            d_max: self.d_max * factor,
            values: self.values.iter().map(|v| v * factor).collect(),
        }
    }
}

impl Default for DepthCandidates {
    fn default() -> Self {
        make_candidates(0.05, 10.0, 200).expect("default candidates are valid")
    }
}

/// Uniform candidates over `[d_min, d_max]` inclusive.
pub fn make_candidates(d_min: f64, d_max: f64, count: usize) -> Result<DepthCandidates, SweepError> {
    if count < 2 {
        return Err(SweepError::CandidateCount(count));
    }
    if !(d_min.is_finite() && d_max.is_finite()) || d_min <= 0.0 || d_min >= d_max {
        return Err(SweepError::CandidateRange(d_min, d_max));
    }
    let step = (d_max - d_min) / (count - 1) as f64;
    let mut values: Vec<f64> = (0..count).map(|i| d_min + step * i as f64).collect();
    *values.last_mut().unwrap() = d_max;
    Ok(DepthCandidates {
        d_min,
        d_max,
        values,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepConfig {
    /// Window half-size; the window is (2r+1) x (2r+1). Default 3 (7x7).
    pub window_radius: usize,
    pub candidates: DepthCandidates,
    /// Bilateral pre-smoothing applied identically to reference and targets.
    pub prefilter: Option<BilateralParams>,
    /// Joint-bilateral refinement of the winning depths.
    pub postfilter: JointBilateralParams,
    /// Fraction of rows at the bottom of the image marked invalid.
    pub crop_bottom: f64,
    /// Compare every target window sample against the center reference pixel
    /// instead of offsetting both sides by the window offset.
    pub center_reference: bool,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            window_radius: 3,
            candidates: DepthCandidates::default(),
            prefilter: Some(BilateralParams::default()),
            postfilter: JointBilateralParams::default(),
            crop_bottom: 0.0,
            center_reference: false,
        }
    }
}

/// Per-pixel depth aligned to a reference equirectangular image.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    width: usize,
    height: usize,
    depth: Vec<f64>,
    cost: Vec<f64>,
    valid: Vec<bool>,
    d_min: f64,
    d_max: f64,
}

impl DepthMap {
    pub fn new_invalid(width: usize, height: usize, d_min: f64, d_max: f64) -> Self {
        Self {
            width,
            height,
            depth: vec![f64::NAN; width * height],
            cost: vec![f64::NAN; width * height],
            valid: vec![false; width * height],
            d_min,
            d_max,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    /// Nominal depth range, used by fixed-point encodings.
    pub fn range(&self) -> (f64, f64) {
        (self.d_min, self.d_max)
    }

    pub fn set_range(&mut self, d_min: f64, d_max: f64) {
        self.d_min = d_min;
        self.d_max = d_max;
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize) -> Option<f64> {
        if self.valid[v * self.width + u] {
            Some(self.depth[v * self.width + u])
        } else {
            None
        }
    }

    /// Winning cost at a pixel; NaN when invalid or not produced by a sweep.
    #[inline]
    pub fn cost(&self, u: usize, v: usize) -> f64 {
        self.cost[v * self.width + u]
    }

    #[inline]
    pub fn set(&mut self, u: usize, v: usize, depth: f64, cost: f64) {
        let i = v * self.width + u;
        self.depth[i] = depth;
        self.cost[i] = cost;
        self.valid[i] = true;
    }

    #[inline]
    pub fn invalidate(&mut self, u: usize, v: usize) {
        let i = v * self.width + u;
        self.valid[i] = false;
        self.depth[i] = f64::NAN;
        self.cost[i] = f64::NAN;
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&x| x).count()
    }

    pub fn valid_fraction(&self) -> f64 {
        self.valid_count() as f64 / (self.width * self.height) as f64
    }
}

/// A registered target view for sweeping: image plus the pose taking
/// reference-frame points into its frame, with the translation already in
/// scene units.
#[derive(Debug, Clone)]
pub struct SweepView<'a> {
    pub image: &'a EquirectImage,
    pub rotation: Mat3,
    pub translation: Vec3,
}

/// Reprojects a reference pixel at a hypothesized depth into a target view.
pub fn project_virtual(
    p: PixelCoord,
    depth: f64,
    rotation: &Mat3,
    translation: &Vec3,
    dims: (usize, usize),
) -> Result<PixelCoord, SweepError> {
    if !(depth.is_finite() && depth > 0.0) {
        return Err(SweepError::NonPositiveDepth(depth));
    }
    let b = pixel_to_bearing(p, dims)?;
    let x = rotation * (depth * b.as_vector()) + translation;
    let n = x.norm();
    if n <= 1e-12 {
        return Err(SweepError::DegenerateProjection);
    }
    Ok(bearing_to_pixel(&Bearing::from_unit_unchecked(x / n), dims)?)
}

#[inline]
fn diff3(a: [f64; 3], b: [f64; 3]) -> f64 {
    (a[0] - b[0]).abs() + (a[1] - b[1]).abs() + (a[2] - b[2]).abs()
}

/// Warped target sample at an integer reference pixel for one candidate;
/// NaN triple marks a degenerate projection.
#[inline]
fn warp_sample(view: &SweepView, u: usize, v: usize, depth: f64, dims: (usize, usize)) -> [f64; 3] {
    match project_virtual(
        PixelCoord::new(u as f64, v as f64),
        depth,
        &view.rotation,
        &view.translation,
        dims,
    ) {
        Ok(q) => sample_bilinear_rgb(view.image, q),
        Err(_) => [f64::NAN; 3],
    }
}

/// Cost of one candidate at one pixel, sampling targets through `target`.
/// `target(k, qu, qv)` must return the warped sample of view `k` at the
/// (wrapped) reference pixel `(qu, qv)`.
fn candidate_cost_at(
    reference: &EquirectImage,
    n_views: usize,
    center: (usize, usize),
    r: usize,
    center_reference: bool,
    target: &dyn Fn(usize, usize, usize) -> [f64; 3],
) -> f64 {
    let (w, _) = reference.dims();
    let (u, v) = center;
    let center_px = reference.rgb(u, v);
    let r = r as i64;
    let mut acc = 0.0f64;
    for k in 0..n_views {
        for dv in -r..=r {
            let qv = (v as i64 + dv) as usize;
            for du in -r..=r {
                let qu = (u as i64 + du).rem_euclid(w as i64) as usize;
                let ref_px = if center_reference {
                    center_px
                } else {
                    reference.rgb(qu, qv)
                };
                acc += diff3(ref_px, target(k, qu, qv));
            }
        }
    }
    acc
}

/// Sweeps all candidates at one pixel; returns the winning `(depth, cost)`,
/// or `None` when every candidate had a degenerate projection somewhere in
/// its window.
///
/// Images are used as given; apply any pre-smoothing beforehand.
pub fn sweep_pixel(
    pixel: (usize, usize),
    reference: &EquirectImage,
    views: &[SweepView],
    cfg: &SweepConfig,
) -> Result<Option<(f64, f64)>, SweepError> {
    if views.is_empty() {
        return Err(SweepError::NoTargetViews);
    }
    let (w, h) = reference.dims();
    check_view_dims(reference, views)?;
    let r = cfg.window_radius;
    let (u, v) = pixel;
    if v < r || v + r >= h {
        return Err(SweepError::BorderPixel { v, r });
    }
    debug_assert!(u < w);

    let dims = (w, h);
    let mut best: Option<(f64, f64)> = None;
    for &d in cfg.candidates.values() {
        let cost = candidate_cost_at(
            reference,
            views.len(),
            (u, v),
            r,
            cfg.center_reference,
            &|k, qu, qv| warp_sample(&views[k], qu, qv, d, dims),
        );
        if best.is_none_or(|(_, c)| cost < c) && cost.is_finite() {
            best = Some((d, cost));
        }
    }
    Ok(best)
}

fn check_view_dims(reference: &EquirectImage, views: &[SweepView]) -> Result<(), SweepError> {
    let (w, h) = reference.dims();
    for (k, view) in views.iter().enumerate() {
        let (vw, vh) = view.image.dims();
        if (vw, vh) != (w, h) {
            return Err(SweepError::DimensionMismatch {
                view: k,
                got_w: vw,
                got_h: vh,
                ref_w: w,
                ref_h: h,
            });
        }
    }
    Ok(())
}

/// Dense sweep over the whole reference image: bilateral pre-smoothing,
/// per-pixel candidate search, border/crop invalidation, and joint-bilateral
/// post-refinement guided by the unsmoothed reference.
///
/// The result is independent of thread count.
pub fn estimate_depth_map(
    reference: &EquirectImage,
    views: &[SweepView],
    cfg: &SweepConfig,
) -> Result<DepthMap, SweepError> {
    if views.is_empty() {
        return Err(SweepError::NoTargetViews);
    }
    check_view_dims(reference, views)?;
    let (w, h) = reference.dims();
    let r = cfg.window_radius;
    if 2 * r >= h {
        return Err(SweepError::WindowTooLarge { r, h });
    }

    // Pre-smooth reference and targets with identical parameters.
    let (ref_s, targets_s): (EquirectImage, Vec<EquirectImage>) = match &cfg.prefilter {
        Some(params) => (
            bilateral_rgb(reference, params),
            views.iter().map(|t| bilateral_rgb(t.image, params)).collect(),
        ),
        None => (reference.clone(), views.iter().map(|t| t.image.clone()).collect()),
    };
    let views_s: Vec<SweepView> = views
        .iter()
        .zip(&targets_s)
        .map(|(t, img)| SweepView {
            image: img,
            rotation: t.rotation,
            translation: t.translation,
        })
        .collect();

    let crop_rows = (cfg.crop_bottom.clamp(0.0, 1.0) * h as f64).round() as usize;
    let v_end = (h - r).min(h - crop_rows);
    let v_start = r;

    let candidates = cfg.candidates.values();
    let (d_min, d_max) = (cfg.candidates.d_min(), cfg.candidates.d_max());
    let mut best_depth = vec![f64::NAN; w * h];
    let mut best_cost = vec![f64::INFINITY; w * h];

    if cfg.center_reference {
        // The cost couples every window sample to the center pixel, so the
        // warped-image factorization does not apply; sweep directly.
        let row_results: Vec<Vec<Option<(f64, f64)>>> = (v_start..v_end)
            .into_par_iter()
            .map(|v| {
                (0..w)
                    .map(|u| {
                        sweep_pixel((u, v), &ref_s, &views_s, cfg).expect("checked preconditions")
                    })
                    .collect()
            })
            .collect();
        for (ri, v) in (v_start..v_end).enumerate() {
            for u in 0..w {
                if let Some((d, c)) = row_results[ri][u] {
                    best_depth[v * w + u] = d;
                    best_cost[v * w + u] = c;
                }
            }
        }
    } else {
        let dims = (w, h);
        let n_views = views_s.len();
        // Reused per-candidate buffers: per-view channel-summed absolute
        // difference between the reference and the warped target.
        let mut dmaps: Vec<Vec<f64>> = vec![vec![0.0; w * h]; n_views];
        for &d in candidates {
            for (k, view) in views_s.iter().enumerate() {
                dmaps[k]
                    .par_chunks_mut(w)
                    .enumerate()
                    .for_each(|(v, row)| {
                        for (u, slot) in row.iter_mut().enumerate() {
                            *slot = diff3(ref_s.rgb(u, v), warp_sample(view, u, v, d, dims));
                        }
                    });
            }
            let dmaps_ref = &dmaps;
            best_cost
                .par_chunks_mut(w)
                .zip(best_depth.par_chunks_mut(w))
                .enumerate()
                .for_each(|(v, (cost_row, depth_row))| {
                    if v < v_start || v >= v_end {
                        return;
                    }
                    let ri = r as i64;
                    for u in 0..w {
                        let mut acc = 0.0f64;
                        for dmap in dmaps_ref.iter() {
                            for dv in -ri..=ri {
                                let row0 = ((v as i64 + dv) as usize) * w;
                                if u >= r && u + r < w {
                                    for x in &dmap[row0 + u - r..=row0 + u + r] {
                                        acc += *x;
                                    }
                                } else {
                                    for du in -ri..=ri {
                                        let qu = (u as i64 + du).rem_euclid(w as i64) as usize;
                                        acc += dmap[row0 + qu];
                                    }
                                }
                            }
                        }
                        if acc < cost_row[u] {
                            cost_row[u] = acc;
                            depth_row[u] = d;
                        }
                    }
                });
        }
    }

    let mut map = DepthMap::new_invalid(w, h, d_min, d_max);
    for v in v_start..v_end {
        for u in 0..w {
            let i = v * w + u;
            if best_cost[i].is_finite() {
                map.set(u, v, best_depth[i], best_cost[i]);
            }
        }
    }

    Ok(postsmooth(&map, reference, &cfg.postfilter))
}

/// Edge-aware refinement of a depth map guided by the reference image;
/// preserves the valid mask and clamps depths to the map's nominal range.
pub fn postsmooth(
    depth: &DepthMap,
    guide: &EquirectImage,
    params: &JointBilateralParams,
) -> DepthMap {
    let mut out = joint_bilateral_depth(depth, guide, params);
    let (d_min, d_max) = out.range();
    for v in 0..out.height() {
        for u in 0..out.width() {
            if let Some(d) = out.get(u, v) {
                let cost = out.cost(u, v);
                out.set(u, v, d.clamp(d_min, d_max), cost);
            }
        }
    }
    out
}

/// Builds sweep views from a registered rig and a set of loaded images.
///
/// Images pair view ids with pixels; the reference image is skipped, every
/// other image must have a rig entry. `force_unit_scale` ignores the
/// recovered scales (ablation).
pub fn rig_sweep_views<'a>(
    rig: &Rig,
    images: &'a [(usize, EquirectImage)],
    force_unit_scale: bool,
) -> Result<Vec<SweepView<'a>>, SweepError> {
    let mut out = Vec::new();
    for (id, img) in images {
        if *id == rig.reference {
            continue;
        }
        let view = rig.view(*id).ok_or(SweepError::MissingRigView(*id))?;
        out.push(SweepView {
            image: img,
            rotation: view.rotation,
            translation: rig.metric_translation(view, force_unit_scale),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn candidates_endpoints_and_step() {
        let c = make_candidates(0.05, 10.0, 2).unwrap();
        assert_eq!(c.values(), &[0.05, 10.0]);

        let c = make_candidates(0.05, 10.0, 200).unwrap();
        assert_eq!(c.count(), 200);
        assert_eq!(c.values()[0], 0.05);
        assert_eq!(*c.values().last().unwrap(), 10.0);
        assert_relative_eq!(c.values()[1] - c.values()[0], 0.05, epsilon = 1e-12);
        for win in c.values().windows(2) {
            assert!(win[0] < win[1]);
        }
    }

    #[test]
    fn candidates_reject_bad_ranges() {
        assert!(make_candidates(1.0, 1.0, 10).is_err());
        assert!(make_candidates(0.0, 1.0, 10).is_err());
        assert!(make_candidates(-1.0, 1.0, 10).is_err());
        assert!(make_candidates(0.05, 10.0, 1).is_err());
    }

    #[test]
    fn project_identity_pose_is_fixed_point() {
        let dims = (512, 256);
        let p = PixelCoord::new(123.0, 77.0);
        for d in [0.05, 1.0, 42.0] {
            let q = project_virtual(p, d, &Mat3::identity(), &Vec3::zeros(), dims).unwrap();
            assert!((q.u - p.u).abs() < 1e-6 && (q.v - p.v).abs() < 1e-6);
        }
    }

    #[test]
    fn project_infinite_depth_limit() {
        let dims = (2048, 1024);
        let t = Vec3::new(0.3, -0.8, 0.5);
        let p = PixelCoord::new(300.0, 400.0);
        let q = project_virtual(p, 1e9, &Mat3::identity(), &t, dims).unwrap();
        let du = (q.u - p.u).abs().min(2048.0 - (q.u - p.u).abs());
        assert!(du < 0.01, "du {du}");
        assert!((q.v - p.v).abs() < 0.01);
    }

    #[test]
    fn project_analytic_case() {
        // Bearing +Z at depth 1 with translation (1,0,0) lands at
        // bearing (1,0,1)/sqrt(2), i.e. pixel (0, h/4).
        let dims = (512, 256);
        let p = PixelCoord::new(0.0, 0.0); // v=0 is the +Z pole
        let q = project_virtual(
            p,
            1.0,
            &Mat3::identity(),
            &Vec3::new(1.0, 0.0, 0.0),
            dims,
        )
        .unwrap();
        assert!((q.u - 0.0).abs() < 1e-9);
        assert_relative_eq!(q.v, 256.0 / 4.0, epsilon = 1e-9);
    }

    #[test]
    fn project_rejects_bad_depth_and_center() {
        let dims = (64, 32);
        let p = PixelCoord::new(10.0, 16.0);
        assert!(matches!(
            project_virtual(p, 0.0, &Mat3::identity(), &Vec3::zeros(), dims),
            Err(SweepError::NonPositiveDepth(_))
        ));
        // Point exactly at the target camera center.
        let b = pixel_to_bearing(p, dims).unwrap();
        let t = -2.0 * *b.as_vector();
        assert!(matches!(
            project_virtual(p, 2.0, &Mat3::identity(), &t, dims),
            Err(SweepError::DegenerateProjection)
        ));
    }

    #[test]
    fn sweep_rejects_empty_view_set_and_border() {
        let img = EquirectImage::new(32, 16).unwrap();
        let cfg = SweepConfig {
            candidates: make_candidates(0.5, 2.0, 4).unwrap(),
            ..SweepConfig::default()
        };
        assert!(matches!(
            sweep_pixel((5, 8), &img, &[], &cfg),
            Err(SweepError::NoTargetViews)
        ));
        let views = [SweepView {
            image: &img,
            rotation: Mat3::identity(),
            translation: Vec3::new(1.0, 0.0, 0.0),
        }];
        assert!(matches!(
            sweep_pixel((5, 1), &img, &views, &cfg),
            Err(SweepError::BorderPixel { .. })
        ));
    }

    #[test]
    fn zero_parallax_constant_image_ties_to_dmin() {
        let img = EquirectImage::from_data(32, 16, vec![0.5; 32 * 16 * 3]).unwrap();
        let cfg = SweepConfig {
            window_radius: 1,
            candidates: make_candidates(0.5, 2.0, 8).unwrap(),
            prefilter: None,
            ..SweepConfig::default()
        };
        let views = [SweepView {
            image: &img,
            rotation: Mat3::identity(),
            translation: Vec3::zeros(),
        }];
        let (d, cost) = sweep_pixel((7, 8), &img, &views, &cfg).unwrap().unwrap();
        assert_eq!(d, 0.5);
        assert_eq!(cost, 0.0);
    }
}
