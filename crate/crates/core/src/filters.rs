//! Edge-aware smoothing: bilateral RGB pre-filtering for photometric
//! matching, iterated joint-bilateral refinement of depth maps guided by the
//! reference image, and the optional Gaussian/median filters applied before
//! point-cloud export.
//!
//! All filters wrap azimuthally in `u` and clamp in `v`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::sphere::EquirectImage;
use crate::sweep::DepthMap;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BilateralParams {
    pub spatial_sigma: f64,
    pub range_sigma: f64,
}

impl Default for BilateralParams {
    fn default() -> Self {
        Self {
            spatial_sigma: 3.0,
            range_sigma: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct JointBilateralParams {
    pub iterations: usize,
    pub spatial_sigma: f64,
    /// Gaussian sigma on the guide-color distance.
    pub range_sigma: f64,
    /// Contributions farther than this fraction of the map's nominal depth
    /// range from the neighborhood's weighted median are dropped, so impulse
    /// outliers shrink instead of being conserved by the averaging. Values
    /// ≥ 1 disable trimming.
    pub outlier_trim: f64,
}

impl Default for JointBilateralParams {
    fn default() -> Self {
        Self {
            iterations: 3,
            spatial_sigma: 8.0,
            range_sigma: 0.1,
            outlier_trim: 0.1,
        }
    }
}

fn radius_for(sigma: f64) -> i64 {
    (2.0 * sigma).ceil() as i64
}

fn spatial_table(sigma: f64, radius: i64) -> Vec<f64> {
    let size = (2 * radius + 1) as usize;
    let mut table = vec![0.0; size * size];
    for dv in -radius..=radius {
        for du in -radius..=radius {
            let d2 = (du * du + dv * dv) as f64;
            table[((dv + radius) * (2 * radius + 1) + (du + radius)) as usize] =
                (-0.5 * d2 / (sigma * sigma)).exp();
        }
    }
    table
}

/// Bilateral filter of an RGB image; the range weight uses the Euclidean
/// color distance so all channels share one weight. Zero or negative sigmas
/// return the input unchanged.
pub fn bilateral_rgb(img: &EquirectImage, params: &BilateralParams) -> EquirectImage {
    if params.spatial_sigma <= 0.0 || params.range_sigma <= 0.0 {
        return img.clone();
    }
    let (w, h) = img.dims();
    let radius = radius_for(params.spatial_sigma);
    let table = spatial_table(params.spatial_sigma, radius);
    let inv_2r2 = 0.5 / (params.range_sigma * params.range_sigma);

    let mut out = img.clone();
    out.data_mut()
        .par_chunks_mut(w * 3)
        .enumerate()
        .for_each(|(v, row)| {
            for u in 0..w {
                let center = img.rgb(u, v);
                let mut wsum = 0.0;
                let mut acc = [0.0f64; 3];
                for dv in -radius..=radius {
                    let vv = (v as i64 + dv).clamp(0, h as i64 - 1) as usize;
                    for du in -radius..=radius {
                        let uu = (u as i64 + du).rem_euclid(w as i64) as usize;
                        let px = img.rgb(uu, vv);
                        let dr = px[0] - center[0];
                        let dg = px[1] - center[1];
                        let db = px[2] - center[2];
                        let color2 = dr * dr + dg * dg + db * db;
                        let wgt = table
                            [((dv + radius) * (2 * radius + 1) + (du + radius)) as usize]
                            * (-color2 * inv_2r2).exp();
                        wsum += wgt;
                        acc[0] += wgt * px[0];
                        acc[1] += wgt * px[1];
                        acc[2] += wgt * px[2];
                    }
                }
                for c in 0..3 {
                    row[u * 3 + c] = (acc[c] / wsum).clamp(0.0, 1.0);
                }
            }
        });
    out
}

/// Weighted median of `(depth, weight)` entries; `entries` is sorted in
/// place by depth.
fn weighted_median(entries: &mut [(f64, f64)]) -> f64 {
    entries.sort_unstable_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let total: f64 = entries.iter().map(|e| e.1).sum();
    let half = total / 2.0;
    let mut acc = 0.0;
    for &(d, wgt) in entries.iter() {
        acc += wgt;
        if acc >= half {
            return d;
        }
    }
    entries.last().expect("non-empty neighborhood").0
}

/// One pass of joint-bilateral filtering of depth, guided by the reference
/// image colors. Each neighborhood is anchored at its weighted median;
/// contributions outside the trim band around the anchor are dropped.
/// Invalid pixels contribute nothing and stay invalid.
fn joint_bilateral_pass(
    depth: &DepthMap,
    guide: &EquirectImage,
    params: &JointBilateralParams,
) -> DepthMap {
    let (w, h) = (depth.width(), depth.height());
    let radius = radius_for(params.spatial_sigma);
    let table = spatial_table(params.spatial_sigma, radius);
    let inv_2r2 = 0.5 / (params.range_sigma * params.range_sigma);
    let (d_min, d_max) = depth.range();
    let trim = if params.outlier_trim >= 1.0 {
        f64::INFINITY
    } else {
        params.outlier_trim.max(0.0) * (d_max - d_min)
    };

    let mut out = depth.clone();
    let rows: Vec<Vec<Option<f64>>> = (0..h)
        .into_par_iter()
        .map(|v| {
            let mut entries: Vec<(f64, f64)> = Vec::with_capacity(
                ((2 * radius + 1) * (2 * radius + 1)) as usize,
            );
            (0..w)
                .map(|u| {
                    depth.get(u, v)?;
                    let center = guide.rgb(u, v);
                    entries.clear();
                    for dv in -radius..=radius {
                        let vv = (v as i64 + dv).clamp(0, h as i64 - 1) as usize;
                        for du in -radius..=radius {
                            let uu = (u as i64 + du).rem_euclid(w as i64) as usize;
                            let Some(d) = depth.get(uu, vv) else {
                                continue;
                            };
                            let px = guide.rgb(uu, vv);
                            let dr = px[0] - center[0];
                            let dg = px[1] - center[1];
                            let db = px[2] - center[2];
                            let color2 = dr * dr + dg * dg + db * db;
                            let wgt = table
                                [((dv + radius) * (2 * radius + 1) + (du + radius)) as usize]
                                * (-color2 * inv_2r2).exp();
                            entries.push((d, wgt));
                        }
                    }
                    let anchor = weighted_median(&mut entries);
                    let mut wsum = 0.0;
                    let mut acc = 0.0;
                    for &(d, wgt) in &entries {
                        if (d - anchor).abs() <= trim {
                            wsum += wgt;
                            acc += wgt * d;
                        }
                    }
                    Some(acc / wsum)
                })
                .collect()
        })
        .collect();
    for (v, row) in rows.iter().enumerate() {
        for (u, slot) in row.iter().enumerate() {
            if let Some(d) = slot {
                let cost = out.cost(u, v);
                out.set(u, v, *d, cost);
            }
        }
    }
    out
}

/// Iterated joint-bilateral depth refinement. Zero iterations or
/// non-positive sigmas are the identity.
pub fn joint_bilateral_depth(
    depth: &DepthMap,
    guide: &EquirectImage,
    params: &JointBilateralParams,
) -> DepthMap {
    if params.iterations == 0 || params.spatial_sigma <= 0.0 || params.range_sigma <= 0.0 {
        return depth.clone();
    }
    let mut current = depth.clone();
    for _ in 0..params.iterations {
        current = joint_bilateral_pass(&current, guide, params);
    }
    current
}

/// 5x5 Gaussian smoothing of depth with the given sigma; weights renormalize
/// over valid pixels.
pub fn gaussian5_depth(depth: &DepthMap, sigma: f64) -> DepthMap {
    let (w, h) = (depth.width(), depth.height());
    let mut kernel = [0.0f64; 25];
    for dv in -2i64..=2 {
        for du in -2i64..=2 {
            kernel[((dv + 2) * 5 + du + 2) as usize] =
                (-0.5 * ((du * du + dv * dv) as f64) / (sigma * sigma)).exp();
        }
    }
    let mut out = depth.clone();
    for v in 0..h {
        for u in 0..w {
            if depth.get(u, v).is_none() {
                continue;
            }
            let mut wsum = 0.0;
            let mut acc = 0.0;
            for dv in -2i64..=2 {
                let vv = (v as i64 + dv).clamp(0, h as i64 - 1) as usize;
                for du in -2i64..=2 {
                    let uu = (u as i64 + du).rem_euclid(w as i64) as usize;
                    if let Some(d) = depth.get(uu, vv) {
                        let wgt = kernel[((dv + 2) * 5 + du + 2) as usize];
                        wsum += wgt;
                        acc += wgt * d;
                    }
                }
            }
            out.set(u, v, acc / wsum, depth.cost(u, v));
        }
    }
    out
}

/// 5x5 median filter of depth over valid neighbors (lower median).
pub fn median5_depth(depth: &DepthMap) -> DepthMap {
    let (w, h) = (depth.width(), depth.height());
    let mut out = depth.clone();
    let mut vals: Vec<f64> = Vec::with_capacity(25);
    for v in 0..h {
        for u in 0..w {
            if depth.get(u, v).is_none() {
                continue;
            }
            vals.clear();
            for dv in -2i64..=2 {
                let vv = (v as i64 + dv).clamp(0, h as i64 - 1) as usize;
                for du in -2i64..=2 {
                    let uu = (u as i64 + du).rem_euclid(w as i64) as usize;
                    if let Some(d) = depth.get(uu, vv) {
                        vals.push(d);
                    }
                }
            }
            vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
            out.set(u, v, vals[(vals.len() - 1) / 2], depth.cost(u, v));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp_depth(w: usize, h: usize) -> DepthMap {
        let mut m = DepthMap::new_invalid(w, h, 0.05, 10.0);
        for v in 0..h {
            for u in 0..w {
                m.set(u, v, 1.0 + (u + v) as f64 * 0.01, 0.0);
            }
        }
        m
    }

    #[test]
    fn constant_depth_unchanged() {
        let guide = EquirectImage::new(16, 8).unwrap();
        let mut m = DepthMap::new_invalid(16, 8, 0.05, 10.0);
        for v in 0..8 {
            for u in 0..16 {
                m.set(u, v, 2.5, 0.0);
            }
        }
        let out = joint_bilateral_depth(&m, &guide, &JointBilateralParams::default());
        for v in 0..8 {
            for u in 0..16 {
                assert!((out.get(u, v).unwrap() - 2.5).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_strength_is_identity() {
        let guide = EquirectImage::new(16, 8).unwrap();
        let m = ramp_depth(16, 8);
        let params = JointBilateralParams {
            iterations: 0,
            ..JointBilateralParams::default()
        };
        let out = joint_bilateral_depth(&m, &guide, &params);
        assert_eq!(out, m);
    }

    #[test]
    fn outliers_shrink() {
        // Smooth map with ~1% of pixels forced to d_max; filtering must
        // strictly reduce the mean absolute error against the clean map.
        let (w, h) = (64, 32);
        let mut clean = DepthMap::new_invalid(w, h, 0.05, 10.0);
        for v in 0..h {
            for u in 0..w {
                clean.set(u, v, 2.0, 0.0);
            }
        }
        let mut noisy = clean.clone();
        let mut count = 0;
        for v in (0..h).step_by(7) {
            for u in (0..w).step_by(13) {
                noisy.set(u, v, 10.0, 0.0);
                count += 1;
            }
        }
        assert!(count * 100 >= w * h / 2);
        let guide = EquirectImage::new(w, h).unwrap();
        let filtered = joint_bilateral_depth(&noisy, &guide, &JointBilateralParams::default());
        let mae = |m: &DepthMap| {
            let mut acc = 0.0;
            for v in 0..h {
                for u in 0..w {
                    acc += (m.get(u, v).unwrap() - clean.get(u, v).unwrap()).abs();
                }
            }
            acc / (w * h) as f64
        };
        assert!(
            mae(&filtered) < mae(&noisy),
            "{} !< {}",
            mae(&filtered),
            mae(&noisy)
        );
    }

    #[test]
    fn invalid_pixels_preserved() {
        let guide = EquirectImage::new(16, 8).unwrap();
        let mut m = ramp_depth(16, 8);
        m.invalidate(5, 3);
        m.invalidate(0, 0);
        let out = joint_bilateral_depth(&m, &guide, &JointBilateralParams::default());
        assert_eq!(out.get(5, 3), None);
        assert_eq!(out.get(0, 0), None);
        assert_eq!(out.valid_count(), m.valid_count());
    }

    #[test]
    fn median_kills_single_spike() {
        let mut m = ramp_depth(32, 16);
        m.set(10, 8, 9.9, 0.0);
        let out = median5_depth(&m);
        assert!((out.get(10, 8).unwrap() - 1.18).abs() < 0.1);
    }
}
