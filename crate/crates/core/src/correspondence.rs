//! Sparse features on equirectangular images and bearing correspondences.
//!
//! Detection runs FAST-style corner tests on the raster with per-latitude-band
//! feature budgets proportional to sin(phi), so feature density stays roughly
//! uniform on the sphere. Descriptors are 256-bit rotated binary comparisons
//! on a box-smoothed luma patch. Matching is exhaustive Hamming distance with
//! a mutual cross-check. A plain-text correspondence format lets externally
//! produced matches drive the rest of the pipeline.

use std::path::Path;
use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sphere::{pixel_to_bearing, Bearing, EquirectImage, PixelCoord};

#[derive(Debug, Error)]
pub enum CorrespondenceError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {reason}")]
    Parse {
        path: String,
        line: usize,
        reason: String,
    },
    #[error("descriptor lengths differ between feature lists")]
    DescriptorMismatch,
}

/// 256-bit binary descriptor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Descriptor(pub [u64; 4]);

impl Descriptor {
    pub fn hamming(&self, other: &Descriptor) -> u32 {
        self.0
            .iter()
            .zip(other.0.iter())
            .map(|(a, b)| (a ^ b).count_ones())
            .sum()
    }
}

/// A detected corner with its bearing and descriptor.
#[derive(Debug, Clone)]
pub struct Feature {
    pub pixel: PixelCoord,
    pub bearing: Bearing,
    pub descriptor: Descriptor,
    pub response: f64,
    pub orientation: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub max_features: usize,
    /// FAST intensity threshold on [0, 1] luma.
    pub fast_threshold: f64,
    /// Fraction of the image height excluded at each pole.
    pub pole_margin: f64,
    /// Extra exclusion at the bottom (tripod crops), fraction of height.
    pub bottom_exclude: f64,
    /// Number of latitude bands sharing the detection budget.
    pub latitude_bands: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            max_features: 2000,
            fast_threshold: 0.06,
            pole_margin: 0.05,
            bottom_exclude: 0.0,
            latitude_bands: 12,
        }
    }
}

/// One bearing match between a fixed pair of views.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    pub a: Bearing,
    pub b: Bearing,
    /// Descriptor distance when produced by the matcher; absent for loaded
    /// files (the text format carries no distances).
    pub distance: Option<f64>,
}

/// Matches between one ordered pair of views.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrespondenceSet {
    pub view_a: usize,
    pub view_b: usize,
    pub matches: Vec<Correspondence>,
}

impl CorrespondenceSet {
    pub fn empty(view_a: usize, view_b: usize) -> Self {
        Self {
            view_a,
            view_b,
            matches: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.matches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.matches.is_empty()
    }

    pub fn bearing_pairs(&self) -> Vec<(Bearing, Bearing)> {
        self.matches.iter().map(|m| (m.a, m.b)).collect()
    }
}

const CIRCLE16: [(i64, i64); 16] = [
    (0, -3),
    (1, -3),
    (2, -2),
    (3, -1),
    (3, 0),
    (3, 1),
    (2, 2),
    (1, 3),
    (0, 3),
    (-1, 3),
    (-2, 2),
    (-3, 1),
    (-3, 0),
    (-3, -1),
    (-2, -2),
    (-1, -3),
];

struct LumaGrid {
    w: usize,
    h: usize,
    data: Vec<f64>,
}

impl LumaGrid {
    fn from_image(img: &EquirectImage) -> Self {
        let (w, h) = img.dims();
        let mut data = vec![0.0; w * h];
        for v in 0..h {
            for u in 0..w {
                data[v * w + u] = img.luma(u, v);
            }
        }
        Self { w, h, data }
    }

    #[inline]
    fn at(&self, u: i64, v: i64) -> f64 {
        let u = u.rem_euclid(self.w as i64) as usize;
        let v = v.clamp(0, self.h as i64 - 1) as usize;
        self.data[v * self.w + u]
    }

    /// 5x5 box blur with azimuthal wrap, for descriptor sampling.
    fn box5(&self) -> LumaGrid {
        let mut out = vec![0.0; self.w * self.h];
        for v in 0..self.h as i64 {
            for u in 0..self.w as i64 {
                let mut acc = 0.0;
                for dv in -2..=2 {
                    for du in -2..=2 {
                        acc += self.at(u + du, v + dv);
                    }
                }
                out[v as usize * self.w + u as usize] = acc / 25.0;
            }
        }
        LumaGrid {
            w: self.w,
            h: self.h,
            data: out,
        }
    }

    fn sample(&self, u: f64, v: f64) -> f64 {
        let u = u.rem_euclid(self.w as f64);
        let v = v.clamp(0.0, (self.h - 1) as f64);
        let u0 = u.floor() as usize % self.w;
        let u1 = (u0 + 1) % self.w;
        let v0 = v.floor() as usize;
        let v1 = (v0 + 1).min(self.h - 1);
        let fu = u - u.floor();
        let fv = v - v0 as f64;
        let top = (1.0 - fu) * self.data[v0 * self.w + u0] + fu * self.data[v0 * self.w + u1];
        let bot = (1.0 - fu) * self.data[v1 * self.w + u0] + fu * self.data[v1 * self.w + u1];
        (1.0 - fv) * top + fv * bot
    }
}

/// FAST-9 corner score: 0 when not a corner, otherwise the summed contrast
/// margin over the circle.
fn fast_score(luma: &LumaGrid, u: i64, v: i64, threshold: f64) -> f64 {
    let c = luma.at(u, v);
    let mut ring = [0.0f64; 16];
    for (i, (du, dv)) in CIRCLE16.iter().enumerate() {
        ring[i] = luma.at(u + du, v + dv);
    }
    let mut run_bright = 0usize;
    let mut run_dark = 0usize;
    let mut best_bright = 0usize;
    let mut best_dark = 0usize;
    for i in 0..32 {
        let p = ring[i % 16];
        if p > c + threshold {
            run_bright += 1;
            best_bright = best_bright.max(run_bright);
        } else {
            run_bright = 0;
        }
        if p < c - threshold {
            run_dark += 1;
            best_dark = best_dark.max(run_dark);
        } else {
            run_dark = 0;
        }
    }
    if best_bright.max(best_dark) < 9 {
        return 0.0;
    }
    ring.iter()
        .map(|&p| ((p - c).abs() - threshold).max(0.0))
        .sum()
}

/// Intensity-centroid orientation over a radius-7 disc.
fn orientation(luma: &LumaGrid, u: i64, v: i64) -> f64 {
    let mut m10 = 0.0;
    let mut m01 = 0.0;
    for dv in -7i64..=7 {
        for du in -7i64..=7 {
            if du * du + dv * dv > 49 {
                continue;
            }
            let i = luma.at(u + du, v + dv);
            m10 += du as f64 * i;
            m01 += dv as f64 * i;
        }
    }
    m01.atan2(m10)
}

const PATTERN_RADIUS: f64 = 12.0;

type PatternPairs = [((f64, f64), (f64, f64)); 256];

fn pattern() -> &'static PatternPairs {
    static PATTERN: OnceLock<PatternPairs> = OnceLock::new();
    PATTERN.get_or_init(|| {
        let mut rng = ChaCha8Rng::seed_from_u64(0x0bd7_5eed);
        let draw = |rng: &mut ChaCha8Rng| loop {
            let x = rng.random_range(-PATTERN_RADIUS..PATTERN_RADIUS);
            let y = rng.random_range(-PATTERN_RADIUS..PATTERN_RADIUS);
            if x * x + y * y <= PATTERN_RADIUS * PATTERN_RADIUS {
                return (x, y);
            }
        };
        std::array::from_fn(|_| (draw(&mut rng), draw(&mut rng)))
    })
}

fn describe(blurred: &LumaGrid, u: f64, v: f64, angle: f64) -> Descriptor {
    let (sin_a, cos_a) = angle.sin_cos();
    let mut bits = [0u64; 4];
    for (i, ((ax, ay), (bx, by))) in pattern().iter().enumerate() {
        let ra = (cos_a * ax - sin_a * ay, sin_a * ax + cos_a * ay);
        let rb = (cos_a * bx - sin_a * by, sin_a * bx + cos_a * by);
        let pa = blurred.sample(u + ra.0, v + ra.1);
        let pb = blurred.sample(u + rb.0, v + rb.1);
        if pa < pb {
            bits[i / 64] |= 1u64 << (i % 64);
        }
    }
    Descriptor(bits)
}

/// Detects up to `max_features` corners with a near-uniform density on the
/// sphere. Deterministic: identical inputs give identical feature lists.
pub fn detect_features(img: &EquirectImage, cfg: &FeatureConfig) -> Vec<Feature> {
    let (w, h) = img.dims();
    let luma = LumaGrid::from_image(img);
    let blurred = luma.box5();

    let top_margin = ((cfg.pole_margin * h as f64).ceil() as usize).max(3);
    let bottom_margin = (((cfg.pole_margin + cfg.bottom_exclude) * h as f64).ceil() as usize).max(3);
    if top_margin + bottom_margin >= h {
        return Vec::new();
    }
    let v_lo = top_margin;
    let v_hi = h - bottom_margin; // exclusive

    // Corner responses with 3x3 non-max suppression; plateau ties resolve to
    // the smallest (v, u).
    let mut scores = vec![0.0f64; w * h];
    let rows: Vec<i64> = (v_lo as i64..v_hi as i64).collect();
    let score_rows: Vec<Vec<f64>> = rows
        .par_iter()
        .map(|&v| {
            (0..w as i64)
                .map(|u| fast_score(&luma, u, v, cfg.fast_threshold))
                .collect()
        })
        .collect();
    for (ri, &v) in rows.iter().enumerate() {
        scores[(v as usize) * w..(v as usize + 1) * w].copy_from_slice(&score_rows[ri]);
    }
    let keeps = |u: usize, v: usize| -> bool {
        let s = scores[v * w + u];
        if s <= 0.0 {
            return false;
        }
        for dv in -1i64..=1 {
            for du in -1i64..=1 {
                if du == 0 && dv == 0 {
                    continue;
                }
                let nu = (u as i64 + du).rem_euclid(w as i64) as usize;
                let nv = v as i64 + dv;
                if nv < 0 || nv >= h as i64 {
                    continue;
                }
                let nv = nv as usize;
                let ns = scores[nv * w + nu];
                if ns > s {
                    return false;
                }
                if ns == s && (nv, nu) < (v, u) {
                    return false;
                }
            }
        }
        true
    };

    // Latitude bands share the budget proportionally to the sphere area they
    // cover (integral of sin(phi) over the band).
    let bands = cfg.latitude_bands.max(1);
    let band_rows = (v_hi - v_lo).div_ceil(bands);
    let mut band_limits: Vec<(usize, usize, f64)> = Vec::new();
    let mut total_weight = 0.0;
    for b in 0..bands {
        let lo = v_lo + b * band_rows;
        let hi = ((lo + band_rows).min(v_hi)).max(lo);
        if lo >= hi {
            continue;
        }
        let phi_lo = std::f64::consts::PI * lo as f64 / h as f64;
        let phi_hi = std::f64::consts::PI * hi as f64 / h as f64;
        let weight = phi_lo.cos() - phi_hi.cos();
        total_weight += weight;
        band_limits.push((lo, hi, weight));
    }

    let mut picked: Vec<(usize, usize, f64)> = Vec::new();
    for &(lo, hi, weight) in &band_limits {
        let budget = ((cfg.max_features as f64) * weight / total_weight).round() as usize;
        if budget == 0 {
            continue;
        }
        let mut cands: Vec<(usize, usize, f64)> = Vec::new();
        for v in lo..hi {
            for u in 0..w {
                if keeps(u, v) {
                    cands.push((u, v, scores[v * w + u]));
                }
            }
        }
        cands.sort_by(|a, b| {
            b.2.partial_cmp(&a.2)
                .unwrap()
                .then_with(|| (a.1, a.0).cmp(&(b.1, b.0)))
        });
        cands.truncate(budget);
        picked.extend(cands);
    }
    picked.sort_by_key(|&(u, v, _)| (v, u));

    picked
        .into_iter()
        .map(|(u, v, response)| {
            let angle = orientation(&luma, u as i64, v as i64);
            let descriptor = describe(&blurred, u as f64, v as f64, angle);
            let pixel = PixelCoord::new(u as f64, v as f64);
            let bearing = pixel_to_bearing(pixel, (w, h)).expect("in-range pixel");
            Feature {
                pixel,
                bearing,
                descriptor,
                response,
                orientation: angle,
            }
        })
        .collect()
}

/// Exhaustive Hamming matching with mutual cross-check; matches come back
/// sorted by ascending distance.
pub fn match_features(
    view_a: usize,
    feats_a: &[Feature],
    view_b: usize,
    feats_b: &[Feature],
) -> CorrespondenceSet {
    if feats_a.is_empty() || feats_b.is_empty() {
        return CorrespondenceSet::empty(view_a, view_b);
    }
    let best_in = |from: &[Feature], to: &[Feature]| -> Vec<(usize, u32)> {
        from.par_iter()
            .map(|f| {
                let mut best = (0usize, u32::MAX);
                for (j, g) in to.iter().enumerate() {
                    let d = f.descriptor.hamming(&g.descriptor);
                    if d < best.1 {
                        best = (j, d);
                    }
                }
                best
            })
            .collect()
    };
    let a_to_b = best_in(feats_a, feats_b);
    let b_to_a = best_in(feats_b, feats_a);

    let mut pairs: Vec<(usize, usize, u32)> = a_to_b
        .iter()
        .enumerate()
        .filter(|(i, (j, _))| b_to_a[*j].0 == *i)
        .map(|(i, &(j, d))| (i, j, d))
        .collect();
    pairs.sort_by_key(|&(i, j, d)| (d, i, j));

    CorrespondenceSet {
        view_a,
        view_b,
        matches: pairs
            .into_iter()
            .map(|(i, j, d)| Correspondence {
                a: feats_a[i].bearing,
                b: feats_b[j].bearing,
                distance: Some(d as f64),
            })
            .collect(),
    }
}

/// Loads a correspondence file: one match per line,
/// `viewA viewB bxA byA bzA bxB byB bzB`, `#` comments. Bearings are
/// renormalized; exact duplicate rows collapse to the first occurrence.
pub fn load_correspondences(path: &Path) -> Result<CorrespondenceSet, CorrespondenceError> {
    let text = std::fs::read_to_string(path).map_err(|source| CorrespondenceError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut set: Option<CorrespondenceSet> = None;
    let mut seen: std::collections::HashSet<[u64; 6]> = std::collections::HashSet::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parse_err = |reason: String| CorrespondenceError::Parse {
            path: path.display().to_string(),
            line: line_no,
            reason,
        };
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.len() != 8 {
            return Err(parse_err(format!("expected 8 fields, got {}", tokens.len())));
        }
        let view_a: usize = tokens[0]
            .parse()
            .map_err(|_| parse_err(format!("bad view id '{}'", tokens[0])))?;
        let view_b: usize = tokens[1]
            .parse()
            .map_err(|_| parse_err(format!("bad view id '{}'", tokens[1])))?;
        let mut vals = [0.0f64; 6];
        for (k, tok) in tokens[2..].iter().enumerate() {
            vals[k] = tok
                .parse()
                .map_err(|_| parse_err(format!("bad number '{tok}'")))?;
        }
        let a = Bearing::new(vals[0], vals[1], vals[2])
            .map_err(|e| parse_err(format!("bearing A: {e}")))?;
        let b = Bearing::new(vals[3], vals[4], vals[5])
            .map_err(|e| parse_err(format!("bearing B: {e}")))?;
        match &mut set {
            None => {
                set = Some(CorrespondenceSet::empty(view_a, view_b));
            }
            Some(s) => {
                if s.view_a != view_a || s.view_b != view_b {
                    return Err(parse_err(format!(
                        "view pair ({view_a}, {view_b}) differs from ({}, {})",
                        s.view_a, s.view_b
                    )));
                }
            }
        }
        let key = [
            a.x().to_bits(),
            a.y().to_bits(),
            a.z().to_bits(),
            b.x().to_bits(),
            b.y().to_bits(),
            b.z().to_bits(),
        ];
        if seen.insert(key) {
            set.as_mut().unwrap().matches.push(Correspondence {
                a,
                b,
                distance: None,
            });
        }
    }
    Ok(set.unwrap_or_else(|| CorrespondenceSet::empty(0, 0)))
}

/// Writes a correspondence set in the plain-text format read by
/// [`load_correspondences`]. Numbers use the shortest representation that
/// round-trips exactly.
pub fn save_correspondences(
    set: &CorrespondenceSet,
    path: &Path,
) -> Result<(), CorrespondenceError> {
    let mut out = String::new();
    out.push_str("# view_a view_b ax ay az bx by bz\n");
    for m in &set.matches {
        out.push_str(&format!(
            "{} {} {} {} {} {} {} {}\n",
            set.view_a,
            set.view_b,
            m.a.x(),
            m.a.y(),
            m.a.z(),
            m.b.x(),
            m.b.y(),
            m.b.z()
        ));
    }
    std::fs::write(path, out).map_err(|source| CorrespondenceError::Io {
        path: path.display().to_string(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn noise_image(w: usize, h: usize, seed: u64) -> EquirectImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut img = EquirectImage::new(w, h).unwrap();
        for v in 0..h {
            for u in 0..w {
                let g: f64 = rng.random_range(0.0..1.0);
                img.set(u, v, [g, g, g]);
            }
        }
        img
    }

    #[test]
    fn constant_image_has_no_features() {
        let img = EquirectImage::new(128, 64).unwrap();
        let feats = detect_features(&img, &FeatureConfig::default());
        assert!(feats.is_empty());
    }

    #[test]
    fn detection_is_deterministic() {
        let img = noise_image(128, 64, 3);
        let cfg = FeatureConfig {
            max_features: 200,
            ..FeatureConfig::default()
        };
        let f1 = detect_features(&img, &cfg);
        let f2 = detect_features(&img, &cfg);
        assert_eq!(f1.len(), f2.len());
        for (a, b) in f1.iter().zip(&f2) {
            assert_eq!(a.pixel, b.pixel);
            assert_eq!(a.descriptor, b.descriptor);
            assert_eq!(a.response, b.response);
        }
        assert!(!f1.is_empty());
    }

    #[test]
    fn self_match_is_identity_at_distance_zero() {
        let img = noise_image(128, 64, 9);
        let cfg = FeatureConfig {
            max_features: 100,
            ..FeatureConfig::default()
        };
        let feats = detect_features(&img, &cfg);
        assert!(feats.len() >= 10);
        let set = match_features(0, &feats, 1, &feats);
        assert_eq!(set.len(), feats.len());
        for m in &set.matches {
            assert_eq!(m.distance, Some(0.0));
            assert_eq!(m.a, m.b);
        }
    }

    #[test]
    fn cross_check_keeps_only_mutual_best() {
        // Random descriptors: verify by brute force that every emitted match
        // is mutual-best in both directions.
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mk = |rng: &mut ChaCha8Rng| Descriptor(std::array::from_fn(|_| rng.random::<u64>()));
        let feat = |d: Descriptor| Feature {
            pixel: PixelCoord::new(0.0, 1.0),
            bearing: Bearing::new(1.0, 0.0, 0.0).unwrap(),
            descriptor: d,
            response: 1.0,
            orientation: 0.0,
        };
        let a: Vec<Feature> = (0..20).map(|_| feat(mk(&mut rng))).collect();
        let b: Vec<Feature> = (0..20).map(|_| feat(mk(&mut rng))).collect();
        let set = match_features(0, &a, 1, &b);
        // Brute-force mutual-best oracle.
        let mut expected = 0usize;
        for (i, fa) in a.iter().enumerate() {
            let (bj, _) = b
                .iter()
                .enumerate()
                .map(|(j, fb)| (j, fa.descriptor.hamming(&fb.descriptor)))
                .min_by_key(|&(j, d)| (d, j))
                .unwrap();
            let (ai, _) = a
                .iter()
                .enumerate()
                .map(|(k, fa2)| (k, b[bj].descriptor.hamming(&fa2.descriptor)))
                .min_by_key(|&(k, d)| (d, k))
                .unwrap();
            if ai == i {
                expected += 1;
            }
        }
        assert_eq!(set.len(), expected);
    }

    #[test]
    fn empty_inputs_match_to_empty() {
        let set = match_features(0, &[], 1, &[]);
        assert!(set.is_empty());
    }

    #[test]
    fn correspondence_file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corr.txt");
        let set = CorrespondenceSet {
            view_a: 0,
            view_b: 3,
            matches: vec![
                Correspondence {
                    a: Bearing::new(1.0, 0.0, 0.0).unwrap(),
                    b: Bearing::new(0.6, -0.3, 0.9).unwrap(),
                    distance: None,
                },
                Correspondence {
                    a: Bearing::new(-0.2, 0.4, 0.7).unwrap(),
                    b: Bearing::new(0.0, 0.0, -1.0).unwrap(),
                    distance: None,
                },
            ],
        };
        save_correspondences(&set, &path).unwrap();
        let back = load_correspondences(&path).unwrap();
        assert_eq!(back, set);
    }

    #[test]
    fn load_renormalizes_and_reports_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corr.txt");
        std::fs::write(&path, "# comment\n0 1 2 0 0 0 3 0\n").unwrap();
        let set = load_correspondences(&path).unwrap();
        assert_eq!(set.len(), 1);
        assert!((set.matches[0].a.x() - 1.0).abs() < 1e-12);
        assert!((set.matches[0].b.y() - 1.0).abs() < 1e-12);

        std::fs::write(&path, "0 1 1 0 0 0 1 0\n0 1 oops 0 0 0 1 0\n").unwrap();
        let err = load_correspondences(&path).unwrap_err();
        assert!(err.to_string().contains(":2:"), "{err}");

        std::fs::write(&path, "").unwrap();
        assert!(load_correspondences(&path).unwrap().is_empty());
    }
}
