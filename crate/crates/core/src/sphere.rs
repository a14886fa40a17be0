//! Spherical camera model: equirectangular pixel ↔ unit-sphere bearing
//! transforms and sub-pixel image sampling.
//!
//! Conventions: the azimuth `theta ∈ [0, 2π)` is measured from +X, the polar
//! angle `phi ∈ [0, π)` from +Z, and a pixel `(u, v)` maps linearly onto the
//! angles via `theta = 2π u / w`, `phi = π v / h`. Row `v = 0` is the zenith,
//! `v = h/2` the horizon. Integer pixel index `k` sits at continuous
//! coordinate `k` (no half-pixel offset). `u` is periodic modulo `w`; `v`
//! clamps.

use nalgebra::Vector3;
use thiserror::Error;

pub type Vec3 = Vector3<f64>;

/// Errors from coordinate transforms and image construction.
#[derive(Debug, Error)]
pub enum SphereError {
    #[error("pixel coordinate is not finite: ({0}, {1})")]
    InvalidCoordinate(f64, f64),
    #[error("bearing is zero or not finite: ({0}, {1}, {2})")]
    InvalidBearing(f64, f64, f64),
    #[error("image dimensions {0}x{1} invalid: need width ≥ 2 and height ≥ 2")]
    BadDimensions(usize, usize),
    #[error("image is {0}x{1} but the canonical equirectangular aspect requires width = 2·height")]
    BadAspect(usize, usize),
    #[error("image data length {got} does not match {want} (w·h·3)")]
    BadDataLength { got: usize, want: usize },
    #[error("channel value at pixel ({u}, {v}) is outside [0, 1] or not finite")]
    BadChannelValue { u: usize, v: usize },
}

/// Continuous pixel location in an equirectangular image.
///
/// `u` wraps modulo the image width (azimuthal periodicity); `v` is clamped
/// to the valid row range by consumers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelCoord {
    pub u: f64,
    pub v: f64,
}

impl PixelCoord {
    pub fn new(u: f64, v: f64) -> Self {
        Self { u, v }
    }
}

/// Direction in spherical coordinates: azimuth from +X, polar angle from +Z.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SphericalDir {
    /// Azimuth in `[0, 2π)`.
    pub azimuth: f64,
    /// Polar angle in `[0, π)`.
    pub polar: f64,
}

/// Unit vector on the view sphere.
///
/// The constructor guarantees a finite vector with norm 1 within 1e-9.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bearing(Vec3);

impl Bearing {
    /// Normalizes an arbitrary vector onto the unit sphere.
    pub fn from_vector(v: Vec3) -> Result<Self, SphereError> {
        let n = v.norm();
        if !n.is_finite() || n < 1e-12 {
            return Err(SphereError::InvalidBearing(v.x, v.y, v.z));
        }
        Ok(Self(v / n))
    }

    pub fn new(x: f64, y: f64, z: f64) -> Result<Self, SphereError> {
        Self::from_vector(Vec3::new(x, y, z))
    }

    /// Wraps a vector already known to be unit (within 1e-9) without renormalizing.
    pub fn from_unit_unchecked(v: Vec3) -> Self {
        debug_assert!((v.norm() - 1.0).abs() < 1e-9);
        Self(v)
    }

    pub fn as_vector(&self) -> &Vec3 {
        &self.0
    }

    pub fn x(&self) -> f64 {
        self.0.x
    }

    pub fn y(&self) -> f64 {
        self.0.y
    }

    pub fn z(&self) -> f64 {
        self.0.z
    }

    pub fn dot(&self, other: &Bearing) -> f64 {
        self.0.dot(&other.0)
    }

    /// Angle in radians between two bearings.
    pub fn angle_to(&self, other: &Bearing) -> f64 {
        self.0.dot(&other.0).clamp(-1.0, 1.0).acos()
    }

    pub fn to_spherical(&self) -> SphericalDir {
        let mut azimuth = self.0.y.atan2(self.0.x);
        if azimuth < 0.0 {
            azimuth += 2.0 * std::f64::consts::PI;
        }
        // atan2 may still return 2π after the wrap when y is -0.
        if azimuth >= 2.0 * std::f64::consts::PI {
            azimuth = 0.0;
        }
        let polar = self.0.z.clamp(-1.0, 1.0).acos();
        SphericalDir { azimuth, polar }
    }

    pub fn from_spherical(dir: SphericalDir) -> Self {
        let (st, ct) = dir.azimuth.sin_cos();
        let (sp, cp) = dir.polar.sin_cos();
        Self(Vec3::new(ct * sp, st * sp, cp))
    }
}

/// RGB raster over the full sphere; channels are reals in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EquirectImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl EquirectImage {
    /// Black image with the canonical 2:1 aspect enforced.
    pub fn new(width: usize, height: usize) -> Result<Self, SphereError> {
        Self::from_data(width, height, vec![0.0; width * height * 3])
    }

    /// Builds from row-major interleaved RGB data; enforces the 2:1 aspect.
    pub fn from_data(width: usize, height: usize, data: Vec<f64>) -> Result<Self, SphereError> {
        if width != 2 * height {
            return Err(SphereError::BadAspect(width, height));
        }
        Self::from_data_any_aspect(width, height, data)
    }

    /// Builds from data without the 2:1 aspect check, for cropped inputs.
    pub fn from_data_any_aspect(
        width: usize,
        height: usize,
        data: Vec<f64>,
    ) -> Result<Self, SphereError> {
        if width < 2 || height < 2 {
            return Err(SphereError::BadDimensions(width, height));
        }
        let want = width * height * 3;
        if data.len() != want {
            return Err(SphereError::BadDataLength {
                got: data.len(),
                want,
            });
        }
        for v in 0..height {
            for u in 0..width {
                for c in 0..3 {
                    let x = data[(v * width + u) * 3 + c];
                    if !x.is_finite() || !(0.0..=1.0).contains(&x) {
                        return Err(SphereError::BadChannelValue { u, v });
                    }
                }
            }
        }
        Ok(Self {
            width,
            height,
            data,
        })
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

    #[inline]
    pub fn get(&self, u: usize, v: usize, channel: usize) -> f64 {
        self.data[(v * self.width + u) * 3 + channel]
    }

    #[inline]
    pub fn rgb(&self, u: usize, v: usize) -> [f64; 3] {
        let i = (v * self.width + u) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set(&mut self, u: usize, v: usize, rgb: [f64; 3]) {
        let i = (v * self.width + u) * 3;
        self.data[i] = rgb[0];
        self.data[i + 1] = rgb[1];
        self.data[i + 2] = rgb[2];
    }

    /// Rec. 601 luma.
    #[inline]
    pub fn luma(&self, u: usize, v: usize) -> f64 {
        let [r, g, b] = self.rgb(u, v);
        0.299 * r + 0.587 * g + 0.114 * b
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }
}

/// Maps a pixel location to its bearing on the unit sphere.
///
/// `theta = 2π u / w`, `phi = π v / h`; `u` wraps, `v` clamps.
pub fn pixel_to_bearing(p: PixelCoord, dims: (usize, usize)) -> Result<Bearing, SphereError> {
    let (w, h) = dims;
    if w < 2 || h < 2 {
        return Err(SphereError::BadDimensions(w, h));
    }
    if !p.u.is_finite() || !p.v.is_finite() {
        return Err(SphereError::InvalidCoordinate(p.u, p.v));
    }
    let u = p.u.rem_euclid(w as f64);
    let v = p.v.clamp(0.0, (h as f64) * (1.0 - 1e-12));
    let theta = 2.0 * std::f64::consts::PI * u / w as f64;
    let phi = std::f64::consts::PI * v / h as f64;
    Ok(Bearing::from_spherical(SphericalDir {
        azimuth: theta,
        polar: phi,
    }))
}

/// Inverse map: bearing to continuous pixel location.
///
/// At the poles the azimuth is undefined and `u = 0` is returned. A bearing
/// at the south pole clamps into the last representable row rather than
/// producing `v = h`.
pub fn bearing_to_pixel(b: &Bearing, dims: (usize, usize)) -> Result<PixelCoord, SphereError> {
    let (w, h) = dims;
    if w < 2 || h < 2 {
        return Err(SphereError::BadDimensions(w, h));
    }
    let dir = b.to_spherical();
    let u = if dir.polar == 0.0 || dir.polar >= std::f64::consts::PI {
        0.0
    } else {
        w as f64 * dir.azimuth / (2.0 * std::f64::consts::PI)
    };
    let v = (h as f64 * dir.polar / std::f64::consts::PI).min((h as f64) * (1.0 - 1e-12));
    Ok(PixelCoord { u, v })
}

/// Bilinear sample of one channel with azimuthal wraparound and vertical clamp.
///
/// Coordinates are normalized first, so no error path: non-finite inputs are
/// treated as 0.
pub fn sample_bilinear(img: &EquirectImage, p: PixelCoord, channel: usize) -> f64 {
    let (w, h) = (img.width(), img.height());
    let u = if p.u.is_finite() {
        p.u.rem_euclid(w as f64)
    } else {
        0.0
    };
    let v = if p.v.is_finite() {
        p.v.clamp(0.0, (h - 1) as f64)
    } else {
        0.0
    };
    let u0 = u.floor() as usize % w;
    let u1 = (u0 + 1) % w;
    let v0 = v.floor() as usize;
    let v1 = (v0 + 1).min(h - 1);
    let fu = u - u.floor();
    let fv = v - v0 as f64;
    let top = (1.0 - fu) * img.get(u0, v0, channel) + fu * img.get(u1, v0, channel);
    let bot = (1.0 - fu) * img.get(u0, v1, channel) + fu * img.get(u1, v1, channel);
    (1.0 - fv) * top + fv * bot
}

/// Bilinear sample of all three channels at once.
pub fn sample_bilinear_rgb(img: &EquirectImage, p: PixelCoord) -> [f64; 3] {
    let (w, h) = (img.width(), img.height());
    let u = if p.u.is_finite() {
        p.u.rem_euclid(w as f64)
    } else {
        0.0
    };
    let v = if p.v.is_finite() {
        p.v.clamp(0.0, (h - 1) as f64)
    } else {
        0.0
    };
    let u0 = u.floor() as usize % w;
    let u1 = (u0 + 1) % w;
    let v0 = v.floor() as usize;
    let v1 = (v0 + 1).min(h - 1);
    let fu = u - u.floor();
    let fv = v - v0 as f64;
    let mut out = [0.0; 3];
    let a = img.rgb(u0, v0);
    let b = img.rgb(u1, v0);
    let c = img.rgb(u0, v1);
    let d = img.rgb(u1, v1);
    for ch in 0..3 {
        let top = (1.0 - fu) * a[ch] + fu * b[ch];
        let bot = (1.0 - fu) * c[ch] + fu * d[ch];
        out[ch] = (1.0 - fv) * top + fv * bot;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    const DIMS: (usize, usize) = (512, 256);

    #[test]
    fn pixel_to_bearing_axes() {
        let (w, h) = DIMS;
        let b = pixel_to_bearing(PixelCoord::new(0.0, h as f64 / 2.0), DIMS).unwrap();
        assert_relative_eq!(b.x(), 1.0, epsilon = 1e-12);
        assert_relative_eq!(b.y(), 0.0, epsilon = 1e-12);
        assert_relative_eq!(b.z(), 0.0, epsilon = 1e-12);

        let b = pixel_to_bearing(PixelCoord::new(w as f64 / 4.0, h as f64 / 2.0), DIMS).unwrap();
        assert_relative_eq!(b.y(), 1.0, epsilon = 1e-12);

        // theta = π, phi = π/4
        let b = pixel_to_bearing(PixelCoord::new(w as f64 / 2.0, h as f64 / 4.0), DIMS).unwrap();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        assert_relative_eq!(b.x(), -s, epsilon = 1e-12);
        assert_relative_eq!(b.y(), 0.0, epsilon = 1e-12);
        assert_relative_eq!(b.z(), s, epsilon = 1e-12);
    }

    #[test]
    fn bearing_to_pixel_axes_and_pole() {
        let (w, h) = DIMS;
        let p = bearing_to_pixel(&Bearing::new(0.0, 1.0, 0.0).unwrap(), DIMS).unwrap();
        assert_relative_eq!(p.u, w as f64 / 4.0, epsilon = 1e-9);
        assert_relative_eq!(p.v, h as f64 / 2.0, epsilon = 1e-9);

        // North pole: azimuth undefined, u = 0 by convention.
        let p = bearing_to_pixel(&Bearing::new(0.0, 0.0, 1.0).unwrap(), DIMS).unwrap();
        assert_eq!(p.u, 0.0);
        assert_eq!(p.v, 0.0);

        // South pole clamps into the last row instead of producing v = h.
        let p = bearing_to_pixel(&Bearing::new(0.0, 0.0, -1.0).unwrap(), DIMS).unwrap();
        assert!(p.v < h as f64);
    }

    #[test]
    fn invalid_inputs_error() {
        assert!(pixel_to_bearing(PixelCoord::new(f64::NAN, 0.0), DIMS).is_err());
        assert!(Bearing::new(0.0, 0.0, 0.0).is_err());
        assert!(Bearing::new(f64::INFINITY, 0.0, 0.0).is_err());
    }

    #[test]
    fn roundtrip_pixel_bearing_pixel() {
        let (w, h) = DIMS;
        for v in [1.0, 10.0, h as f64 / 2.0, h as f64 - 1.0] {
            for u in [0.0, 0.25, 100.0, w as f64 - 0.5] {
                let p = PixelCoord::new(u, v);
                let b = pixel_to_bearing(p, DIMS).unwrap();
                let q = bearing_to_pixel(&b, DIMS).unwrap();
                let du = (q.u - u).rem_euclid(w as f64);
                let du = du.min(w as f64 - du);
                assert!(du < 1e-6, "u: {} vs {}", q.u, u);
                assert!((q.v - v).abs() < 1e-6, "v: {} vs {}", q.v, v);
            }
        }
    }

    #[test]
    fn bilinear_integer_query_is_exact() {
        let mut img = EquirectImage::new(4, 2).unwrap();
        img.set(2, 1, [0.25, 0.5, 0.75]);
        assert_eq!(sample_bilinear(&img, PixelCoord::new(2.0, 1.0), 0), 0.25);
        assert_eq!(sample_bilinear(&img, PixelCoord::new(2.0, 1.0), 1), 0.5);
        assert_eq!(sample_bilinear(&img, PixelCoord::new(2.0, 1.0), 2), 0.75);
    }

    #[test]
    fn bilinear_constant_image() {
        let data = vec![0.3; 4 * 2 * 3];
        let img = EquirectImage::from_data(4, 2, data).unwrap();
        for (u, v) in [(0.1, 0.7), (3.9, 1.0), (2.5, 0.0)] {
            assert_relative_eq!(
                sample_bilinear(&img, PixelCoord::new(u, v), 1),
                0.3,
                epsilon = 1e-15
            );
        }
    }

    #[test]
    fn bilinear_wraparound_blend() {
        // Two-pixel-wide gradient: column 0 dark, column 1 bright. At
        // u = w - 0.5 the sample blends the last and first columns equally.
        let w = 4;
        let h = 2;
        let mut data = vec![0.0; w * h * 3];
        for v in 0..h {
            for u in 0..w {
                let val = u as f64 / (w - 1) as f64;
                for c in 0..3 {
                    data[(v * w + u) * 3 + c] = val;
                }
            }
        }
        let img = EquirectImage::from_data(w, h, data).unwrap();
        let got = sample_bilinear(&img, PixelCoord::new(w as f64 - 0.5, 0.0), 0);
        let want = (img.get(w - 1, 0, 0) + img.get(0, 0, 0)) / 2.0;
        assert_relative_eq!(got, want, epsilon = 1e-12);
    }

    #[test]
    fn seam_continuity() {
        // Smooth (constant-per-row) image: approaching the seam from both
        // sides must agree.
        let w = 8;
        let h = 4;
        let mut data = vec![0.0; w * h * 3];
        for v in 0..h {
            for u in 0..w {
                for c in 0..3 {
                    data[(v * w + u) * 3 + c] = (v as f64 + 1.0) / (h as f64 + 1.0);
                }
            }
        }
        let img = EquirectImage::from_data_any_aspect(w, h, data).unwrap();
        for v in [0.0, 1.5, 3.0] {
            let left = sample_bilinear(&img, PixelCoord::new(-1e-9, v), 0);
            let right = sample_bilinear(&img, PixelCoord::new(1e-9, v), 0);
            assert!((left - right).abs() < 1e-9);
        }
    }

    #[test]
    fn aspect_enforced_by_default() {
        assert!(EquirectImage::new(4, 4).is_err());
        assert!(EquirectImage::from_data_any_aspect(4, 4, vec![0.0; 48]).is_ok());
    }

    #[test]
    fn channel_range_validated() {
        let mut data = vec![0.0; 4 * 2 * 3];
        data[5] = 1.5;
        assert!(EquirectImage::from_data(4, 2, data).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn bearing_norm_is_one(u in -1e6f64..1e6, v in -1e6f64..1e6) {
                let b = pixel_to_bearing(PixelCoord::new(u, v), DIMS).unwrap();
                prop_assert!((b.as_vector().norm() - 1.0).abs() < 1e-9);
            }

            #[test]
            fn pixel_roundtrip(u in 0.0f64..512.0, v in 1.0f64..255.0) {
                let b = pixel_to_bearing(PixelCoord::new(u, v), DIMS).unwrap();
                let q = bearing_to_pixel(&b, DIMS).unwrap();
                let du = (q.u - u).rem_euclid(512.0);
                let du = du.min(512.0 - du);
                prop_assert!(du < 1e-6 && (q.v - v).abs() < 1e-6);
            }

            #[test]
            fn bearing_roundtrip(
                theta in 0.0f64..std::f64::consts::TAU,
                phi in 1e-3f64..(std::f64::consts::PI - 1e-3),
            ) {
                let b = Bearing::from_spherical(SphericalDir { azimuth: theta, polar: phi });
                let p = bearing_to_pixel(&b, DIMS).unwrap();
                let b2 = pixel_to_bearing(p, DIMS).unwrap();
                prop_assert!((b.as_vector() - b2.as_vector()).norm() < 1e-9);
            }

            #[test]
            fn bilinear_stays_in_image_range(
                data in proptest::collection::vec(0.0f64..=1.0, 8 * 4 * 3),
                u in -20.0f64..20.0,
                v in -5.0f64..10.0,
            ) {
                let img = EquirectImage::from_data(8, 4, data).unwrap();
                for c in 0..3 {
                    let s = sample_bilinear(&img, PixelCoord::new(u, v), c);
                    prop_assert!((-1e-12..=1.0 + 1e-12).contains(&s));
                }
            }
        }
    }
}
