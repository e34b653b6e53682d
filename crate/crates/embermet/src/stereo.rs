//! Stereo camera models, triangulation, and the physical-scale metrology
//! (separation height, scale factor, equivalent radius).

use nalgebra::{Matrix3, Matrix4x3, Vector2, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pinhole camera with radial-tangential distortion. Extrinsics map world
/// coordinates into the camera frame: X_c = R X_w + t.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CameraModel {
    /// Focal length in pixels (square pixels, one focal value).
    pub focal_px: f64,
    pub principal_point: (f64, f64),
    /// (k1, k2, p1, p2, k3).
    pub distortion: [f64; 5],
    /// World-to-camera rotation, row-major.
    pub rotation: Matrix3<f64>,
    /// World-to-camera translation, millimetres.
    pub translation: Vector3<f64>,
    /// Pixel pitch, mm per pixel.
    pub pixel_pitch_mm: f64,
    /// Sensor size in pixels.
    pub sensor_dims: (usize, usize),
}

impl CameraModel {
    pub fn validate(&self) -> Result<()> {
        if self.focal_px <= 0.0 {
            return Err(Error::Invariant("focal length must be positive".into()));
        }
        if self.pixel_pitch_mm <= 0.0 {
            return Err(Error::Invariant("pixel pitch must be positive".into()));
        }
        let rrt = self.rotation * self.rotation.transpose();
        if (rrt - Matrix3::identity()).norm() > 1e-9 {
            return Err(Error::Invariant("rotation is not orthonormal".into()));
        }
        if (self.rotation.determinant() - 1.0).abs() > 1e-9 {
            return Err(Error::Invariant("rotation determinant must be +1".into()));
        }
        Ok(())
    }

    /// Camera centre in world coordinates.
    pub fn center_world(&self) -> Vector3<f64> {
        -self.rotation.transpose() * self.translation
    }

    /// Apply the radial-tangential model to normalized coordinates.
    pub fn distort_normalized(&self, x: f64, y: f64) -> (f64, f64) {
        let [k1, k2, p1, p2, k3] = self.distortion;
        let r2 = x * x + y * y;
        let radial = 1.0 + k1 * r2 + k2 * r2 * r2 + k3 * r2 * r2 * r2;
        let xd = x * radial + 2.0 * p1 * x * y + p2 * (r2 + 2.0 * x * x);
        let yd = y * radial + p1 * (r2 + 2.0 * y * y) + 2.0 * p2 * x * y;
        (xd, yd)
    }

    /// Project a world point to pixel coordinates. Fails on non-positive
    /// camera-frame depth.
    pub fn project(&self, p_w: &Vector3<f64>) -> Result<Vector2<f64>> {
        let pc = self.rotation * p_w + self.translation;
        if pc.z <= 0.0 {
            return Err(Error::Projection(format!("non-positive depth {}", pc.z)));
        }
        let (xd, yd) = self.distort_normalized(pc.x / pc.z, pc.y / pc.z);
        Ok(Vector2::new(
            self.focal_px * xd + self.principal_point.0,
            self.focal_px * yd + self.principal_point.1,
        ))
    }

    /// Invert the distortion model: pixel -> normalized ray (x, y, 1).
    ///
    /// Iterative fixed-point inversion; re-projecting the returned ray must
    /// reproduce the pixel within 1e-6 px or a numeric error is raised.
    pub fn undistort(&self, pixel: &Vector2<f64>) -> Result<Vector3<f64>> {
        let xd = (pixel.x - self.principal_point.0) / self.focal_px;
        let yd = (pixel.y - self.principal_point.1) / self.focal_px;
        let [k1, k2, p1, p2, k3] = self.distortion;
        let mut x = xd;
        let mut y = yd;
        for _ in 0..20 {
            let r2 = x * x + y * y;
            let radial = 1.0 + k1 * r2 + k2 * r2 * r2 + k3 * r2 * r2 * r2;
            let dx = 2.0 * p1 * x * y + p2 * (r2 + 2.0 * x * x);
            let dy = p1 * (r2 + 2.0 * y * y) + 2.0 * p2 * x * y;
            x = (xd - dx) / radial;
            y = (yd - dy) / radial;
        }
        let (rx, ry) = self.distort_normalized(x, y);
        let residual = self.focal_px * ((rx - xd).hypot(ry - yd));
        if residual > 1e-6 {
            return Err(Error::Numeric(format!(
                "undistortion did not converge (residual {residual:.3e} px)"
            )));
        }
        Ok(Vector3::new(x, y, 1.0))
    }
}

/// Calibrated stereo pair; the world frame is the left camera frame.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StereoRig {
    pub left: CameraModel,
    pub right: CameraModel,
}

impl StereoRig {
    pub fn validate(&self) -> Result<()> {
        self.left.validate()?;
        self.right.validate()?;
        if (self.left.rotation - Matrix3::identity()).norm() > 1e-12
            || self.left.translation.norm() > 1e-12
        {
            return Err(Error::Invariant(
                "left camera extrinsics must be exactly identity/zero".into(),
            ));
        }
        if self.right.translation.norm() <= 0.0 {
            return Err(Error::Invariant("stereo baseline must be non-zero".into()));
        }
        Ok(())
    }

    pub fn baseline_mm(&self) -> f64 {
        self.right.translation.norm()
    }

    /// Essential matrix E = [t]x R for x_r' E x_l = 0 on normalized rays.
    pub fn essential(&self) -> Matrix3<f64> {
        let t = &self.right.translation;
        let tx = Matrix3::new(0.0, -t.z, t.y, t.z, 0.0, -t.x, -t.y, t.x, 0.0);
        tx * self.right.rotation
    }
}

/// Two reference points on the propellant column defining the axial direction.
#[derive(Debug, Clone)]
pub struct ColumnAxis {
    pub p1: Vector3<f64>,
    pub p2: Vector3<f64>,
}

impl ColumnAxis {
    pub fn new(p1: Vector3<f64>, p2: Vector3<f64>) -> Result<Self> {
        if (p2 - p1).norm() <= 0.0 {
            return Err(Error::Invariant("column axis endpoints coincide".into()));
        }
        Ok(Self { p1, p2 })
    }

    pub fn unit_axis(&self) -> Vector3<f64> {
        (self.p2 - self.p1).normalize()
    }
}

#[derive(Debug, Clone)]
pub struct TriangulationResult {
    pub point_world: Vector3<f64>,
    /// Symmetric RMS reprojection error in pixels.
    pub reprojection_error_px: f64,
}

fn reprojection_residuals(
    rig: &StereoRig,
    p: &Vector3<f64>,
    left: &Vector2<f64>,
    right: &Vector2<f64>,
) -> Option<[f64; 4]> {
    let pl = rig.left.project(p).ok()?;
    let pr = rig.right.project(p).ok()?;
    Some([pl.x - left.x, pl.y - left.y, pr.x - right.x, pr.y - right.y])
}

fn rms(res: &[f64; 4]) -> f64 {
    (res.iter().map(|r| r * r).sum::<f64>() / 2.0).sqrt()
}

/// Triangulate from one pixel observation per view: DLT on undistorted rays,
/// then Gauss-Newton refinement of the symmetric pixel reprojection error.
/// The refinement never returns a worse point than the DLT initialization.
pub fn triangulate(
    rig: &StereoRig,
    left_px: &Vector2<f64>,
    right_px: &Vector2<f64>,
) -> Result<TriangulationResult> {
    let ray_l = rig.left.undistort(left_px)?;
    let ray_r = rig.right.undistort(right_px)?;
    // Ray directions in the world frame.
    let dir_l = ray_l.normalize();
    let dir_r = (rig.right.rotation.transpose() * ray_r).normalize();
    let angle = dir_l.dot(&dir_r).clamp(-1.0, 1.0).acos();
    let min_angle = 0.5f64.to_radians();
    if angle < min_angle || angle > std::f64::consts::PI - min_angle {
        return Err(Error::IllConditioned(format!(
            "ray intersection angle {:.4} deg",
            angle.to_degrees()
        )));
    }
    // DLT rows: (x * r3 - r1) P = t1 - x * t3 per camera and coordinate.
    let mut a = Matrix4x3::zeros();
    let mut b = Vector4::zeros();
    let mut fill = |row: usize, cam: &CameraModel, coord: f64, axis: usize| {
        let r = &cam.rotation;
        for c in 0..3 {
            a[(row, c)] = coord * r[(2, c)] - r[(axis, c)];
        }
        b[row] = cam.translation[axis] - coord * cam.translation.z;
    };
    fill(0, &rig.left, ray_l.x, 0);
    fill(1, &rig.left, ray_l.y, 1);
    fill(2, &rig.right, ray_r.x, 0);
    fill(3, &rig.right, ray_r.y, 1);
    let svd = a.svd(true, true);
    let p0 = svd
        .solve(&b, 1e-12)
        .map_err(|e| Error::Numeric(format!("DLT solve failed: {e}")))?;
    let mut p = Vector3::new(p0.x, p0.y, p0.z);
    let mut best = p;
    let mut best_err = match reprojection_residuals(rig, &p, left_px, right_px) {
        Some(res) => rms(&res),
        None => return Err(Error::IllConditioned("DLT point behind a camera".into())),
    };
    // Gauss-Newton with numeric Jacobian (4 residuals, 3 parameters).
    for _ in 0..15 {
        let res = match reprojection_residuals(rig, &p, left_px, right_px) {
            Some(r) => r,
            None => break,
        };
        let mut jac = Matrix4x3::zeros();
        let step = 1e-6 * (1.0 + p.norm());
        let mut ok = true;
        for c in 0..3 {
            let mut pp = p;
            pp[c] += step;
            match reprojection_residuals(rig, &pp, left_px, right_px) {
                Some(rp) => {
                    for r in 0..4 {
                        jac[(r, c)] = (rp[r] - res[r]) / step;
                    }
                }
                None => {
                    ok = false;
                    break;
                }
            }
        }
        if !ok {
            break;
        }
        let jtj = jac.transpose() * jac;
        let jtr = jac.transpose() * Vector4::from_row_slice(&res);
        let delta = match jtj.lu().solve(&jtr) {
            Some(d) => d,
            None => break,
        };
        p -= delta;
        if let Some(r) = reprojection_residuals(rig, &p, left_px, right_px) {
            let e = rms(&r);
            if e < best_err {
                best_err = e;
                best = p;
            }
        }
        if delta.norm() < 1e-12 {
            break;
        }
    }
    Ok(TriangulationResult { point_world: best, reprojection_error_px: best_err })
}

/// Signed separation height: axial projection of (P3 - P1) onto the column.
pub fn separation_height(axis: &ColumnAxis, p3: &Vector3<f64>) -> f64 {
    (p3 - axis.p1).dot(&axis.unit_axis())
}

/// Image-space distance d = sqrt(f^2 + |p3 - p0|^2), in pixels.
pub fn object_distance_px(camera: &CameraModel, p3: &Vector2<f64>) -> f64 {
    let dx = p3.x - camera.principal_point.0;
    let dy = p3.y - camera.principal_point.1;
    (camera.focal_px * camera.focal_px + dx * dx + dy * dy).sqrt()
}

/// Scale factor in mm/pixel.
///
/// `d` is in pixels; multiplying numerator and denominator by the pixel pitch
/// gives S_f = D mm * mu / (mu * d px) = D / d, the only dimensionally
/// consistent reading. `literal` applies the formula S_f = D * mu / d with d
/// left in pixels, for comparison against the uninterpreted expression.
pub fn scale_factor(camera: &CameraModel, distance_mm: f64, d_px: f64, literal: bool) -> f64 {
    if literal {
        distance_mm * camera.pixel_pitch_mm / d_px
    } else {
        distance_mm / d_px
    }
}

/// Physical area, equivalent radius, and equivalent diameter from a pixel
/// area and a scale factor: S = A * S_f^2, r_e = sqrt(S / pi), d_e = 2 r_e.
pub fn equivalent_radius(pixel_area: f64, s_f: f64) -> (f64, f64, f64) {
    let s = pixel_area * s_f * s_f;
    let r_e = (s / std::f64::consts::PI).sqrt();
    (s, r_e, 2.0 * r_e)
}

/// A fully measured stereo-confirmed particle.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParticleMeasurement {
    pub t_us: i64,
    /// 3D centroid in the world (left-camera) frame, mm.
    pub centroid_mm: [f64; 3],
    /// Signed separation height, mm.
    pub dh_mm: f64,
    /// Object-to-optical-centre distance used for scaling (left view), mm.
    pub distance_mm: f64,
    /// Left-view scale factor, mm/px.
    pub scale_mm_per_px: f64,
    pub area_mm2: f64,
    pub re_left_mm: f64,
    pub re_right_mm: f64,
    /// Headline equivalent radius: geometric mean of the two views.
    pub re_mm: f64,
    pub de_mm: f64,
    pub reprojection_error_px: f64,
}

/// One gated per-view observation ready for matching, reduced to what the
/// stereo stage needs.
#[derive(Debug, Clone)]
pub struct ViewObservation {
    pub t_us: i64,
    pub centroid_px: Vector2<f64>,
    pub pixel_area: f64,
}

/// Greedy one-to-one epipolar matching under time and distance gates.
/// Pairs are taken in ascending epipolar distance, ties broken on |dt|.
pub fn epipolar_match(
    rig: &StereoRig,
    left: &[ViewObservation],
    right: &[ViewObservation],
    max_epi_px: f64,
    max_dt_us: i64,
) -> Result<Vec<(usize, usize, f64)>> {
    let e = rig.essential();
    let mut candidates: Vec<(f64, i64, usize, usize)> = Vec::new();
    for (i, ol) in left.iter().enumerate() {
        let ray_l = match rig.left.undistort(&ol.centroid_px) {
            Ok(r) => r,
            Err(_) => continue,
        };
        for (j, or) in right.iter().enumerate() {
            let dt = (ol.t_us - or.t_us).abs();
            if dt > max_dt_us {
                continue;
            }
            let ray_r = match rig.right.undistort(&or.centroid_px) {
                Ok(r) => r,
                Err(_) => continue,
            };
            // Symmetric point-to-epipolar-line distance in pixels.
            let l_r = e * ray_l;
            let l_l = e.transpose() * ray_r;
            let d_r = (ray_r.dot(&l_r)).abs() / (l_r.x * l_r.x + l_r.y * l_r.y).sqrt()
                * rig.right.focal_px;
            let d_l = (ray_l.dot(&l_l)).abs() / (l_l.x * l_l.x + l_l.y * l_l.y).sqrt()
                * rig.left.focal_px;
            let dist = 0.5 * (d_r + d_l);
            if dist <= max_epi_px {
                candidates.push((dist, dt, i, j));
            }
        }
    }
    candidates.sort_by(|a, b| {
        a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)).then(a.3.cmp(&b.3))
    });
    let mut used_l = vec![false; left.len()];
    let mut used_r = vec![false; right.len()];
    let mut matches = Vec::new();
    for (dist, _, i, j) in candidates {
        if !used_l[i] && !used_r[j] {
            used_l[i] = true;
            used_r[j] = true;
            matches.push((i, j, dist));
        }
    }
    Ok(matches)
}

/// Measure one matched observation pair.
pub fn measure_pair(
    rig: &StereoRig,
    axis: &ColumnAxis,
    left: &ViewObservation,
    right: &ViewObservation,
    literal_scale: bool,
) -> Result<ParticleMeasurement> {
    let tri = triangulate(rig, &left.centroid_px, &right.centroid_px)?;
    let p3 = tri.point_world;
    let dh = separation_height(axis, &p3);
    // Left view scaling.
    let d_l = object_distance_px(&rig.left, &left.centroid_px);
    let dist_l = p3.norm(); // left camera sits at the world origin
    let sf_l = scale_factor(&rig.left, dist_l, d_l, literal_scale);
    let (s_l, re_l, _) = equivalent_radius(left.pixel_area.max(0.0), sf_l);
    // Right view scaling.
    let d_r = object_distance_px(&rig.right, &right.centroid_px);
    let dist_r = (rig.right.rotation * p3 + rig.right.translation).norm();
    let sf_r = scale_factor(&rig.right, dist_r, d_r, literal_scale);
    let (_, re_r, _) = equivalent_radius(right.pixel_area.max(0.0), sf_r);
    let re = (re_l * re_r).sqrt();
    Ok(ParticleMeasurement {
        t_us: left.t_us,
        centroid_mm: [p3.x, p3.y, p3.z],
        dh_mm: dh,
        distance_mm: dist_l,
        scale_mm_per_px: sf_l,
        area_mm2: s_l,
        re_left_mm: re_l,
        re_right_mm: re_r,
        re_mm: re,
        de_mm: 2.0 * re,
        reprojection_error_px: tri.reprojection_error_px,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SizeHistogram {
    pub bin_width: f64,
    pub counts: Vec<usize>,
    /// Bin-centre r_e of each detected mode, ascending.
    pub modes: Vec<f64>,
}

/// Fixed-width histogram over headline r_e with local-maximum mode detection.
/// Modes must exceed both neighbors and a prominence fraction of the peak.
pub fn size_histogram(
    measurements: &[ParticleMeasurement],
    bin_width: f64,
    prominence: f64,
) -> Result<SizeHistogram> {
    if measurements.is_empty() {
        return Err(Error::Input("size histogram needs at least one measurement".into()));
    }
    if bin_width <= 0.0 {
        return Err(Error::Config("bin width must be positive".into()));
    }
    let max_re = measurements.iter().map(|m| m.re_mm).fold(0.0f64, f64::max);
    let nbins = (max_re / bin_width).floor() as usize + 1;
    let mut counts = vec![0usize; nbins];
    for m in measurements {
        let b = ((m.re_mm / bin_width).floor() as usize).min(nbins - 1);
        counts[b] += 1;
    }
    let peak = *counts.iter().max().unwrap() as f64;
    let floor = (prominence * peak).max(1.0);
    let mut modes = Vec::new();
    for i in 0..nbins {
        let c = counts[i] as f64;
        if c < floor {
            continue;
        }
        let prev = if i == 0 { 0.0 } else { counts[i - 1] as f64 };
        let next = if i + 1 < nbins { counts[i + 1] as f64 } else { 0.0 };
        // Strictly above the left neighbor, at least level to the right;
        // plateaus count once at their left edge.
        if c > prev && c >= next {
            modes.push((i as f64 + 0.5) * bin_width);
        }
    }
    Ok(SizeHistogram { bin_width, counts, modes })
}

/// Euler-angle fixture helper: R = Rz(yaw) * Ry(pitch) * Rx(roll).
pub fn rotation_from_euler(roll: f64, pitch: f64, yaw: f64) -> Matrix3<f64> {
    let (sr, cr) = roll.sin_cos();
    let (sp, cp) = pitch.sin_cos();
    let (sy, cy) = yaw.sin_cos();
    let rx = Matrix3::new(1.0, 0.0, 0.0, 0.0, cr, -sr, 0.0, sr, cr);
    let ry = Matrix3::new(cp, 0.0, sp, 0.0, 1.0, 0.0, -sp, 0.0, cp);
    let rz = Matrix3::new(cy, -sy, 0.0, sy, cy, 0.0, 0.0, 0.0, 1.0);
    rz * ry * rx
}

/// Default calibration fixture for the stereo event rig (left camera is the
/// world frame; right camera given by Euler angles and translation in mm).
pub fn default_rig() -> StereoRig {
    let left = CameraModel {
        focal_px: 1703.25,
        principal_point: (582.69, 497.77),
        distortion: [-0.11, 0.22, -0.01, 0.01, 0.00],
        rotation: Matrix3::identity(),
        translation: Vector3::zeros(),
        pixel_pitch_mm: 0.009,
        sensor_dims: (1280, 1024),
    };
    let right = CameraModel {
        focal_px: 1959.47,
        principal_point: (502.29, 387.05),
        distortion: [0.13, -5.68, -0.02, 0.01, 0.00],
        rotation: rotation_from_euler(-0.360, 1.410, 0.171),
        translation: Vector3::new(-105.90, -28.25, 149.75),
        pixel_pitch_mm: 0.009,
        sensor_dims: (1280, 1024),
    };
    StereoRig { left, right }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn no_distortion_left(f: f64, cx: f64, cy: f64) -> CameraModel {
        CameraModel {
            focal_px: f,
            principal_point: (cx, cy),
            distortion: [0.0; 5],
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
            pixel_pitch_mm: 0.01,
            sensor_dims: (1024, 1024),
        }
    }

    #[test]
    fn optical_axis_projects_to_principal_point() {
        let cam = no_distortion_left(1000.0, 512.0, 384.0);
        for z in [10.0, 100.0, 5000.0] {
            let p = cam.project(&Vector3::new(0.0, 0.0, z)).unwrap();
            assert_relative_eq!(p.x, 512.0, epsilon = 1e-12);
            assert_relative_eq!(p.y, 384.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn pinhole_similar_triangles() {
        let cam = no_distortion_left(800.0, 512.0, 384.0);
        let p = cam.project(&Vector3::new(3.0, 0.0, 200.0)).unwrap();
        assert_relative_eq!(p.x, 512.0 + 800.0 * 3.0 / 200.0, epsilon = 1e-12);
    }

    #[test]
    fn negative_depth_is_rejected() {
        let cam = no_distortion_left(800.0, 512.0, 384.0);
        assert!(matches!(
            cam.project(&Vector3::new(0.0, 0.0, -5.0)),
            Err(Error::Projection(_))
        ));
    }

    #[test]
    fn undistort_without_distortion() {
        let cam = no_distortion_left(1000.0, 500.0, 400.0);
        let ray = cam.undistort(&Vector2::new(700.0, 500.0)).unwrap();
        assert_relative_eq!(ray.x, 0.2, epsilon = 1e-12);
        assert_relative_eq!(ray.y, 0.1, epsilon = 1e-12);
    }

    #[test]
    fn principal_point_is_distortion_fixed_point() {
        let rig = default_rig();
        for cam in [&rig.left, &rig.right] {
            let pp = Vector2::new(cam.principal_point.0, cam.principal_point.1);
            let ray = cam.undistort(&pp).unwrap();
            assert!(ray.x.abs() < 1e-12 && ray.y.abs() < 1e-12);
        }
    }

    #[test]
    fn undistort_round_trip_under_real_distortion() {
        let rig = default_rig();
        for cam in [&rig.left, &rig.right] {
            for i in 0..50 {
                // Deterministic probe points within a moderate radius.
                let ang = i as f64 * 0.7;
                let r = 0.05 + 0.1 * ((i % 7) as f64 / 7.0);
                let (x, y) = (r * ang.cos(), r * ang.sin());
                let (xd, yd) = cam.distort_normalized(x, y);
                let px = Vector2::new(
                    cam.focal_px * xd + cam.principal_point.0,
                    cam.focal_px * yd + cam.principal_point.1,
                );
                let ray = cam.undistort(&px).unwrap();
                assert!(
                    (ray.x - x).hypot(ray.y - y) * cam.focal_px < 1e-6,
                    "round trip failed at probe {i}"
                );
            }
        }
    }

    #[test]
    fn triangulation_round_trip_table_rig() {
        let rig = default_rig();
        rig.validate().unwrap();
        // In the joint working volume where both optical axes converge.
        let p = Vector3::new(5.0, -3.0, 100.0);
        let l = rig.left.project(&p).unwrap();
        let r = rig.right.project(&p).unwrap();
        let tri = triangulate(&rig, &l, &r).unwrap();
        assert!((tri.point_world - p).norm() < 1e-6, "error {}", (tri.point_world - p).norm());
        assert!(tri.reprojection_error_px < 1e-6);
    }

    #[test]
    fn baseline_point_is_ill_conditioned() {
        let rig = default_rig();
        // A point on the baseline: both rays collinear with the baseline.
        let c_r = rig.right.center_world();
        let p = c_r * 0.5; // halfway between the two camera centres
        let l = rig.left.project(&p);
        let r = rig.right.project(&p);
        if let (Ok(l), Ok(r)) = (l, r) {
            // Degenerate geometry must not yield a point; the specific error
            // kind depends on where the inversion breaks down first.
            assert!(triangulate(&rig, &l, &r).is_err());
        }
        // Points behind a camera also fail, which is an acceptable outcome
        // for the degenerate geometry.
    }

    #[test]
    fn separation_height_endpoints() {
        let axis = ColumnAxis::new(
            Vector3::new(1.0, 2.0, 3.0),
            Vector3::new(1.0, 12.0, 3.0),
        )
        .unwrap();
        assert_relative_eq!(separation_height(&axis, &axis.p1), 0.0, epsilon = 1e-12);
        assert_relative_eq!(separation_height(&axis, &axis.p2), 10.0, epsilon = 1e-12);
    }

    #[test]
    fn separation_height_linear_along_axis() {
        let axis = ColumnAxis::new(
            Vector3::new(0.0, 0.0, 100.0),
            Vector3::new(3.0, 4.0, 100.0),
        )
        .unwrap();
        let len = (axis.p2 - axis.p1).norm();
        for i in 0..=10 {
            let lambda = i as f64 / 10.0;
            let p = axis.p1 + lambda * (axis.p2 - axis.p1);
            assert_relative_eq!(separation_height(&axis, &p), lambda * len, epsilon = 1e-12);
        }
    }

    #[test]
    fn separation_height_rigid_invariance() {
        let axis = ColumnAxis::new(
            Vector3::new(1.0, 0.0, 50.0),
            Vector3::new(2.0, 5.0, 55.0),
        )
        .unwrap();
        let p3 = Vector3::new(4.0, 2.0, 60.0);
        let dh = separation_height(&axis, &p3);
        let rot = rotation_from_euler(0.3, -0.2, 0.9);
        let shift = Vector3::new(-7.0, 11.0, 3.0);
        let axis2 = ColumnAxis::new(rot * axis.p1 + shift, rot * axis.p2 + shift).unwrap();
        let dh2 = separation_height(&axis2, &(rot * p3 + shift));
        assert_relative_eq!(dh, dh2, epsilon = 1e-10);
    }

    #[test]
    fn object_distance_cases() {
        let cam = no_distortion_left(1000.0, 500.0, 400.0);
        assert_relative_eq!(
            object_distance_px(&cam, &Vector2::new(500.0, 400.0)),
            1000.0,
            epsilon = 1e-12
        );
        let cam345 = no_distortion_left(300.0, 0.0, 0.0);
        assert_relative_eq!(
            object_distance_px(&cam345, &Vector2::new(400.0, 0.0)),
            500.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn scale_factor_at_principal_point() {
        let cam = no_distortion_left(1000.0, 500.0, 400.0);
        let sf = scale_factor(&cam, 500.0, 1000.0, false);
        assert_relative_eq!(sf, 0.5, epsilon = 1e-12);
        // Linear in D.
        assert_relative_eq!(scale_factor(&cam, 1000.0, 1000.0, false), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn equivalent_radius_unit_circle() {
        let (s, re, de) = equivalent_radius(std::f64::consts::PI, 1.0);
        assert_relative_eq!(s, std::f64::consts::PI, epsilon = 1e-12);
        assert_relative_eq!(re, 1.0, epsilon = 1e-12);
        assert_relative_eq!(de, 2.0, epsilon = 1e-12);
        let (_, re2, _) = equivalent_radius(4.0 * std::f64::consts::PI, 1.0);
        assert_relative_eq!(re2, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn equivalent_radius_scaling_laws() {
        let (s1, r1, _) = equivalent_radius(100.0, 0.1);
        let (s2, r2, _) = equivalent_radius(100.0, 0.2);
        assert_relative_eq!(r2 / r1, 2.0, epsilon = 1e-12);
        assert_relative_eq!(s2 / s1, 4.0, epsilon = 1e-12);
    }

    #[test]
    fn epipolar_match_consistent_pair() {
        let rig = default_rig();
        let p = Vector3::new(5.0, 2.0, 100.0);
        let l = rig.left.project(&p).unwrap();
        let r = rig.right.project(&p).unwrap();
        let left = vec![ViewObservation { t_us: 1000, centroid_px: l, pixel_area: 50.0 }];
        let right = vec![ViewObservation { t_us: 1002, centroid_px: r, pixel_area: 50.0 }];
        let matches = epipolar_match(&rig, &left, &right, 2.0, 12).unwrap();
        assert_eq!(matches.len(), 1);
        assert!(matches[0].2 < 1e-6);
    }

    #[test]
    fn epipolar_match_time_gate() {
        let rig = default_rig();
        let p = Vector3::new(5.0, 2.0, 100.0);
        let l = rig.left.project(&p).unwrap();
        let r = rig.right.project(&p).unwrap();
        let left = vec![ViewObservation { t_us: 0, centroid_px: l, pixel_area: 50.0 }];
        // 40 ms skew exceeds the 12 us synchronization bound.
        let right = vec![ViewObservation { t_us: 40_000, centroid_px: r, pixel_area: 50.0 }];
        let matches = epipolar_match(&rig, &left, &right, 2.0, 12).unwrap();
        assert!(matches.is_empty());
    }

    #[test]
    fn size_histogram_single_measurement() {
        let m = ParticleMeasurement {
            t_us: 0,
            centroid_mm: [0.0; 3],
            dh_mm: 0.0,
            distance_mm: 100.0,
            scale_mm_per_px: 0.1,
            area_mm2: 1.0,
            re_left_mm: 0.5,
            re_right_mm: 0.5,
            re_mm: 0.5,
            de_mm: 1.0,
            reprojection_error_px: 0.0,
        };
        let h = size_histogram(&[m], 0.2, 0.2).unwrap();
        assert_eq!(h.modes.len(), 1);
        assert!(size_histogram(&[], 0.2, 0.2).is_err());
    }

    #[test]
    fn size_histogram_two_gaussian_modes() {
        let mut ms = Vec::new();
        for i in 0..500 {
            let jitter = (((i as u64).wrapping_mul(0x9E3779B97F4A7C15) >> 11) % 2000) as f64
                / 2000.0
                - 0.5;
            let re = if i % 2 == 0 { 0.5 } else { 1.5 } + 0.2 * jitter;
            ms.push(ParticleMeasurement {
                t_us: i,
                centroid_mm: [0.0; 3],
                dh_mm: 0.0,
                distance_mm: 100.0,
                scale_mm_per_px: 0.1,
                area_mm2: 1.0,
                re_left_mm: re,
                re_right_mm: re,
                re_mm: re,
                de_mm: 2.0 * re,
                reprojection_error_px: 0.0,
            });
        }
        let h = size_histogram(&ms, 0.15, 0.25).unwrap();
        assert_eq!(h.modes.len(), 2, "modes {:?} counts {:?}", h.modes, h.counts);
    }
}
