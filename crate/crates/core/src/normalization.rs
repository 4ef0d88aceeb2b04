//! Face normalization.
//!
//! A generic 3D face model is fitted to five landmarks, then a virtual
//! camera is rotated to look straight at the face center with the head's
//! roll removed and moved to a fixed distance. The resulting perspective
//! warp maps the real image into the normalized patch.

use nalgebra::{Matrix3, Point2, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::{planar_pose_guess, solve_pnp, spatial_spread, CameraError, Intrinsics, Pose};
use crate::geometry::{Mat3, Vec3};
use crate::image::{Image, Sample};
use crate::lm::{LmConfig, Termination};

pub const RIGHT_EYE: usize = 0;
pub const LEFT_EYE: usize = 1;
pub const NOSE: usize = 2;
pub const MOUTH_RIGHT: usize = 3;
pub const MOUTH_LEFT: usize = 4;

/// Head pose maps head-model coordinates into the camera frame.
pub type HeadPose = Pose;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NormalizationError {
    #[error(transparent)]
    Camera(#[from] CameraError),
    #[error("landmarks are not finite")]
    NonFinite,
    #[error("invalid face model: {0}")]
    InvalidModel(String),
    #[error("invalid normalization parameters: {0}")]
    InvalidParams(String),
    #[error("face center is at the camera origin")]
    ZeroCenter,
    #[error("head x-axis is parallel to the viewing direction")]
    DegenerateRoll,
    #[error("warp is singular or maps a point to infinity")]
    SingularWarp,
    #[error("gimbal lock: pitch {pitch} rad is within 1e-6 of ±π/2")]
    GimbalLock { roll: f64, pitch: f64, yaw: f64 },
    #[error("head pose places the face behind the camera (z = {0})")]
    BehindCamera(f64),
}

/// Right eye, left eye, nose tip, right mouth corner, left mouth corner.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Landmarks5(pub [Point2<f64>; 5]);

impl Landmarks5 {
    pub fn from_array(p: [[f64; 2]; 5]) -> Self {
        Self(p.map(|[x, y]| Point2::new(x, y)))
    }

    pub fn to_array(&self) -> [[f64; 2]; 5] {
        self.0.map(|p| [p.x, p.y])
    }

    pub fn points(&self) -> &[Point2<f64>] {
        &self.0
    }

    pub fn right_eye(&self) -> Point2<f64> {
        self.0[RIGHT_EYE]
    }

    pub fn left_eye(&self) -> Point2<f64> {
        self.0[LEFT_EYE]
    }

    pub fn validate(&self) -> Result<(), NormalizationError> {
        if self.0.iter().any(|p| !(p.x.is_finite() && p.y.is_finite())) {
            return Err(NormalizationError::NonFinite);
        }
        if crate::camera::planar_spread_ratio(&self.0) < 1e-10 {
            return Err(CameraError::Degenerate("landmarks are collinear".into()).into());
        }
        Ok(())
    }
}

/// Five 3D points (mm) of a generic head in a camera-aligned frame: x to the
/// subject's left as seen by the camera, y down, z away from the camera.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FaceModel {
    pub points: [Vec3; 5],
}

impl Default for FaceModel {
    /// A rough average face. Not derived from any measured head; real
    /// deployments should load a fitted model from configuration.
    fn default() -> Self {
        Self {
            points: [
                Vec3::new(-30.0, 0.0, 0.0),
                Vec3::new(30.0, 0.0, 0.0),
                Vec3::new(0.0, 30.0, -30.0),
                Vec3::new(-25.0, 60.0, -5.0),
                Vec3::new(25.0, 60.0, -5.0),
            ],
        }
    }
}

impl FaceModel {
    pub fn new(points: [Vec3; 5]) -> Result<Self, NormalizationError> {
        let m = Self { points };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<(), NormalizationError> {
        let (r, l) = (self.points[RIGHT_EYE], self.points[LEFT_EYE]);
        if self.points.iter().any(|p| !p.iter().all(|v| v.is_finite())) {
            return Err(NormalizationError::InvalidModel("non-finite coordinate".into()));
        }
        let tol = 1e-9 * (1.0 + r.norm());
        if (r.x + l.x).abs() > tol || (r.y - l.y).abs() > tol || (r.z - l.z).abs() > tol || r.x == 0.0 {
            return Err(NormalizationError::InvalidModel(
                "eye points must be mirror images across x = 0".into(),
            ));
        }
        let spread = spatial_spread(&self.points);
        if spread[0] <= 1e-9 * spread[2] {
            return Err(NormalizationError::InvalidModel("points are coplanar".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormParams {
    pub virtual_focal: f64,
    pub norm_distance: f64,
    pub face_patch: usize,
    pub eye_patch: usize,
    pub flip_left_eye: bool,
}

impl Default for NormParams {
    fn default() -> Self {
        Self {
            virtual_focal: 960.0,
            norm_distance: 300.0,
            face_patch: 448,
            eye_patch: 112,
            flip_left_eye: true,
        }
    }
}

impl NormParams {
    pub fn validate(&self) -> Result<(), NormalizationError> {
        let ok = self.virtual_focal > 0.0
            && self.virtual_focal.is_finite()
            && self.norm_distance > 0.0
            && self.norm_distance.is_finite()
            && self.face_patch > 0
            && self.eye_patch > 0
            && self.eye_patch <= self.face_patch;
        if ok {
            Ok(())
        } else {
            Err(NormalizationError::InvalidParams(format!("{self:?}")))
        }
    }

    pub fn virtual_intrinsics(&self) -> Mat3 {
        let c = self.face_patch as f64 / 2.0;
        Matrix3::new(self.virtual_focal, 0.0, c, 0.0, self.virtual_focal, c, 0.0, 0.0, 1.0)
    }
}

/// Fits the face model to the landmarks by minimizing reprojection error.
pub fn estimate_head_pose(
    landmarks: &Landmarks5,
    model: &FaceModel,
    k: &Intrinsics,
) -> Result<HeadPose, NormalizationError> {
    landmarks.validate()?;
    model.validate()?;
    let config = LmConfig {
        max_iterations: 100,
        step_tolerance: 1e-10,
        ..LmConfig::default()
    };
    let report = solve_pnp(&model.points, landmarks.points(), k, &config)?;
    if matches!(report.termination, Termination::InvalidStart) {
        return Err(CameraError::NoConvergence {
            rms: report.rms(),
            iterations: report.iterations,
        }
        .into());
    }
    if report.termination == Termination::MaxIterations && report.rms() > 1e-6 {
        return Err(CameraError::NoConvergence {
            rms: report.rms(),
            iterations: report.iterations,
        }
        .into());
    }
    let pose = report.state;
    if pose.translation.z <= 0.0 {
        return Err(NormalizationError::BehindCamera(pose.translation.z));
    }
    Ok(pose)
}

/// The closed-form planar starting pose used by [`estimate_head_pose`].
pub fn initial_head_pose(landmarks: &Landmarks5, model: &FaceModel, k: &Intrinsics) -> Result<HeadPose, NormalizationError> {
    Ok(planar_pose_guess(&model.points, landmarks.points(), k)?)
}

/// Mean of both eyes and the nose, in camera coordinates.
pub fn compute_face_center(pose: &HeadPose, model: &FaceModel) -> Vec3 {
    let p = &model.points;
    let mean = (p[RIGHT_EYE] + p[LEFT_EYE] + p[NOSE]) / 3.0;
    pose.transform(&mean)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normalization {
    /// Rotation from the real camera frame to the normalized one.
    pub rotation: Mat3,
    pub scale: f64,
    /// Real image pixels → normalized patch pixels.
    pub warp: Mat3,
}

pub fn compute_normalization(
    pose: &HeadPose,
    face_center: &Vec3,
    k_real: &Intrinsics,
    params: &NormParams,
) -> Result<Normalization, NormalizationError> {
    params.validate()?;
    let dist = face_center.norm();
    if !(dist > 0.0) || !dist.is_finite() {
        return Err(NormalizationError::ZeroCenter);
    }
    let z = face_center / dist;
    let head_x: Vec3 = pose.rotation.column(0).into();
    let y = z.cross(&head_x);
    if y.norm() < 1e-9 * head_x.norm() {
        return Err(NormalizationError::DegenerateRoll);
    }
    let y = y.normalize();
    let x = y.cross(&z);
    let rotation = Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
    let scale = params.norm_distance / dist;
    let s = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, scale));
    let warp = params.virtual_intrinsics() * s * rotation * k_real.inverse_matrix();
    Ok(Normalization { rotation, scale, warp })
}

/// Applies a homography to a point with perspective division.
pub fn apply_homography(h: &Mat3, p: &Point2<f64>) -> Result<Point2<f64>, NormalizationError> {
    let v = h * Vector3::new(p.x, p.y, 1.0);
    if v.z.abs() < 1e-12 || !v.iter().all(|c| c.is_finite()) {
        return Err(NormalizationError::SingularWarp);
    }
    Ok(Point2::new(v.x / v.z, v.y / v.z))
}

pub fn warp_landmarks(landmarks: &Landmarks5, warp: &Mat3) -> Result<Landmarks5, NormalizationError> {
    let mut out = landmarks.0;
    for p in out.iter_mut() {
        *p = apply_homography(warp, p)?;
    }
    Ok(Landmarks5(out))
}

/// Resamples `img` so that `out(u, v) = img(warp⁻¹·(u, v, 1))` with bilinear
/// interpolation. Samples outside the source read as zero.
pub fn warp_image<T: Sample>(
    img: &Image<T>,
    warp: &Mat3,
    out_width: usize,
    out_height: usize,
) -> Result<Image<T>, NormalizationError> {
    let det = warp.determinant();
    if !det.is_finite() || det.abs() < 1e-300 {
        return Err(NormalizationError::SingularWarp);
    }
    let inv = warp.try_inverse().ok_or(NormalizationError::SingularWarp)?;
    let ch = img.channels();
    let mut out = Image::<T>::new(out_width, out_height, ch);
    if out_width == 0 || out_height == 0 {
        return Ok(out);
    }
    out.data_mut()
        .par_chunks_mut(out_width * ch)
        .enumerate()
        .for_each(|(v, row)| {
            let mut acc = vec![0.0; ch];
            for u in 0..out_width {
                let s = inv * Vector3::new(u as f64, v as f64, 1.0);
                let px = &mut row[u * ch..(u + 1) * ch];
                if s.z.abs() < 1e-12 || !sample_bilinear(img, s.x / s.z, s.y / s.z, &mut acc) {
                    continue;
                }
                for (dst, a) in px.iter_mut().zip(&acc) {
                    *dst = T::from_f64(*a);
                }
            }
        });
    Ok(out)
}

/// Writes the bilinear sample at `(x, y)` into `acc`. Returns false when the
/// whole 2×2 neighborhood lies outside the image.
fn sample_bilinear<T: Sample>(img: &Image<T>, x: f64, y: f64, acc: &mut [f64]) -> bool {
    let (w, h) = (img.width() as f64, img.height() as f64);
    if !(x > -1.0 && y > -1.0 && x < w && y < h) {
        return false;
    }
    let x0 = x.floor();
    let y0 = y.floor();
    let (fx, fy) = (x - x0, y - y0);
    let (x0, y0) = (x0 as i64, y0 as i64);
    let weights = [
        (0, 0, (1.0 - fx) * (1.0 - fy)),
        (1, 0, fx * (1.0 - fy)),
        (0, 1, (1.0 - fx) * fy),
        (1, 1, fx * fy),
    ];
    for (c, a) in acc.iter_mut().enumerate() {
        *a = 0.0;
        for &(dx, dy, wgt) in &weights {
            if wgt != 0.0 {
                *a += wgt * img.get_or_zero(x0 + dx, y0 + dy, c).to_f64();
            }
        }
    }
    true
}

/// Rotates a 3D gaze vector into the normalized frame. Scaling is not
/// applied, so the norm is preserved.
pub fn normalize_gaze(g: &Vec3, rotation: &Mat3) -> Vec3 {
    rotation * g
}

/// Inverse of [`normalize_gaze`].
pub fn denormalize_gaze(g: &Vec3, rotation: &Mat3) -> Vec3 {
    rotation.transpose() * g
}

#[derive(Debug, Clone, PartialEq)]
pub struct EyeCrops<T> {
    pub right: Image<T>,
    pub left: Image<T>,
    /// True when either window had to be shifted to stay inside the patch.
    pub clamped: bool,
}

/// Top-left corner of the crop centered on `center`, shifted inside
/// `[0, limit - size]`. Returns the corner and whether it moved.
fn crop_origin(center: f64, size: usize, limit: usize) -> (usize, bool) {
    let want = center.round() - (size / 2) as f64;
    let max = limit.saturating_sub(size) as f64;
    let got = if want.is_nan() { 0.0 } else { want.clamp(0.0, max) };
    (got as usize, got != want)
}

pub fn crop_eyes<T: Sample>(
    face_patch: &Image<T>,
    warped: &Landmarks5,
    params: &NormParams,
) -> EyeCrops<T> {
    let size = params.eye_patch.min(face_patch.width()).min(face_patch.height());
    let crop = |p: Point2<f64>| {
        let (x0, cx) = crop_origin(p.x, size, face_patch.width());
        let (y0, cy) = crop_origin(p.y, size, face_patch.height());
        (face_patch.crop(x0, y0, size, size), cx || cy)
    };
    let (right, cr) = crop(warped.right_eye());
    let (mut left, cl) = crop(warped.left_eye());
    if params.flip_left_eye {
        left = left.flip_horizontal();
    }
    EyeCrops {
        right,
        left,
        clamped: cr || cl,
    }
}

/// Euler angles with `M = Ry(yaw)·Rx(pitch)·Rz(roll)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeadRotation {
    pub roll: f64,
    pub pitch: f64,
    pub yaw: f64,
}

impl HeadRotation {
    pub fn to_array(self) -> [f64; 3] {
        [self.roll, self.pitch, self.yaw]
    }

    pub fn to_matrix(self) -> Mat3 {
        let ry = nalgebra::Rotation3::from_axis_angle(&Vec3::y_axis(), self.yaw);
        let rx = nalgebra::Rotation3::from_axis_angle(&Vec3::x_axis(), self.pitch);
        let rz = nalgebra::Rotation3::from_axis_angle(&Vec3::z_axis(), self.roll);
        (ry * rx * rz).into_inner()
    }
}

pub fn euler_from_matrix(m: &Mat3) -> Result<HeadRotation, NormalizationError> {
    let pitch = (-m[(1, 2)]).clamp(-1.0, 1.0).asin();
    let roll = m[(1, 0)].atan2(m[(1, 1)]);
    let yaw = m[(0, 2)].atan2(m[(2, 2)]);
    let rot = HeadRotation { roll, pitch, yaw };
    if pitch.abs() > std::f64::consts::FRAC_PI_2 - 1e-6 {
        return Err(NormalizationError::GimbalLock { roll, pitch, yaw });
    }
    Ok(rot)
}

/// Head orientation as seen from the normalized camera.
pub fn normalized_head_rotation(pose: &HeadPose, rotation: &Mat3) -> Result<HeadRotation, NormalizationError> {
    euler_from_matrix(&(rotation * pose.rotation))
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormalizationResult {
    pub pose: HeadPose,
    pub face_center: Vec3,
    pub rotation: Mat3,
    pub scale: f64,
    pub warp: Mat3,
    pub landmarks: Landmarks5,
    pub head_rotation: HeadRotation,
}

/// Pose fit, normalization and landmark warping in one call.
pub fn normalize_face(
    landmarks: &Landmarks5,
    model: &FaceModel,
    k: &Intrinsics,
    params: &NormParams,
) -> Result<NormalizationResult, NormalizationError> {
    let pose = estimate_head_pose(landmarks, model, k)?;
    let face_center = compute_face_center(&pose, model);
    let n = compute_normalization(&pose, &face_center, k, params)?;
    let warped = warp_landmarks(landmarks, &n.warp)?;
    let head_rotation = normalized_head_rotation(&pose, &n.rotation)?;
    Ok(NormalizationResult {
        pose,
        face_center,
        rotation: n.rotation,
        scale: n.scale,
        warp: n.warp,
        landmarks: warped,
        head_rotation,
    })
}

/// Projects the model through `pose`; used to synthesize landmarks.
pub fn project_model(model: &FaceModel, pose: &HeadPose, k: &Intrinsics) -> Result<Landmarks5, CameraError> {
    let mut out = [Point2::origin(); 5];
    for (o, p) in out.iter_mut().zip(&model.points) {
        let s = crate::camera::project_point(&pose.transform(p), k)?;
        *o = Point2::new(s.x, s.y);
    }
    Ok(Landmarks5(out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::Rotation3;

    fn k() -> Intrinsics {
        Intrinsics::new(1400.0, 1400.0, 960.0, 540.0).unwrap()
    }

    #[test]
    fn default_model_is_valid() {
        FaceModel::default().validate().unwrap();
        let mut bad = FaceModel::default();
        bad.points[LEFT_EYE].y += 1.0;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn pose_recovered_from_projection() {
        let model = FaceModel::default();
        let truth = Pose::new(
            Rotation3::new(Vec3::new(0.15, -0.3, 0.05)).into_inner(),
            Vec3::new(40.0, -25.0, 650.0),
        );
        let lm = project_model(&model, &truth, &k()).unwrap();
        let pose = estimate_head_pose(&lm, &model, &k()).unwrap();
        assert!(pose.rotation_distance(&truth) < 1e-6);
        assert!((pose.translation - truth.translation).norm() < 1e-3);
    }

    #[test]
    fn identity_pose_depth() {
        let model = FaceModel::default();
        let truth = Pose::new(Mat3::identity(), Vec3::new(0.0, 0.0, 600.0));
        let lm = project_model(&model, &truth, &k()).unwrap();
        let pose = estimate_head_pose(&lm, &model, &k()).unwrap();
        assert_abs_diff_eq!(pose.translation.z, 600.0, epsilon = 1e-3);
    }

    #[test]
    fn equal_landmarks_are_degenerate() {
        let lm = Landmarks5::from_array([[100.0, 100.0]; 5]);
        let err = estimate_head_pose(&lm, &FaceModel::default(), &k()).unwrap_err();
        assert!(matches!(err, NormalizationError::Camera(CameraError::Degenerate(_))));
    }

    #[test]
    fn face_center_mean() {
        let mut model = FaceModel::default();
        model.points[NOSE] = Vec3::new(0.0, -40.0, 20.0);
        let c = compute_face_center(&Pose::identity(), &model);
        assert_abs_diff_eq!(c, Vec3::new(0.0, -40.0 / 3.0, 20.0 / 3.0), epsilon = 1e-9);
        let t = Vec3::new(5.0, 6.0, 700.0);
        let ct = compute_face_center(&Pose::new(Mat3::identity(), t), &model);
        assert_abs_diff_eq!(ct, c + t, epsilon = 1e-12);
        let rz = Rotation3::from_axis_angle(&Vec3::z_axis(), std::f64::consts::PI).into_inner();
        let cr = compute_face_center(&Pose::new(rz, Vec3::zeros()), &model);
        assert_abs_diff_eq!(cr, Vec3::new(-c.x, -c.y, c.z), epsilon = 1e-12);
    }

    #[test]
    fn frontal_head_needs_no_rotation() {
        let pose = Pose::new(Mat3::identity(), Vec3::new(0.0, 0.0, 300.0));
        let n = compute_normalization(&pose, &Vec3::new(0.0, 0.0, 300.0), &k(), &NormParams::default()).unwrap();
        assert_abs_diff_eq!(n.rotation, Mat3::identity(), epsilon = 1e-9);
        assert_abs_diff_eq!(n.scale, 1.0, epsilon = 1e-15);
        let far = compute_normalization(&pose, &Vec3::new(0.0, 0.0, 600.0), &k(), &NormParams::default()).unwrap();
        assert_abs_diff_eq!(far.scale, 0.5, epsilon = 1e-15);
    }

    #[test]
    fn roll_axis_along_view_is_degenerate() {
        let pose = Pose::new(Mat3::identity(), Vec3::zeros());
        let err = compute_normalization(&pose, &Vec3::new(500.0, 0.0, 0.0), &k(), &NormParams::default());
        assert_eq!(err.unwrap_err(), NormalizationError::DegenerateRoll);
    }

    #[test]
    fn rolled_head_eyes_level() {
        let model = FaceModel::default();
        let d = Vec3::new(0.2, -0.1, 1.0).normalize();
        let helper = Vec3::new(1.0, 0.0, 0.0);
        let hx0 = (helper - d * d.dot(&helper)).normalize();
        let hx = Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(d), 0.4) * hx0;
        let hy = d.cross(&hx);
        let rh = Matrix3::from_columns(&[hx, hy, d]);
        let mean = (model.points[0] + model.points[1] + model.points[2]) / 3.0;
        let t = d * 650.0 - rh * mean;
        let pose = Pose::new(rh, t);
        let c = compute_face_center(&pose, &model);
        let n = compute_normalization(&pose, &c, &k(), &NormParams::default()).unwrap();
        let lm = project_model(&model, &pose, &k()).unwrap();
        let w = warp_landmarks(&lm, &n.warp).unwrap();
        assert_abs_diff_eq!(w.right_eye().y, w.left_eye().y, epsilon = 1e-6);
        assert_abs_diff_eq!((c * n.scale).norm(), 300.0, epsilon = 1e-9);
        assert_abs_diff_eq!(n.rotation.determinant(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn identity_warp_is_identity() {
        let img = Image::<u8>::from_fn(9, 7, 3, |x, y, c| (x * 20 + y * 3 + c) as u8);
        let out = warp_image(&img, &Mat3::identity(), 9, 7).unwrap();
        assert_eq!(out, img);
        assert_eq!(warp_landmarks(&Landmarks5::from_array([[1.0, 2.0]; 5]), &Mat3::identity()).unwrap().0[0], Point2::new(1.0, 2.0));
    }

    #[test]
    fn scaled_constant_stays_constant() {
        let img = Image::<f64>::filled(20, 20, 1, 3.25);
        let s = Matrix3::new(2.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0, 1.0);
        let out = warp_image(&img, &s, 38, 38).unwrap();
        assert!(out.data().iter().all(|&v| v == 3.25));
    }

    #[test]
    fn singular_warp_rejected() {
        let img = Image::<u8>::new(4, 4, 1);
        assert_eq!(warp_image(&img, &Mat3::zeros(), 4, 4).unwrap_err(), NormalizationError::SingularWarp);
        let h = Matrix3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 1.0, 0.0, -5.0);
        let lm = Landmarks5::from_array([[5.0, 1.0]; 5]);
        assert_eq!(warp_landmarks(&lm, &h).unwrap_err(), NormalizationError::SingularWarp);
    }

    #[test]
    fn gaze_rotation_preserves_norm() {
        let r = Rotation3::from_axis_angle(&Vec3::y_axis(), std::f64::consts::FRAC_PI_2).into_inner();
        let g = normalize_gaze(&Vec3::new(0.0, 0.0, 1.0), &r);
        assert_abs_diff_eq!(g, Vec3::new(1.0, 0.0, 0.0), epsilon = 1e-15);
        assert_abs_diff_eq!(denormalize_gaze(&g, &r), Vec3::new(0.0, 0.0, 1.0), epsilon = 1e-15);
        let v = Vec3::new(0.3, -2.0, 5.0);
        assert_eq!(normalize_gaze(&v, &Mat3::identity()), v);
    }

    #[test]
    fn eye_crop_window() {
        let p = NormParams::default();
        let patch = Image::<u16>::from_fn(448, 448, 1, |x, y, _| (x + 448 * y) as u16);
        let lm = Landmarks5::from_array([[224.0, 224.0]; 5]);
        let crops = crop_eyes(&patch, &lm, &p);
        assert!(!crops.clamped);
        assert_eq!(crops.right, patch.crop(168, 168, 112, 112));
        assert_eq!(crops.left.flip_horizontal(), crops.right);
        let raw = crop_eyes(&patch, &lm, &NormParams { flip_left_eye: false, ..p });
        assert_eq!(raw.left, patch.crop(168, 168, 112, 112));
        let edge = Landmarks5::from_array([[10.0, 440.0]; 5]);
        let c = crop_eyes(&patch, &edge, &p);
        assert!(c.clamped);
        assert_eq!(c.right, patch.crop(0, 336, 112, 112));
    }

    #[test]
    fn euler_round_trip_and_gimbal() {
        let h = HeadRotation { roll: 0.1, pitch: -0.3, yaw: 0.7 };
        let back = euler_from_matrix(&h.to_matrix()).unwrap();
        assert_abs_diff_eq!(back.roll, h.roll, epsilon = 1e-12);
        assert_abs_diff_eq!(back.pitch, h.pitch, epsilon = 1e-12);
        assert_abs_diff_eq!(back.yaw, h.yaw, epsilon = 1e-12);
        let zero = normalized_head_rotation(&Pose::identity(), &Mat3::identity()).unwrap();
        assert_eq!(zero.to_array(), [0.0, 0.0, 0.0]);
        let g = HeadRotation { roll: 0.0, pitch: std::f64::consts::FRAC_PI_2, yaw: 0.0 }.to_matrix();
        assert!(matches!(euler_from_matrix(&g), Err(NormalizationError::GimbalLock { .. })));
    }

    #[test]
    fn normalized_pose_has_no_roll() {
        let r = Rotation3::new(Vec3::new(0.2, 0.1, -0.3)).into_inner();
        let want = HeadRotation { roll: 0.0, pitch: 0.25, yaw: -0.4 };
        let pose = Pose::new(r.transpose() * want.to_matrix(), Vec3::new(0.0, 0.0, 500.0));
        let got = normalized_head_rotation(&pose, &r).unwrap();
        assert!(got.roll.abs() < 1e-9);
        assert_abs_diff_eq!(got.pitch, 0.25, epsilon = 1e-12);
        assert_abs_diff_eq!(got.yaw, -0.4, epsilon = 1e-12);
    }
}
