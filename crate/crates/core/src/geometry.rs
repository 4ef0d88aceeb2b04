//! Coordinate chain between gaze angles, 3D directions, camera space, world
//! space and on-screen pixels.
//!
//! Frames used throughout:
//!
//! * **world**: origin at the screen center, x to the right, y down, the
//!   screen lies in the plane `z = 0` (millimeters).
//! * **camera**: the usual pinhole frame of the RGB sensor (millimeters).
//! * **normalized camera**: the virtual camera produced by face
//!   normalization. Gaze angles live here.
//!
//! Angles are radians everywhere; degrees only appear at presentation
//! boundaries (metrics, CSV summaries).

use nalgebra::{Matrix3, Matrix4, Unit, Vector3, Vector4};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;
pub type Mat4 = Matrix4<f64>;

/// Tolerance on `|z|` for a world point to count as lying in the screen plane.
pub const PLANE_TOLERANCE_MM: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("vector norm {0:e} is too small to define a direction")]
    ZeroVector(f64),
    #[error("point is {0:e} mm off the screen plane")]
    OffPlane(f64),
    #[error("gaze ray is parallel to the screen plane")]
    Parallel,
    #[error("screen plane lies behind the gaze origin (t = {0:e})")]
    BehindOrigin(f64),
    #[error("invalid extrinsic matrix: {0}")]
    InvalidExtrinsics(String),
    #[error("invalid monitor description: {0}")]
    InvalidMonitor(String),
    #[error("invalid screen plane: {0}")]
    InvalidPlane(String),
}

/// Pitch and yaw of a gaze direction, radians.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GazeAngles {
    pub pitch: f64,
    pub yaw: f64,
}

impl GazeAngles {
    pub const fn new(pitch: f64, yaw: f64) -> Self {
        Self { pitch, yaw }
    }

    /// Pitch within `[-π/2, π/2]`, yaw within `[-π, π]`, both finite.
    ///
    /// The closed yaw bound admits `-π`, which is what `vector_to_angles`
    /// returns for a direction pointing straight along `-z`.
    pub fn is_valid(&self) -> bool {
        use std::f64::consts::{FRAC_PI_2, PI};
        self.pitch.is_finite()
            && self.yaw.is_finite()
            && self.pitch.abs() <= FRAC_PI_2
            && self.yaw.abs() <= PI
    }

    pub fn to_degrees(self) -> (f64, f64) {
        (self.pitch.to_degrees(), self.yaw.to_degrees())
    }
}

/// A point in screen pixel coordinates. Off-screen values are allowed.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ScreenPoint {
    pub x: f64,
    pub y: f64,
}

impl ScreenPoint {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }
}

/// Resolution, multi-monitor offset and physical size of the screen.
///
/// Pixels are assumed square but that is not enforced.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonitorSpec {
    /// Width in pixels.
    pub w: f64,
    /// Height in pixels.
    pub h: f64,
    #[serde(default)]
    pub offset_x: f64,
    #[serde(default)]
    pub offset_y: f64,
    /// Physical width in millimeters.
    #[serde(alias = "W")]
    pub width_mm: f64,
    /// Physical height in millimeters.
    #[serde(alias = "H")]
    pub height_mm: f64,
}

impl MonitorSpec {
    pub fn new(w: f64, h: f64, width_mm: f64, height_mm: f64) -> Result<Self, GeometryError> {
        let m = Self {
            w,
            h,
            offset_x: 0.0,
            offset_y: 0.0,
            width_mm,
            height_mm,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let fields = [
            ("w", self.w),
            ("h", self.h),
            ("width_mm", self.width_mm),
            ("height_mm", self.height_mm),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v > 0.0) {
                return Err(GeometryError::InvalidMonitor(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        if !(self.offset_x.is_finite() && self.offset_y.is_finite()) {
            return Err(GeometryError::InvalidMonitor("offsets must be finite".into()));
        }
        Ok(())
    }

    /// Millimeters per pixel along x and y.
    pub fn mm_per_px(&self) -> (f64, f64) {
        (self.width_mm / self.w, self.height_mm / self.h)
    }

    /// The monitor matrix `[[w, h], [offset_x, offset_y], [W, H]]`.
    pub fn to_matrix(&self) -> [[f64; 2]; 3] {
        [
            [self.w, self.h],
            [self.offset_x, self.offset_y],
            [self.width_mm, self.height_mm],
        ]
    }

    pub fn from_matrix(m: [[f64; 2]; 3]) -> Result<Self, GeometryError> {
        let spec = Self {
            w: m[0][0],
            h: m[0][1],
            offset_x: m[1][0],
            offset_y: m[1][1],
            width_mm: m[2][0],
            height_mm: m[2][1],
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn contains(&self, p: ScreenPoint) -> bool {
        p.x >= self.offset_x
            && p.y >= self.offset_y
            && p.x < self.offset_x + self.w
            && p.y < self.offset_y + self.h
    }
}

/// Rigid world→camera transform in homogeneous form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Extrinsics {
    matrix: Mat4,
}

/// Orthonormality tolerance used when validating rotation blocks.
pub const ROTATION_TOLERANCE: f64 = 1e-6;

impl Extrinsics {
    pub fn identity() -> Self {
        Self {
            matrix: Mat4::identity(),
        }
    }

    /// Validates the bottom row and the rotation block.
    pub fn from_matrix(matrix: Mat4) -> Result<Self, GeometryError> {
        let e = Self { matrix };
        e.check()?;
        Ok(e)
    }

    pub fn from_rotation_translation(rotation: &Mat3, translation: &Vec3) -> Result<Self, GeometryError> {
        let mut m = Mat4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(translation);
        Self::from_matrix(m)
    }

    /// Builds `E` from the first three rows, as stored in dataset files.
    pub fn from_rows_3x4(rows: [[f64; 4]; 3]) -> Result<Self, GeometryError> {
        let mut m = Mat4::identity();
        for (r, row) in rows.iter().enumerate() {
            for (c, v) in row.iter().enumerate() {
                m[(r, c)] = *v;
            }
        }
        Self::from_matrix(m)
    }

    pub fn rows_3x4(&self) -> [[f64; 4]; 3] {
        let mut out = [[0.0; 4]; 3];
        for (r, row) in out.iter_mut().enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                *v = self.matrix[(r, c)];
            }
        }
        out
    }

    /// Re-checks the invariants: bottom row `(0, 0, 0, 1)`, orthonormal
    /// rotation block with determinant +1, finite entries.
    pub fn check(&self) -> Result<(), GeometryError> {
        let m = &self.matrix;
        if m.iter().any(|v| !v.is_finite()) {
            return Err(GeometryError::InvalidExtrinsics("non-finite entry".into()));
        }
        let bottom = m.row(3);
        if bottom[0] != 0.0 || bottom[1] != 0.0 || bottom[2] != 0.0 || bottom[3] != 1.0 {
            return Err(GeometryError::InvalidExtrinsics(format!(
                "bottom row must be (0, 0, 0, 1), got {bottom}"
            )));
        }
        check_rotation(&self.rotation()).map_err(GeometryError::InvalidExtrinsics)
    }

    pub fn matrix(&self) -> &Mat4 {
        &self.matrix
    }

    pub fn rotation(&self) -> Mat3 {
        self.matrix.fixed_view::<3, 3>(0, 0).into_owned()
    }

    pub fn translation(&self) -> Vec3 {
        self.matrix.fixed_view::<3, 1>(0, 3).into_owned()
    }

    /// The camera→world transform, computed from the rigid structure.
    pub fn inverse(&self) -> Self {
        let rt = self.rotation().transpose();
        let t = -(rt * self.translation());
        let mut m = Mat4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&rt);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&t);
        Self { matrix: m }
    }
}

impl Serialize for Extrinsics {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut rows = [[0.0; 4]; 4];
        for (r, row) in rows.iter_mut().enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                *v = self.matrix[(r, c)];
            }
        }
        #[derive(Serialize)]
        struct Doc {
            matrix: [[f64; 4]; 4],
        }
        Doc { matrix: rows }.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Extrinsics {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Doc {
            matrix: [[f64; 4]; 4],
        }
        let doc = Doc::deserialize(deserializer)?;
        let m = Mat4::from_fn(|r, c| doc.matrix[r][c]);
        Extrinsics::from_matrix(m).map_err(serde::de::Error::custom)
    }
}

/// Returns a description of the first violated property, if any.
pub fn check_rotation(r: &Mat3) -> Result<(), String> {
    let gram = r.transpose() * r;
    let dev = (gram - Mat3::identity()).abs().max();
    if dev > ROTATION_TOLERANCE {
        return Err(format!("rotation block is not orthonormal (max deviation {dev:e})"));
    }
    let det = r.determinant();
    if (det - 1.0).abs() > ROTATION_TOLERANCE {
        return Err(format!("rotation determinant is {det}, expected +1"));
    }
    Ok(())
}

/// Plane `a·x + b·y + c·z + d = 0` in world coordinates, `(a, b, c)` unit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScreenPlane {
    coefficients: [f64; 4],
}

impl Default for ScreenPlane {
    fn default() -> Self {
        Self {
            coefficients: [0.0, 0.0, 1.0, 0.0],
        }
    }
}

impl ScreenPlane {
    /// Normalizes the coefficients so that the normal has unit length.
    pub fn new(a: f64, b: f64, c: f64, d: f64) -> Result<Self, GeometryError> {
        let n = (a * a + b * b + c * c).sqrt();
        if !(n.is_finite() && n > 1e-12 && d.is_finite()) {
            return Err(GeometryError::InvalidPlane(format!(
                "normal ({a}, {b}, {c}) is degenerate"
            )));
        }
        Ok(Self {
            coefficients: [a / n, b / n, c / n, d / n],
        })
    }

    pub fn from_point_normal(point: &Vec3, normal: &Vec3) -> Result<Self, GeometryError> {
        let d = -normal.dot(point);
        Self::new(normal.x, normal.y, normal.z, d)
    }

    pub fn normal(&self) -> Vec3 {
        Vec3::new(self.coefficients[0], self.coefficients[1], self.coefficients[2])
    }

    pub fn offset(&self) -> f64 {
        self.coefficients[3]
    }

    pub fn coefficients(&self) -> Vector4<f64> {
        Vector4::from(self.coefficients)
    }

    pub fn signed_distance(&self, p: &Vec3) -> f64 {
        self.normal().dot(p) + self.offset()
    }
}

/// Unit gaze direction `(-cos p·sin y, sin p, cos p·cos y)`.
pub fn angles_to_vector(g: GazeAngles) -> Unit<Vec3> {
    let (sp, cp) = g.pitch.sin_cos();
    let (sy, cy) = g.yaw.sin_cos();
    // Already unit length up to rounding; new_normalize removes the residual.
    Unit::new_normalize(Vec3::new(-cp * sy, sp, cp * cy))
}

/// Inverse of [`angles_to_vector`]; the input need not be normalized.
pub fn vector_to_angles(v: &Vec3) -> Result<GazeAngles, GeometryError> {
    let n = v.norm();
    if !(n >= 1e-12) {
        return Err(GeometryError::ZeroVector(n));
    }
    let u = v / n;
    Ok(GazeAngles {
        pitch: u.y.clamp(-1.0, 1.0).asin(),
        yaw: -u.x.atan2(u.z),
    })
}

/// Screen pixel → world point on the screen plane (mm).
pub fn unproject_screen(p: ScreenPoint, m: &MonitorSpec) -> Vec3 {
    let (sx, sy) = m.mm_per_px();
    Vec3::new(
        (p.x - m.offset_x - m.w / 2.0) * sx,
        (p.y - m.offset_y - m.h / 2.0) * sy,
        0.0,
    )
}

/// World point on the screen plane → screen pixel; exact inverse of
/// [`unproject_screen`].
pub fn project_world_to_screen(p3: &Vec3, m: &MonitorSpec) -> Result<ScreenPoint, GeometryError> {
    if !(p3.z.abs() <= PLANE_TOLERANCE_MM) {
        return Err(GeometryError::OffPlane(p3.z));
    }
    let (sx, sy) = m.mm_per_px();
    Ok(ScreenPoint {
        x: p3.x / sx + m.w / 2.0 + m.offset_x,
        y: p3.y / sy + m.h / 2.0 + m.offset_y,
    })
}

pub fn world_to_camera(p: &Vec3, e: &Extrinsics) -> Vec3 {
    e.rotation() * p + e.translation()
}

pub fn camera_to_world(p: &Vec3, e: &Extrinsics) -> Vec3 {
    e.rotation().transpose() * (p - e.translation())
}

/// Intersection of the ray `origin + t·direction`, `t > 0`, with `plane`.
pub fn intersect_ray_plane(origin: &Vec3, direction: &Vec3, plane: &ScreenPlane) -> Result<Vec3, GeometryError> {
    let dn = direction.norm();
    if !(dn >= 1e-12) {
        return Err(GeometryError::ZeroVector(dn));
    }
    let denom = plane.normal().dot(direction);
    if denom.abs() < 1e-12 * dn {
        return Err(GeometryError::Parallel);
    }
    let t = -plane.signed_distance(origin) / denom;
    if t <= 0.0 {
        return Err(GeometryError::BehindOrigin(t));
    }
    Ok(origin + direction * t)
}

/// Un-normalizes a predicted gaze and returns its intersection with `plane`
/// in world coordinates.
///
/// `rotation` is the normalization rotation `R` of the sample and
/// `face_center` the face center `c` in camera coordinates. The ray starts
/// at `c*` and passes through the transformed endpoint `E⁻¹(c + ĝ₃)`.
pub fn intersect_gaze(
    gaze: GazeAngles,
    rotation: &Mat3,
    face_center: &Vec3,
    e: &Extrinsics,
    plane: &ScreenPlane,
) -> Result<Vec3, GeometryError> {
    let g_norm = angles_to_vector(gaze);
    let g_cam = rotation.transpose() * g_norm.into_inner();
    let origin = camera_to_world(face_center, e);
    let end = camera_to_world(&(face_center + g_cam), e);
    intersect_ray_plane(&origin, &(end - origin), plane)
}

/// Full un-normalization chain down to screen pixels.
///
/// The pixel mapping is defined on the world `z = 0` plane, so a custom
/// `plane` must coincide with it for the final projection to succeed.
pub fn gaze_point_from_prediction(
    gaze: GazeAngles,
    rotation: &Mat3,
    face_center: &Vec3,
    e: &Extrinsics,
    m: &MonitorSpec,
    plane: &ScreenPlane,
) -> Result<ScreenPoint, GeometryError> {
    let hit = intersect_gaze(gaze, rotation, face_center, e, plane)?;
    project_world_to_screen(&hit, m)
}

/// Gaze label for a known on-screen target: `g′ = angles(R·(E·p₃* − c))`.
pub fn compute_gaze_label(
    p: ScreenPoint,
    face_center: &Vec3,
    rotation: &Mat3,
    e: &Extrinsics,
    m: &MonitorSpec,
) -> Result<GazeAngles, GeometryError> {
    let p_world = unproject_screen(p, m);
    let p_cam = world_to_camera(&p_world, e);
    let g_cam = p_cam - face_center;
    let g_norm = rotation * g_cam;
    vector_to_angles(&g_norm)
}

/// Rotation from an axis-angle vector (Rodrigues).
pub fn rotation_from_axis_angle(w: &Vec3) -> Mat3 {
    nalgebra::Rotation3::new(*w).into_inner()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::FRAC_PI_2;

    fn monitor() -> MonitorSpec {
        MonitorSpec::new(3840.0, 2160.0, 600.0, 340.0).unwrap()
    }

    #[test]
    fn angles_to_vector_identity_and_pole() {
        let v = angles_to_vector(GazeAngles::new(0.0, 0.0));
        assert_abs_diff_eq!(v.into_inner(), Vec3::new(0.0, 0.0, 1.0), epsilon = 1e-15);
        let v = angles_to_vector(GazeAngles::new(FRAC_PI_2, 0.0));
        assert_abs_diff_eq!(v.into_inner(), Vec3::new(0.0, 1.0, 0.0), epsilon = 1e-15);
    }

    #[test]
    fn angles_to_vector_reference_value() {
        // Frozen from an mpmath evaluation at 50 digits:
        // (-cos 0.2 sin -0.3, sin 0.2, cos 0.2 cos -0.3)
        let v = angles_to_vector(GazeAngles::new(0.2, -0.3));
        assert_abs_diff_eq!(v.x, 0.289_629_477_625_515_6, epsilon = 1e-12);
        assert_abs_diff_eq!(v.y, 0.198_669_330_795_061_2, epsilon = 1e-12);
        assert_abs_diff_eq!(v.z, 0.936_293_363_584_199_2, epsilon = 1e-12);
    }

    #[test]
    fn vector_to_angles_basics() {
        let g = vector_to_angles(&Vec3::new(0.0, 0.0, 1.0)).unwrap();
        assert_eq!(g, GazeAngles::new(0.0, 0.0));
        assert!(matches!(
            vector_to_angles(&Vec3::zeros()),
            Err(GeometryError::ZeroVector(_))
        ));
        // scale does not matter
        let a = vector_to_angles(&Vec3::new(1.0, 2.0, 3.0)).unwrap();
        let b = vector_to_angles(&Vec3::new(10.0, 20.0, 30.0)).unwrap();
        assert_abs_diff_eq!(a.pitch, b.pitch, epsilon = 1e-15);
        assert_abs_diff_eq!(a.yaw, b.yaw, epsilon = 1e-15);
    }

    #[test]
    fn unproject_examples() {
        let m = monitor();
        assert_eq!(unproject_screen(ScreenPoint::new(1920.0, 1080.0), &m), Vec3::zeros());
        assert_eq!(
            unproject_screen(ScreenPoint::new(0.0, 0.0), &m),
            Vec3::new(-300.0, -170.0, 0.0)
        );
        let p = unproject_screen(ScreenPoint::new(960.0, 540.0), &m);
        assert_abs_diff_eq!(p, Vec3::new(-150.0, -85.0, 0.0), epsilon = 1e-12);
    }

    #[test]
    fn unproject_subtracts_offsets() {
        let mut m = monitor();
        m.offset_x = 1920.0;
        let p = unproject_screen(ScreenPoint::new(1920.0 + 1920.0, 1080.0), &m);
        assert_abs_diff_eq!(p, Vec3::zeros(), epsilon = 1e-12);
        let back = project_world_to_screen(&p, &m).unwrap();
        assert_abs_diff_eq!(back.x, 3840.0, epsilon = 1e-12);
    }

    #[test]
    fn project_rejects_off_plane() {
        let m = monitor();
        let c = project_world_to_screen(&Vec3::zeros(), &m).unwrap();
        assert_eq!(c, ScreenPoint::new(1920.0, 1080.0));
        assert!(matches!(
            project_world_to_screen(&Vec3::new(0.0, 0.0, 5.0), &m),
            Err(GeometryError::OffPlane(_))
        ));
    }

    #[test]
    fn world_camera_translation() {
        let e = Extrinsics::from_rotation_translation(&Mat3::identity(), &Vec3::new(0.0, 0.0, 100.0)).unwrap();
        assert_eq!(world_to_camera(&Vec3::zeros(), &e), Vec3::new(0.0, 0.0, 100.0));
        let id = Extrinsics::identity();
        let p = Vec3::new(1.0, -2.0, 3.0);
        assert_eq!(world_to_camera(&p, &id), p);
        assert_eq!(camera_to_world(&p, &id), p);
    }

    #[test]
    fn extrinsics_validation() {
        let mut m = Mat4::identity();
        m[(3, 0)] = 1.0;
        assert!(Extrinsics::from_matrix(m).is_err());
        let reflect = Mat3::from_diagonal(&Vec3::new(-1.0, 1.0, 1.0));
        assert!(Extrinsics::from_rotation_translation(&reflect, &Vec3::zeros()).is_err());
        let scaled = Mat3::identity() * 2.0;
        assert!(Extrinsics::from_rotation_translation(&scaled, &Vec3::zeros()).is_err());
    }

    #[test]
    fn extrinsics_json_round_trip() {
        let r = rotation_from_axis_angle(&Vec3::new(0.1, -0.2, 0.3));
        let e = Extrinsics::from_rotation_translation(&r, &Vec3::new(10.0, 200.0, -30.0)).unwrap();
        let s = serde_json::to_string(&e).unwrap();
        let back: Extrinsics = serde_json::from_str(&s).unwrap();
        assert_eq!(back, e);
        let bad = r#"{"matrix": [[2,0,0,0],[0,1,0,0],[0,0,1,0],[0,0,0,1]]}"#;
        assert!(serde_json::from_str::<Extrinsics>(bad).is_err());
    }

    #[test]
    fn monitor_json_accepts_short_names() {
        let m: MonitorSpec =
            serde_json::from_str(r#"{"w": 3840, "h": 2160, "W": 600, "H": 340}"#).unwrap();
        assert_eq!(m, monitor());
        assert_eq!(MonitorSpec::from_matrix(m.to_matrix()).unwrap(), m);
    }

    #[test]
    fn ray_plane_examples() {
        let plane = ScreenPlane::default();
        let hit = intersect_ray_plane(&Vec3::new(0.0, 0.0, 600.0), &Vec3::new(0.0, 0.0, -1.0), &plane).unwrap();
        assert_abs_diff_eq!(hit, Vec3::zeros(), epsilon = 1e-12);
        assert_eq!(
            intersect_ray_plane(&Vec3::new(0.0, 0.0, 600.0), &Vec3::new(1.0, 0.0, 0.0), &plane),
            Err(GeometryError::Parallel)
        );
        assert!(matches!(
            intersect_ray_plane(&Vec3::new(0.0, 0.0, 600.0), &Vec3::new(0.0, 0.0, 1.0), &plane),
            Err(GeometryError::BehindOrigin(_))
        ));
        let origin = Vec3::new(100.0, 50.0, 600.0);
        let target = Vec3::new(-30.0, 40.0, 0.0);
        let hit = intersect_ray_plane(&origin, &(target - origin), &plane).unwrap();
        assert_abs_diff_eq!(hit, target, epsilon = 1e-9);
    }

    #[test]
    fn ray_hits_shifted_plane() {
        let plane = ScreenPlane::new(0.0, 0.0, 2.0, -20.0).unwrap(); // z = 10
        let hit = intersect_ray_plane(&Vec3::new(1.0, 2.0, 50.0), &Vec3::new(0.0, 0.0, -3.0), &plane).unwrap();
        assert_abs_diff_eq!(hit, Vec3::new(1.0, 2.0, 10.0), epsilon = 1e-12);
    }

    #[test]
    fn straight_ahead_prediction_hits_center() {
        let m = monitor();
        let g = vector_to_angles(&Vec3::new(0.0, 0.0, -1.0)).unwrap();
        let p = gaze_point_from_prediction(
            g,
            &Mat3::identity(),
            &Vec3::new(0.0, 0.0, 600.0),
            &Extrinsics::identity(),
            &m,
            &ScreenPlane::default(),
        )
        .unwrap();
        assert_abs_diff_eq!(p.x, 1920.0, epsilon = 1e-9);
        assert_abs_diff_eq!(p.y, 1080.0, epsilon = 1e-9);
    }

    #[test]
    fn parallel_prediction_is_an_error() {
        let m = monitor();
        let g = vector_to_angles(&Vec3::new(1.0, 0.0, 0.0)).unwrap();
        let r = gaze_point_from_prediction(
            g,
            &Mat3::identity(),
            &Vec3::new(0.0, 0.0, 600.0),
            &Extrinsics::identity(),
            &m,
            &ScreenPlane::default(),
        );
        assert_eq!(r, Err(GeometryError::Parallel));
    }

    #[test]
    fn label_for_point_behind_face() {
        let m = monitor();
        // Face at the screen center, 600 mm in front along -z: gaze points +z.
        let c = Vec3::new(0.0, 0.0, -600.0);
        let g = compute_gaze_label(ScreenPoint::new(1920.0, 1080.0), &c, &Mat3::identity(), &Extrinsics::identity(), &m).unwrap();
        assert_abs_diff_eq!(g.pitch, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(g.yaw, 0.0, epsilon = 1e-15);
        let on_screen = Vec3::zeros();
        assert!(matches!(
            compute_gaze_label(ScreenPoint::new(1920.0, 1080.0), &on_screen, &Mat3::identity(), &Extrinsics::identity(), &m),
            Err(GeometryError::ZeroVector(_))
        ));
    }
}
