//! Pinhole camera model and pose estimation from 2D-3D correspondences.

use nalgebra::{DMatrix, DVector, Matrix3, Point2, Rotation3, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Mat3, ScreenPoint, Vec3};
use crate::lm::{levenberg_marquardt, LeastSquaresProblem, LmConfig, LmReport};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CameraError {
    #[error("point is behind the camera (z = {0})")]
    BehindCamera(f64),
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("degenerate point configuration: {0}")]
    Degenerate(String),
    #[error("correspondence count mismatch: {0} model points, {1} image points")]
    CountMismatch(usize, usize),
    #[error("pose refinement did not converge (rms {rms:.3e} px after {iterations} iterations)")]
    NoConvergence { rms: f64, iterations: usize },
}

/// Pinhole intrinsics in pixels, no distortion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self, CameraError> {
        let k = Self { fx, fy, cx, cy };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<(), CameraError> {
        if !(self.fx.is_finite() && self.fy.is_finite() && self.fx > 0.0 && self.fy > 0.0) {
            return Err(CameraError::InvalidIntrinsics(format!(
                "focal lengths must be positive, got ({}, {})",
                self.fx, self.fy
            )));
        }
        if !(self.cx.is_finite() && self.cy.is_finite()) {
            return Err(CameraError::InvalidIntrinsics("principal point must be finite".into()));
        }
        Ok(())
    }

    pub fn matrix(&self) -> Mat3 {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    pub fn inverse_matrix(&self) -> Mat3 {
        Matrix3::new(
            1.0 / self.fx,
            0.0,
            -self.cx / self.fx,
            0.0,
            1.0 / self.fy,
            -self.cy / self.fy,
            0.0,
            0.0,
            1.0,
        )
    }

    /// Pixel → normalized image plane coordinates.
    pub fn normalize(&self, p: &Point2<f64>) -> Point2<f64> {
        Point2::new((p.x - self.cx) / self.fx, (p.y - self.cy) / self.fy)
    }
}

/// Pinhole projection `(fx·x/z + cx, fy·y/z + cy)`.
pub fn project_point(p_cam: &Vec3, k: &Intrinsics) -> Result<ScreenPoint, CameraError> {
    if !(p_cam.z > 0.0) {
        return Err(CameraError::BehindCamera(p_cam.z));
    }
    Ok(ScreenPoint::new(
        k.fx * p_cam.x / p_cam.z + k.cx,
        k.fy * p_cam.y / p_cam.z + k.cy,
    ))
}

/// Rigid transform from an object frame into the camera frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: Mat3::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn new(rotation: Mat3, translation: Vec3) -> Self {
        Self { rotation, translation }
    }

    pub fn transform(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    /// Applies a tangent step `(δω, δt)` as `R ← exp(δω)·R`, `t ← t + δt`.
    pub fn retract(&self, delta: &[f64]) -> Self {
        let dr = Rotation3::new(Vec3::new(delta[0], delta[1], delta[2])).into_inner();
        Self {
            rotation: dr * self.rotation,
            translation: self.translation + Vec3::new(delta[3], delta[4], delta[5]),
        }
    }

    /// Angle of the relative rotation between two poses, radians.
    pub fn rotation_distance(&self, other: &Pose) -> f64 {
        rotation_angle(&(self.rotation.transpose() * other.rotation))
    }
}

/// Rotation angle of a (near-)rotation matrix, robust near 0 and π.
pub fn rotation_angle(r: &Mat3) -> f64 {
    let skew = Vec3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]);
    let s = 0.5 * skew.norm();
    let c = 0.5 * (r.trace() - 1.0);
    s.atan2(c)
}

/// Nearest rotation matrix in the Frobenius sense.
pub fn orthonormalize(m: &Mat3) -> Mat3 {
    let svd = m.svd(true, true);
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut d = Mat3::identity();
    if (u * vt).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    u * d * vt
}

/// Ratio of the smallest to the largest principal spread of 2D points.
pub fn planar_spread_ratio(points: &[Point2<f64>]) -> f64 {
    let n = points.len() as f64;
    let (mx, my) = points.iter().fold((0.0, 0.0), |(a, b), p| (a + p.x / n, b + p.y / n));
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for p in points {
        let (dx, dy) = (p.x - mx, p.y - my);
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    let tr = sxx + syy;
    if !(tr > 1e-18) {
        return 0.0;
    }
    let det = sxx * syy - sxy * sxy;
    let disc = (tr * tr / 4.0 - det).max(0.0).sqrt();
    let hi = tr / 2.0 + disc;
    let lo = (tr / 2.0 - disc).max(0.0);
    lo / hi
}

/// Eigenvalues of the 3D scatter matrix, ascending.
pub fn spatial_spread(points: &[Vec3]) -> [f64; 3] {
    let n = points.len() as f64;
    let mean = points.iter().fold(Vec3::zeros(), |a, p| a + p / n);
    let mut cov = Mat3::zeros();
    for p in points {
        let d = p - mean;
        cov += d * d.transpose();
    }
    let mut ev: Vec<f64> = SymmetricEigen::new(cov).eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    [ev[0], ev[1], ev[2]]
}

/// Direct linear estimate of the homography mapping `src` onto `dst`,
/// with Hartley normalization.
pub fn estimate_homography(src: &[Point2<f64>], dst: &[Point2<f64>]) -> Result<Mat3, CameraError> {
    if src.len() != dst.len() {
        return Err(CameraError::CountMismatch(src.len(), dst.len()));
    }
    if src.len() < 4 {
        return Err(CameraError::Degenerate(format!("need 4 points, got {}", src.len())));
    }
    let (ts, src_n) = hartley(src)?;
    let (td, dst_n) = hartley(dst)?;
    let mut a = DMatrix::zeros(2 * src.len(), 9);
    for (i, (s, d)) in src_n.iter().zip(&dst_n).enumerate() {
        let (x, y, u, v) = (s.x, s.y, d.x, d.y);
        let r0 = [-x, -y, -1.0, 0.0, 0.0, 0.0, u * x, u * y, u];
        let r1 = [0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v];
        for c in 0..9 {
            a[(2 * i, c)] = r0[c];
            a[(2 * i + 1, c)] = r1[c];
        }
    }
    // Null vector of A via the eigenvector of AᵀA with the smallest eigenvalue.
    let ata = a.transpose() * &a;
    let eig = SymmetricEigen::new(ata);
    let (imin, _) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .unwrap();
    let h = eig.eigenvectors.column(imin);
    let hn = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8]);
    let td_inv = td
        .try_inverse()
        .ok_or_else(|| CameraError::Degenerate("singular normalization".into()))?;
    Ok(td_inv * hn * ts)
}

fn hartley(points: &[Point2<f64>]) -> Result<(Mat3, Vec<Point2<f64>>), CameraError> {
    let n = points.len() as f64;
    let (mx, my) = points.iter().fold((0.0, 0.0), |(a, b), p| (a + p.x / n, b + p.y / n));
    let mean_dist = points
        .iter()
        .map(|p| ((p.x - mx).powi(2) + (p.y - my).powi(2)).sqrt())
        .sum::<f64>()
        / n;
    if !(mean_dist > 1e-12) {
        return Err(CameraError::Degenerate("points coincide".into()));
    }
    let s = std::f64::consts::SQRT_2 / mean_dist;
    let t = Matrix3::new(s, 0.0, -s * mx, 0.0, s, -s * my, 0.0, 0.0, 1.0);
    let out = points
        .iter()
        .map(|p| Point2::new(s * (p.x - mx), s * (p.y - my)))
        .collect();
    Ok((t, out))
}

/// Pose guess from the homography between the model's `(x, y)` coordinates
/// and normalized image points. Exact for planar models, a starting point
/// for nearly planar ones.
pub fn planar_pose_guess(model: &[Vec3], image: &[Point2<f64>], k: &Intrinsics) -> Result<Pose, CameraError> {
    let src: Vec<Point2<f64>> = model.iter().map(|p| Point2::new(p.x, p.y)).collect();
    let dst: Vec<Point2<f64>> = image.iter().map(|p| k.normalize(p)).collect();
    let h = estimate_homography(&src, &dst)?;
    let h1 = h.column(0).into_owned();
    let h2 = h.column(1).into_owned();
    let h3 = h.column(2).into_owned();
    let scale = 2.0 / (h1.norm() + h2.norm());
    let sign = if h3.z * scale < 0.0 { -1.0 } else { 1.0 };
    let s = scale * sign;
    let r1 = h1 * s;
    let r2 = h2 * s;
    let r3 = r1.cross(&r2);
    let rot = orthonormalize(&Mat3::from_columns(&[r1, r2, r3]));
    Ok(Pose::new(rot, h3 * s))
}

struct ReprojectionProblem<'a> {
    model: &'a [Vec3],
    image: &'a [Point2<f64>],
    k: &'a Intrinsics,
}

impl LeastSquaresProblem for ReprojectionProblem<'_> {
    type State = Pose;

    fn num_params(&self) -> usize {
        6
    }

    fn residuals(&self, pose: &Pose) -> Option<DVector<f64>> {
        let mut r = DVector::zeros(2 * self.model.len());
        for (i, (m, obs)) in self.model.iter().zip(self.image).enumerate() {
            let p = project_point(&pose.transform(m), self.k).ok()?;
            r[2 * i] = p.x - obs.x;
            r[2 * i + 1] = p.y - obs.y;
        }
        Some(r)
    }

    fn retract(&self, pose: &Pose, delta: &DVector<f64>) -> Pose {
        pose.retract(delta.as_slice())
    }

    fn jacobian_step(&self) -> f64 {
        1e-7
    }
}

/// Sum of squared reprojection errors (px²).
pub fn reprojection_cost(model: &[Vec3], image: &[Point2<f64>], k: &Intrinsics, pose: &Pose) -> f64 {
    ReprojectionProblem { model, image, k }
        .residuals(pose)
        .map_or(f64::INFINITY, |r| r.norm_squared())
}

/// Minimizes the reprojection error from `initial`.
pub fn refine_pose(
    model: &[Vec3],
    image: &[Point2<f64>],
    k: &Intrinsics,
    initial: Pose,
    config: &LmConfig,
) -> LmReport<Pose> {
    let problem = ReprojectionProblem { model, image, k };
    levenberg_marquardt(&problem, initial, config)
}

/// Perspective-n-point: homography initialization followed by LM refinement.
///
/// Nearly planar targets have a two-fold tilt ambiguity, so when the
/// homography start lands in a poor optimum a handful of tilted restarts
/// are refined too and the lowest-cost result is kept.
pub fn solve_pnp(model: &[Vec3], image: &[Point2<f64>], k: &Intrinsics, config: &LmConfig) -> Result<LmReport<Pose>, CameraError> {
    if model.len() != image.len() {
        return Err(CameraError::CountMismatch(model.len(), image.len()));
    }
    if model.len() < 4 {
        return Err(CameraError::Degenerate(format!(
            "need at least 4 correspondences, got {}",
            model.len()
        )));
    }
    if planar_spread_ratio(image) < 1e-10 {
        return Err(CameraError::Degenerate("image points are collinear".into()));
    }
    let model_xy: Vec<Point2<f64>> = model.iter().map(|p| Point2::new(p.x, p.y)).collect();
    if planar_spread_ratio(&model_xy) < 1e-10 {
        return Err(CameraError::Degenerate("model points are collinear in x/y".into()));
    }
    let guess = planar_pose_guess(model, image, k)?;
    let mut best = refine_pose(model, image, k, guess, config);
    if best.rms() > 1e-3 {
        for axis in [Vec3::x(), -Vec3::x(), Vec3::y(), -Vec3::y()] {
            let tilt = Rotation3::new(axis * 0.6).into_inner();
            let start = Pose::new(tilt * guess.rotation, guess.translation);
            let other = refine_pose(model, image, k, start, config);
            if other.cost < best.cost {
                best = other;
            }
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn k() -> Intrinsics {
        Intrinsics::new(600.0, 610.0, 320.0, 240.0).unwrap()
    }

    #[test]
    fn projection_basics() {
        let k = k();
        let p = project_point(&Vec3::new(0.0, 0.0, 500.0), &k).unwrap();
        assert_eq!(p, ScreenPoint::new(320.0, 240.0));
        let a = project_point(&Vec3::new(10.0, -20.0, 500.0), &k).unwrap();
        let b = project_point(&Vec3::new(10.0, -20.0, 1000.0), &k).unwrap();
        assert_abs_diff_eq!(b.x - 320.0, (a.x - 320.0) / 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(b.y - 240.0, (a.y - 240.0) / 2.0, epsilon = 1e-12);
        assert!(matches!(
            project_point(&Vec3::new(0.0, 0.0, -1.0), &k),
            Err(CameraError::BehindCamera(_))
        ));
        let q = project_point(&Vec3::new(13.0, 7.0, 250.0), &k).unwrap();
        assert_abs_diff_eq!(q.x, 600.0 * 13.0 / 250.0 + 320.0, epsilon = 1e-12);
        assert_abs_diff_eq!(q.y, 610.0 * 7.0 / 250.0 + 240.0, epsilon = 1e-12);
    }

    #[test]
    fn intrinsics_inverse_matches() {
        let k = k();
        let prod = k.matrix() * k.inverse_matrix();
        assert_abs_diff_eq!(prod, Mat3::identity(), epsilon = 1e-12);
        assert!(Intrinsics::new(0.0, 1.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn homography_exact_on_synthetic_points() {
        let h_true = Matrix3::new(1.2, 0.1, 5.0, -0.2, 0.9, -3.0, 0.001, 0.002, 1.0);
        let src: Vec<Point2<f64>> = [(0.0, 0.0), (10.0, 0.0), (10.0, 10.0), (0.0, 10.0), (3.0, 7.0)]
            .iter()
            .map(|&(x, y)| Point2::new(x, y))
            .collect();
        let dst: Vec<Point2<f64>> = src
            .iter()
            .map(|p| {
                let v = h_true * nalgebra::Vector3::new(p.x, p.y, 1.0);
                Point2::new(v.x / v.z, v.y / v.z)
            })
            .collect();
        let h = estimate_homography(&src, &dst).unwrap();
        let h = h / h[(2, 2)];
        assert_abs_diff_eq!(h, h_true, epsilon = 1e-9);
    }

    #[test]
    fn pnp_recovers_planar_board() {
        let model: Vec<Vec3> = (0..4)
            .flat_map(|i| (0..3).map(move |j| Vec3::new(i as f64 * 40.0, j as f64 * 40.0, 0.0)))
            .collect();
        let truth = Pose::new(
            Rotation3::new(Vec3::new(0.2, -0.3, 0.1)).into_inner(),
            Vec3::new(-50.0, 20.0, 700.0),
        );
        let image: Vec<Point2<f64>> = model
            .iter()
            .map(|m| {
                let p = project_point(&truth.transform(m), &k()).unwrap();
                Point2::new(p.x, p.y)
            })
            .collect();
        let guess = planar_pose_guess(&model, &image, &k()).unwrap();
        assert!(guess.rotation_distance(&truth) < 1e-6);
        let rep = solve_pnp(&model, &image, &k(), &LmConfig::default()).unwrap();
        assert!(rep.state.rotation_distance(&truth) < 1e-9);
        assert!((rep.state.translation - truth.translation).norm() < 1e-6);
    }

    #[test]
    fn rotation_angle_near_pi() {
        let r = Rotation3::new(Vec3::new(0.0, 0.0, std::f64::consts::PI - 1e-9)).into_inner();
        assert_abs_diff_eq!(rotation_angle(&r), std::f64::consts::PI - 1e-9, epsilon = 1e-9);
        let r = Rotation3::new(Vec3::new(1e-9, 0.0, 0.0)).into_inner();
        assert_abs_diff_eq!(rotation_angle(&r), 1e-9, epsilon = 1e-15);
    }

    #[test]
    fn spread_detects_collinear_points() {
        let pts: Vec<Point2<f64>> = (0..5).map(|i| Point2::new(i as f64, 2.0 * i as f64)).collect();
        assert!(planar_spread_ratio(&pts) < 1e-12);
        let same = vec![Point2::new(3.0, 3.0); 5];
        assert_eq!(planar_spread_ratio(&same), 0.0);
    }
}
