//! Extrinsic calibration through a planar mirror.
//!
//! The camera faces away from the screen, so a checkerboard drawn on the
//! screen is only visible in a hand-held mirror. Each mirror pose adds a
//! plane `n·p = d` (camera frame) as a nuisance parameter; the
//! world→camera transform `E` is shared by all poses and recovered jointly.

use nalgebra::{DMatrix, DVector, Point2, Rotation3, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use crate::camera::project_point;
use crate::camera::{orthonormalize, solve_pnp, CameraError, Intrinsics, Pose};
use crate::geometry::{unproject_screen, Extrinsics, GeometryError, Mat3, MonitorSpec, ScreenPoint, Vec3};
use crate::lm::{levenberg_marquardt, LeastSquaresProblem, LmConfig};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MirrorError {
    #[error("need at least 3 mirror poses, got {0}")]
    TooFewPoses(usize),
    #[error("board corner ({row}, {col}) at pixel ({x:.1}, {y:.1}) is off screen")]
    BoardOffScreen { row: usize, col: usize, x: f64, y: f64 },
    #[error("invalid board: {0}")]
    InvalidBoard(String),
    #[error("image {image} has {got} corners, board has {expected}")]
    CornerCount { image: usize, expected: usize, got: usize },
    #[error("mirror poses are degenerate: {0}")]
    Degenerate(String),
    #[error(transparent)]
    Camera(#[from] CameraError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("calibration did not converge (rms {:.3e} px after {} iterations)", .0.rms_px, .0.iterations)]
    NoConvergence(Box<ExtrinsicsFit>),
}

/// Inner-corner grid drawn on the screen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoardSpec {
    pub cols: usize,
    pub rows: usize,
    pub tile_mm: f64,
    /// Screen pixel of corner `(0, 0)`.
    pub origin_px: [f64; 2],
}

impl Default for BoardSpec {
    fn default() -> Self {
        Self {
            cols: 10,
            rows: 5,
            tile_mm: 50.0,
            origin_px: [0.0, 0.0],
        }
    }
}

impl BoardSpec {
    pub fn validate(&self) -> Result<(), MirrorError> {
        if self.cols < 2 || self.rows < 2 {
            return Err(MirrorError::InvalidBoard(format!("{}x{} corners", self.cols, self.rows)));
        }
        if !(self.tile_mm > 0.0 && self.tile_mm.is_finite()) {
            return Err(MirrorError::InvalidBoard(format!("tile size {}", self.tile_mm)));
        }
        if !self.origin_px.iter().all(|v| v.is_finite()) {
            return Err(MirrorError::InvalidBoard("non-finite origin".into()));
        }
        Ok(())
    }

    pub fn corner_count(&self) -> usize {
        self.cols * self.rows
    }

    /// Board centered on the screen.
    pub fn centered(cols: usize, rows: usize, tile_mm: f64, m: &MonitorSpec) -> Self {
        let (sx, sy) = m.mm_per_px();
        let bw = (cols - 1) as f64 * tile_mm / sx;
        let bh = (rows - 1) as f64 * tile_mm / sy;
        Self {
            cols,
            rows,
            tile_mm,
            origin_px: [m.offset_x + (m.w - bw) / 2.0, m.offset_y + (m.h - bh) / 2.0],
        }
    }
}

/// World coordinates of every corner, row by row.
pub fn board_world_points(spec: &BoardSpec, m: &MonitorSpec) -> Result<Vec<Vec3>, MirrorError> {
    spec.validate()?;
    let (sx, sy) = m.mm_per_px();
    let mut out = Vec::with_capacity(spec.corner_count());
    for row in 0..spec.rows {
        for col in 0..spec.cols {
            let p = ScreenPoint {
                x: spec.origin_px[0] + col as f64 * spec.tile_mm / sx,
                y: spec.origin_px[1] + row as f64 * spec.tile_mm / sy,
            };
            let inside = p.x >= m.offset_x && p.y >= m.offset_y && p.x <= m.offset_x + m.w && p.y <= m.offset_y + m.h;
            if !inside {
                return Err(MirrorError::BoardOffScreen { row, col, x: p.x, y: p.y });
            }
            out.push(unproject_screen(p, m));
        }
    }
    Ok(out)
}

/// Mirror plane `n·p = d` in camera coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MirrorPlane {
    pub normal: Vec3,
    pub distance: f64,
}

impl MirrorPlane {
    pub fn new(normal: Vec3, distance: f64) -> Self {
        Self {
            normal: normal.normalize(),
            distance,
        }
    }

    /// Householder part `I − 2nnᵀ`.
    pub fn householder(&self) -> Mat3 {
        Mat3::identity() - 2.0 * self.normal * self.normal.transpose()
    }
}

pub fn reflect_point(p: &Vec3, plane: &MirrorPlane) -> Vec3 {
    let n = plane.normal;
    p - 2.0 * (n.dot(p) - plane.distance) * n
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MirrorObservation {
    pub corners: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExtrinsicsFit {
    pub extrinsics: Extrinsics,
    pub planes: Vec<MirrorPlane>,
    pub rms_px: f64,
    /// Sum of squared pixel residuals.
    pub cost: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone)]
struct MirrorState {
    pose: Pose,
    planes: Vec<MirrorPlane>,
}

/// Two unit vectors spanning the plane orthogonal to `n`.
fn tangent_basis(n: &Vec3) -> (Vec3, Vec3) {
    let helper = if n.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    let a = n.cross(&helper).normalize();
    (a, n.cross(&a))
}

struct MirrorProblem<'a> {
    world: &'a [Vec3],
    observations: &'a [MirrorObservation],
    k: &'a Intrinsics,
}

impl MirrorProblem<'_> {
    fn residuals_of(&self, pose: &Pose, planes: &[MirrorPlane]) -> Option<DVector<f64>> {
        let n = self.world.len();
        let mut r = DVector::zeros(2 * n * planes.len());
        for (i, (plane, obs)) in planes.iter().zip(self.observations).enumerate() {
            for (j, (w, c)) in self.world.iter().zip(&obs.corners).enumerate() {
                let p = project_point(&reflect_point(&pose.transform(w), plane), self.k).ok()?;
                let at = 2 * (i * n + j);
                r[at] = p.x - c[0];
                r[at + 1] = p.y - c[1];
            }
        }
        Some(r)
    }
}

impl LeastSquaresProblem for MirrorProblem<'_> {
    type State = MirrorState;

    fn num_params(&self) -> usize {
        6 + 3 * self.observations.len()
    }

    fn residuals(&self, s: &MirrorState) -> Option<DVector<f64>> {
        self.residuals_of(&s.pose, &s.planes)
    }

    fn retract(&self, s: &MirrorState, delta: &DVector<f64>) -> MirrorState {
        let planes = s
            .planes
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let d = &delta.as_slice()[6 + 3 * i..9 + 3 * i];
                let (a, b) = tangent_basis(&p.normal);
                MirrorPlane::new(p.normal + d[0] * a + d[1] * b, p.distance + d[2])
            })
            .collect();
        MirrorState {
            pose: s.pose.retract(&delta.as_slice()[..6]),
            planes,
        }
    }

    fn jacobian_step(&self) -> f64 {
        1e-7
    }
}

/// Sum of squared reprojection errors for a candidate `E` and mirror planes.
pub fn mirror_cost(
    e: &Extrinsics,
    planes: &[MirrorPlane],
    observations: &[MirrorObservation],
    k: &Intrinsics,
    world: &[Vec3],
) -> f64 {
    let problem = MirrorProblem { world, observations, k };
    let pose = Pose::new(e.rotation(), e.translation());
    problem
        .residuals_of(&pose, planes)
        .map_or(f64::INFINITY, |r| r.norm_squared())
}

/// Closed-form start. A PnP fit of the x-flipped board to each view gives
/// the virtual pose `(H_i·R·F, H_i·t + 2d_i·n_i)` with `H_i = I − 2n_inᵀ_i`.
/// Products of two virtual rotations are rotations about `n_i × n_j`, which
/// pins down every normal; `R` and the linear system in `t` and `d_i`
/// follow.
fn initial_state(world: &[Vec3], observations: &[MirrorObservation], k: &Intrinsics) -> Result<MirrorState, MirrorError> {
    let flip = Mat3::from_diagonal(&Vec3::new(-1.0, 1.0, 1.0));
    let flipped: Vec<Vec3> = world.iter().map(|p| flip * p).collect();
    let virtual_poses = observations
        .iter()
        .map(|o| {
            let img: Vec<Point2<f64>> = o.corners.iter().map(|c| Point2::new(c[0], c[1])).collect();
            solve_pnp(&flipped, &img, k, &LmConfig::default()).map(|r| r.state)
        })
        .collect::<Result<Vec<Pose>, CameraError>>()?;

    let m = observations.len();
    let mut normals = Vec::with_capacity(m);
    for i in 0..m {
        let mut scatter = Mat3::zeros();
        for j in (0..m).filter(|&j| j != i) {
            let q = virtual_poses[i].rotation * virtual_poses[j].rotation.transpose();
            let axis = Vec3::new(q[(2, 1)] - q[(1, 2)], q[(0, 2)] - q[(2, 0)], q[(1, 0)] - q[(0, 1)]);
            scatter += axis * axis.transpose();
        }
        let eig = SymmetricEigen::new(scatter);
        let mut order: Vec<usize> = (0..3).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        if eig.eigenvalues[order[1]] < 1e-10 * eig.eigenvalues[order[2]].max(1e-300) {
            return Err(MirrorError::Degenerate(format!("mirror pose {i} is not distinct from the others")));
        }
        normals.push(eig.eigenvectors.column(order[0]).into_owned());
    }

    let mut r_sum = Mat3::zeros();
    for (n, v) in normals.iter().zip(&virtual_poses) {
        let h = Mat3::identity() - 2.0 * n * n.transpose();
        r_sum += h * v.rotation * flip;
    }
    let rotation = orthonormalize(&r_sum);

    // t − 2d_i·n_i = H_i·t_i
    let mut a = DMatrix::zeros(3 * m, 3 + m);
    let mut b = DVector::zeros(3 * m);
    for (i, (n, v)) in normals.iter().zip(&virtual_poses).enumerate() {
        let h = Mat3::identity() - 2.0 * n * n.transpose();
        let rhs = h * v.translation;
        for r in 0..3 {
            a[(3 * i + r, r)] = 1.0;
            a[(3 * i + r, 3 + i)] = -2.0 * n[r];
            b[3 * i + r] = rhs[r];
        }
    }
    let x = a
        .svd(true, true)
        .solve(&b, 1e-12)
        .map_err(|e| MirrorError::Degenerate(e.to_string()))?;
    let translation = Vec3::new(x[0], x[1], x[2]);
    let planes = normals
        .iter()
        .enumerate()
        .map(|(i, n)| {
            let d = x[3 + i];
            if d < 0.0 {
                MirrorPlane::new(-n, -d)
            } else {
                MirrorPlane::new(*n, d)
            }
        })
        .collect();
    Ok(MirrorState {
        pose: Pose::new(rotation, translation),
        planes,
    })
}

pub const MAX_ITERATIONS: usize = 200;
pub const RELATIVE_COST_TOLERANCE: f64 = 1e-12;

pub fn solve_extrinsics(
    observations: &[MirrorObservation],
    k: &Intrinsics,
    spec: &BoardSpec,
    m: &MonitorSpec,
) -> Result<ExtrinsicsFit, MirrorError> {
    if observations.len() < 3 {
        return Err(MirrorError::TooFewPoses(observations.len()));
    }
    k.validate()?;
    let world = board_world_points(spec, m)?;
    for (i, o) in observations.iter().enumerate() {
        if o.corners.len() != world.len() {
            return Err(MirrorError::CornerCount {
                image: i,
                expected: world.len(),
                got: o.corners.len(),
            });
        }
        if o.corners.iter().flatten().any(|v| !v.is_finite()) {
            return Err(MirrorError::Degenerate(format!("image {i} has non-finite corners")));
        }
    }
    let start = initial_state(&world, observations, k)?;
    let problem = MirrorProblem {
        world: &world,
        observations,
        k,
    };
    let cfg = LmConfig {
        max_iterations: MAX_ITERATIONS,
        step_tolerance: 0.0,
        relative_cost_tolerance: RELATIVE_COST_TOLERANCE,
        initial_lambda: 1e-3,
    };
    let report = levenberg_marquardt(&problem, start, &cfg);
    if report.cost.is_infinite() {
        return Err(MirrorError::Degenerate("initial estimate puts the board behind the camera".into()));
    }
    let s = &report.state;
    let fit = ExtrinsicsFit {
        extrinsics: Extrinsics::from_rotation_translation(&orthonormalize(&s.pose.rotation), &s.pose.translation)?,
        planes: s.planes.clone(),
        rms_px: report.rms(),
        cost: report.cost,
        iterations: report.iterations,
    };
    if report.converged() {
        Ok(fit)
    } else {
        Err(MirrorError::NoConvergence(Box::new(fit)))
    }
}

/// Input file layout for the calibration tool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationFile {
    pub intrinsics: Intrinsics,
    pub board: BoardFileSpec,
    #[serde(default)]
    pub monitor: Option<MonitorSpec>,
    pub images: Vec<MirrorObservation>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoardFileSpec {
    pub cols: usize,
    pub rows: usize,
    pub tile_mm: f64,
    pub origin_px: [f64; 2],
}

impl From<BoardFileSpec> for BoardSpec {
    fn from(b: BoardFileSpec) -> Self {
        Self {
            cols: b.cols,
            rows: b.rows,
            tile_mm: b.tile_mm,
            origin_px: b.origin_px,
        }
    }
}

impl From<BoardSpec> for BoardFileSpec {
    fn from(b: BoardSpec) -> Self {
        Self {
            cols: b.cols,
            rows: b.rows,
            tile_mm: b.tile_mm,
            origin_px: b.origin_px,
        }
    }
}

/// A rendered calibration scene with known answer.
#[derive(Debug, Clone)]
pub struct SyntheticMirrorScene {
    pub k: Intrinsics,
    pub monitor: MonitorSpec,
    pub board: BoardSpec,
    pub extrinsics: Extrinsics,
    pub planes: Vec<MirrorPlane>,
    pub observations: Vec<MirrorObservation>,
}

pub const SYNTH_IMAGE_SIZE: (f64, f64) = (1280.0, 720.0);

impl SyntheticMirrorScene {
    /// Camera 10 mm in front of the top edge of a 24" screen, looking at the
    /// user; mirrors held 300–500 mm away and tilted so the screen shows up.
    pub fn generate(poses: usize, noise_px: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = Intrinsics::new(1000.0, 1000.0, 640.0, 360.0).expect("valid");
        let monitor = MonitorSpec::new(1920.0, 1080.0, 527.0, 296.0).expect("valid");
        let board = BoardSpec::centered(10, 5, 50.0, &monitor);
        let world = board_world_points(&board, &monitor).expect("board fits");

        // camera x opposes world x, z opposes world z, slight downward pitch
        let facing = Mat3::from_diagonal(&Vec3::new(-1.0, 1.0, -1.0));
        let rotation = Rotation3::new(Vec3::new(0.08, 0.02, 0.01)).into_inner() * facing;
        let center = Vec3::new(5.0, -monitor.height_mm / 2.0 - 15.0, -10.0);
        let extrinsics = Extrinsics::from_rotation_translation(&rotation, &(-(rotation * center))).expect("rotation");
        let pose = Pose::new(rotation, extrinsics.translation());
        let noise = Normal::new(0.0, noise_px.max(0.0)).expect("finite sigma");

        let mut planes = Vec::with_capacity(poses);
        let mut observations = Vec::with_capacity(poses);
        while planes.len() < poses {
            let tilt = Vec3::new(rng.random_range(-0.2..0.2), rng.random_range(-0.25..0.25), 0.0);
            let base = Vec3::new(0.0, -0.18, 1.0).normalize();
            let plane = MirrorPlane::new(
                Rotation3::new(tilt).into_inner() * base,
                rng.random_range(300.0..500.0),
            );
            let Some(corners) = world
                .iter()
                .map(|w| {
                    let p = project_point(&reflect_point(&pose.transform(w), &plane), &k).ok()?;
                    let visible = p.x > 10.0 && p.y > 10.0 && p.x < SYNTH_IMAGE_SIZE.0 - 10.0 && p.y < SYNTH_IMAGE_SIZE.1 - 10.0;
                    visible.then_some(p)
                })
                .collect::<Option<Vec<_>>>()
            else {
                continue;
            };
            let corners = corners
                .into_iter()
                .map(|p| {
                    if noise_px > 0.0 {
                        [p.x + noise.sample(&mut rng), p.y + noise.sample(&mut rng)]
                    } else {
                        [p.x, p.y]
                    }
                })
                .collect();
            planes.push(plane);
            observations.push(MirrorObservation { corners });
        }
        Self {
            k,
            monitor,
            board,
            extrinsics,
            planes,
            observations,
        }
    }

    pub fn world_points(&self) -> Vec<Vec3> {
        board_world_points(&self.board, &self.monitor).expect("board fits")
    }

    pub fn solve(&self) -> Result<ExtrinsicsFit, MirrorError> {
        solve_extrinsics(&self.observations, &self.k, &self.board, &self.monitor)
    }

    /// The scene's observations in the calibration tool's input format.
    pub fn observation_file(&self) -> ObservationFile {
        ObservationFile {
            intrinsics: self.k,
            board: self.board.into(),
            monitor: Some(self.monitor),
            images: self.observations.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::rotation_angle;
    use approx::assert_abs_diff_eq;

    #[test]
    fn board_origin_at_screen_center() {
        let m = MonitorSpec::new(1920.0, 1080.0, 527.0, 296.0).unwrap();
        let spec = BoardSpec {
            origin_px: [960.0, 540.0],
            cols: 3,
            rows: 2,
            ..BoardSpec::default()
        };
        let pts = board_world_points(&spec, &m).unwrap();
        assert_abs_diff_eq!(pts[0].norm(), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(pts[1].x - pts[0].x, 50.0, epsilon = 1e-9);
        assert_abs_diff_eq!(pts[3].y - pts[0].y, 50.0, epsilon = 1e-9);
        let off = BoardSpec {
            origin_px: [1800.0, 540.0],
            ..BoardSpec::default()
        };
        assert!(matches!(board_world_points(&off, &m), Err(MirrorError::BoardOffScreen { .. })));
    }

    #[test]
    fn reflection_formula() {
        let plane = MirrorPlane::new(Vec3::z(), 100.0);
        assert_eq!(reflect_point(&Vec3::zeros(), &plane), Vec3::new(0.0, 0.0, 200.0));
        let on = Vec3::new(3.0, -4.0, 100.0);
        assert_eq!(reflect_point(&on, &plane), on);
        let tilted = MirrorPlane::new(Vec3::new(0.3, -0.2, 1.0), 250.0);
        let p = Vec3::new(12.0, -40.0, 7.0);
        assert_abs_diff_eq!(reflect_point(&reflect_point(&p, &tilted), &tilted), p, epsilon = 1e-12);
    }

    #[test]
    fn too_few_poses() {
        let s = SyntheticMirrorScene::generate(2, 0.0, 1);
        assert_eq!(s.solve().unwrap_err(), MirrorError::TooFewPoses(2));
    }

    #[test]
    fn noiseless_scene_is_recovered() {
        let s = SyntheticMirrorScene::generate(3, 0.0, 7);
        let fit = s.solve().unwrap();
        let dr = rotation_angle(&(fit.extrinsics.rotation().transpose() * s.extrinsics.rotation()));
        let dt = (fit.extrinsics.translation() - s.extrinsics.translation()).norm();
        assert!(dr < 1e-6, "rotation error {dr}");
        assert!(dt < 1e-2, "translation error {dt}");
        assert!(fit.rms_px < 1e-6, "rms {}", fit.rms_px);
    }
}
