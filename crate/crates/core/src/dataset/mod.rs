//! Per-subject recording files, their validation, the collection protocol
//! and evaluation metrics.

mod hdf;
pub mod metrics;
pub mod protocol;
pub mod split;
pub mod synth;
mod validate;

use nalgebra::Point2;
use ndarray::{s, Array1, Array2, Array3, Array4};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::depthproc::DepthMap;
use crate::geometry::{Extrinsics, GazeAngles, GeometryError, Mat3, MonitorSpec, ScreenPoint, Vec3};
use crate::image::Image;

pub use hdf::{read_subject, read_subject_any, read_subject_with, stored_schema, write_subject, write_subject_with, DatasetIoError, SchemaError, SchemaIssue};
pub use validate::{validate, Rule, Violation};

/// Number of recordings per session: 100 + 22 + 10.
pub const RECORDINGS: i64 = 132;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Phase {
    SinglePointSingleSample,
    SinglePointContinuous,
    MovingPointContinuous,
}

impl Phase {
    pub fn number(self) -> u8 {
        match self {
            Phase::SinglePointSingleSample => 1,
            Phase::SinglePointContinuous => 2,
            Phase::MovingPointContinuous => 3,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DatasetError {
    #[error("recording index {0} outside 0..132")]
    RecordingIndex(i64),
    #[error("session {session} out of range ({sessions} sessions)")]
    Session { session: i64, sessions: usize },
    #[error("sample {index} out of range ({len} samples)")]
    Sample { index: usize, len: usize },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

pub fn phase_of(recording_index: i64) -> Result<Phase, DatasetError> {
    match recording_index {
        0..=99 => Ok(Phase::SinglePointSingleSample),
        100..=121 => Ok(Phase::SinglePointContinuous),
        122..=131 => Ok(Phase::MovingPointContinuous),
        _ => Err(DatasetError::RecordingIndex(recording_index)),
    }
}

/// Image sizes of a file. Real recordings use 448 px faces and 112 px eyes;
/// fixtures may shrink them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    pub face_size: usize,
    pub eye_size: usize,
}

impl Schema {
    pub const STANDARD: Schema = Schema {
        face_size: 448,
        eye_size: 112,
    };
}

impl Default for Schema {
    fn default() -> Self {
        Self::STANDARD
    }
}

/// Everything in one file except the images.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub face_center: [f64; 3],
    pub face_landmarks: [[f32; 2]; 5],
    pub face_transformation: [[f64; 3]; 3],
    /// Normalized `(pitch, yaw)`.
    pub gaze: [f64; 2],
    pub gaze_point: [f32; 2],
    /// Normalized `(roll, pitch, yaw)`.
    pub head_rot_norm: [f64; 3],
    pub in_recording_index: i64,
    pub mouse_distance: f64,
    pub on_grid: u8,
    pub recording_index: i64,
    pub recording_session: i64,
}

/// One subject's recordings, one array per key. The first axis of every
/// per-sample array indexes samples; `extrinsics` and `monitor` are indexed
/// by recording session.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectFile {
    pub face_center: Array2<f64>,
    pub face_color: Array4<u8>,
    pub face_depth: Array3<u16>,
    pub face_landmarks: Array3<f32>,
    pub face_transformation: Array3<f64>,
    pub gaze: Array2<f64>,
    pub gaze_point: Array2<f32>,
    pub head_rot_norm: Array2<f64>,
    pub in_recording_index: Array1<i64>,
    pub left_eye_color: Array4<u8>,
    pub left_eye_depth: Array3<u16>,
    pub mouse_distance: Array1<f64>,
    pub on_grid: Array1<u8>,
    pub recording_index: Array1<i64>,
    pub recording_session: Array1<i64>,
    pub right_eye_color: Array4<u8>,
    pub right_eye_depth: Array3<u16>,
    /// `m × 3 × 4`
    pub extrinsics: Array3<f64>,
    /// `m × 3 × 2`: `(w, h), (offset_x, offset_y), (W, H)`
    pub monitor: Array3<i64>,
}

impl SubjectFile {
    /// Zeroed file with `n` samples and `sessions` sessions.
    pub fn zeros(n: usize, sessions: usize, schema: Schema) -> Self {
        let (f, e) = (schema.face_size, schema.eye_size);
        Self {
            face_center: Array2::zeros((n, 3)),
            face_color: Array4::zeros((n, f, f, 3)),
            face_depth: Array3::zeros((n, f, f)),
            face_landmarks: Array3::zeros((n, 5, 2)),
            face_transformation: Array3::zeros((n, 3, 3)),
            gaze: Array2::zeros((n, 2)),
            gaze_point: Array2::zeros((n, 2)),
            head_rot_norm: Array2::zeros((n, 3)),
            in_recording_index: Array1::zeros(n),
            left_eye_color: Array4::zeros((n, e, e, 3)),
            left_eye_depth: Array3::zeros((n, e, e)),
            mouse_distance: Array1::zeros(n),
            on_grid: Array1::zeros(n),
            recording_index: Array1::zeros(n),
            recording_session: Array1::zeros(n),
            right_eye_color: Array4::zeros((n, e, e, 3)),
            right_eye_depth: Array3::zeros((n, e, e)),
            extrinsics: Array3::zeros((sessions, 3, 4)),
            monitor: Array3::zeros((sessions, 3, 2)),
        }
    }

    /// Builds a file from metadata; images are left black.
    pub fn from_samples(samples: &[SampleMeta], extrinsics: &[Extrinsics], monitors: &[MonitorSpec], schema: Schema) -> Self {
        assert_eq!(extrinsics.len(), monitors.len(), "one monitor per session");
        let mut f = Self::zeros(samples.len(), extrinsics.len(), schema);
        for (i, s) in samples.iter().enumerate() {
            f.set_meta(i, s);
        }
        for (k, (e, m)) in extrinsics.iter().zip(monitors).enumerate() {
            f.set_session(k, e, m);
        }
        f
    }

    pub fn len(&self) -> usize {
        self.gaze.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn sessions(&self) -> usize {
        self.extrinsics.shape()[0]
    }

    pub fn schema(&self) -> Schema {
        Schema {
            face_size: self.face_color.shape()[1],
            eye_size: self.left_eye_color.shape()[1],
        }
    }

    pub fn set_meta(&mut self, i: usize, s: &SampleMeta) {
        for k in 0..3 {
            self.face_center[[i, k]] = s.face_center[k];
            self.head_rot_norm[[i, k]] = s.head_rot_norm[k];
            for j in 0..3 {
                self.face_transformation[[i, k, j]] = s.face_transformation[k][j];
            }
        }
        for (p, l) in s.face_landmarks.iter().enumerate() {
            self.face_landmarks[[i, p, 0]] = l[0];
            self.face_landmarks[[i, p, 1]] = l[1];
        }
        for k in 0..2 {
            self.gaze[[i, k]] = s.gaze[k];
            self.gaze_point[[i, k]] = s.gaze_point[k];
        }
        self.in_recording_index[i] = s.in_recording_index;
        self.mouse_distance[i] = s.mouse_distance;
        self.on_grid[i] = s.on_grid;
        self.recording_index[i] = s.recording_index;
        self.recording_session[i] = s.recording_session;
    }

    pub fn meta(&self, i: usize) -> SampleMeta {
        let mut lm = [[0f32; 2]; 5];
        for (p, l) in lm.iter_mut().enumerate() {
            *l = [self.face_landmarks[[i, p, 0]], self.face_landmarks[[i, p, 1]]];
        }
        let mut rot = [[0.0; 3]; 3];
        for (r, row) in rot.iter_mut().enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                *v = self.face_transformation[[i, r, c]];
            }
        }
        SampleMeta {
            face_center: [self.face_center[[i, 0]], self.face_center[[i, 1]], self.face_center[[i, 2]]],
            face_landmarks: lm,
            face_transformation: rot,
            gaze: [self.gaze[[i, 0]], self.gaze[[i, 1]]],
            gaze_point: [self.gaze_point[[i, 0]], self.gaze_point[[i, 1]]],
            head_rot_norm: [self.head_rot_norm[[i, 0]], self.head_rot_norm[[i, 1]], self.head_rot_norm[[i, 2]]],
            in_recording_index: self.in_recording_index[i],
            mouse_distance: self.mouse_distance[i],
            on_grid: self.on_grid[i],
            recording_index: self.recording_index[i],
            recording_session: self.recording_session[i],
        }
    }

    pub fn set_session(&mut self, k: usize, e: &Extrinsics, m: &MonitorSpec) {
        for (r, row) in e.rows_3x4().iter().enumerate() {
            for (c, v) in row.iter().enumerate() {
                self.extrinsics[[k, r, c]] = *v;
            }
        }
        for (r, row) in m.to_matrix().iter().enumerate() {
            for (c, v) in row.iter().enumerate() {
                self.monitor[[k, r, c]] = v.round() as i64;
            }
        }
    }

    fn session_index(&self, session: i64) -> Result<usize, DatasetError> {
        if session < 0 || session as usize >= self.sessions() {
            return Err(DatasetError::Session {
                session,
                sessions: self.sessions(),
            });
        }
        Ok(session as usize)
    }

    pub fn extrinsics_of(&self, session: i64) -> Result<Extrinsics, DatasetError> {
        let k = self.session_index(session)?;
        let mut rows = [[0.0; 4]; 3];
        for (r, row) in rows.iter_mut().enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                *v = self.extrinsics[[k, r, c]];
            }
        }
        Ok(Extrinsics::from_rows_3x4(rows)?)
    }

    pub fn monitor_of(&self, session: i64) -> Result<MonitorSpec, DatasetError> {
        let k = self.session_index(session)?;
        let mut m = [[0.0; 2]; 3];
        for (r, row) in m.iter_mut().enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                *v = self.monitor[[k, r, c]] as f64;
            }
        }
        Ok(MonitorSpec::from_matrix(m)?)
    }

    pub fn gaze_angles(&self, i: usize) -> GazeAngles {
        GazeAngles::new(self.gaze[[i, 0]], self.gaze[[i, 1]])
    }

    pub fn gaze_point_px(&self, i: usize) -> ScreenPoint {
        ScreenPoint {
            x: self.gaze_point[[i, 0]] as f64,
            y: self.gaze_point[[i, 1]] as f64,
        }
    }

    pub fn face_center_of(&self, i: usize) -> Vec3 {
        Vec3::new(self.face_center[[i, 0]], self.face_center[[i, 1]], self.face_center[[i, 2]])
    }

    pub fn rotation_of(&self, i: usize) -> Mat3 {
        Mat3::from_fn(|r, c| self.face_transformation[[i, r, c]])
    }

    pub fn landmarks_of(&self, i: usize) -> [Point2<f64>; 5] {
        std::array::from_fn(|p| Point2::new(self.face_landmarks[[i, p, 0]] as f64, self.face_landmarks[[i, p, 1]] as f64))
    }

    pub fn face_color_image(&self, i: usize) -> Image<u8> {
        color_image(self.face_color.slice(s![i, .., .., ..]))
    }

    pub fn face_depth_map(&self, i: usize) -> DepthMap {
        depth_image(self.face_depth.slice(s![i, .., ..]))
    }

    pub fn eye_color_images(&self, i: usize) -> (Image<u8>, Image<u8>) {
        (
            color_image(self.right_eye_color.slice(s![i, .., .., ..])),
            color_image(self.left_eye_color.slice(s![i, .., .., ..])),
        )
    }

    pub fn eye_depth_maps(&self, i: usize) -> (DepthMap, DepthMap) {
        (
            depth_image(self.right_eye_depth.slice(s![i, .., ..])),
            depth_image(self.left_eye_depth.slice(s![i, .., ..])),
        )
    }

    /// Replaces the face depth map of sample `i`.
    pub fn set_face_depth(&mut self, i: usize, d: &DepthMap) {
        let mut view = self.face_depth.slice_mut(s![i, .., ..]);
        for ((y, x), v) in view.indexed_iter_mut() {
            *v = d.get(x, y, 0);
        }
    }

    /// Keeps only the listed samples, in the given order.
    pub fn select(&self, indices: &[usize]) -> Self {
        let pick4 = |a: &Array4<u8>| a.select(ndarray::Axis(0), indices);
        let pick3u = |a: &Array3<u16>| a.select(ndarray::Axis(0), indices);
        Self {
            face_center: self.face_center.select(ndarray::Axis(0), indices),
            face_color: pick4(&self.face_color),
            face_depth: pick3u(&self.face_depth),
            face_landmarks: self.face_landmarks.select(ndarray::Axis(0), indices),
            face_transformation: self.face_transformation.select(ndarray::Axis(0), indices),
            gaze: self.gaze.select(ndarray::Axis(0), indices),
            gaze_point: self.gaze_point.select(ndarray::Axis(0), indices),
            head_rot_norm: self.head_rot_norm.select(ndarray::Axis(0), indices),
            in_recording_index: self.in_recording_index.select(ndarray::Axis(0), indices),
            left_eye_color: pick4(&self.left_eye_color),
            left_eye_depth: pick3u(&self.left_eye_depth),
            mouse_distance: self.mouse_distance.select(ndarray::Axis(0), indices),
            on_grid: self.on_grid.select(ndarray::Axis(0), indices),
            recording_index: self.recording_index.select(ndarray::Axis(0), indices),
            recording_session: self.recording_session.select(ndarray::Axis(0), indices),
            right_eye_color: pick4(&self.right_eye_color),
            right_eye_depth: pick3u(&self.right_eye_depth),
            extrinsics: self.extrinsics.clone(),
            monitor: self.monitor.clone(),
        }
    }
}

fn color_image(v: ndarray::ArrayView3<u8>) -> Image<u8> {
    let (h, w, c) = v.dim();
    Image::from_fn(w, h, c, |x, y, ch| v[[y, x, ch]])
}

fn depth_image(v: ndarray::ArrayView2<u16>) -> DepthMap {
    let (h, w) = v.dim();
    Image::from_fn(w, h, 1, |x, y, _| v[[y, x]])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn phase_ranges() {
        assert_eq!(phase_of(0).unwrap(), Phase::SinglePointSingleSample);
        assert_eq!(phase_of(99).unwrap(), Phase::SinglePointSingleSample);
        assert_eq!(phase_of(100).unwrap(), Phase::SinglePointContinuous);
        assert_eq!(phase_of(121).unwrap(), Phase::SinglePointContinuous);
        assert_eq!(phase_of(122).unwrap(), Phase::MovingPointContinuous);
        assert_eq!(phase_of(131).unwrap(), Phase::MovingPointContinuous);
        assert_eq!(phase_of(132), Err(DatasetError::RecordingIndex(132)));
        assert!(phase_of(-1).is_err());
    }

    #[test]
    fn meta_round_trip() {
        let m = MonitorSpec::new(1920.0, 1080.0, 527.0, 296.0).unwrap();
        let meta = SampleMeta {
            face_center: [1.0, 2.0, 600.0],
            face_landmarks: [[10.0, 20.0]; 5],
            face_transformation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            gaze: [0.1, -0.2],
            gaze_point: [100.5, 200.25],
            head_rot_norm: [0.0, -0.5, 0.1],
            in_recording_index: 3,
            mouse_distance: 1.5,
            on_grid: 1,
            recording_index: 105,
            recording_session: 0,
        };
        let f = SubjectFile::from_samples(&[meta], &[Extrinsics::identity()], &[m], Schema { face_size: 8, eye_size: 4 });
        assert_eq!(f.meta(0), meta);
        assert_eq!(f.monitor_of(0).unwrap(), m);
        assert_eq!(f.extrinsics_of(0).unwrap(), Extrinsics::identity());
        assert!(f.extrinsics_of(1).is_err());
        assert_eq!(f.schema(), Schema { face_size: 8, eye_size: 4 });
    }
}
