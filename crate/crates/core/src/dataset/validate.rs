use std::collections::HashMap;
use std::fmt;

use ndarray::{Array, Dimension};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{SubjectFile, RECORDINGS};
use crate::geometry::{check_rotation, Mat3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Rule {
    /// Per-sample arrays must all have the same length.
    Length,
    Range,
    NonFinite,
    /// `(session, recording, index)` must be unique.
    Duplicate,
    /// Session tables must have `max(session) + 1` rows.
    SessionCount,
    Rotation,
    Monitor,
    OffScreen,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub key: String,
    /// Sample (or session) index, when the rule applies to one entry.
    pub index: Option<usize>,
    pub rule: Rule,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.index {
            Some(i) => write!(f, "{}[{i}]: {:?}: {}", self.key, self.rule, self.detail),
            None => write!(f, "{}: {:?}: {}", self.key, self.rule, self.detail),
        }
    }
}

fn v(key: &str, index: Option<usize>, rule: Rule, detail: impl Into<String>) -> Violation {
    Violation {
        key: key.to_string(),
        index,
        rule,
        detail: detail.into(),
    }
}

fn finite_rows<D: Dimension + ndarray::RemoveAxis>(key: &str, a: &Array<f64, D>) -> Vec<Violation> {
    a.outer_iter()
        .enumerate()
        .filter(|(_, row)| row.iter().any(|x| !x.is_finite()))
        .map(|(i, _)| v(key, Some(i), Rule::NonFinite, "non-finite value"))
        .collect()
}

type Check = fn(&SubjectFile) -> Vec<Violation>;

fn lengths(f: &SubjectFile) -> Vec<Violation> {
    let n = f.len();
    let lens = [
        ("face_center", f.face_center.shape()[0]),
        ("face_color", f.face_color.shape()[0]),
        ("face_depth", f.face_depth.shape()[0]),
        ("face_landmarks", f.face_landmarks.shape()[0]),
        ("face_transformation", f.face_transformation.shape()[0]),
        ("gaze_point", f.gaze_point.shape()[0]),
        ("head_rot_norm", f.head_rot_norm.shape()[0]),
        ("in_recording_index", f.in_recording_index.len()),
        ("left_eye_color", f.left_eye_color.shape()[0]),
        ("left_eye_depth", f.left_eye_depth.shape()[0]),
        ("mouse_distance", f.mouse_distance.len()),
        ("on_grid", f.on_grid.len()),
        ("recording_index", f.recording_index.len()),
        ("recording_session", f.recording_session.len()),
        ("right_eye_color", f.right_eye_color.shape()[0]),
        ("right_eye_depth", f.right_eye_depth.shape()[0]),
    ];
    lens.iter()
        .filter(|(_, l)| *l != n)
        .map(|(k, l)| v(k, None, Rule::Length, format!("{l} entries, gaze has {n}")))
        .collect()
}

fn landmarks(f: &SubjectFile) -> Vec<Violation> {
    let size = f.face_color.shape()[1] as f32;
    f.face_landmarks
        .outer_iter()
        .enumerate()
        .filter_map(|(i, l)| {
            let bad = l.iter().find(|x| !(0.0..=size).contains(*x))?;
            Some(v("face_landmarks", Some(i), Rule::Range, format!("{bad} outside [0, {size}]")))
        })
        .collect()
}

fn indices(f: &SubjectFile) -> Vec<Violation> {
    let mut out = Vec::new();
    for (i, &r) in f.recording_index.iter().enumerate() {
        if !(0..RECORDINGS).contains(&r) {
            out.push(v("recording_index", Some(i), Rule::Range, format!("{r} outside [0, {RECORDINGS})")));
        }
    }
    for (i, &r) in f.in_recording_index.iter().enumerate() {
        if r < 0 {
            out.push(v("in_recording_index", Some(i), Rule::Range, format!("{r} is negative")));
        }
    }
    for (i, &s) in f.recording_session.iter().enumerate() {
        if s < 0 {
            out.push(v("recording_session", Some(i), Rule::Range, format!("{s} is negative")));
        }
    }
    out
}

fn uniqueness(f: &SubjectFile) -> Vec<Violation> {
    let n = f
        .recording_session
        .len()
        .min(f.recording_index.len())
        .min(f.in_recording_index.len());
    let mut seen = HashMap::with_capacity(n);
    let mut out = Vec::new();
    for i in 0..n {
        let key = (f.recording_session[i], f.recording_index[i], f.in_recording_index[i]);
        if let Some(first) = seen.insert(key, i) {
            out.push(v(
                "in_recording_index",
                Some(i),
                Rule::Duplicate,
                format!("(session, recording, index) {key:?} already used by sample {first}"),
            ));
            seen.insert(key, first);
        }
    }
    out
}

fn sessions(f: &SubjectFile) -> Vec<Violation> {
    let want = f.recording_session.iter().max().map_or(0, |&m| (m.max(-1) + 1) as usize);
    let mut out = Vec::new();
    for (key, rows) in [("extrinsics", f.extrinsics.shape()[0]), ("monitor", f.monitor.shape()[0])] {
        if rows != want {
            out.push(v(key, None, Rule::SessionCount, format!("{rows} sessions stored, samples reference {want}")));
        }
    }
    for (k, e) in f.extrinsics.outer_iter().enumerate() {
        if e.iter().any(|x| !x.is_finite()) {
            out.push(v("extrinsics", Some(k), Rule::NonFinite, "non-finite value"));
            continue;
        }
        let r = Mat3::from_fn(|i, j| e[[i, j]]);
        if let Err(msg) = check_rotation(&r) {
            out.push(v("extrinsics", Some(k), Rule::Rotation, msg));
        }
    }
    for k in 0..f.monitor.shape()[0] {
        if let Err(e) = f.monitor_of(k as i64) {
            out.push(v("monitor", Some(k), Rule::Monitor, e.to_string()));
        }
    }
    out
}

fn rotations(f: &SubjectFile) -> Vec<Violation> {
    f.face_transformation
        .outer_iter()
        .enumerate()
        .filter_map(|(i, m)| {
            if m.iter().any(|x| !x.is_finite()) {
                return Some(v("face_transformation", Some(i), Rule::NonFinite, "non-finite value"));
            }
            let r = Mat3::from_fn(|a, b| m[[a, b]]);
            check_rotation(&r)
                .err()
                .map(|msg| v("face_transformation", Some(i), Rule::Rotation, msg))
        })
        .collect()
}

fn gaze(f: &SubjectFile) -> Vec<Violation> {
    let mut out = finite_rows("gaze", &f.gaze);
    for (i, row) in f.gaze.outer_iter().enumerate() {
        let (p, y) = (row[0], row[1]);
        if p.is_finite() && y.is_finite() && !(crate::geometry::GazeAngles::new(p, y).is_valid()) {
            out.push(v("gaze", Some(i), Rule::Range, format!("({p}, {y}) outside the angle domain")));
        }
    }
    out.extend(finite_rows("head_rot_norm", &f.head_rot_norm));
    out
}

fn face_center(f: &SubjectFile) -> Vec<Violation> {
    let mut out = finite_rows("face_center", &f.face_center);
    for (i, c) in f.face_center.outer_iter().enumerate() {
        if c[2].is_finite() && c[2] <= 0.0 {
            out.push(v("face_center", Some(i), Rule::Range, format!("z = {} is not in front of the camera", c[2])));
        }
    }
    out
}

fn gaze_point(f: &SubjectFile) -> Vec<Violation> {
    let mut out = Vec::new();
    let n = f.gaze_point.shape()[0].min(f.recording_session.len());
    for i in 0..n {
        let (x, y) = (f.gaze_point[[i, 0]] as f64, f.gaze_point[[i, 1]] as f64);
        if !x.is_finite() || !y.is_finite() {
            out.push(v("gaze_point", Some(i), Rule::NonFinite, "non-finite value"));
            continue;
        }
        // session problems are reported by `sessions`
        let Ok(m) = f.monitor_of(f.recording_session[i]) else { continue };
        let inside = x >= m.offset_x && y >= m.offset_y && x <= m.offset_x + m.w && y <= m.offset_y + m.h;
        if !inside {
            out.push(v("gaze_point", Some(i), Rule::OffScreen, format!("({x}, {y}) outside {}x{}", m.w, m.h)));
        }
    }
    out
}

fn scalars(f: &SubjectFile) -> Vec<Violation> {
    let mut out = Vec::new();
    for (i, &g) in f.on_grid.iter().enumerate() {
        if g > 1 {
            out.push(v("on_grid", Some(i), Rule::Range, format!("{g} is not 0 or 1")));
        }
    }
    // NaN marks samples without a mouse position
    for (i, &d) in f.mouse_distance.iter().enumerate() {
        if d < 0.0 || d.is_infinite() {
            out.push(v("mouse_distance", Some(i), Rule::Range, format!("{d} is not a distance")));
        }
    }
    out
}

const CHECKS: [Check; 10] = [
    lengths,
    landmarks,
    indices,
    uniqueness,
    sessions,
    rotations,
    gaze,
    face_center,
    gaze_point,
    scalars,
];

/// Every broken invariant, in a fixed order. Empty means the file is valid.
pub fn validate(f: &SubjectFile) -> Vec<Violation> {
    CHECKS.par_iter().map(|c| c(f)).collect::<Vec<_>>().into_iter().flatten().collect()
}
