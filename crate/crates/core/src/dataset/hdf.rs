//! HDF5 storage: one flat dataset per key, no groups.

use std::fmt;
use std::path::Path;

use hdf5::{File, H5Type};
use ndarray::{Array, Dimension, IxDyn};
use thiserror::Error;

use super::{Schema, SubjectFile};

#[derive(Debug, Clone, PartialEq)]
pub struct SchemaIssue {
    pub key: String,
    pub problem: String,
}

impl fmt::Display for SchemaIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.key, self.problem)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SchemaError {
    pub issues: Vec<SchemaIssue>,
}

impl SchemaError {
    pub fn mentions(&self, key: &str) -> bool {
        self.issues.iter().any(|i| i.key == key)
    }
}

impl fmt::Display for SchemaError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "schema mismatch")?;
        for (k, i) in self.issues.iter().enumerate() {
            write!(f, "{} {i}", if k == 0 { ":" } else { ";" })?;
        }
        Ok(())
    }
}

impl std::error::Error for SchemaError {}

#[derive(Debug, Error)]
pub enum DatasetIoError {
    #[error("hdf5: {0}")]
    Hdf5(#[from] hdf5::Error),
    #[error(transparent)]
    Schema(#[from] SchemaError),
}

/// Expected trailing dimensions (after the sample or session axis).
fn tail(key: &str, s: &Schema) -> Vec<usize> {
    let (f, e) = (s.face_size, s.eye_size);
    match key {
        "face_center" | "head_rot_norm" => vec![3],
        "face_color" => vec![f, f, 3],
        "face_depth" => vec![f, f],
        "face_landmarks" => vec![5, 2],
        "face_transformation" => vec![3, 3],
        "gaze" | "gaze_point" => vec![2],
        "left_eye_color" | "right_eye_color" => vec![e, e, 3],
        "left_eye_depth" | "right_eye_depth" => vec![e, e],
        "extrinsics" => vec![3, 4],
        "monitor" => vec![3, 2],
        _ => vec![],
    }
}

struct Reader<'a> {
    file: &'a File,
    schema: Schema,
    issues: Vec<SchemaIssue>,
}

impl Reader<'_> {
    fn issue(&mut self, key: &str, problem: String) {
        self.issues.push(SchemaIssue {
            key: key.to_string(),
            problem,
        });
    }

    fn read<T: H5Type + Clone + Default, D: Dimension>(&mut self, key: &str) -> Array<T, D> {
        let want_tail = tail(key, &self.schema);
        let empty = || {
            let mut shape = vec![0];
            shape.extend(&want_tail);
            Array::<T, IxDyn>::default(IxDyn(&shape)).into_dimensionality::<D>().expect("rank")
        };
        if !self.file.link_exists(key) {
            self.issue(key, "missing".into());
            return empty();
        }
        let ds = match self.file.dataset(key) {
            Ok(ds) => ds,
            Err(e) => {
                self.issue(key, format!("not a dataset ({e})"));
                return empty();
            }
        };
        let want = T::type_descriptor();
        match ds.dtype().and_then(|t| t.to_descriptor()) {
            Ok(got) if got == want => {}
            Ok(got) => {
                self.issue(key, format!("dtype {got}, expected {want}"));
                return empty();
            }
            Err(e) => {
                self.issue(key, format!("unreadable dtype ({e})"));
                return empty();
            }
        }
        let shape = ds.shape();
        if shape.len() != want_tail.len() + 1 || shape[1..] != want_tail[..] {
            let mut expected = vec!["n".to_string()];
            expected.extend(want_tail.iter().map(|d| d.to_string()));
            self.issue(key, format!("shape {shape:?}, expected [{}]", expected.join(", ")));
            return empty();
        }
        match ds.read::<T, D>() {
            Ok(a) => a,
            Err(e) => {
                self.issue(key, format!("read failed ({e})"));
                empty()
            }
        }
    }
}

/// Reads a file with standard 448/112 px images.
pub fn read_subject(path: &Path) -> Result<SubjectFile, DatasetIoError> {
    read_subject_with(path, Schema::STANDARD)
}

/// Patch sizes as stored in the file, taken from `face_color` and
/// `right_eye_color`.
pub fn stored_schema(path: &Path) -> Result<Schema, DatasetIoError> {
    let file = File::open(path)?;
    let side = |key: &str| -> Result<usize, DatasetIoError> {
        let missing = |problem: &str| SchemaError {
            issues: vec![SchemaIssue {
                key: key.to_string(),
                problem: problem.to_string(),
            }],
        };
        if !file.link_exists(key) {
            return Err(missing("missing").into());
        }
        let shape = file.dataset(key)?.shape();
        if shape.len() != 4 || shape[1] != shape[2] {
            return Err(missing(&format!("shape {shape:?} is not [n, s, s, 3]")).into());
        }
        Ok(shape[1])
    };
    Ok(Schema {
        face_size: side("face_color")?,
        eye_size: side("right_eye_color")?,
    })
}

/// Reads a file whatever its patch sizes.
pub fn read_subject_any(path: &Path) -> Result<SubjectFile, DatasetIoError> {
    read_subject_with(path, stored_schema(path)?)
}

pub fn read_subject_with(path: &Path, schema: Schema) -> Result<SubjectFile, DatasetIoError> {
    let file = File::open(path)?;
    let mut r = Reader {
        file: &file,
        schema,
        issues: Vec::new(),
    };
    let out = SubjectFile {
        face_center: r.read("face_center"),
        face_color: r.read("face_color"),
        face_depth: r.read("face_depth"),
        face_landmarks: r.read("face_landmarks"),
        face_transformation: r.read("face_transformation"),
        gaze: r.read("gaze"),
        gaze_point: r.read("gaze_point"),
        head_rot_norm: r.read("head_rot_norm"),
        in_recording_index: r.read("in_recording_index"),
        left_eye_color: r.read("left_eye_color"),
        left_eye_depth: r.read("left_eye_depth"),
        mouse_distance: r.read("mouse_distance"),
        on_grid: r.read("on_grid"),
        recording_index: r.read("recording_index"),
        recording_session: r.read("recording_session"),
        right_eye_color: r.read("right_eye_color"),
        right_eye_depth: r.read("right_eye_depth"),
        extrinsics: r.read("extrinsics"),
        monitor: r.read("monitor"),
    };
    if r.issues.is_empty() {
        Ok(out)
    } else {
        Err(SchemaError { issues: r.issues }.into())
    }
}

fn write_key<T: H5Type, D: Dimension>(file: &File, key: &str, a: &Array<T, D>, compress: bool) -> hdf5::Result<()> {
    let builder = file.new_dataset_builder().with_data(a.view());
    if compress && a.shape()[0] > 0 && hdf5::filters::deflate_available() {
        let mut chunk = a.shape().to_vec();
        chunk[0] = 1;
        builder.chunk(chunk).deflate(4).create(key)?;
    } else {
        builder.create(key)?;
    }
    Ok(())
}

/// Writes every key; image arrays are chunked per sample and deflated.
pub fn write_subject(path: &Path, f: &SubjectFile) -> Result<(), DatasetIoError> {
    write_subject_with(path, f, true)
}

pub fn write_subject_with(path: &Path, f: &SubjectFile, compress: bool) -> Result<(), DatasetIoError> {
    let file = File::create(path)?;
    write_key(&file, "face_center", &f.face_center, false)?;
    write_key(&file, "face_color", &f.face_color, compress)?;
    write_key(&file, "face_depth", &f.face_depth, compress)?;
    write_key(&file, "face_landmarks", &f.face_landmarks, false)?;
    write_key(&file, "face_transformation", &f.face_transformation, false)?;
    write_key(&file, "gaze", &f.gaze, false)?;
    write_key(&file, "gaze_point", &f.gaze_point, false)?;
    write_key(&file, "head_rot_norm", &f.head_rot_norm, false)?;
    write_key(&file, "in_recording_index", &f.in_recording_index, false)?;
    write_key(&file, "left_eye_color", &f.left_eye_color, compress)?;
    write_key(&file, "left_eye_depth", &f.left_eye_depth, compress)?;
    write_key(&file, "mouse_distance", &f.mouse_distance, false)?;
    write_key(&file, "on_grid", &f.on_grid, false)?;
    write_key(&file, "recording_index", &f.recording_index, false)?;
    write_key(&file, "recording_session", &f.recording_session, false)?;
    write_key(&file, "right_eye_color", &f.right_eye_color, compress)?;
    write_key(&file, "right_eye_depth", &f.right_eye_depth, compress)?;
    write_key(&file, "extrinsics", &f.extrinsics, false)?;
    write_key(&file, "monitor", &f.monitor, false)?;
    file.flush()?;
    Ok(())
}
