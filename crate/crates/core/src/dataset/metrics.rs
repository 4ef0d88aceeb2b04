//! Angular and on-screen error metrics.

use serde::{Deserialize, Serialize};

use crate::geometry::{angles_to_vector, GazeAngles, MonitorSpec, ScreenPoint};

/// Angle between the two gaze directions, degrees.
///
/// Evaluated as `atan2(|a × b|, a · b)`, which equals the arccosine of the
/// cosine similarity but stays accurate for nearly parallel vectors.
pub fn angular_error(g: GazeAngles, g_hat: GazeAngles) -> f64 {
    let a = angles_to_vector(g);
    let b = angles_to_vector(g_hat);
    a.cross(&b).norm().atan2(a.dot(&b).clamp(-1.0, 1.0)).to_degrees()
}

/// Plain (unsquared) distance between two points in millimeters.
pub fn euclidean_error(p: [f64; 2], p_hat: [f64; 2]) -> f64 {
    (p[0] - p_hat[0]).hypot(p[1] - p_hat[1])
}

/// Distance in millimeters between two screen pixels.
pub fn screen_error_mm(p: ScreenPoint, p_hat: ScreenPoint, m: &MonitorSpec) -> f64 {
    let (sx, sy) = m.mm_per_px();
    euclidean_error([p.x * sx, p.y * sy], [p_hat.x * sx, p_hat.y * sy])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorPair {
    pub e_deg: f64,
    pub d_mm: f64,
}

/// Means of both errors; `None` for an empty list.
pub fn mean_errors(errors: &[ErrorPair]) -> Option<(f64, f64)> {
    if errors.is_empty() {
        return None;
    }
    let n = errors.len() as f64;
    let (e, d) = errors.iter().fold((0.0, 0.0), |(e, d), p| (e + p.e_deg, d + p.d_mm));
    Some((e / n, d / n))
}

/// Linear-interpolated quantile of sorted data, `q ∈ [0, 1]`.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty data");
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quartiles {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

pub fn quartiles(values: &[f64]) -> Option<Quartiles> {
    if values.is_empty() {
        return None;
    }
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    Some(Quartiles {
        min: s[0],
        q1: quantile_sorted(&s, 0.25),
        median: quantile_sorted(&s, 0.5),
        q3: quantile_sorted(&s, 0.75),
        max: s[s.len() - 1],
    })
}

/// Mean error per screen cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Heatmap {
    pub cols: usize,
    pub rows: usize,
    pub width: f64,
    pub height: f64,
    /// Row-major; `None` marks cells without samples.
    pub mean: Vec<Option<f64>>,
    pub count: Vec<usize>,
}

impl Heatmap {
    pub fn cell(&self, col: usize, row: usize) -> Option<f64> {
        self.mean[row * self.cols + col]
    }

    /// Grid as CSV text, empty cells left blank.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for r in 0..self.rows {
            let line: Vec<String> = (0..self.cols)
                .map(|c| self.cell(c, r).map(|v| v.to_string()).unwrap_or_default())
                .collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out
    }
}

/// Bins `errors[i]` by `points[i]` over `[0, width) × [0, height)`; points
/// on or past the far edge go to the last cell.
pub fn error_heatmap(errors: &[f64], points: &[[f64; 2]], bins: (usize, usize), extent: (f64, f64)) -> Heatmap {
    assert_eq!(errors.len(), points.len(), "one point per error");
    let (cols, rows) = (bins.0.max(1), bins.1.max(1));
    let mut sum = vec![0.0; cols * rows];
    let mut count = vec![0usize; cols * rows];
    for (e, p) in errors.iter().zip(points) {
        if !e.is_finite() || !p[0].is_finite() || !p[1].is_finite() {
            continue;
        }
        let bin = |v: f64, len: f64, n: usize| ((v / len * n as f64).floor().max(0.0) as usize).min(n - 1);
        let k = bin(p[1], extent.1, rows) * cols + bin(p[0], extent.0, cols);
        sum[k] += e;
        count[k] += 1;
    }
    Heatmap {
        cols,
        rows,
        width: extent.0,
        height: extent.1,
        mean: sum
            .iter()
            .zip(&count)
            .map(|(s, &c)| (c > 0).then(|| s / c as f64))
            .collect(),
        count,
    }
}
