//! Per-subject bias estimation from calibration samples.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fusion::{apply_subject_bias, SubjectBias};
use crate::geometry::GazeAngles;

/// Variance of the predictions below which the slope is not identifiable.
pub const MIN_VARIANCE: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CalibrationError {
    #[error("need at least {needed} calibration samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("no calibration samples")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalSample {
    pub predicted: GazeAngles,
    pub truth: GazeAngles,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiasFit {
    pub bias: SubjectBias,
    /// Residual RMS (rad) on the calibration set after correction.
    pub rms_pitch: f64,
    pub rms_yaw: f64,
    /// Set when the axis fell back to an offset-only fit.
    pub degenerate_pitch: bool,
    pub degenerate_yaw: bool,
}

impl BiasFit {
    pub fn rms(&self) -> f64 {
        (0.5 * (self.rms_pitch.powi(2) + self.rms_yaw.powi(2))).sqrt()
    }

    pub fn to_record(&self, subject_id: &str) -> BiasRecord {
        let mut flags = Vec::new();
        if self.degenerate_pitch {
            flags.push("degenerate_pitch".to_string());
        }
        if self.degenerate_yaw {
            flags.push("degenerate_yaw".to_string());
        }
        BiasRecord {
            subject_id: subject_id.to_string(),
            offset_pitch: self.bias.offset_pitch,
            offset_yaw: self.bias.offset_yaw,
            scale_pitch: self.bias.scale_pitch,
            scale_yaw: self.bias.scale_yaw,
            residual: self.rms(),
            flags,
        }
    }
}

/// On-disk form of a fitted bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasRecord {
    pub subject_id: String,
    pub offset_pitch: f64,
    pub offset_yaw: f64,
    pub scale_pitch: f64,
    pub scale_yaw: f64,
    pub residual: f64,
    #[serde(default)]
    pub flags: Vec<String>,
}

impl BiasRecord {
    pub fn bias(&self) -> SubjectBias {
        SubjectBias {
            offset_pitch: self.offset_pitch,
            offset_yaw: self.offset_yaw,
            scale_pitch: self.scale_pitch,
            scale_yaw: self.scale_yaw,
        }
    }
}

/// Slope and intercept of `y ≈ a·x + b`; `None` when `x` has no spread.
fn fit_axis(x: &[f64], y: &[f64]) -> Option<(f64, f64)> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    // normal equations in centered form: [Sxx 0; 0 n]·[a; b'] = [Sxy; 0]
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if sxx / n <= MIN_VARIANCE {
        return None;
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let a = sxy / sxx;
    Some((a, my - a * mx))
}

fn mean_offset(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| b - a).sum::<f64>() / x.len() as f64
}

fn axis_rms(x: &[f64], y: &[f64], a: f64, b: f64) -> f64 {
    (x.iter().zip(y).map(|(xi, yi)| (a * xi + b - yi).powi(2)).sum::<f64>() / x.len() as f64).sqrt()
}

fn split(samples: &[CalSample]) -> [(Vec<f64>, Vec<f64>); 2] {
    [
        (
            samples.iter().map(|s| s.predicted.pitch).collect(),
            samples.iter().map(|s| s.truth.pitch).collect(),
        ),
        (
            samples.iter().map(|s| s.predicted.yaw).collect(),
            samples.iter().map(|s| s.truth.yaw).collect(),
        ),
    ]
}

/// Independent least-squares line per axis: `truth ≈ a·predicted + b`.
pub fn estimate_bias_ls(samples: &[CalSample]) -> Result<BiasFit, CalibrationError> {
    if samples.len() < 3 {
        return Err(CalibrationError::TooFewSamples {
            needed: 3,
            got: samples.len(),
        });
    }
    let mut out = [(0.0, 0.0, 0.0, false); 2];
    for (o, (x, y)) in out.iter_mut().zip(split(samples).iter()) {
        let (a, b, degenerate) = match fit_axis(x, y) {
            Some((a, b)) => (a, b, false),
            None => (1.0, mean_offset(x, y), true),
        };
        *o = (a, b, axis_rms(x, y, a, b), degenerate);
    }
    let [p, w] = out;
    Ok(BiasFit {
        bias: SubjectBias {
            offset_pitch: p.1,
            offset_yaw: w.1,
            scale_pitch: p.0 - 1.0,
            scale_yaw: w.0 - 1.0,
        },
        rms_pitch: p.2,
        rms_yaw: w.2,
        degenerate_pitch: p.3,
        degenerate_yaw: w.3,
    })
}

/// Mean residual per axis, slope fixed at one.
pub fn estimate_offset_only(samples: &[CalSample]) -> Result<BiasFit, CalibrationError> {
    if samples.is_empty() {
        return Err(CalibrationError::Empty);
    }
    let [(xp, yp), (xw, yw)] = split(samples);
    let (bp, bw) = (mean_offset(&xp, &yp), mean_offset(&xw, &yw));
    Ok(BiasFit {
        bias: SubjectBias {
            offset_pitch: bp,
            offset_yaw: bw,
            scale_pitch: 0.0,
            scale_yaw: 0.0,
        },
        rms_pitch: axis_rms(&xp, &yp, 1.0, bp),
        rms_yaw: axis_rms(&xw, &yw, 1.0, bw),
        degenerate_pitch: false,
        degenerate_yaw: false,
    })
}

pub fn apply_calibration(predictions: &[GazeAngles], fit: &BiasFit) -> Vec<GazeAngles> {
    predictions.iter().map(|&p| apply_subject_bias(p, &fit.bias)).collect()
}

/// RMS over both axes of `truth − (bias applied to predicted)`.
pub fn calibration_rms(samples: &[CalSample], bias: &SubjectBias) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let s: f64 = samples
        .iter()
        .map(|c| {
            let g = apply_subject_bias(c.predicted, bias);
            (g.pitch - c.truth.pitch).powi(2) + (g.yaw - c.truth.yaw).powi(2)
        })
        .sum();
    (s / (2 * samples.len()) as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn planted(n: usize, a: (f64, f64), b: (f64, f64)) -> Vec<CalSample> {
        (0..n)
            .map(|i| {
                let t = i as f64;
                let p = GazeAngles::new(0.3 * (0.7 * t).sin(), 0.4 * (1.3 * t + 0.2).cos());
                CalSample {
                    predicted: p,
                    truth: GazeAngles::new(a.0 * p.pitch + b.0, a.1 * p.yaw + b.1),
                }
            })
            .collect()
    }

    #[test]
    fn recovers_planted_bias() {
        let s = planted(25, (0.98, 1.03), (0.0367, -0.013));
        let f = estimate_bias_ls(&s).unwrap();
        assert_abs_diff_eq!(f.bias.scale_pitch, -0.02, epsilon = 1e-9);
        assert_abs_diff_eq!(f.bias.scale_yaw, 0.03, epsilon = 1e-9);
        assert_abs_diff_eq!(f.bias.offset_pitch, 0.0367, epsilon = 1e-9);
        assert_abs_diff_eq!(f.bias.offset_yaw, -0.013, epsilon = 1e-9);
    }

    #[test]
    fn identity_fit() {
        let s = planted(10, (1.0, 1.0), (0.0, 0.0));
        let f = estimate_bias_ls(&s).unwrap();
        assert_abs_diff_eq!(f.bias.scale_pitch, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(f.bias.offset_yaw, 0.0, epsilon = 1e-12);
        assert!(f.rms() < 1e-12);
    }

    #[test]
    fn too_few_and_empty() {
        let s = planted(2, (1.0, 1.0), (0.0, 0.0));
        assert_eq!(
            estimate_bias_ls(&s).unwrap_err(),
            CalibrationError::TooFewSamples { needed: 3, got: 2 }
        );
        assert_eq!(estimate_offset_only(&[]).unwrap_err(), CalibrationError::Empty);
    }

    #[test]
    fn single_sample_offset() {
        let s = [CalSample {
            predicted: GazeAngles::new(0.1, -0.2),
            truth: GazeAngles::new(0.15, -0.1),
        }];
        let f = estimate_offset_only(&s).unwrap();
        assert_eq!(f.bias.offset_pitch, 0.15 - 0.1);
        assert_eq!(f.bias.offset_yaw, -0.1 - -0.2);
    }

    #[test]
    fn constant_predictions_fall_back() {
        let s: Vec<CalSample> = (0..5)
            .map(|i| CalSample {
                predicted: GazeAngles::new(0.2, 0.1 * i as f64),
                truth: GazeAngles::new(0.25 + 0.001 * i as f64, 0.1 * i as f64),
            })
            .collect();
        let f = estimate_bias_ls(&s).unwrap();
        assert!(f.degenerate_pitch && !f.degenerate_yaw);
        assert_eq!(f.bias.scale_pitch, 0.0);
        assert_abs_diff_eq!(f.bias.offset_pitch, 0.052, epsilon = 1e-12);
    }

    #[test]
    fn record_round_trip() {
        let f = estimate_bias_ls(&planted(8, (1.1, 0.9), (0.01, 0.02))).unwrap();
        let r = f.to_record("p003");
        let json = serde_json::to_string(&r).unwrap();
        let back: BiasRecord = serde_json::from_str(&json).unwrap();
        assert_eq!(back.bias(), f.bias);
    }
}
