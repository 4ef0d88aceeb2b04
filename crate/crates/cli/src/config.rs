use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use gaze_core::depthproc::{EyeFilterParams, MISSING_LEVEL};
use gaze_core::filtering::{FilterKind, KalmanConfig};
use gaze_core::fusion::HyperParams;
use gaze_core::normalization::{FaceModel, NormParams};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    pub face_model: Option<PathBuf>,
    pub monitor: Option<PathBuf>,
    pub extrinsics: Option<PathBuf>,
    pub params: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DepthConfig {
    /// Erosion radius of the validity mask, pixels.
    pub mask_radius: usize,
    pub missing_level: f64,
    /// Tolerance around `missing_level`.
    pub missing_tolerance: f64,
    pub lambda_l1: f64,
    /// `None` picks the window from the stored patch size.
    pub eye_filter: Option<EyeFilterParams>,
}

impl Default for DepthConfig {
    fn default() -> Self {
        Self {
            mask_radius: 12,
            missing_level: MISSING_LEVEL,
            missing_tolerance: 0.01,
            lambda_l1: 10.0,
            eye_filter: None,
        }
    }
}

/// Everything `--config` can set. Missing fields keep their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    pub paths: Paths,
    pub norm: NormParams,
    pub depth: DepthConfig,
    pub hyper: HyperParams,
    pub filter: FilterKind,
    pub kalman: KalmanConfig,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            paths: Paths::default(),
            norm: NormParams::default(),
            depth: DepthConfig::default(),
            hyper: HyperParams::toy(gaze_core::fusion::EncoderVariant::B2T),
            filter: FilterKind::None,
            kalman: KalmanConfig::default(),
        }
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let cfg: Config = serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn check(&self) -> Result<()> {
        let p = &self.paths;
        for path in [&p.face_model, &p.monitor, &p.extrinsics, &p.params].into_iter().flatten() {
            if !path.exists() {
                bail!("config references missing file {}", path.display());
            }
        }
        self.norm.validate()?;
        self.hyper.validate()?;
        self.kalman.validate()?;
        let d = &self.depth;
        if !(d.missing_tolerance >= 0.0) || !d.missing_level.is_finite() || !(d.lambda_l1 >= 0.0) {
            bail!("invalid depth settings {d:?}");
        }
        if let Some(e) = d.eye_filter {
            if e.region_size % 2 == 0 {
                bail!("eye filter window must be odd, got {}", e.region_size);
            }
        }
        Ok(())
    }

    pub fn face_model(&self) -> Result<FaceModel> {
        match &self.paths.face_model {
            None => Ok(FaceModel::default()),
            Some(path) => {
                let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                let m: FaceModel = serde_json::from_str(&text)?;
                m.validate()?;
                Ok(m)
            }
        }
    }
}
