//! Temporal smoothing of 2D signals: a constant-velocity Kalman filter with
//! independent axes and a three-sample moving average.

use std::collections::VecDeque;

use nalgebra::{Matrix2, Matrix4, Vector2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FilterError {
    #[error("filter parameters must be positive and finite: q={q}, r={r}, dt={dt}")]
    BadConfig { q: f64, r: f64, dt: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KalmanConfig {
    /// Process noise spectral density per axis.
    pub q: f64,
    /// Measurement noise variance per axis.
    pub r: f64,
    pub dt: f64,
}

impl Default for KalmanConfig {
    fn default() -> Self {
        Self { q: 1e-3, r: 1e-2, dt: 1.0 }
    }
}

impl KalmanConfig {
    pub fn validate(&self) -> Result<(), FilterError> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if ok(self.q) && ok(self.r) && ok(self.dt) {
            Ok(())
        } else {
            Err(FilterError::BadConfig { q: self.q, r: self.r, dt: self.dt })
        }
    }
}

/// Initial velocity variance.
pub const INITIAL_VELOCITY_VAR: f64 = 1e4;
/// Gaps longer than this many timesteps reinitialise the filter.
pub const GAP_RESET_STEPS: f64 = 5.0;

/// Position/velocity along one axis.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Axis {
    x: Vector2<f64>,
    p: Matrix2<f64>,
}

impl Axis {
    fn new(z: f64, r: f64) -> Self {
        Self {
            x: Vector2::new(z, 0.0),
            p: Matrix2::new(r, 0.0, 0.0, INITIAL_VELOCITY_VAR),
        }
    }

    fn step(&mut self, z: f64, f: &Matrix2<f64>, q: &Matrix2<f64>, r: f64) -> f64 {
        self.x = f * self.x;
        self.p = f * self.p * f.transpose() + q;
        // H = [1 0]
        let s = self.p[(0, 0)] + r;
        let k = Vector2::new(self.p[(0, 0)], self.p[(1, 0)]) / s;
        self.x += k * (z - self.x[0]);
        // Joseph form keeps P symmetric PSD
        let ikh = Matrix2::new(1.0 - k[0], 0.0, -k[1], 1.0);
        let p = ikh * self.p * ikh.transpose() + k * k.transpose() * r;
        self.p = 0.5 * (p + p.transpose());
        self.x[0]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Kalman2D {
    cfg: KalmanConfig,
    f: Matrix2<f64>,
    q: Matrix2<f64>,
    axes: [Axis; 2],
    last_time: Option<f64>,
}

impl Kalman2D {
    pub fn new(first: [f64; 2], cfg: KalmanConfig) -> Result<Self, FilterError> {
        cfg.validate()?;
        let dt = cfg.dt;
        let q = cfg.q * Matrix2::new(dt.powi(3) / 3.0, dt * dt / 2.0, dt * dt / 2.0, dt);
        Ok(Self {
            cfg,
            f: Matrix2::new(1.0, dt, 0.0, 1.0),
            q,
            axes: [Axis::new(first[0], cfg.r), Axis::new(first[1], cfg.r)],
            last_time: None,
        })
    }

    pub fn config(&self) -> &KalmanConfig {
        &self.cfg
    }

    pub fn position(&self) -> [f64; 2] {
        [self.axes[0].x[0], self.axes[1].x[0]]
    }

    pub fn velocity(&self) -> [f64; 2] {
        [self.axes[0].x[1], self.axes[1].x[1]]
    }

    /// Full state covariance in `(x, y, vx, vy)` order.
    pub fn covariance(&self) -> Matrix4<f64> {
        let mut c = Matrix4::zeros();
        for (a, ax) in self.axes.iter().enumerate() {
            for i in 0..2 {
                for j in 0..2 {
                    c[(a + 2 * i, a + 2 * j)] = ax.p[(i, j)];
                }
            }
        }
        c
    }

    /// Predict one `dt`, then fuse `z`. Returns the filtered position.
    pub fn step(&mut self, z: [f64; 2]) -> [f64; 2] {
        let r = self.cfg.r;
        [
            self.axes[0].step(z[0], &self.f, &self.q, r),
            self.axes[1].step(z[1], &self.f, &self.q, r),
        ]
    }

    /// Like [`step`](Self::step) but restarts from `z` when the time since
    /// the previous measurement exceeds `GAP_RESET_STEPS·dt`.
    pub fn step_at(&mut self, t: f64, z: [f64; 2]) -> [f64; 2] {
        let gap = self.last_time.map(|t0| t - t0 > GAP_RESET_STEPS * self.cfg.dt);
        self.last_time = Some(t);
        match gap {
            Some(true) => {
                self.axes = [Axis::new(z[0], self.cfg.r), Axis::new(z[1], self.cfg.r)];
                z
            }
            Some(false) => self.step(z),
            // first timestamped sample only anchors the clock
            None => self.step(z),
        }
    }
}

pub fn kf_init(first: [f64; 2], q: f64, r: f64, dt: f64) -> Result<Kalman2D, FilterError> {
    Kalman2D::new(first, KalmanConfig { q, r, dt })
}

pub fn kf_step(f: &mut Kalman2D, z: [f64; 2]) -> [f64; 2] {
    f.step(z)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Avg3 {
    buf: VecDeque<[f64; 2]>,
}

impl Avg3 {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    pub fn step(&mut self, z: [f64; 2]) -> [f64; 2] {
        if self.buf.len() == 3 {
            self.buf.pop_front();
        }
        self.buf.push_back(z);
        let n = self.buf.len() as f64;
        let (sx, sy) = self.buf.iter().fold((0.0, 0.0), |(a, b), p| (a + p[0], b + p[1]));
        [sx / n, sy / n]
    }
}

pub fn avg3_step(f: &mut Avg3, z: [f64; 2]) -> [f64; 2] {
    f.step(z)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum FilterKind {
    Kalman,
    Avg3,
    #[default]
    None,
}

impl std::str::FromStr for FilterKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "kalman" => Ok(Self::Kalman),
            "avg3" => Ok(Self::Avg3),
            "none" => Ok(Self::None),
            _ => Err(format!("unknown filter '{s}' (kalman, avg3, none)")),
        }
    }
}

/// One filter of the selected kind, created lazily on the first sample.
#[derive(Debug, Clone)]
pub struct PointFilter {
    kind: FilterKind,
    cfg: KalmanConfig,
    kalman: Option<Kalman2D>,
    avg: Avg3,
}

impl PointFilter {
    pub fn new(kind: FilterKind, cfg: KalmanConfig) -> Result<Self, FilterError> {
        cfg.validate()?;
        Ok(Self { kind, cfg, kalman: None, avg: Avg3::new() })
    }

    pub fn step_at(&mut self, t: f64, z: [f64; 2]) -> [f64; 2] {
        match self.kind {
            FilterKind::None => z,
            FilterKind::Avg3 => self.avg.step(z),
            FilterKind::Kalman => match &mut self.kalman {
                Some(k) => k.step_at(t, z),
                None => {
                    let mut k = Kalman2D::new(z, self.cfg).expect("validated");
                    k.last_time = Some(t);
                    self.kalman = Some(k);
                    z
                }
            },
        }
    }
}

/// Independent filters for a fixed number of 2D points.
#[derive(Debug, Clone)]
pub struct FilterBank {
    filters: Vec<PointFilter>,
}

impl FilterBank {
    pub fn new(n: usize, kind: FilterKind, cfg: KalmanConfig) -> Result<Self, FilterError> {
        let f = PointFilter::new(kind, cfg)?;
        Ok(Self { filters: vec![f; n] })
    }

    pub fn step_at(&mut self, t: f64, z: &[[f64; 2]]) -> Vec<[f64; 2]> {
        assert_eq!(z.len(), self.filters.len(), "point count changed");
        self.filters.iter_mut().zip(z).map(|(f, &p)| f.step_at(t, p)).collect()
    }
}
