//! On-screen targets for the three collection phases.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{MonitorSpec, ScreenPoint};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Target {
    pub point: ScreenPoint,
    pub on_grid: bool,
}

fn at(m: &MonitorSpec, x: f64, y: f64) -> ScreenPoint {
    ScreenPoint {
        x: m.offset_x + x,
        y: m.offset_y + y,
    }
}

/// `count` evenly spaced values covering `fraction` of `length`, centered.
fn centered_span(length: f64, fraction: f64, count: usize) -> Vec<f64> {
    let start = length * (1.0 - fraction) / 2.0;
    let step = length * fraction / (count - 1) as f64;
    (0..count).map(|i| start + i as f64 * step).collect()
}

/// The 5×4 grid spanning 4/5 of the width and 3/4 of the height.
pub fn phase1_grid(m: &MonitorSpec) -> Vec<ScreenPoint> {
    let xs = centered_span(m.w, 4.0 / 5.0, 5);
    let ys = centered_span(m.h, 3.0 / 4.0, 4);
    ys.iter().flat_map(|&y| xs.iter().map(move |&x| at(m, x, y))).collect()
}

/// 80 uniform points plus the 20 grid points, shuffled.
pub fn gen_phase1_targets(m: &MonitorSpec, seed: u64) -> Vec<Target> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: Vec<Target> = (0..80)
        .map(|_| Target {
            point: at(m, rng.random_range(0.0..m.w), rng.random_range(0.0..m.h)),
            on_grid: false,
        })
        .collect();
    out.extend(phase1_grid(m).into_iter().map(|point| Target { point, on_grid: true }));
    out.shuffle(&mut rng);
    out
}

/// Inner 4×3 grid spanning 3/4 by 2/3.
pub fn phase2_inner_grid(m: &MonitorSpec) -> Vec<ScreenPoint> {
    let xs = centered_span(m.w, 3.0 / 4.0, 4);
    let ys = centered_span(m.h, 2.0 / 3.0, 3);
    ys.iter().flat_map(|&y| xs.iter().map(move |&x| at(m, x, y))).collect()
}

/// Border of a 4×3 grid spanning 98 % of the screen: 10 points.
pub fn phase2_perimeter(m: &MonitorSpec) -> Vec<ScreenPoint> {
    let xs = centered_span(m.w, 0.98, 4);
    let ys = centered_span(m.h, 0.98, 3);
    let mut out = Vec::with_capacity(10);
    for (j, &y) in ys.iter().enumerate() {
        for (i, &x) in xs.iter().enumerate() {
            if i == 0 || i == 3 || j == 0 || j == 2 {
                out.push(at(m, x, y));
            }
        }
    }
    out
}

pub fn gen_phase2_targets(m: &MonitorSpec, seed: u64) -> Vec<Target> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: Vec<Target> = phase2_inner_grid(m)
        .into_iter()
        .chain(phase2_perimeter(m))
        .map(|point| Target { point, on_grid: true })
        .collect();
    out.shuffle(&mut rng);
    out
}

/// Seconds per revolution of the moving point.
pub const PATH_DURATION_S: f64 = 20.0;
/// Radius range as a fraction of the shorter screen side.
pub const RADIUS_FRACTION: (f64, f64) = (0.15, 0.4);
pub const PHASE3_PATHS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CirclePath {
    pub center: ScreenPoint,
    pub radius: f64,
    /// Angle at `t = 0`, radians.
    pub start_angle: f64,
    /// +1 or −1.
    pub direction: f64,
    pub duration_s: f64,
}

impl CirclePath {
    /// Point at time `t` seconds; one revolution per `duration_s`.
    pub fn sample(&self, t: f64) -> ScreenPoint {
        let a = self.start_angle + self.direction * std::f64::consts::TAU * t / self.duration_s;
        ScreenPoint {
            x: self.center.x + self.radius * a.cos(),
            y: self.center.y + self.radius * a.sin(),
        }
    }
}

/// A random circle that stays entirely on screen.
pub fn gen_phase3_path(m: &MonitorSpec, seed: u64) -> CirclePath {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    random_path(m, &mut rng)
}

pub fn gen_phase3_paths(m: &MonitorSpec, seed: u64) -> Vec<CirclePath> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..PHASE3_PATHS).map(|_| random_path(m, &mut rng)).collect()
}

fn random_path(m: &MonitorSpec, rng: &mut ChaCha8Rng) -> CirclePath {
    let short = m.w.min(m.h);
    let radius = short * rng.random_range(RADIUS_FRACTION.0..=RADIUS_FRACTION.1);
    let cx = rng.random_range(radius..=m.w - radius);
    let cy = rng.random_range(radius..=m.h - radius);
    CirclePath {
        center: at(m, cx, cy),
        radius,
        start_angle: rng.random_range(0.0..std::f64::consts::TAU),
        direction: if rng.random::<bool>() { 1.0 } else { -1.0 },
        duration_s: PATH_DURATION_S,
    }
}

/// Mouse distance (mm) above which a sample is penalized.
pub const PENALTY_THRESHOLD_MM: f64 = 4.7;
/// Accumulated penalty (mm) above which a recording is aborted.
pub const PENALTY_LIMIT_MM: f64 = 350.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltyAccountant {
    pub threshold_mm: f64,
    pub limit_mm: f64,
    pub total_mm: f64,
    pub samples: usize,
    pub aborted: bool,
}

impl Default for PenaltyAccountant {
    fn default() -> Self {
        Self {
            threshold_mm: PENALTY_THRESHOLD_MM,
            limit_mm: PENALTY_LIMIT_MM,
            total_mm: 0.0,
            samples: 0,
            aborted: false,
        }
    }
}

impl PenaltyAccountant {
    /// Adds one sample's mouse-to-point distance. Returns `true` once the
    /// recording must be aborted.
    pub fn add_mm(&mut self, distance_mm: f64) -> bool {
        self.samples += 1;
        if distance_mm > self.threshold_mm {
            self.total_mm += distance_mm;
        }
        if self.total_mm > self.limit_mm {
            self.aborted = true;
        }
        self.aborted
    }

    /// Same as [`add_mm`](Self::add_mm) with both positions in pixels.
    pub fn add(&mut self, mouse: ScreenPoint, point: ScreenPoint, m: &MonitorSpec) -> bool {
        let (sx, sy) = m.mm_per_px();
        let d = ((mouse.x - point.x) * sx).hypot((mouse.y - point.y) * sy);
        self.add_mm(d)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn uhd() -> MonitorSpec {
        MonitorSpec::new(3840.0, 2160.0, 697.0, 392.0).unwrap()
    }

    #[test]
    fn phase1_grid_extremes() {
        let m = uhd();
        let t = gen_phase1_targets(&m, 3);
        assert_eq!(t.len(), 100);
        assert_eq!(t.iter().filter(|t| t.on_grid).count(), 20);
        let g = phase1_grid(&m);
        let xmin = g.iter().map(|p| p.x).fold(f64::INFINITY, f64::min);
        let xmax = g.iter().map(|p| p.x).fold(f64::NEG_INFINITY, f64::max);
        assert_abs_diff_eq!(xmin, 384.0, epsilon = 1e-9);
        assert_abs_diff_eq!(xmax, 3456.0, epsilon = 1e-9);
        assert_eq!(gen_phase1_targets(&m, 3), t);
    }

    #[test]
    fn phase2_inner_grid_coordinates() {
        let g = phase2_inner_grid(&uhd());
        let mut xs: Vec<f64> = g.iter().map(|p| p.x).collect();
        let mut ys: Vec<f64> = g.iter().map(|p| p.y).collect();
        xs.sort_by(f64::total_cmp);
        xs.dedup_by(|a, b| (*a - *b).abs() < 1e-6);
        ys.sort_by(f64::total_cmp);
        ys.dedup_by(|a, b| (*a - *b).abs() < 1e-6);
        assert_eq!(xs.len(), 4);
        assert_eq!(ys.len(), 3);
        for (x, want) in xs.iter().zip([480.0, 1440.0, 2400.0, 3360.0]) {
            assert_abs_diff_eq!(*x, want, epsilon = 1e-9);
        }
        for (y, want) in ys.iter().zip([360.0, 1080.0, 1800.0]) {
            assert_abs_diff_eq!(*y, want, epsilon = 1e-9);
        }
        assert_eq!(phase2_perimeter(&uhd()).len(), 10);
        assert_eq!(gen_phase2_targets(&uhd(), 1).len(), 22);
    }

    #[test]
    fn constant_offset_aborts_on_71st_sample() {
        let mut p = PenaltyAccountant::default();
        for i in 1..=70 {
            assert!(!p.add_mm(5.0), "aborted early at {i}");
        }
        assert_abs_diff_eq!(p.total_mm, 350.0, epsilon = 1e-9);
        assert!(p.add_mm(5.0));
    }

    #[test]
    fn path_on_circle_and_on_screen() {
        let m = uhd();
        let c = gen_phase3_path(&m, 11);
        for k in 0..200 {
            let p = c.sample(k as f64 * 0.1);
            assert_abs_diff_eq!((p.x - c.center.x).hypot(p.y - c.center.y), c.radius, epsilon = 1e-9);
            assert!(p.x >= -1e-9 && p.x <= m.w + 1e-9 && p.y >= -1e-9 && p.y <= m.h + 1e-9);
        }
    }
}
