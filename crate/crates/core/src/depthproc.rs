//! Depth-map preprocessing: invertible histogram equalization, the
//! missing-data validity mask, synthetic hole augmentation, eye-region
//! filtering and the adversarial training losses.

use nalgebra::Point2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::Image;

/// Raw depth in millimeters; 0 marks a missing measurement.
pub type DepthMap = Image<u16>;

/// Value of missing pixels after equalization.
pub const MISSING_LEVEL: f64 = -1.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DepthError {
    #[error("equalization table is empty")]
    EmptyTable,
    #[error("mask has no valid pixels")]
    EmptyMask,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("window size must be odd and positive, got {0}")]
    EvenWindow(usize),
    #[error("score is not a number")]
    NotANumber,
    #[error("no scores given")]
    NoScores,
    #[error("sample {0} has no eye landmarks")]
    MissingLandmarks(usize),
}

/// One entry of the inverse lookup: equalized level and its source depth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelEntry {
    pub level: f64,
    pub depth: u16,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EqualizedDepth {
    pub values: Image<f64>,
    /// Sorted by strictly increasing level (and depth).
    pub table: Vec<LevelEntry>,
    /// Set when the map had no nonzero pixel.
    pub all_missing: bool,
}

/// Maps each nonzero depth to `2·CDF − 1`, with the CDF taken over nonzero
/// pixels only. Missing pixels become exactly −1.
pub fn histogram_equalize(d: &DepthMap) -> EqualizedDepth {
    let mut counts = vec![0u64; u16::MAX as usize + 1];
    for &v in d.data() {
        counts[v as usize] += 1;
    }
    let total: u64 = counts[1..].iter().sum();
    let mut level_of = vec![MISSING_LEVEL; counts.len()];
    let mut table = Vec::new();
    let mut cum = 0u64;
    for v in 1..counts.len() {
        if counts[v] == 0 {
            continue;
        }
        cum += counts[v];
        let level = 2.0 * cum as f64 / total as f64 - 1.0;
        level_of[v] = level;
        table.push(LevelEntry { level, depth: v as u16 });
    }
    EqualizedDepth {
        values: d.map(|v| level_of[v as usize]),
        table,
        all_missing: total == 0,
    }
}

/// Nearest-level inverse of [`histogram_equalize`].
pub fn undo_equalization(values: &[f64], table: &[LevelEntry]) -> Result<Vec<u16>, DepthError> {
    if table.is_empty() {
        return Err(DepthError::EmptyTable);
    }
    Ok(values.iter().map(|&v| lookup(v, table)).collect())
}

fn lookup(v: f64, table: &[LevelEntry]) -> u16 {
    let i = table.partition_point(|e| e.level < v);
    if i == 0 {
        return table[0].depth;
    }
    if i == table.len() {
        return table[i - 1].depth;
    }
    // ties go to the lower entry
    if v - table[i - 1].level <= table[i].level - v {
        table[i - 1].depth
    } else {
        table[i].depth
    }
}

fn isqrt(n: i64) -> i64 {
    let mut r = (n as f64).sqrt() as i64;
    while r * r > n {
        r -= 1;
    }
    while (r + 1) * (r + 1) <= n {
        r += 1;
    }
    r
}

/// Validity mask Ω: 1 where no pixel within Euclidean distance `radius`
/// has a value in `[sentinel − tol, sentinel + tol]`, 0 elsewhere.
pub fn compute_valid_mask(values: &Image<f64>, sentinel: f64, tol: f64, radius: usize) -> Image<u8> {
    let (w, h) = (values.width(), values.height());
    // prefix[y][x] = number of missing pixels in row y left of x
    let prefix: Vec<Vec<u32>> = (0..h)
        .map(|y| {
            let mut row = Vec::with_capacity(w + 1);
            row.push(0);
            let mut acc = 0;
            for x in 0..w {
                if (values.get(x, y, 0) - sentinel).abs() <= tol {
                    acc += 1;
                }
                row.push(acc);
            }
            row
        })
        .collect();
    let r = radius as i64;
    let spans: Vec<(i64, i64)> = (-r..=r).map(|dy| (dy, isqrt(r * r - dy * dy))).collect();
    let mut mask = Image::<u8>::filled(w, h, 1, 1);
    mask.data_mut().par_chunks_mut(w.max(1)).enumerate().for_each(|(y, row)| {
        for (x, out) in row.iter_mut().enumerate() {
            let hit = spans.iter().any(|&(dy, half)| {
                let yy = y as i64 + dy;
                if yy < 0 || yy >= h as i64 {
                    return false;
                }
                let lo = (x as i64 - half).max(0) as usize;
                let hi = ((x as i64 + half + 1).min(w as i64)) as usize;
                let p = &prefix[yy as usize];
                p[hi] > p[lo]
            });
            if hit {
                *out = 0;
            }
        }
    });
    mask
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

impl Rect {
    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x && y >= self.y && x < self.x + self.width && y < self.y + self.height
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentSpec {
    pub max_big_patches: usize,
    pub max_small_patches: usize,
    /// Inclusive side-length range in pixels.
    pub big_size: (usize, usize),
    pub small_size: (usize, usize),
    pub seed: u64,
}

impl AugmentSpec {
    /// Defaults tuned for 448 px patches, scaled linearly to `width`.
    pub fn for_width(width: usize, seed: u64) -> Self {
        let s = |v: usize| ((v * width) as f64 / 448.0).round().max(1.0) as usize;
        Self {
            max_big_patches: 1,
            max_small_patches: 10,
            big_size: (s(64), s(128)),
            small_size: (s(8), s(24)),
            seed,
        }
    }
}

/// Zeroes up to `max_big_patches` big and `max_small_patches` small random
/// rectangles. Returns the new map and the rectangles drawn.
pub fn augment_missing(d: &DepthMap, spec: &AugmentSpec) -> (DepthMap, Vec<Rect>) {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut out = d.clone();
    let mut rects = Vec::new();
    let (w, h) = (d.width(), d.height());
    if w == 0 || h == 0 {
        return (out, rects);
    }
    let n_big = rng.random_range(0..=spec.max_big_patches);
    let n_small = rng.random_range(0..=spec.max_small_patches);
    let sizes = std::iter::repeat_n(spec.big_size, n_big).chain(std::iter::repeat_n(spec.small_size, n_small));
    for (lo, hi) in sizes {
        let draw = |rng: &mut ChaCha8Rng, limit: usize| {
            let hi = hi.min(limit).max(1);
            let lo = lo.min(hi).max(1);
            rng.random_range(lo..=hi)
        };
        let rw = draw(&mut rng, w);
        let rh = draw(&mut rng, h);
        let x = rng.random_range(0..=w - rw);
        let y = rng.random_range(0..=h - rh);
        for yy in y..y + rh {
            for xx in x..x + rw {
                out.set(xx, yy, 0, 0);
            }
        }
        rects.push(Rect { x, y, width: rw, height: rh });
    }
    (out, rects)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EyeFilterParams {
    pub region_size: usize,
    pub threshold_mm: u16,
}

impl EyeFilterParams {
    /// 41 px windows for 224 px patches, 81 px for 448 px.
    pub fn for_patch(width: usize) -> Self {
        Self {
            region_size: if width <= 224 { 41 } else { 81 },
            threshold_mm: 200,
        }
    }
}

impl Default for EyeFilterParams {
    fn default() -> Self {
        Self::for_patch(448)
    }
}

fn window_min(d: &DepthMap, center: Point2<f64>, region: usize) -> u16 {
    let half = (region / 2) as i64;
    let cx = center.x.round() as i64;
    let cy = center.y.round() as i64;
    let x0 = (cx - half).max(0);
    let x1 = (cx + half).min(d.width() as i64 - 1);
    let y0 = (cy - half).max(0);
    let y1 = (cy + half).min(d.height() as i64 - 1);
    let mut m = u16::MAX;
    let mut seen = false;
    for y in y0..=y1 {
        for x in x0..=x1 {
            m = m.min(d.get(x as usize, y as usize, 0));
            seen = true;
        }
    }
    // an empty window has no valid depth either
    if seen {
        m
    } else {
        0
    }
}

/// Minimum depth in a `region`×`region` window around each eye, clipped at
/// the border. Zeros count, so a hole in the window yields 0.
pub fn eye_region_min_depth(d: &DepthMap, eyes: [Point2<f64>; 2], region: usize) -> Result<(u16, u16), DepthError> {
    if region % 2 == 0 {
        return Err(DepthError::EvenWindow(region));
    }
    Ok((window_min(d, eyes[0], region), window_min(d, eyes[1], region)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterRow {
    pub index: usize,
    pub min_right: Option<u16>,
    pub min_left: Option<u16>,
    pub kept: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterReport {
    pub kept: Vec<usize>,
    pub rows: Vec<FilterRow>,
}

/// Keeps samples whose minimum depth in both eye windows reaches the
/// threshold. `eyes[i]` is `(right, left)` for sample `i`.
pub fn filter_target_set(
    depths: &[DepthMap],
    eyes: &[Option<[Point2<f64>; 2]>],
    params: &EyeFilterParams,
) -> Result<FilterReport, DepthError> {
    if depths.len() != eyes.len() {
        return Err(DepthError::ShapeMismatch(format!(
            "{} depth maps, {} landmark sets",
            depths.len(),
            eyes.len()
        )));
    }
    if params.region_size % 2 == 0 {
        return Err(DepthError::EvenWindow(params.region_size));
    }
    let rows: Vec<FilterRow> = depths
        .par_iter()
        .zip(eyes.par_iter())
        .enumerate()
        .map(|(index, (d, e))| match e {
            None => FilterRow {
                index,
                min_right: None,
                min_left: None,
                kept: false,
                error: Some(DepthError::MissingLandmarks(index).to_string()),
            },
            Some(e) => {
                let (r, l) = eye_region_min_depth(d, *e, params.region_size).expect("odd window checked");
                FilterRow {
                    index,
                    min_right: Some(r),
                    min_left: Some(l),
                    kept: r >= params.threshold_mm && l >= params.threshold_mm,
                    error: None,
                }
            }
        })
        .collect();
    let kept = rows.iter().filter(|r| r.kept).map(|r| r.index).collect();
    Ok(FilterReport { kept, rows })
}

/// Mean absolute error over pixels where `mask` is nonzero.
pub fn masked_l1_loss(pred: &Image<f64>, target: &Image<f64>, mask: &Image<u8>) -> Result<f64, DepthError> {
    let dims = |i: (usize, usize, usize)| format!("{}x{}x{}", i.0, i.1, i.2);
    let shape = |w: usize, h: usize, c: usize| (w, h, c);
    let p = shape(pred.width(), pred.height(), pred.channels());
    let t = shape(target.width(), target.height(), target.channels());
    let m = shape(mask.width(), mask.height(), mask.channels());
    if p != t || p != m {
        return Err(DepthError::ShapeMismatch(format!(
            "pred {}, target {}, mask {}",
            dims(p),
            dims(t),
            dims(m)
        )));
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for ((a, b), &k) in pred.data().iter().zip(target.data()).zip(mask.data()) {
        if k != 0 {
            sum += (a - b).abs();
            n += 1;
        }
    }
    if n == 0 {
        return Err(DepthError::EmptyMask);
    }
    Ok(sum / n as f64)
}

pub const SCORE_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GanLosses {
    /// `mean log D(real) + mean log(1 − D(fake))`, to be maximized by the
    /// discriminator.
    pub discriminator: f64,
    /// `−mean log D(fake)`, minimized by the generator.
    pub generator_adv: f64,
    /// Some score lay outside `[1e-7, 1 − 1e-7]` and was clamped.
    pub clamped: bool,
}

pub fn gan_losses(d_real: &[f64], d_fake: &[f64]) -> Result<GanLosses, DepthError> {
    if d_real.is_empty() || d_fake.is_empty() {
        return Err(DepthError::NoScores);
    }
    let mut clamped = false;
    let mut clamp = |s: f64| -> Result<f64, DepthError> {
        if s.is_nan() {
            return Err(DepthError::NotANumber);
        }
        let c = s.clamp(SCORE_CLAMP, 1.0 - SCORE_CLAMP);
        if c != s {
            clamped = true;
        }
        Ok(c)
    };
    let mut real_log = 0.0;
    for &s in d_real {
        real_log += clamp(s)?.ln();
    }
    let mut fake_inv_log = 0.0;
    let mut fake_log = 0.0;
    for &s in d_fake {
        let c = clamp(s)?;
        fake_inv_log += (1.0 - c).ln();
        fake_log += c.ln();
    }
    let nr = d_real.len() as f64;
    let nf = d_fake.len() as f64;
    Ok(GanLosses {
        discriminator: real_log / nr + fake_inv_log / nf,
        generator_adv: -fake_log / nf,
        clamped,
    })
}

/// `size`×`size` un-equalized depth values (mm) around each eye, right eye
/// first. Window pixels past the border repeat the edge pixel.
pub fn extract_depth_patches(eq: &EqualizedDepth, eyes: [Point2<f64>; 2], size: usize) -> Result<Vec<f64>, DepthError> {
    if size % 2 == 0 {
        return Err(DepthError::EvenWindow(size));
    }
    if eq.table.is_empty() {
        return Err(DepthError::EmptyTable);
    }
    let (w, h) = (eq.values.width() as i64, eq.values.height() as i64);
    if w == 0 || h == 0 {
        return Err(DepthError::ShapeMismatch("empty depth image".into()));
    }
    let half = (size / 2) as i64;
    let mut out = Vec::with_capacity(2 * size * size);
    for e in eyes {
        let cx = e.x.round() as i64;
        let cy = e.y.round() as i64;
        for dy in -half..=half {
            for dx in -half..=half {
                let x = (cx + dx).clamp(0, w - 1) as usize;
                let y = (cy + dy).clamp(0, h - 1) as usize;
                out.push(lookup(eq.values.get(x, y, 0), &eq.table) as f64);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn all_missing_flagged() {
        let eq = histogram_equalize(&DepthMap::new(5, 4, 1));
        assert!(eq.all_missing);
        assert!(eq.table.is_empty());
        assert!(eq.values.data().iter().all(|&v| v == -1.0));
        assert_eq!(undo_equalization(&[0.0], &eq.table), Err(DepthError::EmptyTable));
    }

    #[test]
    fn two_value_levels() {
        let d = DepthMap::from_vec(4, 1, 1, vec![1000, 2000, 2000, 2000]);
        let eq = histogram_equalize(&d);
        assert_eq!(eq.values.data(), &[-0.5, 1.0, 1.0, 1.0]);
        assert_eq!(undo_equalization(&[1.0], &eq.table).unwrap(), vec![2000]);
        assert_eq!(undo_equalization(&[-0.5, -0.9], &eq.table).unwrap(), vec![1000, 1000]);
    }

    #[test]
    fn mask_zero_radius_marks_missing_only() {
        let mut v = Image::<f64>::filled(6, 6, 1, 0.3);
        v.set(2, 3, 0, -1.0);
        v.set(5, 0, 0, -0.995);
        let m = compute_valid_mask(&v, -1.0, 0.01, 0);
        let zeros: Vec<_> = (0..36).filter(|i| m.data()[*i] == 0).collect();
        assert_eq!(zeros, vec![5, 3 * 6 + 2]);
        let full = compute_valid_mask(&Image::<f64>::filled(6, 6, 1, 0.0), -1.0, 0.01, 12);
        assert!(full.data().iter().all(|&b| b == 1));
    }

    #[test]
    fn mask_disc_around_single_hole() {
        let mut v = Image::<f64>::filled(48, 48, 1, 0.5);
        v.set(20, 20, 0, -1.0);
        let m = compute_valid_mask(&v, -1.0, 0.01, 12);
        for y in 0..48i64 {
            for x in 0..48i64 {
                let inside = (x - 20).pow(2) + (y - 20).pow(2) <= 144;
                assert_eq!(m.get(x as usize, y as usize, 0) == 0, inside, "({x},{y})");
            }
        }
    }

    #[test]
    fn augment_determinism_and_bounds() {
        let d = DepthMap::filled(64, 48, 1, 700);
        let spec = AugmentSpec::for_width(64, 42);
        let (a, ra) = augment_missing(&d, &spec);
        let (b, rb) = augment_missing(&d, &spec);
        assert_eq!(a, b);
        assert_eq!(ra, rb);
        for y in 0..48 {
            for x in 0..64 {
                let changed = a.get(x, y, 0) != 700;
                let covered = ra.iter().any(|r| r.contains(x, y));
                assert_eq!(changed, covered);
                if changed {
                    assert_eq!(a.get(x, y, 0), 0);
                }
            }
        }
        let none = AugmentSpec { max_big_patches: 0, max_small_patches: 0, ..spec };
        assert_eq!(augment_missing(&d, &none).0, d);
    }

    #[test]
    fn eye_windows() {
        let mut d = DepthMap::filled(100, 100, 1, 500);
        let eyes = [Point2::new(30.0, 50.0), Point2::new(70.0, 50.0)];
        assert_eq!(eye_region_min_depth(&d, eyes, 21).unwrap(), (500, 500));
        d.set(35, 55, 0, 0);
        assert_eq!(eye_region_min_depth(&d, eyes, 21).unwrap(), (0, 500));
        assert_eq!(eye_region_min_depth(&d, eyes, 20), Err(DepthError::EvenWindow(20)));
    }

    #[test]
    fn filter_drops_close_eyes() {
        let ok = DepthMap::filled(100, 100, 1, 500);
        let mut near = ok.clone();
        near.set(70, 50, 0, 150);
        let eyes = Some([Point2::new(30.0, 50.0), Point2::new(70.0, 50.0)]);
        let p = EyeFilterParams { region_size: 41, threshold_mm: 200 };
        let rep = filter_target_set(&[ok.clone(), near, ok], &[eyes, eyes, None], &p).unwrap();
        assert_eq!(rep.kept, vec![0]);
        assert!(rep.rows[2].error.is_some());
        assert_eq!(rep.rows[1].min_left, Some(150));
    }

    #[test]
    fn l1_loss_cases() {
        let t = Image::<f64>::filled(4, 2, 1, 1.0);
        let mut p = t.clone();
        let all = Image::<u8>::filled(4, 2, 1, 1);
        assert_eq!(masked_l1_loss(&p, &t, &all).unwrap(), 0.0);
        for x in 0..4 {
            p.set(x, 0, 0, 1.2);
        }
        assert_abs_diff_eq!(masked_l1_loss(&p, &t, &all).unwrap(), 0.1, epsilon = 1e-12);
        let none = Image::<u8>::new(4, 2, 1);
        assert_eq!(masked_l1_loss(&p, &t, &none), Err(DepthError::EmptyMask));
    }

    #[test]
    fn gan_loss_values() {
        let l = gan_losses(&[0.5, 0.5], &[0.5]).unwrap();
        assert_abs_diff_eq!(l.discriminator, 2.0 * 0.5f64.ln(), epsilon = 1e-15);
        assert_abs_diff_eq!(l.discriminator, -1.38629, epsilon = 1e-5);
        assert_abs_diff_eq!(l.generator_adv, std::f64::consts::LN_2, epsilon = 1e-5);
        assert!(!l.clamped);
        let perfect = gan_losses(&[1.0 - 1e-6], &[1e-6]).unwrap();
        assert!(perfect.discriminator < 0.0 && perfect.discriminator > -1e-5);
        assert!(gan_losses(&[1.0], &[0.5]).unwrap().clamped);
        assert_eq!(gan_losses(&[f64::NAN], &[0.5]), Err(DepthError::NotANumber));
    }

    #[test]
    fn patches_from_constant_map() {
        let eq = histogram_equalize(&DepthMap::filled(30, 30, 1, 640));
        let eyes = [Point2::new(10.0, 10.0), Point2::new(20.0, 10.0)];
        let v = extract_depth_patches(&eq, eyes, 5).unwrap();
        assert_eq!(v, vec![640.0; 50]);
        let mut d = DepthMap::filled(30, 30, 1, 640);
        d.set(10, 10, 0, 600);
        d.set(20, 10, 0, 700);
        let eq = histogram_equalize(&d);
        assert_eq!(extract_depth_patches(&eq, eyes, 1).unwrap(), vec![600.0, 700.0]);
    }
}
