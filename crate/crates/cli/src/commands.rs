use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use gaze_core::camera::Intrinsics;
use gaze_core::dataset::protocol::{gen_phase1_targets, gen_phase2_targets, gen_phase3_paths};
use gaze_core::dataset::synth::{synthetic_subject, SynthConfig};
use gaze_core::dataset::{read_subject_any, split, write_subject, Schema, SubjectFile};
use gaze_core::depthproc::{augment_missing, compute_valid_mask, filter_target_set, histogram_equalize, AugmentSpec, EyeFilterParams};
use gaze_core::fusion::io::{Container, KIND_MLP, KIND_TRANSFORMER};
use gaze_core::fusion::optim::grad_check as check_gradients;
use gaze_core::fusion::train::{fit_toy as train_toy, planted_linear_dataset, FitConfig};
use gaze_core::fusion::{FusionParams, MlpParams};
use gaze_core::geometry::{GazeAngles, MonitorSpec};
use gaze_core::image::Image;
use gaze_core::mirrorcal::{solve_extrinsics, BoardSpec, MirrorError, ObservationFile};
use gaze_core::normalization::{crop_eyes, normalize_face, warp_image, Landmarks5};
use gaze_core::pipeline::{distance_heatmap, evaluate, replay as replay_rows, GazeModel, Predictor, ReplayConfig, ReplayRow, StubConfig};
use gaze_core::subjectcal::{estimate_bias_ls, estimate_offset_only, BiasRecord, CalSample};

use crate::config::Config;
use crate::{
    CalibrateExtrinsicsArgs, CalibrateSubjectArgs, DepthPrepArgs, EvalArgs, ExportPatchesArgs, FitToyArgs, GradCheckArgs,
    InitModelArgs, NormalizeArgs, ProtocolArgs, ReplayArgs, SynthArgs, VerificationFailed,
};

/// Writes to `path`, or stdout when `None`.
fn emit(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn emit_json(path: Option<&Path>, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    emit(path, &text)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn load_subject(path: &Path) -> Result<SubjectFile> {
    read_subject_any(path).with_context(|| format!("reading {}", path.display()))
}

pub fn calibrate_extrinsics(a: &CalibrateExtrinsicsArgs) -> Result<()> {
    let obs: ObservationFile = read_json(&a.observations)?;
    let Some(monitor) = obs.monitor else {
        bail!("{} has no monitor entry", a.observations.display());
    };
    let board: BoardSpec = obs.board.into();
    let (fit, converged) = match solve_extrinsics(&obs.images, &obs.intrinsics, &board, &monitor) {
        Ok(fit) => (fit, true),
        Err(MirrorError::NoConvergence(fit)) => (*fit, false),
        Err(e) => return Err(e.into()),
    };
    #[derive(Serialize)]
    struct Out<'a> {
        extrinsics: [[f64; 4]; 3],
        planes: &'a [gaze_core::mirrorcal::MirrorPlane],
        rms_px: f64,
        iterations: usize,
        converged: bool,
    }
    emit_json(
        a.out.as_deref(),
        &Out {
            extrinsics: fit.extrinsics.rows_3x4(),
            planes: &fit.planes,
            rms_px: fit.rms_px,
            iterations: fit.iterations,
            converged,
        },
    )?;
    if !converged {
        return Err(VerificationFailed(format!("solver did not converge, rms {} px", fit.rms_px)).into());
    }
    Ok(())
}

fn read_rows(path: &Path) -> Result<Vec<ReplayRow>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let rows = r
        .deserialize()
        .collect::<Result<Vec<ReplayRow>, _>>()
        .with_context(|| format!("parsing {}", path.display()))?;
    ensure!(!rows.is_empty(), "{} has no rows", path.display());
    Ok(rows)
}

pub fn calibrate_subject(a: &CalibrateSubjectArgs) -> Result<()> {
    let rows = read_rows(&a.replay)?;
    let samples: Vec<CalSample> = rows
        .iter()
        .filter(|r| a.phase.is_none_or(|p| r.phase == p))
        .filter(|r| r.raw_pitch.is_finite() && r.raw_yaw.is_finite())
        .map(|r| CalSample {
            predicted: GazeAngles::new(r.raw_pitch, r.raw_yaw),
            truth: GazeAngles::new(r.gt_pitch, r.gt_yaw),
        })
        .collect();
    let fit = if a.offset_only {
        estimate_offset_only(&samples)?
    } else {
        estimate_bias_ls(&samples)?
    };
    let record: BiasRecord = fit.to_record(&a.subject);
    emit_json(a.out.as_deref(), &record)
}

#[derive(Serialize)]
struct DepthRow {
    index: usize,
    missing_fraction: f64,
    valid_fraction: f64,
    min_right: Option<u16>,
    min_left: Option<u16>,
    kept: bool,
}

pub fn depth_prep(a: &DepthPrepArgs, cfg: &Config) -> Result<()> {
    let mut f = load_subject(&a.input)?;
    let schema = f.schema();
    let d = &cfg.depth;
    let maps: Vec<_> = (0..f.len()).map(|i| f.face_depth_map(i)).collect();
    let masks: Vec<(f64, f64)> = maps.iter().map(|m| {
        let eq = histogram_equalize(m);
        let mask = compute_valid_mask(&eq.values, d.missing_level, d.missing_tolerance, d.mask_radius);
        let n = m.data().len().max(1) as f64;
        let missing = m.data().iter().filter(|&&v| v == 0).count() as f64 / n;
        let valid = mask.data().iter().filter(|&&v| v != 0).count() as f64 / n;
        (missing, valid)
    }).collect();
    let eyes: Vec<_> = (0..f.len())
        .map(|i| {
            let l = f.landmarks_of(i);
            Some([l[0], l[1]])
        })
        .collect();
    let params = d.eye_filter.unwrap_or_else(|| EyeFilterParams::for_patch(schema.face_size));
    // keep the window odd and inside small patches
    let params = EyeFilterParams {
        region_size: params.region_size.min(schema.face_size | 1),
        ..params
    };
    let report = filter_target_set(&maps, &eyes, &params)?;
    let rows: Vec<DepthRow> = report
        .rows
        .iter()
        .zip(&masks)
        .map(|(r, &(missing, valid))| DepthRow {
            index: r.index,
            missing_fraction: missing,
            valid_fraction: valid,
            min_right: r.min_right,
            min_left: r.min_left,
            kept: r.kept,
        })
        .collect();
    #[derive(Serialize)]
    struct Out {
        samples: usize,
        kept: usize,
        mask_radius: usize,
        eye_filter: EyeFilterParams,
        rows: Vec<DepthRow>,
    }
    if let Some(path) = &a.augment {
        for (i, m) in maps.iter().enumerate() {
            let spec = AugmentSpec::for_width(schema.face_size, a.seed.wrapping_add(i as u64));
            let (aug, _) = augment_missing(m, &spec);
            f.set_face_depth(i, &aug);
        }
        write_subject(path, &f).with_context(|| format!("writing {}", path.display()))?;
    }
    emit_json(
        a.report.as_deref(),
        &Out {
            samples: f.len(),
            kept: report.kept.len(),
            mask_radius: d.mask_radius,
            eye_filter: params,
            rows,
        },
    )
}

pub fn grad_check(a: &GradCheckArgs, cfg: &Config) -> Result<()> {
    let (hp, mlp) = a.shape.resolve(&cfg.hyper);
    hp.validate()?;
    let batch = planted_linear_dataset(&hp, a.batch.max(1), 0.5, a.seed.wrapping_add(1));
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let report = if mlp {
        check_gradients(&MlpParams::random(&hp, &mut rng)?, &batch, None, a.eps)?
    } else {
        check_gradients(&FusionParams::random(&hp, &mut rng)?, &batch, None, a.eps)?
    };
    emit_json(None, &report)?;
    if !report.passed(a.tolerance) {
        return Err(VerificationFailed(format!(
            "max relative error {} in {} exceeds {}",
            report.max_relative_error, report.worst_tensor, a.tolerance
        ))
        .into());
    }
    Ok(())
}

pub fn fit_toy(a: &FitToyArgs, cfg: &Config) -> Result<()> {
    let (hp, mlp) = a.shape.resolve(&cfg.hyper);
    hp.validate()?;
    let data = planted_linear_dataset(&hp, a.samples, a.scale, a.seed.wrapping_add(100));
    let fc = FitConfig {
        epochs: a.epochs,
        lr: a.lr,
        lr_decay: a.lr_decay,
        batch_size: a.batch,
        seed: a.seed,
        ..FitConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let (trace, final_mse, container) = if mlp {
        let r = train_toy(MlpParams::random(&hp, &mut rng)?, &data, &fc)?;
        (r.trace, r.final_mse, Container::from_params(KIND_MLP, hp, &r.params))
    } else {
        let r = train_toy(FusionParams::random(&hp, &mut rng)?, &data, &fc)?;
        (r.trace, r.final_mse, Container::from_params(KIND_TRANSFORMER, hp, &r.params))
    };
    if let Some(p) = &a.out {
        container.save(p).with_context(|| format!("writing {}", p.display()))?;
    }
    if let Some(p) = &a.loss_csv {
        let mut w = csv::Writer::from_path(p)?;
        w.write_record(["epoch", "mse"])?;
        for (e, l) in trace.iter().enumerate() {
            w.write_record([(e + 1).to_string(), l.to_string()])?;
        }
        w.flush()?;
    }
    println!("{}", serde_json::json!({ "epochs": trace.len(), "final_mse": final_mse }));
    if let Some(limit) = a.require_mse {
        if !(final_mse < limit) {
            return Err(VerificationFailed(format!("final MSE {final_mse} not below {limit}")).into());
        }
    }
    Ok(())
}

pub fn init_model(a: &InitModelArgs, cfg: &Config) -> Result<()> {
    let (hp, mlp) = a.shape.resolve(&cfg.hyper);
    let model = GazeModel::random(if mlp { KIND_MLP } else { KIND_TRANSFORMER }, &hp, a.seed)?;
    model
        .to_container()
        .save(&a.out)
        .with_context(|| format!("writing {}", a.out.display()))?;
    Ok(())
}

pub fn replay(a: &ReplayArgs, cfg: &Config) -> Result<()> {
    let model_path = a.model.as_ref().or(cfg.paths.params.as_ref());
    let predictor = match (a.stub, model_path) {
        (true, _) => Predictor::Stub(StubConfig {
            noise_deg: a.noise_deg,
            offset_pitch_deg: a.offset_pitch_deg,
            offset_yaw_deg: a.offset_yaw_deg,
            seed: a.seed,
        }),
        (false, Some(p)) => {
            ensure!(p.exists(), "model file {} does not exist", p.display());
            Predictor::Model(Box::new(GazeModel::load(p).with_context(|| format!("loading {}", p.display()))?))
        }
        (false, None) => bail!("give --model or --stub"),
    };
    let bias = match &a.bias {
        Some(p) => read_json::<BiasRecord>(p)?.bias(),
        None => Default::default(),
    };
    let f = load_subject(&a.input)?;
    let rc = ReplayConfig {
        bias,
        filter: a.filter.unwrap_or(cfg.filter),
        kalman: cfg.kalman,
        frame_dt: a.frame_dt,
    };
    let rows = replay_rows(&f, &predictor, &rc)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in &rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| anyhow::anyhow!("{e}"))?;
    emit(a.out.as_deref(), std::str::from_utf8(&bytes)?)?;
    let failed = rows.iter().filter(|r| !r.is_ok()).count();
    if failed > 0 {
        eprintln!("{failed} of {} samples failed", rows.len());
    }
    Ok(())
}

fn parse_pair<T: std::str::FromStr>(s: &str, what: &str) -> Result<(T, T)> {
    let (a, b) = s
        .split_once(['x', 'X'])
        .with_context(|| format!("{what} must look like AxB, got {s}"))?;
    let p = |v: &str| v.trim().parse::<T>().ok().with_context(|| format!("bad {what} {s}"));
    Ok((p(a)?, p(b)?))
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    let rows = read_rows(&a.input)?;
    let summary = evaluate(&rows).context("no successfully replayed rows")?;
    if let Some(path) = &a.heatmap {
        let bins: (usize, usize) = parse_pair(&a.bins, "--bins")?;
        let extent = match &a.extent {
            Some(e) => parse_pair(e, "--extent")?,
            None => rows
                .iter()
                .fold((0.0f64, 0.0f64), |(w, h), r| (w.max(r.gt_x), h.max(r.gt_y))),
        };
        ensure!(extent.0 > 0.0 && extent.1 > 0.0, "empty heatmap extent {extent:?}");
        emit(Some(path), &distance_heatmap(&rows, bins, extent).to_csv())?;
    }
    emit_json(a.out.as_deref(), &summary)
}

pub fn protocol(a: &ProtocolArgs) -> Result<()> {
    let m = &a.monitor;
    let monitor = MonitorSpec::new(m.width_px, m.height_px, m.width_mm, m.height_mm)?;
    let value = match a.phase {
        1 => serde_json::to_value(gen_phase1_targets(&monitor, a.seed))?,
        2 => serde_json::to_value(gen_phase2_targets(&monitor, a.seed))?,
        3 => serde_json::to_value(gen_phase3_paths(&monitor, a.seed))?,
        p => bail!("phase must be 1, 2 or 3, got {p}"),
    };
    emit_json(
        a.out.as_deref(),
        &serde_json::json!({ "phase": a.phase, "seed": a.seed, "monitor": monitor, "targets": value }),
    )
}

pub fn splits() -> Result<()> {
    emit_json(None, &split::tables_json())
}

pub fn synth(a: &SynthArgs) -> Result<()> {
    ensure!(a.samples > 0, "need at least one sample");
    ensure!(a.eye_size > 0 && a.eye_size <= a.face_size, "eye size must be in 1..=face size");
    let f = synthetic_subject(&SynthConfig {
        samples: a.samples,
        sessions: a.sessions,
        schema: Schema {
            face_size: a.face_size,
            eye_size: a.eye_size,
        },
        seed: a.seed,
        images: true,
    });
    write_subject(&a.out, &f).with_context(|| format!("writing {}", a.out.display()))?;
    Ok(())
}

#[derive(serde::Deserialize)]
struct NormalizeInput {
    intrinsics: Intrinsics,
    landmarks: [[f64; 2]; 5],
    #[serde(default)]
    image: Option<std::path::PathBuf>,
}

fn load_rgb(path: &Path) -> Result<Image<u8>> {
    let img = image::open(path).with_context(|| format!("reading {}", path.display()))?.to_rgb8();
    let (w, h) = img.dimensions();
    Ok(Image::from_vec(w as usize, h as usize, 3, img.into_raw()))
}

fn save_rgb(img: &Image<u8>, path: &Path) -> Result<()> {
    let buf = image::RgbImage::from_raw(img.width() as u32, img.height() as u32, img.data().to_vec())
        .context("image buffer size")?;
    buf.save(path).with_context(|| format!("writing {}", path.display()))
}

fn save_depth(img: &Image<u16>, path: &Path) -> Result<()> {
    let buf = image::ImageBuffer::<image::Luma<u16>, _>::from_raw(img.width() as u32, img.height() as u32, img.data().to_vec())
        .context("image buffer size")?;
    buf.save(path).with_context(|| format!("writing {}", path.display()))
}

pub fn normalize(a: &NormalizeArgs, cfg: &Config) -> Result<()> {
    let input: NormalizeInput = read_json(&a.input)?;
    input.intrinsics.validate()?;
    let landmarks = Landmarks5::from_array(input.landmarks);
    let n = normalize_face(&landmarks, &cfg.face_model()?, &input.intrinsics, &cfg.norm)?;
    if let Some(out) = &a.patch {
        let Some(src) = &input.image else {
            bail!("--patch needs an image path in {}", a.input.display());
        };
        let src = if src.is_relative() {
            a.input.parent().unwrap_or(Path::new(".")).join(src)
        } else {
            src.clone()
        };
        let img = load_rgb(&src)?;
        let size = cfg.norm.face_patch;
        let patch = warp_image(&img, &n.warp, size, size)?;
        save_rgb(&patch, out)?;
        let eyes = crop_eyes(&patch, &n.landmarks, &cfg.norm);
        let stem = out.with_extension("");
        save_rgb(&eyes.right, &stem.with_file_name(format!("{}_right_eye.png", file_stem(&stem))))?;
        save_rgb(&eyes.left, &stem.with_file_name(format!("{}_left_eye.png", file_stem(&stem))))?;
    }
    let mat = |m: &gaze_core::geometry::Mat3| -> [[f64; 3]; 3] { std::array::from_fn(|r| std::array::from_fn(|c| m[(r, c)])) };
    emit_json(
        a.out.as_deref(),
        &serde_json::json!({
            "face_center": [n.face_center.x, n.face_center.y, n.face_center.z],
            "rotation": mat(&n.rotation),
            "scale": n.scale,
            "warp": mat(&n.warp),
            "landmarks": n.landmarks.to_array(),
            "head_rotation": n.head_rotation,
        }),
    )
}

fn file_stem(p: &Path) -> String {
    p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

pub fn export_patches(a: &ExportPatchesArgs) -> Result<()> {
    let f = load_subject(&a.input)?;
    let picks: Vec<usize> = if a.samples.is_empty() { (0..f.len()).collect() } else { a.samples.clone() };
    if let Some(bad) = picks.iter().find(|&&i| i >= f.len()) {
        bail!("sample {bad} out of range, file has {}", f.len());
    }
    fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    for &i in &picks {
        let name = |what: &str| a.out_dir.join(format!("{i:06}_{what}.png"));
        save_rgb(&f.face_color_image(i), &name("face"))?;
        save_depth(&f.face_depth_map(i), &name("face_depth"))?;
        let (r, l) = f.eye_color_images(i);
        save_rgb(&r, &name("right_eye"))?;
        save_rgb(&l, &name("left_eye"))?;
        let (rd, ld) = f.eye_depth_maps(i);
        save_depth(&rd, &name("right_eye_depth"))?;
        save_depth(&ld, &name("left_eye_depth"))?;
    }
    Ok(())
}
