//! Evaluation: per-scale metric reports, image rendering, a camera-path
//! renderer, and the ablation driver.

use std::io::Write as _;
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::camera::Camera;
use crate::dataset::MultiscaleDataset;
use crate::field::PyramidField;
use crate::imagebuf::ImageBuf;
use crate::math::{fnv1a64, Real, Vec3};
use crate::metrics::{avg_error, psnr, ssim};
use crate::pyramid::{EvalMode, LevelSelection, SupervisionGrid};
use crate::render::{render_ray, RayWorkspace, RenderOptions};
use crate::sampling::OccupancyGrid;
use crate::train::{load_checkpoint, TrainConfig, TrainState};
use crate::Error;

#[derive(Clone, Debug)]
pub struct ScaleRow {
    /// Scale divisor (1 = full resolution).
    pub scale: u32,
    pub psnr: f64,
    pub ssim: f64,
    pub avg_error: f64,
}

/// Per-scale metrics plus the aggregate row (column means, the
/// appendix-table convention). `avg_error` is the 2-term geometric mean
/// (`avg_error_2`) since LPIPS is out of scope.
#[derive(Clone, Debug)]
pub struct MetricsReport {
    pub rows: Vec<ScaleRow>,
    pub aggregate: ScaleRow,
    pub train_seconds: f64,
    pub config_fingerprint: String,
}

fn fmt_metric(v: f64) -> String {
    if v.is_infinite() {
        "inf".to_string()
    } else {
        format!("{v:.6}")
    }
}

impl MetricsReport {
    pub fn from_rows(rows: Vec<ScaleRow>, train_seconds: f64, fingerprint: String) -> Self {
        let n = rows.len().max(1) as f64;
        let aggregate = ScaleRow {
            scale: 0,
            psnr: rows.iter().map(|r| r.psnr).sum::<f64>() / n,
            ssim: rows.iter().map(|r| r.ssim).sum::<f64>() / n,
            avg_error: rows.iter().map(|r| r.avg_error).sum::<f64>() / n,
        };
        Self { rows, aggregate, train_seconds, config_fingerprint: fingerprint }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("scale,psnr,ssim,avg_error_2\n");
        for r in &self.rows {
            out.push_str(&format!(
                "1/{},{},{},{}\n",
                r.scale,
                fmt_metric(r.psnr),
                fmt_metric(r.ssim),
                fmt_metric(r.avg_error)
            ));
        }
        out.push_str(&format!(
            "aggregate,{},{},{}\n",
            fmt_metric(self.aggregate.psnr),
            fmt_metric(self.aggregate.ssim),
            fmt_metric(self.aggregate.avg_error)
        ));
        out
    }

    pub fn to_json(&self) -> serde_json::Value {
        let row_json = |r: &ScaleRow| {
            serde_json::json!({
                "scale": r.scale,
                "psnr": if r.psnr.is_finite() {
                    serde_json::json!(r.psnr)
                } else {
                    serde_json::json!("inf")
                },
                "ssim": r.ssim,
                "avg_error_2": r.avg_error,
            })
        };
        serde_json::json!({
            "rows": self.rows.iter().map(row_json).collect::<Vec<_>>(),
            "aggregate": row_json(&self.aggregate),
            "train_seconds": self.train_seconds,
            "config_fingerprint": self.config_fingerprint,
        })
    }

    pub fn write(&self, out_dir: &Path) -> Result<(), Error> {
        std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
        let csv = out_dir.join("report.csv");
        std::fs::write(&csv, self.to_csv()).map_err(|e| Error::io(&csv, e))?;
        let json = out_dir.join("report.json");
        std::fs::write(&json, serde_json::to_string_pretty(&self.to_json()).expect("report json"))
            .map_err(|e| Error::io(&json, e))?;
        Ok(())
    }

    pub fn row_for_scale(&self, scale: u32) -> Option<&ScaleRow> {
        self.rows.iter().find(|r| r.scale == scale)
    }
}

/// Fingerprint of the configuration trio, for report provenance.
pub fn config_fingerprint(
    grid: &crate::field::hashgrid::HashGridConfig,
    pyramid: &crate::pyramid::PyramidConfig,
    train: &TrainConfig,
) -> String {
    let blob = serde_json::json!({ "grid": grid, "pyramid": pyramid, "train": train });
    format!("{:016x}", fnv1a64(blob.to_string().as_bytes()))
}

/// Render a full image through the field; rows render in parallel with
/// per-row rngs derived from the image seed, so results are deterministic.
pub fn render_image<F: Real>(
    field: &PyramidField<F>,
    camera: &Camera<F>,
    samples_per_ray: usize,
    occupancy: Option<&OccupancyGrid>,
    clamp_to: Option<&SupervisionGrid>,
    seed: u64,
) -> Result<ImageBuf<F>, Error> {
    camera.validate()?;
    let bounds = field.bounds_as::<F>();
    let mut img = ImageBuf::new(camera.width, camera.height);
    let rows: Vec<Result<Vec<[F; 3]>, Error>> = (0..camera.height)
        .into_par_iter()
        .map(|y| {
            use rand::SeedableRng;
            let mut rng = ChaCha8Rng::seed_from_u64(fnv1a64(
                &[&seed.to_le_bytes()[..], &(y as u64).to_le_bytes()].concat(),
            ));
            let mut ws = RayWorkspace::new();
            let opts = RenderOptions {
                samples_per_ray,
                occupancy,
                clamp_to,
                record_to: None,
                bucketed: true,
                background: crate::white_background(),
            };
            let mut row = Vec::with_capacity(camera.width);
            for x in 0..camera.width {
                let ray = camera.ray_for_pixel(x, y);
                let ray = match ray.clipped_to(&bounds) {
                    Some(r) => r,
                    None => {
                        row.push(opts.background);
                        continue;
                    }
                };
                let out = render_ray(field, &ray, &opts, &mut rng, &mut ws)?;
                row.push(out.color);
            }
            Ok(row)
        })
        .collect();
    for (y, row) in rows.into_iter().enumerate() {
        let row = row?;
        for (x, c) in row.into_iter().enumerate() {
            img.set_pixel(x, y, c);
        }
    }
    Ok(img)
}

/// Count of supervision-clamped samples in a render; used by tests and the
/// zoom-in diagnostics.
pub fn render_image_counting_clamps<F: Real>(
    field: &PyramidField<F>,
    camera: &Camera<F>,
    samples_per_ray: usize,
    occupancy: Option<&OccupancyGrid>,
    clamp_to: Option<&SupervisionGrid>,
    seed: u64,
) -> Result<(ImageBuf<F>, u64), Error> {
    camera.validate()?;
    let bounds = field.bounds_as::<F>();
    let mut img = ImageBuf::new(camera.width, camera.height);
    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ws = RayWorkspace::new();
    let mut clamped = 0u64;
    let opts = RenderOptions {
        samples_per_ray,
        occupancy,
        clamp_to,
        record_to: None,
        bucketed: true,
        background: crate::white_background(),
    };
    for y in 0..camera.height {
        for x in 0..camera.width {
            let ray = camera.ray_for_pixel(x, y);
            let ray = match ray.clipped_to(&bounds) {
                Some(r) => r,
                None => {
                    img.set_pixel(x, y, opts.background);
                    continue;
                }
            };
            let out = render_ray(field, &ray, &opts, &mut rng, &mut ws)?;
            clamped += out.clamped as u64;
            img.set_pixel(x, y, out.color);
        }
    }
    Ok((img, clamped))
}

/// Render every test image at its native scale with supervision-clamped
/// queries, write per-scale tables and side-by-side PNGs, and return the
/// report.
pub fn evaluate<F: Real>(
    state: &TrainState<F>,
    dataset: &MultiscaleDataset,
    out_dir: Option<&Path>,
) -> Result<MetricsReport, Error> {
    // Compatibility: the checkpoint's scene bounds must match the dataset.
    let cb = state.field.bounds();
    let db = dataset.manifest.bounds_aabb();
    if (cb.min - db.min).norm() > 1e-9 || (cb.max - db.max).norm() > 1e-9 {
        return Err(Error::Incompatible {
            field: "bounds",
            detail: format!("checkpoint {cb:?} vs dataset {db:?}"),
        });
    }

    let mut rows = Vec::new();
    for &scale in &dataset.manifest.scales {
        let entries: Vec<_> =
            dataset.manifest.test.iter().filter(|e| e.scale == scale).collect();
        if entries.is_empty() {
            continue;
        }
        let mut mse_psnr = Vec::new();
        let mut ssims = Vec::new();
        for entry in entries {
            let gt = dataset.load_image(entry)?;
            let cam: Camera<F> = entry.camera().cast();
            let seed = fnv1a64(
                &[
                    &entry.camera_index.to_le_bytes()[..],
                    &entry.scale.to_le_bytes(),
                    b"eval",
                ]
                .concat(),
            );
            let render = render_image(
                &state.field,
                &cam,
                state.config.samples_per_ray,
                Some(&state.occupancy),
                Some(&state.supervision),
                seed,
            )?;
            let render32 = render.cast::<f32>();
            mse_psnr.push(psnr(&render32, &gt)?);
            ssims.push(ssim(&render32, &gt)?);
            if let Some(dir) = out_dir {
                let img_dir = dir.join("renders").join(format!("{scale}"));
                render32.save_png(&img_dir.join(format!("{:03}.png", entry.camera_index)))?;
                gt.save_png(&img_dir.join(format!("{:03}_gt.png", entry.camera_index)))?;
            }
        }
        let n = mse_psnr.len() as f64;
        let p = mse_psnr.iter().sum::<f64>() / n;
        let s = ssims.iter().sum::<f64>() / n;
        rows.push(ScaleRow { scale, psnr: p, ssim: s, avg_error: avg_error(p, s, None) });
    }

    let fp = config_fingerprint(state.field.grid_config(), state.field.pyramid(), &state.config);
    let report = MetricsReport::from_rows(rows, state.train_seconds, fp);
    if let Some(dir) = out_dir {
        report.write(dir)?;
    }
    Ok(report)
}

/// Load a checkpoint and evaluate it against a dataset directory.
pub fn evaluate_checkpoint<F: Real>(
    checkpoint: &Path,
    dataset_dir: &Path,
    out_dir: Option<&Path>,
) -> Result<MetricsReport, Error> {
    let state = load_checkpoint::<F>(checkpoint)?;
    let dataset = MultiscaleDataset::load(dataset_dir)?;
    evaluate(&state, &dataset, out_dir)
}

/// Render an orbit flythrough as numbered PNGs.
pub fn render_flythrough<F: Real>(
    state: &TrainState<F>,
    out_dir: &Path,
    frames: usize,
    width: usize,
    height: usize,
    distance: f64,
) -> Result<(), Error> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    for frame in 0..frames {
        let angle = frame as f64 / frames as f64 * std::f64::consts::TAU;
        let eye = Vec3::new(
            distance * angle.cos(),
            distance * 0.35,
            distance * angle.sin(),
        );
        let cam = Camera::<F>::look_at(
            eye.cast(),
            Vec3::zero(),
            Vec3::from_f64(0.0, 1.0, 0.0),
            width,
            height,
            F::c(width as f64),
            F::c((distance - 0.87).max(0.02)),
            F::c(distance + 0.87),
        );
        let img = render_image(
            &state.field,
            &cam,
            state.config.samples_per_ray,
            Some(&state.occupancy),
            Some(&state.supervision),
            frame as u64,
        )?;
        img.cast::<f32>().save_png(&out_dir.join(format!("{frame:04}.png")))?;
    }
    Ok(())
}

/// One ablation variant: an evaluation-mode / grid-sharing / level-selection
/// combination, mirroring the diagnostics table.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AblationVariant {
    pub name: &'static str,
    pub mode: EvalMode,
    pub shared_grid: bool,
    pub level_selection: LevelSelection,
}

pub const ABLATION_VARIANTS: [AblationVariant; 6] = [
    AblationVariant {
        name: "gauss",
        mode: EvalMode::Gauss,
        shared_grid: true,
        level_selection: LevelSelection::ProjectedArea,
    },
    AblationVariant {
        name: "laplacian",
        mode: EvalMode::Laplacian,
        shared_grid: true,
        level_selection: LevelSelection::ProjectedArea,
    },
    AblationVariant {
        name: "feature_interp",
        mode: EvalMode::FeatureInterp,
        shared_grid: false,
        level_selection: LevelSelection::ProjectedArea,
    },
    AblationVariant {
        name: "separate_tables",
        mode: EvalMode::DefaultInterp,
        shared_grid: false,
        level_selection: LevelSelection::ProjectedArea,
    },
    AblationVariant {
        name: "volume_3d",
        mode: EvalMode::DefaultInterp,
        shared_grid: true,
        level_selection: LevelSelection::Volume3d,
    },
    AblationVariant {
        name: "default",
        mode: EvalMode::DefaultInterp,
        shared_grid: true,
        level_selection: LevelSelection::ProjectedArea,
    },
];

#[derive(Clone, Debug)]
pub struct AblationRow {
    pub variant: AblationVariant,
    pub result: Result<(MetricsReport, f64), String>,
}

/// Train and evaluate the requested variants with a shared seed and budget.
/// Failed cells are marked in the table, which is emitted regardless.
pub fn ablate<F: Real>(
    dataset: &MultiscaleDataset,
    variants: &[AblationVariant],
    base_train: &TrainConfig,
    grid_config: crate::field::hashgrid::HashGridConfig,
    pyramid_base: crate::pyramid::PyramidConfig,
    out_dir: &Path,
) -> Result<Vec<AblationRow>, Error> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut rows = Vec::new();
    for v in variants {
        let mut pyramid = pyramid_base;
        pyramid.mode = v.mode;
        pyramid.level_selection = v.level_selection;
        let run_dir = out_dir.join(v.name);
        let result = (|| -> Result<(MetricsReport, f64), Error> {
            let (state, _outcome) = crate::train::train::<F>(
                dataset,
                grid_config,
                pyramid,
                v.shared_grid,
                base_train.clone(),
                &run_dir,
            )?;
            let report = evaluate(&state, dataset, None)?;
            Ok((report, state.train_seconds))
        })();
        rows.push(AblationRow {
            variant: *v,
            result: result.map_err(|e| e.to_string()),
        });
    }

    // Emit the comparison table.
    let table_path = out_dir.join("ablation.csv");
    let mut out = String::from(
        "variant,mode,shared_features,level_selection,psnr,ssim,avg_error_2,train_seconds,status\n",
    );
    for row in &rows {
        let v = &row.variant;
        let (metrics, status) = match &row.result {
            Ok((report, secs)) => (
                format!(
                    "{},{},{},{:.3}",
                    fmt_metric(report.aggregate.psnr),
                    fmt_metric(report.aggregate.ssim),
                    fmt_metric(report.aggregate.avg_error),
                    secs
                ),
                "ok".to_string(),
            ),
            Err(e) => (",,,".to_string(), format!("failed: {e}")),
        };
        out.push_str(&format!(
            "{},{:?},{},{:?},{},{}\n",
            v.name, v.mode, v.shared_grid, v.level_selection, metrics, status
        ));
    }
    let mut f = std::fs::File::create(&table_path).map_err(|e| Error::io(&table_path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(&table_path, e))?;
    Ok(rows)
}
