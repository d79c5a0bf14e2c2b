//! Optimization loop: ray batching over the multiscale dataset, rendering,
//! loss, Adam updates, supervision recording, occupancy maintenance, and
//! checkpointing.

pub mod adam;
pub mod checkpoint;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{GradBuffer, ParamGroup};
use crate::camera::{Camera, Ray};
use crate::dataset::MultiscaleDataset;
use crate::field::hashgrid::HashGridConfig;
use crate::field::PyramidField;
use crate::imagebuf::ImageBuf;
use crate::math::{derive_seed, Real, Vec3};
use crate::pyramid::{PyramidConfig, SupervisionGrid};
use crate::render::{backward_ray, render_ray, RayWorkspace, RenderOptions};
use crate::sampling::OccupancyGrid;
use crate::Error;

pub use adam::Adam;
pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_rays: usize,
    pub iterations: usize,
    pub samples_per_ray: usize,
    pub lr_grid: f64,
    pub lr_heads: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    /// Test-split evaluation cadence in iterations (0 disables).
    pub eval_every: usize,
    pub occupancy_every: usize,
    pub supervision_resolution: usize,
    pub occupancy_resolution: usize,
    /// Rays per gradient chunk; chunks reduce in a fixed order so runs are
    /// bit-stable for any worker count.
    pub chunk_rays: usize,
    /// Optional per-scale sampling weights (indexed like the manifest's
    /// scale list). Uniform-per-pixel when absent.
    pub scale_weights: Option<Vec<f64>>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_rays: 8192,
            iterations: 3000,
            samples_per_ray: 128,
            lr_grid: 1e-2,
            lr_heads: 1e-3,
            beta1: 0.9,
            beta2: 0.99,
            eps: 1e-15,
            seed: 0,
            eval_every: 500,
            occupancy_every: OccupancyGrid::DEFAULT_UPDATE_EVERY,
            supervision_resolution: 64,
            occupancy_resolution: OccupancyGrid::DEFAULT_RESOLUTION,
            chunk_rays: 512,
            scale_weights: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), Error> {
        if self.batch_rays == 0 {
            return Err(Error::Validation("batch_rays must be >= 1".into()));
        }
        if self.samples_per_ray == 0 {
            return Err(Error::Validation("samples_per_ray must be >= 1".into()));
        }
        for (name, v) in [("lr_grid", self.lr_grid), ("lr_heads", self.lr_heads)] {
            if !(v > 0.0) {
                return Err(Error::Validation(format!("{name} must be > 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Everything that evolves during training.
pub struct TrainState<F: Real> {
    pub field: PyramidField<F>,
    pub adam: Adam<F>,
    pub occupancy: OccupancyGrid,
    pub supervision: SupervisionGrid,
    pub rng: ChaCha8Rng,
    pub iteration: u64,
    pub train_seconds: f64,
    pub config: TrainConfig,
    buffers: Vec<GradBuffer<F>>,
    workspaces: Vec<RayWorkspace<F>>,
}

impl<F: Real> TrainState<F> {
    pub fn new(field: PyramidField<F>, config: TrainConfig) -> Result<Self, Error> {
        config.validate()?;
        let adam = Adam::new(
            field.store(),
            F::c(config.beta1),
            F::c(config.beta2),
            F::c(config.eps),
        );
        let bounds = *field.bounds();
        let occupancy = OccupancyGrid::new(config.occupancy_resolution, bounds);
        let supervision = SupervisionGrid::new(config.supervision_resolution, bounds, field.levels());
        let rng = ChaCha8Rng::from_seed(derive_seed(config.seed, "train-loop"));
        Ok(Self {
            field,
            adam,
            occupancy,
            supervision,
            rng,
            iteration: 0,
            train_seconds: 0.0,
            config,
            buffers: Vec::new(),
            workspaces: Vec::new(),
        })
    }

    fn ensure_pools(&mut self, n_chunks: usize) {
        while self.buffers.len() < n_chunks {
            self.buffers.push(self.field.store().new_grad_buffer());
        }
        while self.workspaces.len() < n_chunks {
            self.workspaces.push(RayWorkspace::new());
        }
    }

    /// Refresh the occupancy grid from the field, querying each cell at its
    /// finest supervised level.
    pub fn update_occupancy(&mut self) {
        let field = &self.field;
        let supervision = &self.supervision;
        let global_max = supervision.global_range().map(|(_, mx)| mx);
        self.occupancy.update(|center| {
            let level = supervision
                .cell_range(center)
                .map(|(_, mx)| mx)
                .or(global_max)
                .unwrap_or(0);
            let x = Vec3::new(F::c(center.x), F::c(center.y), F::c(center.z));
            field.eval_density(level, x).as_f64()
        });
    }

    /// Render a batch, backpropagate, and apply one Adam step. Returns the
    /// pre-step loss (mean over the batch of squared color error).
    pub fn train_step(&mut self, batch: &[(Ray<F>, [F; 3])]) -> Result<F, Error> {
        if batch.is_empty() {
            return Err(Error::Validation("train_step: empty batch".into()));
        }
        let chunk_rays = self.config.chunk_rays.max(1);
        let n_chunks = batch.len().div_ceil(chunk_rays);
        self.ensure_pools(n_chunks);

        // Per-ray sampling seeds come off the main stream sequentially so
        // parallel chunks stay deterministic and resumable.
        let ray_seeds: Vec<u64> = (0..batch.len()).map(|_| self.rng.gen()).collect();

        let batch_size = batch.len();
        let samples_per_ray = self.config.samples_per_ray;
        let field = &self.field;
        let occupancy = &self.occupancy;
        let supervision = &self.supervision;

        struct ChunkResult<F> {
            loss_sum: F,
            bad_ray: Option<usize>,
        }

        let results: Vec<ChunkResult<F>> = self
            .buffers
            .par_iter_mut()
            .zip(self.workspaces.par_iter_mut())
            .enumerate()
            .take(n_chunks)
            .map(|(ci, (buf, ws))| {
                buf.zero();
                let start = ci * chunk_rays;
                let end = (start + chunk_rays).min(batch_size);
                let mut loss_sum = F::zero();
                let mut bad_ray = None;
                let opts = RenderOptions {
                    samples_per_ray,
                    occupancy: Some(occupancy),
                    clamp_to: None,
                    record_to: Some(supervision),
                    bucketed: true,
                    background: crate::white_background(),
                };
                for i in start..end {
                    let (ray, target) = &batch[i];
                    let mut rng = ChaCha8Rng::seed_from_u64(ray_seeds[i]);
                    let out = match render_ray(field, ray, &opts, &mut rng, ws) {
                        Ok(o) => o,
                        Err(_) => {
                            bad_ray.get_or_insert(i);
                            continue;
                        }
                    };
                    let mut sq = F::zero();
                    let mut d_color = [F::zero(); 3];
                    let scale = F::c(2.0) / F::c(batch_size as f64);
                    for c in 0..3 {
                        let d = out.color[c] - target[c];
                        sq = d.mul_add(d, sq);
                        d_color[c] = d * scale;
                    }
                    if !sq.is_finite() {
                        bad_ray.get_or_insert(i);
                        continue;
                    }
                    loss_sum = loss_sum + sq;
                    backward_ray(field, ws, opts.background, d_color, buf.as_mut_slice());
                }
                ChunkResult { loss_sum, bad_ray }
            })
            .collect();

        // Fixed-order reduction.
        let mut loss_sum = F::zero();
        let mut bad_ray = None;
        for r in &results {
            loss_sum = loss_sum + r.loss_sum;
            if bad_ray.is_none() {
                bad_ray = r.bad_ray;
            }
        }
        for buf in self.buffers.iter().take(n_chunks) {
            self.field.store_mut().accumulate(buf);
        }

        let loss = loss_sum / F::c(batch_size as f64);
        if bad_ray.is_some() || !loss.is_finite() {
            let max_abs_grad = self
                .field
                .store()
                .grads()
                .iter()
                .fold(0.0f64, |a, g| a.max(g.abs().as_f64()));
            return Err(Error::NonFiniteLoss {
                iteration: self.iteration,
                ray_index: bad_ray.unwrap_or(0),
                max_abs_grad,
            });
        }

        let (lr_grid, lr_heads) = (F::c(self.config.lr_grid), F::c(self.config.lr_heads));
        self.adam.step(self.field.store_mut(), |g| match g {
            ParamGroup::Grid => lr_grid,
            ParamGroup::Head => lr_heads,
        });
        self.field.store_mut().zero_grads();
        self.iteration += 1;
        Ok(loss)
    }
}

/// The train split loaded into memory for pixel sampling.
pub struct TrainSet<F: Real> {
    pub images: Vec<(Camera<F>, ImageBuf<f32>, u32)>,
    prefix: Vec<usize>,
    pub total_pixels: usize,
}

impl<F: Real> TrainSet<F> {
    pub fn load(dataset: &MultiscaleDataset) -> Result<Self, Error> {
        let mut images = Vec::new();
        let mut prefix = vec![0usize];
        for entry in &dataset.manifest.train {
            let img = dataset.load_image(entry)?;
            let cam: Camera<F> = entry.camera().cast();
            prefix.push(prefix.last().unwrap() + img.data.len());
            images.push((cam, img, entry.scale));
        }
        let total_pixels = *prefix.last().unwrap();
        Ok(Self { images, prefix, total_pixels })
    }

    /// Map a flat pixel index to (image, x, y).
    pub fn locate(&self, flat: usize) -> (usize, usize, usize) {
        let img = self.prefix.partition_point(|&p| p <= flat) - 1;
        let off = flat - self.prefix[img];
        let w = self.images[img].1.width;
        (img, off % w, off / w)
    }

    /// Build the (ray, target) pair for one flat pixel index, clipping the
    /// ray to the scene bounds.
    pub fn ray_for(&self, flat: usize, bounds: &crate::math::Aabb<F>) -> (Ray<F>, [F; 3]) {
        let (ii, x, y) = self.locate(flat);
        let (cam, img, _) = &self.images[ii];
        let mut ray = cam.ray_for_pixel(x, y);
        match ray.clipped_to(bounds) {
            Some(r) => ray = r,
            None => {
                // Degenerate segment: renders as pure background.
                ray.near = F::one();
                ray.far = F::one();
            }
        }
        let p = img.pixel(x, y);
        (ray, [F::c(p[0] as f64), F::c(p[1] as f64), F::c(p[2] as f64)])
    }
}

pub struct TrainOutcome {
    pub losses: Vec<f64>,
    pub checkpoint_path: PathBuf,
    pub metrics_path: PathBuf,
}

/// Draw a batch of flat pixel indices (uniform per pixel, or per-scale
/// weighted when the knob is set).
fn draw_batch<F: Real>(state: &mut TrainState<F>, set: &TrainSet<F>, scales: &[u32]) -> Vec<usize> {
    let n = state.config.batch_rays;
    let weights = state.config.scale_weights.clone();
    match weights {
        None => (0..n).map(|_| state.rng.gen_range(0..set.total_pixels)).collect(),
        Some(weights) => {
            // Group pixel ranges by scale, then draw scale-first.
            let mut per_scale: Vec<Vec<(usize, usize)>> = vec![Vec::new(); scales.len()];
            for (i, (_, img, scale)) in set.images.iter().enumerate() {
                let si = scales.iter().position(|s| s == scale).unwrap_or(0);
                per_scale[si].push((i, img.data.len()));
            }
            let totals: Vec<f64> = per_scale
                .iter()
                .zip(&weights)
                .map(|(imgs, w)| if imgs.is_empty() { 0.0 } else { *w })
                .collect();
            let sum: f64 = totals.iter().sum();
            (0..n)
                .map(|_| {
                    let mut r = state.rng.gen::<f64>() * sum;
                    let mut si = 0;
                    for (i, t) in totals.iter().enumerate() {
                        si = i;
                        if r < *t {
                            break;
                        }
                        r -= t;
                    }
                    let imgs = &per_scale[si];
                    let pix_total: usize = imgs.iter().map(|(_, n)| n).sum();
                    let mut p = state.rng.gen_range(0..pix_total);
                    for (img_idx, count) in imgs {
                        if p < *count {
                            return set.prefix[*img_idx] + p;
                        }
                        p -= count;
                    }
                    unreachable!()
                })
                .collect()
        }
    }
}

/// Run (or continue) the optimization loop until `state.config.iterations`,
/// appending to the metrics log and writing the final checkpoint.
pub fn train_loop<F: Real>(
    state: &mut TrainState<F>,
    dataset: &MultiscaleDataset,
    out_dir: &Path,
) -> Result<TrainOutcome, Error> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let set = TrainSet::<F>::load(dataset)?;
    let scales = dataset.manifest.scales.clone();
    let bounds = state.field.bounds_as::<F>();
    let metrics_path = out_dir.join("metrics.csv");
    let fresh_log = state.iteration == 0 || !metrics_path.exists();
    let mut log = std::io::BufWriter::new(
        std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&metrics_path)
            .map_err(|e| Error::io(&metrics_path, e))?,
    );
    if fresh_log {
        writeln!(log, "iteration,wall_seconds,train_loss,test_psnr,test_ssim")
            .map_err(|e| Error::io(&metrics_path, e))?;
    }

    let mut losses = Vec::new();
    let start_iter = state.iteration;
    let test_entries: Vec<_> = dataset
        .manifest
        .test
        .iter()
        .filter(|e| e.scale == 4)
        .cloned()
        .collect();

    for iter in start_iter..state.config.iterations as u64 {
        let t0 = Instant::now();
        if state.config.occupancy_every > 0 && iter % state.config.occupancy_every as u64 == 0 {
            state.update_occupancy();
        }
        let indices = draw_batch(state, &set, &scales);
        let batch: Vec<(Ray<F>, [F; 3])> =
            indices.iter().map(|&i| set.ray_for(i, &bounds)).collect();
        let loss = state.train_step(&batch)?.as_f64();
        losses.push(loss);
        state.train_seconds += t0.elapsed().as_secs_f64();

        let mut test_cols = (None, None);
        if state.config.eval_every > 0
            && (iter + 1) % state.config.eval_every as u64 == 0
            && !test_entries.is_empty()
        {
            let which = ((iter + 1) / state.config.eval_every as u64) as usize % test_entries.len();
            let entry = &test_entries[which];
            let gt = MultiscaleDataset {
                manifest: dataset.manifest.clone(),
                dir: dataset.dir.clone(),
            }
            .load_image(entry)?;
            let cam: Camera<F> = entry.camera().cast();
            let render = crate::eval::render_image(
                &state.field,
                &cam,
                state.config.samples_per_ray,
                Some(&state.occupancy),
                Some(&state.supervision),
                crate::math::fnv1a64(&iter.to_le_bytes()),
            )?;
            let rendered32 = render.cast::<f32>();
            test_cols = (
                Some(crate::metrics::psnr(&rendered32, &gt)?),
                Some(crate::metrics::ssim(&rendered32, &gt)?),
            );
        }

        let fmt_opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        writeln!(
            log,
            "{},{:.3},{:.8e},{},{}",
            iter + 1,
            state.train_seconds,
            loss,
            fmt_opt(test_cols.0),
            fmt_opt(test_cols.1)
        )
        .map_err(|e| Error::io(&metrics_path, e))?;
    }
    log.flush().map_err(|e| Error::io(&metrics_path, e))?;

    let checkpoint_path = out_dir.join("checkpoint.bin");
    save_checkpoint(state, &checkpoint_path)?;
    Ok(TrainOutcome { losses, checkpoint_path, metrics_path })
}

/// Build a fresh field and train it on the dataset.
pub fn train<F: Real>(
    dataset: &MultiscaleDataset,
    grid_config: HashGridConfig,
    pyramid: PyramidConfig,
    shared_grid: bool,
    config: TrainConfig,
    out_dir: &Path,
) -> Result<(TrainState<F>, TrainOutcome), Error> {
    let bounds = dataset.manifest.bounds_aabb();
    let field = PyramidField::new(grid_config, pyramid, shared_grid, bounds, config.seed)?;
    let mut state = TrainState::new(field, config)?;
    let outcome = train_loop(&mut state, dataset, out_dir)?;
    Ok((state, outcome))
}
