//! Volumetric compositing and the full per-ray render pipeline.

use rand_chacha::ChaCha8Rng;

use crate::camera::Ray;
use crate::field::eval::{backward_sample, eval_sample, BackwardScratch, EvalArena};
use crate::field::sh::{encode_direction, SH_DIM};
use crate::field::PyramidField;
use crate::math::{Real, Vec3};
use crate::pyramid::{assign_level, map_level, LevelSelection, SupervisionGrid};
use crate::sampling::{sample_ray, FrustumSample, OccupancyGrid};
use crate::Error;

/// Front-to-back alpha compositing by quadrature:
/// alpha_i = 1 - exp(-sigma_i * delta_i), T_i = prod_{j<i} (1 - alpha_j),
/// weight_i = T_i * alpha_i, color = sum weight_i c_i + T_N * background.
///
/// Returns the color, the per-sample weights, and the residual
/// transmittance T_N.
pub fn composite<F: Real>(
    samples: &[FrustumSample<F>],
    outputs: &[(F, [F; 3])],
    background: [F; 3],
) -> Result<([F; 3], Vec<F>, F), Error> {
    if samples.len() != outputs.len() {
        return Err(Error::Validation(format!(
            "composite: {} samples but {} outputs",
            samples.len(),
            outputs.len()
        )));
    }
    let deltas: Vec<F> = samples.iter().map(|s| s.delta).collect();
    let sigmas: Vec<F> = outputs.iter().map(|o| o.0).collect();
    let colors: Vec<[F; 3]> = outputs.iter().map(|o| o.1).collect();
    let mut weights = vec![F::zero(); samples.len()];
    let (color, residual) = composite_raw(&deltas, &sigmas, &colors, background, &mut weights);
    Ok((color, weights, residual))
}

/// Compositing over raw slices; fills `weights` and returns (color, T_N).
pub fn composite_raw<F: Real>(
    deltas: &[F],
    sigmas: &[F],
    colors: &[[F; 3]],
    background: [F; 3],
    weights: &mut [F],
) -> ([F; 3], F) {
    let mut color = [F::zero(); 3];
    let mut transmittance = F::one();
    for i in 0..deltas.len() {
        let alpha = F::one() - (-sigmas[i] * deltas[i]).exp();
        let w = transmittance * alpha;
        weights[i] = w;
        for c in 0..3 {
            color[c] = colors[i][c].mul_add(w, color[c]);
        }
        transmittance = transmittance * (F::one() - alpha);
    }
    for c in 0..3 {
        color[c] = background[c].mul_add(transmittance, color[c]);
    }
    (color, transmittance)
}

/// Backward pass of [`composite_raw`]: accumulates d_sigma and d_color per
/// sample given the output-color cotangent.
///
/// Uses the division-free form d/d_sigma_i = delta_i * (T_{i+1} c_i - S_i)
/// where S_i is the suffix color sum (including the background term).
pub fn composite_backward<F: Real>(
    deltas: &[F],
    sigmas: &[F],
    colors: &[[F; 3]],
    background: [F; 3],
    d_out: [F; 3],
    d_sigmas: &mut [F],
    d_colors: &mut [[F; 3]],
) {
    let n = deltas.len();
    // Forward sweep for weights and final transmittance.
    let mut trans = vec![F::zero(); n + 1];
    trans[0] = F::one();
    for i in 0..n {
        let alpha = F::one() - (-sigmas[i] * deltas[i]).exp();
        trans[i + 1] = trans[i] * (F::one() - alpha);
        let w = trans[i] * alpha;
        for c in 0..3 {
            d_colors[i][c] = d_colors[i][c] + w * d_out[c];
        }
    }
    // Reverse sweep with the suffix sum S_i = sum_{k>i} w_k c_k + T_N bg,
    // contracted against the cotangent.
    let mut suffix = F::zero();
    for c in 0..3 {
        suffix = suffix + trans[n] * background[c] * d_out[c];
    }
    for i in (0..n).rev() {
        let ci_dot = colors[i][0] * d_out[0] + colors[i][1] * d_out[1] + colors[i][2] * d_out[2];
        d_sigmas[i] = d_sigmas[i] + deltas[i] * (trans[i + 1] * ci_dot - suffix);
        let alpha = F::one() - (-sigmas[i] * deltas[i]).exp();
        suffix = suffix + trans[i] * alpha * ci_dot;
    }
}

/// Per-ray render products kept for the backward pass.
pub struct RayWorkspace<F: Real> {
    pub arena: EvalArena<F>,
    pub samples: Vec<FrustumSample<F>>,
    pub sample_idx: Vec<usize>,
    sigmas: Vec<F>,
    colors: Vec<[F; 3]>,
    weights: Vec<F>,
    deltas: Vec<F>,
    order: Vec<usize>,
    pub backward: BackwardScratch<F>,
    pub sh: [F; SH_DIM],
}

impl<F: Real> Default for RayWorkspace<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Real> RayWorkspace<F> {
    pub fn new() -> Self {
        Self {
            arena: EvalArena::new(),
            samples: Vec::new(),
            sample_idx: Vec::new(),
            sigmas: Vec::new(),
            colors: Vec::new(),
            weights: Vec::new(),
            deltas: Vec::new(),
            order: Vec::new(),
            backward: BackwardScratch::default(),
            sh: [F::zero(); SH_DIM],
        }
    }
}

/// Statistics returned from rendering one ray.
#[derive(Clone, Copy, Debug)]
pub struct RayRender<F> {
    pub color: [F; 3],
    pub n_samples: usize,
    /// Samples whose level assignment was clamped by the supervision grid.
    pub clamped: usize,
}

/// Options controlling the render pipeline.
#[derive(Clone, Copy)]
pub struct RenderOptions<'a, F> {
    pub samples_per_ray: usize,
    pub occupancy: Option<&'a OccupancyGrid>,
    /// Clamp level assignments to supervised ranges (evaluation path).
    pub clamp_to: Option<&'a SupervisionGrid>,
    /// Record queried levels per region (training path).
    pub record_to: Option<&'a SupervisionGrid>,
    /// Evaluate samples bucketed by level instead of in ray order. The
    /// output is bit-identical either way; bucketing is the production
    /// schedule.
    pub bucketed: bool,
    pub background: [F; 3],
}

impl<'a, F: Real> RenderOptions<'a, F> {
    pub fn simple(samples_per_ray: usize) -> Self {
        Self {
            samples_per_ray,
            occupancy: None,
            clamp_to: None,
            record_to: None,
            bucketed: true,
            background: crate::white_background(),
        }
    }
}

/// Render one ray through the pyramid field.
///
/// Samples the ray, maps each sample's footprint to a level, evaluates the
/// field per sample (bucketed by level or in order), and composites.
/// The workspace retains everything needed by [`backward_ray`].
pub fn render_ray<F: Real>(
    field: &PyramidField<F>,
    ray: &Ray<F>,
    opts: &RenderOptions<F>,
    rng: &mut ChaCha8Rng,
    ws: &mut RayWorkspace<F>,
) -> Result<RayRender<F>, Error> {
    ws.arena.clear();
    sample_ray(ray, opts.samples_per_ray, opts.occupancy, rng, &mut ws.samples);
    let n = ws.samples.len();
    ws.sample_idx.clear();
    ws.sigmas.clear();
    ws.colors.clear();
    ws.deltas.clear();
    ws.weights.clear();
    if n == 0 {
        return Ok(RayRender { color: opts.background, n_samples: 0, clamped: 0 });
    }
    ws.sh = encode_direction(ray.direction);
    ws.sample_idx.resize(n, usize::MAX);
    ws.sigmas.resize(n, F::zero());
    ws.colors.resize(n, [F::zero(); 3]);
    ws.deltas.resize(n, F::zero());
    ws.weights.resize(n, F::zero());

    // Assign a level to every sample.
    let selection = field.pyramid().level_selection;
    let mut clamped = 0usize;
    let mut assignments = Vec::with_capacity(n);
    for s in &ws.samples {
        let p = match selection {
            LevelSelection::ProjectedArea => s.footprint_area_measure(),
            LevelSelection::Volume3d => s.footprint_volume_measure(),
        };
        let m = map_level(p, field.pyramid())?;
        let mut a = assign_level(m, field.pyramid());
        let xw = Vec3::new(s.x.x.as_f64(), s.x.y.as_f64(), s.x.z.as_f64());
        if let Some(grid) = opts.clamp_to {
            let (c, was_clamped) = grid.clamp_to_supervised(xw, &a);
            if was_clamped {
                clamped += 1;
            }
            a = c;
        }
        assignments.push(a);
    }

    // Evaluate each sample, either in ray order or grouped by level.
    let eval_one = |i: usize, ws: &mut RayWorkspace<F>, a| {
        let s = ws.samples[i];
        let idx = eval_sample(field, &mut ws.arena, &ws.sh, s.x, a);
        ws.sample_idx[i] = idx;
        let rec = &ws.arena.samples[idx];
        ws.sigmas[i] = rec.sigma;
        ws.colors[i] = rec.color;
        ws.deltas[i] = s.delta;
        if let Some(grid) = opts.record_to {
            let xw = Vec3::new(s.x.x.as_f64(), s.x.y.as_f64(), s.x.z.as_f64());
            grid.record(xw, rec.level_min);
            grid.record(xw, rec.level_max);
        }
        if let Some(grid) = opts.clamp_to {
            // Every queried level must be inside the cell's supervised range.
            let xw = Vec3::new(s.x.x.as_f64(), s.x.y.as_f64(), s.x.z.as_f64());
            if let Some((mn, mx)) = grid.cell_range(xw).or_else(|| grid.global_range()) {
                debug_assert!(
                    rec.level_min >= mn && rec.level_max <= mx,
                    "sample queried level outside supervised range"
                );
            }
        }
    };

    if opts.bucketed {
        ws.order.clear();
        ws.order.extend(0..n);
        let levels: Vec<usize> = assignments.iter().map(|a| a.level).collect();
        ws.order.sort_by_key(|&i| levels[i]);
        let order = std::mem::take(&mut ws.order);
        for &i in &order {
            eval_one(i, ws, assignments[i]);
        }
        ws.order = order;
    } else {
        for i in 0..n {
            eval_one(i, ws, assignments[i]);
        }
    }

    let (color, _residual) = composite_raw(
        &ws.deltas,
        &ws.sigmas,
        &ws.colors,
        opts.background,
        &mut ws.weights,
    );
    Ok(RayRender { color, n_samples: n, clamped })
}

/// Backpropagate a color cotangent through the composite and every sample
/// evaluation recorded in the workspace.
pub fn backward_ray<F: Real>(
    field: &PyramidField<F>,
    ws: &mut RayWorkspace<F>,
    background: [F; 3],
    d_color: [F; 3],
    gbuf: &mut [F],
) {
    let n = ws.samples.len();
    if n == 0 {
        return;
    }
    let mut d_sigmas = vec![F::zero(); n];
    let mut d_colors = vec![[F::zero(); 3]; n];
    composite_backward(
        &ws.deltas,
        &ws.sigmas,
        &ws.colors,
        background,
        d_color,
        &mut d_sigmas,
        &mut d_colors,
    );
    for i in 0..n {
        backward_sample(
            field,
            &ws.arena,
            ws.sample_idx[i],
            &ws.sh,
            d_sigmas[i],
            d_colors[i],
            &mut ws.backward,
            gbuf,
        );
    }
}
