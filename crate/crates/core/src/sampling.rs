//! Stratified ray sampling with occupancy-grid empty-space skipping.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::camera::Ray;
use crate::math::{Aabb, Real, Vec3};

/// A point-with-volume along a ray. The position sits at the point drawn
/// within its stratum; the footprint width grows linearly with distance.
#[derive(Clone, Copy, Debug)]
pub struct FrustumSample<F> {
    pub x: Vec3<F>,
    pub dir: Vec3<F>,
    /// Stratum bounds along the ray.
    pub t0: F,
    pub t1: F,
    /// Drawn position in [t0, t1].
    pub t: F,
    /// t1 - t0, the quadrature interval.
    pub delta: F,
    /// footprint_rate * t.
    pub footprint_width: F,
    /// footprint_width^2 * delta.
    pub volume: F,
}

impl<F: Real> FrustumSample<F> {
    /// Footprint measure P under projected-area selection: 1/width.
    #[inline(always)]
    pub fn footprint_area_measure(&self) -> F {
        F::one() / self.footprint_width
    }

    /// Footprint measure P under 3D-volume selection: 1/cbrt(volume).
    #[inline(always)]
    pub fn footprint_volume_measure(&self) -> F {
        F::one() / self.volume.cbrt()
    }
}

/// Coarse density-estimate grid used to skip empty space.
///
/// Estimates decay multiplicatively on update and a cell counts as occupied
/// while its estimate exceeds the threshold. Fresh estimates use the opacity
/// a cell-sized interval would have: 1 - exp(-sigma * cell_side).
#[derive(Clone, Debug)]
pub struct OccupancyGrid {
    resolution: usize,
    bounds: Aabb<f64>,
    estimates: Vec<f32>,
    pub threshold: f32,
    pub decay: f32,
    /// Updates run every this many training iterations (including 0).
    pub update_every: usize,
}

impl OccupancyGrid {
    pub const DEFAULT_RESOLUTION: usize = 64;
    pub const DEFAULT_THRESHOLD: f32 = 0.01;
    pub const DEFAULT_DECAY: f32 = 0.95;
    pub const DEFAULT_UPDATE_EVERY: usize = 16;

    /// All estimates start at zero; training runs an update from the field
    /// at iteration 0 before the first step.
    pub fn new(resolution: usize, bounds: Aabb<f64>) -> Self {
        Self {
            resolution,
            bounds,
            estimates: vec![0.0; resolution * resolution * resolution],
            threshold: Self::DEFAULT_THRESHOLD,
            decay: Self::DEFAULT_DECAY,
            update_every: Self::DEFAULT_UPDATE_EVERY,
        }
    }

    /// A grid that samples everywhere; useful before any update has run.
    pub fn new_occupied(resolution: usize, bounds: Aabb<f64>) -> Self {
        let mut g = Self::new(resolution, bounds);
        g.estimates.iter_mut().for_each(|e| *e = 1.0);
        g
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn bounds(&self) -> &Aabb<f64> {
        &self.bounds
    }

    pub fn estimates(&self) -> &[f32] {
        &self.estimates
    }

    pub fn set_estimates(&mut self, estimates: Vec<f32>) {
        assert_eq!(estimates.len(), self.estimates.len());
        self.estimates = estimates;
    }

    pub fn cell_side(&self) -> f64 {
        let e = self.bounds.extent();
        (e.x / self.resolution as f64)
            .max(e.y / self.resolution as f64)
            .max(e.z / self.resolution as f64)
    }

    #[inline]
    fn cell_index(&self, x: Vec3<f64>) -> usize {
        let u = self.bounds.to_unit(x);
        let r = self.resolution;
        let s = r as f64;
        let cx = ((u.x * s) as usize).min(r - 1);
        let cy = ((u.y * s) as usize).min(r - 1);
        let cz = ((u.z * s) as usize).min(r - 1);
        (cz * r + cy) * r + cx
    }

    pub fn cell_center(&self, index: usize) -> Vec3<f64> {
        let r = self.resolution;
        let cx = index % r;
        let cy = (index / r) % r;
        let cz = index / (r * r);
        let e = self.bounds.extent();
        let s = r as f64;
        Vec3::new(
            self.bounds.min.x + e.x * (cx as f64 + 0.5) / s,
            self.bounds.min.y + e.y * (cy as f64 + 0.5) / s,
            self.bounds.min.z + e.z * (cz as f64 + 0.5) / s,
        )
    }

    #[inline]
    pub fn occupied(&self, x: Vec3<f64>) -> bool {
        self.estimates[self.cell_index(x)] > self.threshold
    }

    pub fn occupied_fraction(&self) -> f64 {
        let n = self.estimates.iter().filter(|&&e| e > self.threshold).count();
        n as f64 / self.estimates.len() as f64
    }

    /// Refresh estimates from a density field evaluated at cell centers:
    /// `estimate = max(decay * old, 1 - exp(-sigma * cell_side))`.
    pub fn update(&mut self, sigma_at: impl Fn(Vec3<f64>) -> f64 + Sync) {
        let side = self.cell_side();
        let fresh: Vec<f32> = (0..self.estimates.len())
            .into_par_iter()
            .map(|i| {
                let sigma = sigma_at(self.cell_center(i));
                (1.0 - (-sigma * side).exp()) as f32
            })
            .collect();
        for (e, f) in self.estimates.iter_mut().zip(fresh) {
            *e = (*e * self.decay).max(f);
        }
    }
}

/// Draw `n` stratified samples along a ray's [near, far] segment.
///
/// The strata partition the segment evenly; one uniform position is drawn
/// per stratum. Samples whose position falls in an unoccupied cell are
/// dropped when a grid is supplied. Returns an empty list when the segment
/// is degenerate or fully unoccupied.
pub fn sample_ray<F: Real>(
    ray: &Ray<F>,
    n: usize,
    occupancy: Option<&OccupancyGrid>,
    rng: &mut ChaCha8Rng,
    out: &mut Vec<FrustumSample<F>>,
) {
    out.clear();
    assert!(n >= 1, "sample count must be >= 1");
    if !(ray.near < ray.far) {
        return;
    }
    let delta = (ray.far - ray.near) / F::c(n as f64);
    for i in 0..n {
        let u = F::c(rng.gen::<f64>());
        let t0 = ray.near + delta * F::c(i as f64);
        let t1 = t0 + delta;
        let t = t0 + delta * u;
        let x = ray.point_at(t);
        if let Some(grid) = occupancy {
            if !grid.occupied(Vec3::new(x.x.as_f64(), x.y.as_f64(), x.z.as_f64())) {
                continue;
            }
        }
        let footprint_width = ray.footprint_rate * t;
        out.push(FrustumSample {
            x,
            dir: ray.direction,
            t0,
            t1,
            t,
            delta,
            footprint_width,
            volume: footprint_width * footprint_width * delta,
        });
    }
}
