//! The learned scene representation: a shared multi-resolution hash grid
//! (or one grid per level) plus one density/color MLP head pair per pyramid
//! level.

pub mod eval;
pub mod hashgrid;
pub mod mlp;
pub mod sh;

use std::sync::atomic::{AtomicU64, Ordering};

use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Activation, ParameterStore};
use crate::math::{derive_seed, Aabb, Real, Vec3};
use crate::pyramid::{PyramidConfig, PyramidError};
use crate::Error;
use hashgrid::{HashGrid, HashGridConfig};
use mlp::{ColorMlp, DensityMlp, COLOR_HIDDEN, DENSITY_HIDDEN, DENSITY_OUT};
use sh::encode_direction;

pub use eval::{BackwardScratch, EvalArena};

/// One pyramid level's MLP pair.
#[derive(Clone, Debug)]
pub struct LevelHead {
    pub density: DensityMlp,
    pub color: ColorMlp,
}

impl LevelHead {
    pub fn param_count(&self) -> usize {
        self.density.param_count() + self.color.param_count()
    }

    /// Closed-form parameter count for the fixed channel widths.
    pub fn expected_param_count(enc_dim: usize) -> usize {
        let density = enc_dim * DENSITY_HIDDEN + DENSITY_HIDDEN // l1
            + DENSITY_HIDDEN * DENSITY_OUT + DENSITY_OUT; // l2
        let color = mlp::COLOR_IN * COLOR_HIDDEN + COLOR_HIDDEN
            + COLOR_HIDDEN * COLOR_HIDDEN + COLOR_HIDDEN
            + COLOR_HIDDEN * 3 + 3;
        density + color
    }
}

/// Shared multi-resolution grid features plus L per-level heads.
#[derive(Debug)]
pub struct PyramidField<F: Real> {
    store: ParameterStore<F>,
    grids: Vec<HashGrid>,
    heads: Vec<LevelHead>,
    pyramid: PyramidConfig,
    grid_config: HashGridConfig,
    shared_grid: bool,
    bounds: Aabb<f64>,
    head_evals: AtomicU64,
}

impl<F: Real> PyramidField<F> {
    pub fn new(
        grid_config: HashGridConfig,
        pyramid: PyramidConfig,
        shared_grid: bool,
        bounds: Aabb<f64>,
        seed: u64,
    ) -> Result<Self, Error> {
        grid_config.validate().map_err(Error::Validation)?;
        pyramid.validate().map_err(Error::Validation)?;
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::from_seed(derive_seed(seed, "field-init"));
        let mut store = ParameterStore::new();

        let n_grids = if shared_grid { 1 } else { pyramid.levels };
        let mut grids = Vec::with_capacity(n_grids);
        for g in 0..n_grids {
            grids.push(HashGrid::alloc(&mut store, &format!("grid{g}"), grid_config, bounds, &mut rng)?);
        }
        let enc_dim = grid_config.output_dim();
        let mut heads = Vec::with_capacity(pyramid.levels);
        for l in 0..pyramid.levels {
            heads.push(LevelHead {
                density: DensityMlp::alloc(&mut store, &format!("head{l}.density"), enc_dim, &mut rng)?,
                color: ColorMlp::alloc(&mut store, &format!("head{l}.color"), &mut rng)?,
            });
        }
        debug_assert!(store.validate());
        Ok(Self {
            store,
            grids,
            heads,
            pyramid,
            grid_config,
            shared_grid,
            bounds,
            head_evals: AtomicU64::new(0),
        })
    }

    pub fn store(&self) -> &ParameterStore<F> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParameterStore<F> {
        &mut self.store
    }

    pub fn pyramid(&self) -> &PyramidConfig {
        &self.pyramid
    }

    pub fn grid_config(&self) -> &HashGridConfig {
        &self.grid_config
    }

    pub fn shared_grid(&self) -> bool {
        self.shared_grid
    }

    pub fn bounds(&self) -> &Aabb<f64> {
        &self.bounds
    }

    pub fn bounds_as<G: Real>(&self) -> Aabb<G> {
        self.bounds.cast()
    }

    pub fn levels(&self) -> usize {
        self.pyramid.levels
    }

    pub fn heads(&self) -> &[LevelHead] {
        &self.heads
    }

    pub fn grids(&self) -> &[HashGrid] {
        &self.grids
    }

    pub fn enc_dim(&self) -> usize {
        self.grid_config.output_dim()
    }

    #[inline(always)]
    pub fn grid_index_for_level(&self, level: usize) -> usize {
        if self.shared_grid {
            0
        } else {
            level
        }
    }

    #[inline(always)]
    pub fn grid_for_level(&self, level: usize) -> &HashGrid {
        &self.grids[self.grid_index_for_level(level)]
    }

    /// Number of head (density+color) evaluations since the last reset.
    pub fn head_eval_count(&self) -> u64 {
        self.head_evals.load(Ordering::Relaxed)
    }

    pub fn reset_head_eval_count(&self) {
        self.head_evals.store(0, Ordering::Relaxed);
    }

    #[inline(always)]
    pub(crate) fn count_head_eval(&self) {
        self.head_evals.fetch_add(1, Ordering::Relaxed);
    }

    /// Evaluate one level head at a position and view direction, with
    /// activations applied: sigma >= 0, color in [0,1]^3.
    pub fn eval_head(&self, level: usize, x: Vec3<F>, d: Vec3<F>) -> Result<(F, [F; 3]), Error> {
        if level >= self.pyramid.levels {
            return Err(Error::Pyramid(PyramidError::LevelOutOfRange {
                level,
                levels: self.pyramid.levels,
            }));
        }
        let sh = encode_direction(d);
        let values = self.store.values();
        let grid = self.grid_for_level(level);
        let mut enc = vec![F::zero(); self.enc_dim()];
        grid.encode(values, x, &mut enc, None);
        let head = &self.heads[level];
        let mut h1 = [F::zero(); DENSITY_HIDDEN];
        let mut dout = [F::zero(); DENSITY_OUT];
        head.density.forward(values, &enc, &mut h1, &mut dout);
        let mut c_in = [F::zero(); mlp::COLOR_IN];
        c_in[..mlp::GEO_DIM].copy_from_slice(&dout[1..]);
        c_in[mlp::GEO_DIM..].copy_from_slice(&sh);
        let mut ch1 = [F::zero(); COLOR_HIDDEN];
        let mut ch2 = [F::zero(); COLOR_HIDDEN];
        let mut rgb_pre = [F::zero(); 3];
        head.color.forward(values, &c_in, &mut ch1, &mut ch2, &mut rgb_pre);
        self.count_head_eval();
        let sigma = Activation::TruncatedExp.apply(dout[0]);
        let color = [
            Activation::Sigmoid.apply(rgb_pre[0]),
            Activation::Sigmoid.apply(rgb_pre[1]),
            Activation::Sigmoid.apply(rgb_pre[2]),
        ];
        Ok((sigma, color))
    }

    /// Density of a single level at a position (no color MLP); used by the
    /// occupancy-grid refresh.
    pub fn eval_density(&self, level: usize, x: Vec3<F>) -> F {
        let values = self.store.values();
        let grid = self.grid_for_level(level);
        let mut enc = vec![F::zero(); self.enc_dim()];
        grid.encode(values, x, &mut enc, None);
        let mut h1 = [F::zero(); DENSITY_HIDDEN];
        let mut dout = [F::zero(); DENSITY_OUT];
        self.heads[level].density.forward(values, &enc, &mut h1, &mut dout);
        Activation::TruncatedExp.apply(dout[0])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pyramid::{EvalMode, LevelSelection};
    use rand::{Rng, SeedableRng};

    pub(crate) fn tiny_configs(levels: usize, shared: bool) -> (HashGridConfig, PyramidConfig, bool) {
        (
            HashGridConfig {
                grid_levels: 3,
                base_resolution: 4,
                per_level_scale: 1.5,
                features_per_level: 2,
                table_size: 1 << 9,
            },
            PyramidConfig {
                levels,
                base_resolution: 2.0,
                scale: 2.0,
                mode: EvalMode::DefaultInterp,
                level_selection: LevelSelection::ProjectedArea,
                continuous_blend: false,
            },
            shared,
        )
    }

    fn tiny_field(levels: usize, shared: bool) -> PyramidField<f64> {
        let (g, p, s) = tiny_configs(levels, shared);
        PyramidField::new(g, p, s, Aabb::unit(), 7).unwrap()
    }

    #[test]
    fn head_param_count_matches_closed_form() {
        let field = tiny_field(2, true);
        let enc_dim = field.enc_dim();
        // density: enc*64 + 64 + 64*16 + 16; color: 31*128+128 + 128*128+128 + 128*3+3
        let expected = (enc_dim * 64 + 64 + 64 * 16 + 16) + (31 * 128 + 128 + 128 * 128 + 128 + 128 * 3 + 3);
        assert_eq!(LevelHead::expected_param_count(enc_dim), expected);
        for head in field.heads() {
            assert_eq!(head.param_count(), expected);
        }
        // With the production encoding width (8 levels x 2 features = 16):
        assert_eq!(LevelHead::expected_param_count(16), 2128 + 20995);
    }

    #[test]
    fn shared_mode_has_one_grid() {
        assert_eq!(tiny_field(4, true).grids().len(), 1);
        assert_eq!(tiny_field(4, false).grids().len(), 4);
    }

    #[test]
    fn fresh_field_has_unit_density() {
        let field = tiny_field(3, true);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let x = Vec3::new(
                rng.gen_range(-0.5..0.5),
                rng.gen_range(-0.5..0.5),
                rng.gen_range(-0.5..0.5),
            );
            for l in 0..3 {
                let (sigma, color) = field.eval_head(l, x, Vec3::new(0.0, 0.0, 1.0)).unwrap();
                assert!((sigma - 1.0).abs() < 0.1, "sigma {sigma}");
                for c in color {
                    assert!((0.0..=1.0).contains(&c));
                }
            }
        }
    }

    #[test]
    fn eval_head_is_deterministic() {
        let field = tiny_field(2, true);
        let x = Vec3::new(0.11, -0.2, 0.31);
        let d = Vec3::new(0.0, 1.0, 0.0);
        let a = field.eval_head(1, x, d).unwrap();
        let b = field.eval_head(1, x, d).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
    }

    #[test]
    fn distinct_levels_differ() {
        let field = tiny_field(3, true);
        let x = Vec3::new(0.07, 0.21, -0.13);
        let d = Vec3::new(1.0, 0.0, 0.0).normalized();
        let a = field.eval_head(0, x, d).unwrap();
        let b = field.eval_head(1, x, d).unwrap();
        assert_ne!(a.1, b.1);
    }

    #[test]
    fn level_out_of_range_is_an_error() {
        let field = tiny_field(2, true);
        assert!(field.eval_head(2, Vec3::zero(), Vec3::new(0.0, 0.0, 1.0)).is_err());
    }

    #[test]
    fn grid_mutation_reach() {
        // Shared mode: a grid feature affects every level's output.
        let mut field = tiny_field(3, true);
        let x = Vec3::new(0.05, 0.05, 0.05);
        let d = Vec3::new(0.0, 0.0, 1.0);
        let before: Vec<_> = (0..3).map(|l| field.eval_head(l, x, d).unwrap()).collect();
        // Perturb every level-0 grid feature so the encoding at x changes.
        let seg = field.store.segment_by_name("grid0.level0").unwrap();
        let range = field.store.segment(seg).range.clone();
        for v in &mut field.store.values_mut()[range] {
            *v += 0.5;
        }
        for l in 0..3 {
            let after = field.eval_head(l, x, d).unwrap();
            assert_ne!(after.1, before[l].1, "level {l} unaffected in shared mode");
        }

        // Separate mode: only the owning level changes.
        let mut field = tiny_field(3, false);
        let before: Vec<_> = (0..3).map(|l| field.eval_head(l, x, d).unwrap()).collect();
        let seg = field.store.segment_by_name("grid1.level0").unwrap();
        let range = field.store.segment(seg).range.clone();
        for v in &mut field.store.values_mut()[range] {
            *v += 0.5;
        }
        for l in 0..3 {
            let after = field.eval_head(l, x, d).unwrap();
            if l == 1 {
                assert_ne!(after.1, before[l].1);
            } else {
                assert_eq!(after.1, before[l].1, "level {l} affected in separate mode");
            }
        }
    }

    #[test]
    fn eval_counter_counts() {
        let field = tiny_field(2, true);
        field.reset_head_eval_count();
        let _ = field.eval_head(0, Vec3::zero(), Vec3::new(0.0, 0.0, 1.0));
        let _ = field.eval_head(1, Vec3::zero(), Vec3::new(0.0, 0.0, 1.0));
        assert_eq!(field.head_eval_count(), 2);
    }
}
