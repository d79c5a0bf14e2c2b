//! Multi-resolution hash-grid position encoding.
//!
//! Each grid level stores a feature table; positions are trilinearly
//! interpolated from the 8 enclosing voxel corners per level and the results
//! concatenated. Levels whose dense vertex count fits in the table are
//! indexed densely; larger levels hash coordinates into the table.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AutodiffError, ParamGroup, ParameterStore, SegmentId};
use crate::math::{Aabb, Real, Vec3};

/// Spatial hash primes (x is multiplied by 1).
const HASH_PRIME_Y: u32 = 2_654_435_761;
const HASH_PRIME_Z: u32 = 805_459_861;

pub const FEATURE_INIT_SCALE: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HashGridConfig {
    pub grid_levels: usize,
    pub base_resolution: u32,
    pub per_level_scale: f64,
    pub features_per_level: usize,
    pub table_size: usize,
}

impl HashGridConfig {
    /// Small configuration that trains in minutes on a CPU. The production
    /// setting (2^20 tables, 4 features) is reachable through the fields.
    pub fn desk_default() -> Self {
        Self {
            grid_levels: 8,
            base_resolution: 16,
            per_level_scale: 1.6,
            features_per_level: 2,
            table_size: 1 << 16,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !self.table_size.is_power_of_two() {
            return Err(format!("table_size {} is not a power of two", self.table_size));
        }
        if self.per_level_scale <= 1.0 {
            return Err(format!("per_level_scale {} must be > 1", self.per_level_scale));
        }
        if self.grid_levels == 0 {
            return Err("grid_levels must be >= 1".into());
        }
        if self.features_per_level == 0 {
            return Err("features_per_level must be >= 1".into());
        }
        Ok(())
    }

    pub fn level_resolution(&self, level: usize) -> u32 {
        (self.base_resolution as f64 * self.per_level_scale.powi(level as i32)).floor() as u32
    }

    pub fn output_dim(&self) -> usize {
        self.grid_levels * self.features_per_level
    }
}

#[derive(Clone, Debug)]
struct GridLevel {
    resolution: u32,
    /// Number of table entries for this level.
    entries: usize,
    dense: bool,
    /// Offset of this level's table in the parameter store.
    param_offset: usize,
    #[allow(dead_code)]
    segment: SegmentId,
}

/// One multi-resolution feature grid over an axis-aligned world box.
#[derive(Clone, Debug)]
pub struct HashGrid {
    config: HashGridConfig,
    levels: Vec<GridLevel>,
    bounds: Aabb<f64>,
}

/// Per-encoding record of corner parameter offsets and trilinear weights,
/// used to scatter gradients back into the feature tables.
#[derive(Clone, Debug, Default)]
pub struct EncodeScratch<F> {
    /// (parameter offset of the corner's feature vector, trilinear weight),
    /// 8 entries per grid level in level-major order.
    pub pairs: Vec<(u32, F)>,
}

impl HashGrid {
    /// Allocate the feature tables inside `store`. Features are initialized
    /// uniformly in (-1e-4, 1e-4).
    pub fn alloc<F: Real>(
        store: &mut ParameterStore<F>,
        name_prefix: &str,
        config: HashGridConfig,
        bounds: Aabb<f64>,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self, AutodiffError> {
        config.validate().expect("valid hash grid config");
        let mut levels = Vec::with_capacity(config.grid_levels);
        for l in 0..config.grid_levels {
            let resolution = config.level_resolution(l);
            let dense_vertices = ((resolution as usize) + 1).pow(3);
            let dense = dense_vertices <= config.table_size;
            let entries = if dense { dense_vertices } else { config.table_size };
            let seg = store.alloc(
                &format!("{name_prefix}.level{l}"),
                entries * config.features_per_level,
                ParamGroup::Grid,
                || F::c(rng.gen_range(-FEATURE_INIT_SCALE..FEATURE_INIT_SCALE)),
            )?;
            let param_offset = store.segment(seg).range.start;
            levels.push(GridLevel {
                resolution,
                entries,
                dense,
                param_offset,
                segment: seg,
            });
        }
        Ok(Self { config, levels, bounds })
    }

    pub fn config(&self) -> &HashGridConfig {
        &self.config
    }

    pub fn bounds(&self) -> &Aabb<f64> {
        &self.bounds
    }

    pub fn output_dim(&self) -> usize {
        self.config.output_dim()
    }

    /// Total number of stored feature scalars.
    pub fn param_count(&self) -> usize {
        self.levels
            .iter()
            .map(|l| l.entries * self.config.features_per_level)
            .sum()
    }

    #[inline(always)]
    fn entry_index(&self, level: &GridLevel, vx: u32, vy: u32, vz: u32) -> usize {
        if level.dense {
            let side = level.resolution as usize + 1;
            (vz as usize * side + vy as usize) * side + vx as usize
        } else {
            let h = vx ^ vy.wrapping_mul(HASH_PRIME_Y) ^ vz.wrapping_mul(HASH_PRIME_Z);
            (h as usize) & (self.config.table_size - 1)
        }
    }

    /// Encode a world position into concatenated per-level features.
    ///
    /// `out` must have length [`Self::output_dim`]. When `scratch` is given,
    /// the corner offsets and weights are recorded for the backward pass.
    pub fn encode<F: Real>(
        &self,
        values: &[F],
        x: Vec3<F>,
        out: &mut [F],
        mut scratch: Option<&mut EncodeScratch<F>>,
    ) {
        debug_assert_eq!(out.len(), self.output_dim());
        let feats = self.config.features_per_level;
        let unit = self.bounds.to_unit(Vec3::new(x.x.as_f64(), x.y.as_f64(), x.z.as_f64()));
        if let Some(s) = scratch.as_deref_mut() {
            s.pairs.clear();
        }
        for (li, level) in self.levels.iter().enumerate() {
            let r = level.resolution as f64;
            let px = unit.x * r;
            let py = unit.y * r;
            let pz = unit.z * r;
            let ix = (px.floor() as u32).min(level.resolution - 1);
            let iy = (py.floor() as u32).min(level.resolution - 1);
            let iz = (pz.floor() as u32).min(level.resolution - 1);
            let fx = px - ix as f64;
            let fy = py - iy as f64;
            let fz = pz - iz as f64;

            let out_slice = &mut out[li * feats..(li + 1) * feats];
            out_slice.iter_mut().for_each(|o| *o = F::zero());
            for corner in 0..8u32 {
                let (dx, dy, dz) = (corner & 1, (corner >> 1) & 1, (corner >> 2) & 1);
                let w = (if dx == 1 { fx } else { 1.0 - fx })
                    * (if dy == 1 { fy } else { 1.0 - fy })
                    * (if dz == 1 { fz } else { 1.0 - fz });
                let idx = self.entry_index(level, ix + dx, iy + dy, iz + dz);
                let base = level.param_offset + idx * feats;
                let wf = F::c(w);
                for f in 0..feats {
                    out_slice[f] = values[base + f].mul_add(wf, out_slice[f]);
                }
                if let Some(s) = scratch.as_deref_mut() {
                    s.pairs.push((base as u32, wf));
                }
            }
        }
    }

    /// Scatter feature cotangents back into table gradients using a scratch
    /// recorded by [`Self::encode`]. Accumulates, scaled by `scale`.
    pub fn encode_backward<F: Real>(
        &self,
        scratch: &EncodeScratch<F>,
        d_out: &[F],
        scale: F,
        d_values: &mut [F],
    ) {
        let feats = self.config.features_per_level;
        debug_assert_eq!(scratch.pairs.len(), 8 * self.levels.len());
        for (li, pairs) in scratch.pairs.chunks_exact(8).enumerate() {
            let d_slice = &d_out[li * feats..(li + 1) * feats];
            for &(base, w) in pairs {
                let base = base as usize;
                let sw = w * scale;
                for f in 0..feats {
                    d_values[base + f] = d_slice[f].mul_add(sw, d_values[base + f]);
                }
            }
        }
    }
}
