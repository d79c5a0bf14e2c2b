//! Pyramid level selection and head-output combination.
//!
//! Each sample's projected footprint maps to a continuous level
//! `M = log_s(P / N0)`, which is clamped to an integer head index
//! `l = min(L-1, max(0, ceil(M)))` with interpolation weight `w = l - M`.
//! Four evaluation modes combine the per-level head outputs, and a coarse
//! supervision grid tracks which levels were queried per region during
//! training so inference can avoid unsupervised levels.

use std::sync::atomic::{AtomicI32, Ordering};

use serde::{Deserialize, Serialize};

use crate::autodiff::Activation;
use crate::math::{Aabb, Real, Vec3};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    /// Blend the two heads bracketing the target level (the default).
    #[clap(name = "default_interp")]
    #[serde(rename = "default_interp")]
    DefaultInterp,
    /// Evaluate the single assigned head.
    #[clap(name = "gauss")]
    Gauss,
    /// Sum all heads up to the assigned level in pre-activation space;
    /// levels specialize to residual band-pass detail.
    #[clap(name = "laplacian")]
    Laplacian,
    /// Blend the two levels' encoded features and run one head.
    #[clap(name = "feature_interp")]
    #[serde(rename = "feature_interp")]
    FeatureInterp,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum LevelSelection {
    /// Match the sample's projected pixel footprint width (P = 1/width).
    #[clap(name = "projected_area")]
    #[serde(rename = "projected_area")]
    ProjectedArea,
    /// Match the 3D sample volume (P = 1/cbrt(volume)).
    #[clap(name = "volume_3d")]
    #[serde(rename = "volume_3d")]
    Volume3d,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PyramidConfig {
    /// Number of pyramid levels (heads).
    pub levels: usize,
    /// Base resolution N0 in voxels per unit length.
    pub base_resolution: f64,
    /// Per-level scaling factor s > 1.
    pub scale: f64,
    pub mode: EvalMode,
    pub level_selection: LevelSelection,
    /// Replace the discontinuous verbatim weight rule with a blend that is
    /// continuous across integer M. Off by default.
    pub continuous_blend: bool,
}

impl PyramidConfig {
    pub fn desk_default() -> Self {
        Self {
            levels: 8,
            base_resolution: 2.0,
            scale: 2.0,
            mode: EvalMode::DefaultInterp,
            level_selection: LevelSelection::ProjectedArea,
            continuous_blend: false,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.levels == 0 {
            return Err("pyramid must have at least one level".into());
        }
        if self.scale <= 1.0 {
            return Err(format!("scale {} must be > 1", self.scale));
        }
        if self.base_resolution <= 0.0 {
            return Err(format!("base_resolution {} must be > 0", self.base_resolution));
        }
        Ok(())
    }

    /// Voxel resolution of level l: N_l = N0 * s^l.
    pub fn level_resolution(&self, level: usize) -> f64 {
        self.base_resolution * self.scale.powi(level as i32)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PyramidError {
    #[error("footprint measure must be positive and finite, got {0}")]
    InvalidFootprint(f64),
    #[error("level {level} out of range for a {levels}-level pyramid")]
    LevelOutOfRange { level: usize, levels: usize },
}

/// Continuous level, clamped head index, and interpolation weight.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LevelAssignment<F> {
    pub m: F,
    pub level: usize,
    pub weight: F,
}

/// Eq. mapping a footprint measure P to the continuous level
/// `M = log_s(P / N0)`.
pub fn map_level<F: Real>(p: F, config: &PyramidConfig) -> Result<F, PyramidError> {
    if !(p > F::zero()) || !p.is_finite() {
        return Err(PyramidError::InvalidFootprint(p.as_f64()));
    }
    Ok((p / F::c(config.base_resolution)).ln() / F::c(config.scale.ln()))
}

/// Clamp a continuous level to a head index and interpolation weight.
///
/// Inside the hierarchy: `l = ceil(M)`, `w = l - M`. Outside it, the nearest
/// level is used alone (w = 1).
pub fn assign_level<F: Real>(m: F, config: &PyramidConfig) -> LevelAssignment<F> {
    debug_assert!(m.is_finite());
    let top = (config.levels - 1) as f64;
    if m.as_f64() < 0.0 {
        return LevelAssignment { m, level: 0, weight: F::one() };
    }
    if m.as_f64() > top {
        return LevelAssignment { m, level: config.levels - 1, weight: F::one() };
    }
    if config.continuous_blend {
        let floor = m.floor();
        let l_raw = floor.as_f64() as i64 + 1;
        if l_raw > config.levels as i64 - 1 {
            return LevelAssignment { m, level: config.levels - 1, weight: F::one() };
        }
        let level = l_raw.max(0) as usize;
        let weight = (m - floor).max(F::zero()).min(F::one());
        LevelAssignment { m, level, weight }
    } else {
        let level = m.ceil().as_f64() as usize;
        let weight = (F::c(level as f64) - m).max(F::zero()).min(F::one());
        LevelAssignment { m, level, weight }
    }
}

/// How a mode combines participating head outputs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CombineRule {
    /// Activate each head's output, then blend with per-head weights.
    PostActivationBlend,
    /// Sum raw head outputs, then activate once.
    PreActivationSum,
}

pub fn combine_rule(mode: EvalMode) -> CombineRule {
    match mode {
        EvalMode::Laplacian => CombineRule::PreActivationSum,
        _ => CombineRule::PostActivationBlend,
    }
}

/// List the (level, blend weight) pairs a mode evaluates for an assignment.
/// Zero-weight heads are omitted; laplacian terms all carry weight 1.
pub fn participating_heads<F: Real>(
    mode: EvalMode,
    a: &LevelAssignment<F>,
    out: &mut Vec<(usize, F)>,
) {
    out.clear();
    match mode {
        EvalMode::Gauss | EvalMode::FeatureInterp => out.push((a.level, F::one())),
        EvalMode::DefaultInterp => {
            if a.level == 0 || a.weight >= F::one() {
                out.push((a.level, F::one()));
            } else if a.weight <= F::zero() {
                out.push((a.level - 1, F::one()));
            } else {
                out.push((a.level - 1, F::one() - a.weight));
                out.push((a.level, a.weight));
            }
        }
        EvalMode::Laplacian => {
            for l in 0..=a.level {
                out.push((l, F::one()));
            }
        }
    }
}

pub const DENSITY_ACTIVATION: Activation = Activation::TruncatedExp;
pub const COLOR_ACTIVATION: Activation = Activation::Sigmoid;

/// Combined sample output plus the pre-activation sums cached for the
/// laplacian backward pass.
#[derive(Clone, Copy, Debug)]
pub struct CombinedSample<F> {
    pub sigma: F,
    pub color: [F; 3],
    pub pre_sigma_sum: F,
    pub pre_rgb_sum: [F; 3],
}

/// Combine per-head raw outputs `(weight, sigma_pre, rgb_pre)` into an
/// activated (sigma, color) pair according to the mode's rule.
pub fn combine_outputs<F: Real>(mode: EvalMode, heads: &[(F, F, [F; 3])]) -> CombinedSample<F> {
    match combine_rule(mode) {
        CombineRule::PostActivationBlend => {
            let mut sigma = F::zero();
            let mut color = [F::zero(); 3];
            for &(w, sigma_pre, rgb_pre) in heads {
                sigma = DENSITY_ACTIVATION.apply(sigma_pre).mul_add(w, sigma);
                for c in 0..3 {
                    color[c] = COLOR_ACTIVATION.apply(rgb_pre[c]).mul_add(w, color[c]);
                }
            }
            CombinedSample { sigma, color, pre_sigma_sum: F::zero(), pre_rgb_sum: [F::zero(); 3] }
        }
        CombineRule::PreActivationSum => {
            let mut sigma_pre = F::zero();
            let mut rgb_pre = [F::zero(); 3];
            for &(_, sp, rp) in heads {
                sigma_pre = sigma_pre + sp;
                for c in 0..3 {
                    rgb_pre[c] = rgb_pre[c] + rp[c];
                }
            }
            CombinedSample {
                sigma: DENSITY_ACTIVATION.apply(sigma_pre),
                color: [
                    COLOR_ACTIVATION.apply(rgb_pre[0]),
                    COLOR_ACTIVATION.apply(rgb_pre[1]),
                    COLOR_ACTIVATION.apply(rgb_pre[2]),
                ],
                pre_sigma_sum: sigma_pre,
                pre_rgb_sum: rgb_pre,
            }
        }
    }
}

/// Evaluate a mode with stubbed heads returning raw (pre-activation)
/// outputs. Uses the same participation and combination rules as the field
/// evaluation path; feature blending degenerates to the assigned head.
pub fn evaluate_stub<F: Real>(
    mode: EvalMode,
    assignment: &LevelAssignment<F>,
    head_pre: impl Fn(usize) -> (F, [F; 3]),
) -> (F, [F; 3]) {
    let mut parts = Vec::new();
    participating_heads(mode, assignment, &mut parts);
    let heads: Vec<(F, F, [F; 3])> = parts
        .iter()
        .map(|&(l, w)| {
            let (sp, rp) = head_pre(l);
            (w, sp, rp)
        })
        .collect();
    let combined = combine_outputs(mode, &heads);
    (combined.sigma, combined.color)
}

const UNTOUCHED_MIN: i32 = i32::MAX;
const UNTOUCHED_MAX: i32 = -1;

/// Coarse per-region record of the minimum and maximum pyramid level
/// queried during training. Cells start at the (levels, -1) sentinel.
#[derive(Debug)]
pub struct SupervisionGrid {
    resolution: usize,
    bounds: Aabb<f64>,
    levels: usize,
    mins: Vec<AtomicI32>,
    maxs: Vec<AtomicI32>,
    global_min: AtomicI32,
    global_max: AtomicI32,
}

impl SupervisionGrid {
    pub fn new(resolution: usize, bounds: Aabb<f64>, levels: usize) -> Self {
        let n = resolution * resolution * resolution;
        Self {
            resolution,
            bounds,
            levels,
            mins: (0..n).map(|_| AtomicI32::new(levels as i32)).collect(),
            maxs: (0..n).map(|_| AtomicI32::new(UNTOUCHED_MAX)).collect(),
            global_min: AtomicI32::new(UNTOUCHED_MIN),
            global_max: AtomicI32::new(UNTOUCHED_MAX),
        }
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn bounds(&self) -> &Aabb<f64> {
        &self.bounds
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    #[inline]
    fn cell_index(&self, x: Vec3<f64>) -> usize {
        let u = self.bounds.to_unit(x);
        let r = self.resolution;
        let scale = r as f64;
        let cx = ((u.x * scale) as usize).min(r - 1);
        let cy = ((u.y * scale) as usize).min(r - 1);
        let cz = ((u.z * scale) as usize).min(r - 1);
        (cz * r + cy) * r + cx
    }

    /// Record that `level` was queried at position `x` (atomic min/max).
    pub fn record(&self, x: Vec3<f64>, level: usize) {
        let i = self.cell_index(x);
        let l = level as i32;
        self.mins[i].fetch_min(l, Ordering::Relaxed);
        self.maxs[i].fetch_max(l, Ordering::Relaxed);
        self.global_min.fetch_min(l, Ordering::Relaxed);
        self.global_max.fetch_max(l, Ordering::Relaxed);
    }

    /// The [min, max] recorded for the cell containing `x`, if touched.
    pub fn cell_range(&self, x: Vec3<f64>) -> Option<(usize, usize)> {
        let i = self.cell_index(x);
        let max = self.maxs[i].load(Ordering::Relaxed);
        if max < 0 {
            return None;
        }
        Some((self.mins[i].load(Ordering::Relaxed) as usize, max as usize))
    }

    pub fn global_range(&self) -> Option<(usize, usize)> {
        let max = self.global_max.load(Ordering::Relaxed);
        if max < 0 {
            return None;
        }
        Some((self.global_min.load(Ordering::Relaxed) as usize, max as usize))
    }

    /// Restrict an assignment to the levels supervised around `x`.
    ///
    /// Touched cells clamp `l` into their recorded range and force w = 1
    /// whenever the clamp moved `l` or would let the blend reach below the
    /// range. Untouched cells fall back to the globally coarsest supervised
    /// level. Returns the adjusted assignment and whether it was changed.
    pub fn clamp_to_supervised<F: Real>(
        &self,
        x: Vec3<f64>,
        a: &LevelAssignment<F>,
    ) -> (LevelAssignment<F>, bool) {
        match self.cell_range(x) {
            Some((mn, mx)) => {
                if a.level < mn {
                    (LevelAssignment { m: a.m, level: mn, weight: F::one() }, true)
                } else if a.level > mx {
                    (LevelAssignment { m: a.m, level: mx, weight: F::one() }, true)
                } else if a.level > 0 && a.weight < F::one() && a.level == mn {
                    // The lower blend partner (l-1) would be unsupervised.
                    (LevelAssignment { m: a.m, level: a.level, weight: F::one() }, true)
                } else {
                    (*a, false)
                }
            }
            None => match self.global_range() {
                Some((gmn, _)) => {
                    let changed = a.level != gmn || a.weight < F::one();
                    (LevelAssignment { m: a.m, level: gmn, weight: F::one() }, changed)
                }
                None => (*a, false),
            },
        }
    }

    pub fn snapshot(&self) -> (Vec<i32>, Vec<i32>) {
        (
            self.mins.iter().map(|v| v.load(Ordering::Relaxed)).collect(),
            self.maxs.iter().map(|v| v.load(Ordering::Relaxed)).collect(),
        )
    }

    pub fn from_snapshot(
        resolution: usize,
        bounds: Aabb<f64>,
        levels: usize,
        mins: Vec<i32>,
        maxs: Vec<i32>,
    ) -> Self {
        let mut gmin = UNTOUCHED_MIN;
        let mut gmax = UNTOUCHED_MAX;
        for (&mn, &mx) in mins.iter().zip(&maxs) {
            if mx >= 0 {
                gmin = gmin.min(mn);
                gmax = gmax.max(mx);
            }
        }
        Self {
            resolution,
            bounds,
            levels,
            mins: mins.into_iter().map(AtomicI32::new).collect(),
            maxs: maxs.into_iter().map(AtomicI32::new).collect(),
            global_min: AtomicI32::new(gmin),
            global_max: AtomicI32::new(gmax),
        }
    }

    /// Number of distinct (min, max) level pairs across touched cells.
    pub fn distinct_levels(&self) -> std::collections::BTreeSet<usize> {
        let mut set = std::collections::BTreeSet::new();
        for (mn, mx) in self.mins.iter().zip(&self.maxs) {
            let mx = mx.load(Ordering::Relaxed);
            if mx >= 0 {
                set.insert(mn.load(Ordering::Relaxed) as usize);
                set.insert(mx as usize);
            }
        }
        set
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(levels: usize, n0: f64, s: f64) -> PyramidConfig {
        PyramidConfig {
            levels,
            base_resolution: n0,
            scale: s,
            mode: EvalMode::DefaultInterp,
            level_selection: LevelSelection::ProjectedArea,
            continuous_blend: false,
        }
    }

    #[test]
    fn map_level_closed_forms() {
        let c = cfg(16, 1.0, 2.0);
        assert!((map_level(256.0, &c).unwrap() - 8.0).abs() < 1e-12);
        let c = cfg(16, 16.0, 2.0);
        assert!((map_level(16.0, &c).unwrap() - 0.0).abs() < 1e-12);
        let c = cfg(16, 4.0, 1.5);
        let expected = (10.0f64 / 4.0).ln() / 1.5f64.ln();
        assert!((map_level(10.0, &c).unwrap() - expected).abs() < 1e-12);
        assert!((expected - 2.2598).abs() < 1e-3);
    }

    #[test]
    fn map_level_rejects_bad_footprint() {
        let c = cfg(4, 1.0, 2.0);
        assert!(map_level(0.0, &c).is_err());
        assert!(map_level(-3.0, &c).is_err());
        assert!(map_level(f64::NAN, &c).is_err());
    }

    #[test]
    fn assignment_fig3_case() {
        let c = cfg(10, 1.0, 2.0);
        let a = assign_level(8.4, &c);
        assert_eq!(a.level, 9);
        assert!((a.weight - 0.6).abs() < 1e-12);
    }

    #[test]
    fn assignment_clamps() {
        let c = cfg(8, 1.0, 2.0);
        let lo = assign_level(-3.0, &c);
        assert_eq!((lo.level, lo.weight), (0, 1.0));
        let hi = assign_level(12.7, &c);
        assert_eq!((hi.level, hi.weight), (7, 1.0));
    }

    #[test]
    fn integer_m_is_limit_from_below() {
        let c = cfg(8, 1.0, 2.0);
        let a = assign_level(3.0, &c);
        assert_eq!((a.level, a.weight), (3, 0.0));
        let mut parts = Vec::new();
        participating_heads(EvalMode::DefaultInterp, &a, &mut parts);
        assert_eq!(parts, vec![(2, 1.0)]);
    }

    #[test]
    fn continuous_blend_is_continuous_at_integers() {
        let mut c = cfg(8, 1.0, 2.0);
        c.continuous_blend = true;
        let below = assign_level(3.0 - 1e-9, &c);
        let at = assign_level(3.0, &c);
        let above = assign_level(3.0 + 1e-9, &c);
        // All three place nearly all weight on level 3.
        let heads = |a: &LevelAssignment<f64>| {
            let mut p = Vec::new();
            participating_heads(EvalMode::DefaultInterp, a, &mut p);
            p
        };
        assert_eq!(heads(&at), vec![(3, 1.0)]);
        assert!(heads(&below).iter().any(|&(l, w)| l == 3 && w > 0.999));
        assert!(heads(&above).iter().any(|&(l, w)| l == 3 && w > 0.999));
    }

    #[test]
    fn scale_equivariance_and_monotonicity() {
        let c = cfg(12, 3.0, 1.7);
        let base = map_level(5.0, &c).unwrap();
        for k in 1..5 {
            let shifted = map_level(5.0 * c.scale.powi(k), &c).unwrap();
            assert!((shifted - (base + k as f64)).abs() < 1e-12);
        }
        let mut prev = f64::NEG_INFINITY;
        let mut prev_l = 0usize;
        for i in 1..60 {
            let p = 0.25 * 1.31f64.powi(i);
            let m = map_level(p, &c).unwrap();
            assert!(m > prev);
            let a = assign_level(m, &c);
            assert!(a.level >= prev_l);
            prev = m;
            prev_l = a.level;
        }
    }

    #[test]
    fn supervision_record_and_clamp() {
        let grid = SupervisionGrid::new(8, Aabb::unit(), 8);
        let x = Vec3::new(0.1, 0.1, 0.1);
        grid.record(x, 3);
        grid.record(x, 5);
        assert_eq!(grid.cell_range(x), Some((3, 5)));

        let a = LevelAssignment { m: 6.8, level: 7, weight: 0.2 };
        let (c, changed) = grid.clamp_to_supervised(x, &a);
        assert!(changed);
        assert_eq!((c.level, c.weight), (5, 1.0));

        // In-range is the identity.
        let a = LevelAssignment { m: 3.6, level: 4, weight: 0.4 };
        let (c, changed) = grid.clamp_to_supervised(x, &a);
        assert!(!changed);
        assert_eq!((c.level, c.weight), (4, 0.4));

        // Untouched cell falls back to the globally coarsest level.
        grid.record(Vec3::new(-0.3, 0.2, 0.0), 2);
        grid.record(Vec3::new(-0.3, 0.2, 0.0), 6);
        let elsewhere = Vec3::new(0.4, -0.4, 0.4);
        let a = LevelAssignment { m: 4.0, level: 4, weight: 1.0 };
        let (c, changed) = grid.clamp_to_supervised(elsewhere, &a);
        assert!(changed);
        assert_eq!((c.level, c.weight), (2, 1.0));

        // Clamping never widens the recorded range.
        assert_eq!(grid.cell_range(x), Some((3, 5)));
    }

    #[test]
    fn blend_partner_below_range_gets_full_weight() {
        let grid = SupervisionGrid::new(8, Aabb::unit(), 8);
        let x = Vec3::new(0.0, 0.0, 0.0);
        grid.record(x, 4);
        grid.record(x, 6);
        // l = 4 is in range but l-1 = 3 is not: weight snaps to 1.
        let a = LevelAssignment { m: 3.3, level: 4, weight: 0.7 };
        let (c, changed) = grid.clamp_to_supervised(x, &a);
        assert!(changed);
        assert_eq!((c.level, c.weight), (4, 1.0));
    }

    #[test]
    fn stub_combination_matches_fig3_weights() {
        let c = cfg(10, 1.0, 2.0);
        let a = assign_level(8.4, &c);
        let head = |l: usize| (l as f64 * 0.1, [l as f64 * 0.01, 0.2, -0.3]);
        let (sigma, color) = evaluate_stub(EvalMode::DefaultInterp, &a, head);
        let act = |x: f64| DENSITY_ACTIVATION.apply(x);
        let sig = |x: f64| COLOR_ACTIVATION.apply(x);
        let expect_sigma = 0.4 * act(0.8) + 0.6 * act(0.9);
        assert!((sigma - expect_sigma).abs() < 1e-15);
        let expect_r = 0.4 * sig(0.08) + 0.6 * sig(0.09);
        assert!((color[0] - expect_r).abs() < 1e-15);
    }

    #[test]
    fn stub_degenerate_cases() {
        let c = cfg(8, 1.0, 2.0);
        let head = |l: usize| ((l + 1) as f64 * 0.3, [0.1 * l as f64, -0.2, 0.5]);
        // w = 1 equals f_l exactly.
        let a = LevelAssignment { m: 9.0, level: 7, weight: 1.0 };
        let (sigma, _) = evaluate_stub(EvalMode::DefaultInterp, &a, head);
        assert_eq!(sigma, DENSITY_ACTIVATION.apply(8.0 * 0.3));
        // laplacian with l = 0 equals f_0 alone.
        let a = LevelAssignment { m: -0.5, level: 0, weight: 1.0 };
        let (sigma, color) = evaluate_stub(EvalMode::Laplacian, &a, head);
        assert_eq!(sigma, DENSITY_ACTIVATION.apply(0.3));
        assert_eq!(color[1], COLOR_ACTIVATION.apply(-0.2));
    }

    #[test]
    fn laplacian_equals_naive_sum() {
        let c = cfg(8, 1.0, 2.0);
        let head = |l: usize| ((l as f64).sin(), [(l as f64).cos(), 0.1, 0.2 * l as f64]);
        for m in [0.4, 2.0, 3.7, 6.99] {
            let a = assign_level(m, &c);
            let (sigma, color) = evaluate_stub(EvalMode::Laplacian, &a, head);
            let mut sp = 0.0;
            let mut rp = [0.0; 3];
            for l in 0..=a.level {
                let (s, r) = head(l);
                sp += s;
                for c in 0..3 {
                    rp[c] += r[c];
                }
            }
            assert_eq!(sigma, DENSITY_ACTIVATION.apply(sp));
            for ch in 0..3 {
                assert_eq!(color[ch], COLOR_ACTIVATION.apply(rp[ch]));
            }
        }
    }

    #[test]
    fn default_interp_is_convex_combination() {
        let c = cfg(8, 1.0, 2.0);
        let head = |l: usize| ((l as f64 * 0.37).sin(), [0.3, (l as f64).cos(), -0.4]);
        for m in [0.5, 1.25, 4.8, 6.5] {
            let a = assign_level(m, &c);
            let (sigma, color) = evaluate_stub(EvalMode::DefaultInterp, &a, head);
            let lo = head(a.level - 1);
            let hi = head(a.level);
            let s_lo = DENSITY_ACTIVATION.apply(lo.0);
            let s_hi = DENSITY_ACTIVATION.apply(hi.0);
            assert!(sigma >= s_lo.min(s_hi) - 1e-15 && sigma <= s_lo.max(s_hi) + 1e-15);
            for ch in 0..3 {
                let c_lo = COLOR_ACTIVATION.apply(lo.1[ch]);
                let c_hi = COLOR_ACTIVATION.apply(hi.1[ch]);
                assert!(color[ch] >= c_lo.min(c_hi) - 1e-15);
                assert!(color[ch] <= c_lo.max(c_hi) + 1e-15);
            }
        }
    }

    #[test]
    fn continuity_within_open_interval() {
        let c = cfg(8, 1.0, 2.0);
        let head = |l: usize| ((l as f64 * 0.7).sin(), [0.2 * l as f64, -0.1, 0.05]);
        // Within (k, k+1), the output is continuous in M.
        for k in [1.0f64, 3.0, 5.0] {
            let mut prev: Option<(f64, [f64; 3])> = None;
            let steps = 64;
            for i in 1..steps {
                let m = k + i as f64 / steps as f64;
                let a = assign_level(m, &c);
                let out = evaluate_stub(EvalMode::DefaultInterp, &a, head);
                if let Some(p) = prev {
                    assert!((out.0 - p.0).abs() < 0.05);
                    for ch in 0..3 {
                        assert!((out.1[ch] - p.1[ch]).abs() < 0.05);
                    }
                }
                prev = Some(out);
            }
        }
    }
}
