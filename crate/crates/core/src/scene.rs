//! Procedural ground-truth scenes and the supersampled analytic ray-tracing
//! oracle that renders them.
//!
//! Shading is emissive-albedo: radiance equals the albedo of the first
//! surface hit, with a white background on miss. This keeps the ground
//! truth view-independent so the multiscale datasets isolate aliasing.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::camera::Camera;
use crate::imagebuf::ImageBuf;
use crate::math::{fnv1a64, Aabb, Vec3};
use crate::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum SceneKind {
    #[clap(name = "slanted_checkerboard")]
    #[serde(rename = "slanted_checkerboard")]
    SlantedCheckerboard,
    #[clap(name = "brick_wall")]
    #[serde(rename = "brick_wall")]
    BrickWall,
    #[clap(name = "colored_spheres")]
    #[serde(rename = "colored_spheres")]
    ColoredSpheres,
}

impl SceneKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            SceneKind::SlantedCheckerboard => "slanted_checkerboard",
            SceneKind::BrickWall => "brick_wall",
            SceneKind::ColoredSpheres => "colored_spheres",
        }
    }

    pub fn parse(s: &str) -> Result<Self, Error> {
        match s {
            "slanted_checkerboard" => Ok(SceneKind::SlantedCheckerboard),
            "brick_wall" => Ok(SceneKind::BrickWall),
            "colored_spheres" => Ok(SceneKind::ColoredSpheres),
            other => Err(Error::Validation(format!("unknown scene kind `{other}`"))),
        }
    }
}

/// Finite two-sided quad carrying a procedural texture.
#[derive(Clone, Debug)]
pub struct TexturedQuad {
    pub origin: Vec3<f64>,
    pub u: Vec3<f64>,
    pub v: Vec3<f64>,
    pub normal: Vec3<f64>,
    pub half_u: f64,
    pub half_v: f64,
}

impl TexturedQuad {
    fn new(origin: Vec3<f64>, normal: Vec3<f64>, half_u: f64, half_v: f64) -> Self {
        let normal = normal.normalized();
        // Any stable in-plane frame.
        let seed = if normal.x.abs() < 0.8 {
            Vec3::new(1.0, 0.0, 0.0)
        } else {
            Vec3::new(0.0, 1.0, 0.0)
        };
        let u = normal.cross(seed).normalized();
        let v = normal.cross(u);
        Self { origin, u, v, normal, half_u, half_v }
    }

    /// Ray-quad intersection; returns (t, in-plane coordinates).
    fn intersect(&self, o: Vec3<f64>, d: Vec3<f64>) -> Option<(f64, f64, f64)> {
        let denom = d.dot(self.normal);
        if denom.abs() < 1e-12 {
            return None;
        }
        let t = (self.origin - o).dot(self.normal) / denom;
        if t <= 1e-6 {
            return None;
        }
        let p = o + d * t - self.origin;
        let pu = p.dot(self.u);
        let pv = p.dot(self.v);
        if pu.abs() > self.half_u || pv.abs() > self.half_v {
            return None;
        }
        Some((t, pu, pv))
    }
}

#[derive(Clone, Debug)]
pub struct Sphere {
    pub center: Vec3<f64>,
    pub radius: f64,
    pub albedo: [f64; 3],
}

impl Sphere {
    fn intersect(&self, o: Vec3<f64>, d: Vec3<f64>) -> Option<f64> {
        let oc = o - self.center;
        let b = oc.dot(d);
        let c = oc.dot(oc) - self.radius * self.radius;
        let disc = b * b - c;
        if disc < 0.0 {
            return None;
        }
        let sq = disc.sqrt();
        let t0 = -b - sq;
        if t0 > 1e-6 {
            return Some(t0);
        }
        let t1 = -b + sq;
        if t1 > 1e-6 {
            return Some(t1);
        }
        None
    }
}

/// Analytic scene with a procedural albedo; geometry fits inside the unit
/// scene box.
#[derive(Clone, Debug)]
pub struct ProceduralScene {
    pub kind: SceneKind,
    pub bounds: Aabb<f64>,
    pub quad: Option<TexturedQuad>,
    /// Checker side length in world units.
    pub checker_period: f64,
    pub checker_colors: ([f64; 3], [f64; 3]),
    pub brick_size: (f64, f64),
    pub mortar_width: f64,
    pub spheres: Vec<Sphere>,
}

impl ProceduralScene {
    /// High-frequency checkerboard on a slanted plane; the classic aliasing
    /// torture test. Checker colors average to exactly 0.5 gray.
    pub fn slanted_checkerboard() -> Self {
        Self {
            kind: SceneKind::SlantedCheckerboard,
            bounds: Aabb::unit(),
            quad: Some(TexturedQuad::new(
                Vec3::new(0.0, 0.0, 0.0),
                Vec3::new(0.3, 0.45, 0.84),
                0.46,
                0.46,
            )),
            checker_period: 0.04,
            checker_colors: ([0.02, 0.02, 0.02], [0.98, 0.98, 0.98]),
            brick_size: (0.0, 0.0),
            mortar_width: 0.0,
            spheres: Vec::new(),
        }
    }

    /// Brick texture on a near-vertical wall; zoom-in detail content.
    pub fn brick_wall() -> Self {
        Self {
            kind: SceneKind::BrickWall,
            bounds: Aabb::unit(),
            quad: Some(TexturedQuad::new(
                Vec3::new(0.0, 0.0, 0.02),
                Vec3::new(0.15, 0.1, 0.98),
                0.46,
                0.46,
            )),
            checker_period: 0.0,
            checker_colors: ([0.0; 3], [0.0; 3]),
            brick_size: (0.11, 0.05),
            mortar_width: 0.007,
            spheres: Vec::new(),
        }
    }

    /// A handful of saturated spheres; easy geometry for convergence tests.
    pub fn colored_spheres() -> Self {
        let spheres = vec![
            Sphere { center: Vec3::new(0.18, 0.05, 0.10), radius: 0.16, albedo: [0.85, 0.15, 0.12] },
            Sphere { center: Vec3::new(-0.22, 0.12, -0.05), radius: 0.13, albedo: [0.10, 0.70, 0.20] },
            Sphere { center: Vec3::new(0.02, -0.20, 0.18), radius: 0.12, albedo: [0.15, 0.25, 0.85] },
            Sphere { center: Vec3::new(-0.10, -0.12, -0.22), radius: 0.10, albedo: [0.90, 0.80, 0.10] },
            Sphere { center: Vec3::new(0.24, 0.25, -0.18), radius: 0.09, albedo: [0.80, 0.15, 0.75] },
            Sphere { center: Vec3::new(-0.25, 0.30, 0.20), radius: 0.08, albedo: [0.10, 0.75, 0.80] },
        ];
        Self {
            kind: SceneKind::ColoredSpheres,
            bounds: Aabb::unit(),
            quad: None,
            checker_period: 0.0,
            checker_colors: ([0.0; 3], [0.0; 3]),
            brick_size: (0.0, 0.0),
            mortar_width: 0.0,
            spheres,
        }
    }

    pub fn from_kind(kind: SceneKind) -> Self {
        match kind {
            SceneKind::SlantedCheckerboard => Self::slanted_checkerboard(),
            SceneKind::BrickWall => Self::brick_wall(),
            SceneKind::ColoredSpheres => Self::colored_spheres(),
        }
    }

    fn quad_albedo(&self, pu: f64, pv: f64) -> [f64; 3] {
        match self.kind {
            SceneKind::SlantedCheckerboard => {
                let cu = (pu / self.checker_period).floor() as i64;
                let cv = (pv / self.checker_period).floor() as i64;
                if (cu + cv).rem_euclid(2) == 0 {
                    self.checker_colors.0
                } else {
                    self.checker_colors.1
                }
            }
            SceneKind::BrickWall => {
                let (bw, bh) = self.brick_size;
                let row = (pv / bh).floor();
                let offset = if (row as i64).rem_euclid(2) == 0 { 0.0 } else { bw * 0.5 };
                let col = ((pu + offset) / bw).floor();
                let lu = (pu + offset) - col * bw;
                let lv = pv - row * bh;
                let m = self.mortar_width;
                if lu < m || lv < m || lu > bw - m || lv > bh - m {
                    [0.82, 0.80, 0.76]
                } else {
                    // Slight deterministic per-brick tint.
                    let h = fnv1a64(&[(row as i64).to_le_bytes(), (col as i64).to_le_bytes()].concat());
                    let tint = 0.85 + 0.3 * ((h % 1000) as f64 / 1000.0);
                    [
                        (0.62 * tint).clamp(0.0, 1.0),
                        (0.24 * tint).clamp(0.0, 1.0),
                        (0.18 * tint).clamp(0.0, 1.0),
                    ]
                }
            }
            SceneKind::ColoredSpheres => [0.0; 3],
        }
    }

    /// First-hit distance and albedo along a ray, if anything is hit.
    pub fn intersect(&self, o: Vec3<f64>, d: Vec3<f64>) -> Option<(f64, [f64; 3])> {
        let mut best: Option<(f64, [f64; 3])> = None;
        if let Some(quad) = &self.quad {
            if let Some((t, pu, pv)) = quad.intersect(o, d) {
                best = Some((t, self.quad_albedo(pu, pv)));
            }
        }
        for s in &self.spheres {
            if let Some(t) = s.intersect(o, d) {
                if best.map_or(true, |(bt, _)| t < bt) {
                    best = Some((t, s.albedo));
                }
            }
        }
        best
    }

    /// Albedo at a world point (on-surface query used by tests).
    pub fn albedo(&self, x: Vec3<f64>) -> [f64; 3] {
        if let Some(quad) = &self.quad {
            let p = x - quad.origin;
            return self.quad_albedo(p.dot(quad.u), p.dot(quad.v));
        }
        for s in &self.spheres {
            if (x - s.center).norm() <= s.radius * 1.01 {
                return s.albedo;
            }
        }
        [1.0, 1.0, 1.0]
    }
}

/// Ground-truth radiance for one primary ray: first-hit albedo or white.
#[inline]
pub fn trace_radiance(scene: &ProceduralScene, o: Vec3<f64>, d: Vec3<f64>) -> [f64; 3] {
    match scene.intersect(o, d) {
        Some((_, albedo)) => albedo,
        None => [1.0, 1.0, 1.0],
    }
}

/// Render the analytic reference image. Each pixel averages `supersample`
/// jittered primary rays on a stratified sub-pixel grid; deterministic for
/// a given seed.
pub fn trace_reference(
    scene: &ProceduralScene,
    camera: &Camera<f64>,
    supersample: usize,
    seed: u64,
) -> Result<ImageBuf<f32>, Error> {
    camera.validate()?;
    let grid = (supersample as f64).sqrt() as usize;
    if grid * grid != supersample || supersample == 0 {
        return Err(Error::Validation(format!(
            "supersample {supersample} must be a positive perfect square"
        )));
    }
    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::from_seed(crate::math::derive_seed(seed, "trace-reference"));
    let mut img = ImageBuf::new(camera.width, camera.height);
    let inv = 1.0 / grid as f64;
    let norm = 1.0 / supersample as f64;
    for y in 0..camera.height {
        for x in 0..camera.width {
            let mut acc = [0.0f64; 3];
            for gy in 0..grid {
                for gx in 0..grid {
                    let px = x as f64 + (gx as f64 + rng.gen::<f64>()) * inv;
                    let py = y as f64 + (gy as f64 + rng.gen::<f64>()) * inv;
                    let ray = camera.ray_through(px, py);
                    let rad = trace_radiance(scene, ray.origin, ray.direction);
                    for c in 0..3 {
                        acc[c] += rad[c];
                    }
                }
            }
            img.set_pixel(x, y, [
                (acc[0] * norm) as f32,
                (acc[1] * norm) as f32,
                (acc[2] * norm) as f32,
            ]);
        }
    }
    Ok(img)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_plane_fills_view_with_its_color() {
        // A checkerboard whose two colors are both red is a uniform plane.
        let mut scene = ProceduralScene::slanted_checkerboard();
        scene.checker_colors = ([1.0, 0.0, 0.0], [1.0, 0.0, 0.0]);
        // Make it face the camera head-on and fill the frustum.
        scene.quad = Some(TexturedQuad::new(Vec3::zero(), Vec3::new(0.0, 0.0, 1.0), 0.46, 0.46));
        let cam = Camera::look_at(
            Vec3::new(0.0, 0.0, 0.35),
            Vec3::zero(),
            Vec3::new(0.0, 1.0, 0.0),
            32,
            32,
            32.0,
            0.05,
            2.0,
        );
        let img = trace_reference(&scene, &cam, 16, 0).unwrap();
        for p in &img.data {
            assert!((p[0] - 1.0).abs() < 1e-6 && p[1] < 1e-6 && p[2] < 1e-6);
        }
    }

    #[test]
    fn distant_checkerboard_averages_to_gray() {
        let scene = ProceduralScene::slanted_checkerboard();
        // From far away a pixel covers many checker periods.
        let cam = Camera::look_at(
            Vec3::new(1.2, 1.8, 3.5),
            Vec3::zero(),
            Vec3::new(0.0, 1.0, 0.0),
            24,
            24,
            24.0,
            0.1,
            8.0,
        );
        let img = trace_reference(&scene, &cam, 256, 1234).unwrap();
        // Consider only pixels that actually cover the plane (not background).
        let mut devs = Vec::new();
        for p in &img.data {
            let mean = (p[0] as f64 + p[1] as f64 + p[2] as f64) / 3.0;
            if mean < 0.995 {
                devs.push((mean - 0.5).abs());
            }
        }
        assert!(!devs.is_empty());
        let mean_dev = devs.iter().sum::<f64>() / devs.len() as f64;
        assert!(mean_dev < 0.03, "mean |pixel - 0.5| = {mean_dev}");
    }

    #[test]
    fn doubling_supersample_does_not_increase_variance() {
        let scene = ProceduralScene::slanted_checkerboard();
        let cam = Camera::look_at(
            Vec3::new(0.9, 1.4, 2.6),
            Vec3::zero(),
            Vec3::new(0.0, 1.0, 0.0),
            16,
            16,
            16.0,
            0.1,
            8.0,
        );
        // Estimate per-pixel variance of the pixel estimator across seeds.
        let variance = |ss: usize| -> f64 {
            let runs: Vec<ImageBuf<f32>> =
                (0..8).map(|s| trace_reference(&scene, &cam, ss, 100 + s).unwrap()).collect();
            let n = runs[0].data.len();
            let mut total = 0.0;
            for i in 0..n {
                let vals: Vec<f64> = runs.iter().map(|r| r.data[i][0] as f64).collect();
                let mean = vals.iter().sum::<f64>() / vals.len() as f64;
                total += vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / vals.len() as f64;
            }
            total / n as f64
        };
        let v16 = variance(16);
        let v64 = variance(64);
        assert!(v64 <= v16 + 1e-6, "variance grew: {v16} -> {v64}");
    }

    #[test]
    fn degenerate_camera_errors() {
        let scene = ProceduralScene::colored_spheres();
        let mut cam = Camera::look_at(
            Vec3::new(0.0, 0.0, 2.0),
            Vec3::zero(),
            Vec3::new(0.0, 1.0, 0.0),
            8,
            8,
            8.0,
            0.1,
            4.0,
        );
        cam.focal = -1.0;
        assert!(trace_reference(&scene, &cam, 4, 0).is_err());
        // Non-square supersample count.
        let cam2 = Camera::look_at(
            Vec3::new(0.0, 0.0, 2.0),
            Vec3::zero(),
            Vec3::new(0.0, 1.0, 0.0),
            8,
            8,
            8.0,
            0.1,
            4.0,
        );
        assert!(trace_reference(&scene, &cam2, 5, 0).is_err());
    }

    #[test]
    fn geometry_fits_in_unit_bounds() {
        for scene in [
            ProceduralScene::slanted_checkerboard(),
            ProceduralScene::brick_wall(),
            ProceduralScene::colored_spheres(),
        ] {
            if let Some(q) = &scene.quad {
                for (su, sv) in [(1.0, 1.0), (-1.0, 1.0), (1.0, -1.0), (-1.0, -1.0)] {
                    let corner = q.origin + q.u * (su * q.half_u) + q.v * (sv * q.half_v);
                    assert!(scene.bounds.contains(corner), "{:?} corner {corner:?}", scene.kind);
                }
            }
            for s in &scene.spheres {
                for axis in 0..3 {
                    let mut c = s.center;
                    match axis {
                        0 => c.x += s.radius,
                        1 => c.y += s.radius,
                        _ => c.z += s.radius,
                    }
                    assert!(scene.bounds.contains(c));
                }
            }
        }
    }
}
