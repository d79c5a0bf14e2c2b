//! Multiscale posed-image datasets on disk.
//!
//! A dataset holds the same cameras rendered at full, 1/2, 1/4, and 1/8
//! resolution (focal length scaled with the image so the field of view is
//! unchanged), plus a JSON manifest describing every image. Lower scales
//! are re-rendered at their own intrinsics, not downsampled, matching the
//! multi-camera reading of the protocol.

use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::Camera;
use crate::imagebuf::ImageBuf;
use crate::math::{fnv1a64, Aabb, Vec3};
use crate::scene::{trace_reference, ProceduralScene, SceneKind};
use crate::Error;

pub const SCALE_DIVISORS: [u32; 4] = [1, 2, 4, 8];

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ImageEntry {
    pub path: String,
    pub camera_index: u32,
    /// Scale divisor: 1, 2, 4, or 8.
    pub scale: u32,
    pub width: u32,
    pub height: u32,
    pub focal: f64,
    /// Camera-to-world 3x4 transform, row-major.
    pub pose: [f64; 12],
    pub near: f64,
    pub far: f64,
}

impl ImageEntry {
    pub fn camera(&self) -> Camera<f64> {
        let p = &self.pose;
        Camera {
            width: self.width as usize,
            height: self.height as usize,
            focal: self.focal,
            pose: [
                [p[0], p[1], p[2], p[3]],
                [p[4], p[5], p[6], p[7]],
                [p[8], p[9], p[10], p[11]],
            ],
            near: self.near,
            far: self.far,
        }
    }
}

fn pose_to_array(cam: &Camera<f64>) -> [f64; 12] {
    let mut out = [0.0; 12];
    for r in 0..3 {
        for c in 0..4 {
            out[r * 4 + c] = cam.pose[r][c];
        }
    }
    out
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub scene: String,
    pub seed: u64,
    /// Scene bounds as [min_xyz..., max_xyz...].
    pub bounds: [f64; 6],
    pub base_resolution: u32,
    pub supersample: u32,
    pub scales: Vec<u32>,
    pub train: Vec<ImageEntry>,
    pub test: Vec<ImageEntry>,
}

impl Manifest {
    pub fn bounds_aabb(&self) -> Aabb<f64> {
        Aabb::new(
            Vec3::new(self.bounds[0], self.bounds[1], self.bounds[2]),
            Vec3::new(self.bounds[3], self.bounds[4], self.bounds[5]),
        )
    }

    pub fn scene_kind(&self) -> Result<SceneKind, Error> {
        SceneKind::parse(&self.scene)
    }

    /// Structural invariants: each (camera, scale) appears once per split,
    /// dimensions and focals follow the scale divisor, test poses are
    /// disjoint from train poses.
    pub fn validate(&self) -> Result<(), Error> {
        let mut seen = std::collections::HashSet::new();
        for (split, entries) in [("train", &self.train), ("test", &self.test)] {
            for e in entries {
                if !seen.insert((split, e.camera_index, e.scale)) {
                    return Err(Error::Validation(format!(
                        "duplicate image entry: {split} camera {} scale {}",
                        e.camera_index, e.scale
                    )));
                }
                if !self.scales.contains(&e.scale) {
                    return Err(Error::Validation(format!("unknown scale divisor {}", e.scale)));
                }
                let expect_w = self.base_resolution / e.scale;
                if e.width != expect_w || e.height != expect_w {
                    return Err(Error::Validation(format!(
                        "{}: dimensions {}x{} do not match scale {} of base {}",
                        e.path, e.width, e.height, e.scale, self.base_resolution
                    )));
                }
                e.camera().validate()?;
            }
        }
        for te in &self.test {
            for tr in &self.train {
                if te.pose == tr.pose {
                    return Err(Error::Validation(format!(
                        "test camera {} shares a pose with train camera {}",
                        te.camera_index, tr.camera_index
                    )));
                }
            }
        }
        Ok(())
    }
}

/// A dataset bound to its directory.
#[derive(Clone, Debug)]
pub struct MultiscaleDataset {
    pub manifest: Manifest,
    pub dir: PathBuf,
}

impl MultiscaleDataset {
    pub fn load(dir: &Path) -> Result<Self, Error> {
        let manifest_path = dir.join("manifest.json");
        let text = std::fs::read_to_string(&manifest_path)
            .map_err(|e| Error::io(&manifest_path, e))?;
        let manifest: Manifest = serde_json::from_str(&text)
            .map_err(|e| Error::Json { path: manifest_path.clone(), source: e })?;
        manifest.validate()?;
        // Reject manifests with missing images.
        for e in manifest.train.iter().chain(&manifest.test) {
            let p = dir.join(&e.path);
            if !p.is_file() {
                return Err(Error::Validation(format!("manifest references missing image {}", p.display())));
            }
        }
        Ok(Self { manifest, dir: dir.to_path_buf() })
    }

    pub fn load_image(&self, entry: &ImageEntry) -> Result<ImageBuf<f32>, Error> {
        let img = ImageBuf::load_png(&self.dir.join(&entry.path))?;
        if img.width != entry.width as usize || img.height != entry.height as usize {
            return Err(Error::Validation(format!(
                "{}: image is {}x{} but manifest says {}x{}",
                entry.path, img.width, img.height, entry.width, entry.height
            )));
        }
        Ok(img)
    }
}

/// Deterministic orbit camera for index `i` of `n`: azimuth and elevation
/// drawn uniformly, distance log-uniform across an 8:1 range so footprints
/// span several pyramid levels.
fn orbit_camera(rng: &mut ChaCha8Rng, base_resolution: u32) -> Camera<f64> {
    let azimuth = rng.gen_range(0.0..std::f64::consts::TAU);
    let elevation = rng.gen_range(-1.0..1.0) * 60f64.to_radians();
    let d_min = 0.9f64;
    let d_max = 7.2f64;
    let dist = (rng.gen_range(d_min.ln()..d_max.ln())).exp();
    let eye = Vec3::new(
        dist * elevation.cos() * azimuth.cos(),
        dist * elevation.sin(),
        dist * elevation.cos() * azimuth.sin(),
    );
    let near = (dist - 0.87).max(0.02);
    let far = dist + 0.87;
    Camera::look_at(
        eye,
        Vec3::zero(),
        Vec3::new(0.0, 1.0, 0.0),
        base_resolution as usize,
        base_resolution as usize,
        base_resolution as f64,
        near,
        far,
    )
}

/// Seed for one image's reference render, derived from the dataset seed so
/// images can be re-rendered independently and in parallel.
pub fn image_trace_seed(dataset_seed: u64, split: &str, camera_index: u32, scale: u32) -> u64 {
    fnv1a64(
        &[
            &dataset_seed.to_le_bytes()[..],
            split.as_bytes(),
            &camera_index.to_le_bytes(),
            &scale.to_le_bytes(),
        ]
        .concat(),
    )
}

pub struct BuildParams {
    pub scene: SceneKind,
    pub n_train: usize,
    pub n_test: usize,
    pub base_resolution: u32,
    pub supersample: usize,
    pub seed: u64,
}

impl BuildParams {
    pub fn desk_default(scene: SceneKind, seed: u64) -> Self {
        Self {
            scene,
            n_train: 40,
            n_test: 10,
            base_resolution: 128,
            supersample: 64,
            seed,
        }
    }
}

/// Render and write a multiscale dataset; returns the loaded handle.
pub fn build_dataset(params: &BuildParams, out_dir: &Path) -> Result<MultiscaleDataset, Error> {
    if params.n_train == 0 || params.n_test == 0 {
        return Err(Error::Validation("camera counts must be >= 1".into()));
    }
    let scene = ProceduralScene::from_kind(params.scene);
    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::from_seed(crate::math::derive_seed(params.seed, "dataset-cameras"));
    let total = params.n_train + params.n_test;
    let cameras: Vec<Camera<f64>> =
        (0..total).map(|_| orbit_camera(&mut rng, params.base_resolution)).collect();

    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    // Describe every image, then render them in parallel.
    let mut jobs: Vec<(String, usize, u32, ImageEntry)> = Vec::new();
    let mut splits: (Vec<ImageEntry>, Vec<ImageEntry>) = (Vec::new(), Vec::new());
    for (ci, cam) in cameras.iter().enumerate() {
        let (split, local_idx) = if ci < params.n_train {
            ("train", ci)
        } else {
            ("test", ci - params.n_train)
        };
        for &scale in &SCALE_DIVISORS {
            let scaled = cam.scaled(scale as usize);
            let entry = ImageEntry {
                path: format!("images/{split}/c{local_idx:03}_s{scale}.png"),
                camera_index: local_idx as u32,
                scale,
                width: scaled.width as u32,
                height: scaled.height as u32,
                focal: scaled.focal,
                pose: pose_to_array(&scaled),
                near: scaled.near,
                far: scaled.far,
            };
            jobs.push((split.to_string(), ci, scale, entry.clone()));
            if split == "train" {
                splits.0.push(entry);
            } else {
                splits.1.push(entry);
            }
        }
    }

    jobs.par_iter().try_for_each(|(split, ci, scale, entry)| -> Result<(), Error> {
        let cam = entry.camera();
        let seed = image_trace_seed(params.seed, split, entry.camera_index, *scale);
        let img = trace_reference(&scene, &cam, params.supersample, seed)?;
        let _ = ci;
        img.save_png(&out_dir.join(&entry.path))
    })?;

    let b = scene.bounds;
    let manifest = Manifest {
        format_version: 1,
        scene: params.scene.as_str().to_string(),
        seed: params.seed,
        bounds: [b.min.x, b.min.y, b.min.z, b.max.x, b.max.y, b.max.z],
        base_resolution: params.base_resolution,
        supersample: params.supersample as u32,
        scales: SCALE_DIVISORS.to_vec(),
        train: splits.0,
        test: splits.1,
    };
    manifest.validate()?;
    let manifest_path = out_dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::Json { path: manifest_path.clone(), source: e })?;
    std::fs::write(&manifest_path, text).map_err(|e| Error::io(&manifest_path, e))?;
    Ok(MultiscaleDataset { manifest, dir: out_dir.to_path_buf() })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_params() -> BuildParams {
        BuildParams {
            scene: SceneKind::SlantedCheckerboard,
            n_train: 3,
            n_test: 2,
            base_resolution: 32,
            supersample: 16,
            seed: 99,
        }
    }

    #[test]
    fn roundtrip_and_validation() {
        let dir = tempfile::tempdir().unwrap();
        let ds = build_dataset(&small_params(), dir.path()).unwrap();
        let loaded = MultiscaleDataset::load(dir.path()).unwrap();
        assert_eq!(loaded.manifest.train, ds.manifest.train);
        assert_eq!(loaded.manifest.test, ds.manifest.test);
        assert_eq!(loaded.manifest.train.len(), 3 * 4);
        assert_eq!(loaded.manifest.test.len(), 2 * 4);

        // Every test pose is absent from the train split.
        for te in &loaded.manifest.test {
            assert!(loaded.manifest.train.iter().all(|tr| tr.pose != te.pose));
        }

        // Removing an image makes the loader reject the dataset.
        let victim = dir.path().join(&loaded.manifest.train[0].path);
        std::fs::remove_file(&victim).unwrap();
        assert!(MultiscaleDataset::load(dir.path()).is_err());
    }

    #[test]
    fn fixed_seed_is_byte_identical() {
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let ds1 = build_dataset(&small_params(), d1.path()).unwrap();
        let _ds2 = build_dataset(&small_params(), d2.path()).unwrap();
        for e in ds1.manifest.train.iter().chain(&ds1.manifest.test) {
            let a = std::fs::read(d1.path().join(&e.path)).unwrap();
            let b = std::fs::read(d2.path().join(&e.path)).unwrap();
            assert_eq!(a, b, "{} differs between builds", e.path);
        }
    }

    #[test]
    fn scaled_images_are_rerendered_not_downsampled() {
        let dir = tempfile::tempdir().unwrap();
        let params = small_params();
        let ds = build_dataset(&params, dir.path()).unwrap();
        let scene = ProceduralScene::from_kind(params.scene);

        // The stored 1/2-scale image equals a fresh render at halved
        // intrinsics...
        let full = &ds.manifest.train[0];
        assert_eq!(full.scale, 1);
        let half = ds
            .manifest
            .train
            .iter()
            .find(|e| e.camera_index == full.camera_index && e.scale == 2)
            .unwrap();
        let seed = image_trace_seed(params.seed, "train", half.camera_index, 2);
        let rerendered = trace_reference(&scene, &half.camera(), params.supersample, seed).unwrap();
        let stored = ds.load_image(half).unwrap();
        assert_eq!(stored.to_rgb8().as_raw(), rerendered.to_rgb8().as_raw());

        // ...and differs from a box-downsample of the full-resolution image
        // on aliased content.
        let full_img = ds.load_image(full).unwrap();
        let down = full_img.downsample_box(2);
        let max_diff = down
            .data
            .iter()
            .zip(&stored.data)
            .flat_map(|(a, b)| (0..3).map(move |c| (a[c] - b[c]).abs()))
            .fold(0.0f32, f32::max);
        assert!(max_diff > 2.0 / 255.0, "downsample coincides with re-render");
    }

    #[test]
    fn coarse_scale_has_less_high_frequency_energy() {
        let dir = tempfile::tempdir().unwrap();
        let mut params = small_params();
        params.base_resolution = 64;
        let ds = build_dataset(&params, dir.path()).unwrap();
        // Compare mean absolute Laplacian per camera between full and 1/8.
        let mut full_energy = 0.0;
        let mut eighth_energy = 0.0;
        for e in &ds.manifest.train {
            let img = ds.load_image(e).unwrap();
            match e.scale {
                1 => full_energy += img.mean_abs_laplacian(),
                8 => eighth_energy += img.mean_abs_laplacian(),
                _ => {}
            }
        }
        assert!(
            eighth_energy < full_energy,
            "1/8 scale energy {eighth_energy} >= full {full_energy}"
        );
    }
}
