//! Pinhole cameras and footprint-carrying rays.

use serde::{Deserialize, Serialize};

use crate::math::{Aabb, Real, Vec3};
use crate::Error;

/// Pinhole camera with a 3x4 camera-to-world pose (row-major rows of
/// [R | t]). The camera looks along its local -z axis, x right, y up.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Camera<F> {
    pub width: usize,
    pub height: usize,
    /// Focal length in pixels.
    pub focal: F,
    /// Rows of the camera-to-world transform.
    pub pose: [[F; 4]; 3],
    pub near: F,
    pub far: F,
}

/// A camera ray: origin, unit direction, and how fast the pixel footprint
/// widens per unit distance. `near`/`far` bound the sampled segment.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray<F> {
    pub origin: Vec3<F>,
    pub direction: Vec3<F>,
    /// World-units of footprint width per unit distance (= 1/focal for a
    /// one-pixel pitch).
    pub footprint_rate: F,
    pub near: F,
    pub far: F,
}

impl<F: Real> Camera<F> {
    /// Build a camera at `eye` looking at `target`.
    pub fn look_at(
        eye: Vec3<F>,
        target: Vec3<F>,
        up: Vec3<F>,
        width: usize,
        height: usize,
        focal: F,
        near: F,
        far: F,
    ) -> Self {
        let back = (eye - target).normalized(); // +z points away from the view
        let right = up.cross(back).normalized();
        let up = back.cross(right);
        let pose = [
            [right.x, up.x, back.x, eye.x],
            [right.y, up.y, back.y, eye.y],
            [right.z, up.z, back.z, eye.z],
        ];
        Self { width, height, focal, pose, near, far }
    }

    pub fn validate(&self) -> Result<(), Error> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::Validation("camera has zero-sized image".into()));
        }
        if !(self.focal > F::zero()) {
            return Err(Error::Validation(format!("camera focal {} must be > 0", self.focal)));
        }
        if !(self.near < self.far) || !(self.near > F::zero()) {
            return Err(Error::Validation(format!(
                "camera near/far ({}, {}) must satisfy 0 < near < far",
                self.near, self.far
            )));
        }
        // Rotation columns orthonormal within 1e-6.
        let col = |c: usize| Vec3::new(self.pose[0][c], self.pose[1][c], self.pose[2][c]);
        let tol = F::c(1e-6);
        for i in 0..3 {
            if (col(i).norm() - F::one()).abs() > tol {
                return Err(Error::Validation("camera rotation is not orthonormal".into()));
            }
            for j in (i + 1)..3 {
                if col(i).dot(col(j)).abs() > tol {
                    return Err(Error::Validation("camera rotation is not orthonormal".into()));
                }
            }
        }
        Ok(())
    }

    pub fn origin(&self) -> Vec3<F> {
        Vec3::new(self.pose[0][3], self.pose[1][3], self.pose[2][3])
    }

    #[inline]
    fn rotate(&self, v: Vec3<F>) -> Vec3<F> {
        Vec3::new(
            self.pose[0][0] * v.x + self.pose[0][1] * v.y + self.pose[0][2] * v.z,
            self.pose[1][0] * v.x + self.pose[1][1] * v.y + self.pose[1][2] * v.z,
            self.pose[2][0] * v.x + self.pose[2][1] * v.y + self.pose[2][2] * v.z,
        )
    }

    /// Ray through an arbitrary (possibly fractional) pixel position.
    #[inline]
    pub fn ray_through(&self, px: F, py: F) -> Ray<F> {
        let half = F::c(0.5);
        let cx = F::c(self.width as f64) * half;
        let cy = F::c(self.height as f64) * half;
        let dir_cam = Vec3::new((px - cx) / self.focal, -(py - cy) / self.focal, -F::one());
        let direction = self.rotate(dir_cam).normalized();
        Ray {
            origin: self.origin(),
            direction,
            footprint_rate: F::one() / self.focal,
            near: self.near,
            far: self.far,
        }
    }

    /// Ray through a pixel center.
    #[inline]
    pub fn ray_for_pixel(&self, x: usize, y: usize) -> Ray<F> {
        self.ray_through(F::c(x as f64 + 0.5), F::c(y as f64 + 0.5))
    }

    /// Rays through the centers of the listed pixels.
    pub fn generate_rays(&self, pixels: &[(usize, usize)]) -> Result<Vec<Ray<F>>, Error> {
        self.validate()?;
        let mut rays = Vec::with_capacity(pixels.len());
        for &(x, y) in pixels {
            if x >= self.width || y >= self.height {
                return Err(Error::Validation(format!(
                    "pixel ({x}, {y}) out of bounds for {}x{} image",
                    self.width, self.height
                )));
            }
            rays.push(self.ray_for_pixel(x, y));
        }
        Ok(rays)
    }

    /// The same camera rendered at 1/k of the resolution: dimensions and
    /// focal scale together, which leaves the field of view unchanged and
    /// multiplies every ray's footprint rate by k.
    pub fn scaled(&self, k: usize) -> Self {
        let mut c = self.clone();
        c.width = (self.width as f64 / k as f64).floor() as usize;
        c.height = (self.height as f64 / k as f64).floor() as usize;
        c.focal = self.focal / F::c(k as f64);
        c
    }

    pub fn cast<G: Real>(&self) -> Camera<G> {
        let p = |i: usize, j: usize| G::c(self.pose[i][j].as_f64());
        Camera {
            width: self.width,
            height: self.height,
            focal: G::c(self.focal.as_f64()),
            pose: [
                [p(0, 0), p(0, 1), p(0, 2), p(0, 3)],
                [p(1, 0), p(1, 1), p(1, 2), p(1, 3)],
                [p(2, 0), p(2, 1), p(2, 2), p(2, 3)],
            ],
            near: G::c(self.near.as_f64()),
            far: G::c(self.far.as_f64()),
        }
    }
}

impl<F: Real> Ray<F> {
    pub fn point_at(&self, t: F) -> Vec3<F> {
        self.origin + self.direction * t
    }

    /// Restrict the sampled segment to the part inside `bounds`. Returns
    /// `None` when the ray misses the box entirely.
    pub fn clipped_to(&self, bounds: &Aabb<F>) -> Option<Ray<F>> {
        let (near, far) = bounds.intersect_ray(self.origin, self.direction, self.near, self.far)?;
        if !(near < far) {
            return None;
        }
        Some(Ray { near, far, ..*self })
    }
}
