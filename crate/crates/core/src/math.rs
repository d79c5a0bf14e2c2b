//! Scalar abstraction and small fixed-size vector math.
//!
//! Everything numeric in the crate is generic over [`Real`] so that the same
//! code path runs in f32 (training default) and f64 (gradient checks and
//! oracle comparisons).

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Scalar type used throughout the renderer.
pub trait Real:
    Float + FromPrimitive + ToPrimitive + Debug + Display + Default + Sum + Send + Sync + 'static
{
    /// Convert an f64 literal into this scalar type.
    #[inline(always)]
    fn c(v: f64) -> Self {
        Self::from_f64(v).expect("finite literal")
    }

    /// Widen to f64 (for logging, metrics, and serialization).
    #[inline(always)]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("representable scalar")
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Dot product with a fixed 8-lane accumulation pattern.
///
/// The lane structure is part of the function's contract: results are
/// bit-stable across runs and thread counts because the reduction order
/// never changes.
#[inline]
pub fn dot<F: Real>(a: &[F], b: &[F]) -> F {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [F::zero(); 8];
    let mut ai = a.chunks_exact(8);
    let mut bi = b.chunks_exact(8);
    for (ca, cb) in (&mut ai).zip(&mut bi) {
        for l in 0..8 {
            acc[l] = ca[l].mul_add(cb[l], acc[l]);
        }
    }
    let mut tail = F::zero();
    for (x, y) in ai.remainder().iter().zip(bi.remainder()) {
        tail = x.mul_add(*y, tail);
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// `y += alpha * x`, elementwise. Vectorizes without reassociation.
#[inline]
pub fn axpy<F: Real>(alpha: F, x: &[F], y: &mut [F]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi = xi.mul_add(alpha, *yi);
    }
}

/// 3-component vector.
#[derive(Clone, Copy, PartialEq, Default)]
pub struct Vec3<F> {
    pub x: F,
    pub y: F,
    pub z: F,
}

impl<F: Real> Vec3<F> {
    #[inline(always)]
    pub fn new(x: F, y: F, z: F) -> Self {
        Self { x, y, z }
    }

    #[inline(always)]
    pub fn splat(v: F) -> Self {
        Self { x: v, y: v, z: v }
    }

    #[inline(always)]
    pub fn zero() -> Self {
        Self::splat(F::zero())
    }

    #[inline(always)]
    pub fn from_f64(x: f64, y: f64, z: f64) -> Self {
        Self::new(F::c(x), F::c(y), F::c(z))
    }

    #[inline(always)]
    pub fn to_array(self) -> [F; 3] {
        [self.x, self.y, self.z]
    }

    #[inline(always)]
    pub fn from_array(a: [F; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    #[inline(always)]
    pub fn dot(self, o: Self) -> F {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    #[inline(always)]
    pub fn cross(self, o: Self) -> Self {
        Self::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    #[inline(always)]
    pub fn norm(self) -> F {
        self.dot(self).sqrt()
    }

    #[inline(always)]
    pub fn normalized(self) -> Self {
        let n = self.norm();
        Self::new(self.x / n, self.y / n, self.z / n)
    }

    #[inline(always)]
    pub fn min_elem(self, o: Self) -> Self {
        Self::new(self.x.min(o.x), self.y.min(o.y), self.z.min(o.z))
    }

    #[inline(always)]
    pub fn max_elem(self, o: Self) -> Self {
        Self::new(self.x.max(o.x), self.y.max(o.y), self.z.max(o.z))
    }

    #[inline(always)]
    pub fn clamp_box(self, lo: Self, hi: Self) -> Self {
        self.max_elem(lo).min_elem(hi)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn cast<G: Real>(self) -> Vec3<G> {
        Vec3::new(G::c(self.x.as_f64()), G::c(self.y.as_f64()), G::c(self.z.as_f64()))
    }
}

impl<F: Real> Add for Vec3<F> {
    type Output = Self;
    #[inline(always)]
    fn add(self, o: Self) -> Self {
        Self::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl<F: Real> AddAssign for Vec3<F> {
    #[inline(always)]
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl<F: Real> Sub for Vec3<F> {
    type Output = Self;
    #[inline(always)]
    fn sub(self, o: Self) -> Self {
        Self::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl<F: Real> Mul<F> for Vec3<F> {
    type Output = Self;
    #[inline(always)]
    fn mul(self, s: F) -> Self {
        Self::new(self.x * s, self.y * s, self.z * s)
    }
}

impl<F: Real> Div<F> for Vec3<F> {
    type Output = Self;
    #[inline(always)]
    fn div(self, s: F) -> Self {
        Self::new(self.x / s, self.y / s, self.z / s)
    }
}

impl<F: Real> Neg for Vec3<F> {
    type Output = Self;
    #[inline(always)]
    fn neg(self) -> Self {
        Self::new(-self.x, -self.y, -self.z)
    }
}

impl<F: Debug> Debug for Vec3<F> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({:?}, {:?}, {:?})", self.x, self.y, self.z)
    }
}

/// Axis-aligned box in world coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Aabb<F> {
    pub min: Vec3<F>,
    pub max: Vec3<F>,
}

impl<F: Real> Aabb<F> {
    pub fn new(min: Vec3<F>, max: Vec3<F>) -> Self {
        Self { min, max }
    }

    /// The canonical scene box used by the procedural scenes: a unit cube
    /// centered at the origin.
    pub fn unit() -> Self {
        Self::new(Vec3::from_f64(-0.5, -0.5, -0.5), Vec3::from_f64(0.5, 0.5, 0.5))
    }

    #[inline(always)]
    pub fn extent(&self) -> Vec3<F> {
        self.max - self.min
    }

    #[inline(always)]
    pub fn clamp(&self, p: Vec3<F>) -> Vec3<F> {
        p.clamp_box(self.min, self.max)
    }

    /// Map a world point into [0,1]^3 box coordinates, clamping to the surface.
    #[inline(always)]
    pub fn to_unit(&self, p: Vec3<F>) -> Vec3<F> {
        let e = self.extent();
        let q = Vec3::new(
            (p.x - self.min.x) / e.x,
            (p.y - self.min.y) / e.y,
            (p.z - self.min.z) / e.z,
        );
        q.clamp_box(Vec3::zero(), Vec3::splat(F::one()))
    }

    pub fn contains(&self, p: Vec3<F>) -> bool {
        p.x >= self.min.x
            && p.x <= self.max.x
            && p.y >= self.min.y
            && p.y <= self.max.y
            && p.z >= self.min.z
            && p.z <= self.max.z
    }

    /// Intersect a ray with the box via the slab method. Returns the entry
    /// and exit distances along the ray, if any part of [t0, t1] overlaps.
    pub fn intersect_ray(&self, origin: Vec3<F>, dir: Vec3<F>, t0: F, t1: F) -> Option<(F, F)> {
        let mut lo = t0;
        let mut hi = t1;
        for axis in 0..3 {
            let (o, d, mn, mx) = match axis {
                0 => (origin.x, dir.x, self.min.x, self.max.x),
                1 => (origin.y, dir.y, self.min.y, self.max.y),
                _ => (origin.z, dir.z, self.min.z, self.max.z),
            };
            if d.abs() < F::c(1e-12) {
                if o < mn || o > mx {
                    return None;
                }
                continue;
            }
            let inv = F::one() / d;
            let (a, b) = ((mn - o) * inv, (mx - o) * inv);
            let (near, far) = if a < b { (a, b) } else { (b, a) };
            lo = lo.max(near);
            hi = hi.min(far);
            if lo > hi {
                return None;
            }
        }
        Some((lo, hi))
    }

    pub fn cast<G: Real>(&self) -> Aabb<G> {
        Aabb::new(self.min.cast(), self.max.cast())
    }
}

/// FNV-1a over bytes; used for config fingerprints and derived seeds.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Derive a 32-byte rng seed from a base seed and a stream label.
pub fn derive_seed(base: u64, label: &str) -> [u8; 32] {
    let mut out = [0u8; 32];
    let mut h = fnv1a64(&base.to_le_bytes());
    for (i, chunk) in out.chunks_mut(8).enumerate() {
        h = fnv1a64(&[&h.to_le_bytes()[..], label.as_bytes(), &[i as u8]].concat());
        chunk.copy_from_slice(&h.to_le_bytes());
    }
    out
}
