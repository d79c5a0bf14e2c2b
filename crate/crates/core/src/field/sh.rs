//! Real spherical-harmonic direction encoding (degrees 0-3, 16 basis values).

use crate::math::{Real, Vec3};

pub const SH_DIM: usize = 16;

/// Y_00 = 1 / (2 sqrt(pi))
pub const SH_DEGREE0: f64 = 0.28209479177387814;

/// Evaluate the first 16 real spherical-harmonic basis functions at a unit
/// direction. The caller guarantees `d` is normalized.
#[inline]
pub fn sh_basis<F: Real>(d: Vec3<F>, out: &mut [F]) {
    debug_assert_eq!(out.len(), SH_DIM);
    let (x, y, z) = (d.x, d.y, d.z);
    let (xx, yy, zz) = (x * x, y * y, z * z);
    let c = F::c;

    out[0] = c(0.28209479177387814);
    out[1] = c(-0.48860251190291987) * y;
    out[2] = c(0.48860251190291987) * z;
    out[3] = c(-0.48860251190291987) * x;
    out[4] = c(1.0925484305920792) * x * y;
    out[5] = c(-1.0925484305920792) * y * z;
    out[6] = c(0.94617469575755997) * zz - c(0.31539156525251999);
    out[7] = c(-1.0925484305920792) * x * z;
    out[8] = c(0.54627421529603959) * (xx - yy);
    out[9] = c(0.59004358992664352) * y * (-F::c(3.0) * xx + yy);
    out[10] = c(2.8906114426405538) * x * y * z;
    out[11] = c(0.45704579946446572) * y * (F::one() - F::c(5.0) * zz);
    out[12] = c(0.3731763325901154) * z * (F::c(5.0) * zz - F::c(3.0));
    out[13] = c(0.45704579946446572) * x * (F::one() - F::c(5.0) * zz);
    out[14] = c(1.4453057213202769) * z * (xx - yy);
    out[15] = c(0.59004358992664352) * x * (-xx + F::c(3.0) * yy);
}

/// Encode a view direction. Non-unit inputs are normalized with a warning.
pub fn encode_direction<F: Real>(d: Vec3<F>) -> [F; SH_DIM] {
    let norm = d.norm();
    let d = if (norm - F::one()).abs() > F::c(1e-6) {
        log::warn!("encode_direction: non-unit direction (norm {}), normalizing", norm);
        d / norm
    } else {
        d
    };
    let mut out = [F::zero(); SH_DIM];
    sh_basis(d, &mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_dir(rng: &mut ChaCha8Rng) -> Vec3<f64> {
        loop {
            let v = Vec3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            );
            let n = v.norm();
            if n > 1e-3 && n < 1.0 {
                return v / n;
            }
        }
    }

    #[test]
    fn degree0_is_constant() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let d = random_dir(&mut rng);
            let out = encode_direction(d);
            assert!((out[0] - SH_DEGREE0).abs() < 1e-15);
            assert_eq!(out.len(), 16);
        }
    }

    #[test]
    fn parity_by_degree() {
        // Even degrees (0, 2) are symmetric under d -> -d; odd (1, 3) flip sign.
        let degree_of = |i: usize| match i {
            0 => 0,
            1..=3 => 1,
            4..=8 => 2,
            _ => 3,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let d = random_dir(&mut rng);
            let a = encode_direction(d);
            let b = encode_direction(-d);
            for i in 0..SH_DIM {
                if degree_of(i) % 2 == 0 {
                    assert!((a[i] - b[i]).abs() < 1e-14, "component {i}");
                } else {
                    assert!((a[i] + b[i]).abs() < 1e-14, "component {i}");
                }
            }
        }
    }
}
